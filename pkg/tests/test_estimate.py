import numpy as np
import pytest
from scipy import optimize

from phifit import (DegenerateConstraintsError, DomainError, FitOptions,
                    InfeasibleObjectiveError, LmlcSpec, ModelKind,
                    PhiFunction, SamplingScheme, asymptotics,
                    build_square_model, fit, h_matrix_partitioned, kullback,
                    mean_vector, solve_intercept)

from conftest import random_positive_table

LAMBDA_GRID = [-0.5, 0.0, 2.0 / 3.0, 1.0, 2.0]


class TestSaturatedFits:
    def test_unconstrained_fit_returns_counts(self):
        rng = np.random.default_rng(0)
        spec = build_square_model(ModelKind.SATURATED, 3, SamplingScheme.poisson())
        n = random_positive_table(rng, I=3).ravel()
        for lam in LAMBDA_GRID:
            result = fit(spec, n, PhiFunction.power(lam))
            assert result.converged
            assert np.max(np.abs(result.m_hat - n)) <= 1e-10
            assert result.objective <= 1e-12

    def test_multinomial_saturated_fit_returns_counts(self, models):
        rng = np.random.default_rng(1)
        n = random_positive_table(rng).ravel()
        for lam in LAMBDA_GRID:
            result = fit(models["sat"], n, PhiFunction.power(lam))
            assert result.converged
            assert np.max(np.abs(result.m_hat - n)) <= 1e-10


class TestSymmetryClosedForm:
    def test_mle_is_half_sum(self, models):
        rng = np.random.default_rng(2)
        phi = PhiFunction.power(0.0)
        for _ in range(20):
            arr = random_positive_table(rng)
            result = fit(models["s"], arr.ravel(), phi)
            closed = ((arr + arr.T) / 2.0).ravel()
            assert result.converged
            assert np.max(np.abs(result.m_hat - closed)) <= 1e-6

    def test_two_by_two_against_grid_search(self):
        # independent oracle: brute-force search over the symmetric mean
        # space (m11, m12 = m21, m22) with the total fixed
        spec = build_square_model(ModelKind.SYMMETRY, 2)
        n = np.array([7.0, 3.0, 5.0, 9.0])
        total = n.sum()
        phi = PhiFunction.power(0.0)
        best, best_value = None, np.inf
        for m11 in np.linspace(0.5, total - 1.0, 160):
            for m12 in np.linspace(0.25, (total - m11) / 2.0 - 0.25, 160):
                m22 = total - m11 - 2.0 * m12
                if m22 <= 0:
                    continue
                m = np.array([m11, m12, m12, m22])
                value = kullback(n, m)
                if value < best_value:
                    best, best_value = m, value
        result = fit(spec, n, phi)
        assert result.objective <= best_value + 1e-8
        assert np.max(np.abs(result.m_hat - best)) <= 0.2  # grid resolution


class TestMarginalHomogeneityFits:
    def test_symmetric_table_is_already_optimal(self, models):
        arr = np.array([[6, 2, 1, 1], [2, 9, 3, 2], [1, 3, 8, 2], [1, 2, 2, 7]])
        for lam in LAMBDA_GRID:
            result = fit(models["mh"], arr.ravel(), PhiFunction.power(lam))
            assert result.converged
            assert np.max(np.abs(result.m_hat - arr.ravel())) <= 1e-8
            assert result.objective <= 1e-12

    def test_fitted_margins_are_homogeneous(self, models):
        rng = np.random.default_rng(3)
        for lam in LAMBDA_GRID:
            arr = random_positive_table(rng)
            result = fit(models["mh"], arr.ravel(), PhiFunction.power(lam))
            assert result.converged
            fitted = result.m_hat.reshape(4, 4)
            assert np.max(np.abs(fitted.sum(0) - fitted.sum(1))) <= \
                1e-6 * (1 + arr.sum())
            assert abs(fitted.sum() - arr.sum()) <= 1e-6 * (1 + arr.sum())

    def test_zero_cell_table(self, models):
        arr = np.array([[30, 8, 0, 2], [5, 60, 10, 3], [4, 12, 55, 9],
                        [1, 2, 7, 42]])
        for lam in [0.0, 2.0 / 3.0, 1.0]:
            result = fit(models["mh"], arr.ravel(), PhiFunction.power(lam))
            assert result.converged

    def test_multipliers_reported(self, models):
        rng = np.random.default_rng(4)
        arr = random_positive_table(rng)
        result = fit(models["mh"], arr.ravel(), PhiFunction.power(2.0 / 3.0))
        assert result.multipliers.shape == (4,)
        assert np.any(np.abs(result.multipliers) > 0)


class TestProductMultinomial:
    def test_common_odds_across_two_strata(self):
        # two independent two-cell strata sharing one slope column: the
        # maximum likelihood fit pools the success proportion
        sampling = SamplingScheme.product_multinomial([2, 2])
        x0 = sampling.x0_matrix(4)
        slope = np.array([1.0, 0.0, 1.0, 0.0])
        spec = LmlcSpec(X=np.column_stack([x0, slope]), sampling=sampling)
        n = np.array([3.0, 1.0, 5.0, 3.0])
        result = fit(spec, n, PhiFunction.power(0.0))
        assert result.converged
        pooled = (n[0] + n[2]) / n.sum()
        expected = np.array([4 * pooled, 4 * (1 - pooled),
                             8 * pooled, 8 * (1 - pooled)])
        assert np.max(np.abs(result.m_hat - expected)) <= 1e-8

    def test_stratum_totals_fixed(self):
        rng = np.random.default_rng(14)
        sampling = SamplingScheme.product_multinomial([3, 3])
        x0 = sampling.x0_matrix(6)
        slope = np.array([-1.0, 0.0, 1.0, -1.0, 0.0, 1.0])
        spec = LmlcSpec(X=np.column_stack([x0, slope]), sampling=sampling)
        for lam in (0.0, 1.0):
            n = rng.integers(1, 15, size=6).astype(float)
            result = fit(spec, n, PhiFunction.power(lam))
            assert result.converged
            assert result.m_hat[:3].sum() == pytest.approx(n[:3].sum(), abs=1e-6)
            assert result.m_hat[3:].sum() == pytest.approx(n[3:].sum(), abs=1e-6)

    def test_projector_trace(self):
        from phifit import tstar
        sampling = SamplingScheme.product_multinomial([2, 2])
        x0 = sampling.x0_matrix(4)
        slope = np.array([1.0, 0.0, 1.0, 0.0])
        spec = LmlcSpec(X=np.column_stack([x0, slope]), sampling=sampling)
        bundle = tstar(spec, np.array([0.5, 0.2, 0.3]), float(np.sum(
            np.exp(spec.X @ np.array([0.5, 0.2, 0.3])))))
        assert np.trace(bundle.tstar) == pytest.approx(1.0, abs=1e-10)
        assert np.max(np.abs(bundle.tstar @ bundle.tstar - bundle.tstar)) <= 1e-10


class TestFeasibilityInvariant:
    def test_converged_fits_satisfy_constraints(self, models):
        rng = np.random.default_rng(5)
        for name in ("s", "oqs", "qs", "mh"):
            spec = models[name]
            for lam in (0.0, 1.0):
                arr = random_positive_table(rng)
                result = fit(spec, arr.ravel(), PhiFunction.power(lam))
                assert result.converged
                gap = spec.L.T @ result.m_hat - spec.d(arr.ravel())
                assert np.max(np.abs(gap)) <= 1e-6 * (1 + np.max(np.abs(spec.d(arr.ravel()))))


class TestCustomGenerator:
    def test_matches_builtin_power_member(self, models):
        # a user-supplied generator equal to the lam = 1 member must give
        # the same fit through the generic solver path
        custom = PhiFunction(
            fn=lambda x: 0.5 * (np.asarray(x, dtype=float) - 1.0) ** 2,
            deriv=lambda x: np.asarray(x, dtype=float) - 1.0,
            curvature_at_one=1.0,
            ratio_slope=np.inf,
            second_deriv=lambda x: np.ones_like(np.asarray(x, dtype=float)),
        )
        rng = np.random.default_rng(15)
        arr = random_positive_table(rng)
        via_custom = fit(models["s"], arr.ravel(), custom)
        via_power = fit(models["s"], arr.ravel(), PhiFunction.power(1.0))
        assert via_custom.converged
        assert np.max(np.abs(via_custom.m_hat - via_power.m_hat)) <= 1e-6
        assert via_custom.objective == pytest.approx(via_power.objective, abs=1e-9)


@pytest.mark.filterwarnings("ignore::UserWarning")
class TestAgainstIndependentOptimizer:
    @pytest.mark.parametrize("lam", [0.0, 2.0 / 3.0])
    def test_three_by_three_symmetry(self, lam):
        # independent route: direct constrained minimization over theta
        rng = np.random.default_rng(6)
        spec = build_square_model(ModelKind.SYMMETRY, 3)
        phi = PhiFunction.power(lam)
        for _ in range(5):
            n = random_positive_table(rng, I=3, low=3, high=30).ravel().astype(float)

            def objective(theta):
                m = np.exp(spec.X @ theta)
                x = n / m
                if lam == 0.0:
                    return float(np.sum(m * (x * np.log(x) - x + 1.0)))
                return float(np.sum(
                    m * (x ** (lam + 1) - x - lam * (x - 1)) / (lam * (lam + 1))))

            constraint = optimize.NonlinearConstraint(
                lambda theta: np.sum(np.exp(spec.X @ theta)) - n.sum(), 0.0, 0.0)
            start = np.linalg.lstsq(spec.X, np.log(n), rcond=None)[0]
            reference = optimize.minimize(
                objective, start, method="trust-constr", constraints=[constraint],
                options={"xtol": 1e-12, "gtol": 1e-12, "maxiter": 2000})
            result = fit(spec, n, phi)
            assert result.converged
            m_ref = np.exp(spec.X @ reference.x)
            assert np.max(np.abs(result.m_hat - m_ref)) <= 1e-6 * (1 + n.sum())
            assert result.objective <= objective(reference.x) + 1e-8


class TestLocalOptimality:
    def test_feasible_tangent_perturbations_do_not_improve(self, models):
        # at a maximum likelihood optimum the multinomial-total multiplier
        # vanishes, so the objective cannot decrease along tangent directions
        rng = np.random.default_rng(7)
        phi = PhiFunction.power(0.0)
        for name in ("s", "qs"):
            spec = models[name]
            arr = random_positive_table(rng)
            n = arr.ravel()
            result = fit(spec, n, phi,
                         FitOptions(kkt_tolerance=1e-10))
            # tangent space of the constraint L' m(theta) = d at theta_hat
            jac = spec.L.T @ (result.m_hat[:, None] * spec.X)
            _, _, vt = np.linalg.svd(jac)
            tangent_basis = vt[jac.shape[0]:].T
            baseline = result.objective
            for _ in range(100):
                direction = tangent_basis @ rng.normal(size=tangent_basis.shape[1])
                direction *= 1e-3 / np.linalg.norm(direction)
                value = float(np.sum([
                    b * phi(a / b) if b > 0 else 0.0
                    for a, b in zip(n, mean_vector(spec, result.theta_hat + direction))
                ]))
                assert value >= baseline - 1e-9


class TestAsymptotics:
    def test_unconstrained_h_is_inverse_fisher(self):
        spec = build_square_model(ModelKind.SATURATED, 2, SamplingScheme.poisson())
        theta = np.array([0.3, -0.1, 0.2, 0.05])
        info = asymptotics(spec, theta, float(np.exp(spec.X @ theta).sum()))
        assert np.max(np.abs(info.h_matrix @ info.fisher - np.eye(4))) <= 1e-10

    def test_h_annihilates_constraint_directions(self, models, truth_thetas):
        for name in ("s", "oqs", "qs", "mh"):
            info = asymptotics(models[name], truth_thetas[name], 1.0)
            if info.b_matrix.shape[1]:
                assert np.max(np.abs(info.h_matrix @ info.b_matrix)) <= 1e-10

    def test_multinomial_loglinear_reduction(self, models, truth_thetas):
        # c = 1, r = 0: the covariance equals the inverse weighted Gram
        # matrix minus 1 in the intercept block
        spec = models["s"]
        info = asymptotics(spec, truth_thetas["s"], 1.0)
        direct = np.linalg.inv(info.fisher)
        direct[0, 0] -= 1.0
        assert np.max(np.abs(info.h_matrix - direct)) <= 1e-10

    def test_matrices_have_required_definiteness(self, models, truth_thetas):
        for name in ("s", "qs", "mh"):
            info = asymptotics(models[name], truth_thetas[name], 1.0)
            assert np.max(np.abs(info.fisher - info.fisher.T)) <= 1e-12
            assert np.linalg.eigvalsh(info.fisher).min() > 0
            assert np.max(np.abs(info.h_matrix - info.h_matrix.T)) <= 1e-12
            assert np.linalg.eigvalsh(info.h_matrix).min() >= -1e-10
            assert np.max(np.abs(info.sigma - info.sigma.T)) <= 1e-12
            assert np.linalg.eigvalsh(info.sigma).min() >= -1e-12

    def test_degenerate_constraints_detected(self):
        X = reference = build_square_model(ModelKind.SATURATED, 2).X
        duplicated = np.column_stack([np.ones(4), np.ones(4)])
        spec = LmlcSpec(X=X, sampling=SamplingScheme.poisson(), C=duplicated)
        with pytest.raises(DegenerateConstraintsError):
            asymptotics(spec, np.zeros(4), 4.0)


def _arranged_marginal_spec(models):
    """Marginal-homogeneity model rearranged so the design leads with L."""
    mh = models["mh"]
    L = mh.L
    completion, _ = np.linalg.qr(np.hstack([L, np.eye(16)]))
    X = np.hstack([L, completion[:, L.shape[1]:16]])
    return LmlcSpec(X=X, sampling=mh.sampling, C=mh.C, name="mh_arranged")


class TestPartitionedCovariance:
    def test_matches_general_form(self, models, truth_thetas):
        spec = _arranged_marginal_spec(models)
        theta = np.linalg.solve(
            spec.X, np.log(mean_vector(models["mh"], truth_thetas["mh"])))
        assert np.max(np.abs(h_matrix_partitioned(spec, theta, 1.0)
                             - asymptotics(spec, theta, 1.0).h_matrix)) <= 1e-10

    def test_requires_leading_constraint_block(self, models, truth_thetas):
        # the marginal-homogeneity design leads with cell indicators, not
        # with its constraint columns
        with pytest.raises(DomainError):
            h_matrix_partitioned(models["mh"], truth_thetas["mh"], 1.0)

    def test_multinomial_loglinear_case(self, models, truth_thetas):
        # with a single all-ones constraint column the partitioned form
        # subtracts 1 in the intercept block
        spec = models["s"]
        value = h_matrix_partitioned(spec, truth_thetas["s"], 1.0)
        assert np.max(np.abs(value - asymptotics(spec, truth_thetas["s"], 1.0).h_matrix)) <= 1e-10

    def test_sigma_projector_identity(self, models, truth_thetas):
        # covariance of scaled means equals the difference of the two
        # weighted projectors, computed here independently
        spec = _arranged_marginal_spec(models)
        theta = np.linalg.solve(
            spec.X, np.log(mean_vector(models["mh"], truth_thetas["mh"])))
        info = asymptotics(spec, theta, 1.0)
        root = np.sqrt(info.m_star)
        scaled_X = root[:, None] * spec.X
        scaled_L = root[:, None] * spec.L
        a_x = scaled_X @ np.linalg.solve(scaled_X.T @ scaled_X, scaled_X.T)
        a_l = scaled_L @ np.linalg.solve(scaled_L.T @ scaled_L, scaled_L.T)
        for projector in (a_x, a_l):
            assert np.max(np.abs(projector @ projector - projector)) <= 1e-10
            assert np.max(np.abs(projector - projector.T)) <= 1e-12
        alternative = (root[:, None] * (a_x - a_l)) * root[None, :]
        assert np.max(np.abs(info.sigma - alternative)) <= 1e-10


class TestErrorHandling:
    def test_infinite_objective_detected(self, models):
        arr = np.array([[3, 0], [2, 4]])
        spec = build_square_model(ModelKind.SYMMETRY, 2)
        with pytest.raises(InfeasibleObjectiveError):
            fit(spec, arr.ravel(), PhiFunction.power(-1.0))

    def test_empty_stratum_rejected(self):
        spec = LmlcSpec(
            X=np.column_stack([np.ones(4), np.eye(4)[:, :3]]),
            sampling=SamplingScheme.product_multinomial([2, 2]))
        with pytest.raises(DomainError):
            fit(spec, np.array([0, 0, 3, 4]), PhiFunction.power(0.0))

    def test_nonconvergence_is_reported(self, models):
        rng = np.random.default_rng(8)
        arr = random_positive_table(rng)
        result = fit(models["mh"], arr.ravel(), PhiFunction.power(2.0),
                     FitOptions(max_iterations=1))
        assert not result.converged

    def test_options_must_be_positive(self):
        with pytest.raises(DomainError):
            FitOptions(max_iterations=0)
        with pytest.raises(DomainError):
            FitOptions(kkt_tolerance=-1.0)
