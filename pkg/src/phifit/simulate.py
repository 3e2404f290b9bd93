"""Seeded Monte Carlo harness for size and power of marginal-homogeneity tests.

Three testing strategies for marginal homogeneity of a square table are
covered: the unconditional goodness-of-fit test of the marginal-
homogeneity model, and two conditional two-stage chains (quasi-symmetry
then symmetry, and ordinal quasi-symmetry then symmetry).  Conditional
stages each run at nominal level ``1 - (1-alpha)**(1/2)`` and their
rejection rates combine as ``1 - (1-a1)(1-a2)``; both stage statistics
are evaluated on the same simulated table within a replicate.
Replicates with a failed fit are tallied separately and counted as
rejections, which is conservative and keeps the failure visible.

Reproducibility
---------------
Each replicate draws from its own counter-based stream, so reports are
bit-identical for any worker count.  The per-replicate key is derived
with the SplitMix64 output function:

    state  = (master_seed XOR stream_id) + (index + 1) * 0x9E3779B97F4A7C15
    key    = splitmix64_mix(state)        # 0xBF58476D1CE4E5B9 / 0x94D049BB133111EB

where ``stream_id`` is the FNV-1a 64-bit hash of a study tag such as
``"conditional_oqs_44_45|size|n=550"``.  The key seeds a Philox4x64
counter-based generator (numpy's ``Philox``), from which the table is
drawn by the conditional-binomial multinomial method of
``numpy.random.Generator``.
"""

from __future__ import annotations

import enum
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from math import exp, log
from typing import Optional

import numpy as np

from .divergence import PhiFunction, divergence
from .errors import DomainError
from .estimate import FitOptions, fit_core
from .inference import chisq_quantile
from .model import (LmlcSpec, ModelKind, build_square_model, mean_vector,
                    solve_intercept)
from .table import ContingencyTable

_MASK64 = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15
_MIX1 = 0xBF58476D1CE4E5B9
_MIX2 = 0x94D049BB133111EB


def _splitmix64_mix(state: int) -> int:
    z = state & _MASK64
    z = ((z ^ (z >> 30)) * _MIX1) & _MASK64
    z = ((z ^ (z >> 27)) * _MIX2) & _MASK64
    return (z ^ (z >> 31)) & _MASK64


def _fnv1a64(tag: str) -> int:
    h = 0xCBF29CE484222325
    for byte in tag.encode("utf-8"):
        h = ((h ^ byte) * 0x100000001B3) & _MASK64
    return h


def derive_replicate_seed(master_seed: int, stream_tag: str, index: int) -> int:
    """64-bit key of replicate ``index`` in the stream named ``stream_tag``."""
    state = ((master_seed & _MASK64) ^ _fnv1a64(stream_tag))
    state = (state + (index + 1) * _GOLDEN) & _MASK64
    return _splitmix64_mix(state)


def _generator(key: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(key=key))


def sample_multinomial(probabilities, n: int, seed: int,
                       shape=None) -> ContingencyTable:
    """One multinomial table with the given cell probabilities and total."""
    probs = np.asarray(probabilities, dtype=float).reshape(-1)
    if np.any(probs < 0) or abs(probs.sum() - 1.0) > 1e-10:
        raise DomainError("probabilities must be nonnegative and sum to 1")
    if n < 0:
        raise DomainError("total must be nonnegative")
    counts = _generator(seed).multinomial(n, probs)
    return ContingencyTable(counts, shape if shape is not None else (probs.size,))


def sample_poisson(means, seed: int, shape=None) -> ContingencyTable:
    """One table of independent Poisson counts with the given means."""
    mu = np.asarray(means, dtype=float).reshape(-1)
    if np.any(mu < 0) or not np.all(np.isfinite(mu)):
        raise DomainError("means must be finite and nonnegative")
    counts = _generator(seed).poisson(mu)
    return ContingencyTable(counts, shape if shape is not None else (mu.size,))


class Strategy(enum.Enum):
    UNCONDITIONAL_43 = "unconditional_43"
    CONDITIONAL_QS_30_42 = "conditional_qs_30_42"
    CONDITIONAL_OQS_44_45 = "conditional_oqs_44_45"


@dataclass(frozen=True)
class SimulationConfig:
    """What to simulate: totals, replicate count, level, generator grids."""

    n_grid: tuple[int, ...] = (100, 250, 400, 550)
    R: int = 10_000
    alpha: float = 0.05
    lambda1_grid: tuple[float, ...] = (-0.5, 0.0, 2.0 / 3.0, 1.0, 2.0)
    lambda2_grid: tuple[float, ...] = (-0.5, 0.0, 2.0 / 3.0, 1.0, 2.0)
    master_seed: int = 20100806
    strategy: Strategy = Strategy.UNCONDITIONAL_43

    def __post_init__(self):
        if self.R < 1:
            raise DomainError("R must be at least 1")
        if not 0.0 <= self.alpha < 1.0:
            raise DomainError("alpha must lie in [0, 1)")
        object.__setattr__(self, "n_grid", tuple(int(n) for n in self.n_grid))
        object.__setattr__(self, "lambda1_grid", tuple(float(v) for v in self.lambda1_grid))
        object.__setattr__(self, "lambda2_grid", tuple(float(v) for v in self.lambda2_grid))


@dataclass(frozen=True)
class Fixtures:
    """Benchmark scenario for a 4 x 4 table.

    ``table1_probabilities`` holds the published theoretical cell
    probabilities (5 decimals); the theta vectors are the corresponding
    non-intercept parameter values of each model, with intercepts solved
    from the total.  ``delta_points`` perturb two cells of the saturated
    parameterization and ``beta_points`` tilt the ordinal column score;
    together they give the twelve alternative points of the power study.
    """

    table1_probabilities: np.ndarray
    theta_s: np.ndarray
    theta_oqs: np.ndarray
    theta_qs: np.ndarray
    theta_mh: np.ndarray
    delta_points: tuple[tuple[float, float], ...]
    beta_points: tuple[float, ...]


def reference_fixtures() -> Fixtures:
    """The published 4 x 4 benchmark scenario used throughout the harness."""
    table1 = np.array([
        0.08161, 0.03156, 0.01647, 0.01050,
        0.03156, 0.21104, 0.05204, 0.01418,
        0.01647, 0.05204, 0.22186, 0.03156,
        0.01050, 0.01418, 0.03156, 0.17278,
    ])
    theta_s = np.array([-0.35, 0.25, 0.3, 1.5, 1.25, -0.05, -0.75, -1.0, -0.25])
    theta_mh = np.array([-0.95, -1.6, -2.05, -0.95, 0.95, -0.45, -1.75, -1.6,
                         -0.45, 1.0, -0.95, -2.05, -1.75, -0.95, 0.75])
    for arr in (table1, theta_s, theta_mh):
        arr.flags.writeable = False
    theta_oqs = np.concatenate([theta_s, [0.0]])
    theta_qs = np.concatenate([theta_s, [0.0, 0.0, 0.0]])
    theta_oqs.flags.writeable = False
    theta_qs.flags.writeable = False
    return Fixtures(
        table1_probabilities=table1,
        theta_s=theta_s,
        theta_oqs=theta_oqs,
        theta_qs=theta_qs,
        theta_mh=theta_mh,
        delta_points=((0.45, 0.0), (0.7, 0.0), (0.9, 0.0),
                      (0.0, 0.45), (0.0, 0.7), (0.0, 0.9)),
        beta_points=(0.5, 0.7, 1.0, -0.5, -0.7, -1.0),
    )


_I = 4
# positions (0-based, intercept excluded) of the two perturbed saturated
# parameters: the log-ratios of cells (2,3) and (3,2) to cell (1,1)
_DELTA1_POSITION = 5
_DELTA2_POSITION = 8


def _normalized_means(spec: LmlcSpec, theta_rest: np.ndarray) -> np.ndarray:
    theta = solve_intercept(spec, theta_rest, 1.0)
    return mean_vector(spec, theta)


def _models() -> dict[str, LmlcSpec]:
    return {
        "sat": build_square_model(ModelKind.SATURATED, _I),
        "s": build_square_model(ModelKind.SYMMETRY, _I),
        "oqs": build_square_model(ModelKind.ORDINAL_QUASI_SYMMETRY, _I),
        "qs": build_square_model(ModelKind.QUASI_SYMMETRY, _I),
        "mh": build_square_model(ModelKind.MARGINAL_HOMOGENEITY, _I),
    }


def null_probabilities(fixtures: Optional[Fixtures] = None) -> np.ndarray:
    """Exactly normalized cell probabilities of the null scenario."""
    fixtures = fixtures or reference_fixtures()
    return _normalized_means(build_square_model(ModelKind.SYMMETRY, _I),
                             fixtures.theta_s)


def alternative_probabilities(point: int,
                              fixtures: Optional[Fixtures] = None) -> np.ndarray:
    """Cell probabilities of alternative point ``1 <= point <= 12``.

    Points 1-6 perturb the saturated parameterization by
    ``delta_points[point-1]``; points 7-12 set the ordinal tilt to
    ``beta_points[point-7]``.
    """
    fixtures = fixtures or reference_fixtures()
    if not 1 <= point <= 12:
        raise DomainError("point must lie in 1..12")
    if point <= 6:
        d1, d2 = fixtures.delta_points[point - 1]
        theta = fixtures.theta_mh.copy()
        theta[_DELTA1_POSITION] += d1
        theta[_DELTA2_POSITION] += d2
        return _normalized_means(build_square_model(ModelKind.SATURATED, _I), theta)
    beta = fixtures.beta_points[point - 7]
    theta = fixtures.theta_s.tolist() + [beta]
    return _normalized_means(
        build_square_model(ModelKind.ORDINAL_QUASI_SYMMETRY, _I), np.array(theta))


# per-strategy structure: fitted models, per-stage statistic pairs, stage dfs
_STRATEGY_MODELS = {
    Strategy.UNCONDITIONAL_43: ("mh",),
    Strategy.CONDITIONAL_QS_30_42: ("qs", "s"),
    Strategy.CONDITIONAL_OQS_44_45: ("oqs", "s"),
}
_STRATEGY_DFS = {
    Strategy.UNCONDITIONAL_43: (3,),
    Strategy.CONDITIONAL_QS_30_42: (3, 3),
    Strategy.CONDITIONAL_OQS_44_45: (5, 1),
}

_PHI_CACHE: dict[float, PhiFunction] = {}


def _phi(lam: float) -> PhiFunction:
    if lam not in _PHI_CACHE:
        _PHI_CACHE[lam] = PhiFunction.power(lam)
    return _PHI_CACHE[lam]


def stage_cutpoints(strategy: Strategy, alpha: float) -> tuple[float, ...]:
    """Critical values per stage; conditional stages run at 1-(1-alpha)^(1/2)."""
    dfs = _STRATEGY_DFS[strategy]
    if alpha == 0.0:
        return tuple(float("inf") for _ in dfs)
    if strategy is Strategy.UNCONDITIONAL_43:
        return (chisq_quantile(1.0 - alpha, dfs[0]),)
    stage_quantile = (1.0 - alpha) ** 0.5
    return tuple(chisq_quantile(stage_quantile, df) for df in dfs)


def _stage_statistics(strategy: Strategy, tab: np.ndarray,
                      means: dict[str, np.ndarray], lam1: float) -> tuple[float, ...]:
    phi1 = _phi(lam1)
    if strategy is Strategy.UNCONDITIONAL_43:
        return (2.0 * divergence(tab, means["mh"], phi1),)
    outer = "qs" if strategy is Strategy.CONDITIONAL_QS_30_42 else "oqs"
    return (2.0 * divergence(tab, means[outer], phi1),
            2.0 * divergence(means[outer], means["s"], phi1))


def _run_chunk(args) -> tuple[np.ndarray, np.ndarray]:
    (strategy, probs, n_total, start, stop, lambda1_grid, lambda2_grid,
     cutpoints, master_seed, tag, options) = args
    models = _models()
    model_names = _STRATEGY_MODELS[strategy]
    n_stages = len(cutpoints)
    rejections = np.zeros((len(lambda1_grid), len(lambda2_grid), n_stages),
                          dtype=np.int64)
    failures = np.zeros(len(lambda2_grid), dtype=np.int64)
    for index in range(start, stop):
        key = derive_replicate_seed(master_seed, tag, index)
        tab = _generator(key).multinomial(n_total, probs).astype(float)
        for j2, lam2 in enumerate(lambda2_grid):
            phi2 = _phi(lam2)
            means = {}
            all_ok = True
            for name in model_names:
                spec = models[name]
                _, m_hat, _, _, ok = fit_core(spec, tab, phi2, options)
                means[name] = m_hat
                all_ok = all_ok and ok
            if not all_ok:
                failures[j2] += 1
                rejections[:, j2, :] += 1      # conservative: count as rejection
                continue
            for j1, lam1 in enumerate(lambda1_grid):
                stats = _stage_statistics(strategy, tab, means, lam1)
                for stage, (value, cut) in enumerate(zip(stats, cutpoints)):
                    if value > cut:
                        rejections[j1, j2, stage] += 1
    return rejections, failures


def _study_counts(strategy: Strategy, probs: np.ndarray, n_total: int, R: int,
                  lambda1_grid, lambda2_grid, alpha: float, master_seed: int,
                  tag: str, workers: int,
                  options: FitOptions) -> tuple[np.ndarray, np.ndarray]:
    cutpoints = stage_cutpoints(strategy, alpha)
    chunk = max(1, -(-R // max(1, workers)))
    args = [(strategy, probs, n_total, start, min(start + chunk, R),
             lambda1_grid, lambda2_grid, cutpoints, master_seed, tag, options)
            for start in range(0, R, chunk)]
    if workers > 1 and len(args) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            partials = list(pool.map(_run_chunk, args))
    else:
        partials = [_run_chunk(a) for a in args]
    rejections = sum(p[0] for p in partials)
    failures = sum(p[1] for p in partials)
    return rejections, failures


@dataclass
class SimulationReport:
    """Aggregated Monte Carlo rates for one strategy.

    Keys are ``(lambda1, lambda2, n)`` for sizes and gamma, and
    ``(lambda1, lambda2, n, point)`` for powers.  ``stage_rates`` stores
    the per-stage rejection rates whose combination
    ``1 - prod(1 - a_i)`` is the reported size.
    """

    strategy: Strategy
    alpha: float
    R: int
    sizes: dict = field(default_factory=dict)
    stage_rates: dict = field(default_factory=dict)
    powers: dict = field(default_factory=dict)
    gamma: dict = field(default_factory=dict)
    dale: dict = field(default_factory=dict)
    failed_fits: dict = field(default_factory=dict)
    seeds_used: dict = field(default_factory=dict)

    def to_jsonable(self) -> dict:
        def fmt(value):
            return repr(float(value))

        def key_sizes(key):
            l1, l2, n = key
            return f"lambda1={fmt(l1)}|lambda2={fmt(l2)}|n={n}"

        def key_powers(key):
            l1, l2, n, point = key
            return key_sizes((l1, l2, n)) + f"|point={point}"

        return {
            "strategy": self.strategy.value,
            "alpha": self.alpha,
            "R": self.R,
            "sizes": {key_sizes(k): v for k, v in self.sizes.items()},
            "stage_rates": {key_sizes(k): list(v) for k, v in self.stage_rates.items()},
            "powers": {key_powers(k): v for k, v in self.powers.items()},
            "gamma": {key_sizes(k): v for k, v in self.gamma.items()},
            "dale": {key_sizes(k): v for k, v in self.dale.items()},
            "failed_fits": {str(k): int(v) for k, v in self.failed_fits.items()},
            "seeds_used": self.seeds_used,
        }


def run_size_study(config: SimulationConfig,
                   fixtures: Optional[Fixtures] = None, workers: int = 1,
                   options: Optional[FitOptions] = None) -> SimulationReport:
    """Simulated exact sizes under the null scenario.

    For conditional strategies the reported size combines the stored
    stage rates exactly as ``1 - (1-a1)(1-a2)``.
    """
    fixtures = fixtures or reference_fixtures()
    options = options or FitOptions()
    probs = null_probabilities(fixtures)
    report = SimulationReport(strategy=config.strategy, alpha=config.alpha,
                              R=config.R)
    report.seeds_used["master_seed"] = config.master_seed
    for n_total in config.n_grid:
        tag = f"{config.strategy.value}|size|n={n_total}"
        report.seeds_used[tag] = derive_replicate_seed(config.master_seed, tag, 0)
        rejections, failures = _study_counts(
            config.strategy, probs, n_total, config.R, config.lambda1_grid,
            config.lambda2_grid, config.alpha, config.master_seed, tag,
            workers, options)
        for j1, lam1 in enumerate(config.lambda1_grid):
            for j2, lam2 in enumerate(config.lambda2_grid):
                rates = tuple(rejections[j1, j2, :] / config.R)
                combined = 1.0 - float(np.prod([1.0 - a for a in rates]))
                report.sizes[(lam1, lam2, n_total)] = combined
                report.stage_rates[(lam1, lam2, n_total)] = rates
        for j2, lam2 in enumerate(config.lambda2_grid):
            if failures[j2]:
                report.failed_fits[(lam2, n_total, "null")] = int(failures[j2])
    return report


def run_power_study(config: SimulationConfig,
                    fixtures: Optional[Fixtures] = None, workers: int = 1,
                    options: Optional[FitOptions] = None,
                    points: tuple[int, ...] = tuple(range(1, 13))) -> SimulationReport:
    """Simulated exact powers at the twelve alternative points.

    Points 1-6 are read from the first conditional stage (the whole test
    for the unconditional strategy), points 7-12 from the second.
    """
    fixtures = fixtures or reference_fixtures()
    options = options or FitOptions()
    report = SimulationReport(strategy=config.strategy, alpha=config.alpha,
                              R=config.R)
    report.seeds_used["master_seed"] = config.master_seed
    n_stages = len(_STRATEGY_DFS[config.strategy])
    for point in points:
        probs = alternative_probabilities(point, fixtures)
        stage = 0 if (point <= 6 or n_stages == 1) else n_stages - 1
        for n_total in config.n_grid:
            tag = f"{config.strategy.value}|power|n={n_total}|point={point}"
            report.seeds_used[tag] = derive_replicate_seed(config.master_seed, tag, 0)
            rejections, failures = _study_counts(
                config.strategy, probs, n_total, config.R, config.lambda1_grid,
                config.lambda2_grid, config.alpha, config.master_seed, tag,
                workers, options)
            for j1, lam1 in enumerate(config.lambda1_grid):
                for j2, lam2 in enumerate(config.lambda2_grid):
                    rate = rejections[j1, j2, stage] / config.R
                    report.powers[(lam1, lam2, n_total, point)] = float(rate)
            for j2, lam2 in enumerate(config.lambda2_grid):
                if failures[j2]:
                    report.failed_fits[(lam2, n_total, f"point_{point}")] = \
                        int(failures[j2])
    return report


def gamma_gradient(size: float, powers, deltas, betas) -> float:
    """Size-corrected average power gradient over the twelve alternatives.

    The root mean square of ``(power_i - size) / displacement_i`` over
    the twelve points, divided by the size; displacements are
    ``delta1 + delta2`` for the first six points and ``beta`` for the
    rest.
    """
    if size <= 0:
        raise DomainError("size must be positive")
    powers = [float(p) for p in powers]
    deltas = [(float(a), float(b)) for a, b in deltas]
    betas = [float(b) for b in betas]
    if len(powers) != 12 or len(deltas) != 6 or len(betas) != 6:
        raise DomainError("need 12 powers, 6 delta pairs and 6 betas")
    total = 0.0
    for i in range(6):
        displacement = deltas[i][0] + deltas[i][1]
        if displacement == 0:
            raise DomainError("delta displacements must be nonzero")
        total += ((powers[i] - size) / displacement) ** 2
    for i in range(6):
        if betas[i] == 0:
            raise DomainError("beta displacements must be nonzero")
        total += ((powers[6 + i] - size) / betas[i]) ** 2
    return (total / 12.0) ** 0.5 / size


def _logit(p: float) -> float:
    return log(p / (1.0 - p))


def dale_classify(size: float, alpha: float, epsilon: float = 0.35) -> str:
    """Closeness of a simulated size to the nominal level on the logit scale.

    ``close`` within ``epsilon``, ``fairly_close`` within ``2 * epsilon``,
    ``far`` otherwise.
    """
    for value in (size, alpha):
        if not 0.0 < value < 1.0:
            raise DomainError("size and alpha must lie strictly in (0, 1)")
    if epsilon <= 0:
        raise DomainError("epsilon must be positive")
    gap = abs(_logit(1.0 - size) - _logit(1.0 - alpha))
    if gap <= epsilon:
        return "close"
    if gap <= 2.0 * epsilon:
        return "fairly_close"
    return "far"


def dale_band(alpha: float, epsilon: float) -> tuple[float, float]:
    """Size interval classified as within ``epsilon`` of ``alpha``."""
    if not 0.0 < alpha < 1.0 or epsilon <= 0:
        raise DomainError("alpha in (0,1) and positive epsilon required")
    base = _logit(1.0 - alpha)
    lo = 1.0 - 1.0 / (1.0 + exp(-(base + epsilon)))
    hi = 1.0 - 1.0 / (1.0 + exp(-(base - epsilon)))
    return (lo, hi)


def attach_gamma_and_dale(report: SimulationReport,
                          fixtures: Optional[Fixtures] = None) -> SimulationReport:
    """Fill the gamma and Dale maps of a report holding sizes and powers."""
    fixtures = fixtures or reference_fixtures()
    for key, size in report.sizes.items():
        lam1, lam2, n_total = key
        if 0.0 < size < 1.0:
            report.dale[key] = dale_classify(size, report.alpha)
        powers = [report.powers.get((lam1, lam2, n_total, point))
                  for point in range(1, 13)]
        if size > 0 and all(p is not None for p in powers):
            report.gamma[key] = gamma_gradient(
                size, powers, fixtures.delta_points, fixtures.beta_points)
    return report


def run_full_study(config: SimulationConfig,
                   fixtures: Optional[Fixtures] = None, workers: int = 1,
                   options: Optional[FitOptions] = None) -> SimulationReport:
    """Sizes, powers, gamma and Dale classification in one report."""
    fixtures = fixtures or reference_fixtures()
    report = run_size_study(config, fixtures, workers, options)
    power_report = run_power_study(config, fixtures, workers, options)
    report.powers.update(power_report.powers)
    report.failed_fits.update(power_report.failed_fits)
    report.seeds_used.update(power_report.seeds_used)
    return attach_gamma_and_dale(report, fixtures)
