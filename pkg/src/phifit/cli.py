"""Command-line front end: fit, test, simulate, and reproduce reports.

Exit status is 0 on success, 1 on model or fit errors, 2 on usage
errors.  Reports are written as JSON (lossless float round-trip) with
``--out``; a human-readable summary rounded to 4 decimals goes to
standard output.
"""

from __future__ import annotations

import argparse
import json
import sys
from fractions import Fraction
from pathlib import Path

import numpy as np

from .divergence import PhiFunction
from .errors import DomainError, PhifitError
from .estimate import FitOptions, fit
from .inference import gof_test, nested_test, sequential_test
from .model import (LmlcSpec, ModelKind, SamplingScheme, build_square_model,
                    mean_vector, solve_intercept, validate_spec)
from .simulate import (SimulationConfig, Strategy, attach_gamma_and_dale,
                       reference_fixtures, run_full_study, run_power_study,
                       run_size_study)
from .table import ContingencyTable


def parse_lambda(text: str) -> float:
    """Parse a generator index; literal fractions like ``2/3`` are accepted."""
    try:
        if "/" in text:
            return float(Fraction(text))
        return float(text)
    except (ValueError, ZeroDivisionError) as exc:
        raise argparse.ArgumentTypeError(f"bad lambda value {text!r}") from exc


def parse_table_csv(path) -> ContingencyTable:
    """Read a table of nonnegative integer counts from a CSV file.

    Rows must have equal length; a single non-numeric first row is
    treated as a header and skipped.
    """
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    rows = [line for line in lines if line.strip()]
    if not rows:
        raise DomainError(f"{path}: empty table file")

    def cells_of(line):
        return [cell.strip() for cell in line.split(",")]

    def numeric(cells):
        try:
            [float(c) for c in cells]
            return True
        except ValueError:
            return False

    start = 1 if not numeric(cells_of(rows[0])) else 0
    if start == 1 and len(rows) == 1:
        raise DomainError(f"{path}: header with no data rows")
    parsed: list[list[int]] = []
    width = None
    for offset, line in enumerate(rows[start:], start=start + 1):
        cells = cells_of(line)
        if width is None:
            width = len(cells)
        elif len(cells) != width:
            raise DomainError(
                f"{path}: row {offset} has {len(cells)} cells, expected {width}")
        values = []
        for col, cell in enumerate(cells, start=1):
            try:
                value = float(cell)
            except ValueError as exc:
                raise DomainError(
                    f"{path}: row {offset}, column {col}: not a number: {cell!r}"
                ) from exc
            if value < 0 or value != int(value):
                raise DomainError(
                    f"{path}: row {offset}, column {col}: "
                    f"counts must be nonnegative integers, got {cell!r}")
            values.append(int(value))
        parsed.append(values)
    return ContingencyTable.from_array(np.array(parsed, dtype=np.int64))


def parse_matrix_csv(path) -> np.ndarray:
    """Read a headerless CSV of reals into a 2-d array."""
    rows = []
    for offset, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        try:
            rows.append([float(cell) for cell in line.split(",")])
        except ValueError as exc:
            raise DomainError(f"{path}: row {offset}: {exc}") from exc
    if not rows:
        raise DomainError(f"{path}: empty matrix file")
    if len({len(r) for r in rows}) != 1:
        raise DomainError(f"{path}: ragged rows")
    return np.array(rows, dtype=float)


_KIND_NAMES = {
    "saturated": ModelKind.SATURATED,
    "symmetry": ModelKind.SYMMETRY,
    "quasi_symmetry": ModelKind.QUASI_SYMMETRY,
    "ordinal_quasi_symmetry": ModelKind.ORDINAL_QUASI_SYMMETRY,
    "marginal_homogeneity": ModelKind.MARGINAL_HOMOGENEITY,
    "custom": ModelKind.CUSTOM,
}


def _sampling_from_json(entry, k: int) -> SamplingScheme:
    scheme = entry.get("scheme", "multinomial")
    if scheme == "poisson":
        return SamplingScheme.poisson()
    if scheme == "multinomial":
        return SamplingScheme.multinomial(k)
    if scheme == "product_multinomial":
        return SamplingScheme.product_multinomial(entry["subtable_sizes"])
    raise DomainError(f"unknown sampling scheme {scheme!r}")


def load_model_file(path, k_hint=None) -> LmlcSpec:
    """Build a model spec from a JSON model file."""
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    kind_name = doc.get("kind", "custom")
    if kind_name not in _KIND_NAMES:
        raise DomainError(f"unknown model kind {kind_name!r}")
    kind = _KIND_NAMES[kind_name]
    if kind is not ModelKind.CUSTOM:
        I = int(doc["I"])
        sampling = _sampling_from_json(doc.get("sampling", {}), I * I)
        return build_square_model(kind, I, sampling)
    custom = doc["custom"]
    X = parse_matrix_csv(custom["design_csv"])
    C = None
    if custom.get("constraints_csv"):
        C = parse_matrix_csv(custom["constraints_csv"])
    d_star = np.asarray(custom.get("d_star", []), dtype=float)
    if C is not None and d_star.size == 0:
        d_star = np.zeros(C.shape[1])
    sampling = _sampling_from_json(doc.get("sampling", {}), X.shape[0])
    return LmlcSpec(X=X, sampling=sampling, C=C, d_star=d_star, name="custom")


def _write_report(args, report: dict):
    if getattr(args, "out", None):
        Path(args.out).write_text(json.dumps(report, indent=2) + "\n",
                                  encoding="utf-8")


def _fit_sections(result) -> dict:
    return {
        "theta": [float(v) for v in result.theta_hat],
        "m_hat": [float(v) for v in result.m_hat],
        "multipliers": [float(v) for v in result.multipliers],
        "objective": float(result.objective),
        "converged": bool(result.converged),
        "iterations": int(result.iterations),
        "kkt_residual": float(result.kkt_residual),
    }


def _test_section(report) -> dict:
    return {
        "kind": report.kind,
        "statistic": float(report.statistic),
        "df": int(report.df),
        "p_value": float(report.p_value),
        "level_used": float(report.level_used),
        "reject": bool(report.reject),
        "lambda1": float(report.lambda1),
        "lambda2": float(report.lambda2),
    }


def _options_from(args) -> FitOptions:
    return FitOptions()


def _cmd_fit(args) -> int:
    table = parse_table_csv(args.table)
    spec = load_model_file(args.model)
    result = fit(spec, table, PhiFunction.power(args.lambda2), _options_from(args))
    print(f"model: {spec.name or 'custom'}  k={spec.k} t={spec.t} r={spec.r}")
    print(f"converged: {result.converged} after {result.iterations} iterations"
          f" (kkt residual {result.kkt_residual:.3e})")
    print(f"objective: {result.objective:.4f}")
    print("fitted means:")
    arr = result.m_hat.reshape(table.shape) if spec.k == table.k else result.m_hat
    print(np.array2string(arr, precision=4, suppress_small=True))
    _write_report(args, {
        "input": {"table": str(args.table), "N": table.N},
        "model": {"name": spec.name, "k": spec.k, "t": spec.t, "r": spec.r},
        "fit": _fit_sections(result),
    })
    return 0 if result.converged else 1


def _cmd_gof(args) -> int:
    table = parse_table_csv(args.table)
    spec = load_model_file(args.model)
    report = gof_test(spec, table, PhiFunction.power(args.lambda1),
                      PhiFunction.power(args.lambda2), alpha=args.alpha)
    print(report.summary())
    _write_report(args, {
        "input": {"table": str(args.table), "N": table.N},
        "model": {"name": spec.name, "k": spec.k, "t": spec.t, "r": spec.r},
        "test": _test_section(report),
    })
    return 0


def _cmd_nested(args) -> int:
    table = parse_table_csv(args.table)
    outer = load_model_file(args.model)
    inner = load_model_file(args.model2)
    report = nested_test(outer, inner, table, PhiFunction.power(args.lambda1),
                         PhiFunction.power(args.lambda2), level=args.alpha,
                         statistic=args.statistic)
    print(report.summary())
    _write_report(args, {
        "input": {"table": str(args.table), "N": table.N},
        "model": {"outer": outer.name, "inner": inner.name},
        "test": _test_section(report),
    })
    return 0


def _cmd_sequence(args) -> int:
    table = parse_table_csv(args.table)
    chain = [load_model_file(p) for p in args.models]
    result = sequential_test(chain, table, PhiFunction.power(args.lambda1),
                             PhiFunction.power(args.lambda2), alpha=args.alpha,
                             statistic=args.statistic)
    print(f"per-test level: {result.per_test_level:.6f}")
    for index, report in enumerate(result.per_test, 1):
        print(f"  step {index}: {report.summary()}")
    print(f"first rejected index b* = {result.b_star}")
    _write_report(args, {
        "input": {"table": str(args.table), "N": table.N},
        "test": {
            "per_test": [_test_section(r) for r in result.per_test],
            "b_star": result.b_star,
            "per_test_level": result.per_test_level,
        },
    })
    return 0


_STRATEGY_NAMES = {s.value: s for s in Strategy}


def _cmd_simulate(args) -> int:
    doc = json.loads(Path(args.config).read_text(encoding="utf-8"))
    config = SimulationConfig(
        n_grid=tuple(doc.get("n_grid", (100, 250, 400, 550))),
        R=int(doc.get("R", 10_000) if args.R is None else args.R),
        alpha=float(doc.get("alpha", 0.05)),
        lambda1_grid=tuple(doc.get("lambda1_grid", (-0.5, 0, 2 / 3, 1, 2))),
        lambda2_grid=tuple(doc.get("lambda2_grid", (-0.5, 0, 2 / 3, 1, 2))),
        master_seed=int(doc.get("master_seed", 0) if args.seed is None else args.seed),
        strategy=_STRATEGY_NAMES[doc.get("strategy", "unconditional_43")],
    )
    report = run_full_study(config, workers=args.workers)
    _print_simulation_summary(report)
    _write_report(args, {"simulation": report.to_jsonable()})
    return 0


def _print_simulation_summary(report):
    print(f"strategy: {report.strategy.value}  R={report.R}  alpha={report.alpha}")
    if report.sizes:
        print("sizes:")
        for (l1, l2, n), value in sorted(report.sizes.items(), key=str):
            extra = f"  [{report.dale.get((l1, l2, n), '')}]" if report.dale else ""
            print(f"  lambda1={l1:g} lambda2={l2:g} n={n}: {value:.4f}{extra}")
    if report.powers:
        print("powers:")
        for (l1, l2, n, point), value in sorted(report.powers.items(), key=str):
            print(f"  lambda1={l1:g} lambda2={l2:g} n={n} i={point}: {value:.4f}")
    if report.gamma:
        print("gamma:")
        for key, value in sorted(report.gamma.items(), key=str):
            print(f"  lambda1={key[0]:g} lambda2={key[1]:g} n={key[2]}: {value:.4f}")
    if report.failed_fits:
        print(f"failed fits: {report.failed_fits}")


def _reproduce_table1(args) -> int:
    fixtures = reference_fixtures()
    symmetry = build_square_model(ModelKind.SYMMETRY, 4)
    saturated = build_square_model(ModelKind.SATURATED, 4)
    from_symmetry = mean_vector(symmetry, solve_intercept(symmetry, fixtures.theta_s, 1.0))
    from_saturated = mean_vector(saturated, solve_intercept(saturated, fixtures.theta_mh, 1.0))
    reference = fixtures.table1_probabilities
    dev_s = float(np.max(np.abs(from_symmetry - reference)))
    dev_m = float(np.max(np.abs(from_saturated - reference)))
    print("normalized means, symmetry parameterization:")
    print(np.array2string(from_symmetry.reshape(4, 4), precision=5))
    print(f"max deviation from reference probabilities: {dev_s:.2e}")
    print(f"same from the saturated parameterization:   {dev_m:.2e}")
    _write_report(args, {
        "simulation": {
            "what": "table1",
            "from_symmetry": [float(v) for v in from_symmetry],
            "from_saturated": [float(v) for v in from_saturated],
            "reference": [float(v) for v in reference],
            "max_abs_deviation_symmetry": dev_s,
            "max_abs_deviation_saturated": dev_m,
        },
    })
    return 0


def _reproduce_sizes(args, n_defaults) -> int:
    n_grid = (args.n,) if args.n else n_defaults
    strategies = ([_STRATEGY_NAMES[args.strategy]] if args.strategy
                  else list(Strategy))
    out = {}
    for strategy in strategies:
        config = SimulationConfig(
            n_grid=n_grid, R=args.R, master_seed=args.seed, strategy=strategy)
        report = run_size_study(config, workers=args.workers)
        attach_gamma_and_dale(report)
        _print_simulation_summary(report)
        out[strategy.value] = report.to_jsonable()
    _write_report(args, {"simulation": out})
    return 0


def _reproduce_table4(args) -> int:
    n_grid = (args.n,) if args.n else (100, 250, 400, 550)
    config = SimulationConfig(
        n_grid=n_grid, R=args.R, master_seed=args.seed,
        lambda1_grid=(0.0, 2 / 3, 1.0, 2.0), lambda2_grid=(2 / 3,),
        strategy=Strategy.CONDITIONAL_OQS_44_45)
    report = run_power_study(config, workers=args.workers)
    _print_simulation_summary(report)
    _write_report(args, {"simulation": report.to_jsonable()})
    return 0


def _reproduce_gamma(args) -> int:
    n_grid = (args.n,) if args.n else (400, 550)
    strategy = (_STRATEGY_NAMES[args.strategy] if args.strategy
                else Strategy.CONDITIONAL_OQS_44_45)
    config = SimulationConfig(
        n_grid=n_grid, R=args.R, master_seed=args.seed,
        lambda1_grid=(0.0, 2 / 3, 1.0, 2.0), lambda2_grid=(0.0, 2 / 3, 1.0),
        strategy=strategy)
    report = run_full_study(config, workers=args.workers)
    _print_simulation_summary(report)
    _write_report(args, {"simulation": report.to_jsonable()})
    return 0


def _cmd_reproduce(args) -> int:
    if args.what == "table1":
        return _reproduce_table1(args)
    if args.what == "table2":
        return _reproduce_sizes(args, (100, 250))
    if args.what == "table3":
        return _reproduce_sizes(args, (400, 550))
    if args.what == "table4":
        return _reproduce_table4(args)
    if args.what == "gamma":
        return _reproduce_gamma(args)
    raise DomainError(f"unknown reproduction target {args.what!r}")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="phifit",
        description="Minimum phi-divergence fitting and testing of "
                    "loglinear models with linear constraints.")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, model2=False, models=False, lambdas=True):
        p.add_argument("--table", required=True, help="counts CSV file")
        p.add_argument("--model", required=not models, help="model JSON file")
        if model2:
            p.add_argument("--model2", required=True,
                           help="inner (nested) model JSON file")
        if models:
            p.add_argument("--models", nargs="+", required=True,
                           help="decreasing chain of model JSON files")
        if lambdas:
            p.add_argument("--lambda1", type=parse_lambda, default=0.0,
                           help="statistic generator index (e.g. 1 or 2/3)")
        p.add_argument("--lambda2", type=parse_lambda, default=0.0,
                       help="estimator generator index")
        p.add_argument("--alpha", type=float, default=0.05)
        p.add_argument("--out", help="write a JSON report here")

    p_fit = sub.add_parser("fit", help="fit one model")
    common(p_fit, lambdas=False)
    p_fit.set_defaults(handler=_cmd_fit)

    p_gof = sub.add_parser("gof", help="goodness-of-fit test")
    common(p_gof)
    p_gof.set_defaults(handler=_cmd_gof)

    p_nested = sub.add_parser("nested", help="nested-model test")
    common(p_nested, model2=True)
    p_nested.add_argument("--statistic", choices=("T", "S"), default="T")
    p_nested.set_defaults(handler=_cmd_nested)

    p_seq = sub.add_parser("sequence", help="sequential nested testing")
    common(p_seq, models=True)
    p_seq.add_argument("--statistic", choices=("T", "S"), default="T")
    p_seq.set_defaults(handler=_cmd_sequence)

    p_sim = sub.add_parser("simulate", help="run a Monte Carlo study")
    p_sim.add_argument("--config", required=True, help="simulation JSON file")
    p_sim.add_argument("--out")
    p_sim.add_argument("--seed", type=int, default=None)
    p_sim.add_argument("--R", type=int, default=None)
    p_sim.add_argument("--workers", type=int, default=1)
    p_sim.set_defaults(handler=_cmd_simulate)

    p_rep = sub.add_parser("reproduce", help="reproduce a benchmark report")
    p_rep.add_argument("--what", required=True,
                       choices=("table1", "table2", "table3", "table4", "gamma"))
    p_rep.add_argument("--n", type=int, default=None)
    p_rep.add_argument("--R", type=int, default=10_000)
    p_rep.add_argument("--seed", type=int, default=20100806)
    p_rep.add_argument("--workers", type=int, default=1)
    p_rep.add_argument("--strategy", choices=sorted(_STRATEGY_NAMES), default=None)
    p_rep.add_argument("--out")
    p_rep.set_defaults(handler=_cmd_reproduce)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.handler(args)
    except PhifitError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
