"""Command-line entry point: ``corth {simulate,discover,bench,stability}``.

Exit codes: 0 success, 1 usage error, 2 data error. Every error is printed
as one line starting with ``error:``.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import os
import sys
from pathlib import Path

import numpy as np

from corth.bench import METHODS, SweepGrid, aggregate_all, run_grid, stability, write_records_csv
from corth.linmodel import CvConfig, LinModelError
from corth.orthosearch import NUISANCE_METHODS, Dataset, ParentReport, SearchConfig, SearchError, discover
from corth.semgen import GenConfig, simulate


class DataError(Exception):
    """Bad input data; exit code 2."""


class UsageError(Exception):
    """Bad flags; exit code 1."""


def load_csv(path, target_name: str) -> Dataset:
    """Read a headered numeric CSV; ``target_name`` becomes the response."""
    path = Path(path)
    try:
        fh = open(path, newline="", encoding="utf-8")
    except OSError as exc:
        raise DataError(f"cannot open {path}: {exc.strerror}") from exc
    with fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: file is empty") from None
        except UnicodeDecodeError as exc:
            raise DataError(f"{path}: not valid UTF-8") from exc
        header = [h.strip() for h in header]
        dupes = sorted({h for h in header if header.count(h) > 1})
        if dupes:
            raise DataError(f"{path}: duplicate column names {dupes}")
        if target_name not in header:
            raise DataError(f"{path}: no column {target_name!r}; available columns: {', '.join(header)}")
        rows = []
        for r, cells in enumerate(reader, start=1):
            if not cells:
                continue
            if len(cells) != len(header):
                raise DataError(f"{path}: row {r} has {len(cells)} cells, header has {len(header)}")
            values = []
            for name, cell in zip(header, cells):
                try:
                    v = float(cell)
                except ValueError:
                    raise DataError(f"{path}: row {r}, column {name!r}: non-numeric or empty cell {cell!r}") from None
                if not math.isfinite(v):
                    raise DataError(f"{path}: row {r}, column {name!r}: non-finite value {cell!r}")
                values.append(v)
            rows.append(values)
    if not rows:
        raise DataError(f"{path}: no data rows")
    table = np.array(rows, dtype=np.float64)
    t = header.index(target_name)
    covariates = [j for j in range(len(header)) if j != t]
    try:
        return Dataset(table[:, covariates], table[:, t], tuple(header[j] for j in covariates), target_name)
    except (SearchError, LinModelError) as exc:
        raise DataError(f"{path}: {exc}") from exc


def _fmt(v: float) -> str:
    return format(float(v), ".17g")


def write_csv(dataset: Dataset, path) -> None:
    """Write covariates then the response column, 17 significant digits."""
    if dataset.d == 0:
        raise DataError("dataset has no covariate columns; refusing to write")
    try:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow([*dataset.column_names, dataset.response_name])
            for x, y in zip(dataset.X, dataset.y):
                writer.writerow([*map(_fmt, x), _fmt(y)])
    except OSError as exc:
        raise DataError(f"cannot write {path}: {exc.strerror}") from exc


def write_json(obj, path) -> None:
    try:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(obj, fh, indent=2, allow_nan=False)
            fh.write("\n")
    except OSError as exc:
        raise DataError(f"cannot write {path}: {exc.strerror}") from exc


def write_report(report, path) -> None:
    write_json(report.to_dict(), path)


def format_report_table(report: ParentReport) -> str:
    width = max([len("feature"), *(len(s.name) for s in report.stats)])
    lines = [f"{'feature':<{width}}  {'theta':>10}  {'chi':>10}  {'sigma':>10}  {'z':>9}  {'p':>9}  parent"]
    for s in report.stats:
        flag = "FAILED" if s.failed else ("yes" if s.is_parent else "no")
        lines.append(
            f"{s.name:<{width}}  {s.theta_hat:>10.4g}  {s.chi_hat:>10.4g}  {s.sigma_hat:>10.4g}"
            f"  {s.z_score:>9.3g}  {s.p_value:>9.3g}  {flag}"
        )
    lines.append(
        f"n={report.n_observations}  alpha'={report.config.corrected_alpha(len(report.stats)):.4g}"
        f"  parents: {', '.join(report.parents) or '(none)'}"
    )
    return "\n".join(lines)


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def _check(cond: bool, message: str) -> None:
    if not cond:
        raise UsageError(message)


def _csv_list(kind):
    def parse(text: str):
        try:
            return [kind(v) for v in text.split(",") if v.strip()]
        except ValueError:
            raise argparse.ArgumentTypeError(f"expected comma-separated {kind.__name__} values, got {text!r}")
    return parse


def _add_search_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--alpha", type=float, default=0.05, help="significance level (default 0.05)")
    p.add_argument("--folds", type=int, default=2, help="cross-fitting folds K (default 2)")
    p.add_argument("--no-bonferroni", action="store_true", help="test every feature at level alpha")
    p.add_argument("--nuisance", choices=NUISANCE_METHODS, default="lasso_cv")
    p.add_argument("--lasso-lambda", type=float, default=None, help="penalty for --nuisance lasso_fixed")
    p.add_argument("--cv-folds", type=int, default=10)
    p.add_argument("--cv-grid", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--threads", type=int, default=None, help="worker threads, 0 = auto (env CORTH_THREADS)")


def _search_config(args) -> SearchConfig:
    _check(0.0 < args.alpha < 1.0, f"--alpha must be in (0, 1), got {args.alpha}")
    _check(args.folds >= 2, f"--folds must be >= 2, got {args.folds}")
    _check(args.cv_folds >= 2, f"--cv-folds must be >= 2, got {args.cv_folds}")
    _check(args.cv_grid >= 2, f"--cv-grid must be >= 2, got {args.cv_grid}")
    _check(args.seed >= 0, "--seed must be nonnegative")
    if args.nuisance == "lasso_fixed":
        _check(args.lasso_lambda is not None and args.lasso_lambda >= 0,
               "--nuisance lasso_fixed needs a nonnegative --lasso-lambda")
    return SearchConfig(
        folds=args.folds,
        alpha=args.alpha,
        bonferroni=not args.no_bonferroni,
        nuisance=args.nuisance,
        lasso_lambda=args.lasso_lambda,
        cv=CvConfig(folds=args.cv_folds, grid_size=args.cv_grid),
        seed=args.seed,
    )


def _threads(args) -> int:
    value = args.threads
    if value is None:
        env = os.environ.get("CORTH_THREADS", "0")
        try:
            value = int(env)
        except ValueError:
            raise UsageError(f"CORTH_THREADS must be an integer, got {env!r}") from None
    _check(value >= 0, f"thread count must be >= 0, got {value}")
    return value if value > 0 else (os.cpu_count() or 1)


def _input_file(path: str) -> Path:
    p = Path(path)
    if not p.is_file():
        raise DataError(f"input file {path!r} does not exist")
    return p


def _output_dir(path: str) -> Path:
    p = Path(path)
    if p.exists():
        _check(p.is_dir(), f"{path!r} exists and is not a directory")
    else:
        p.mkdir(parents=True)
    return p


def _output_file(path: str) -> Path:
    p = Path(path)
    _check(p.parent == Path("") or p.parent.is_dir(), f"directory of {path!r} does not exist")
    return p


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="corth", description="Orthogonal-score search for direct linear causes of a response.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("simulate", help="generate a random SEM dataset")
    p.add_argument("--nodes", type=int, required=True, help="number of nodes, response included")
    p.add_argument("--sparsity", type=float, required=True)
    p.add_argument("--nonlinear-prob", type=float, required=True)
    p.add_argument("--noise-var", type=float, required=True)
    p.add_argument("--obs", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--tanh-alpha", type=float, default=0.5)
    p.add_argument("--tanh-beta", type=float, default=1.5)
    p.add_argument("--theta", type=float, default=None, help="linear edge weight (default 2 if nodes <= 10 else 0.5)")
    p.add_argument("--target", type=int, default=None, help="response node (default: last in topological order)")
    p.add_argument("--force-linear-target", action="store_true")
    p.add_argument("--output-dir", required=True, help="receives data.csv, truth.json, dag.json")

    p = sub.add_parser("discover", help="find the direct causes of a response column")
    p.add_argument("--input", required=True)
    p.add_argument("--target", required=True)
    p.add_argument("--output", default=None, help="report JSON (default: <input>.report.json)")
    _add_search_flags(p)

    p = sub.add_parser("bench", help="simulation sweep")
    p.add_argument("--config", default=None, help="JSON file with grid keys; flags given explicitly are ignored")
    p.add_argument("--nodes", type=_csv_list(int), default=[10])
    p.add_argument("--sparsity", type=_csv_list(float), default=[0.3])
    p.add_argument("--nonlinear-prob", type=_csv_list(float), default=[0.5])
    p.add_argument("--noise-var", type=_csv_list(float), default=[0.5])
    p.add_argument("--obs", type=_csv_list(int), default=[1000])
    p.add_argument("--graphs", type=int, default=100)
    p.add_argument("--methods", type=_csv_list(str), default=list(METHODS))
    p.add_argument("--records", required=True, help="output CSV, one row per run")
    p.add_argument("--aggregate", required=True, help="output JSON with mean metrics per grid value")
    _add_search_flags(p)

    p = sub.add_parser("stability", help="selection rates over repeated randomized runs")
    p.add_argument("--input", required=True)
    p.add_argument("--target", required=True)
    p.add_argument("--runs", type=int, default=100)
    p.add_argument("--mode", choices=("reseed", "bootstrap"), default="reseed")
    p.add_argument("--fraction", type=float, default=1.0, help="bootstrap sample size as a fraction of n")
    p.add_argument("--output", required=True)
    _add_search_flags(p)
    return parser


def _cmd_simulate(args) -> None:
    _check(args.nodes >= 2, f"--nodes must be >= 2, got {args.nodes}")
    _check(0.0 <= args.sparsity <= 1.0, "--sparsity must be in [0, 1]")
    _check(0.0 <= args.nonlinear_prob <= 1.0, "--nonlinear-prob must be in [0, 1]")
    _check(args.noise_var > 0, "--noise-var must be positive")
    _check(args.obs >= 4, "--obs must be >= 4")
    _check(args.seed >= 0, "--seed must be nonnegative")
    _check(args.target is None or 0 <= args.target < args.nodes, "--target out of range")
    out = _output_dir(args.output_dir)
    cfg = GenConfig(
        d=args.nodes, sparsity=args.sparsity, nonlinear_prob=args.nonlinear_prob,
        noise_var=args.noise_var, n_obs=args.obs, alpha=args.tanh_alpha, beta=args.tanh_beta,
        theta_gen=args.theta, seed=args.seed, target=args.target,
        force_linear_target=args.force_linear_target,
    )
    sim = simulate(cfg)
    write_csv(sim.dataset, out / "data.csv")
    write_json({"target": sim.dataset.response_name, "parents": sim.parent_names}, out / "truth.json")
    dag = sim.dag.to_dict()
    dag["generator"] = {"alpha": cfg.alpha, "beta": cfg.beta, "theta": cfg.theta, "noise_var": cfg.noise_var}
    write_json(dag, out / "dag.json")
    print(f"wrote {out / 'data.csv'} ({cfg.n_obs} x {cfg.d}), parents: {', '.join(sim.parent_names) or '(none)'}")


def _cmd_discover(args) -> None:
    cfg = _search_config(args)
    threads = _threads(args)
    src = _input_file(args.input)
    out = _output_file(args.output) if args.output else src.with_suffix(".report.json")
    data = load_csv(src, args.target)
    try:
        report = discover(data, cfg, threads=threads)
    except (SearchError, LinModelError) as exc:
        raise DataError(str(exc)) from exc
    write_report(report, out)
    print(format_report_table(report))


def _cmd_bench(args) -> None:
    cfg = _search_config(args)
    threads = _threads(args)
    records_path, agg_path = _output_file(args.records), _output_file(args.aggregate)
    if args.config:
        try:
            obj = json.loads(_input_file(args.config).read_text(encoding="utf-8"))
            grid = SweepGrid.from_dict(obj)
        except (json.JSONDecodeError, TypeError, ValueError) as exc:
            raise UsageError(f"bad --config file: {exc}") from exc
    else:
        try:
            grid = SweepGrid(args.nodes, args.sparsity, args.nonlinear_prob, args.noise_var, args.obs,
                             graphs_per_cell=args.graphs, methods=args.methods, base_seed=args.seed)
        except ValueError as exc:
            raise UsageError(str(exc)) from exc
    for d in grid.node_counts:
        _check(d >= 2, "node counts must be >= 2")
    for z in grid.obs_counts:
        _check(z >= 2 * cfg.folds, f"observation counts must be >= 2*folds = {2 * cfg.folds}")
    records = run_grid(grid, cfg, threads=threads)
    write_records_csv(records, records_path)
    write_json(aggregate_all(records), agg_path)
    for row in aggregate_all(records)["groups"]["d"]:
        print(f"d={row['d']:<4} {row['method']:<15} runs={row['runs']:<5} "
              f"acc={row['acc']:.3f} f1={row['f1']:.3f} mcc={row['mcc']:.3f}")


def _cmd_stability(args) -> None:
    cfg = _search_config(args)
    threads = _threads(args)
    _check(args.runs >= 1, "--runs must be >= 1")
    _check(args.fraction > 0, "--fraction must be positive")
    src = _input_file(args.input)
    out = _output_file(args.output)
    data = load_csv(src, args.target)
    report = stability(data, cfg, args.runs, args.mode, args.fraction, threads=threads)
    write_json(report.to_dict(), out)
    for f in report.to_dict()["features"]:
        print(f"{f['rank']:>4}  {f['name']}  {f['selection_rate']:.3f}")


COMMANDS = {
    "simulate": _cmd_simulate,
    "discover": _cmd_discover,
    "bench": _cmd_bench,
    "stability": _cmd_stability,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except DataError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
