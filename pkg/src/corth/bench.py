"""Simulation sweeps, the Lasso-selection baseline and stability analysis."""

from __future__ import annotations

import csv
import itertools
import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Iterable, Literal, Sequence

import numpy as np

from corth._seeding import derive_seed, rng_for
from corth.evalmetrics import METRIC_NAMES, MetricsReport, score
from corth.linmodel import CvConfig, lasso_cv
from corth.orthosearch import Dataset, SearchConfig, discover
from corth.semgen import GenConfig, simulate

log = logging.getLogger(__name__)

METHODS = ("corth", "lasso_baseline")
GROUP_KEYS = ("d", "p_s", "p_n", "noise_var", "z")
RECORD_COLUMNS = (
    "d", "p_s", "p_n", "noise_var", "z", "graph_seed", "method",
    *METRIC_NAMES, "wall_time_seconds", "failed_features",
)
SELECTION_THRESHOLD = 1e-10

_STABILITY_RESEED = 2
_STABILITY_BOOTSTRAP = 3


def lasso_baseline(data: Dataset, cv: CvConfig = CvConfig()) -> np.ndarray:
    """Covariates with a nonzero coefficient in a CV-tuned Lasso of Y on X."""
    _, fit = lasso_cv(data.X, data.y, cv)
    return np.abs(fit.coefficients) > SELECTION_THRESHOLD


@dataclass(frozen=True)
class SweepGrid:
    node_counts: Sequence[int]
    sparsities: Sequence[float]
    nonlinear_probs: Sequence[float]
    noise_vars: Sequence[float]
    obs_counts: Sequence[int]
    graphs_per_cell: int = 100
    methods: Sequence[str] = METHODS
    base_seed: int = 0

    def __post_init__(self):
        for name in ("node_counts", "sparsities", "nonlinear_probs", "noise_vars", "obs_counts", "methods"):
            values = tuple(getattr(self, name))
            if not values:
                raise ValueError(f"{name} must be nonempty")
            object.__setattr__(self, name, values)
        unknown = set(self.methods) - set(METHODS)
        if unknown:
            raise ValueError(f"unknown methods {sorted(unknown)}; choose from {METHODS}")
        if self.graphs_per_cell < 1:
            raise ValueError("graphs_per_cell must be >= 1")

    def cells(self) -> list[tuple[int, float, float, float, int]]:
        return list(itertools.product(
            self.node_counts, self.sparsities, self.nonlinear_probs, self.noise_vars, self.obs_counts
        ))

    @classmethod
    def from_dict(cls, obj: dict) -> "SweepGrid":
        known = {"node_counts", "sparsities", "nonlinear_probs", "noise_vars", "obs_counts",
                 "graphs_per_cell", "methods", "base_seed"}
        extra = set(obj) - known
        if extra:
            raise ValueError(f"unknown grid keys {sorted(extra)}")
        return cls(**obj)


@dataclass(frozen=True)
class RunRecord:
    d: int
    p_s: float
    p_n: float
    noise_var: float
    z: int
    graph_seed: int
    method: str
    metrics: MetricsReport
    wall_time_seconds: float
    failed_features: int
    cell_index: int = 0
    graph_index: int = 0
    nuisance_fits: int = 0
    error: str | None = None

    def row(self) -> dict:
        out = {k: getattr(self, k) for k in ("d", "p_s", "p_n", "noise_var", "z", "graph_seed", "method")}
        out.update(self.metrics.to_dict())
        out["wall_time_seconds"] = self.wall_time_seconds
        out["failed_features"] = self.failed_features
        return out


def _run_method(method: str, data: Dataset, truth: np.ndarray, seed: int, search_cfg: SearchConfig):
    start = time.perf_counter()
    failed, fits, error = 0, 0, None
    try:
        if method == "corth":
            report = discover(data, replace(search_cfg, seed=seed))
            pred = report.dec_vec
            failed = sum(s.failed for s in report.stats)
            fits = report.n_nuisance_fits
        else:
            pred = lasso_baseline(data, replace(search_cfg.cv, seed=seed))
    except Exception as exc:  # a failed run is recorded, the sweep goes on
        log.warning("%s failed on graph seed %d: %s", method, seed, exc)
        pred = np.zeros(data.d, dtype=bool)
        failed, error = data.d, str(exc)
    elapsed = time.perf_counter() - start
    return score(pred, truth), elapsed, failed, fits, error


def _run_job(grid: SweepGrid, search_cfg: SearchConfig, cell_index: int, cell, g: int) -> list[RunRecord]:
    d, p_s, p_n, noise_var, z = cell
    seed = derive_seed(grid.base_seed, cell_index, g)
    sim = simulate(GenConfig(d, p_s, p_n, noise_var, z, seed=seed))
    records = []
    for method in grid.methods:
        m, elapsed, failed, fits, error = _run_method(method, sim.dataset, sim.true_parents, seed, search_cfg)
        records.append(RunRecord(d, p_s, p_n, noise_var, z, seed, method, m, elapsed, failed,
                                 cell_index, g, fits, error))
    return records


def run_grid(grid: SweepGrid, search_cfg: SearchConfig = SearchConfig(), threads: int = 1) -> list[RunRecord]:
    """Simulate ``graphs_per_cell`` graphs per grid cell and score each method.

    Each graph's seed is derived from ``(base_seed, cell index, graph index)``,
    which also seeds the methods, so the output does not depend on ``threads``.
    """
    jobs = [(ci, cell, g) for ci, cell in enumerate(grid.cells()) for g in range(grid.graphs_per_cell)]

    def work(job):
        return _run_job(grid, search_cfg, *job)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            batches = list(pool.map(work, jobs))
    else:
        batches = [work(job) for job in jobs]
    order = {m: k for k, m in enumerate(METHODS)}
    records = [r for batch in batches for r in batch]
    records.sort(key=lambda r: (r.cell_index, r.graph_index, order[r.method]))
    return records


def aggregate(records: Sequence[RunRecord], group_by: str) -> list[dict]:
    """Mean metrics per (group value, method), in sorted group order."""
    if group_by not in GROUP_KEYS:
        raise ValueError(f"unknown group key {group_by!r}; choose from {GROUP_KEYS}")
    if not records:
        raise ValueError("no records to aggregate")
    groups: dict[tuple, list[RunRecord]] = {}
    for r in records:
        groups.setdefault((getattr(r, group_by), r.method), []).append(r)
    order = {m: k for k, m in enumerate(METHODS)}
    rows = []
    for (value, method) in sorted(groups, key=lambda key: (key[0], order[key[1]])):
        members = groups[(value, method)]
        row = {group_by: value, "method": method, "runs": len(members)}
        for name in METRIC_NAMES:
            row[name] = float(np.mean([getattr(r.metrics, name) for r in members]))
        row["failed_features"] = int(sum(r.failed_features for r in members))
        rows.append(row)
    return rows


def aggregate_all(records: Sequence[RunRecord]) -> dict:
    return {"version": 1, "records": len(records), "groups": {k: aggregate(records, k) for k in GROUP_KEYS}}


def _format_cell(value) -> str:
    if isinstance(value, float):
        return repr(value)
    return str(value)


def write_records_csv(records: Iterable[RunRecord], path, include_timing: bool = True) -> None:
    columns = [c for c in RECORD_COLUMNS if include_timing or c != "wall_time_seconds"]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(columns)
        for r in records:
            row = r.row()
            writer.writerow([_format_cell(row[c]) for c in columns])


@dataclass(frozen=True)
class StabilityReport:
    runs: int
    names: tuple[str, ...]
    selections: np.ndarray
    mode: str = "reseed"
    failed_runs: int = 0
    run_errors: tuple[str, ...] = field(default_factory=tuple)

    @property
    def selection_rate(self) -> np.ndarray:
        return self.selections / self.runs

    @property
    def ranks(self) -> np.ndarray:
        """Competition ranks (1, 1, 3, ...) by descending selection count."""
        s = self.selections
        return np.array([1 + int(np.sum(s > v)) for v in s], dtype=np.int64)

    @property
    def ranking(self) -> list[int]:
        # stable sort keeps column order among ties
        return sorted(range(len(self.names)), key=lambda i: -self.selections[i])

    def to_dict(self) -> dict:
        ranks, rates = self.ranks, self.selection_rate
        return {
            "version": 1,
            "runs": self.runs,
            "mode": self.mode,
            "failed_runs": self.failed_runs,
            "features": [
                {
                    "rank": int(ranks[i]),
                    "name": self.names[i],
                    "selection_rate": float(rates[i]),
                    "selections": int(self.selections[i]),
                }
                for i in self.ranking
            ],
        }


def stability(
    data: Dataset,
    cfg: SearchConfig,
    runs: int,
    resample: Literal["reseed", "bootstrap"] = "reseed",
    fraction: float = 1.0,
    threads: int = 1,
) -> StabilityReport:
    """How often each covariate is selected across ``runs`` randomized searches.

    ``reseed`` changes only the fold / CV seed between runs; ``bootstrap``
    additionally draws ``ceil(fraction * n)`` rows with replacement.
    """
    if runs < 1:
        raise ValueError("runs must be >= 1")
    if resample not in ("reseed", "bootstrap"):
        raise ValueError(f"unknown resample mode {resample!r}")
    if resample == "bootstrap" and not fraction > 0:
        raise ValueError("bootstrap fraction must be positive")

    def one_run(r: int):
        run_cfg = replace(cfg, seed=derive_seed(cfg.seed, _STABILITY_RESEED, r))
        try:
            sample = data
            if resample == "bootstrap":
                size = math.ceil(fraction * data.n)
                rows = rng_for(cfg.seed, _STABILITY_BOOTSTRAP, r).integers(0, data.n, size=size)
                sample = data.take(rows)
            return discover(sample, run_cfg).dec_vec, None
        except Exception as exc:  # counted as a run with no selections
            return np.zeros(data.d, dtype=bool), f"run {r}: {exc}"

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(one_run, range(runs)))
    else:
        results = [one_run(r) for r in range(runs)]
    selections = np.sum([dec for dec, _ in results], axis=0).astype(np.int64)
    errors = tuple(e for _, e in results if e is not None)
    return StabilityReport(runs, data.column_names, selections, resample, len(errors), errors)
