"""Cross-fitted orthogonal search for the direct linear causes of a response.

For every covariate ``D = X_i`` the remaining columns ``Z`` act as controls.
On each fold ``k`` the nuisances ``m(Z) ~ E[D | Z]`` and ``g(Z) ~ E[Y | Z]``
are fitted on the other folds and evaluated on fold ``k``, giving

* ``theta_k = sum(V * (Y - g)) / sum(V * D)`` with ``V = D - m``,
* ``chi_k``, the mean of the per-row score
  ``-Y*m - D*g + g*m + Y*D = (Y - g) * (D - m)``,
* ``var_k``, the mean squared deviation of that score around ``chi_k``.

Fold values are averaged and ``chi`` is tested against zero with the normal
approximation ``chi ~ N(0, sigma^2 / N)``.
"""

from __future__ import annotations

import math
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from statistics import NormalDist
from typing import Literal, Sequence

import numpy as np

from corth._seeding import derive_seed
from corth.linmodel import (
    DEFAULT_RIDGE_EPS,
    CvConfig,
    LinearPredictor,
    LinModelError,
    as_design,
    lasso_cv,
    lasso_fit,
    linear_projection,
    predict,
)

REPORT_VERSION = 1

Nuisance = Literal["lasso_cv", "lasso_fixed", "projection"]
NUISANCE_METHODS = ("lasso_cv", "lasso_fixed", "projection")

# seed-stream labels
_PARTITION_STREAM = 0
_NUISANCE_STREAM = 1
ROLE_M, ROLE_G = 0, 1


class SearchError(ValueError):
    pass


class DegenerateFeatureError(SearchError):
    """Cross-fitted residual of a feature carries no variation."""


@dataclass(frozen=True)
class Dataset:
    """Covariates ``X`` (n x d), response ``y`` and their names."""

    X: np.ndarray
    y: np.ndarray
    column_names: tuple[str, ...]
    response_name: str = "y"

    def __post_init__(self):
        X = as_design(self.X, "covariates")
        y = np.asarray(self.y, dtype=np.float64).reshape(-1)
        if y.shape[0] != X.shape[0]:
            raise SearchError(f"response has {y.shape[0]} rows, covariates have {X.shape[0]}")
        if not np.all(np.isfinite(y)):
            raise SearchError("non-finite data in response")
        if X.shape[0] < 4:
            raise SearchError(f"need at least 4 observations, got {X.shape[0]}")
        names = tuple(str(c) for c in self.column_names)
        if len(names) != X.shape[1]:
            raise SearchError(f"{len(names)} column names for {X.shape[1]} covariates")
        if len(set(names)) != len(names):
            raise SearchError("column names must be unique")
        if self.response_name in names:
            raise SearchError(f"response name {self.response_name!r} clashes with a covariate")
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "column_names", names)

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def d(self) -> int:
        return self.X.shape[1]

    def take(self, rows: np.ndarray) -> "Dataset":
        return Dataset(self.X[rows], self.y[rows], self.column_names, self.response_name)


@dataclass(frozen=True)
class FoldPartition:
    assignments: np.ndarray
    K: int

    def rows(self, k: int) -> np.ndarray:
        return np.flatnonzero(self.assignments == k)

    def training_rows(self, k: int) -> np.ndarray:
        return np.flatnonzero(self.assignments != k)


def partition(n: int, K: int, seed: int) -> FoldPartition:
    """Seeded random split of ``range(n)`` into ``K`` near-equal folds."""
    if K < 2:
        raise SearchError(f"K must be >= 2, got {K}")
    if K > n:
        raise SearchError(f"K={K} folds exceed n={n} observations")
    rng = np.random.default_rng(derive_seed(seed, _PARTITION_STREAM))
    assignments = np.empty(n, dtype=np.int64)
    for k, block in enumerate(np.array_split(rng.permutation(n), K)):
        assignments[block] = k
    return FoldPartition(assignments, K)


@dataclass(frozen=True)
class SearchConfig:
    """Settings of one search run.

    ``lasso_lambda`` is used only with ``nuisance="lasso_fixed"``;
    ``cv.seed`` is ignored inside :func:`discover`, which derives one CV seed
    per (feature, fold, role) from ``seed``.
    """

    folds: int = 2
    alpha: float = 0.05
    bonferroni: bool = True
    nuisance: Nuisance = "lasso_cv"
    lasso_lambda: float | None = None
    cv: CvConfig = field(default_factory=CvConfig)
    seed: int = 0
    ridge_eps: float = DEFAULT_RIDGE_EPS

    def __post_init__(self):
        if self.folds < 2:
            raise SearchError(f"folds must be >= 2, got {self.folds}")
        if not 0.0 < self.alpha < 1.0:
            raise SearchError(f"alpha must be in (0, 1), got {self.alpha}")
        if self.nuisance not in NUISANCE_METHODS:
            raise SearchError(f"unknown nuisance method {self.nuisance!r}")
        if self.nuisance == "lasso_fixed" and (self.lasso_lambda is None or self.lasso_lambda < 0):
            raise SearchError("nuisance='lasso_fixed' needs a nonnegative lasso_lambda")
        if self.seed < 0:
            raise SearchError("seed must be nonnegative")

    def corrected_alpha(self, d: int) -> float:
        return self.alpha / d if self.bonferroni else self.alpha

    def to_dict(self) -> dict:
        out = asdict(self)
        out["cv"] = {k: v for k, v in out["cv"].items() if k != "seed"}
        return out


@dataclass(frozen=True)
class NuisanceFit:
    feature_index: int
    fold: int
    m_hat: LinearPredictor
    g_hat: LinearPredictor


class _FitCounter:
    def __init__(self):
        self._lock = threading.Lock()
        self.count = 0

    def add(self, k: int = 1):
        with self._lock:
            self.count += k


def _fit_one(target: np.ndarray, Z: np.ndarray, cfg: SearchConfig, cv_seed: int) -> LinearPredictor:
    if cfg.nuisance == "projection":
        return linear_projection(target, Z, cfg.ridge_eps)
    if cfg.nuisance == "lasso_fixed":
        return lasso_fit(Z, target, cfg.lasso_lambda)
    return lasso_cv(Z, target, replace(cfg.cv, seed=cv_seed))[1]


def fit_nuisance(
    data: Dataset,
    i: int,
    part: FoldPartition,
    k: int,
    cfg: SearchConfig,
    counter: _FitCounter | None = None,
) -> NuisanceFit:
    """Fit ``m`` (column ``i`` on the rest) and ``g`` (response on the rest)
    on every row outside fold ``k``."""
    if not 0 <= i < data.d:
        raise SearchError(f"feature index {i} out of range for d={data.d}")
    if not 0 <= k < part.K:
        raise SearchError(f"fold {k} out of range for K={part.K}")
    train = part.training_rows(k)
    if train.size == 0:
        raise SearchError(f"training split for fold {k} is empty")
    Z = np.delete(data.X[train], i, axis=1)
    D = data.X[train, i]
    m_hat = _fit_one(D, Z, cfg, derive_seed(cfg.seed, _NUISANCE_STREAM, i, k, ROLE_M))
    g_hat = _fit_one(data.y[train], Z, cfg, derive_seed(cfg.seed, _NUISANCE_STREAM, i, k, ROLE_G))
    if counter is not None:
        counter.add(2)
    return NuisanceFit(i, k, m_hat, g_hat)


def _heldout(data: Dataset, i: int, part: FoldPartition, k: int, nf: NuisanceFit):
    rows = part.rows(k)
    if rows.size == 0:
        raise SearchError(f"fold {k} is empty")
    Z = np.delete(data.X[rows], i, axis=1)
    return data.X[rows, i], data.y[rows], predict(nf.m_hat, Z), predict(nf.g_hat, Z)


def _theta(D, Y, m, g, i: int) -> float:
    V = D - m
    denom = float(np.sum(V * D))
    if abs(denom) <= 1e-12 * float(np.sum(D * D)):
        raise DegenerateFeatureError(f"degenerate residual variance for feature {i}")
    return float(np.sum(V * (Y - g))) / denom


def score_terms(D, Y, m, g) -> np.ndarray:
    """Per-row score in expanded form ``-Y*m - D*g + g*m + Y*D``."""
    return -Y * m - D * g + g * m + Y * D


def chi_forms(D, Y, m, g) -> tuple[float, float]:
    """(expanded-form mean, residual-product mean) of the score on one fold."""
    return float(np.mean(score_terms(D, Y, m, g))), float(np.mean((Y - g) * (D - m)))


def chi_identity_gap(D, Y, m, g) -> float:
    """Relative disagreement between the two algebraically equal chi forms.

    The denominator is floored at 1e-6 of the mean absolute size of the
    expanded terms, so that a chi cancelling to ~0 is not divided by ~0.
    """
    a, b = chi_forms(D, Y, m, g)
    scale = float(np.mean(np.abs(Y * m) + np.abs(D * g) + np.abs(g * m) + np.abs(Y * D)))
    denom = max(abs(a), abs(b), 1e-6 * scale)
    return 0.0 if denom == 0.0 else abs(a - b) / denom


def _chi(D, Y, m, g) -> float:
    a, b = chi_forms(D, Y, m, g)
    if __debug__:
        gap = chi_identity_gap(D, Y, m, g)
        assert gap <= 1e-10, f"chi forms disagree (relative gap {gap:.3e})"
    return a


def _fold_variance(D, Y, m, g, chi_k: float) -> float:
    return float(np.mean((score_terms(D, Y, m, g) - chi_k) ** 2))


def theta_fold(data: Dataset, i: int, part: FoldPartition, k: int, nf: NuisanceFit) -> float:
    """Orthogonal-score estimate of the coefficient of feature ``i`` on fold ``k``.

    Raises :class:`DegenerateFeatureError` when ``sum(V * D)`` vanishes.
    """
    return _theta(*_heldout(data, i, part, k, nf), i)


def chi_fold(data: Dataset, i: int, part: FoldPartition, k: int, nf: NuisanceFit) -> float:
    return _chi(*_heldout(data, i, part, k, nf))


def sigma_fold(data: Dataset, i: int, part: FoldPartition, k: int, nf: NuisanceFit, chi_k: float) -> float:
    """Fold variance (not its square root) of the score around ``chi_k``."""
    D, Y, m, g = _heldout(data, i, part, k, nf)
    if D.shape[0] < 2:
        raise SearchError(f"fold {k} needs at least 2 observations")
    return _fold_variance(D, Y, m, g, chi_k)


def aggregate_feature(theta_folds, chi_folds, var_folds) -> tuple[float, float, float]:
    theta = float(np.mean(theta_folds))
    chi = float(np.mean(chi_folds))
    sigma = math.sqrt(float(np.mean(var_folds)))
    return theta, chi, sigma


_STD_NORMAL = NormalDist()


def normal_quantile(p: float) -> float:
    """Inverse standard normal CDF on the open interval (0, 1)."""
    if not 0.0 < p < 1.0:
        raise ValueError(f"normal_quantile needs 0 < p < 1, got {p}")
    return _STD_NORMAL.inv_cdf(p)


def two_sided_p_value(z: float) -> float:
    """``2 * (1 - Phi(|z|))``, computed through erfc to keep tail accuracy."""
    if math.isnan(z):
        return 1.0
    return math.erfc(abs(z) / math.sqrt(2.0))


def test_feature(
    chi_hat: float, sigma_hat: float, N: int, alpha: float, d: int, bonferroni: bool
) -> tuple[float, float, bool]:
    """Two-sided normal test of ``chi = 0``.

    Returns ``(z, p_value, is_parent)``. A zero ``sigma_hat`` gives
    ``z = +inf`` (parent) when ``chi_hat != 0`` and ``z = 0`` otherwise.
    """
    level = alpha / d if bonferroni else alpha
    if sigma_hat == 0.0:
        if chi_hat == 0.0:
            return 0.0, 1.0, False
        return math.inf, 0.0, True
    z = math.sqrt(N) * chi_hat / sigma_hat
    crit = normal_quantile(1.0 - level / 2.0)
    return z, two_sided_p_value(z), abs(z) >= crit


# keep pytest from collecting the statistical test above
test_feature.__test__ = False


@dataclass(frozen=True)
class FeatureStat:
    feature_index: int
    name: str
    theta_hat: float
    chi_hat: float
    sigma_hat: float
    z_score: float
    p_value: float
    is_parent: bool
    failed: bool = False
    error: str | None = None


@dataclass(frozen=True)
class ParentReport:
    stats: tuple[FeatureStat, ...]
    config: SearchConfig
    n_observations: int
    response_name: str = "y"
    n_nuisance_fits: int = 0

    @property
    def dec_vec(self) -> np.ndarray:
        return np.array([s.is_parent for s in self.stats], dtype=bool)

    @property
    def parents(self) -> list[str]:
        return [s.name for s in self.stats if s.is_parent]

    def to_dict(self) -> dict:
        return {
            "version": REPORT_VERSION,
            "n": self.n_observations,
            "response": self.response_name,
            "config": self.config.to_dict(),
            "alpha_corrected": self.config.corrected_alpha(len(self.stats)),
            "n_nuisance_fits": self.n_nuisance_fits,
            "features": [
                {
                    "name": s.name,
                    "theta_hat": _json_float(s.theta_hat),
                    "chi_hat": _json_float(s.chi_hat),
                    "sigma_hat": _json_float(s.sigma_hat),
                    "z": _json_float(s.z_score),
                    "p_value": s.p_value,
                    "is_parent": s.is_parent,
                    "failed": s.failed,
                }
                for s in self.stats
            ],
        }


def _json_float(x: float):
    # JSON has no inf/nan: infinities become strings, nan becomes null
    if math.isnan(x):
        return None
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    return x


def _search_feature(
    data: Dataset, i: int, part: FoldPartition, cfg: SearchConfig, counter: _FitCounter
) -> FeatureStat:
    fits = [fit_nuisance(data, i, part, k, cfg, counter) for k in range(part.K)]
    thetas, chis, variances = [], [], []
    error = None
    for k, nf in enumerate(fits):
        D, Y, m, g = _heldout(data, i, part, k, nf)
        chi_k = _chi(D, Y, m, g)
        chis.append(chi_k)
        variances.append(_fold_variance(D, Y, m, g, chi_k))
        try:
            thetas.append(_theta(D, Y, m, g, i))
        except DegenerateFeatureError as exc:
            error = str(exc)
    name = data.column_names[i]
    if error is not None:
        chi, sigma = float(np.mean(chis)), math.sqrt(float(np.mean(variances)))
        return FeatureStat(i, name, math.nan, chi, sigma, 0.0, 1.0, False, True, error)
    theta, chi, sigma = aggregate_feature(thetas, chis, variances)
    z, p, parent = test_feature(chi, sigma, data.n, cfg.alpha, data.d, cfg.bonferroni)
    return FeatureStat(i, name, theta, chi, sigma, z, p, parent)


def discover(data: Dataset, cfg: SearchConfig = SearchConfig(), threads: int = 1) -> ParentReport:
    """Test every covariate for being a direct linear cause of the response.

    One fold partition is shared by all features; each feature costs
    ``2 * K`` nuisance fits. Features are independent, so ``threads > 1``
    runs them concurrently without changing the result.
    """
    if data.d < 1:
        raise SearchError("dataset has no covariate columns")
    if data.n < 2 * cfg.folds:
        raise SearchError(f"need n >= 2*K = {2 * cfg.folds} observations, got {data.n}")
    part = partition(data.n, cfg.folds, cfg.seed)
    if cfg.nuisance == "lasso_cv":
        smallest_train = min(part.training_rows(k).size for k in range(cfg.folds))
        if smallest_train < cfg.cv.folds:
            raise LinModelError("too few observations for CV folds")
    counter = _FitCounter()

    def work(i: int) -> FeatureStat:
        return _search_feature(data, i, part, cfg, counter)

    if threads > 1 and data.d > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            stats = tuple(pool.map(work, range(data.d)))
    else:
        stats = tuple(work(i) for i in range(data.d))
    return ParentReport(stats, cfg, data.n, data.response_name, counter.count)


def dataset_from_arrays(X, y, column_names: Sequence[str] | None = None, response_name: str = "y") -> Dataset:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X[:, None]
    if column_names is None:
        column_names = [f"X{j}" for j in range(X.shape[1])]
    return Dataset(X, y, tuple(column_names), response_name)
