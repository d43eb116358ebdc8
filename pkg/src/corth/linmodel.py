"""Linear conditional-mean estimators used as nuisance learners.

Three estimators share one fitted representation, :class:`LinearPredictor`:

* ``lasso_fit`` / ``lasso_cv`` -- Lasso by cyclic coordinate descent on
  standardized columns, with the penalty optionally chosen by K-fold CV,
* ``ols_fit`` -- least squares with an optional ridge term,
* ``linear_projection`` -- the empirical linear projection of one column on
  a set of others (least squares, ridge only as a fallback for singular
  designs).

The Lasso objective is ``(1/2n) * ||y - b0 - Xs @ beta||^2 + lam * ||beta||_1``
where ``Xs`` holds the standardized columns; coefficients are reported on the
original scale.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Literal

import numpy as np

from corth import _cd

DEFAULT_TOL = 1e-7
DEFAULT_MAX_ITER = 10_000
DEFAULT_RIDGE_EPS = 1e-8

Method = Literal["lasso", "ols", "projection"]


class LinModelError(ValueError):
    """Invalid input to a linear estimator."""


class SingularDesignError(LinModelError):
    pass


def as_design(X, name: str = "X") -> np.ndarray:
    """Validate and return ``X`` as a finite float64 matrix with n >= 1 rows.

    A 1-d input is read as a single column. ``p = 0`` columns are allowed.
    """
    arr = np.asarray(X, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr[:, None]
    if arr.ndim != 2:
        raise LinModelError(f"{name} must be 2-dimensional, got shape {arr.shape}")
    if arr.shape[0] < 1:
        raise LinModelError(f"{name} must have at least one row")
    if not np.all(np.isfinite(arr)):
        raise LinModelError("non-finite data")
    return arr


def _as_response(y, n: int) -> np.ndarray:
    arr = np.asarray(y, dtype=np.float64).reshape(-1)
    if arr.shape[0] != n:
        raise LinModelError(f"length mismatch: X has {n} rows, y has {arr.shape[0]}")
    if not np.all(np.isfinite(arr)):
        raise LinModelError("non-finite data")
    return arr


@dataclass(frozen=True)
class Standardization:
    """Per-column location/scale used to standardize a design matrix.

    ``scales`` are population standard deviations; constant columns are
    stored with scale 1 and listed in ``constant_columns``.
    """

    means: np.ndarray
    scales: np.ndarray
    constant_columns: frozenset[int] = field(default_factory=frozenset)

    def apply(self, X: np.ndarray) -> np.ndarray:
        Xs = (X - self.means) / self.scales
        if self.constant_columns:
            Xs[:, sorted(self.constant_columns)] = 0.0
        return Xs


def _column_stats(X: np.ndarray) -> Standardization:
    p = X.shape[1]
    if p == 0:
        return Standardization(np.zeros(0), np.ones(0), frozenset())
    means = X.mean(axis=0)
    # exact constancy, so that a column of identical values never gets a
    # rounding-noise scale
    constant = np.ptp(X, axis=0) == 0.0
    scales = np.sqrt(np.mean((X - means) ** 2, axis=0))
    constant |= scales == 0.0
    scales = np.where(constant, 1.0, scales)
    return Standardization(means, scales, frozenset(np.flatnonzero(constant).tolist()))


def standardize(X) -> tuple[np.ndarray, Standardization]:
    """Center and scale every column to mean 0 and population sd 1.

    Constant columns become all-zero columns and are flagged rather than
    rejected.
    """
    X = as_design(X)
    st = _column_stats(X)
    return st.apply(X), st


@dataclass(frozen=True)
class LinearPredictor:
    """A fitted linear conditional mean ``intercept + X @ coefficients``."""

    intercept: float
    coefficients: np.ndarray
    lam: float
    method: Method
    standardization: Standardization
    n_iter: int = 0

    @property
    def p(self) -> int:
        return self.coefficients.shape[0]

    def predict(self, X) -> np.ndarray:
        return predict(self, X)


def predict(fit: LinearPredictor, X) -> np.ndarray:
    X = as_design(X)
    if X.shape[1] != fit.p:
        raise LinModelError(
            f"dimension mismatch: predictor has {fit.p} coefficients, X has {X.shape[1]} columns"
        )
    if fit.p == 0:
        return np.full(X.shape[0], fit.intercept)
    return fit.intercept + X @ fit.coefficients


def _mean_only(y: np.ndarray, method: Method, lam: float = 0.0) -> LinearPredictor:
    return LinearPredictor(
        float(y.mean()), np.zeros(0), lam, method, _column_stats(np.zeros((y.shape[0], 0)))
    )


def _lasso_moments(X: np.ndarray, y: np.ndarray):
    Xs, st = standardize(X)
    n = X.shape[0]
    ybar = y.mean()
    yc = y - ybar
    G = Xs.T @ Xs / n
    c = Xs.T @ yc / n
    return Xs, st, ybar, yc, G, c


def lambda_max(X, y) -> float:
    """Smallest penalty at which every Lasso coefficient is zero.

    Equals ``max_j |Xs_j' (y - ybar)| / n`` on standardized ``X``.
    """
    X = as_design(X)
    y = _as_response(y, X.shape[0])
    if X.shape[1] == 0:
        return 0.0
    c = _lasso_moments(X, y)[5]
    return float(np.max(np.abs(c)))


def lasso_fit(X, y, lam: float, tol: float = DEFAULT_TOL, max_iter: int = DEFAULT_MAX_ITER) -> LinearPredictor:
    """Fit the Lasso at a fixed penalty by cyclic coordinate descent.

    Sweeps stop once the largest absolute coefficient change in a sweep
    (standardized scale) drops below ``tol`` or after ``max_iter`` sweeps.

    Parameters
    ----------
    X : array_like, shape (n, p)
    y : array_like, shape (n,)
    lam : float
        Nonnegative penalty on the standardized scale.
    tol : float
    max_iter : int

    Returns
    -------
    LinearPredictor
        Coefficients and intercept on the original scale of ``X``.
    """
    X = as_design(X)
    y = _as_response(y, X.shape[0])
    if not lam >= 0:
        raise LinModelError(f"lambda must be nonnegative, got {lam}")
    if not tol > 0:
        raise LinModelError(f"tol must be positive, got {tol}")
    if X.shape[1] == 0:
        return _mean_only(y, "lasso", float(lam))
    _, st, ybar, _, G, c = _lasso_moments(X, y)
    beta = np.zeros(X.shape[1])
    n_iter = _cd.cd_solve(G, c, float(lam), beta, float(tol), int(max_iter))
    coef = beta / st.scales
    if st.constant_columns:
        coef[sorted(st.constant_columns)] = 0.0
    intercept = float(ybar - st.means @ coef)
    return LinearPredictor(intercept, coef, float(lam), "lasso", st, int(n_iter))


def lasso_objective(X, y, fit: LinearPredictor) -> float:
    """Lasso objective of ``fit`` on the standardized training data."""
    X = as_design(X)
    y = _as_response(y, X.shape[0])
    r = y - predict(fit, X)
    beta_std = fit.coefficients * fit.standardization.scales
    return float(0.5 * np.mean(r**2) + fit.lam * np.abs(beta_std).sum())


def kkt_violation(X, y, fit: LinearPredictor) -> float:
    """Largest violation of the Lasso optimality conditions.

    With ``g = Xs' r / n`` and ``r = y - yhat``: active coordinates need
    ``g_j = lam * sign(beta_j)`` and inactive ones ``|g_j| <= lam``.
    """
    X = as_design(X)
    y = _as_response(y, X.shape[0])
    if fit.p == 0:
        return 0.0
    Xs = fit.standardization.apply(X)
    r = y - predict(fit, X)
    g = Xs.T @ r / X.shape[0]
    beta = fit.coefficients
    active = beta != 0.0
    viol = np.where(
        active,
        np.abs(g - fit.lam * np.sign(beta)),
        np.maximum(np.abs(g) - fit.lam, 0.0),
    )
    return float(viol.max())


@dataclass(frozen=True)
class CvConfig:
    folds: int = 10
    grid_size: int = 100
    lambda_min_ratio: float = 1e-4
    seed: int = 0

    def __post_init__(self):
        if self.folds < 2:
            raise LinModelError(f"cv folds must be >= 2, got {self.folds}")
        if self.grid_size < 2:
            raise LinModelError(f"grid_size must be >= 2, got {self.grid_size}")
        if not 0.0 < self.lambda_min_ratio < 1.0:
            raise LinModelError(f"lambda_min_ratio must be in (0, 1), got {self.lambda_min_ratio}")
        if self.seed < 0:
            raise LinModelError("seed must be nonnegative")


@dataclass(frozen=True)
class CvPath:
    lambdas: np.ndarray
    mean_errors: np.ndarray
    fold_ids: np.ndarray

    @property
    def best_index(self) -> int:
        # the grid is decreasing, so argmin's first hit is the larger lambda
        return int(np.argmin(self.mean_errors))

    @property
    def best_lambda(self) -> float:
        return float(self.lambdas[self.best_index])


def balanced_folds(n: int, folds: int, rng: np.random.Generator) -> np.ndarray:
    """Random fold labels in ``[0, folds)`` with sizes differing by at most 1."""
    ids = np.empty(n, dtype=np.int64)
    for k, block in enumerate(np.array_split(rng.permutation(n), folds)):
        ids[block] = k
    return ids


def lasso_cv_path(X, y, cv: CvConfig = CvConfig(), tol: float = DEFAULT_TOL, max_iter: int = DEFAULT_MAX_ITER) -> CvPath:
    """Mean held-out squared error along the penalty grid.

    Each training split is standardized on its own rows. Split moments are
    obtained by subtracting the held-out fold's sums from the full-data sums,
    after centering everything at the full-data means.
    """
    X = as_design(X)
    y = _as_response(y, X.shape[0])
    n, p = X.shape
    if n < cv.folds:
        raise LinModelError("too few observations for CV folds")
    lmax = lambda_max(X, y)
    lambdas = lmax * np.logspace(0.0, np.log10(cv.lambda_min_ratio), cv.grid_size)
    fold_ids = balanced_folds(n, cv.folds, np.random.default_rng(cv.seed))

    Xc = X - X.mean(axis=0)
    yc = y - y.mean()
    blocks = [np.flatnonzero(fold_ids == k) for k in range(cv.folds)]
    XX = [Xc[b].T @ Xc[b] for b in blocks]
    Xy = [Xc[b].T @ yc[b] for b in blocks]
    sx = [Xc[b].sum(axis=0) for b in blocks]
    sy = [yc[b].sum() for b in blocks]
    lo = [Xc[b].min(axis=0) if p else np.zeros(0) for b in blocks]
    hi = [Xc[b].max(axis=0) if p else np.zeros(0) for b in blocks]
    XX_tot, Xy_tot = sum(XX), sum(Xy)
    sx_tot, sy_tot = sum(sx), sum(sy)

    errors = np.zeros((cv.folds, lambdas.shape[0]))
    for k, b in enumerate(blocks):
        m = n - b.shape[0]
        others = [j for j in range(cv.folds) if j != k]
        mx = (sx_tot - sx[k]) / m
        my = (sy_tot - sy[k]) / m
        resid_test = yc[b] - my
        if p == 0 or lmax == 0.0:
            errors[k] = np.mean(resid_test**2)
            continue
        cov = (XX_tot - XX[k]) / m - np.outer(mx, mx)
        var = np.diag(cov).copy()
        constant = np.max([hi[j] for j in others], axis=0) == np.min([lo[j] for j in others], axis=0)
        constant |= var <= 0.0
        s = np.sqrt(np.where(constant, 1.0, var))
        G = cov / np.outer(s, s)
        G[constant, :] = 0.0
        G[:, constant] = 0.0
        c = ((Xy_tot - Xy[k]) / m - mx * my) / s
        c[constant] = 0.0
        B = _cd.cd_path(G, c, lambdas, float(tol), int(max_iter))
        coef = B / s  # (L, p) on the original scale
        pred = (Xc[b] - mx) @ coef.T
        errors[k] = np.mean((resid_test[:, None] - pred) ** 2, axis=0)
    return CvPath(lambdas, errors.mean(axis=0), fold_ids)


def lasso_cv(X, y, cv: CvConfig = CvConfig(), tol: float = DEFAULT_TOL, max_iter: int = DEFAULT_MAX_ITER) -> tuple[float, LinearPredictor]:
    """Choose the Lasso penalty by K-fold CV and refit on all rows.

    The grid has ``cv.grid_size`` log-spaced values from ``lambda_max`` down to
    ``lambda_max * cv.lambda_min_ratio``; ties in mean error go to the larger
    penalty.
    """
    path = lasso_cv_path(X, y, cv, tol, max_iter)
    best = path.best_lambda
    return best, lasso_fit(X, y, best, tol, max_iter)


def ols_fit(X, y, ridge_eps: float = 0.0) -> LinearPredictor:
    """Least squares with intercept, solving ``(Xc'Xc + n*eps*I) b = Xc'yc``.

    Constant columns are dropped from the solve and get coefficient 0.

    Raises
    ------
    SingularDesignError
        If the centered Gram matrix is numerically singular and
        ``ridge_eps == 0``.
    """
    X = as_design(X)
    y = _as_response(y, X.shape[0])
    if ridge_eps < 0:
        raise LinModelError(f"ridge_eps must be nonnegative, got {ridge_eps}")
    n, p = X.shape
    st = _column_stats(X)
    if p == 0:
        return _mean_only(y, "ols")
    ybar = y.mean()
    coef = np.zeros(p)
    keep = np.array([j not in st.constant_columns for j in range(p)])
    if keep.any():
        Xc = X[:, keep] - st.means[keep]
        A = Xc.T @ Xc
        if ridge_eps > 0:
            A[np.diag_indices_from(A)] += n * ridge_eps
        else:
            sv = np.linalg.svd(A, compute_uv=False)
            if sv[-1] <= sv[0] * 1e-12:
                raise SingularDesignError("singular design; supply ridge_eps")
        try:
            coef[keep] = np.linalg.solve(A, Xc.T @ (y - ybar))
        except np.linalg.LinAlgError as exc:
            raise SingularDesignError("singular design; supply ridge_eps") from exc
    intercept = float(ybar - st.means @ coef)
    return LinearPredictor(intercept, coef, 0.0, "ols", st)


def linear_projection(target_col, Z, ridge_eps: float = DEFAULT_RIDGE_EPS) -> LinearPredictor:
    """Empirical linear projection (with intercept) of ``target_col`` on ``Z``.

    Identical to ``ols_fit(Z, target_col, 0.0)`` when the design is
    nonsingular; otherwise retried with ``ridge_eps``.
    """
    try:
        fit = ols_fit(Z, target_col, 0.0)
    except SingularDesignError:
        if ridge_eps <= 0:
            raise
        fit = ols_fit(Z, target_col, ridge_eps)
    return LinearPredictor(
        fit.intercept, fit.coefficients, 0.0, "projection", fit.standardization
    )
