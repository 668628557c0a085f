"""Multi-equation least squares, cluster-robust inference and bootstrap Wald tests.

All fits share one regressor matrix across equations, so the system estimator
collapses to equation-by-equation OLS solved through a single QR factorization.
Cross-equation error correlation enters only through the stacked cluster-robust
covariance, which is built from per-cluster score sums.
"""

from __future__ import annotations

import logging
from collections.abc import Callable, Sequence
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import pandas as pd
from scipy import linalg, stats

logger = logging.getLogger(__name__)

RANK_TOL = 1e-10
EIGEN_TOL = 1e-12


class EstimationError(RuntimeError):
    """Numerical failure inside an estimator."""


class RankDeficiencyError(EstimationError):
    def __init__(self, columns: Sequence[str]):
        self.columns = tuple(columns)
        super().__init__(f"rank-deficient design; collinear columns: {list(self.columns)}")


class DegenerateRestrictionError(EstimationError):
    def __init__(self):
        super().__init__("degenerate restriction covariance")


def substream(seed: int, *counter: int) -> np.random.Generator:
    """Counter-based generator for replication ``counter`` under a master seed.

    Streams are keyed by ``(seed, *counter)`` so replication b draws the same
    numbers no matter how replications are scheduled across workers.
    """
    return np.random.Generator(np.random.Philox(np.random.SeedSequence((seed, *counter))))


def collinear_columns(values: np.ndarray, columns: Sequence[str], tol: float = RANK_TOL) -> list[str]:
    """Names of columns that are (numerically) spanned by the others."""
    if values.shape[1] == 0:
        return []
    _, r, piv = linalg.qr(values, mode="economic", pivoting=True)
    diag = np.abs(np.diag(r))
    if diag.size == 0 or diag[0] == 0:
        return list(columns)
    rank = int(np.sum(diag > tol * diag[0]))
    if rank < values.shape[1] and values.shape[0] < values.shape[1]:
        rank = min(rank, values.shape[0])
    return [columns[i] for i in sorted(piv[rank:])]


@dataclass
class DesignMatrix:
    """Named regressor matrix with household cluster identifiers."""

    values: np.ndarray
    columns: list[str]
    clusters: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.ndim != 2:
            raise ValueError("design values must be 2-D")
        if self.values.shape[1] != len(self.columns):
            raise ValueError("column names do not match design width")
        if len(set(self.columns)) != len(self.columns):
            raise ValueError("duplicate column names")
        self.clusters = np.asarray(self.clusters)
        if self.clusters.shape[0] != self.values.shape[0]:
            raise ValueError("cluster ids do not match row count")
        if not np.all(np.isfinite(self.values)):
            bad = [c for c, ok in zip(self.columns, np.isfinite(self.values).all(0)) if not ok]
            raise EstimationError(f"non-finite entries in design columns {bad}")

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape

    @classmethod
    def from_frame(cls, frame: pd.DataFrame, clusters) -> DesignMatrix:
        return cls(frame.to_numpy(dtype=float), list(frame.columns), np.asarray(clusters))

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(self.values, columns=self.columns)

    def to_csv(self, path) -> None:
        frame = self.to_frame()
        frame.insert(0, "cluster", self.clusters)
        frame.to_csv(path, index=False, float_format="%.17g", lineterminator="\n")

    def index(self, name: str) -> int:
        return self.columns.index(name)

    def column(self, name: str) -> np.ndarray:
        return self.values[:, self.index(name)]

    def check_rank(self) -> None:
        bad = collinear_columns(self.values, self.columns)
        if bad:
            raise RankDeficiencyError(bad)

    def take(self, rows: np.ndarray, clusters: np.ndarray | None = None) -> DesignMatrix:
        return DesignMatrix(
            self.values[rows], list(self.columns), self.clusters[rows] if clusters is None else clusters
        )

    def drop(self, names: Sequence[str]) -> DesignMatrix:
        keep = [i for i, c in enumerate(self.columns) if c not in set(names)]
        return DesignMatrix(self.values[:, keep], [self.columns[i] for i in keep], self.clusters)

    def append(self, names: Sequence[str], values: np.ndarray) -> DesignMatrix:
        values = np.asarray(values, dtype=float).reshape(self.values.shape[0], -1)
        return DesignMatrix(np.hstack([self.values, values]), self.columns + list(names), self.clusters)


def _qr_solve(X: np.ndarray, Y: np.ndarray, columns: Sequence[str]):
    """Least squares by Householder QR; returns (coef, (X'X)^{-1}).

    Q is never formed: Q'Y is applied from the elementary reflectors.
    """
    n, k = X.shape
    if n <= k:
        raise RankDeficiencyError(collinear_columns(X, columns) or list(columns[n:]))
    geqrf, ormqr = linalg.get_lapack_funcs(("geqrf", "ormqr"), (X,))
    qr, tau, _, info = geqrf(X)
    if info != 0:
        raise EstimationError(f"QR factorization failed (info={info})")
    r = np.triu(qr[:k])
    diag = np.abs(np.diag(r))
    if diag.min() <= RANK_TOL * diag.max():
        raise RankDeficiencyError(collinear_columns(X, columns) or [columns[int(np.argmin(diag))]])
    Y2 = Y if Y.ndim == 2 else Y[:, None]
    qty, _, info = ormqr("L", "T", qr, tau, Y2, lwork=max(1, Y2.shape[1] * 64))
    if info != 0:
        raise EstimationError(f"applying Q' failed (info={info})")
    coef = linalg.solve_triangular(r, qty[:k])
    r_inv = linalg.solve_triangular(r, np.eye(k))
    return coef, r_inv @ r_inv.T


def _cluster_codes(clusters: np.ndarray) -> tuple[np.ndarray, int]:
    _, codes = np.unique(clusters, return_inverse=True)
    return codes.ravel(), int(codes.max()) + 1 if codes.size else 0


def cluster_sum(values: np.ndarray, clusters: np.ndarray) -> np.ndarray:
    """Sum rows of `values` within clusters (rows returned in sorted-cluster order)."""
    codes, n_groups = _cluster_codes(clusters)
    if n_groups == values.shape[0]:
        out = np.empty_like(values)
        out[codes] = values
        return out
    order = np.argsort(codes, kind="stable")
    starts = np.flatnonzero(np.r_[True, np.diff(codes[order]) != 0])
    return np.add.reduceat(values[order], starts, axis=0)


@dataclass
class SystemFit:
    """Common-regressor system estimated by OLS with cluster-robust covariance.

    Parameters are stacked equation-major: position ``j * k + c`` holds the
    coefficient of column ``c`` in equation ``j``.
    """

    equations: tuple[str, ...]
    columns: tuple[str, ...]
    params: np.ndarray  # (k, J)
    residuals: np.ndarray  # (n, J)
    xpx_inv: np.ndarray
    design: np.ndarray  # (n, k)
    clusters: np.ndarray
    small_sample: bool = False
    meta: dict = field(default_factory=dict)

    @property
    def n_obs(self) -> int:
        return self.residuals.shape[0]

    @cached_property
    def n_clusters(self) -> int:
        return _cluster_codes(self.clusters)[1]

    @property
    def theta(self) -> np.ndarray:
        return self.params.T.ravel()

    @property
    def sigma(self) -> np.ndarray:
        """Residual cross-moment matrix divided by n."""
        return self.residuals.T @ self.residuals / self.n_obs

    def index(self, equation: str, column: str) -> int:
        return self.equations.index(equation) * len(self.columns) + self.columns.index(column)

    def coef(self, equation: str, column: str) -> float:
        return float(self.params[self.columns.index(column), self.equations.index(equation)])

    @cached_property
    def leverage_residuals(self) -> np.ndarray:
        """Residuals scaled by ``(I - H_gg)^{-1}`` within each cluster (jackknife-type)."""
        X, A = self.design, self.xpx_inv
        h = np.einsum("ij,jk,ik->i", X, A, X)
        out = self.residuals / (1.0 - h)[:, None]
        codes, _ = _cluster_codes(self.clusters)
        sizes = np.bincount(codes)
        for g in np.flatnonzero(sizes > 1):
            rows = np.flatnonzero(codes == g)
            Xg = X[rows]
            M = np.eye(rows.size) - Xg @ A @ Xg.T
            out[rows] = np.linalg.solve(M, self.residuals[rows])
        return out

    def vcov_subset(self, idx: Sequence[int], leverage: bool = False) -> np.ndarray:
        """Cluster-robust covariance of the stacked parameters at `idx`.

        With `leverage` the scores use :attr:`leverage_residuals`, which keeps
        Wald tests near nominal size when a few rows have high leverage.
        """
        idx = np.asarray(idx, dtype=int)
        k = len(self.columns)
        eq, col = np.divmod(idx, k)
        ucol, pos = np.unique(col, return_inverse=True)
        basis = self.design @ self.xpx_inv[:, ucol]
        resid = self.leverage_residuals if leverage else self.residuals
        psi = basis[:, pos] * resid[:, eq]
        sums = cluster_sum(psi, self.clusters)
        v = sums.T @ sums
        if self.small_sample:
            g = self.n_clusters
            v *= g / (g - 1)
        return v

    @cached_property
    def vcov(self) -> np.ndarray:
        return self.vcov_subset(np.arange(len(self.equations) * len(self.columns)))

    def se(self, equation: str, column: str) -> float:
        i = self.index(equation, column)
        return float(np.sqrt(self.vcov_subset([i])[0, 0]))

    def params_frame(self) -> pd.DataFrame:
        return pd.DataFrame(self.params, index=list(self.columns), columns=list(self.equations))

    def to_dict(self, columns: Sequence[str] | None = None) -> dict:
        columns = list(self.columns) if columns is None else list(columns)
        out = {}
        for eq in self.equations:
            out[eq] = {
                c: {"coef": self.coef(eq, c), "se": self.se(eq, c)} for c in columns
            }
        return {
            "n_obs": self.n_obs,
            "n_clusters": self.n_clusters,
            "equations": out,
            **self.meta,
        }


def fit_system(
    Y: np.ndarray,
    X: DesignMatrix,
    equations: Sequence[str] | None = None,
    small_sample: bool = False,
) -> SystemFit:
    """Estimate ``Y = X B + E`` jointly.

    With identical regressors in every equation the seemingly-unrelated
    estimator equals OLS per equation; cross-equation correlation is carried by
    the stacked covariance.
    """
    Y = np.asarray(Y, dtype=float)
    if Y.ndim == 1:
        Y = Y[:, None]
    if Y.shape[0] != X.shape[0]:
        raise ValueError("outcome and design row counts differ")
    if not np.all(np.isfinite(Y)):
        raise EstimationError("non-finite outcomes")
    equations = tuple(equations) if equations is not None else tuple(f"eq{j}" for j in range(Y.shape[1]))
    coef, xpx_inv = _qr_solve(X.values, Y, X.columns)
    resid = Y - X.values @ coef
    return SystemFit(
        equations=equations,
        columns=tuple(X.columns),
        params=coef,
        residuals=resid,
        xpx_inv=xpx_inv,
        design=X.values,
        clusters=X.clusters,
        small_sample=small_sample,
    )


def robust_vcov(X: np.ndarray, resid: np.ndarray) -> np.ndarray:
    """Heteroskedasticity-robust (HC0) sandwich for a single equation."""
    xpx_inv = np.linalg.inv(X.T @ X)
    meat = (X * resid[:, None] ** 2).T @ X
    return xpx_inv @ meat @ xpx_inv


@dataclass
class FirstStage:
    """First-stage regression of endogenous regressor(s) on instruments + exogenous block."""

    names: tuple[str, ...]
    instruments: tuple[str, ...]
    coefficients: np.ndarray  # (k, q)
    residuals: np.ndarray  # (n, q)
    fitted: np.ndarray  # (n, q)
    f_stat: np.ndarray  # (q,) homoskedastic F on excluded instruments
    f_df: tuple[int, int]

    def residual_columns(self) -> list[str]:
        return [f"cf_{n}" for n in self.names]


def control_function_stage(
    endogenous: np.ndarray,
    design: DesignMatrix,
    instruments: Sequence[str],
    names: Sequence[str] | None = None,
) -> FirstStage:
    """Regress endogenous variable(s) on `design` and keep the residuals.

    `design` holds the exogenous block plus the excluded instruments named in
    `instruments`. The returned residuals enter downstream equations as the
    control function.
    """
    endogenous = np.asarray(endogenous, dtype=float)
    if endogenous.ndim == 1:
        endogenous = endogenous[:, None]
    q = endogenous.shape[1]
    names = tuple(names) if names is not None else tuple(f"endog{i}" for i in range(q))
    missing = [z for z in instruments if z not in design.columns]
    if missing:
        raise ValueError(f"instrument columns not in design: {missing}")
    coef, _ = _qr_solve(design.values, endogenous, design.columns)
    resid = endogenous - design.values @ coef

    restricted = design.drop(instruments)
    n, k = design.shape
    n_inst = len(instruments)
    if restricted.shape[1]:
        coef_r, _ = _qr_solve(restricted.values, endogenous, restricted.columns)
        resid_r = endogenous - restricted.values @ coef_r
    else:
        resid_r = endogenous
    rss_u = np.sum(resid**2, axis=0)
    rss_r = np.sum(resid_r**2, axis=0)
    with np.errstate(divide="ignore", invalid="ignore"):
        f_stat = ((rss_r - rss_u) / n_inst) / (rss_u / (n - k))
    return FirstStage(
        names=names,
        instruments=tuple(instruments),
        coefficients=coef,
        residuals=resid,
        fitted=endogenous - resid,
        f_stat=f_stat,
        f_df=(n_inst, n - k),
    )


# --- Wald machinery -------------------------------------------------------


@dataclass(frozen=True)
class Restriction:
    """Differentiable scalar restriction ``R(theta) = 0`` with its gradient."""

    name: str
    func: Callable[[np.ndarray], float]
    grad: Callable[[np.ndarray], np.ndarray]


def linear_restriction(name: str, position: int, size: int, value: float = 0.0) -> Restriction:
    e = np.zeros(size)
    e[position] = 1.0
    return Restriction(name, lambda th: th[position] - value, lambda th: e)


@dataclass
class WaldResult:
    statistic: float
    df: int
    p_asymptotic: float
    restriction_values: np.ndarray
    names: tuple[str, ...] = ()
    p_bootstrap: float | None = None
    B: int | None = None
    bootstrap_distribution: np.ndarray | None = None
    redraws: int = 0

    def to_dict(self) -> dict:
        return {
            "statistic": self.statistic,
            "df": self.df,
            "p_asymptotic": self.p_asymptotic,
            "p_bootstrap": self.p_bootstrap,
            "B": self.B,
            "redraws": self.redraws,
            "restrictions": dict(zip(self.names, map(float, self.restriction_values))),
        }


def evaluate_restrictions(theta: np.ndarray, restrictions: Sequence[Restriction]):
    r = np.array([float(R.func(theta)) for R in restrictions])
    G = np.vstack([np.asarray(R.grad(theta), dtype=float) for R in restrictions])
    if not (np.all(np.isfinite(r)) and np.all(np.isfinite(G))):
        raise EstimationError("non-finite restriction value or gradient")
    return r, G


def quadratic_form(r: np.ndarray, V: np.ndarray) -> float:
    """``r' V^{-1} r`` with a degeneracy check on `V`."""
    V = 0.5 * (V + V.T)
    w = np.linalg.eigvalsh(V)
    if w[-1] <= 0 or w[0] <= EIGEN_TOL * w[-1]:
        raise DegenerateRestrictionError()
    if not np.any(r):
        return 0.0
    c = linalg.cho_factor(V)
    return float(r @ linalg.cho_solve(c, r))


def wald_nonlinear(
    theta: np.ndarray, vcov: np.ndarray, restrictions: Sequence[Restriction]
) -> WaldResult:
    """``W = R' (G V G')^{-1} R`` with an asymptotic chi-square p-value."""
    r, G = evaluate_restrictions(np.asarray(theta, dtype=float), restrictions)
    stat = quadratic_form(r, G @ vcov @ G.T)
    df = len(restrictions)
    return WaldResult(
        statistic=stat,
        df=df,
        p_asymptotic=float(stats.chi2.sf(stat, df)),
        restriction_values=r,
        names=tuple(R.name for R in restrictions),
    )


# --- cluster bootstrap ----------------------------------------------------


@dataclass
class BootstrapResult:
    observed: np.ndarray
    distribution: np.ndarray  # (B, m)
    p_value: np.ndarray
    B: int
    redraws: int


class ClusterResampler:
    """Draw household clusters with replacement; each draw becomes a new cluster."""

    def __init__(self, clusters: np.ndarray):
        codes, n_groups = _cluster_codes(np.asarray(clusters))
        order = np.argsort(codes, kind="stable")
        bounds = np.flatnonzero(np.r_[True, np.diff(codes[order]) != 0, True])
        self.members = [order[bounds[g] : bounds[g + 1]] for g in range(n_groups)]
        self.sizes = np.diff(bounds)
        self.n_groups = n_groups
        self.singletons = bool(np.all(self.sizes == 1))
        self._order = order

    def draw(self, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
        picks = rng.integers(0, self.n_groups, size=self.n_groups)
        if self.singletons:
            return self._order[picks], np.arange(self.n_groups)
        rows = np.concatenate([self.members[g] for g in picks])
        labels = np.repeat(np.arange(self.n_groups), self.sizes[picks])
        return rows, labels


def cluster_bootstrap(
    statistic: Callable[[np.ndarray, np.ndarray], float | np.ndarray],
    clusters: np.ndarray,
    B: int,
    seed: int,
    observed: float | np.ndarray | None = None,
    n_workers: int = 1,
    max_redraw_share: float = 0.10,
    max_attempts: int = 50,
) -> BootstrapResult:
    """Pairs-cluster bootstrap of a scalar or vector statistic.

    `statistic(rows, cluster_labels)` recomputes the full procedure on the
    resampled rows. Each p-value counts replications at least as large as the
    observed value: ``(1 + #{T*_b >= T}) / (B + 1)``.
    Replication ``b`` uses :func:`substream` ``(seed, b)``; a replication that
    fails with :class:`RankDeficiencyError` or a degenerate covariance is
    redrawn from ``(seed, b, attempt)``. Results do not depend on `n_workers`.
    """
    if B < 99:
        raise ValueError("B must be at least 99")
    clusters = np.asarray(clusters)
    if observed is None:
        observed = statistic(np.arange(clusters.shape[0]), clusters)
    observed = np.atleast_1d(np.asarray(observed, dtype=float))
    resampler = ClusterResampler(clusters)

    def one(b: int) -> tuple[np.ndarray, int]:
        for attempt in range(max_attempts):
            rng = substream(seed, b) if attempt == 0 else substream(seed, b, attempt)
            rows, labels = resampler.draw(rng)
            try:
                return np.atleast_1d(np.asarray(statistic(rows, labels), dtype=float)), attempt
            except (RankDeficiencyError, DegenerateRestrictionError):
                continue
        raise EstimationError(f"replication {b}: no valid resample in {max_attempts} attempts")

    if n_workers > 1:
        with ThreadPoolExecutor(max_workers=n_workers) as pool:
            results = list(pool.map(one, range(B)))
    else:
        results = [one(b) for b in range(B)]
    dist = np.vstack([r[0] for r in results])
    redraws = sum(r[1] for r in results)
    if redraws:
        logger.info("cluster bootstrap: %d redrawn replications out of %d", redraws, B)
    if redraws > max_redraw_share * B:
        raise EstimationError(f"too many degenerate resamples ({redraws} of {B})")
    p = (1 + np.sum(dist >= observed, axis=0)) / (B + 1)
    return BootstrapResult(observed, dist, p, B, redraws)


def wald_bootstrap_many(
    estimate: Callable[[np.ndarray, np.ndarray], Sequence[tuple[np.ndarray, np.ndarray]]],
    clusters: np.ndarray,
    restriction_sets: Sequence[Sequence[Restriction]],
    B: int,
    seed: int,
    n_workers: int = 1,
) -> list[WaldResult]:
    """Several Wald tests bootstrapped on one shared set of resamples.

    `estimate(rows, labels)` returns one ``(theta, vcov)`` pair per restriction
    set, re-estimated on the given rows (including any first stages).
    Bootstrap statistics use ``R(theta*) - R(theta_hat)`` so the reference
    distribution mimics the null whether or not it holds in the sample.
    """
    clusters = np.asarray(clusters)
    base = [
        wald_nonlinear(th, v, rs)
        for (th, v), rs in zip(estimate(np.arange(clusters.shape[0]), clusters), restriction_sets)
    ]

    def stat(rows, labels):
        out = []
        for (th, v), rs, w in zip(estimate(rows, labels), restriction_sets, base):
            r, G = evaluate_restrictions(th, rs)
            out.append(quadratic_form(r - w.restriction_values, G @ v @ G.T))
        return np.array(out)

    observed = np.array([w.statistic for w in base])
    boot = cluster_bootstrap(stat, clusters, B, seed, observed=observed, n_workers=n_workers)
    for i, w in enumerate(base):
        w.p_bootstrap = float(boot.p_value[i])
        w.B = B
        w.bootstrap_distribution = boot.distribution[:, i]
        w.redraws = boot.redraws
    return base


def wald_bootstrap(
    estimate: Callable[[np.ndarray, np.ndarray], tuple[np.ndarray, np.ndarray]],
    clusters: np.ndarray,
    restrictions: Sequence[Restriction],
    B: int,
    seed: int,
    n_workers: int = 1,
) -> WaldResult:
    """Wald test with a recentered cluster-bootstrap p-value."""
    return wald_bootstrap_many(
        lambda rows, labels: [estimate(rows, labels)], clusters, [restrictions], B, seed, n_workers
    )[0]
