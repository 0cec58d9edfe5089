"""Variable selection and multicollinearity diagnostics.

Selection algorithms: least-angle regression with a BIC-optimal prefix,
coordinate-descent lasso and elastic net with K-fold cross validation,
bootstrap iterative sure-independence screening (ISIS) and solar
(subsample-ordered least-angle regression).

Randomised routines take a root ``seed``; every subsample, bootstrap draw or
fold split uses its own child of ``numpy.random.SeedSequence(seed)``, so the
result does not depend on execution order.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .datamodel import Dataset, corr_matrix
from .errors import DataError, NumericError
from .regress import RegressionFit, ols

TIE_TOL = 1e-12


@dataclass
class SelectionResult:
    algorithm: str
    candidates: list[str]
    selected: list[str]
    scores: dict[str, float]
    hyperparameters: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "algorithm": self.algorithm,
            "hyperparameters": self.hyperparameters,
            "scores": {k: float(v) for k, v in self.scores.items()},
            "selected": list(self.selected),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)


def _names(X, names):
    p = X.shape[1]
    return list(names) if names is not None else [f"x{j + 1}" for j in range(p)]


def _prep(y, X):
    y = np.asarray(y, dtype=float).ravel()
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X.reshape(-1, 1)
    if X.shape[0] != y.size:
        raise DataError("X and y have different numbers of rows")
    return y, X


def _standardize_cols(X):
    mu = X.mean(axis=0)
    Xc = X - mu
    sd = np.sqrt(np.mean(Xc * Xc, axis=0))
    return Xc, mu, sd


# -- least-angle regression ---------------------------------------------------


@dataclass
class LarsPath:
    """LARS breakpoints.

    ``coefs[k]`` holds the coefficients (original column scale) after step
    ``k``; its support is ``order[:k]``. ``bic[k]`` is the BIC of the OLS refit
    on ``order[:k]``: ``n log(RSS/n) + k log n``.
    """

    names: list[str]
    order: list[int]
    coefs: np.ndarray
    bic: np.ndarray
    n: int

    @property
    def best_step(self) -> int:
        return int(np.argmin(self.bic))

    def prefix(self, k: int | None = None) -> list[int]:
        return list(self.order[: self.best_step if k is None else k])

    def selected_names(self) -> list[str]:
        return [self.names[j] for j in self.prefix()]


def lars_path(y, X, max_steps: int | None = None, names: Sequence[str] | None = None) -> LarsPath:
    """Classical least-angle regression (no lasso modification).

    ``y`` and ``X`` are centered internally and the columns scaled to unit
    norm; equiangular steps then proceed until ``max_steps`` variables are
    active, the last step running to the OLS fit of the active set when no
    further variable can enter. Entry ties within 1e-12 go to the lowest
    column index. Columns that would make the active Gram matrix singular
    never enter.
    """
    y, X = _prep(y, X)
    n, p = X.shape
    names = _names(X, names)
    yc = y - y.mean()
    Xc = X - X.mean(axis=0)
    norms = np.sqrt(np.sum(Xc * Xc, axis=0))
    if np.any(norms == 0):
        raise NumericError(f"zero-variance column {names[int(np.argmin(norms))]!r}")
    Xs = Xc / norms
    limit = min(n - 1, p)
    max_steps = limit if max_steps is None else min(max_steps, limit)
    beta = np.zeros(p)
    mu = np.zeros(n)
    active: list[int] = []
    excluded: set[int] = set()
    coefs = [np.zeros(p)]
    bic = [n * math.log(max(float(yc @ yc), 1e-300) / n)]
    c = Xs.T @ yc
    C = float(np.max(np.abs(c))) if p else 0.0
    if max_steps < 1 or C <= 0:
        return LarsPath(names, [], np.array(coefs), np.array(bic), n)

    # orthonormal basis of the active columns in entry order; gives the
    # refit RSS of every prefix and the admissibility test without re-solving
    Q = np.zeros((n, 0))
    yy = float(yc @ yc)
    explained = 0.0

    def extend(Q, x):
        r = x - Q @ (Q.T @ x)
        r = r - Q @ (Q.T @ r)
        return r

    def choose(g):
        m = float(np.min(g)) if g.size else np.inf
        if not np.isfinite(m):
            return None
        return int(np.flatnonzero(g <= m + TIE_TOL)[0])

    # first entrant: largest |c|, lowest index on ties
    first = next(j for j in range(p) if abs(c[j]) >= C - TIE_TOL)
    active.append(first)
    r = extend(Q, Xs[:, first])
    Q = np.column_stack([Q, r / np.linalg.norm(r)])
    explained += float(Q[:, -1] @ yc) ** 2
    for step in range(1, max_steps + 1):
        s = np.sign(c[active])
        s[s == 0] = 1.0
        XA = Xs[:, active] * s
        G = XA.T @ XA
        ginv1 = np.linalg.solve(G, np.ones(len(active)))
        AA = 1.0 / math.sqrt(float(np.sum(ginv1)))
        w = AA * ginv1
        u = XA @ w
        a = Xs.T @ u
        nxt = None
        gamma = C / AA
        if step < max_steps:
            free = np.ones(p, dtype=bool)
            free[active] = False
            free[list(excluded)] = False
            d1, d2 = AA - a, AA + a
            with np.errstate(divide="ignore", invalid="ignore"):
                t1 = np.where(d1 > 1e-15, (C - c) / d1, np.inf)
                t2 = np.where(d2 > 1e-15, (C + c) / d2, np.inf)
            t1[~(t1 > 1e-15)] = np.inf
            t2[~(t2 > 1e-15)] = np.inf
            g = np.minimum(t1, t2)
            g[~free] = np.inf
            while True:
                nxt = choose(g)
                if nxt is None:
                    break
                r = extend(Q, Xs[:, nxt])
                if float(r @ r) > 1e-10:
                    break
                excluded.add(nxt)
                g[nxt] = np.inf
            if nxt is not None and g[nxt] < gamma:
                gamma = float(g[nxt])
            else:
                nxt = None
        mu = mu + gamma * u
        beta[active] += gamma * s * w
        c = Xs.T @ (yc - mu)
        C = max(C - gamma * AA, 0.0)
        coefs.append(beta / norms)
        rss = max(yy - explained, 0.0)
        k = len(active)
        bic.append(n * math.log(max(rss, 1e-300) / n) + k * math.log(n))
        if nxt is None:
            break
        active.append(nxt)
        Q = np.column_stack([Q, r / np.linalg.norm(r)])
        explained += float(Q[:, -1] @ yc) ** 2
    order = active[: len(coefs) - 1]
    return LarsPath(names, order, np.array(coefs), np.array(bic), n)


# -- coordinate descent -------------------------------------------------------


def _cd(G, b, l1, l2, beta, tol, max_iter):
    p = b.size
    diag = np.diag(G)
    for it in range(max_iter):
        delta = 0.0
        for j in range(p):
            if diag[j] == 0:
                continue
            old = beta[j]
            rho = b[j] - G[j] @ beta + diag[j] * old
            if rho > l1:
                new = (rho - l1) / (diag[j] + l2)
            elif rho < -l1:
                new = (rho + l1) / (diag[j] + l2)
            else:
                new = 0.0
            if new != old:
                beta[j] = new
                delta = max(delta, abs(new - old))
        if delta < tol:
            return beta, it + 1
    raise NumericError(f"coordinate descent did not converge in {max_iter} sweeps (last change {delta:.3g})")


def lasso_cd(y, X, lam: float, beta0=None, tol: float = 1e-9, max_iter: int = 100000) -> np.ndarray:
    """Minimise ``RSS / (2n) + lam * ||b||_1`` by cyclic coordinate descent.

    No intercept is fitted; center ``y`` and ``X`` first.
    """
    return elastic_net_cd(y, X, lam, 1.0, beta0, tol, max_iter)


def elastic_net_cd(y, X, lam: float, alpha: float, beta0=None, tol: float = 1e-9,
                   max_iter: int = 100000) -> np.ndarray:
    """Minimise ``RSS / (2n) + lam * (alpha ||b||_1 + (1 - alpha) / 2 ||b||^2)``."""
    if lam < 0:
        raise DataError("lambda must be non-negative")
    if not 0 < alpha <= 1:
        raise DataError("mixing alpha must lie in (0, 1]")
    y, X = _prep(y, X)
    n = y.size
    G = X.T @ X / n
    b = X.T @ y / n
    beta = np.zeros(X.shape[1]) if beta0 is None else np.array(beta0, dtype=float)
    beta, _ = _cd(G, b, lam * alpha, lam * (1 - alpha), beta, tol, max_iter)
    return beta


def lambda_max(y, X, alpha: float = 1.0) -> float:
    y, X = _prep(y, X)
    return float(np.max(np.abs(X.T @ (y - y.mean()))) / y.size / alpha)


def _fold_ids(n, folds, rng):
    perm = rng.permutation(n)
    ids = np.empty(n, dtype=int)
    ids[perm] = np.arange(n) % folds
    return ids


def _path_fit(Xtr, ytr, lams, alpha):
    """Warm-started coefficients along a descending lambda grid (standardized scale)."""
    Xc, mu, sd = _standardize_cols(Xtr)
    sd = np.where(sd > 0, sd, 1.0)
    Xs = Xc / sd
    yc = ytr - ytr.mean()
    n = ytr.size
    G = Xs.T @ Xs / n
    b = Xs.T @ yc / n
    beta = np.zeros(Xtr.shape[1])
    out = []
    for lam in lams:
        beta, _ = _cd(G, b, lam * alpha, lam * (1 - alpha), beta.copy(), 1e-9, 100000)
        out.append(beta.copy())
    return np.array(out), mu, sd, ytr.mean()


def cv_select(y, X, algorithm: str = "lasso", folds: int = 10, grid=None, alphas=None,
              seed: int = 0, names: Sequence[str] | None = None, n_lambda: int = 100,
              lambda_ratio: float = 1e-3) -> SelectionResult:
    """K-fold cross-validated lasso or elastic net.

    The lambda grid defaults to ``n_lambda`` log-spaced values from the
    all-zero threshold down to ``lambda_ratio`` times it. Elastic net searches
    the product of that grid with ``alphas`` (default 0.1 .. 0.9). The point
    with the smallest mean fold MSE is refitted on all rows; selected
    variables are those with a non-zero coefficient.
    """
    if algorithm not in ("lasso", "elastic_net"):
        raise DataError(f"unknown algorithm {algorithm!r}")
    if folds < 2:
        raise DataError("folds must be at least 2")
    y, X = _prep(y, X)
    n, p = X.shape
    names = _names(X, names)
    if algorithm == "lasso":
        alphas = [1.0]
    elif alphas is None:
        alphas = [round(0.1 * k, 1) for k in range(1, 10)]
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    ids = _fold_ids(n, folds, rng)
    Xc, _, sd_full = _standardize_cols(X)
    if np.any(sd_full == 0):
        raise NumericError(f"constant column {names[int(np.argmin(sd_full))]!r}")
    Xs_full = Xc / sd_full
    best = (np.inf, None, None)
    small_fold = bool(np.min(np.bincount(ids, minlength=folds)) < p + 1)
    for alpha in alphas:
        if grid is None:
            lmax = lambda_max(y, Xs_full, alpha)
            lams = lmax * np.logspace(0, math.log10(lambda_ratio), n_lambda)
        else:
            lams = np.sort(np.asarray(grid, dtype=float))[::-1]
            if lams.size == 0:
                raise DataError("empty lambda grid")
        mse = np.zeros(lams.size)
        for f in range(folds):
            tr, te = ids != f, ids == f
            B, mu, sd, ybar = _path_fit(X[tr], y[tr], lams, alpha)
            pred = ybar + ((X[te] - mu) / sd) @ B.T
            mse += np.mean((y[te][:, None] - pred) ** 2, axis=0) / folds
        k = int(np.argmin(mse))
        if mse[k] < best[0]:
            best = (float(mse[k]), float(lams[k]), float(alpha))
    _, lam, alpha = best
    yc = y - y.mean()
    coef = elastic_net_cd(yc, Xs_full, lam, alpha)
    scores = {s: float(abs(c)) for s, c in zip(names, coef)}
    selected = [s for s, c in zip(names, coef) if c != 0]
    hp = {"lambda": lam, "folds": folds, "cv_mse": best[0], "seed": seed, "small_fold": small_fold}
    if algorithm == "elastic_net":
        hp["alpha"] = alpha
    return SelectionResult(f"cv-{'lasso' if algorithm == 'lasso' else 'en'}", names, selected, scores, hp)


# -- screening and subsample aggregation --------------------------------------


def _bic_prefix(y, X, max_steps=None):
    path = lars_path(y, X, max_steps=max_steps)
    return path.prefix()


def _isis_once(y, X, keep, max_iter):
    n, p = X.shape
    Xc = X - X.mean(axis=0)
    norms = np.sqrt(np.sum(Xc * Xc, axis=0))
    ok = norms > 0
    Xs = np.zeros_like(Xc)
    Xs[:, ok] = Xc[:, ok] / norms[ok]
    yc = y - y.mean()
    A: list[int] = []
    r = yc
    for _ in range(max_iter):
        score = np.abs(Xs.T @ r)
        score[~ok] = -1.0
        score[A] = -1.0
        room = max(keep - len(A), 0)
        # stable ordering: larger score first, lower index on ties
        ranked = np.lexsort((np.arange(p), -score))
        new = [int(j) for j in ranked[:room] if score[j] >= 0]
        pool = sorted(set(A) | set(new))
        if not pool:
            break
        steps = min(len(pool), n - 2)
        pref = _bic_prefix(yc, Xs[:, pool], steps)
        newA = sorted(pool[j] for j in pref)
        if newA == sorted(A):
            break
        A = newA
        if not A:
            break
        b, *_ = np.linalg.lstsq(Xs[:, A], yc, rcond=None)
        r = yc - Xs[:, A] @ b
    return A


def isis_bootstrap(y, X, B: int = 200, keep_fraction: float | None = None,
                   inclusion_threshold: float = 0.7, seed: int = 0,
                   names: Sequence[str] | None = None, max_iter: int = 5,
                   moderate_cutoff: float | None = None) -> SelectionResult:
    """Bootstrap-aggregated iterative sure-independence screening.

    Each bootstrap sample is screened by absolute correlation with the current
    residual, keeping ``ceil(keep_fraction * n)`` variables (default
    ``ceil(n / log n)``); a LARS path on the kept set is cut at its BIC minimum,
    residuals are recomputed and the loop repeats until the set stops
    changing. A variable's score is the fraction of bootstrap samples that
    select it.

    ``moderate_cutoff`` optionally adds every variable whose absolute
    correlation with a selected variable reaches the cutoff.
    """
    if B < 1:
        raise DataError("B must be at least 1")
    if not 0 < inclusion_threshold <= 1:
        raise DataError("inclusion_threshold must lie in (0, 1]")
    y, X = _prep(y, X)
    n, p = X.shape
    names = _names(X, names)
    if n < 4:
        raise DataError(f"n={n} too small for screening")
    keep = math.ceil(keep_fraction * n) if keep_fraction else math.ceil(n / math.log(n))
    keep = max(1, min(keep, p, n - 2))
    counts = np.zeros(p)
    for child in np.random.SeedSequence(seed).spawn(B):
        rows = np.random.default_rng(child).integers(0, n, n)
        for j in _isis_once(y[rows], X[rows], keep, max_iter):
            counts[j] += 1
    freq = counts / B
    selected = [names[j] for j in range(p) if freq[j] >= inclusion_threshold]
    hp = {"B": B, "keep": keep, "threshold": inclusion_threshold, "seed": seed, "max_iter": max_iter}
    if moderate_cutoff is not None:
        R = np.corrcoef(X, rowvar=False).reshape(p, p)
        sel_idx = [names.index(s) for s in selected]
        extra = [names[j] for j in range(p) if names[j] not in selected
                 and any(abs(R[j, i]) >= moderate_cutoff for i in sel_idx)]
        selected = [s for s in names if s in set(selected) | set(extra)]
        hp["moderate_cutoff"] = moderate_cutoff
        hp["moderate_additions"] = extra
    return SelectionResult("isis", names, selected, dict(zip(names, freq.tolist())), hp)


SOLAR_C_GRID = tuple(round(1.0 - 0.1 * k, 1) for k in range(10))


def _solar_scores(y, X, K, fraction, seeds):
    n, p = X.shape
    m = int(math.floor(fraction * n))
    if m < 10:
        raise DataError(f"subsample of {m} rows is smaller than 10")
    counts = np.zeros(p)
    for child in seeds:
        rows = np.sort(np.random.default_rng(child).choice(n, m, replace=False))
        for j in _bic_prefix(y[rows], X[rows]):
            counts[j] += 1
    return counts / K


def solar(y, X, K: int = 10, subsample_fraction: float = 0.9, c: float | None = None,
          seed: int = 0, names: Sequence[str] | None = None, c_grid: Sequence[float] = SOLAR_C_GRID,
          validation_fraction: float = 0.2) -> SelectionResult:
    """Subsample-ordered least-angle regression.

    On each of ``K`` subsamples (without replacement) the LARS path is cut at
    its BIC minimum; a variable's score is the fraction of subsamples whose
    cut-off prefix contains it. The selection is ``{v : score >= c}``. When
    ``c`` is None it is tuned on a held-out split: scores from the remaining
    rows are thresholded at each value of the descending ``c_grid`` and the
    value whose OLS refit has the smallest validation MSE wins (the larger
    ``c`` on ties).
    """
    if K < 2:
        raise DataError("K must be at least 2")
    if not 0 < subsample_fraction < 1:
        raise DataError("subsample_fraction must lie in (0, 1)")
    if c is not None and not 0 < c <= 1:
        raise DataError("c must lie in (0, 1]")
    y, X = _prep(y, X)
    n, p = X.shape
    names = _names(X, names)
    root = np.random.SeedSequence(seed)
    split_seed, full_seed, train_seed = root.spawn(3)
    hp = {"K": K, "subsample_fraction": subsample_fraction, "seed": seed}
    if c is None:
        rng = np.random.default_rng(split_seed)
        perm = rng.permutation(n)
        nval = max(1, int(round(validation_fraction * n)))
        val, tr = np.sort(perm[:nval]), np.sort(perm[nval:])
        s_tr = _solar_scores(y[tr], X[tr], K, subsample_fraction, train_seed.spawn(K))
        best_c, best_mse = None, np.inf
        for cc in sorted(set(c_grid), reverse=True):
            sel = [j for j in range(p) if s_tr[j] >= cc]
            if sel:
                fit = ols(y[tr], X[tr][:, sel])
                pred = fit.coef[0] + X[val][:, sel] @ fit.coef[1:]
            else:
                pred = np.full(val.size, y[tr].mean())
            mse = float(np.mean((y[val] - pred) ** 2))
            if mse < best_mse - 1e-12:
                best_c, best_mse = cc, mse
        c = best_c
        hp["c_tuned"] = True
        hp["validation_mse"] = best_mse
    else:
        hp["c_tuned"] = False
    s = _solar_scores(y, X, K, subsample_fraction, full_seed.spawn(K))
    selected = [names[j] for j in range(p) if s[j] >= c]
    hp["c"] = c
    hp["threshold"] = c
    return SelectionResult("solar", names, selected, dict(zip(names, s.tolist())), hp)


# -- multicollinearity diagnostics -------------------------------------------


def irc_value(Sigma, support: Sequence[int]) -> float:
    """Sign-agnostic irrepresentable-condition value.

    ``max_{j not in S} || Sigma_jS Sigma_SS^-1 ||_1``; below 1 means the
    condition holds for every sign pattern of the true coefficients.
    ``Sigma`` may be a covariance matrix or a Dataset (its correlation
    matrix is used), in which case ``support`` may hold column names.
    """
    if isinstance(Sigma, Dataset):
        support = [Sigma.index(s) if isinstance(s, str) else s for s in support]
        Sigma = corr_matrix(Sigma).matrix
    S = np.asarray(Sigma, dtype=float)
    support = list(support)
    rest = [j for j in range(S.shape[0]) if j not in support]
    if not support or not rest:
        raise DataError("support and its complement must be non-empty")
    Sss = S[np.ix_(support, support)]
    if np.linalg.cond(Sss) > 1e12:
        raise NumericError("singular support covariance block")
    M = np.linalg.solve(Sss, S[np.ix_(support, rest)]).T
    return float(np.max(np.sum(np.abs(M), axis=1)))


@dataclass
class GroupReport:
    anchor: str
    members: list[str]
    fit: RegressionFit | None
    abs_coef_sum: float
    irc_violation: bool
    cutoff: float
    correlations: dict[str, float] = field(default_factory=dict)

    @property
    def group(self) -> list[str]:
        return [self.anchor] + list(self.members)

    @property
    def r2(self) -> float:
        return self.fit.r2 if self.fit is not None else 0.0

    def to_dict(self) -> dict:
        return {
            "anchor": self.anchor,
            "members": list(self.members),
            "cutoff": self.cutoff,
            "correlations": self.correlations,
            "coefficients": dict(zip(self.fit.names[1:], self.fit.coef[1:].tolist())) if self.fit else {},
            "r2": self.r2,
            "abs_coef_sum": self.abs_coef_sum,
            "irc_violation": self.irc_violation,
        }


def grouping_diagnostic(ds: Dataset, anchor: str, cutoff: float = 0.5,
                        candidates: Sequence[str] | None = None) -> GroupReport:
    """Find the variables strongly correlated with ``anchor`` and regress it on them.

    Members have ``|corr| > cutoff``. The standardized OLS of the anchor on the
    members measures how well the group reproduces it; a sum of absolute
    coefficients of at least 1 flags a likely irrepresentable-condition
    violation inside the group.
    """
    if not 0 < cutoff < 1:
        raise DataError("cutoff must lie in (0, 1)")
    ds.index(anchor)
    pool = [s for s in (candidates or ds.names) if s != anchor]
    R = corr_matrix(ds.select([anchor] + pool))
    corrs = {s: R[anchor, s] for s in pool}
    members = [s for s in pool if abs(corrs[s]) > cutoff]
    if not members:
        return GroupReport(anchor, [], None, 0.0, False, cutoff, {})
    Z = ds.select([anchor] + members).values
    Z = (Z - Z.mean(axis=0)) / Z.std(axis=0, ddof=1)
    fit = ols(Z[:, 0], Z[:, 1:], True, members)
    total = float(np.sum(np.abs(fit.coef[1:])))
    return GroupReport(anchor, members, fit, total, total >= 1.0, cutoff,
                       {s: corrs[s] for s in members})


def rectify(selection: SelectionResult, groups: Sequence[GroupReport]) -> SelectionResult:
    """Add every flagged group that shares a variable with the selection."""
    chosen = set(selection.selected)
    added = []
    for g in groups:
        if g.irc_violation and chosen & set(g.group):
            for s in g.group:
                if s not in chosen and s not in added:
                    added.append(s)
    final = set(chosen) | set(added)
    order = list(selection.candidates) + [s for s in added if s not in selection.candidates]
    hp = dict(selection.hyperparameters)
    hp["rectified_additions"] = added
    return SelectionResult(
        f"{selection.algorithm}-rectified",
        list(selection.candidates),
        [s for s in order if s in final],
        dict(selection.scores),
        hp,
    )
