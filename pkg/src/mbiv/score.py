"""Gaussian DAG scores (AIC, BIC, BGe) and the backdoor-effect model comparison.

All three scores follow a lower-is-better convention. AIC and BIC are
``-2 loglik + penalty`` at the maximum-likelihood fit. BGe is the negative log
marginal likelihood under a normal-Wishart prior, computed on standardized
columns with prior mean 0 (the sample mean of standardized data), mean
precision weight 1, Wishart degrees of freedom ``p + 2`` and identity scale.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
from scipy.special import multigammaln
from scipy.stats import multivariate_normal

from .datamodel import Dataset, skewness
from .errors import DataError, NumericError
from .graph import Dag, GraphError
from .regress import ols
from .sem import LinearSem, population_covariance

CRITERIA = ("aic", "bic", "bge")
SKEW_WARN = 2.0


def _check(g: Dag, ds: Dataset):
    if not g.is_directed():
        raise GraphError("scoring needs a fully directed graph")
    missing = [v for v in g.vertices if v not in ds.names]
    if missing:
        raise DataError(f"graph vertices missing from data: {missing}")


def _family_fit(ds: Dataset, v: str, parents: Sequence[str]):
    y = ds.column(v)
    n = ds.n
    if parents:
        try:
            fit = ols(y, ds.matrix(parents), True, list(parents))
        except NumericError as e:
            raise NumericError(f"parents of {v!r} {sorted(parents)}: {e}") from None
        return fit.coef[0], dict(zip(parents, fit.coef[1:])), fit.rss / n
    mu = float(y.mean())
    return mu, {}, float(np.mean((y - mu) ** 2))


def fit_mle(g: Dag, ds: Dataset) -> LinearSem:
    """Per-vertex OLS on the parents; noise scale is the residual sd with denominator n."""
    _check(g, ds)
    weights, ic, sc = {}, {}, {}
    for v in g.vertices:
        pa = sorted(g.parents(v))
        b0, b, s2 = _family_fit(ds, v, pa)
        ic[v] = float(b0)
        sc[v] = math.sqrt(s2) if s2 > 0 else 1e-300
        for u in pa:
            weights[(u, v)] = float(b[u])
    dag = Dag(g.vertices, g.edges, (), g.stamps)
    return LinearSem(dag=dag, weights=weights, intercepts=ic, scales=sc, name="mle")


@dataclass
class GraphScore:
    aic: float
    bic: float
    bge: float
    per_vertex: dict[str, dict[str, float]]
    n: int
    criterion: str = "bic"
    warnings: list[str] = field(default_factory=list)

    @property
    def value(self) -> float:
        return getattr(self, self.criterion)

    def __getitem__(self, criterion: str) -> float:
        if criterion not in CRITERIA:
            raise KeyError(criterion)
        return getattr(self, criterion)

    def to_dict(self) -> dict:
        return {
            "aic": self.aic,
            "bic": self.bic,
            "bge": self.bge,
            "per_vertex": self.per_vertex,
            "n": self.n,
            "convention": "lower is better; bge = -log marginal likelihood",
            "warnings": list(self.warnings),
        }


def _bge_logml(R: np.ndarray, idx: list[int], n: int, p: int, alpha_mu: float, alpha_w: float) -> float:
    """Log marginal likelihood of the columns ``idx`` (Kuipers et al. form, identity prior scale)."""
    l = len(idx)
    if l == 0:
        return 0.0
    a = alpha_w - p + l
    Rs = R[np.ix_(idx, idx)]
    sign, logdet_R = np.linalg.slogdet(Rs)
    if sign <= 0:
        raise NumericError("BGe posterior scale is not positive definite")
    # log det of the identity prior scale is 0
    return (
        0.5 * l * math.log(alpha_mu / (n + alpha_mu))
        - 0.5 * n * l * math.log(math.pi)
        + multigammaln(0.5 * (n + a), l)
        - multigammaln(0.5 * a, l)
        - 0.5 * (n + a) * logdet_R
    )


def _bge_matrix(ds: Dataset, names: Sequence[str], alpha_mu: float):
    X = ds.matrix(names)
    sd = X.std(axis=0, ddof=1)
    if np.any(sd == 0):
        raise NumericError("BGe needs non-constant columns")
    Z = (X - X.mean(axis=0)) / sd
    n = Z.shape[0]
    zbar = Z.mean(axis=0)
    S = (Z - zbar).T @ (Z - zbar)
    prior_mean = zbar  # sample mean of standardized data (zero up to rounding)
    d = prior_mean - zbar
    return np.eye(len(names)) + S + (n * alpha_mu / (n + alpha_mu)) * np.outer(d, d)


def score_graph(g: Dag, ds: Dataset, criterion: str = "bic", alpha_mu: float = 1.0,
                alpha_w: float | None = None) -> GraphScore:
    """AIC, BIC and BGe of ``g`` on ``ds``, with per-vertex terms.

    The parameter count per vertex is ``|parents| + 2`` (weights, intercept,
    noise variance).
    """
    if criterion not in CRITERIA:
        raise DataError(f"unknown criterion {criterion!r}")
    _check(g, ds)
    n = ds.n
    names = list(g.vertices)
    p = len(names)
    aw = p + 2 if alpha_w is None else alpha_w
    R = _bge_matrix(ds, names, alpha_mu)
    pos = {v: i for i, v in enumerate(names)}
    per = {}
    k_total = 0
    for v in names:
        pa = sorted(g.parents(v))
        _, _, s2 = _family_fit(ds, v, pa)
        if not s2 > 0:
            raise NumericError(f"{v!r} is an exact linear function of its parents")
        ll = -0.5 * n * (math.log(2 * math.pi * s2) + 1.0)
        k = len(pa) + 2
        k_total += k
        fam = [pos[u] for u in pa]
        bge = _bge_logml(R, fam + [pos[v]], n, p, alpha_mu, aw) - _bge_logml(R, fam, n, p, alpha_mu, aw)
        per[v] = {
            "loglik": ll,
            "k": k,
            "aic": -2 * ll + 2 * k,
            "bic": -2 * ll + k * math.log(n),
            "bge": -bge,
        }
    warnings = []
    if n <= k_total:
        warnings.append(f"n={n} does not exceed the parameter count {k_total}; BIC unreliable")
    for v in names:
        col = ds.column(v)
        if n >= 3 and col.std() > 0 and abs(skewness(col)) > SKEW_WARN:
            warnings.append(f"|skewness| of {v!r} exceeds {SKEW_WARN}; a log transform is recommended")
    tot = {c: float(sum(per[v][c] for v in names)) for c in CRITERIA}
    return GraphScore(tot["aic"], tot["bic"], tot["bge"], per, n, criterion, warnings)


def joint_loglik(sem: LinearSem, ds: Dataset) -> float:
    """Gaussian log-likelihood of ``ds`` under the covariance and mean implied by ``sem``."""
    names = list(sem.vertices)
    X = ds.matrix(names)
    S = population_covariance(sem)
    mu = sem.mean()
    return float(np.sum(multivariate_normal(mean=mu, cov=S, allow_singular=False).logpdf(X)))


def score_graph_joint(g: Dag, ds: Dataset) -> dict[str, float]:
    """AIC and BIC through the joint multivariate likelihood of the fitted SEM."""
    sem = fit_mle(g, ds)
    ll = joint_loglik(sem, ds)
    k = sum(len(g.parents(v)) + 2 for v in g.vertices)
    return {"loglik": ll, "aic": -2 * ll + 2 * k, "bic": -2 * ll + k * math.log(ds.n)}


@dataclass
class BackdoorDecision:
    parent: str
    mediator: str
    child: str
    controls: list[str]
    score_with_be: GraphScore
    score_without_be: GraphScore
    winner: dict[str, str]

    @property
    def unanimous(self) -> bool:
        return len(set(self.winner.values())) == 1 and "tie" not in self.winner.values()

    @property
    def warnings(self) -> list[str]:
        w = list(dict.fromkeys(self.score_with_be.warnings + self.score_without_be.warnings))
        if not self.unanimous:
            w.append("criteria disagree: " + ", ".join(f"{c}={self.winner[c]}" for c in CRITERIA))
        return w

    def to_dict(self) -> dict:
        return {
            "parent": self.parent,
            "mediator": self.mediator,
            "child": self.child,
            "controls": list(self.controls),
            "scores": {
                c: {"be": self.score_with_be[c], "no_be": self.score_without_be[c], "winner": self.winner[c]}
                for c in CRITERIA
            },
            "unanimous": self.unanimous,
            "warnings": self.warnings,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    def table(self) -> str:
        rows = [f"{self.parent} -> {self.mediator} -> {self.child}" + (f" | {', '.join(self.controls)}" if self.controls else "")]
        rows.append(f"{'':<6}{'BE':>16}{'no BE':>16}  winner")
        for c in CRITERIA:
            rows.append(f"{c.upper():<6}{self.score_with_be[c]:>16.6g}{self.score_without_be[c]:>16.6g}  {self.winner[c]}")
        return "\n".join(rows)


def compare_backdoor(ds: Dataset, parent: str, mediator: str, child: str,
                     controls: Iterable[str] = ()) -> BackdoorDecision:
    """Score ``parent -> mediator -> child`` with and without ``parent -> child``.

    ``controls`` enter both models as extra parents of ``child``.
    """
    controls = [c for c in controls if c not in (parent, mediator, child)]
    verts = [parent, mediator, child] + controls
    for v in verts:
        ds.index(v)
    base = [(parent, mediator), (mediator, child)] + [(c, child) for c in controls]
    without = Dag(verts, base)
    with_be = Dag(verts, base + [(parent, child)])
    sub = ds.select(verts)
    s0 = score_graph(without, sub)
    s1 = score_graph(with_be, sub)
    winner = {}
    for c in CRITERIA:
        a, b = s1[c], s0[c]
        winner[c] = "be" if a < b else "no_be" if b < a else "tie"
    return BackdoorDecision(parent, mediator, child, controls, s1, s0, winner)
