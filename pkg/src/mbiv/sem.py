"""Linear-Gaussian structural equation models.

Every vertex is generated as ``intercept + sum(weight * parent) + scale * noise``
with jointly Gaussian noise. Noise terms are independent unless a noise
correlation is declared for a pair of vertices; that is how endogeneity
(correlated structural errors) enters a scenario.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from .datamodel import Dataset
from .errors import DataError, NumericError, UsageError
from .graph import Dag, GraphError


@dataclass(frozen=True)
class LinearSem:
    """Linear SEM over a DAG.

    ``hidden`` vertices take part in generation but are left out of sampled
    datasets and are latent in :meth:`graph`. ``noise_names`` optionally names
    the noise term of a vertex (``{"y": "u"}``); with ``observable_noise`` those
    noise terms are emitted as extra columns.
    """

    dag: Dag
    weights: Mapping[tuple[str, str], float]
    intercepts: Mapping[str, float] = field(default_factory=dict)
    scales: Mapping[str, float] = field(default_factory=dict)
    noise_corr: Mapping[tuple[str, str], float] = field(default_factory=dict)
    hidden: frozenset = frozenset()
    noise_names: Mapping[str, str] = field(default_factory=dict)
    observable_noise: bool = False
    name: str = "sem"

    def __post_init__(self):
        if not self.dag.is_directed():
            raise GraphError("a LinearSem needs a fully directed graph")
        w = {}
        for e in self.dag.edges:
            v = float(self.weights.get(e, 0.0))
            if not math.isfinite(v):
                raise DataError(f"non-finite weight on {e}")
            w[e] = v
        extra = set(self.weights) - set(w)
        if extra:
            raise GraphError(f"weights for edges not in the graph: {sorted(extra)}")
        sc = {v: float(self.scales.get(v, 1.0)) for v in self.dag.vertices}
        for v, s in sc.items():
            if not s > 0:
                raise DataError(f"noise scale of {v!r} must be positive")
        ic = {v: float(self.intercepts.get(v, 0.0)) for v in self.dag.vertices}
        nc = {}
        for (a, b), r in self.noise_corr.items():
            self.dag._check(a, b)
            if a == b or not -1 < r < 1:
                raise DataError(f"bad noise correlation {r} for ({a}, {b})")
            nc[tuple(sorted((a, b)))] = float(r)
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "scales", sc)
        object.__setattr__(self, "intercepts", ic)
        object.__setattr__(self, "noise_corr", nc)
        object.__setattr__(self, "hidden", frozenset(self.hidden))
        R = self.noise_corr_matrix()
        try:
            np.linalg.cholesky(R)
        except np.linalg.LinAlgError:
            raise DataError("noise correlation matrix is not positive definite") from None

    @property
    def vertices(self) -> tuple[str, ...]:
        return self.dag.vertices

    @property
    def observed(self) -> tuple[str, ...]:
        return tuple(v for v in self.vertices if v not in self.hidden)

    def index(self, v: str) -> int:
        return self.vertices.index(v)

    def weight_matrix(self) -> np.ndarray:
        """``W[i, j]`` is the weight of ``i -> j``."""
        p = len(self.vertices)
        W = np.zeros((p, p))
        for (a, b), w in self.weights.items():
            W[self.index(a), self.index(b)] = w
        return W

    def noise_corr_matrix(self) -> np.ndarray:
        R = np.eye(len(self.vertices))
        for (a, b), r in self.noise_corr.items():
            i, j = self.index(a), self.index(b)
            R[i, j] = R[j, i] = r
        return R

    def noise_cov(self) -> np.ndarray:
        s = np.array([self.scales[v] for v in self.vertices])
        return self.noise_corr_matrix() * np.outer(s, s)

    def mean(self) -> np.ndarray:
        c = np.array([self.intercepts[v] for v in self.vertices])
        return np.linalg.solve((np.eye(len(c)) - self.weight_matrix()).T, c)

    def graph(self) -> Dag:
        """The causal graph, hidden vertices latent, correlated noise as a latent parent pair."""
        edges = list(self.dag.edges)
        verts = list(self.vertices)
        latent = set(self.hidden) | set(self.dag.latent)
        for a, b in sorted(self.noise_corr):
            c = f"{a}~{b}"
            verts.append(c)
            latent.add(c)
            edges += [(c, a), (c, b)]
        return Dag(verts, edges, (), self.dag.stamps, latent)

    def with_params(self, **kw) -> "LinearSem":
        args = dict(
            dag=self.dag,
            weights=self.weights,
            intercepts=self.intercepts,
            scales=self.scales,
            noise_corr=self.noise_corr,
            hidden=self.hidden,
            noise_names=self.noise_names,
            observable_noise=self.observable_noise,
            name=self.name,
        )
        args.update(kw)
        return LinearSem(**args)


def population_covariance(sem: LinearSem, observed: bool = False) -> np.ndarray:
    """Closed-form covariance ``(I - W)^-T D (I - W)^-1`` in vertex order."""
    W = sem.weight_matrix()
    A = np.linalg.inv(np.eye(W.shape[0]) - W)
    S = A.T @ sem.noise_cov() @ A
    S = (S + S.T) / 2
    if observed:
        idx = [sem.index(v) for v in sem.observed]
        S = S[np.ix_(idx, idx)]
    return S


def sample(sem: LinearSem, n: int, seed: int = 0) -> Dataset:
    """Draw ``n`` rows. Each vertex uses its own child stream of ``seed``."""
    if n < 1:
        raise DataError("n must be at least 1")
    p = len(sem.vertices)
    streams = np.random.SeedSequence(seed).spawn(p)
    xi = np.column_stack([np.random.default_rng(s).standard_normal(n) for s in streams])
    L = np.linalg.cholesky(sem.noise_corr_matrix())
    scales = np.array([sem.scales[v] for v in sem.vertices])
    noise = (xi @ L.T) * scales
    X = np.zeros((n, p))
    for v in sem.dag.topological_order():
        j = sem.index(v)
        col = sem.intercepts[v] + noise[:, j]
        for u in sorted(sem.dag.parents(v)):
            col = col + sem.weights[(u, v)] * X[:, sem.index(u)]
        X[:, j] = col
    names = list(sem.observed)
    cols = [X[:, sem.index(v)] for v in names]
    if sem.observable_noise:
        for v, nm in sem.noise_names.items():
            names.append(nm)
            cols.append(noise[:, sem.index(v)])
    return Dataset(tuple(names), np.column_stack(cols))


def ovb_oracle(sem: LinearSem, y: str, x: Sequence[str], omitted: Iterable[str] = ()) -> np.ndarray:
    """Population OLS coefficients ``[intercept, slopes...]`` of ``y`` on ``x``.

    Variables in ``omitted`` are dropped from ``x``. This is the probability
    limit of sample OLS, biased whenever a regressor correlates with the
    omitted part of ``y``.
    """
    omitted = set(omitted)
    regs = [v for v in x if v not in omitted]
    S = population_covariance(sem)
    mu = sem.mean()
    ix = [sem.index(v) for v in regs]
    iy = sem.index(y)
    Sxx = S[np.ix_(ix, ix)]
    if ix and np.linalg.cond(Sxx) > 1e12:
        raise NumericError(f"singular population design on {regs}")
    b = np.linalg.solve(Sxx, S[ix, iy]) if ix else np.zeros(0)
    b0 = mu[iy] - (mu[ix] @ b if ix else 0.0)
    return np.concatenate([[b0], b])


# -- canned scenarios ------------------------------------------------------


def _sem(name, vertices, edges, stamps, **kw) -> LinearSem:
    dag = Dag(vertices, list(edges), (), stamps, kw.pop("latent", ()))
    return LinearSem(dag=dag, weights=dict(edges), name=name, **kw)


def iv_basic(alpha0=0.0, alpha1=1.0, beta0=0.0, beta1=0.5, r=0.6,
             scale_z=1.0, scale_v=1.0, scale_u=1.0, observable_noise=False) -> LinearSem:
    """``x = alpha0 + alpha1 z + v``, ``y = beta0 + beta1 x + u``, ``corr(u, v) = r``."""
    return _sem(
        "iv_basic",
        ["z", "x", "y"],
        {("z", "x"): alpha1, ("x", "y"): beta1},
        {"z": 0, "x": 1, "y": 2},
        intercepts={"x": alpha0, "y": beta0},
        scales={"z": scale_z, "x": scale_v, "y": scale_u},
        noise_corr={("x", "y"): r} if r else {},
        noise_names={"x": "v", "y": "u"},
        observable_noise=observable_noise,
    )


def iv_invalid(alpha0=0.0, alpha1=1.0, beta0=0.0, beta1=0.5, gamma=0.5, r=0.0,
               scale_z=1.0, scale_v=1.0, scale_u=1.0, scale_y=0.5,
               observable_noise=False) -> LinearSem:
    """iv_basic with the structural error ``u`` as a vertex caused by ``z``.

    ``u = gamma z + e_u`` and ``y = beta0 + beta1 x + u + e_y``. ``u`` is hidden
    unless ``observable_noise``; it is always latent in the graph.
    """
    sem = _sem(
        "iv_invalid",
        ["z", "u", "x", "y"],
        {("z", "x"): alpha1, ("z", "u"): gamma, ("u", "y"): 1.0, ("x", "y"): beta1},
        {"z": 0, "u": 1, "x": 1, "y": 2},
        latent=["u"],
        intercepts={"x": alpha0, "y": beta0},
        scales={"z": scale_z, "x": scale_v, "u": scale_u, "y": scale_y},
        noise_corr={("u", "x"): r} if r else {},
        noise_names={"x": "v"},
        hidden=frozenset() if observable_noise else frozenset({"u"}),
        observable_noise=False,
    )
    return sem


def reversal(beta0=0.0, beta1=0.8, scale_y=1.0, scale_e=1.0) -> LinearSem:
    """``x1 = beta0 + beta1 y + e``: ``y`` is the parent."""
    return _sem(
        "reversal",
        ["y", "x1"],
        {("y", "x1"): beta1},
        {"y": 0, "x1": 1},
        intercepts={"x1": beta0},
        scales={"y": scale_y, "x1": scale_e},
        noise_names={"x1": "e"},
    )


def collider_control(alpha1=1.0, beta1=0.5, observable_noise=False) -> LinearSem:
    """``z -> x -> y`` with independent noises ``v`` (of x) and ``u`` (of y).

    Regressing ``y`` on both ``z`` and ``x`` leaves ``z`` with a zero
    population coefficient although ``z`` causes ``y`` through ``x``.
    """
    sem = iv_basic(alpha1=alpha1, beta1=beta1, r=0.0, observable_noise=observable_noise)
    return sem.with_params(name="collider_control")


def irc(w1=0.75, w2=0.75, beta1=0.6, beta2=0.6, rho=-0.2) -> LinearSem:
    """Siblings ``x3`` and ``y`` of the parent pair ``(x1, x2)``.

    ``x3 = w1 x1 + w2 x2 + s3 u`` and ``y = beta1 x1 + beta2 x2 + sy e`` with the
    noise scales chosen so every variable has variance exactly 1.
    ``rho = corr(x1, x2)``; the default -0.2 is what makes ``w = (0.75, 0.75)``
    feasible (with independent parents ``w1**2 + w2**2`` would exceed 1).
    """
    v3 = w1 * w1 + w2 * w2 + 2 * rho * w1 * w2
    vy = beta1 * beta1 + beta2 * beta2 + 2 * rho * beta1 * beta2
    if not v3 < 1:
        raise DataError(f"irc weights ({w1}, {w2}) leave no room for unit variance (explained {v3:.4g})")
    if not vy < 1:
        raise DataError(f"irc coefficients ({beta1}, {beta2}) leave no room for unit variance")
    return _sem(
        "irc",
        ["x1", "x2", "x3", "y"],
        {("x1", "x3"): w1, ("x2", "x3"): w2, ("x1", "y"): beta1, ("x2", "y"): beta2},
        {"x1": 0, "x2": 0, "x3": 1, "y": 1},
        scales={"x3": math.sqrt(1 - v3), "y": math.sqrt(1 - vy)},
        noise_corr={("x1", "x2"): rho} if rho else {},
        noise_names={"x3": "u", "y": "e"},
    )


def mb_reduced(alpha=(0.0, 1.0, 1.0), beta=(0.0, 0.5, 1.0), scale_u=1.0, scale_v=1.0,
               distractors=True) -> LinearSem:
    """``y = a0 + a1 x1 + a2 x2 + u`` and ``x4 = b0 + b1 y + b2 x3 + v``.

    With ``distractors`` three non-blanket variables are added: ``x5 -> x1``
    (grandparent of y), ``x4 -> x6`` (grandchild) and an isolated ``x7``.
    """
    a0, a1, a2 = alpha
    b0, b1, b2 = beta
    verts = ["x1", "x2", "x3", "y", "x4"]
    edges = {("x1", "y"): a1, ("x2", "y"): a2, ("y", "x4"): b1, ("x3", "x4"): b2}
    stamps = {"x1": 1, "x2": 1, "x3": 1, "y": 2, "x4": 3}
    if distractors:
        verts = ["x5"] + verts + ["x6", "x7"]
        edges.update({("x5", "x1"): 0.8, ("x4", "x6"): 0.5})
        stamps.update({"x5": 0, "x6": 4, "x7": 0})
    return _sem(
        "mb_reduced", verts, edges, stamps,
        intercepts={"y": a0, "x4": b0},
        scales={"y": scale_u, "x4": scale_v},
        noise_names={"y": "u", "x4": "v"},
    )


def mb_gamma(alpha=(0.0, 1.0, 1.0), beta=(0.0, 0.5, 1.0), scale_u=1.0, scale_v=1.0) -> np.ndarray:
    """Closed-form coefficients ``(g0, g1, g2, g3, g4)`` of y on its blanket.

    Substituting ``u = E[u | b1 u + v]`` into the ``y`` equation gives
    ``g4 = b1 su^2 / (b1^2 su^2 + sv^2)``, ``g_i = a_i (1 - g4 b1)`` for the
    parents, ``g3 = -g4 b2`` and ``g0 = a0 (1 - g4 b1) - g4 b0``.
    """
    a0, a1, a2 = alpha
    b0, b1, b2 = beta
    su2, sv2 = scale_u**2, scale_v**2
    g4 = b1 * su2 / (b1 * b1 * su2 + sv2)
    k = 1 - g4 * b1
    return np.array([a0 * k - g4 * b0, a1 * k, a2 * k, -g4 * b2, g4])


def rent_price_sem(price_coefs=(0.0, 0.8, 0.5), rent_coefs=(0.0, 0.5, 0.4), r=0.5,
                   area_baths=0.8, area_gaol=0.6) -> LinearSem:
    """Triangularised price/rent system in logs.

    ``price = c0 + c1 baths + c2 gaol + e_p`` and
    ``rent = d0 + d1 price + d2 gaol + e_r`` with ``corr(e_p, e_r) = r``;
    ``area`` confounds ``baths`` and the location variable ``gaol``, so
    ``baths`` instruments ``price`` only once ``gaol`` (or ``area``) is held fixed.
    """
    c0, c1, c2 = price_coefs
    d0, d1, d2 = rent_coefs
    return _sem(
        "rent_price_sem",
        ["area", "baths", "gaol", "price", "rent"],
        {
            ("area", "baths"): area_baths,
            ("area", "gaol"): area_gaol,
            ("baths", "price"): c1,
            ("gaol", "price"): c2,
            ("price", "rent"): d1,
            ("gaol", "rent"): d2,
        },
        {"area": 0, "baths": 1, "gaol": 1, "price": 2, "rent": 3},
        intercepts={"price": c0, "rent": d0},
        noise_corr={("price", "rent"): r} if r else {},
        noise_names={"price": "e_p", "rent": "e_r"},
    )


SCENARIOS = {
    "iv_basic": iv_basic,
    "iv_invalid": iv_invalid,
    "reversal": reversal,
    "collider_control": collider_control,
    "irc": irc,
    "mb_reduced": mb_reduced,
    "rent_price_sem": rent_price_sem,
}


def scenario(name: str, **params) -> LinearSem:
    try:
        fn = SCENARIOS[name]
    except KeyError:
        raise UsageError(f"unknown scenario {name!r}; choose from {sorted(SCENARIOS)}") from None
    return fn(**params)


# -- config text -------------------------------------------------------------

_KV = re.compile(r"(\w+)=(\S+)")


def parse_sem(text: str) -> LinearSem:
    """Read a SEM from the key-value text format.

    ::

        node z intercept=0 scale=1 ts=0
        node u hidden
        z -> x w=0.8
        x ~ y r=0.6
    """
    verts, edges, stamps, ic, sc, nc, hidden = [], {}, {}, {}, {}, {}, set()
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        toks = line.split()
        kv = dict(_KV.findall(line))
        try:
            if toks[0] == "node":
                v = toks[1]
                verts.append(v)
                if "intercept" in kv:
                    ic[v] = float(kv["intercept"])
                if "scale" in kv:
                    sc[v] = float(kv["scale"])
                if "ts" in kv:
                    stamps[v] = int(kv["ts"])
                if "hidden" in toks[2:]:
                    hidden.add(v)
            elif len(toks) >= 3 and toks[1] == "->":
                edges[(toks[0], toks[2])] = float(kv.get("w", 1.0))
            elif len(toks) >= 3 and toks[1] == "~":
                nc[(toks[0], toks[2])] = float(kv["r"])
            else:
                raise ValueError
        except (ValueError, KeyError, IndexError):
            raise DataError(f"SEM config line {lineno}: cannot parse {raw!r}") from None
    dag = Dag(verts, list(edges), (), stamps, hidden)
    return LinearSem(dag=dag, weights=edges, intercepts=ic, scales=sc, noise_corr=nc,
                     hidden=frozenset(hidden))


def format_sem(sem: LinearSem) -> str:
    lines = []
    for v in sem.vertices:
        bits = [f"node {v}", f"intercept={sem.intercepts[v]!r}", f"scale={sem.scales[v]!r}"]
        if v in sem.dag.stamps:
            bits.append(f"ts={sem.dag.stamps[v]}")
        if v in sem.hidden:
            bits.append("hidden")
        lines.append(" ".join(bits))
    lines += [f"{a} -> {b} w={w!r}" for (a, b), w in sorted(sem.weights.items())]
    lines += [f"{a} ~ {b} r={r!r}" for (a, b), r in sorted(sem.noise_corr.items())]
    return "\n".join(lines) + "\n"
