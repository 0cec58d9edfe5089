"""Directed and partially directed graphs over named vertices.

Provides trails, d-separation, Markov blankets, Markov-equivalence classes,
timestamp orientation and the graphical instrument criteria.

Vertices may be flagged *latent*: they take part in trails but are never used
as conditioning or control variables (noise terms drawn as vertices).
"""

from __future__ import annotations

import itertools
import re
from collections import deque
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

from .errors import BoundExceeded, GraphError

Edge = tuple[str, str]


def _ukey(a: str, b: str) -> tuple[str, str]:
    return (a, b) if a <= b else (b, a)


class Dag:
    """Vertex-labelled graph with directed and (optionally) undirected edges.

    The directed part must be acyclic. A graph with undirected edges plays the
    role of a PDAG; operations whose answer depends on an unresolved orientation
    raise :class:`GraphError`.
    """

    def __init__(
        self,
        vertices: Iterable[str] = (),
        edges: Iterable[Edge] = (),
        undirected: Iterable[Edge] = (),
        stamps: Mapping[str, int] | None = None,
        latent: Iterable[str] = (),
    ):
        verts: list[str] = []
        for v in vertices:
            if v not in verts:
                verts.append(str(v))
        edges = [tuple(e) for e in edges]
        undirected = [tuple(e) for e in undirected]
        for a, b in edges + undirected:
            for v in (a, b):
                if v not in verts:
                    verts.append(v)
        self._vertices = tuple(verts)
        self._directed: set[Edge] = set()
        self._undirected: set[Edge] = set()
        for a, b in edges:
            if a == b:
                raise GraphError(f"self-loop on {a!r}")
            if (a, b) in self._directed:
                raise GraphError(f"duplicate edge {a} -> {b}")
            if (b, a) in self._directed:
                raise GraphError(f"edge {a} -> {b} and {b} -> {a} form a cycle")
            self._directed.add((a, b))
        for a, b in undirected:
            if a == b:
                raise GraphError(f"self-loop on {a!r}")
            k = _ukey(a, b)
            if k in self._undirected:
                raise GraphError(f"duplicate edge {a} -- {b}")
            if (a, b) in self._directed or (b, a) in self._directed:
                raise GraphError(f"{a} and {b} joined by both a directed and an undirected edge")
            self._undirected.add(k)
        self._parents = {v: set() for v in self._vertices}
        self._children = {v: set() for v in self._vertices}
        self._nbrs = {v: set() for v in self._vertices}
        for a, b in self._directed:
            self._parents[b].add(a)
            self._children[a].add(b)
        for a, b in self._undirected:
            self._nbrs[a].add(b)
            self._nbrs[b].add(a)
        self.stamps = dict(stamps or {})
        for v in self.stamps:
            if v not in self._nbrs:
                raise GraphError(f"stamp for unknown vertex {v!r}")
        self.latent = frozenset(latent)
        for v in self.latent:
            if v not in self._nbrs:
                raise GraphError(f"unknown latent vertex {v!r}")
        self._order = self._topological_order()

    # -- basic structure -------------------------------------------------

    @property
    def vertices(self) -> tuple[str, ...]:
        return self._vertices

    @property
    def edges(self) -> list[Edge]:
        """Directed edges in deterministic order."""
        return sorted(self._directed)

    @property
    def undirected_edges(self) -> list[Edge]:
        return sorted(self._undirected)

    @property
    def observable(self) -> tuple[str, ...]:
        return tuple(v for v in self._vertices if v not in self.latent)

    def _check(self, *vs: str) -> None:
        for v in vs:
            if v not in self._parents:
                raise GraphError(f"unknown vertex {v!r}")

    def parents(self, v: str) -> set[str]:
        self._check(v)
        return set(self._parents[v])

    def children(self, v: str) -> set[str]:
        self._check(v)
        return set(self._children[v])

    def undirected_neighbors(self, v: str) -> set[str]:
        self._check(v)
        return set(self._nbrs[v])

    def neighbors(self, v: str) -> set[str]:
        self._check(v)
        return self._parents[v] | self._children[v] | self._nbrs[v]

    def has_edge(self, a: str, b: str) -> bool:
        return (a, b) in self._directed

    def adjacent(self, a: str, b: str) -> bool:
        return (a, b) in self._directed or (b, a) in self._directed or _ukey(a, b) in self._undirected

    def is_directed(self) -> bool:
        return not self._undirected

    def descendants(self, v: str) -> set[str]:
        self._check(v)
        out, todo = set(), [v]
        while todo:
            for c in self._children[todo.pop()]:
                if c not in out:
                    out.add(c)
                    todo.append(c)
        return out

    def ancestors(self, vs) -> set[str]:
        vs = [vs] if isinstance(vs, str) else list(vs)
        self._check(*vs)
        out, todo = set(), list(vs)
        while todo:
            for p in self._parents[todo.pop()]:
                if p not in out:
                    out.add(p)
                    todo.append(p)
        return out

    def _topological_order(self) -> tuple[str, ...]:
        indeg = {v: len(self._parents[v]) for v in self._vertices}
        pos = {v: i for i, v in enumerate(self._vertices)}
        ready = sorted((v for v in self._vertices if indeg[v] == 0), key=pos.get)
        order = []
        while ready:
            v = ready.pop(0)
            order.append(v)
            for c in sorted(self._children[v], key=pos.get):
                indeg[c] -= 1
                if indeg[c] == 0:
                    ready.append(c)
            ready.sort(key=pos.get)
        if len(order) != len(self._vertices):
            cyc = [v for v in self._vertices if indeg[v] > 0]
            raise GraphError(f"directed edges contain a cycle through {cyc}")
        return tuple(order)

    def topological_order(self) -> tuple[str, ...]:
        return self._order

    def v_structures(self) -> set[tuple[str, str, str]]:
        """Colliders ``a -> c <- b`` with ``a``, ``b`` non-adjacent, as ``(min, c, max)``."""
        out = set()
        for c in self._vertices:
            for a, b in itertools.combinations(sorted(self._parents[c]), 2):
                if not self.adjacent(a, b):
                    out.add((a, c, b))
        return out

    # -- derived graphs --------------------------------------------------

    def copy(self, **kw) -> "Dag":
        args = dict(
            vertices=self._vertices,
            edges=self.edges,
            undirected=self.undirected_edges,
            stamps=self.stamps,
            latent=self.latent,
        )
        args.update(kw)
        return Dag(**args)

    def add_edge(self, a: str, b: str) -> "Dag":
        return self.copy(edges=self.edges + [(a, b)])

    def remove_edge(self, a: str, b: str) -> "Dag":
        if (a, b) not in self._directed:
            raise GraphError(f"no edge {a} -> {b}")
        return self.copy(edges=[e for e in self.edges if e != (a, b)])

    def subgraph(self, vs: Iterable[str]) -> "Dag":
        keep = [v for v in self._vertices if v in set(vs)]
        s = set(keep)
        return Dag(
            keep,
            [e for e in self.edges if e[0] in s and e[1] in s],
            [e for e in self.undirected_edges if e[0] in s and e[1] in s],
            {v: t for v, t in self.stamps.items() if v in s},
            self.latent & s,
        )

    def __eq__(self, other) -> bool:
        if not isinstance(other, Dag):
            return NotImplemented
        return (
            set(self._vertices) == set(other._vertices)
            and self._directed == other._directed
            and self._undirected == other._undirected
        )

    def __hash__(self):
        return hash((frozenset(self._vertices), frozenset(self._directed), frozenset(self._undirected)))

    def __repr__(self):
        parts = [f"{a}->{b}" for a, b in self.edges] + [f"{a}--{b}" for a, b in self.undirected_edges]
        return f"Dag({', '.join(parts) or ','.join(self._vertices)})"

    # -- serialization ---------------------------------------------------

    def to_text(self) -> str:
        lines = []
        for v in self._vertices:
            bits = [f"node {v}"]
            if v in self.stamps:
                bits.append(f"ts={self.stamps[v]}")
            if v in self.latent:
                bits.append("latent")
            lines.append(" ".join(bits))
        lines += [f"{a} -> {b}" for a, b in self.edges]
        lines += [f"{a} -- {b}" for a, b in self.undirected_edges]
        return "\n".join(lines) + "\n"

    def to_dot(self, name: str = "G") -> str:
        lines = [f"digraph {name} {{"]
        for v in self._vertices:
            style = ' [style=dashed]' if v in self.latent else ""
            lines.append(f'  "{v}"{style};')
        lines += [f'  "{a}" -> "{b}";' for a, b in self.edges]
        lines += [f'  "{a}" -> "{b}" [dir=none];' for a, b in self.undirected_edges]
        lines.append("}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "Dag":
        return parse_graph(text)


Pdag = Dag

_EDGE_RE = re.compile(r"^(\S+)\s*(->|--)\s*(\S+)(.*)$")


def parse_graph(text: str) -> Dag:
    """Parse the edge-list format (``node a ts=1``, ``a -> b``, ``a -- b``).

    Trailing ``key=value`` tokens on edge lines are ignored here; the SEM
    config reader uses them for weights.
    """
    verts, edges, und, stamps, latent = [], [], [], {}, []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        toks = line.split()
        if toks[0] == "node":
            if len(toks) < 2:
                raise GraphError(f"line {lineno}: node without a name")
            v = toks[1]
            verts.append(v)
            for t in toks[2:]:
                if t.startswith("ts="):
                    stamps[v] = int(t[3:])
                elif t == "latent":
                    latent.append(v)
            continue
        m = _EDGE_RE.match(line)
        if not m:
            raise GraphError(f"line {lineno}: cannot parse {raw!r}")
        a, op, b = m.group(1), m.group(2), m.group(3)
        (edges if op == "->" else und).append((a, b))
    return Dag(verts, edges, und, stamps, latent)


# -- trails ---------------------------------------------------------------


@dataclass(frozen=True)
class Trail:
    """Simple trail ``vertices[0] .. vertices[-1]``.

    ``steps[i]`` is ``"->"``, ``"<-"`` or ``"--"`` for the edge between
    ``vertices[i]`` and ``vertices[i + 1]``. ``blocking`` optionally lists
    minimal conditioning sets that block this trail on its own.
    """

    vertices: tuple[str, ...]
    steps: tuple[str, ...]
    blocking: tuple[frozenset, ...] = field(default=(), compare=False)

    def __str__(self):
        out = [self.vertices[0]]
        for s, v in zip(self.steps, self.vertices[1:]):
            out += [s, v]
        return " ".join(out)

    def __len__(self):
        return len(self.steps)

    def colliders(self) -> list[str]:
        return [
            self.vertices[i]
            for i in range(1, len(self.vertices) - 1)
            if self.steps[i - 1] == "->" and self.steps[i] == "<-"
        ]

    def is_open(self, g: Dag, Z: Iterable[str]) -> bool:
        """True when this single trail is active given ``Z``."""
        Z = set(Z)
        for i in range(1, len(self.vertices) - 1):
            m = self.vertices[i]
            collider = self.steps[i - 1] == "->" and self.steps[i] == "<-"
            if collider:
                if m not in Z and not (g.descendants(m) & Z):
                    return False
            elif m in Z:
                return False
        return True


def _step(g: Dag, a: str, b: str) -> str:
    if g.has_edge(a, b):
        return "->"
    if g.has_edge(b, a):
        return "<-"
    return "--"


def enumerate_trails(g: Dag, a: str, b: str, max_len: int | None = None,
                     avoid: Iterable[str] = ()) -> list[Trail]:
    """All simple trails between ``a`` and ``b`` with at most ``max_len`` edges."""
    g._check(a, b)
    if a == b:
        raise GraphError("trail endpoints must differ")
    avoid = set(avoid)
    limit = len(g.vertices) if max_len is None else max_len
    out: list[Trail] = []
    path = [a]

    def dfs(v):
        if len(path) - 1 >= limit:
            return
        for w in sorted(g.neighbors(v)):
            if w in path or w in avoid:
                continue
            path.append(w)
            if w == b:
                out.append(Trail(tuple(path), tuple(_step(g, p, q) for p, q in zip(path, path[1:]))))
            else:
                dfs(w)
            path.pop()

    dfs(a)
    out.sort(key=lambda t: t.vertices)
    return out


# -- d-separation ---------------------------------------------------------


def _reachable(g: Dag, a: str, Z: set[str]) -> set[str]:
    """Vertices joined to ``a`` by an active trail given ``Z`` (directed graphs)."""
    anc = g.ancestors(Z) | Z if Z else set()
    seen = set()
    reach = set()
    todo = deque([(a, "up")])
    while todo:
        v, d = todo.popleft()
        if (v, d) in seen:
            continue
        seen.add((v, d))
        if v not in Z:
            reach.add(v)
        if d == "up" and v not in Z:
            for p in g._parents[v]:
                todo.append((p, "up"))
            for c in g._children[v]:
                todo.append((c, "down"))
        elif d == "down":
            if v not in Z:
                for c in g._children[v]:
                    todo.append((c, "down"))
            if v in anc:
                for p in g._parents[v]:
                    todo.append((p, "up"))
    return reach


def d_separated(g: Dag, a: str, b: str, Z: Iterable[str] = ()) -> bool:
    """True iff every trail between ``a`` and ``b`` is blocked by ``Z``."""
    Z = set(Z)
    g._check(a, b, *Z)
    if a == b:
        raise GraphError("d-separation needs two distinct vertices")
    if a in Z or b in Z:
        raise GraphError("endpoints may not be in the conditioning set")
    if not g.is_directed():
        for t in enumerate_trails(g, a, b):
            if "--" in t.steps:
                raise GraphError(f"undirected edge on trail {t}; orientation required")
    return b not in _reachable(g, a, Z)


def d_separated_by_trails(g: Dag, a: str, b: str, Z: Iterable[str] = ()) -> bool:
    """Trail-by-trail d-separation: slow, used as an independent check."""
    Z = set(Z)
    return not any(t.is_open(g, Z) for t in enumerate_trails(g, a, b))


def markov_blanket(g: Dag, v: str) -> set[str]:
    """Parents, children and co-parents of ``v``."""
    g._check(v)
    if g._nbrs[v] or any(g._nbrs[c] for c in g._children[v]):
        raise GraphError(f"undirected edges around {v!r}; orientation required")
    mb = set(g._parents[v]) | set(g._children[v])
    for c in g._children[v]:
        mb |= g._parents[c]
    mb.discard(v)
    return mb


def skeleton(g: Dag) -> Dag:
    und = {_ukey(a, b) for a, b in g.edges} | set(g.undirected_edges)
    return Dag(g.vertices, (), sorted(und), g.stamps, g.latent)


def equivalence_class(g: Dag, max_vertices: int = 12) -> list[Dag]:
    """All DAGs sharing the skeleton and v-structures of ``g``.

    Backtracking over edge orientations: v-structure edges are fixed, and a
    branch is cut as soon as it closes a cycle or creates a new unshielded
    collider.
    """
    if len(g.vertices) > max_vertices:
        raise BoundExceeded(f"{len(g.vertices)} vertices exceeds bound {max_vertices}")
    if not g.is_directed():
        raise GraphError("equivalence_class needs a fully directed graph")
    vs = g.v_structures()
    fixed = set()
    for a, c, b in vs:
        fixed.add((a, c))
        fixed.add((b, c))
    free = sorted({_ukey(a, b) for a, b in g.edges if (a, b) not in fixed})
    adj = {v: set() for v in g.vertices}
    for a, b in g.edges:
        adj[a].add(b)
        adj[b].add(a)
    results: list[Dag] = []
    chosen: list[Edge] = []

    def parents_of(edges, c):
        return {a for a, b in edges if b == c}

    def ok(edges) -> bool:
        # new unshielded collider at the head of the most recent edge
        a, c = edges[-1]
        for p in parents_of(edges, c):
            if p != a and p not in adj[a]:
                if (min(a, p), c, max(a, p)) not in vs:
                    return False
        # cycle through the newly added edge: is a reachable from c?
        ch = {}
        for x, y in edges:
            ch.setdefault(x, []).append(y)
        todo, seen = [c], set()
        while todo:
            v = todo.pop()
            if v == a:
                return False
            if v in seen:
                continue
            seen.add(v)
            todo.extend(ch.get(v, ()))
        return True

    base = sorted(fixed)
    # fixed edges come from g itself, so they are consistent

    def rec(i):
        if i == len(free):
            cand = Dag(g.vertices, base + chosen)
            if cand.v_structures() == vs:
                results.append(cand)
            return
        a, b = free[i]
        for e in ((a, b), (b, a)):
            chosen.append(e)
            if ok(base + chosen):
                rec(i + 1)
            chosen.pop()

    rec(0)
    results.sort(key=lambda d: d.edges)
    return results


def orient_with_timestamps(sk: Dag, stamps: Mapping[str, int]) -> Dag:
    """Direct each undirected edge from the earlier to the later stamp."""
    missing = [v for v in sk.vertices if v not in stamps]
    if missing:
        raise GraphError(f"vertices without timestamp: {missing}")
    for a, b in sk.edges:
        if stamps[a] > stamps[b]:
            raise GraphError(f"edge {a} -> {b} runs from stamp {stamps[a]} back to {stamps[b]}")
    edges = list(sk.edges)
    und = []
    for a, b in sk.undirected_edges:
        if stamps[a] < stamps[b]:
            edges.append((a, b))
        elif stamps[b] < stamps[a]:
            edges.append((b, a))
        else:
            und.append((a, b))
    return Dag(sk.vertices, edges, und, dict(stamps), sk.latent)


def cut_effect(g: Dag, x: str, y: str | None = None, mode: str = "edge") -> Dag:
    """Remove ``x -> y`` (``mode="edge"``) or every arrow into ``x`` (``"incoming"``)."""
    g._check(x)
    if mode == "edge":
        if y is None or not g.has_edge(x, y):
            raise GraphError(f"no edge {x} -> {y}")
        return g.remove_edge(x, y)
    if mode == "incoming":
        return g.copy(edges=[e for e in g.edges if e[1] != x])
    raise GraphError(f"unknown cut mode {mode!r}")


# -- instruments ------------------------------------------------------------


@dataclass
class IvCandidateReport:
    candidate: str
    g1_holds: bool
    g2_holds: bool
    verdict: str
    required_controls: tuple[str, ...] = ()
    g1_witness: Trail | None = None
    g1_witness_given: tuple[str, ...] = ()
    g2_separator: tuple[str, ...] | None = None

    def to_dict(self) -> dict:
        return {
            "candidate": self.candidate,
            "g1_holds": self.g1_holds,
            "g2_holds": self.g2_holds,
            "verdict": self.verdict,
            "required_controls": list(self.required_controls),
            "g1_witness": None if self.g1_witness is None else str(self.g1_witness),
            "g1_witness_given": list(self.g1_witness_given),
            "g2_separator": None if self.g2_separator is None else list(self.g2_separator),
        }


def _supersets(base: Sequence[str], pool: Sequence[str]):
    pool = [v for v in pool if v not in base]
    for k in range(len(pool) + 1):
        for extra in itertools.combinations(pool, k):
            yield tuple(base) + extra


def _g1_failure(cut: Dag, z: str, y: str, controls: Sequence[str], pool: Sequence[str]):
    """First conditioning set (superset of controls) leaving ``z`` and ``y`` connected."""
    for Z in _supersets(controls, pool):
        if not d_separated(cut, z, y, Z):
            return Z
    return None


def _open_trail(g: Dag, a: str, b: str, Z) -> Trail | None:
    for t in enumerate_trails(g, a, b):
        if t.is_open(g, Z):
            return t
    return None


def iv_candidates(
    g: Dag,
    x: str,
    y: str,
    controls: Iterable[str] = (),
    subset_cap: int = 14,
    max_extra_controls: int = 3,
) -> list[IvCandidateReport]:
    """Check every observable vertex as an instrument for the edge ``x -> y``.

    G1: in the graph with ``x -> y`` removed, the candidate and ``y`` are
    d-separated by *every* conditioning set that contains the controls and
    otherwise draws on observable non-descendants of ``x``. G2: no such set d-separates the candidate from ``x``.

    When G1 fails under the given controls, the smallest extra set of
    observable non-descendants of ``x`` (up to ``max_extra_controls``
    vertices) that restores it is reported and the verdict is
    ``"conditional"``.
    """
    if not g.has_edge(x, y):
        raise GraphError(f"no edge {x} -> {y}")
    if len(g.vertices) > subset_cap:
        raise BoundExceeded(f"{len(g.vertices)} vertices exceeds subset cap {subset_cap}")
    controls = tuple(sorted(set(controls)))
    g._check(*controls)
    if not g.is_directed():
        raise GraphError("iv_candidates needs a fully oriented graph")
    cut = cut_effect(g, x, y, "edge")
    obs = [v for v in g.vertices if v not in g.latent]
    desc_x = g.descendants(x)
    reports = []
    for z in sorted(obs):
        if z in (x, y) or z in controls:
            continue
        # conditioning on x or its descendants is never allowed for G1
        pool_y = [v for v in obs if v not in (z, x, y) and v not in desc_x]
        bad = _g1_failure(cut, z, y, (), pool_y)
        witness, given = None, ()
        if bad is not None:
            witness, given = _open_trail(cut, z, y, bad), bad
        g1_plain = bad is None
        required: tuple[str, ...] | None = () if g1_plain else None
        if not g1_plain:
            if controls and _g1_failure(cut, z, y, controls, pool_y) is None:
                required = controls
            else:
                pool_c = [v for v in obs if v not in (z, x, y) and v not in desc_x and v not in controls]
                for k in range(1, max_extra_controls + 1):
                    for extra in itertools.combinations(pool_c, k):
                        C = tuple(sorted(controls + extra))
                        if _g1_failure(cut, z, y, C, pool_y) is None:
                            required = C
                            break
                    if required is not None:
                        break
        g1_given = g1_plain or (bool(controls) and required == controls)
        base = required if required is not None else controls
        sep = None
        pool_x = [v for v in obs if v not in (z, x)]
        for Z in _supersets(base, pool_x):
            if d_separated(g, z, x, Z):
                sep = Z
                break
        g2 = sep is None
        if g1_plain and g2:
            verdict = "valid"
        elif required is not None and g2:
            verdict = "conditional"
        else:
            verdict = "invalid"
        reports.append(
            IvCandidateReport(
                candidate=z,
                g1_holds=g1_given,
                g2_holds=g2,
                verdict=verdict,
                required_controls=tuple(required or ()),
                g1_witness=witness,
                g1_witness_given=tuple(given),
                g2_separator=sep,
            )
        )
    return reports


def _minimal_blockers(g: Dag, t: Trail, allowed) -> tuple[frozenset, ...]:
    if t.colliders():
        return (frozenset(),)
    return tuple(frozenset([v]) for v in t.vertices[1:-1] if v in allowed)


def backdoor_paths(g: Dag, z: str, y: str, via: str) -> list[Trail]:
    """Trails from ``z`` to ``y`` avoiding ``via``, each with its minimal blocking sets.

    A trail holding a collider is blocked by the empty set; otherwise each
    observable interior vertex blocks it alone.
    """
    g._check(z, y, via)
    allowed = set(g.observable)
    out = []
    for t in enumerate_trails(g, z, y, avoid=[via]):
        out.append(Trail(t.vertices, t.steps, _minimal_blockers(g, t, allowed)))
    return out
