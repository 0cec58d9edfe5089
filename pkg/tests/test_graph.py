import itertools

import numpy as np
import pytest

from mbiv.datamodel import partial_corr
from mbiv.errors import BoundExceeded, GraphError
from mbiv.graph import (
    Dag,
    backdoor_paths,
    cut_effect,
    d_separated,
    d_separated_by_trails,
    enumerate_trails,
    equivalence_class,
    iv_candidates,
    markov_blanket,
    orient_with_timestamps,
    parse_graph,
    skeleton,
)
from mbiv.sem import LinearSem, iv_basic, iv_invalid, population_covariance, rent_price_sem, sample

FIG1 = Dag(["z", "v", "u", "x", "y"], [("z", "x"), ("v", "x"), ("x", "y"), ("u", "y")])


def random_dag(rng, p, prob=0.3):
    names = [f"v{i}" for i in range(p)]
    perm = rng.permutation(p)
    edges = [
        (names[perm[i]], names[perm[j]])
        for i in range(p)
        for j in range(i + 1, p)
        if rng.random() < prob
    ]
    return Dag(names, edges)


def random_sem(g, rng):
    # weights kept away from zero to avoid near-unfaithful cancellation
    w = {e: rng.choice([-1, 1]) * rng.uniform(0.5, 1.5) for e in g.edges}
    return LinearSem(dag=g, weights=w)


# -- structure -----------------------------------------------------------------


def test_dag_invariants():
    with pytest.raises(GraphError, match="cycle"):
        Dag(["a", "b", "c"], [("a", "b"), ("b", "c"), ("c", "a")])
    with pytest.raises(GraphError, match="self-loop"):
        Dag(["a"], [("a", "a")])
    with pytest.raises(GraphError, match="duplicate"):
        Dag(["a", "b"], [("a", "b"), ("a", "b")])
    with pytest.raises(GraphError):
        Dag(["a", "b"], [("a", "b")], [("b", "a")])
    with pytest.raises(GraphError):
        FIG1.parents("nope")


def test_text_round_trip_and_dot():
    g = Dag(["a", "b", "c"], [("a", "b")], [("b", "c")], {"a": 1, "b": 2, "c": 2}, ["a"])
    back = parse_graph(g.to_text())
    assert back == g
    assert back.stamps == g.stamps
    assert back.latent == g.latent
    dot = g.to_dot()
    assert dot.startswith("digraph") and '"a" -> "b";' in dot and "dir=none" in dot
    with pytest.raises(GraphError, match="line 1"):
        parse_graph("a => b\n")


# -- trails --------------------------------------------------------------------


def test_trails_fig1():
    zy = enumerate_trails(FIG1, "z", "y")
    assert [str(t) for t in zy] == ["z -> x -> y"]
    zu = enumerate_trails(FIG1, "z", "u")
    assert [str(t) for t in zu] == ["z -> x -> y <- u"]
    assert zu[0].colliders() == ["y"]


def test_trails_disconnected_and_bounds():
    g = Dag(["a", "b"])
    assert enumerate_trails(g, "a", "b") == []
    assert enumerate_trails(FIG1, "z", "u", max_len=2) == []
    with pytest.raises(GraphError):
        enumerate_trails(FIG1, "z", "z")


def test_trails_are_simple_and_sorted():
    rng = np.random.default_rng(4)
    for _ in range(30):
        g = random_dag(rng, 6, 0.5)
        ts = enumerate_trails(g, "v0", "v5")
        assert [t.vertices for t in ts] == sorted(t.vertices for t in ts)
        for t in ts:
            assert len(set(t.vertices)) == len(t.vertices)
            for a, b in zip(t.vertices, t.vertices[1:]):
                assert g.adjacent(a, b)


# -- d-separation ------------------------------------------------------------------


def test_dsep_clauses():
    chain = Dag(["z", "x", "y"], [("z", "x"), ("x", "y")])
    assert d_separated(chain, "z", "y", {"x"})
    assert not d_separated(chain, "z", "y")
    coll = Dag(["z", "m", "y"], [("z", "m"), ("y", "m")])
    assert d_separated(coll, "z", "y")
    assert not d_separated(coll, "z", "y", {"m"})
    # conditioning on a descendant of the collider opens it too
    coll2 = coll.add_edge("m", "d")
    assert not d_separated(coll2, "z", "y", {"d"})
    assert d_separated(FIG1, "z", "y", {"x"})


def test_dsep_errors():
    with pytest.raises(GraphError):
        d_separated(FIG1, "z", "y", {"z"})
    pd = Dag(["a", "b", "c"], [("a", "b")], [("b", "c")])
    with pytest.raises(GraphError, match="orientation"):
        d_separated(pd, "a", "c")


def test_dsep_matches_population_partial_correlation():
    rng = np.random.default_rng(2024)
    for _ in range(200):
        p = int(rng.integers(3, 9))
        g = random_dag(rng, p)
        S = population_covariance(random_sem(g, rng))
        vs = g.vertices
        for i, j in itertools.combinations(range(p), 2):
            rest = [k for k in range(p) if k not in (i, j)]
            for r in range(len(rest) + 1):
                for Z in itertools.combinations(rest, r):
                    sep = d_separated(g, vs[i], vs[j], [vs[k] for k in Z])
                    pc = partial_corr(S, i, j, list(Z))
                    assert sep == (abs(pc) < 1e-8), (g, vs[i], vs[j], Z, pc)


def test_dsep_matches_networkx_and_trail_form():
    nx = pytest.importorskip("networkx")
    rng = np.random.default_rng(77)
    for _ in range(60):
        g = random_dag(rng, 7, 0.35)
        G = nx.DiGraph()
        G.add_nodes_from(g.vertices)
        G.add_edges_from(g.edges)
        for a, b in itertools.combinations(g.vertices, 2):
            rest = [v for v in g.vertices if v not in (a, b)]
            for Z in itertools.chain.from_iterable(itertools.combinations(rest, k) for k in range(3)):
                ours = d_separated(g, a, b, Z)
                assert ours == nx.is_d_separator(G, {a}, {b}, set(Z))
                assert ours == d_separated_by_trails(g, a, b, Z)


# -- Markov blanket ------------------------------------------------------------------


def test_markov_blanket_examples():
    fig6 = Dag(["x1", "x2", "x3", "y", "x4"], [("x1", "y"), ("x2", "y"), ("y", "x4"), ("x3", "x4")])
    assert markov_blanket(fig6, "y") == {"x1", "x2", "x3", "x4"}
    assert markov_blanket(Dag(["a", "b"], [("a", "b")]).copy(vertices=["a", "b", "c"]), "c") == set()
    obs = Dag(["z", "x", "y"], [("z", "x"), ("x", "y")])
    assert markov_blanket(obs, "x") == {"z", "y"}


def test_markov_blanket_is_minimal_shield():
    rng = np.random.default_rng(8)
    for _ in range(80):
        g = random_dag(rng, int(rng.integers(3, 8)), 0.4)
        for v in g.vertices:
            mb = markov_blanket(g, v)
            for w in g.vertices:
                if w != v and w not in mb:
                    assert d_separated(g, v, w, mb)
            for m in mb:
                assert not d_separated(g, v, m, mb - {m})


# -- skeleton, equivalence, orientation --------------------------------------------------


def test_skeleton():
    chain = Dag(["z", "x", "y"], [("z", "x"), ("x", "y")])
    sk = skeleton(chain)
    assert sk.edges == [] and sk.undirected_edges == [("x", "y"), ("x", "z")]
    assert skeleton(sk) == sk
    assert skeleton(Dag()) == Dag()


def test_equivalence_class_examples():
    chain = Dag(["z", "x", "y"], [("z", "x"), ("x", "y")])
    members = equivalence_class(chain)
    assert len(members) == 3
    assert Dag(["z", "x", "y"], [("z", "x"), ("y", "x")]) not in members
    assert Dag(["x", "y", "z"], [("x", "z"), ("y", "x")]) in members
    assert len(equivalence_class(Dag(["a", "b"], [("a", "b")]))) == 2
    coll = Dag(["z", "x", "y"], [("z", "x"), ("y", "x")])
    assert equivalence_class(coll) == [coll]
    with pytest.raises(BoundExceeded):
        equivalence_class(Dag([f"v{i}" for i in range(13)]))


def _dsep_pattern(g):
    out = set()
    vs = g.vertices
    for a, b in itertools.combinations(sorted(vs), 2):
        rest = [v for v in sorted(vs) if v not in (a, b)]
        for k in range(len(rest) + 1):
            for Z in itertools.combinations(rest, k):
                if d_separated(g, a, b, Z):
                    out.add((a, b, Z))
    return out


def test_equivalence_class_members_share_dsep():
    rng = np.random.default_rng(31)
    for _ in range(40):
        g = random_dag(rng, int(rng.integers(2, 6)), 0.5)
        members = equivalence_class(g)
        assert g in members
        ref = _dsep_pattern(g)
        for m in members:
            assert _dsep_pattern(m) == ref
        # brute force: every DAG on the skeleton with the same pattern is a member
        und = sorted({tuple(sorted(e)) for e in g.edges})
        brute = []
        for flips in itertools.product([0, 1], repeat=len(und)):
            es = [(a, b) if f == 0 else (b, a) for (a, b), f in zip(und, flips)]
            try:
                d = Dag(g.vertices, es)
            except GraphError:
                continue
            if _dsep_pattern(d) == ref:
                brute.append(d)
        assert set(brute) == set(members)


def test_orient_with_timestamps():
    sk = skeleton(Dag(["z", "x", "y"], [("z", "x"), ("x", "y")]))
    g = orient_with_timestamps(sk, {"z": 1990, "x": 1991, "y": 1992})
    assert g.edges == [("x", "y"), ("z", "x")] and g.is_directed()
    tie = orient_with_timestamps(Dag(["a", "b"], (), [("a", "b")]), {"a": 1, "b": 1})
    assert tie.undirected_edges == [("a", "b")]
    with pytest.raises(GraphError):
        orient_with_timestamps(Dag(["a", "b"], [("b", "a")]), {"a": 1, "b": 2})
    with pytest.raises(GraphError, match="without timestamp"):
        orient_with_timestamps(sk, {"z": 1})


def test_cut_effect():
    g4b = cut_effect(FIG1, "x", "y")
    assert d_separated(g4b, "z", "y")
    assert g4b.add_edge("x", "y") == FIG1
    inc = cut_effect(FIG1, "x", mode="incoming")
    assert inc.parents("x") == set()
    with pytest.raises(GraphError):
        cut_effect(g4b, "x", "y")
    rng = np.random.default_rng(3)
    for _ in range(30):
        g = random_dag(rng, 6, 0.4)
        for a, b in g.edges:
            assert cut_effect(g, a, b).add_edge(a, b) == g


# -- instruments ----------------------------------------------------------------------


def _by_name(reports):
    return {r.candidate: r for r in reports}


def test_iv_fig1_valid():
    reps = _by_name(iv_candidates(iv_basic().graph(), "x", "y"))
    assert reps["z"].verdict == "valid"
    assert reps["z"].g1_holds and reps["z"].g2_holds
    assert reps["z"].required_controls == ()
    reps = _by_name(iv_candidates(FIG1.copy(latent=["u", "v"]), "x", "y"))
    assert reps["z"].verdict == "valid"


def test_iv_fig5_invalid_with_witness():
    r = _by_name(iv_candidates(iv_invalid().graph(), "x", "y"))["z"]
    assert r.verdict == "invalid" and not r.g1_holds
    assert str(r.g1_witness) == "z -> u -> y"


def test_iv_conditional_on_location_controls():
    g = rent_price_sem().graph()
    r = _by_name(iv_candidates(g, "price", "rent", controls=["gaol"]))["baths"]
    assert r.verdict == "conditional"
    assert r.required_controls == ("gaol",)
    assert r.g1_holds and r.g2_holds
    # without stated controls the smallest restoring set is still reported
    r0 = _by_name(iv_candidates(g, "price", "rent"))["baths"]
    assert r0.verdict == "conditional" and not r0.g1_holds
    assert r0.required_controls in {("area",), ("gaol",)}
    gaol = _by_name(iv_candidates(g, "price", "rent"))["gaol"]
    assert gaol.verdict == "invalid" and str(gaol.g1_witness) == "gaol -> rent"


def test_iv_verdict_invariant_and_errors():
    rng = np.random.default_rng(12)
    for _ in range(40):
        g = random_dag(rng, 6, 0.45)
        if not g.edges:
            continue
        x, y = g.edges[0]
        for r in iv_candidates(g, x, y):
            assert (r.verdict == "valid") == (r.g1_holds and r.g2_holds and not r.required_controls)
            if r.g2_separator is not None:
                assert d_separated(g, r.candidate, x, r.g2_separator)
    with pytest.raises(GraphError):
        iv_candidates(FIG1, "y", "x")
    big = Dag([f"v{i}" for i in range(15)], [("v0", "v1")])
    with pytest.raises(BoundExceeded):
        iv_candidates(big, "v0", "v1")


def test_valid_instrument_meets_error_based_conditions():
    # graphical validity implies corr(z, u) ~ 0 and corr(z, x) away from 0
    rng = np.random.default_rng(0)
    for k in range(5):
        a1 = rng.uniform(0.3, 1.5)
        sem = iv_basic(alpha1=a1, beta1=rng.uniform(-1, 1), r=rng.uniform(-0.8, 0.8),
                       observable_noise=True)
        rep = _by_name(iv_candidates(sem.graph(), "x", "y"))
        assert rep["z"].verdict == "valid"
        ds = sample(sem, 100_000, seed=k)
        assert abs(np.corrcoef(ds["z"], ds["u"])[0, 1]) < 0.02
        assert abs(np.corrcoef(ds["z"], ds["x"])[0, 1]) > 0.1


# -- backdoor paths --------------------------------------------------------------------


def test_backdoor_paths():
    assert backdoor_paths(FIG1, "z", "y", "x") == []
    bd = backdoor_paths(iv_invalid().graph(), "z", "y", "x")
    assert [str(t) for t in bd] == ["z -> u -> y"]
    rp = backdoor_paths(rent_price_sem().graph(), "baths", "rent", "price")
    assert [str(t) for t in rp] == ["baths <- area -> gaol -> rent"]
    assert frozenset({"gaol"}) in rp[0].blocking
