import itertools
import math

import numpy as np
import pytest

from mbiv.datamodel import partial_corr
from mbiv.errors import DataError, UsageError
from mbiv.graph import Dag, GraphError, d_separated
from mbiv.regress import ols
from mbiv.select import irc_value
from mbiv.sem import (
    SCENARIOS,
    LinearSem,
    format_sem,
    irc,
    iv_basic,
    mb_gamma,
    mb_reduced,
    ovb_oracle,
    parse_sem,
    population_covariance,
    reversal,
    sample,
    scenario,
)


def test_invariants():
    g = Dag(["a", "b"], [("a", "b")])
    with pytest.raises(DataError):
        LinearSem(dag=g, weights={("a", "b"): 1.0}, scales={"a": 0.0})
    with pytest.raises(DataError):
        LinearSem(dag=g, weights={("a", "b"): math.inf})
    with pytest.raises(GraphError):
        LinearSem(dag=g, weights={("b", "a"): 1.0})
    with pytest.raises(GraphError):
        LinearSem(dag=Dag(["a", "b"], (), [("a", "b")]), weights={})
    with pytest.raises(DataError):
        LinearSem(dag=Dag(["a", "b", "c"]), weights={},
                  noise_corr={("a", "b"): 0.9, ("b", "c"): 0.9, ("a", "c"): -0.9})


def test_population_covariance_small_cases():
    one = LinearSem(dag=Dag(["a"]), weights={}, scales={"a": 2.5})
    np.testing.assert_allclose(population_covariance(one), [[6.25]])
    w = 0.7
    chain = LinearSem(dag=Dag(["a", "b"], [("a", "b")]), weights={("a", "b"): w})
    S = population_covariance(chain)
    assert S[1, 1] == pytest.approx(w * w + 1, abs=1e-15)
    assert S[0, 1] == pytest.approx(w, abs=1e-15)


def test_irc_unit_variances_and_feasibility():
    for w in [(0.75, 0.75), (0.3, 0.3), (0.5, -0.2)]:
        S = population_covariance(irc(*w))
        np.testing.assert_allclose(np.diag(S), 1.0, atol=1e-14)
    sem = irc(0.75, 0.75)
    assert irc_value(population_covariance(sem)[:3, :3], [0, 1]) == pytest.approx(1.5, abs=1e-12)
    with pytest.raises(DataError):
        irc(0.8, 0.8)


@pytest.mark.parametrize("name", sorted(SCENARIOS))
def test_scenarios_positive_definite_and_deterministic(name):
    sem = scenario(name)
    np.linalg.cholesky(population_covariance(sem))
    a = sample(sem, 200, seed=5)
    b = sample(sem, 200, seed=5)
    assert a.names == b.names and np.array_equal(a.values, b.values)
    assert set(a.names) == set(sem.observed)


def test_unknown_scenario():
    with pytest.raises(UsageError, match="unknown scenario"):
        scenario("nope")


def test_zero_weight_sem_independent_columns():
    g = Dag(["a", "b", "c"], [("a", "b"), ("b", "c")])
    sem = LinearSem(dag=g, weights={}, scales={"a": 1.0, "b": 2.0, "c": 0.5})
    ds = sample(sem, 10_000, seed=1)
    R = np.corrcoef(ds.values, rowvar=False)
    assert np.max(np.abs(R - np.eye(3))) < 0.03
    np.testing.assert_allclose(ds.values.std(axis=0), [1, 2, 0.5], rtol=0.03)


def test_sample_covariance_matches_population_large_n():
    sem = iv_basic()
    ds = sample(sem, 1_000_000, seed=11)
    np.testing.assert_allclose(np.cov(ds.values, rowvar=False), population_covariance(sem), atol=0.01)


def test_sample_covariance_concentration():
    # scaled by the operator norm of the population covariance, so scenarios with
    # high-variance downstream vertices meet the same bound as unit-scale ones
    n = 4000
    for name in sorted(SCENARIOS):
        sem = scenario(name)
        S = population_covariance(sem, observed=True)
        p = S.shape[0]
        for s in range(20):
            C = np.cov(sample(sem, n, seed=s).values, rowvar=False)
            assert np.linalg.norm(C - S, 2) / np.linalg.norm(S, 2) < 3 * p / math.sqrt(n)


def test_observable_noise_columns():
    ds = sample(iv_basic(r=0.6, observable_noise=True), 50_000, seed=0)
    assert ds.names == ("z", "x", "y", "v", "u")
    assert np.corrcoef(ds["u"], ds["v"])[0, 1] == pytest.approx(0.6, abs=0.02)
    np.testing.assert_allclose(ds["x"] - ds["z"], ds["v"], atol=1e-12)


def test_mb_reduced_reduced_form():
    # [DERIVED] symbolic reduction at the default parameters:
    # y on (x1, x2, x3, x4) has coefficients (4/5, 4/5, -2/5, 2/5), intercept 0
    frozen = np.array([0.0, 0.8, 0.8, -0.4, 0.4])
    np.testing.assert_allclose(mb_gamma(), frozen, atol=1e-15)
    sem = mb_reduced()
    np.testing.assert_allclose(ovb_oracle(sem, "y", ["x1", "x2", "x3", "x4"]), frozen, atol=1e-12)
    ds = sample(sem, 100_000, seed=3)
    fit = ols(ds["y"], ds.matrix(["x1", "x2", "x3", "x4"]))
    np.testing.assert_allclose(fit.coef, frozen, atol=0.02)


def test_mb_gamma_symbolic():
    sp = pytest.importorskip("sympy")
    a0, a1, a2, b0, b1, b2, su, sv = sp.symbols("a0 a1 a2 b0 b1 b2 su sv", positive=True)
    # Gaussian conditional mean of u given the x4 equation
    g4 = b1 * su**2 / (b1**2 * su**2 + sv**2)
    vals = {a0: 0.3, a1: 1.2, a2: -0.7, b0: 0.1, b1: 0.9, b2: 0.4, su: 1.3, sv: 0.6}
    expect = [
        a0 * (1 - g4 * b1) - g4 * b0, a1 * (1 - g4 * b1), a2 * (1 - g4 * b1), -g4 * b2, g4
    ]
    got = mb_gamma((0.3, 1.2, -0.7), (0.1, 0.9, 0.4), 1.3, 0.6)
    np.testing.assert_allclose(got, [float(e.subs(vals)) for e in expect], rtol=1e-12)
    sem = mb_reduced((0.3, 1.2, -0.7), (0.1, 0.9, 0.4), 1.3, 0.6)
    np.testing.assert_allclose(ovb_oracle(sem, "y", ["x1", "x2", "x3", "x4"]), got, atol=1e-12)


def test_ovb_oracle_examples():
    sem = iv_basic(alpha1=1.0, beta1=0.5, r=0.6)
    # slope limit = beta1 + r su sv / var(x) = 0.5 + 0.6 / 2
    assert ovb_oracle(sem, "y", ["x"])[1] == pytest.approx(0.8, abs=1e-14)
    ds = sample(sem, 1_000_000, seed=4)
    assert ols(ds["y"], ds["x"]).coef[1] == pytest.approx(0.8, abs=0.005)
    # correctly specified: structural coefficients
    np.testing.assert_allclose(ovb_oracle(iv_basic(r=0.0), "y", ["x"]), [0, 0.5], atol=1e-14)
    # omitting a regressor uncorrelated with the other leaves it unbiased
    b = ovb_oracle(mb_reduced(), "y", ["x1", "x2"], omitted=["x2"])
    assert b[1] == pytest.approx(1.0, abs=1e-14)


def test_reversal_attenuation():
    sem = reversal(beta1=0.8)
    slope = ovb_oracle(sem, "y", ["x1"])[1]
    assert slope == pytest.approx(0.8 / 1.64, abs=1e-14)
    assert abs(slope - 1 / 0.8) > 0.5


def test_scenario_dsep_statements_hold_in_covariance():
    sem = iv_basic(r=0.0, observable_noise=True)
    S = population_covariance(sem)
    assert d_separated(sem.graph(), "z", "y", {"x"})
    assert abs(partial_corr(S, sem.index("z"), sem.index("y"), [sem.index("x")])) < 1e-12
    # every d-separation among observed vertices shows as a zero partial correlation
    for name in sorted(SCENARIOS):
        sem = scenario(name)
        g = sem.graph()
        S = population_covariance(sem)
        obs = list(sem.observed)
        for i, a in enumerate(obs):
            for b in obs[i + 1:]:
                rest = [v for v in obs if v not in (a, b)]
                for k in range(min(len(rest), 3) + 1):
                    for Z in itertools.combinations(rest, k):
                        pc = partial_corr(S, sem.index(a), sem.index(b), [sem.index(v) for v in Z])
                        assert d_separated(g, a, b, Z) == (abs(pc) < 1e-10), (name, a, b, Z)


def test_sem_text_round_trip():
    text = """
    node z ts=0
    node x intercept=0.5 scale=2
    node y
    z -> x w=0.8
    x -> y w=-0.3
    x ~ y r=0.6
    """
    sem = parse_sem(text)
    again = parse_sem(format_sem(sem))
    assert again.weights == sem.weights
    assert again.noise_corr == {("x", "y"): 0.6}
    assert again.intercepts["x"] == 0.5 and again.scales["x"] == 2.0
    np.testing.assert_array_equal(population_covariance(again), population_covariance(sem))
    with pytest.raises(DataError, match="line 2"):
        parse_sem("node a\na => b\n")
