"""Checking an instrument before trusting it.

Two worlds share the observable structure z -> x -> y with x endogenous.
In the first z is a clean instrument; in the second z also moves y through
an unobserved channel u. The graph rules tell them apart, and the
instrumented regression shows what goes wrong when the rules are ignored.
"""

from mbiv.graph import iv_candidates
from mbiv.regress import endogeneity_tests, ols
from mbiv.sem import iv_basic, iv_invalid, ovb_oracle, sample

for sem in (iv_basic(r=0.6), iv_invalid()):
    print(f"== {sem.name}")
    for rep in iv_candidates(sem.graph(), "x", "y"):
        d = rep.to_dict()
        print(f"  {rep.candidate}: {rep.verdict}", f"(witness {d['g1_witness']})" if d["g1_witness"] else "")

    ds = sample(sem, 20_000, seed=1)
    beta = sem.weights[("x", "y")]
    print(f"  true effect {beta}, OLS limit {ovb_oracle(sem, 'y', ['x'])[1]:.3f}, "
          f"OLS estimate {ols(ds['y'], ds['x']).coef[1]:.3f}")
    rep = endogeneity_tests(ds["y"], None, ds["x"], ds["z"], endog_name="x", instrument_names=["z"])
    print(f"  2SLS estimate {rep.tsls_fit.coef[1]:.3f} (se {rep.tsls_fit.se[1]:.3f})")
    print("  " + rep.table().replace("\n", "\n  "))
