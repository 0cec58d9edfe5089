"""When the irrepresentable condition fails.

x3 is a child of both true regressors x1, x2 and so carries their combined
signal. With large weights the lasso tends to keep x3. Ordering by
subsample frequency does not escape it either: x3 enters the path first on
every subsample. The grouping diagnostic is what exposes the problem, since
it flags x3 as nearly a linear function of the others.
"""

from mbiv.select import cv_select, grouping_diagnostic, irc_value, solar
from mbiv.sem import irc, population_covariance, sample

names = ["x1", "x2", "x3"]
for w in (0.75, 0.3):
    sem = irc(w, w)
    S = population_covariance(sem)[:3, :3]
    keep = {"cv-lasso": 0, "solar": 0}
    for s in range(20):
        ds = sample(sem, 1000, seed=s)
        X = ds.matrix(names)
        keep["cv-lasso"] += "x3" in cv_select(ds["y"], X, seed=s, names=names).selected
        keep["solar"] += "x3" in solar(ds["y"], X, seed=s, names=names).selected
    print(f"irc({w}, {w}): IRC value {irc_value(S, [0, 1]):.2f}; x3 kept in 20 runs: {keep}")

g = grouping_diagnostic(sample(irc(0.75, 0.75), 1000, seed=0), "x3", 0.5, ["x1", "x2"])
print(f"x3 on x1, x2: R2 {g.r2:.3f}, sum|b| {g.abs_coef_sum:.3f}, IRC violation {g.irc_violation}")
