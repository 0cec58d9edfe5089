"""Recovering a Markov blanket by subsample-ordered selection.

The response y has parents x1, x2, a child x4 and a co-parent x3; x5, x6
and x7 are further away. Regressing y on its blanket gives a reduced form
whose coefficients differ from the structural weights; the closed form is
available from the simulator.
"""

import numpy as np

from mbiv.regress import ols
from mbiv.select import cv_select, solar
from mbiv.sem import mb_gamma, mb_reduced, sample

sem = mb_reduced()
ds = sample(sem, 2000, seed=3)
names = [v for v in ds.names if v != "y"]
y, X = ds["y"], ds.matrix(names)

sol = solar(y, X, seed=0, names=names)
print("solar scores:", {k: round(v, 2) for k, v in sol.scores.items()})
print("solar selects:", sol.selected)
print("cv-lasso selects:", cv_select(y, X, seed=0, names=names).selected)

fit = ols(y, ds.matrix(sol.selected))
print("post-selection OLS:", np.round(fit.coef, 3))
print("reduced form      :", np.round(mb_gamma(), 3))
