"""OLS, two-stage least squares and the classical endogeneity test battery.

All standard errors are classical (homoskedastic). The Wooldridge tests are the
augmented-regression constructions: the first-stage residual is added to the
structural OLS and its coefficient is tested. In homoskedastic form the
regression variant equals the Wu-Hausman F statistic and the score variant
equals the Durbin statistic; each is still computed through its own auxiliary
regression and reported with its own reference distribution.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import special

from .errors import DataError, NumericError

RANK_TOL = 1e-10


def chi2_sf(x: float, df: float) -> float:
    """Upper tail of the chi-square distribution."""
    if x <= 0:
        return 1.0
    return float(special.gammaincc(df / 2.0, x / 2.0))


def f_sf(x: float, df1: float, df2: float) -> float:
    """Upper tail of the F distribution."""
    if x <= 0:
        return 1.0
    return float(special.betainc(df2 / 2.0, df1 / 2.0, df2 / (df2 + df1 * x)))


def t_sf2(t: float, df: float) -> float:
    """Two-sided tail probability of Student's t."""
    return float(special.betainc(df / 2.0, 0.5, df / (df + t * t)))


@dataclass
class RegressionFit:
    names: list[str]
    coef: np.ndarray
    se: np.ndarray
    t: np.ndarray
    pvalues: np.ndarray
    r2: float
    adj_r2: float
    n: int
    p: int
    resid: np.ndarray
    rss: float
    intercept: bool
    df_resid: int
    diagnostics: dict = field(default_factory=dict)

    @property
    def sigma2(self) -> float:
        return self.rss / self.df_resid

    def __getitem__(self, name: str) -> float:
        return float(self.coef[self.names.index(name)])

    def to_dict(self) -> dict:
        return {
            "names": list(self.names),
            "coef": self.coef.tolist(),
            "se": self.se.tolist(),
            "t": self.t.tolist(),
            "p": self.pvalues.tolist(),
            "r2": self.r2,
            "adj_r2": self.adj_r2,
            "n": self.n,
            "p_regressors": self.p,
            "df_resid": self.df_resid,
            **({"diagnostics": self.diagnostics} if self.diagnostics else {}),
        }

    def table(self) -> str:
        rows = [f"{'':<14}{'coef':>14}{'se':>14}{'t':>12}{'p':>12}"]
        for i, s in enumerate(self.names):
            rows.append(
                f"{s:<14}{self.coef[i]:>14.6g}{self.se[i]:>14.6g}{self.t[i]:>12.6g}{self.pvalues[i]:>12.6g}"
            )
        rows.append(f"n={self.n}  R2={self.r2:.6g}  adj R2={self.adj_r2:.6g}")
        return "\n".join(rows)


def _as_matrix(X, n: int) -> np.ndarray:
    if X is None:
        return np.zeros((n, 0))
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X.reshape(-1, 1)
    if X.shape[0] != n:
        raise DataError(f"design has {X.shape[0]} rows, response has {n}")
    return X


def _default_names(prefix: str, k: int) -> list[str]:
    return [f"{prefix}{j + 1}" for j in range(k)]


def _check_rank(D: np.ndarray, names: Sequence[str]) -> None:
    """Raise naming the first column that is a linear combination of earlier ones."""
    if D.shape[1] == 0:
        return
    scale = np.sqrt(np.sum(D * D, axis=0))
    zero = np.flatnonzero(scale == 0)
    if zero.size:
        raise NumericError(f"rank deficient design: column {names[zero[0]]!r} is all zero")
    Dn = D / scale
    for j in range(1, D.shape[1] + 1):
        s = np.linalg.svd(Dn[:, :j], compute_uv=False)
        if s[-1] < RANK_TOL * max(1.0, s[0]):
            raise NumericError(f"rank deficient design: column {names[j - 1]!r} is collinear with earlier columns")


def _design(X, n, intercept, names):
    X = _as_matrix(X, n)
    names = list(names) if names is not None else _default_names("x", X.shape[1])
    if len(names) != X.shape[1]:
        raise DataError("names do not match design columns")
    if intercept:
        return np.column_stack([np.ones(n), X]), ["const"] + names
    return X, names


def _finish(y, D, names, coef, resid, intercept, XtX_inv) -> RegressionFit:
    n, k = D.shape
    df = n - k
    rss = float(resid @ resid)
    sigma2 = rss / df
    se = np.sqrt(np.maximum(np.diag(XtX_inv) * sigma2, 0.0))
    with np.errstate(divide="ignore", invalid="ignore"):
        t = np.where(se > 0, coef / se, np.where(coef == 0, 0.0, np.inf))
    pv = np.array([t_sf2(float(ti), df) if np.isfinite(ti) else 0.0 for ti in t])
    if intercept:
        tss = float(np.sum((y - y.mean()) ** 2))
    else:
        tss = float(y @ y)
    r2 = 1.0 - rss / tss if tss > 0 else 0.0
    preg = k - 1 if intercept else k
    adj = 1.0 - (1.0 - r2) * (n - (1 if intercept else 0)) / df
    return RegressionFit(
        names=names, coef=coef, se=se, t=t, pvalues=pv, r2=r2, adj_r2=adj, n=n, p=preg,
        resid=resid, rss=rss, intercept=intercept, df_resid=df,
    )


def ols(y, X=None, intercept: bool = True, names: Sequence[str] | None = None) -> RegressionFit:
    """Least squares via QR with classical standard errors."""
    y = np.asarray(y, dtype=float).ravel()
    n = y.size
    D, names = _design(X, n, intercept, names)
    k = D.shape[1]
    if k == 0:
        raise DataError("empty design")
    if n <= k:
        raise DataError(f"n={n} too small for {k} coefficients")
    _check_rank(D, names)
    Q, R = np.linalg.qr(D)
    coef = np.linalg.solve(R, Q.T @ y)
    resid = y - D @ coef
    Rinv = np.linalg.inv(R)
    return _finish(y, D, names, coef, resid, intercept, Rinv @ Rinv.T)


def two_sls(y, X_exog, x_endog, Z, intercept: bool = True,
            exog_names: Sequence[str] | None = None, endog_name: str = "x_endog",
            instrument_names: Sequence[str] | None = None) -> RegressionFit:
    """Two-stage least squares for one endogenous regressor.

    Stage 2 standard errors use residuals recomputed with the observed
    endogenous column. ``diagnostics`` carries the first-stage fit, the
    first-stage F on the excluded instruments and the weak-instrument flag
    (F < 10). The R2 reported is ``1 - RSS/TSS`` with those residuals and can
    be negative.
    """
    y = np.asarray(y, dtype=float).ravel()
    n = y.size
    x_endog = np.asarray(x_endog, dtype=float).ravel()
    if x_endog.size != n:
        raise DataError("endogenous column length differs from response")
    Xe = _as_matrix(X_exog, n)
    Zm = _as_matrix(Z, n)
    if Zm.shape[1] < 1:
        raise DataError("two_sls needs at least one instrument")
    exog_names = list(exog_names) if exog_names is not None else _default_names("x", Xe.shape[1])
    inst_names = list(instrument_names) if instrument_names is not None else _default_names("z", Zm.shape[1])
    first = ols(x_endog, np.column_stack([Xe, Zm]), intercept, exog_names + inst_names)
    xhat = x_endog - first.resid
    D_hat, names = _design(np.column_stack([Xe, xhat]), n, intercept, exog_names + [endog_name])
    D_obs, _ = _design(np.column_stack([Xe, x_endog]), n, intercept, exog_names + [endog_name])
    k = D_hat.shape[1]
    if n <= k + Zm.shape[1] - 1:
        raise DataError("n too small for the instrumented design")
    _check_rank(D_hat, names)
    Q, R = np.linalg.qr(D_hat)
    coef = np.linalg.solve(R, Q.T @ y)
    resid = y - D_obs @ coef
    Rinv = np.linalg.inv(R)
    fit = _finish(y, D_obs, names, coef, resid, intercept, Rinv @ Rinv.T)
    # first-stage F on the excluded instruments only
    if Xe.shape[1] or intercept:
        restricted = ols(x_endog, Xe, intercept, exog_names).rss
    else:
        restricted = float(x_endog @ x_endog)
    q = Zm.shape[1]
    F = ((restricted - first.rss) / q) / (first.rss / first.df_resid)
    fit.diagnostics = {
        "first_stage_F": float(F),
        "first_stage_F_p": f_sf(F, q, first.df_resid),
        "weak_instrument": bool(F < 10),
        "instruments": inst_names,
    }
    fit._first_stage = first  # kept for endogeneity_tests
    return fit


@dataclass
class TestResult:
    name: str
    statistic: float
    distribution: str
    df: tuple
    p_value: float

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "statistic": self.statistic,
            "distribution": self.distribution,
            "df": list(self.df),
            "p_value": self.p_value,
        }


TEST_NAMES = ("durbin", "wu_hausman", "wooldridge_regression", "wooldridge_score")


@dataclass
class IvReport:
    ols_fit: RegressionFit
    first_stage_fit: RegressionFit
    tsls_fit: RegressionFit
    tests: list[TestResult]
    instrument_names: list[str]
    endogenous_name: str
    response_name: str = "y"

    @property
    def weak_instrument_flag(self) -> bool:
        return bool(self.tsls_fit.diagnostics["weak_instrument"])

    @property
    def first_stage_F(self) -> float:
        return float(self.tsls_fit.diagnostics["first_stage_F"])

    def test(self, name: str) -> TestResult:
        for t in self.tests:
            if t.name == name:
                return t
        raise KeyError(name)

    def to_dict(self) -> dict:
        return {
            "response": self.response_name,
            "endogenous": self.endogenous_name,
            "instruments": list(self.instrument_names),
            "ols": self.ols_fit.to_dict(),
            "first_stage": self.first_stage_fit.to_dict(),
            "tsls": self.tsls_fit.to_dict(),
            "tests": [t.to_dict() for t in self.tests],
            "first_stage_F": self.first_stage_F,
            "weak_instrument_flag": self.weak_instrument_flag,
            "notes": "homoskedastic forms; wooldridge_regression = t^2 of the first-stage "
            "residual in the augmented OLS, wooldridge_score = n R^2 of the auxiliary regression",
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    def table(self) -> str:
        rows = [f"{'test':<24}{'statistic':>14}{'dist':>12}{'p':>14}"]
        for t in self.tests:
            dist = f"{t.distribution}({','.join(str(d) for d in t.df)})"
            rows.append(f"{t.name:<24}{t.statistic:>14.6g}{dist:>12}{t.p_value:>14.6g}")
        rows.append(f"first-stage F = {self.first_stage_F:.6g}" + ("  (weak instrument)" if self.weak_instrument_flag else ""))
        return "\n".join(rows)


def endogeneity_tests(y, X_exog, x_endog, Z, intercept: bool = True,
                      exog_names: Sequence[str] | None = None, endog_name: str = "x_endog",
                      instrument_names: Sequence[str] | None = None,
                      response_name: str = "y") -> IvReport:
    """OLS, first stage, 2SLS and the Durbin / Wu-Hausman / Wooldridge tests."""
    y = np.asarray(y, dtype=float).ravel()
    n = y.size
    Xe = _as_matrix(X_exog, n)
    exog_names = list(exog_names) if exog_names is not None else _default_names("x", Xe.shape[1])
    tsls = two_sls(y, Xe, x_endog, Z, intercept, exog_names, endog_name, instrument_names)
    first = tsls._first_stage
    vhat = first.resid
    struct = ols(y, np.column_stack([Xe, x_endog]), intercept, exog_names + [endog_name])
    aug = ols(y, np.column_stack([Xe, x_endog, vhat]), intercept, exog_names + [endog_name, "vhat"])
    ssr_r, ssr_u = struct.rss, aug.rss
    d = ssr_r - ssr_u
    durbin = n * d / ssr_r
    df2 = aug.df_resid
    wh = d / (ssr_u / df2)
    t_v = float(aug.t[-1])
    wreg = t_v * t_v
    # score form: n R^2 from regressing the structural OLS residual on the augmented design
    aux = ols(struct.resid, np.column_stack([Xe, x_endog, vhat]), intercept)
    if intercept:
        r2_aux = aux.r2
    else:
        r2_aux = 1.0 - aux.rss / float(struct.resid @ struct.resid)
    wscore = n * r2_aux
    tests = [
        TestResult("durbin", float(durbin), "chi2", (1,), chi2_sf(durbin, 1)),
        TestResult("wu_hausman", float(wh), "F", (1, df2), f_sf(wh, 1, df2)),
        TestResult("wooldridge_regression", float(wreg), "chi2", (1,), chi2_sf(wreg, 1)),
        TestResult("wooldridge_score", float(wscore), "chi2", (1,), chi2_sf(wscore, 1)),
    ]
    return IvReport(
        ols_fit=struct,
        first_stage_fit=first,
        tsls_fit=tsls,
        tests=tests,
        instrument_names=list(tsls.diagnostics["instruments"]),
        endogenous_name=endog_name,
        response_name=response_name,
    )
