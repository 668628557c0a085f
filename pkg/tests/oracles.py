"""Independent reference computations used to freeze expected values.

Nothing here imports the package: allocations come from first-order
conditions written out by hand or from a generic numerical optimizer.
"""

import warnings

import numpy as np
from scipy import optimize

T = 112.0


def allocation(prefs, mu, wm, wf, y):
    """FOC solution of max u_m + mu u_f with log utilities.

    Each expenditure equals its weight in the weighted utility sum times y
    over the total weight.
    """
    am, bm, gm, af, bf, gf = prefs
    total = am + bm + gm + mu * (af + bf + gf)
    return {
        "c_m": am * y / total,
        "c_f": mu * af * y / total,
        "l_m": bm * y / total / wm,
        "l_f": mu * bf * y / total / wf,
        "C": (gm + mu * gf) * y / total,
    }


def allocation_numeric(prefs, mu, wm, wf, y):
    """Same problem solved by SLSQP on expenditure shares."""
    am, bm, gm, af, bf, gf = prefs

    def neg(s):
        cm, cf, lm, lf, C = s * y
        return -(am * np.log(cm) + bm * np.log(lm / wm) + gm * np.log(C)
                 + mu * (af * np.log(cf) + bf * np.log(lf / wf) + gf * np.log(C)))

    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        res = _solve(neg)
    cm, cf, lm, lf, C = res.x * y
    return {"c_m": cm, "c_f": cf, "l_m": lm / wm, "l_f": lf / wf, "C": C}


def _solve(neg):
    return optimize.minimize(
        neg, np.full(5, 0.2), method="SLSQP",
        bounds=[(1e-9, 1.0)] * 5,
        constraints=[{"type": "eq", "fun": lambda s: s.sum() - 1.0}],
        options={"ftol": 1e-14, "maxiter": 500},
    )


def pareto_weight(eta, ln_z1, ln_z2, ln_wm, ln_wf, ln_y, clip=(0.01, 0.99)):
    idx = eta[0] + eta[1] * ln_z1 + eta[2] * ln_z2 + eta[3] * ln_wm + eta[4] * ln_wf + eta[5] * ln_y
    return np.clip(1.0 / (1.0 + np.exp(-idx)), *clip)


def shares(prefs, eta, ln_z1, ln_z2, wm, wf, y):
    mu = pareto_weight(eta, ln_z1, ln_z2, np.log(wm), np.log(wf), np.log(y))
    a = allocation(prefs, mu, wm, wf, y)
    return np.column_stack([a["c_m"], a["c_f"], a["l_m"] * wm, a["l_f"] * wf, a["C"]]) / np.asarray(y)[:, None]


def share_gradient(prefs, eta, ln_z1, ln_z2, wm, wf, y, h=1e-6):
    """Central differences in ln z1 and ln z2; (n, 5, 2)."""
    d1 = (shares(prefs, eta, ln_z1 + h, ln_z2, wm, wf, y) - shares(prefs, eta, ln_z1 - h, ln_z2, wm, wf, y)) / (2 * h)
    d2 = (shares(prefs, eta, ln_z1, ln_z2 + h, wm, wf, y) - shares(prefs, eta, ln_z1, ln_z2 - h, wm, wf, y)) / (2 * h)
    return np.stack([d1, d2], axis=-1)


def two_factor_correlation(rho1=0.6, rho2=0.5):
    """Population correlation over the seven traits in package order:
    openness, extraversion, agreeableness, neuroticism, conscientiousness,
    self_esteem, cognitive_engagement."""
    R = np.eye(7)
    for block, rho in (((1, 5, 6), rho1), ((3, 4), rho2)):
        for i in block:
            for j in block:
                if i != j:
                    R[i, j] = rho
    return R


def ols(X, y):
    """Textbook normal-equation OLS with HC0 sandwich."""
    XtX_inv = np.linalg.inv(X.T @ X)
    b = XtX_inv @ X.T @ y
    e = y - X @ b
    V = XtX_inv @ (X.T * e**2) @ X @ XtX_inv
    return b, e, V


def riceb(c, w, l, C, y):
    return (c + w * l + C) / y


def sur_gls(X, Y):
    """Feasible SUR: stacked GLS with Sigma from the equation-by-equation OLS residuals."""
    n, J = Y.shape
    E = Y - X @ np.linalg.lstsq(X, Y, rcond=None)[0]
    omega = np.kron(np.linalg.inv(E.T @ E / n), np.eye(n))
    Z = np.kron(np.eye(J), X)
    y = Y.T.reshape(-1)
    b = np.linalg.solve(Z.T @ omega @ Z, Z.T @ omega @ y)
    return b.reshape(J, -1).T
