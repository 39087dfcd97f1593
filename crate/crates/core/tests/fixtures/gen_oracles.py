"""Regenerates oracles.json with numpy/cvxpy, independently of the Rust code.

    python3 gen_oracles.py > oracles.json
"""
import itertools
import json

import cvxpy as cp
import numpy as np
import scipy.optimize


def project_breakpoints(v, c, b):
    """Exact projection onto {0 <= w <= 1, c.w <= b} by scanning the
    piecewise-linear budget function between sorted multiplier breakpoints."""
    w = np.clip(v, 0.0, 1.0)
    if c @ w <= b:
        return w
    bps = np.unique(np.concatenate([v / c, (v - 1.0) / c, [0.0]]))
    bps = bps[bps >= 0.0]

    def spent(lam):
        return c @ np.clip(v - lam * c, 0.0, 1.0)

    lo = 0.0
    for hi in bps:
        if spent(hi) <= b:
            break
        lo = hi
    # spent is linear on [lo, hi]
    s_lo, s_hi = spent(lo), spent(hi)
    lam = lo + (s_lo - b) / (s_lo - s_hi) * (hi - lo)
    return np.clip(v - lam * c, 0.0, 1.0)


def projection_cases(rng):
    out = []
    for _ in range(8):
        n = 8
        v = rng.uniform(-0.5, 1.5, n)
        c = rng.uniform(0.5, 2.0, n)
        b = rng.uniform(1.0, 4.0)
        w = project_breakpoints(v, c, b)
        x = cp.Variable(n)
        cp.Problem(cp.Minimize(cp.sum_squares(x - v)), [x >= 0, x <= 1, c @ x <= b]).solve(
            solver=cp.CLARABEL
        )
        assert np.max(np.abs(x.value - w)) < 1e-6
        out.append({"v": v.tolist(), "c": c.tolist(), "b": b, "w": w.tolist()})
    return out


def fractional_case(rng):
    n, p, b = 8, 3, 3.0
    t = rng.normal(size=(n, p))
    w = cp.Variable(n)
    m = sum(w[i] * np.outer(t[i], t[i]) for i in range(n))
    prob = cp.Problem(cp.Maximize(cp.log_det(m)), [w >= 0, w <= 1, cp.sum(w) <= b])
    prob.solve(solver=cp.CLARABEL)
    w0 = np.clip(w.value, 0.0, 1.0)
    # Polish on the active set: t_i^T M^-1 t_i = lam for free i, sum w = b.
    free = np.where((w0 > 1e-4) & (w0 < 1 - 1e-4))[0]
    ones = np.where(w0 >= 1 - 1e-4)[0]

    def kkt(x):
        ww = np.zeros(n)
        ww[ones] = 1.0
        ww[free] = x[:-1]
        minv = np.linalg.inv(t.T @ np.diag(ww) @ t)
        lev = np.einsum("ij,jk,ik->i", t[free], minv, t[free])
        return np.concatenate([lev - x[-1], [ww.sum() - b]])

    x0 = np.concatenate([w0[free], [1.0]])
    x = scipy.optimize.fsolve(kkt, x0, xtol=1e-12)
    assert np.max(np.abs(kkt(x))) < 1e-12
    ww = np.zeros(n)
    ww[ones] = 1.0
    ww[free] = x[:-1]
    assert np.max(np.abs(ww - w0)) < 1e-4
    return {"t": t.tolist(), "budget": b, "value": logdet_cov(t, ww), "w": ww.tolist()}


def logdet_cov(t, w):
    return -np.linalg.slogdet(t.T @ np.diag(w) @ t)[1]


def exhaustive_cases(rng):
    out = []
    for _ in range(10):
        n, p, b = 10, 3, 4
        t = rng.normal(size=(n, p))
        best = None
        for k in range(p, b + 1):
            for s in itertools.combinations(range(n), k):
                w = np.zeros(n)
                w[list(s)] = 1.0
                v = logdet_cov(t, w)
                if best is None or v < best[0] - 1e-12:
                    best = (v, list(s))
        out.append({"t": t.tolist(), "budget": float(b), "value": best[0], "support": best[1]})
    return out


def one_out_case(rng):
    n, p = 6, 2
    t = rng.normal(size=(n, p))
    w = rng.uniform(0.2, 1.0, n)
    vals = []
    for j in range(n):
        wj = w.copy()
        wj[j] = 0.0
        vals.append(logdet_cov(t, wj))
    q = rng.uniform(0.0, 0.5, n)
    return {
        "t": t.tolist(),
        "w": w.tolist(),
        "one_out": float(np.mean(vals)),
        "q": q.tolist(),
        "pof": logdet_cov(t, w * (1 - q)),
    }


def ha_case(rng):
    n, p, q = 5, 2, 0.1
    t = rng.normal(size=(n, p))
    total = 0.0
    for keep in itertools.product([0, 1], repeat=n):
        k = np.array(keep, dtype=float)
        prob = np.prod(np.where(k == 1, 1 - q, q))
        # fewer rows than parameters: exactly singular
        d = np.linalg.det(t.T @ np.diag(k) @ t) if k.sum() >= p else 0.0
        total += prob * max(d, 0.0) ** (1.0 / p)
    return {"t": t.tolist(), "q": q, "expectation": total}


def main():
    rng = np.random.default_rng(20240501)
    print(
        json.dumps(
            {
                "projection": projection_cases(rng),
                "fractional": fractional_case(rng),
                "exhaustive": exhaustive_cases(rng),
                "criteria": one_out_case(rng),
                "ha": ha_case(rng),
            },
            indent=1,
        )
    )


if __name__ == "__main__":
    main()
