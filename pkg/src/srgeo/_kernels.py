"""Compiled inner loops: polynomial field evaluation and a Dormand-Prince 5(4) integrator.

Fields are passed in the packed form produced by ``poly.compile_fields``.
Right-hand sides are selected by an integer ``kind``:

* ``FLOW``      x' = sum_i c_i X_i(x)                              state: x
* ``FLOW_VAR``  as FLOW plus d x/d x0 (n x n) and d x/d c (n x m)  state: x | Phi | S
* ``HAM``       normal Hamiltonian flow H = 1/2 sum_i <p, X_i(x)>^2  state: x | p
* ``HAM_VAR``   HAM plus d(x, p)/d p0 (2n x n)                     state: x | p | Phi_x | Phi_p
"""

import numpy as np
from numba import njit

FLOW = 0
FLOW_VAR = 1
HAM = 2
HAM_VAR = 3

OK = 0
MAX_STEPS = 1
ESCAPED = 2
STEP_UNDERFLOW = 3


@njit(cache=True, nogil=True)
def eval_fields(exps, coef, x, order):
    m, n, K = coef.shape
    maxdeg = 0
    for a in range(K):
        for k in range(n):
            if exps[a, k] > maxdeg:
                maxdeg = exps[a, k]
    pw = np.ones((n, maxdeg + 1))
    for k in range(n):
        for e in range(1, maxdeg + 1):
            pw[k, e] = pw[k, e - 1] * x[k]
    X = np.zeros((m, n))
    dX = np.zeros((m, n, n))
    ddX = np.zeros((m, n, n, n))
    g = np.zeros(n)
    hs = np.zeros((n, n))
    for a in range(K):
        v = 1.0
        for k in range(n):
            v *= pw[k, exps[a, k]]
        if order >= 1:
            for l in range(n):
                el = exps[a, l]
                if el == 0:
                    g[l] = 0.0
                    continue
                t = el * pw[l, el - 1]
                for k in range(n):
                    if k != l:
                        t *= pw[k, exps[a, k]]
                g[l] = t
        if order >= 2:
            for l in range(n):
                for l2 in range(n):
                    el = exps[a, l]
                    el2 = exps[a, l2]
                    if l == l2:
                        if el < 2:
                            hs[l, l2] = 0.0
                            continue
                        t = el * (el - 1) * pw[l, el - 2]
                    else:
                        if el == 0 or el2 == 0:
                            hs[l, l2] = 0.0
                            continue
                        t = el * el2 * pw[l, el - 1] * pw[l2, el2 - 1]
                    for k in range(n):
                        if k != l and k != l2:
                            t *= pw[k, exps[a, k]]
                    hs[l, l2] = t
        for i in range(m):
            for j in range(n):
                c = coef[i, j, a]
                if c == 0.0:
                    continue
                X[i, j] += c * v
                if order >= 1:
                    for l in range(n):
                        dX[i, j, l] += c * g[l]
                if order >= 2:
                    for l in range(n):
                        for l2 in range(n):
                            ddX[i, j, l, l2] += c * hs[l, l2]
    return X, dX, ddX


@njit(cache=True, nogil=True)
def _eval_into(exps, coef, x, order, pw, X, dX, ddX, g, hs):
    m, n, K = coef.shape
    maxdeg = pw.shape[1] - 1
    for k in range(n):
        pw[k, 0] = 1.0
        for e in range(1, maxdeg + 1):
            pw[k, e] = pw[k, e - 1] * x[k]
    X[:] = 0.0
    if order >= 1:
        dX[:] = 0.0
    if order >= 2:
        ddX[:] = 0.0
    for a in range(K):
        v = 1.0
        for k in range(n):
            v *= pw[k, exps[a, k]]
        if order >= 1:
            for l in range(n):
                el = exps[a, l]
                if el == 0:
                    g[l] = 0.0
                    continue
                t = el * pw[l, el - 1]
                for k in range(n):
                    if k != l:
                        t *= pw[k, exps[a, k]]
                g[l] = t
        if order >= 2:
            for l in range(n):
                for l2 in range(n):
                    el = exps[a, l]
                    el2 = exps[a, l2]
                    if l == l2:
                        if el < 2:
                            hs[l, l2] = 0.0
                            continue
                        t = el * (el - 1) * pw[l, el - 2]
                    else:
                        if el == 0 or el2 == 0:
                            hs[l, l2] = 0.0
                            continue
                        t = el * el2 * pw[l, el - 1] * pw[l2, el2 - 1]
                    for k in range(n):
                        if k != l and k != l2:
                            t *= pw[k, exps[a, k]]
                    hs[l, l2] = t
        for i in range(m):
            for j in range(n):
                c = coef[i, j, a]
                if c == 0.0:
                    continue
                X[i, j] += c * v
                if order >= 1:
                    for l in range(n):
                        dX[i, j, l] += c * g[l]
                if order >= 2:
                    for l in range(n):
                        for l2 in range(n):
                            ddX[i, j, l, l2] += c * hs[l, l2]


@njit(cache=True, nogil=True)
def _workspace(exps, coef):
    m, n, K = coef.shape
    maxdeg = 0
    for a in range(K):
        for k in range(n):
            if exps[a, k] > maxdeg:
                maxdeg = exps[a, k]
    return (np.ones((n, maxdeg + 1)), np.zeros((m, n)), np.zeros((m, n, n)),
            np.zeros((m, n, n, n)), np.zeros(n), np.zeros((n, n)), np.zeros(m),
            np.zeros((m, n)), np.zeros((m, n)), np.zeros((n, n)))


@njit(cache=True, nogil=True)
def _rhs_into(kind, y, out, exps, coef, ctrl, n, ws):
    pw, X, dX, ddX, g, hs, h, gk, dh, Jm = ws
    m = coef.shape[0]
    out[:] = 0.0
    if kind == FLOW or kind == FLOW_VAR:
        order = 1 if kind == FLOW_VAR else 0
        _eval_into(exps, coef, y[:n], order, pw, X, dX, ddX, g, hs)
        for i in range(m):
            ci = ctrl[i]
            if ci == 0.0:
                continue
            for j in range(n):
                out[j] += ci * X[i, j]
        if kind == FLOW_VAR:
            Jm[:] = 0.0
            for i in range(m):
                ci = ctrl[i]
                if ci == 0.0:
                    continue
                for j in range(n):
                    for k in range(n):
                        Jm[j, k] += ci * dX[i, j, k]
            # dPhi = J Phi, dS = J S + X^T
            for j in range(n):
                for c in range(n):
                    s = 0.0
                    for k in range(n):
                        s += Jm[j, k] * y[n + k * n + c]
                    out[n + j * n + c] = s
                base = n + n * n
                for c in range(m):
                    s = X[c, j]
                    for k in range(n):
                        s += Jm[j, k] * y[base + k * m + c]
                    out[base + j * m + c] = s
        return
    # Hamiltonian
    order = 2 if kind == HAM_VAR else 1
    _eval_into(exps, coef, y[:n], order, pw, X, dX, ddX, g, hs)
    for i in range(m):
        s = 0.0
        for j in range(n):
            s += y[n + j] * X[i, j]
        h[i] = s
    # gk[i, k] = d/dx_k <p, X_i>
    for i in range(m):
        for k in range(n):
            s = 0.0
            for j in range(n):
                s += y[n + j] * dX[i, j, k]
            gk[i, k] = s
    for j in range(n):
        s = 0.0
        for i in range(m):
            s += h[i] * X[i, j]
        out[j] = s
    for k in range(n):
        s = 0.0
        for i in range(m):
            s += h[i] * gk[i, k]
        out[n + k] = -s
    if kind == HAM_VAR:
        bx = 2 * n
        bp = 2 * n + n * n
        # dh[i, c] = sum_j Pp[j,c] X_ij + sum_k gk[i,k] Px[k,c]
        for i in range(m):
            for c in range(n):
                s = 0.0
                for j in range(n):
                    s += y[bp + j * n + c] * X[i, j] + gk[i, j] * y[bx + j * n + c]
                dh[i, c] = s
        for c in range(n):
            for j in range(n):
                s = 0.0
                for i in range(m):
                    s += dh[i, c] * X[i, j]
                    t = 0.0
                    for k in range(n):
                        t += dX[i, j, k] * y[bx + k * n + c]
                    s += h[i] * t
                out[bx + j * n + c] = s
            for k in range(n):
                s = 0.0
                for i in range(m):
                    # d gk[i,k] = sum_j dp_j dX_ijk + p_j sum_l ddX_ijkl dx_l
                    dg = 0.0
                    for j in range(n):
                        dg += y[bp + j * n + c] * dX[i, j, k]
                        t = 0.0
                        for l in range(n):
                            t += ddX[i, j, k, l] * y[bx + l * n + c]
                        dg += y[n + j] * t
                    s += dh[i, c] * gk[i, k] + h[i] * dg
                out[bp + k * n + c] = -s


@njit(cache=True, nogil=True)
def _rhs(kind, y, exps, coef, ctrl, n):
    out = np.zeros_like(y)
    _rhs_into(kind, y, out, exps, coef, ctrl, n, _workspace(exps, coef))
    return out


@njit(cache=True, nogil=True)
def _err_norm(err, y, ynew, rtol, atol):
    s = 0.0
    for i in range(y.shape[0]):
        sc = atol + rtol * max(abs(y[i]), abs(ynew[i]))
        r = err[i] / sc
        s += r * r
    return np.sqrt(s / y.shape[0])


# Dormand-Prince 5(4) tableau
_A21 = 0.2
_A31, _A32 = 3.0 / 40.0, 9.0 / 40.0
_A41, _A42, _A43 = 44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0
_A51, _A52, _A53, _A54 = 19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0
_A61, _A62, _A63, _A64, _A65 = (9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0,
                                -5103.0 / 18656.0)
_B1, _B3, _B4, _B5, _B6 = 35.0 / 384.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0
_E1, _E3, _E4, _E5, _E6, _E7 = (71.0 / 57600.0, -71.0 / 16695.0, 71.0 / 1920.0,
                                -17253.0 / 339200.0, 22.0 / 525.0, -1.0 / 40.0)


@njit(cache=True, nogil=True)
def integrate(kind, y0, t1, exps, coef, ctrl, n, rtol, atol, max_steps, lo, hi):
    """Integrate from t=0 to t=t1; returns (status, y, accepted_steps)."""
    y = y0.copy()
    if t1 == 0.0:
        return OK, y, 0
    ws = _workspace(exps, coef)
    N = y.shape[0]
    k1 = np.empty(N)
    k2 = np.empty(N)
    k3 = np.empty(N)
    k4 = np.empty(N)
    k5 = np.empty(N)
    k6 = np.empty(N)
    k7 = np.empty(N)
    yt = np.empty(N)
    ynew = np.empty(N)
    err = np.empty(N)
    sgn = 1.0 if t1 > 0 else -1.0
    T = abs(t1)
    t = 0.0
    _rhs_into(kind, y, k1, exps, coef, ctrl, n, ws)
    k1 *= sgn
    d0 = np.sqrt(np.mean(y * y))
    d1 = np.sqrt(np.mean(k1 * k1))
    if d0 < 1e-5 or d1 < 1e-5:
        h = 1e-3 * T
    else:
        h = 0.01 * d0 / d1
    h = min(max(h, 1e-6 * T), T)
    steps = 0
    tries = 0
    while t < T:
        if tries >= max_steps:
            return MAX_STEPS, y, steps
        tries += 1
        if t + h > T:
            h = T - t
        for i in range(N):
            yt[i] = y[i] + h * (_A21 * k1[i])
        _rhs_into(kind, yt, k2, exps, coef, ctrl, n, ws)
        k2 *= sgn
        for i in range(N):
            yt[i] = y[i] + h * (_A31 * k1[i] + _A32 * k2[i])
        _rhs_into(kind, yt, k3, exps, coef, ctrl, n, ws)
        k3 *= sgn
        for i in range(N):
            yt[i] = y[i] + h * (_A41 * k1[i] + _A42 * k2[i] + _A43 * k3[i])
        _rhs_into(kind, yt, k4, exps, coef, ctrl, n, ws)
        k4 *= sgn
        for i in range(N):
            yt[i] = y[i] + h * (_A51 * k1[i] + _A52 * k2[i] + _A53 * k3[i] + _A54 * k4[i])
        _rhs_into(kind, yt, k5, exps, coef, ctrl, n, ws)
        k5 *= sgn
        for i in range(N):
            yt[i] = y[i] + h * (_A61 * k1[i] + _A62 * k2[i] + _A63 * k3[i] + _A64 * k4[i]
                                + _A65 * k5[i])
        _rhs_into(kind, yt, k6, exps, coef, ctrl, n, ws)
        k6 *= sgn
        for i in range(N):
            ynew[i] = y[i] + h * (_B1 * k1[i] + _B3 * k3[i] + _B4 * k4[i] + _B5 * k5[i]
                                  + _B6 * k6[i])
        _rhs_into(kind, ynew, k7, exps, coef, ctrl, n, ws)
        k7 *= sgn
        for i in range(N):
            err[i] = h * (_E1 * k1[i] + _E3 * k3[i] + _E4 * k4[i] + _E5 * k5[i] + _E6 * k6[i]
                          + _E7 * k7[i])
        en = _err_norm(err, y, ynew, rtol, atol)
        if not np.isfinite(en):
            h *= 0.2
            if h < 1e-14 * T:
                return STEP_UNDERFLOW, y, steps
            continue
        if en <= 1.0:
            t += h
            y[:] = ynew
            k1[:] = k7
            steps += 1
            for j in range(lo.shape[0]):
                if y[j] < lo[j] or y[j] > hi[j]:
                    return ESCAPED, y, steps
            fac = 5.0 if en == 0.0 else min(5.0, max(0.2, 0.9 * en ** -0.2))
        else:
            fac = max(0.2, 0.9 * en ** -0.2)
        h *= fac
        if h < 1e-14 * T and t < T:
            return STEP_UNDERFLOW, y, steps
    return OK, y, steps


@njit(cache=True, nogil=True)
def chain_flows(exps, coef, V, y0, rtol, atol, max_steps, lo, hi):
    """Endpoint of successive flows exp(V[0].X), exp(V[1].X), ... and its Jacobian wrt V.

    Returns (status, y_end, J) with J of shape (n, N*m), column block k = d y_end / d V[k].
    """
    N, m = V.shape
    n = y0.shape[0]
    Phis = np.zeros((N, n, n))
    Ss = np.zeros((N, n, m))
    y = y0.copy()
    J = np.zeros((n, N * m))
    for k in range(N):
        z0 = np.zeros(n + n * n + n * m)
        z0[:n] = y
        for j in range(n):
            z0[n + j * n + j] = 1.0
        st, z, _ = integrate(FLOW_VAR, z0, 1.0, exps, coef, V[k], n, rtol, atol, max_steps, lo, hi)
        if st != OK:
            return st, z[:n].copy(), J
        y = z[:n].copy()
        Phis[k] = z[n:n + n * n].reshape((n, n))
        Ss[k] = z[n + n * n:].reshape((n, m))
    M = np.eye(n)
    for k in range(N - 1, -1, -1):
        J[:, k * m:(k + 1) * m] = M @ Ss[k]
        M = M @ Phis[k]
    return OK, y, J


@njit(cache=True, nogil=True)
def homogeneous_radius(u, w):
    """Per row, t > 0 with sum_k (u_k t^-w_k)^2 = 1 (0 for the zero row).

    In s = log t the residual is decreasing and convex, so Newton from the left
    endpoint s0 = log max_k |u_k|^(1/w_k), where it is nonnegative, is monotone.
    """
    N, n = u.shape
    out = np.zeros(N)
    for r in range(N):
        s = -np.inf
        for k in range(n):
            a = abs(u[r, k])
            if a > 0.0:
                v = np.log(a) / w[k]
                if v > s:
                    s = v
        if s == -np.inf:
            continue
        for _ in range(60):
            F = -1.0
            dF = 0.0
            for k in range(n):
                a = u[r, k]
                if a != 0.0:
                    e = a * a * np.exp(-2.0 * w[k] * s)
                    F += e
                    dF -= 2.0 * w[k] * e
            step = F / dF
            s -= step
            if abs(step) < 1e-15 * max(1.0, abs(s)):
                break
        out[r] = np.exp(s)
    return out


@njit(cache=True, nogil=True)
def poly_eval_batch(exps, coef, X):
    """Rows of X through the packed polynomial map: out[r, j] = sum_a coef[j, a] X[r]^exps[a]."""
    N, nv = X.shape
    nout, K = coef.shape
    maxdeg = 0
    for a in range(K):
        for k in range(nv):
            if exps[a, k] > maxdeg:
                maxdeg = exps[a, k]
    out = np.zeros((N, nout))
    pw = np.ones((nv, maxdeg + 1))
    for r in range(N):
        for k in range(nv):
            for e in range(1, maxdeg + 1):
                pw[k, e] = pw[k, e - 1] * X[r, k]
        for a in range(K):
            v = 1.0
            for k in range(nv):
                v *= pw[k, exps[a, k]]
            for j in range(nout):
                c = coef[j, a]
                if c != 0.0:
                    out[r, j] += c * v
    return out


@njit(cache=True, nogil=True)
def gauge_eval(u, w, table, lo, step):
    """Homogeneous norm t * G(sigma) with u = delta_t(sigma), |sigma| = 1.

    ``table`` holds G on a uniform grid over hyperspherical angles (polar
    angles from the last coordinate down, azimuth of (sigma_1, sigma_2) last),
    interpolated multilinearly.
    """
    N, n = u.shape
    d = n - 1
    t = homogeneous_radius(u, w)
    out = np.zeros(N)
    sig = np.empty(n)
    ang = np.empty(d)
    base = np.empty(d, dtype=np.int64)
    frac = np.empty(d)
    shape = table.shape
    strides = np.empty(d, dtype=np.int64)
    s = 1
    for i in range(d - 1, -1, -1):
        strides[i] = s
        s *= shape[i]
    flat = table.ravel()
    for r in range(N):
        if t[r] == 0.0:
            continue
        for k in range(n):
            sig[k] = u[r, k] / t[r] ** w[k]
        rest = 0.0
        for k in range(n):
            rest += sig[k] * sig[k]
        rest = np.sqrt(rest)
        for i in range(d - 1):
            c = sig[n - 1 - i] / max(rest, 1e-300)
            c = min(1.0, max(-1.0, c))
            ang[i] = np.arccos(c)
            rest = np.sqrt(max(rest * rest - sig[n - 1 - i] ** 2, 0.0))
        a = np.arctan2(sig[1], sig[0])
        if a < 0.0:
            a += 2.0 * np.pi
        ang[d - 1] = a
        for i in range(d):
            p = (ang[i] - lo[i]) / step[i]
            b = int(np.floor(p))
            if b < 0:
                b = 0
            if b > shape[i] - 2:
                b = shape[i] - 2
            base[i] = b
            frac[i] = p - b
        acc = 0.0
        for corner in range(1 << d):
            wt = 1.0
            idx = 0
            for i in range(d):
                if (corner >> i) & 1:
                    wt *= frac[i]
                    idx += (base[i] + 1) * strides[i]
                else:
                    wt *= 1.0 - frac[i]
                    idx += base[i] * strides[i]
            acc += wt * flat[idx]
        out[r] = t[r] * acc
    return out
