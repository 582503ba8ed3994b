"""Flows of polynomial fields, exponential coordinates of the first kind, dilations."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import _kernels as K
from .frame_core import PrivilegedFrame
from .poly import PolyVectorField, compile_fields


class FlowError(RuntimeError):
    pass


class ChartEscape(FlowError):
    pass


@dataclass(frozen=True)
class FlowConfig:
    rel_tol: float = 1e-10
    abs_tol: float = 1e-12
    max_step_count: int = 100_000
    chart_box: tuple[tuple[float, ...], tuple[float, ...]] | None = None

    def __post_init__(self):
        if self.rel_tol <= 0 or self.abs_tol <= 0:
            raise ValueError("tolerances must be positive")

    def bounds(self, n: int) -> tuple[np.ndarray, np.ndarray]:
        if self.chart_box is None:
            return np.full(n, -np.inf), np.full(n, np.inf)
        lo, hi = self.chart_box
        return np.asarray(lo, float), np.asarray(hi, float)


DEFAULT_FLOW = FlowConfig()


def _raise_status(status: int, what: str):
    if status == K.ESCAPED:
        raise ChartEscape(f"{what}: trajectory left the chart box")
    if status == K.MAX_STEPS:
        raise FlowError(f"{what}: step budget exhausted")
    if status == K.STEP_UNDERFLOW:
        raise FlowError(f"{what}: step size underflow")


class _Packed:
    """Fields packed once for the compiled kernels."""

    __slots__ = ("exps", "coef", "n", "m")

    def __init__(self, fields: Sequence[PolyVectorField]):
        self.exps, self.coef = compile_fields(list(fields))
        self.m, self.n = self.coef.shape[0], self.coef.shape[1]


_pack_cache: dict[tuple, _Packed] = {}


def packed(fields: Sequence[PolyVectorField]) -> _Packed:
    key = tuple(fields)
    p = _pack_cache.get(key)
    if p is None:
        if len(_pack_cache) > 256:
            _pack_cache.clear()
        p = _pack_cache[key] = _Packed(fields)
    return p


def flow(X: PolyVectorField, q, t: float, cfg: FlowConfig = DEFAULT_FLOW) -> np.ndarray:
    """exp(tX)(q) by adaptive Dormand-Prince 5(4)."""
    pk = packed([X])
    q = np.asarray(q, dtype=float)
    lo, hi = cfg.bounds(pk.n)
    st, y, _ = K.integrate(K.FLOW, q.copy(), float(t), pk.exps, pk.coef, np.ones(1), pk.n,
                           cfg.rel_tol, cfg.abs_tol, cfg.max_step_count, lo, hi)
    _raise_status(st, "flow")
    return y


def flow_combination(fields: Sequence[PolyVectorField], coefs, q, t: float = 1.0,
                     cfg: FlowConfig = DEFAULT_FLOW, jacobian: bool = False):
    """exp(t * sum_i coefs[i] X_i)(q); with ``jacobian`` also d/dq and d/dcoefs (t = 1 scaling)."""
    pk = packed(fields)
    n, m = pk.n, pk.m
    q = np.asarray(q, dtype=float)
    c = np.asarray(coefs, dtype=float) * float(t)
    lo, hi = cfg.bounds(n)
    if not jacobian:
        st, y, _ = K.integrate(K.FLOW, q.copy(), 1.0, pk.exps, pk.coef, c, n,
                               cfg.rel_tol, cfg.abs_tol, cfg.max_step_count, lo, hi)
        _raise_status(st, "flow")
        return y
    z0 = np.zeros(n + n * n + n * m)
    z0[:n] = q
    z0[n:n + n * n] = np.eye(n).ravel()
    st, z, _ = K.integrate(K.FLOW_VAR, z0, 1.0, pk.exps, pk.coef, c, n,
                           cfg.rel_tol, cfg.abs_tol, cfg.max_step_count, lo, hi)
    _raise_status(st, "flow")
    return z[:n], z[n:n + n * n].reshape(n, n), z[n + n * n:].reshape(n, m)


def exp_coords(frame: PrivilegedFrame | Sequence[PolyVectorField], q, x,
               cfg: FlowConfig = DEFAULT_FLOW, jacobian: bool = False):
    """F_{q,X}(x) = exp(x_1 X_1 + ... + x_n X_n)(q); optionally with dF/dx."""
    fields = frame.fields if isinstance(frame, PrivilegedFrame) else tuple(frame)
    x = np.asarray(x, dtype=float)
    q = np.asarray(q, dtype=float)
    if not np.any(x):
        return (q.copy(), _frame_at(fields, q)) if jacobian else q.copy()
    if jacobian:
        y, _, S = flow_combination(fields, x, q, 1.0, cfg, jacobian=True)
        return y, S
    return flow_combination(fields, x, q, 1.0, cfg)


def _frame_at(fields, q) -> np.ndarray:
    return np.stack([f(q) for f in fields], axis=-1)


def exp_coords_inverse(frame, q, p, cfg: FlowConfig = DEFAULT_FLOW, x0=None,
                       tol: float = 1e-9, max_iter: int = 50) -> np.ndarray:
    """Solve F_{q,X}(x) = p by damped Newton with variational-equation Jacobians."""
    fields = frame.fields if isinstance(frame, PrivilegedFrame) else tuple(frame)
    q = np.asarray(q, dtype=float)
    p = np.asarray(p, dtype=float)
    if x0 is None:
        x = np.linalg.solve(_frame_at(fields, q), p - q)
    else:
        x = np.asarray(x0, dtype=float).copy()
    scale = 1.0 + np.linalg.norm(p)
    try:
        y, J = exp_coords(fields, q, x, cfg, jacobian=True)
    except FlowError:
        x = np.zeros_like(q)
        y, J = exp_coords(fields, q, x, cfg, jacobian=True)
    r = y - p
    for _ in range(max_iter):
        nr = np.linalg.norm(r)
        if nr <= tol * scale:
            return x
        try:
            dx = np.linalg.solve(J, -r)
        except np.linalg.LinAlgError as exc:
            raise FlowError("singular Jacobian in exponential-coordinate inverse") from exc
        lam = 1.0
        while lam > 1e-4:
            xt = x + lam * dx
            try:
                yt, Jt = exp_coords(fields, q, xt, cfg, jacobian=True)
            except FlowError:
                lam *= 0.5
                continue
            rt = yt - p
            if np.linalg.norm(rt) < (1 - 1e-4 * lam) * nr or nr < 1e3 * tol * scale:
                x, r, J = xt, rt, Jt
                break
            lam *= 0.5
        else:
            break
    if np.linalg.norm(r) <= tol * scale:
        return x
    raise FlowError(f"Newton did not converge: point {tuple(p)} outside the coordinate patch")


@dataclass(frozen=True)
class Dilation:
    weights: tuple[int, ...]
    r: float

    def __post_init__(self):
        if self.r <= 0:
            raise ValueError("dilation factor must be positive")

    def factors(self) -> np.ndarray:
        return float(self.r) ** np.asarray(self.weights, dtype=float)


def dilate(x, d: Dilation) -> np.ndarray:
    return np.asarray(x, dtype=float) * d.factors()


def coordinate_frame(frame: PrivilegedFrame, q, sample, cfg: FlowConfig = DEFAULT_FLOW) -> np.ndarray:
    """Coefficients of the pulled-back frame: row i is X~_i^q(sample) = dF(sample)^-1 X_i(F(sample))."""
    y, J = exp_coords(frame, q, sample, cfg, jacobian=True)
    Xy = frame.matrix(y)
    return np.linalg.solve(J, Xy).T


def rescaled_frame(frame: PrivilegedFrame, q, r: float, sample,
                   cfg: FlowConfig = DEFAULT_FLOW) -> np.ndarray:
    """Row i is r^{w_i} (delta_{1/r})_* X~_i^q evaluated at ``sample``."""
    w = np.asarray(frame.weights, dtype=float)
    u = dilate(sample, Dilation(frame.weights, r))
    A = coordinate_frame(frame, q, u, cfg)
    return A * (float(r) ** (w[:, None] - w[None, :]))
