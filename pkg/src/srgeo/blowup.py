"""Numerical checks of the blow-up limits: rescaled distances and frames against the tangent
structure, coordinate changes against linear isometries, uniform radii and ball diameters."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.stats import qmc

from ._parallel import ordered_map
from .distance import (DistanceError, diameter_estimate, ball_boundary_sample, shooting_solve,
                       structure)
from .flows import (DEFAULT_FLOW, Dilation, FlowConfig, FlowError, dilate, exp_coords,
                    exp_coords_inverse)
from .frame_core import PrivilegedFrame
from .jets import pulled_back_coefficient_jets
from .nilpotent import NilpotentFrame, nilpotent_frame_at
from .poly import Polynomial

MONOTONE_TOL = 1e-6
# Deviations below this are shooting round-off; a nilpotent structure sits here at every radius.
NOISE_FLOOR = 1e-9

_tangent_cache: dict[tuple, tuple[float, np.ndarray]] = {}


def tangent_distance(nf: NilpotentFrame, x, y, attempts: int = 12, seed: int = 0):
    """Tangent distance d^(x, y) with its time-1 covector at x; cached per nilpotent frame."""
    key = (nf.key(), tuple(np.round(x, 15)), tuple(np.round(y, 15)))
    hit = _tangent_cache.get(key)
    if hit is not None:
        return hit
    sr = structure(nf.horizontal)
    L, P, _ = shooting_solve(sr, x, y, attempts, seed=seed)
    if P is None:
        raise DistanceError(f"tangent distance failed for {tuple(x)} -> {tuple(y)}")
    if len(_tangent_cache) > 50_000:
        _tangent_cache.clear()
    _tangent_cache[key] = (L, P)
    return L, P


def rescaled_distance(frame: PrivilegedFrame, q, r: float, x, y,
                      cfg: FlowConfig = DEFAULT_FLOW, tangent_covector=None,
                      attempts: int = 12) -> float:
    """(1/r) d~_q(delta_r x, delta_r y), evaluated through the exponential chart at q.

    The chart is an isometry onto its image, so the local distance equals the
    manifold distance between F_q(delta_r x) and F_q(delta_r y).  A tangent
    covector at x (time-1, nilpotent frame) is rescaled and pushed forward as a
    warm start.
    """
    if r <= 0:
        raise ValueError("r must be positive")
    w = np.asarray(frame.weights, float)
    u = dilate(x, Dilation(frame.weights, r))
    v = dilate(y, Dilation(frame.weights, r))
    a, Ja = exp_coords(frame, q, u, cfg, jacobian=True)
    b = exp_coords(frame, q, v, cfg)
    sr = structure(frame.horizontal, cfg.chart_box)
    hints = []
    if tangent_covector is not None:
        hints.append(np.linalg.solve(Ja.T, np.asarray(tangent_covector) * r ** (2.0 - w)))
    L, P, _ = shooting_solve(sr, a, b, attempts, hints)
    if P is None and attempts < 12:
        L, P, _ = shooting_solve(sr, a, b, 12, hints)
    if P is None:
        raise DistanceError(f"rescaled distance failed at r={r} for {tuple(x)} -> {tuple(y)}")
    return L / r


def rescaled_distance_sweep(frame: PrivilegedFrame, q, radii: Sequence[float], x, y,
                            cfg: FlowConfig = DEFAULT_FLOW, tangent_covector=None) -> dict:
    """rescaled_distance over several radii by continuation from the tangent geodesic.

    Radii are solved in increasing order; each solution, normalized to the
    tangent scale in chart coordinates, warm-starts the next radius so the
    minimizing branch is followed.  A full multi-start solve is the fallback.
    """
    w = np.asarray(frame.weights, float)
    sr = structure(frame.horizontal, cfg.chart_box)
    normalized = None if tangent_covector is None else np.asarray(tangent_covector, float)
    out = {}
    for r in sorted(float(v) for v in radii):
        u = dilate(x, Dilation(frame.weights, r))
        v = dilate(y, Dilation(frame.weights, r))
        a, Ja = exp_coords(frame, q, u, cfg, jacobian=True)
        b = exp_coords(frame, q, v, cfg)
        hints = [] if normalized is None else [np.linalg.solve(Ja.T, normalized * r ** (2.0 - w))]
        L, P, _ = shooting_solve(sr, a, b, 0, hints)
        if P is None:
            L, P, _ = shooting_solve(sr, a, b, 12, hints)
        if P is None:
            raise DistanceError(f"rescaled distance failed at r={r} for {tuple(x)} -> {tuple(y)}")
        normalized = (Ja.T @ P) / r ** (2.0 - w)
        out[r] = L / r
    return out


@dataclass
class ConvergenceReport:
    radii: tuple[float, ...]
    sup_deviation: list[float]
    per_q: list[list[float]]  # per_q[k][i]: radius k, base point i
    sample: str
    q_list: list[tuple[float, ...]] = field(default_factory=list)

    def __post_init__(self):
        if any(b >= a for a, b in zip(self.radii, self.radii[1:])):
            raise ValueError("radii must be strictly decreasing")

    @property
    def monotone_decreasing(self) -> bool:
        """Strict decrease, except that two consecutive values at the noise floor count as converged."""
        d = self.sup_deviation
        return all(b < a or max(a, b) < NOISE_FLOOR for a, b in zip(d, d[1:]))

    @property
    def at_noise_floor(self) -> bool:
        return max(self.sup_deviation) < NOISE_FLOOR

    @property
    def final_deviation(self) -> float:
        return self.sup_deviation[-1]

    def verdict(self, threshold: float = 0.05) -> bool:
        return self.monotone_decreasing and self.final_deviation < threshold

    def as_dict(self) -> dict:
        return {"radii": list(self.radii), "sup_deviation": self.sup_deviation,
                "per_q": self.per_q, "sample": self.sample,
                "monotone_decreasing": self.monotone_decreasing,
                "at_noise_floor": self.at_noise_floor,
                "final_deviation": self.final_deviation}

    def csv_rows(self) -> list[tuple[float, int, float]]:
        return [(r, i, dev) for k, r in enumerate(self.radii) for i, dev in enumerate(self.per_q[k])]


def sample_pairs(n: int, count: int, box: float, seed: int) -> np.ndarray:
    rng = np.random.Generator(np.random.Philox(seed))
    return rng.uniform(-box, box, size=(count, 2, n))


def q_grid(center, half_width: float, per_axis: int = 3,
           max_axes: int = 3) -> list[tuple[float, ...]]:
    """Tensor grid around ``center`` varying only its first ``max_axes`` coordinates."""
    axes = [np.linspace(c - half_width, c + half_width, per_axis) if i < max_axes else
            np.array([float(c)]) for i, c in enumerate(center)]
    mesh = np.meshgrid(*axes, indexing="ij")
    return [tuple(float(v) for v in pt) for pt in np.stack([m.ravel() for m in mesh], axis=-1)]


def distance_convergence(frame: PrivilegedFrame, q_list, radii: Sequence[float],
                         pair_count: int = 50, box: float = 0.5, seed: int = 0,
                         cfg: FlowConfig = DEFAULT_FLOW) -> ConvergenceReport:
    """sup over sampled pairs of |rescaled_distance - d^_q|, per radius and base point."""
    radii = tuple(float(r) for r in radii)
    pairs = sample_pairs(frame.dim, pair_count, box, seed)

    qs = [tuple(map(float, q)) for q in q_list]
    # Serial, in grid order: the cache is shared by tangent frames equal up to rounding,
    # so which base point fills an entry must not depend on thread scheduling.
    tangents = []
    for q in qs:
        nf = nilpotent_frame_at(frame, q, cfg)
        tangents.append([tangent_distance(nf, x, y, seed=seed) for x, y in pairs])

    def cell(item):
        q, tang = item
        devs = [0.0] * len(radii)
        for (x, y), (d_hat, P) in zip(pairs, tang):
            vals = rescaled_distance_sweep(frame, q, radii, x, y, cfg, P)
            for k, r in enumerate(radii):
                devs[k] = max(devs[k], abs(vals[r] - d_hat))
        return devs

    cols = ordered_map(cell, list(zip(qs, tangents)))
    per_q = [[cols[i][k] for i in range(len(cols))] for k in range(len(radii))]
    sup = [max(row) for row in per_q]
    return ConvergenceReport(radii, sup, per_q,
                             f"{pair_count} pairs in [-{box},{box}]^{frame.dim}, seed {seed}", qs)


@dataclass
class FrameConvergenceReport:
    radii: tuple[float, ...]
    deviation: list[float]
    derivative_order: int
    ratios: list[float]
    noise_floor: float = 1e-8

    @property
    def linear_rate(self) -> bool:
        """Halving r divides the deviation by a factor in [1.5, 2.5] (or it is pure noise)."""
        if max(self.deviation) < self.noise_floor:
            return True
        return all(1.5 <= q <= 2.5 for q in self.ratios)

    def as_dict(self) -> dict:
        return {"radii": list(self.radii), "deviation": self.deviation,
                "derivative_order": self.derivative_order, "ratios": self.ratios,
                "linear_rate": self.linear_rate}


def _shifted_taylor(p: Polynomial, u, order: int) -> dict:
    n = p.nvars
    shift = [Polynomial.variable(n, k) + float(u[k]) for k in range(n)]
    return {e: c for e, c in p.compose(shift).terms.items() if sum(e) <= order}


def frame_convergence(frame: PrivilegedFrame, q, radii: Sequence[float], box: float = 0.5,
                      derivative_order: int = 0, samples: int = 8,
                      cfg: FlowConfig = DEFAULT_FLOW) -> FrameConvergenceReport:
    """sup over sample points of Taylor-coefficient deviations (orders <= derivative_order)
    between the rescaled coordinate frame and the nilpotent frame."""
    nf = nilpotent_frame_at(frame, q, cfg)
    n = frame.dim
    w = np.asarray(frame.weights)
    pts = (2.0 * qmc.Halton(d=n, scramble=False).random(samples + 1)[1:] - 1.0) * box
    radii = tuple(float(r) for r in radii)
    b_taylor = [[[_shifted_taylor(c, u, derivative_order) for c in f.coeffs]
                 for f in nf.fields] for u in pts]
    devs = []
    for r in radii:
        dev = 0.0
        for s, u in enumerate(pts):
            alg, A = pulled_back_coefficient_jets(frame.fields, q, dilate(u, Dilation(frame.weights, r)),
                                                  derivative_order)
            for i in range(n):
                for j in range(n):
                    bt = b_taylor[s][i][j]
                    for idx, e in enumerate(alg.monos):
                        a = A[i, j, idx] * r ** (w[i] - w[j] + int(np.dot(w, e)))
                        dev = max(dev, abs(a - bt.get(e, 0.0)))
        devs.append(dev)
    ratios = [a / b if b > 0 else math.inf for a, b in zip(devs, devs[1:])]
    return FrameConvergenceReport(radii, devs, derivative_order, ratios)


@dataclass
class IsometryReport:
    epsilons: tuple[float, ...]
    fit_residual: list[float]
    orthogonality: list[float]
    off_block: list[float]
    prediction_residual: list[float]
    metric_isometry: float
    L_hat: list[list[float]]
    L_pred: list[list[float]]

    @property
    def decreasing(self) -> bool:
        return self.orthogonality[-1] <= self.orthogonality[0] + 1e-12

    def as_dict(self) -> dict:
        return {"epsilons": list(self.epsilons), "fit_residual": self.fit_residual,
                "orthogonality": self.orthogonality, "off_block": self.off_block,
                "prediction_residual": self.prediction_residual,
                "metric_isometry": self.metric_isometry, "L_hat": self.L_hat,
                "L_pred": self.L_pred, "decreasing": self.decreasing}


def coordinate_change_isometry(frame_X: PrivilegedFrame, frame_Y: PrivilegedFrame, p,
                               epsilons: Sequence[float] = (0.1, 0.03, 0.01), box: float = 0.5,
                               grid: int = 3, pair_count: int = 10, seed: int = 0,
                               cfg: FlowConfig = DEFAULT_FLOW) -> IsometryReport:
    """Fit H_eps = delta_{1/eps} o F_Y^-1 o F_X o delta_eps by a linear map and test it."""
    if tuple(frame_X.weights) != tuple(frame_Y.weights):
        raise ValueError("frames have different weights")
    n = frame_X.dim
    w = np.asarray(frame_X.weights)
    p = np.asarray(p, float)
    raw = np.linalg.solve(frame_Y.matrix(p), frame_X.matrix(p))
    same = w[:, None] == w[None, :]
    L_pred = np.where(same, raw, 0.0)
    axes = [np.linspace(-box, box, grid)] * n
    xs = np.stack([m.ravel() for m in np.meshgrid(*axes, indexing="ij")], axis=-1)
    xs = xs[np.linalg.norm(xs, axis=1) > 0]
    fit, orth, off, pred = [], [], [], []
    L_hat = np.eye(n)
    for eps in epsilons:
        d = Dilation(frame_X.weights, eps)
        H = []
        for x in xs:
            u = dilate(x, d)
            pt = exp_coords(frame_X, p, u, cfg)
            yv = exp_coords_inverse(frame_Y, p, pt, cfg, x0=raw @ u, tol=1e-14)
            H.append(yv / d.factors())
        H = np.array(H)
        L_hat = np.linalg.lstsq(xs, H, rcond=None)[0].T
        fit.append(float(np.abs(H - xs @ L_hat.T).max()))
        orth.append(float(np.linalg.norm(L_hat.T @ L_hat - np.eye(n), 2)))
        off.append(float(np.sqrt(np.sum(np.where(same, 0.0, L_hat) ** 2))))
        pred.append(float(np.abs(L_hat - L_pred).max()))
    nfX = nilpotent_frame_at(frame_X, p, cfg)
    nfY = nilpotent_frame_at(frame_Y, p, cfg)
    iso = 0.0
    for x, y in sample_pairs(n, pair_count, box, seed):
        dX, _ = tangent_distance(nfX, x, y, seed=seed)
        dY, _ = tangent_distance(nfY, L_hat @ x, L_hat @ y, seed=seed)
        iso = max(iso, abs(dY - dX))
    return IsometryReport(tuple(float(e) for e in epsilons), fit, orth, off, pred, iso,
                          L_hat.tolist(), L_pred.tolist())


@dataclass
class UniformRadiusReport:
    per_q: list[float]
    q_list: list[tuple[float, ...]]

    @property
    def r0(self) -> float:
        return min(self.per_q)

    def as_dict(self) -> dict:
        return {"per_q": self.per_q, "r0": self.r0,
                "q_list": [list(q) for q in self.q_list]}


def _ball_inside(frame, q, t, lo, hi, cfg, count, seed) -> bool:
    try:
        pts = ball_boundary_sample(frame.horizontal, q, t, count, cfg.chart_box, seed)
        for pt in pts:
            x = exp_coords_inverse(frame, q, pt, cfg)
            if np.any(x < lo) or np.any(x > hi):
                return False
    except (FlowError, DistanceError):
        return False
    return True


def uniform_radius_estimate(frame: PrivilegedFrame, q_list, V_box, cfg: FlowConfig = DEFAULT_FLOW,
                            count: int = 16, iters: int = 20, seed: int = 7) -> UniformRadiusReport:
    """R(q) = sup{t : B(q, t) inside F_q(V)} by bisection on sphere samples."""
    lo = np.asarray(V_box[0], float)
    hi = np.asarray(V_box[1], float)
    if np.any(lo >= 0) or np.any(hi <= 0):
        raise ValueError("V_box must contain the origin in its interior")
    out = []
    for q in q_list:
        q = np.asarray(q, float)
        t_lo, t_hi = 0.0, 0.05
        while _ball_inside(frame, q, t_hi, lo, hi, cfg, count, seed):
            t_lo, t_hi = t_hi, 2 * t_hi
            if t_hi > 1e3:
                break
        for _ in range(iters):
            mid = 0.5 * (t_lo + t_hi)
            if _ball_inside(frame, q, mid, lo, hi, cfg, count, seed):
                t_lo = mid
            else:
                t_hi = mid
        out.append(t_lo)
    return UniformRadiusReport(out, [tuple(map(float, q)) for q in q_list])


@dataclass
class DiameterReport:
    radii: tuple[float, ...]
    ratios: list[list[float]]  # ratios[k][i]: radius k, base point i
    eps: float

    @property
    def min_ratio(self) -> list[float]:
        return [min(row) for row in self.ratios]

    @property
    def max_ratio(self) -> float:
        return max(max(row) for row in self.ratios)

    @property
    def nondecreasing(self) -> bool:
        m = self.min_ratio
        return all(b >= a - MONOTONE_TOL for a, b in zip(m, m[1:]))

    @property
    def passed(self) -> bool:
        return (1 - self.eps <= self.min_ratio[-1] and self.max_ratio <= 1 + 1e-3
                and self.nondecreasing)

    def as_dict(self) -> dict:
        return {"radii": list(self.radii), "ratios": self.ratios, "min_ratio": self.min_ratio,
                "max_ratio": self.max_ratio, "nondecreasing": self.nondecreasing,
                "eps": self.eps, "passed": self.passed}


def diameter_asymptotics(frame_h, q_list, radii: Sequence[float], count: int = 16,
                         eps: float = 0.05, domain=None, seed: int = 7) -> DiameterReport:
    """diam(B(q, r)) / 2r per (q, r); radii are visited from largest to smallest."""
    radii = tuple(sorted((float(r) for r in radii), reverse=True))
    qs = [tuple(map(float, q)) for q in q_list]

    def cell(q):
        return [diameter_estimate(frame_h, q, r, count, domain, seed).ratio for r in radii]

    cols = ordered_map(cell, qs)
    ratios = [[cols[i][k] for i in range(len(qs))] for k in range(len(radii))]
    return DiameterReport(radii, ratios, eps)
