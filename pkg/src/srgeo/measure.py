"""Surface measures on hypersurfaces, the spherical factor of tangent balls, Federer densities
and the integral identities relating them."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.interpolate import RegularGridInterpolator
from scipy.optimize import brentq

from . import _kernels as K
from .distance import (NEWTON_STEP_BUDGET, DistanceError, _ham_endpoint, diameter_estimate, shooting_solve,
                       sphere_design, structure)
from .frame_core import FrameError, MetricExtension, PrivilegedFrame, numerical_rank
from .nilpotent import GroupLaw, NilpotentFrame, nilpotent_frame_at
from .poly import Polynomial, PolyVectorField, frame_matrix

CHARACTERISTIC_TOL = 1e-8
GAUGE_TOL = 1e-9
RAY_TOL = 1e-9
VALIDATION_STARTS = 6
VALIDATION_TOL = 1e-6
ROW_RESTARTS = 12
COARSE_STRIDE = 16
UPSAMPLE = 8


class MeasureError(RuntimeError):
    pass


# -- data types -----------------------------------------------------------------


@dataclass(frozen=True)
class VolumeForm:
    """omega = density(x) dx^1 ^ ... ^ dx^n."""

    density: Polynomial

    def __call__(self, x) -> np.ndarray:
        return self.density(x)

    def validate(self, probes) -> None:
        for q in probes:
            if float(self.density(np.asarray(q, float))) <= 0:
                raise ValueError(f"volume density not positive at {tuple(q)}")

    def scaled(self, c: float) -> "VolumeForm":
        return VolumeForm(self.density * float(c))


def lebesgue(n: int, c: float = 1.0) -> VolumeForm:
    return VolumeForm(Polynomial.constant(n, c))


@dataclass(frozen=True)
class HypersurfacePatch:
    """Polynomial parametrization s -> Phi(s) over a parameter box, optionally with an
    implicit equation f = 0 for the same surface."""

    param: tuple[Polynomial, ...]
    box: tuple[tuple[float, ...], tuple[float, ...]]
    implicit: Polynomial | None = None
    orientation: int = 1

    def __post_init__(self):
        k = self.param[0].nvars
        if any(p.nvars != k for p in self.param):
            raise ValueError("parametrization components disagree on parameter count")
        if len(self.param) != k + 1:
            raise ValueError("a hypersurface patch needs n components in n - 1 parameters")
        if len(self.box[0]) != k or len(self.box[1]) != k:
            raise ValueError("parameter box has wrong dimension")
        if self.implicit is not None and self.implicit.nvars != k + 1:
            raise ValueError("implicit equation has wrong dimension")

    @property
    def dim(self) -> int:
        return len(self.param)

    def point(self, s) -> np.ndarray:
        s = np.asarray(s, float)
        return np.stack([p(s) for p in self.param], axis=-1)

    def tangents(self, s) -> np.ndarray:
        """(..., n, n-1): column j is d Phi / d s_j."""
        s = np.asarray(s, float)
        k = self.dim - 1
        cols = [np.stack([p.diff(j)(s) * np.ones(s.shape[:-1]) for p in self.param], axis=-1)
                for j in range(k)]
        return np.stack(cols, axis=-1)

    def normal_covector(self, s) -> np.ndarray:
        """Conormal (..., n): df when an implicit form exists, else the cokernel of dPhi."""
        s = np.asarray(s, float)
        if self.implicit is not None:
            q = self.point(s)
            eta = np.stack([self.implicit.diff(k)(q) * np.ones(q.shape[:-1])
                            for k in range(self.dim)], axis=-1)
        else:
            T = self.tangents(s)
            # generalized cross product: cofactors of the n x (n-1) tangent matrix
            n = self.dim
            eta = np.empty(T.shape[:-2] + (n,))
            for k in range(n):
                minor = np.delete(T, k, axis=-2)
                eta[..., k] = (-1) ** k * np.linalg.det(minor)
        return self.orientation * eta

    def is_coordinate_plane(self) -> int | None:
        """Axis index k if Phi(s) = (s_1, ..., c, ..., s_{n-1}) with c inserted at k."""
        n = self.dim
        for k in range(n):
            if self.param[k].degree() > 0:
                continue
            others = [i for i in range(n) if i != k]
            ok = True
            for j, i in enumerate(others):
                e = tuple(1 if t == j else 0 for t in range(n - 1))
                if self.param[i].terms != {e: 1.0}:
                    ok = False
                    break
            if ok:
                return k
        return None


def coordinate_plane(n: int, axis: int, offset: float, box) -> HypersurfacePatch:
    """The hyperplane {x_axis = offset}, parametrized by the remaining coordinates."""
    k = n - 1
    comps = []
    j = 0
    for i in range(n):
        if i == axis:
            comps.append(Polynomial.constant(k, offset))
        else:
            comps.append(Polynomial.variable(k, j))
            j += 1
    implicit = Polynomial.variable(n, axis) - offset
    return HypersurfacePatch(tuple(comps), (tuple(box[0]), tuple(box[1])), implicit)


@dataclass(frozen=True)
class Region:
    kind: str = "all"  # all | box | ball
    lo: tuple[float, ...] = ()
    hi: tuple[float, ...] = ()
    center: tuple[float, ...] = ()
    radius: float = 0.0

    @classmethod
    def box(cls, lo, hi) -> "Region":
        return cls("box", tuple(map(float, lo)), tuple(map(float, hi)))

    @classmethod
    def ball(cls, center, radius) -> "Region":
        return cls("ball", center=tuple(map(float, center)), radius=float(radius))


# -- pointwise quantities -----------------------------------------------------------


def _gram(metric: MetricExtension, frame: PrivilegedFrame, q: np.ndarray) -> np.ndarray:
    """Gram matrices (..., n, n) of the Riemannian extension in chart coordinates."""
    if metric.mode == "user-matrix":
        n = q.shape[-1]
        G = np.empty(q.shape[:-1] + (n, n))
        for a in range(n):
            for b in range(n):
                G[..., a, b] = metric.matrix_field[a][b](q)
        return G
    X = frame_matrix(frame.fields, q) if q.ndim == 1 else np.stack(
        [np.stack([f.coeffs[i](q) * np.ones(q.shape[:-1]) for f in frame.fields], axis=-1)
         for i in range(frame.dim)], axis=-2)
    Xi = np.linalg.inv(X)
    return np.swapaxes(Xi, -1, -2) @ Xi


def _frame_values(fields: Sequence[PolyVectorField], q: np.ndarray) -> np.ndarray:
    """(..., n, k) with column j the field fields[j] at q."""
    n = q.shape[-1]
    return np.stack([np.stack([f.coeffs[i](q) * np.ones(q.shape[:-1]) for f in fields], axis=-1)
                     for i in range(n)], axis=-2)


def volume_norm(omega: VolumeForm, metric: MetricExtension, frame: PrivilegedFrame, q) -> np.ndarray:
    """||omega(q)||_g, the value of omega on a g-orthonormal oriented frame."""
    q = np.asarray(q, float)
    a = omega(q)
    if metric.mode == "user-matrix":
        G = _gram(metric, frame, q)
        return np.abs(a) / np.sqrt(np.linalg.det(G))
    X = _frame_values(frame.fields, q)
    d = np.linalg.det(X)
    if np.any(np.abs(d) < 1e-14):
        raise FrameError(f"frame singular at {tuple(np.atleast_2d(q)[0])}")
    return np.abs(a * d)


@dataclass(frozen=True)
class HorizontalNormal:
    nu: np.ndarray          # g-unit normal vector
    nu_D: np.ndarray        # its g-orthogonal projection onto the distribution
    coefficients: np.ndarray  # nu_D in the horizontal frame
    norm: float             # |nu_D|_g
    characteristic: bool


def _normal_parts(eta, q, metric, frame):
    G = _gram(metric, frame, q)
    Ginv = np.linalg.inv(G)
    grad = np.einsum("...ij,...j->...i", Ginv, eta)
    gnorm = np.sqrt(np.einsum("...i,...i->...", eta, grad))
    H = _frame_values(frame.horizontal, q)
    Xf = np.einsum("...i,...ij->...j", eta, H)
    return grad, gnorm, Xf, H


def horizontal_normal(patch: HypersurfacePatch, metric: MetricExtension, frame: PrivilegedFrame,
                      s) -> HorizontalNormal:
    """Unit normal and its horizontal projection at the patch point with parameter s."""
    s = np.asarray(s, float)
    q = patch.point(s)
    eta = patch.normal_covector(s)
    grad, gnorm, Xf, H = _normal_parts(eta, q, metric, frame)
    if gnorm < 1e-14:
        raise MeasureError(f"degenerate patch point {tuple(q)}")
    nu = grad / gnorm
    c = Xf / gnorm  # g(nu, X_i) for the g-orthonormal horizontal frame
    nu_D = H @ c
    nrm = float(np.linalg.norm(c))
    return HorizontalNormal(nu, nu_D, c, nrm, nrm < CHARACTERISTIC_TOL)


def surface_integrand(patch: HypersurfacePatch, omega: VolumeForm, metric: MetricExtension,
                      frame: PrivilegedFrame, s) -> np.ndarray:
    """||omega||_g |nu_D|_g sqrt(det g(dPhi, dPhi)) at parameters s (..., n-1)."""
    s = np.asarray(s, float)
    q = patch.point(s)
    T = patch.tangents(s)
    G = _gram(metric, frame, q)
    area = np.sqrt(np.abs(np.linalg.det(np.swapaxes(T, -1, -2) @ G @ T)))
    eta = patch.normal_covector(s)
    _, gnorm, Xf, _ = _normal_parts(eta, q, metric, frame)
    nuD = np.linalg.norm(Xf, axis=-1) / gnorm
    return volume_norm(omega, metric, frame, q) * nuD * area


# -- quadrature -----------------------------------------------------------------------


def _gauss_box(fn: Callable, lo, hi, nodes: int) -> float:
    lo = np.asarray(lo, float)
    hi = np.asarray(hi, float)
    k = lo.shape[0]
    x, w = np.polynomial.legendre.leggauss(nodes)
    axes = [0.5 * (hi[i] - lo[i]) * x + 0.5 * (hi[i] + lo[i]) for i in range(k)]
    wts = [0.5 * (hi[i] - lo[i]) * w for i in range(k)]
    mesh = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)
    W = wts[0]
    for wi in wts[1:]:
        W = np.multiply.outer(W, wi)
    return float(np.sum(fn(mesh) * W))


@dataclass
class SurfaceMeasure:
    value: float
    error: float
    method: str
    details: dict = field(default_factory=dict)

    def as_dict(self) -> dict:
        return {"value": self.value, "error": self.error, "method": self.method, **self.details}


def sr_surface_measure(patch: HypersurfacePatch, omega: VolumeForm, metric: MetricExtension,
                       frame: PrivilegedFrame, region: Region | None = None, quad: int = 24,
                       s0=None, angles: int = 48, domain=None) -> SurfaceMeasure:
    """sigma^SR(Sigma n region).

    Boxes: Gauss-Legendre tensor quadrature at ``quad`` and ``2 quad`` nodes per
    axis (the difference is the error indicator).  Coordinate-plane patches are
    clipped to the box exactly; other patches use an indicator and warn when
    the region boundary cuts more than 20% of the cells.  SR balls: polar
    quadrature around the parameter ``s0`` of a point of Sigma inside the ball,
    with the boundary radius along each ray found by root-finding on distances.
    """
    region = region or Region()
    f = lambda s: surface_integrand(patch, omega, metric, frame, s)
    lo = np.asarray(patch.box[0], float)
    hi = np.asarray(patch.box[1], float)
    if region.kind == "ball":
        return _ball_measure(patch, f, frame, region, s0, quad, angles, domain)
    if region.kind == "box":
        axis = patch.is_coordinate_plane()
        rlo = np.asarray(region.lo, float)
        rhi = np.asarray(region.hi, float)
        if axis is not None:
            c = float(patch.param[axis].terms.get((0,) * (patch.dim - 1), 0.0))
            if not (rlo[axis] <= c <= rhi[axis]):
                return SurfaceMeasure(0.0, 0.0, "gauss-clipped")
            keep = [i for i in range(patch.dim) if i != axis]
            lo = np.maximum(lo, rlo[keep])
            hi = np.minimum(hi, rhi[keep])
            if np.any(hi <= lo):
                return SurfaceMeasure(0.0, 0.0, "gauss-clipped")
            method = "gauss-clipped"
        else:
            def inside(s):
                q = patch.point(s)
                return np.all((q >= rlo) & (q <= rhi), axis=-1)

            g = f
            f = lambda s: g(s) * inside(s)
            _warn_boundary_cells(inside, lo, hi, quad)
            method = "gauss-indicator"
    else:
        method = "gauss"
    coarse = _gauss_box(f, lo, hi, quad)
    fine = _gauss_box(f, lo, hi, 2 * quad)
    return SurfaceMeasure(fine, abs(fine - coarse), method)


def _warn_boundary_cells(inside, lo, hi, cells):
    k = lo.shape[0]
    axes = [np.linspace(lo[i], hi[i], cells + 1) for i in range(k)]
    corners = inside(np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1))
    cut = np.zeros(tuple([cells] * k), dtype=bool)
    for off in np.ndindex(*([2] * k)):
        sl = tuple(slice(o, o + cells) for o in off)
        cut |= corners[sl] != corners[tuple(slice(0, cells) for _ in range(k))]
    frac = cut.mean()
    if frac > 0.2:
        warnings.warn(f"region boundary cuts {100 * frac:.0f}% of quadrature cells", RuntimeWarning)


class _RayDistance:
    """d(center, Phi(s)) with covector continuation between nearby evaluations."""

    def __init__(self, patch, frame, center, domain, attempts: int = 1):
        self.patch = patch
        self.sr = structure(frame.horizontal, domain)
        self.center = np.asarray(center, float)
        self.attempts = attempts
        self.last = None

    def __call__(self, s) -> float:
        q = self.patch.point(s)
        hints = [] if self.last is None else [self.last]
        L, P, _ = shooting_solve(self.sr, self.center, q, self.attempts, hints, tol=RAY_TOL)
        if P is None:
            L, P, _ = shooting_solve(self.sr, self.center, q, 12, hints, tol=RAY_TOL)
        if P is None:
            raise DistanceError(f"distance failed for {tuple(q)}")
        self.last = P
        return L


def _boundary_radius(dist: _RayDistance, s0, direction, r, guess):
    """Exit parameter of the ray s0 + rho * direction from the ball (slices assumed star-shaped)."""
    g = lambda rho: dist(s0 + rho * direction) - r
    a = 0.8 * guess
    fa = g(a)
    if fa > 0:
        a = 0.0
        dist.last = None
        fa = g(0.0)
        if fa > 0:
            raise MeasureError("ray origin lies outside the ball")
    b = 1.25 * guess
    fb = g(b)
    while fb <= 0:
        a, fa = b, fb
        b *= 2.0
        if b > 1e6 * guess:
            raise MeasureError("ball slice is unbounded along a ray")
        fb = g(b)
    return brentq(g, a, b, xtol=1e-10 * b, rtol=1e-10)


class _SphereRays:
    """Intersections of rays s0 + rho d in parameter space with the sphere S(y, r).

    Newton on (P, rho): endpoint(y, P) = Phi(s0 + rho d) and |h(y, P)| = r, continued
    from ray to ray.  Every intersection is validated by a multistart distance solve,
    since a non-minimizing geodesic of length r ends inside the ball; failures fall back
    to root finding on distances.
    """

    def __init__(self, patch, frame, center, r, s0, domain):
        self.patch, self.r, self.s0 = patch, float(r), np.asarray(s0, float)
        self.sr = structure(frame.horizontal, domain)
        self.y = np.asarray(center, float)
        self.H = frame_matrix(self.sr.frame_h, self.y)
        self.fast = _RayDistance(patch, frame, center, domain, 1)
        self.robust = _RayDistance(patch, frame, center, domain, 12)
        self.state = None
        self.fallbacks = 0

    def _newton(self, d, P, rho, max_iter: int = 25):
        n = self.sr.n
        r = self.r

        def resid(P, rho):
            st, z = _ham_endpoint(self.sr, self.y, P, max_steps=NEWTON_STEP_BUDGET,
                                  rtol=RAY_TOL * 0.1, atol=RAY_TOL * 1e-3)
            if st != K.OK:
                return None, None
            h = self.H.T @ P
            R = np.concatenate([z[:n] - self.patch.point(self.s0 + rho * d), [0.5 * (h @ h - r * r)]])
            return R, z

        R, z = resid(P, rho)
        if R is None:
            return None
        for _ in range(max_iter):
            nr = np.linalg.norm(R)
            if nr < RAY_TOL * (1.0 + r):
                return P, rho
            s = self.s0 + rho * d
            T = self.patch.tangents(s) @ d
            Jm = np.zeros((n + 1, n + 1))
            Jm[:n, :n] = z[2 * n:2 * n + n * n].reshape(n, n)
            Jm[:n, n] = -T
            Jm[n, :n] = self.H @ (self.H.T @ P)
            step = np.linalg.lstsq(Jm, -R, rcond=1e-13)[0]
            lam = 1.0
            while lam >= 1.0 / 32:
                Pt, rt = P + lam * step[:n], rho + lam * step[n]
                if rt > 0:
                    Rt, zt = resid(Pt, rt)
                    if Rt is not None and np.linalg.norm(Rt) < (1 - 1e-4 * lam) * nr:
                        P, rho, R, z = Pt, rt, Rt, zt
                        break
                lam *= 0.5
            else:
                return None
        return None

    def _valid(self, d, P, rho) -> bool:
        # wrong branches end well inside the ball, so a loose solve separates them
        q = self.patch.point(self.s0 + rho * d)
        L, _, _ = shooting_solve(self.sr, self.y, q, VALIDATION_STARTS, [P], tol=VALIDATION_TOL)
        return L >= self.r * (1.0 - 1e-4)

    def __call__(self, d, guess: float) -> float:
        d = np.asarray(d, float)
        if self.state is not None:
            out = self._newton(d, *self.state)
            if out is not None and self._valid(d, *out):
                self.state = out
                return out[1]
        self.fast.last = None
        rho = _boundary_radius(self.fast, self.s0, d, self.r, guess)
        if not self._valid(d, self.fast.last, rho):
            self.fallbacks += 1
            self.robust.last = None
            rho = _boundary_radius(self.robust, self.s0, d, self.r, rho)
            self.state = (self.robust.last, rho)
        else:
            self.state = (self.fast.last, rho)
        return rho


def _axis_extent(sr, patch, s0, j, r):
    """Parameter length of a ball of radius r along axis j, from the weighted size of d Phi e_j."""
    q = patch.point(s0)
    c = np.abs(np.linalg.solve(sr.frame_at(q), patch.tangents(s0)[:, j]))
    best = math.inf
    for w in np.unique(sr.weights):
        cw = float(np.max(c[sr.weights == w]))
        if cw > 0:
            best = min(best, (r if w == 1 else (r / 3.0) ** w) / cw)
    if not math.isfinite(best):
        raise MeasureError("patch tangent vanishes")
    return best


def _ball_measure(patch, f, frame, region, s0, radial, angles, domain) -> SurfaceMeasure:
    k = patch.dim - 1
    if s0 is None:
        raise ValueError("SR-ball regions need s0, the parameter of a point of Sigma in the ball")
    s0 = np.asarray(s0, float)
    r = region.radius
    rays = _SphereRays(patch, frame, region.center, r, s0, domain)
    if k == 1:
        guess = _axis_extent(rays.sr, patch, s0, 0, r)
        ends = []
        for sgn in (1.0, -1.0):
            rays.state = None
            ends.append(rays(np.array([sgn]), guess))
        x, w = np.polynomial.legendre.leggauss(radial)
        total = 0.0
        for sgn, rho in zip((1.0, -1.0), ends):
            pts = s0 + sgn * (0.5 * rho * (x + 1))[:, None]
            total += 0.5 * rho * float(np.sum(w * f(pts)))
        return SurfaceMeasure(total, 0.0, "polar", {"rays": 2, "fallbacks": rays.fallbacks})
    if k != 2:
        raise NotImplementedError("SR-ball slices are supported for surfaces of dimension 1 and 2")
    # estimated axis extents give an affine normalization that makes the slice roughly
    # round; cell-centred angles keep rays off the axes, where minimizers may be singular
    ext = np.array([_axis_extent(rays.sr, patch, s0, j, r) for j in range(2)])
    th = 2 * math.pi * (np.arange(angles) + 0.5) / angles
    x, w = np.polynomial.legendre.leggauss(radial)
    dirs = ext * np.stack([np.cos(th), np.sin(th)], axis=-1)
    rhos = np.empty(angles)
    parts = np.empty(angles)
    guess = 1.0
    for i in range(angles):
        rhos[i] = guess = rays(dirs[i], guess)
        rr = 0.5 * rhos[i] * (x + 1)
        parts[i] = 0.5 * rhos[i] * float(np.sum(w * f(s0 + rr[:, None] * dirs[i][None, :]) * rr))
    jac = ext[0] * ext[1] * 2 * math.pi / angles
    value = float(parts.sum()) * jac
    # error indicator: the rule on half-cell shifted angles with linearly interpolated
    # radii; its O(h^2 rho'') error is conservative and exposes under-resolved boundaries
    rho2 = 0.5 * (rhos + np.roll(rhos, -1))
    th2 = th + math.pi / angles
    dirs2 = ext * np.stack([np.cos(th2), np.sin(th2)], axis=-1)
    fine = 0.0
    for i in range(angles):
        rr = 0.5 * rho2[i] * (x + 1)
        fine += 0.5 * rho2[i] * float(np.sum(w * f(s0 + rr[:, None] * dirs2[i][None, :]) * rr))
    fine *= jac
    return SurfaceMeasure(value, abs(fine - value), "polar",
                          {"angles": angles, "extents": ext.tolist(), "fallbacks": rays.fallbacks})


# -- spherical factor -------------------------------------------------------------------


def _homogeneous_radius(u: np.ndarray, w: np.ndarray) -> np.ndarray:
    """t > 0 with sum_k (u_k t^-w_k)^2 = 1, i.e. u = delta_t(sigma) with |sigma| = 1."""
    return K.homogeneous_radius(np.ascontiguousarray(u, dtype=float), np.asarray(w, float))


def _to_angles(sig: np.ndarray) -> np.ndarray:
    """Hyperspherical angles (theta_1..theta_{n-2} in [0, pi], phi in [0, 2 pi))."""
    n = sig.shape[-1]
    out = np.empty(sig.shape[:-1] + (n - 1,))
    rest = np.linalg.norm(sig, axis=-1)
    for i in range(n - 2):
        out[..., i] = np.arccos(np.clip(sig[..., n - 1 - i] / np.maximum(rest, 1e-300), -1, 1))
        rest = np.sqrt(np.maximum(rest ** 2 - sig[..., n - 1 - i] ** 2, 0.0))
    out[..., n - 2] = np.mod(np.arctan2(sig[..., 1], sig[..., 0]), 2 * math.pi)
    return out


def _from_angles(ang: np.ndarray) -> np.ndarray:
    k = ang.shape[-1]
    n = k + 1
    sig = np.empty(ang.shape[:-1] + (n,))
    rest = np.ones(ang.shape[:-1])
    for i in range(n - 2):
        sig[..., n - 1 - i] = rest * np.cos(ang[..., i])
        rest = rest * np.sin(ang[..., i])
    sig[..., 1] = rest * np.sin(ang[..., n - 2])
    sig[..., 0] = rest * np.cos(ang[..., n - 2])
    return sig


class GaugeTable:
    """Homogeneous norm |u| = d^(0, u) of a nilpotent frame, tabulated over the Euclidean unit
    sphere and extended by dilation: |delta_t sigma| = t |sigma|."""

    def __init__(self, nf: NilpotentFrame, polar: int = 33, azimuth: int = 64):
        self.nf = nf
        self.w = np.asarray(nf.weights, float)
        n = nf.dim
        self.n = n
        sr = structure(nf.horizontal)
        if n == 1:
            self.values = None
            return
        # cell-centred polar nodes plus the poles, where many angles share one target
        inner = (np.arange(polar - 2) + 0.5) * math.pi / (polar - 2)
        grids = [np.concatenate([[0.0], inner, [math.pi]]) for _ in range(n - 2)]
        grids.append(np.linspace(0.0, 2 * math.pi, azimuth + 1))
        shape = tuple(len(g) for g in grids)
        vals = np.empty(shape)
        seen: dict[tuple, float] = {}
        last = None
        row = None
        zero = np.zeros(n)
        # boustrophedon order keeps consecutive grid points adjacent for warm starts;
        # each new row restarts with a full multistart so a wrong branch cannot persist
        for idx in _snake(shape):
            if idx[-1] == shape[-1] - 1:
                continue
            target = _from_angles(np.array([grids[i][j] for i, j in enumerate(idx)]))
            key = tuple(np.round(target, 12))
            if key in seen:
                vals[idx] = seen[key]
                continue
            row_start = idx[:-1] != row
            row = idx[:-1]
            hints = [] if last is None else [last]
            L, P, _ = shooting_solve(sr, zero, target, ROW_RESTARTS if row_start else 0, hints,
                                     tol=GAUGE_TOL)
            if P is None:
                L, P, _ = shooting_solve(sr, zero, target, 12, hints, tol=GAUGE_TOL)
            if P is None:
                raise MeasureError(f"gauge table: distance failed at direction {target}")
            vals[idx] = seen[key] = L
            last = P
        vals[..., -1] = vals[..., 0]
        self.grids = grids
        self.values = vals
        method = "cubic" if min(shape) >= 4 else "linear"
        interp = RegularGridInterpolator(tuple(grids), vals, method=method)
        # resample once onto a fine uniform grid; lookups are then multilinear in a kernel
        d = n - 1
        up = UPSAMPLE if d <= 2 else max(2, UPSAMPLE // 2)
        fine = [np.linspace(g[0], g[-1], up * (len(g) - 1) + 1) for g in grids]
        mesh = np.stack(np.meshgrid(*fine, indexing="ij"), axis=-1)
        self._fine = np.ascontiguousarray(interp(mesh.reshape(-1, d)).reshape(mesh.shape[:-1]))
        self._lo = np.array([g[0] for g in fine])
        self._step = np.array([g[1] - g[0] for g in fine])

    def __call__(self, u) -> np.ndarray:
        u = np.ascontiguousarray(np.atleast_2d(np.asarray(u, float)))
        if self.n == 1:
            return np.abs(u[:, 0])
        return K.gauge_eval(u, self.w, self._fine, self._lo, self._step)

    def unit_box(self) -> np.ndarray:
        """Half-widths of a coordinate box containing the unit ball."""
        if self.n == 1:
            return np.ones(1)
        mesh = np.stack(np.meshgrid(*self.grids, indexing="ij"), axis=-1).reshape(-1, self.n - 1)
        sig = _from_angles(mesh)
        g = self.values.reshape(-1)
        # the unit sphere point on the ray of sigma is delta_{1/g} sigma
        pts = sig / g[:, None] ** self.w
        return np.abs(pts).max(axis=0) * 1.02


def _snake(shape):
    if len(shape) == 1:
        for i in range(shape[0]):
            yield (i,)
        return
    flip = False
    for i in range(shape[0]):
        inner = list(_snake(shape[1:]))
        if flip:
            inner.reverse()
        flip = not flip
        for rest in inner:
            yield (i,) + rest


_gauge_cache: dict[tuple, GaugeTable] = {}


def gauge_table(nf: NilpotentFrame, polar: int = 33, azimuth: int = 64) -> GaugeTable:
    key = (nf.key(), polar, azimuth)
    g = _gauge_cache.get(key)
    if g is None:
        g = _gauge_cache[key] = GaugeTable(nf, polar, azimuth)
    return g


@dataclass
class SphericalFactorResult:
    beta: float
    maximizer: tuple[float, ...]
    standard_error: float
    per_z: list[tuple[tuple[float, ...], float]]
    value_at_origin: float
    boundary_maximizer: bool = False

    def as_dict(self) -> dict:
        return {"beta": self.beta, "maximizer": list(self.maximizer),
                "standard_error": self.standard_error, "value_at_origin": self.value_at_origin,
                "boundary_maximizer": self.boundary_maximizer, "evaluated_centers": len(self.per_z)}


class _SliceEstimator:
    """Stratified Monte Carlo for the (n-1)-measure of P n B^(z, 1) with common random numbers."""

    def __init__(self, gauge: GaugeTable, law: GroupLaw, E: np.ndarray, points: int, seed: int):
        self.gauge, self.law, self.E = gauge, law, E
        k = E.shape[1]
        per = max(1, int((points / 2) ** (1.0 / k)))
        self.per = per
        rng = np.random.Generator(np.random.Philox(seed))
        cells = np.stack(np.meshgrid(*[np.arange(per)] * k, indexing="ij"), axis=-1).reshape(-1, k)
        jit = rng.random((2, cells.shape[0], k))
        self.u = (cells[None] + jit) / per  # (2, strata, k) in the unit cube
        self.unit = gauge.unit_box()

    def bounds(self, z):
        """Box in plane coordinates containing P n B^(z, 1)."""
        g = self.gauge
        # corners of the coordinate box of B^(0,1), translated by z, projected
        k = g.n
        signs = np.array(list(np.ndindex(*([2] * k)))) * 2 - 1
        corners = self.law(np.broadcast_to(z, (signs.shape[0], k)), signs * self.unit)
        proj = corners @ self.E
        lo, hi = proj.min(axis=0), proj.max(axis=0)
        pad = 0.05 * (hi - lo) + 1e-12
        return lo - pad, hi + pad

    def __call__(self, z, strata_stride: int = 1):
        z = np.asarray(z, float)
        lo, hi = self.bounds(z)
        u = self.u[:, ::strata_stride]
        s = lo + u * (hi - lo)
        x = s @ self.E.T
        zi = np.broadcast_to(-z, x.shape)
        inside = self.gauge(self.law(zi.reshape(-1, zi.shape[-1]), x.reshape(-1, x.shape[-1]))) <= 1.0
        inside = inside.reshape(x.shape[:-1]).astype(float)
        vol = float(np.prod(hi - lo))
        S = inside.shape[1]
        est = vol * inside.mean()
        var = (vol / S) ** 2 * np.sum(0.5 * (inside[0] - inside[1]) ** 2) / 2.0
        # the estimate misses slices that cross the box boundary; the padded box is a bound
        return est, math.sqrt(max(var, 0.0))


def spherical_factor(nf: NilpotentFrame, dF0: np.ndarray, nu, gram: np.ndarray | None = None,
                     mc_points: int = 200_000, z_grid: int = 11, seed: int = 0,
                     z_tol: float = 1e-2, table: tuple[int, int] = (33, 64)
                     ) -> SphericalFactorResult:
    """beta(nu) = max over z in B^(0,1) of H^{n-1}_E(P n B^(z,1)), P = dF0^-1(nu^perp).

    ``nu`` is a tangent vector at the base point in chart coordinates; ``gram`` is
    the metric there (default: the frame dF0 is orthonormal).
    """
    n = nf.dim
    dF0 = np.asarray(dF0, float)
    nu = np.asarray(nu, float)
    if gram is None:
        Xi = np.linalg.inv(dF0)
        gram = Xi.T @ Xi
    normal = dF0.T @ gram @ nu
    if np.linalg.norm(normal) < 1e-14:
        raise ValueError("nu must be nonzero")
    normal = normal / np.linalg.norm(normal)
    # orthonormal basis of the hyperplane normal^perp in exponential coordinates
    _, _, Vt = np.linalg.svd(normal[None, :])
    E = Vt[1:].T
    gauge = gauge_table(nf, *table)
    law = GroupLaw(nf)
    est = _SliceEstimator(gauge, law, E, mc_points, seed)
    unit = gauge.unit_box()
    # coarse grid in B^(0,1) with a quarter of the strata, then compass search at full size
    axes = [np.linspace(-unit[k], unit[k], z_grid) for k in range(n)]
    cands = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, n)
    cands = cands[gauge(cands) < 1.0]
    stride = COARSE_STRIDE if est.u.shape[1] >= COARSE_STRIDE * 256 else 1
    coarse = [(est(z, stride)[0], tuple(z)) for z in cands]
    coarse.sort(key=lambda t: -t[0])
    per_z = [(z, v) for v, z in coarse]
    origin_val, origin_se = est(np.zeros(n))
    best_z = np.zeros(n)
    best, best_se = origin_val, origin_se
    for _, z in coarse[:3]:
        v, se = est(np.array(z))
        if v > best:
            best, best_se, best_z = v, se, np.array(z)
    step = unit / (z_grid - 1)
    while np.max(step) > z_tol * np.max(unit):
        improved = False
        for k in range(n):
            for sgn in (1.0, -1.0):
                z = best_z.copy()
                z[k] += sgn * step[k]
                if gauge(z[None])[0] > 1.0:
                    continue
                v, se = est(z)
                per_z.append((tuple(z), v))
                if v > best:
                    best, best_se, best_z = v, se, z
                    improved = True
        if not improved:
            step = step / 2
    on_boundary = bool(gauge(best_z[None])[0] > 1.0 - 2 * z_tol)
    return SphericalFactorResult(best, tuple(float(v) for v in best_z), best_se, per_z,
                                 origin_val, on_boundary)


# -- Federer density and the double blow-up ------------------------------------------------


@dataclass
class FedererDensity:
    value: float
    per_radius: list[float]
    radii: tuple[float, ...]
    centers: int

    def as_dict(self) -> dict:
        return {"value": self.value, "per_radius": self.per_radius, "radii": list(self.radii),
                "centers": self.centers}


def federer_density(patch: HypersurfacePatch, omega: VolumeForm, metric: MetricExtension,
                    frame: PrivilegedFrame, s_p, radii: Sequence[float] = (0.2, 0.1),
                    center_count: int = 5, angles: int = 48, quad: int = 8, domain=None,
                    seed: int = 7) -> FedererDensity:
    """sup over centers y with p in B(y, r) of 2^{Q-1} sigma^SR(B(y, r)) / diam(B(y, r))^{Q-1}.

    Centers are p and endpoints of geodesics of length r/2 leaving p.  The
    value at the smallest radius is returned; the sweep over radii is reported.
    """
    s_p = np.asarray(s_p, float)
    p = patch.point(s_p)
    hn = horizontal_normal(patch, metric, frame, s_p)
    if hn.characteristic:
        raise MeasureError(f"p = {tuple(p)} is a characteristic point")
    alpha = frame.Q - 1
    sr = structure(frame.horizontal, domain)
    radii = tuple(sorted((float(r) for r in radii), reverse=True))
    out = []
    for r in radii:
        centers = [p]
        if center_count > 1:
            for p0 in sphere_design(sr, p, r, center_count - 1, seed):
                st, z = _ham_endpoint(sr, p, p0 * 0.5 * r, var=False)
                if st == 0:
                    centers.append(z[:sr.n])
        best = 0.0
        for y in centers:
            # a point of Sigma inside B(y, r): p itself
            m = sr_surface_measure(patch, omega, metric, frame, Region.ball(y, r), quad=quad,
                                   s0=s_p, angles=angles, domain=domain).value
            diam = diameter_estimate(frame.horizontal, y, r, count=8, domain=domain).value
            best = max(best, 2 ** alpha * m / diam ** alpha)
        out.append(best)
    return FedererDensity(out[-1], out, radii, len(centers))


@dataclass
class DoubleBlowupReport:
    density: float
    volume_norm: float
    beta: float
    beta_se: float
    relative_discrepancy: float
    density_sweep: list[float]

    @property
    def right_side(self) -> float:
        return self.volume_norm * self.beta

    def as_dict(self) -> dict:
        return {"federer_density": self.density, "volume_norm": self.volume_norm,
                "beta": self.beta, "beta_se": self.beta_se, "right_side": self.right_side,
                "relative_discrepancy": self.relative_discrepancy,
                "density_sweep": self.density_sweep}


def double_blowup_check(patch: HypersurfacePatch, omega: VolumeForm, metric: MetricExtension,
                        frame: PrivilegedFrame, s_p, radii: Sequence[float] = (0.2, 0.1),
                        center_count: int = 5, mc_points: int = 200_000, seed: int = 0,
                        domain=None) -> DoubleBlowupReport:
    """Federer density of sigma^SR at p against ||omega(p)||_g beta(nu_D(p))."""
    s_p = np.asarray(s_p, float)
    p = patch.point(s_p)
    fd = federer_density(patch, omega, metric, frame, s_p, radii, center_count, domain=domain)
    vn = float(volume_norm(omega, metric, frame, p))
    hn = horizontal_normal(patch, metric, frame, s_p)
    nf = nilpotent_frame_at(frame, p)
    G = _gram(metric, frame, p)
    sf = spherical_factor(nf, frame.matrix(p), hn.nu_D, G, mc_points=mc_points, seed=seed)
    rhs = vn * sf.beta
    return DoubleBlowupReport(fd.value, vn, sf.beta, sf.standard_error,
                              abs(fd.value - rhs) / rhs, fd.per_radius)


# -- divergence identity and extension independence -----------------------------------------


@dataclass(frozen=True)
class BumpField:
    """X = phi * V with phi(x) = exp(1 - 1/(1 - |x - c|^2 / rho^2)) inside the ball B_E(c, rho).

    ``rho = inf`` drops the cutoff.
    """

    V: PolyVectorField
    center: tuple[float, ...]
    rho: float

    def _phi(self, x):
        if math.isinf(self.rho):
            return np.ones(x.shape[:-1]), np.zeros(x.shape)
        c = np.asarray(self.center, float)
        s = np.sum((x - c) ** 2, axis=-1) / self.rho ** 2
        inside = s < 1
        out = np.zeros(s.shape)
        grad = np.zeros(x.shape)
        si = s[inside]
        val = np.exp(1.0 - 1.0 / (1.0 - si))
        out[inside] = val
        # d phi / dx = phi * (-1/(1-s)^2) * 2 (x - c) / rho^2
        grad[inside] = (val * (-1.0 / (1.0 - si) ** 2))[:, None] * 2 * (x[inside] - c) / self.rho ** 2
        return out, grad

    def __call__(self, x) -> np.ndarray:
        x = np.asarray(x, float)
        phi, _ = self._phi(x)
        return phi[..., None] * self.V(x)

    def weighted_divergence(self, omega: VolumeForm, x) -> np.ndarray:
        """div_omega X * a = div(a X) with a the density of omega."""
        x = np.asarray(x, float)
        phi, grad = self._phi(x)
        a = omega.density
        aV = [a * c for c in self.V.coeffs]
        div_aV = sum(aV[k].diff(k)(x) for k in range(len(aV)))
        aVx = np.stack([p(x) * np.ones(x.shape[:-1]) for p in aV], axis=-1)
        return phi * div_aV + np.sum(grad * aVx, axis=-1)


@dataclass
class DivergenceReport:
    volume_side: float
    boundary_side: float
    relative_mismatch: float

    def as_dict(self) -> dict:
        return {"volume_side": self.volume_side, "boundary_side": self.boundary_side,
                "relative_mismatch": self.relative_mismatch}


def _sphere_param(center, R):
    c = np.asarray(center, float)

    def point(t):  # t = (polar, azimuth)
        return c + R * np.stack([np.sin(t[..., 0]) * np.cos(t[..., 1]),
                                 np.sin(t[..., 0]) * np.sin(t[..., 1]),
                                 np.cos(t[..., 0])], axis=-1)

    def tangents(t):
        a, b = t[..., 0], t[..., 1]
        d0 = R * np.stack([np.cos(a) * np.cos(b), np.cos(a) * np.sin(b), -np.sin(a)], axis=-1)
        d1 = R * np.stack([-np.sin(a) * np.sin(b), np.sin(a) * np.cos(b), np.zeros_like(a)], axis=-1)
        return np.stack([d0, d1], axis=-1)

    return point, tangents


def divergence_identity_check(omega: VolumeForm, metric: MetricExtension, frame: PrivilegedFrame,
                              ball_center, ball_radius: float, X: BumpField,
                              nodes: int = 48) -> DivergenceReport:
    """Both sides of the divergence theorem on the Euclidean ball B_E(c, R) in R^3.

    Volume side: int div(a X) dx by Gauss quadrature in spherical coordinates.
    Boundary side: int ||omega||_g g(X, nu) d sigma_g with nu the g-unit outer normal.
    """
    if frame.dim != 3:
        raise NotImplementedError("the ball quadrature is written for n = 3")
    c = np.asarray(ball_center, float)
    R = float(ball_radius)
    xr, wr = np.polynomial.legendre.leggauss(nodes)
    xt, wt = np.polynomial.legendre.leggauss(nodes)
    az = 2 * math.pi * np.arange(2 * nodes) / (2 * nodes)
    waz = np.full(2 * nodes, 2 * math.pi / (2 * nodes))
    rr = 0.5 * R * (xr + 1)
    wrr = 0.5 * R * wr
    pol = np.arccos(xt)  # Gauss in cos(polar)
    Rg, Pg, Ag = np.meshgrid(rr, pol, az, indexing="ij")
    W = np.einsum("i,j,k->ijk", wrr * rr ** 2, wt, waz)
    pts = c + np.stack([Rg * np.sin(Pg) * np.cos(Ag), Rg * np.sin(Pg) * np.sin(Ag),
                        Rg * np.cos(Pg)], axis=-1)
    lhs = float(np.sum(X.weighted_divergence(omega, pts) * W))
    point, tangents = _sphere_param(c, R)
    Pb, Ab = np.meshgrid(pol, az, indexing="ij")
    t = np.stack([Pb, Ab], axis=-1)
    q = point(t)
    T = tangents(t)
    G = _gram(metric, frame, q)
    area = np.sqrt(np.abs(np.linalg.det(np.swapaxes(T, -1, -2) @ G @ T)))
    eta = (q - c) / R  # outward conormal of |x - c|^2 - R^2
    grad = np.einsum("...ij,...j->...i", np.linalg.inv(G), eta)
    nu = grad / np.sqrt(np.einsum("...i,...i->...", eta, grad))[..., None]
    gXnu = np.einsum("...i,...ij,...j->...", X(q), G, nu)
    integrand = volume_norm(omega, metric, frame, q) * gXnu * area
    # d(polar) over the Gauss nodes in cos(polar) carries 1/sin(polar)
    Wb = np.einsum("j,k->jk", wt / np.sin(pol), waz)
    rhs = float(np.sum(integrand * Wb))
    scale = max(abs(lhs), abs(rhs), 1e-300)
    return DivergenceReport(lhs, rhs, abs(lhs - rhs) / scale)


@dataclass
class ExtensionReport:
    value_A: float
    value_B: float
    relative_discrepancy: float

    def as_dict(self) -> dict:
        return {"value_A": self.value_A, "value_B": self.value_B,
                "relative_discrepancy": self.relative_discrepancy}


def extension_independence_check(patch: HypersurfacePatch, omega: VolumeForm,
                                 frame: PrivilegedFrame, region: Region | None,
                                 metric_A: MetricExtension, metric_B: MetricExtension,
                                 quad: int = 24) -> ExtensionReport:
    """sigma^SR under two Riemannian extensions of the same sub-Riemannian metric."""
    from .frame_core import build_privileged_frame

    probes = [patch.point(np.asarray(c, float)) for c in patch.box]
    vals = []
    for metric in (metric_A, metric_B):
        metric.validate(frame.horizontal, probes)
        fr = build_privileged_frame(frame.horizontal, metric, base_point=frame.base_point)
        vals.append(sr_surface_measure(patch, omega, metric, fr, region, quad).value)
    a, b = vals
    return ExtensionReport(a, b, abs(a - b) / max(abs(a), abs(b), 1e-300))
