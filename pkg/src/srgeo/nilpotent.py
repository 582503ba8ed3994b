"""Nilpotent approximation of a privileged frame and checks of its group structure."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import _kernels as K
from .flows import DEFAULT_FLOW, FlowConfig
from .frame_core import PrivilegedFrame, numerical_rank
from .jets import JetSeries, pulled_back_coefficient_jets
from .poly import Polynomial, PolyVectorField, iterated_bracket, lie_bracket

PRIVILEGED_TOL = 1e-6


class NonPrivilegedFrame(ValueError):
    pass


def coefficient_jets(frame: PrivilegedFrame, q, K: int | None = None,
                     cfg: FlowConfig = DEFAULT_FLOW, center=None) -> list[list[JetSeries]]:
    """Jets a_ij of the coordinate frame X~_i^q = sum_j a_ij d_j at ``center`` (default 0).

    ``K`` is the weighted truncation order (default step + 1).
    """
    if K is None:
        K = frame.step + 1
    if K < frame.step:
        raise ValueError(f"order {K} too small to house degree-{frame.step - 1} coefficients")
    n = frame.dim
    center = np.zeros(n) if center is None else np.asarray(center, dtype=float)
    rtol = min(cfg.rel_tol, 1e-12)
    alg, A = pulled_back_coefficient_jets(frame.fields, q, center, K, rtol, rtol * 1e-2)
    w = frame.weights
    out = []
    for i in range(n):
        row = []
        for j in range(n):
            d = {e: c for e, c in alg.to_dict(A[i, j]).items()
                 if sum(a * b for a, b in zip(e, w)) <= K}
            row.append(JetSeries(n, K, w, d))
        out.append(row)
    return out


@dataclass(frozen=True)
class NilpotentFrame:
    fields: tuple[PolyVectorField, ...]
    weights: tuple[int, ...]
    structure_constants: np.ndarray  # c[i, j, k]: [X^_i, X^_j] = sum_k c[i,j,k] X^_k
    base_point: tuple[float, ...]

    @property
    def dim(self) -> int:
        return len(self.fields)

    @property
    def m(self) -> int:
        return sum(1 for w in self.weights if w == 1)

    @property
    def step(self) -> int:
        return max(self.weights)

    @property
    def horizontal(self) -> tuple[PolyVectorField, ...]:
        return self.fields[: self.m]

    def jets(self, order: int | None = None) -> list[list[JetSeries]]:
        order = self.step + 1 if order is None else order
        return [[JetSeries.from_polynomial(c, order, self.weights) for c in f.coeffs]
                for f in self.fields]

    def key(self) -> tuple:
        """Hashable identity up to 1e-12 coefficient rounding."""
        items = []
        for f in self.fields:
            for c in f.coeffs:
                rounded = ((e, round(v, 12)) for e, v in c.terms.items())
                items.append(tuple(sorted((e, v) for e, v in rounded if v != 0.0)))
        return (self.weights, tuple(items))


def nilpotent_approximation(jets: Sequence[Sequence[JetSeries]], weights: Sequence[int],
                            base_point: Sequence[float] = (), tol: float = PRIVILEGED_TOL
                            ) -> NilpotentFrame:
    """Keep the weighted-homogeneous part of degree w_j - w_i of each a_ij."""
    w = tuple(int(v) for v in weights)
    n = len(w)
    need = max(w) - 1
    fields = []
    for i in range(n):
        coeffs = []
        for j in range(n):
            jet = jets[i][j]
            if jet.order < need:
                raise ValueError(f"jet order {jet.order} below required {need}")
            if w[j] < w[i]:
                coeffs.append(Polynomial.zero(n))
                continue
            b = jet.homogeneous_part(w[j] - w[i])
            if w[j] == w[i]:
                resid = abs(b(np.zeros(n)) - (1.0 if i == j else 0.0))
                if resid > tol:
                    raise NonPrivilegedFrame(
                        f"b_{i + 1}{j + 1} deviates from delta by {resid:.2e}: input frame is not privileged"
                    )
            coeffs.append(b)
        fields.append(PolyVectorField(coeffs))
    C = structure_constants(fields)
    return NilpotentFrame(tuple(fields), w, C, tuple(float(v) for v in base_point))


def structure_constants(fields: Sequence[PolyVectorField]) -> np.ndarray:
    """c[i,j,k] read off at the origin where the frame is the standard basis."""
    n = len(fields)
    z = np.zeros(n)
    M = np.stack([f(z) for f in fields], axis=-1)
    C = np.zeros((n, n, n))
    for i in range(n):
        for j in range(i + 1, n):
            v = lie_bracket(fields[i], fields[j])(z)
            C[i, j] = np.linalg.solve(M, v)
            C[j, i] = -C[i, j]
    return C


def nilpotent_frame_at(frame: PrivilegedFrame, q, cfg: FlowConfig = DEFAULT_FLOW) -> NilpotentFrame:
    return nilpotent_approximation(coefficient_jets(frame, q, cfg=cfg), frame.weights, q)


@dataclass(frozen=True)
class StratifiedReport:
    homogeneity_residual: float
    nilpotency_residual: float
    layer_residual: float
    structure_residual: float
    jacobi_residual: float
    tol: float

    @property
    def homogeneity_ok(self) -> bool:
        return self.homogeneity_residual < self.tol

    @property
    def nilpotency_ok(self) -> bool:
        return self.nilpotency_residual < self.tol

    @property
    def layers_ok(self) -> bool:
        return self.layer_residual < self.tol

    @property
    def passed(self) -> bool:
        return (self.homogeneity_ok and self.nilpotency_ok and self.layers_ok
                and self.structure_residual < self.tol)

    def as_dict(self) -> dict:
        return {
            "homogeneity_residual": self.homogeneity_residual,
            "nilpotency_residual": self.nilpotency_residual,
            "layer_residual": self.layer_residual,
            "structure_residual": self.structure_residual,
            "jacobi_residual": self.jacobi_residual,
            "homogeneity_ok": self.homogeneity_ok,
            "nilpotency_ok": self.nilpotency_ok,
            "layers_ok": self.layers_ok,
            "passed": self.passed,
        }


def verify_stratified(nf: NilpotentFrame, tol: float = 1e-10, samples: int = 16) -> StratifiedReport:
    n = nf.dim
    w = np.asarray(nf.weights)
    s = nf.step
    rng = np.random.default_rng(12345)
    pts = rng.uniform(-1.0, 1.0, size=(samples, n))
    hom = 0.0
    for i, f in enumerate(nf.fields):
        for j, b in enumerate(f.coeffs):
            if b.is_zero():
                continue
            deg = w[j] - w[i]
            for r in (0.5, 2.0):
                lhs = b(pts * r ** w)
                rhs = r ** deg * b(pts)
                hom = max(hom, float(np.max(np.abs(lhs - rhs))) / max(1.0, r ** deg))
    # brackets of weighted length > step vanish
    nil = 0.0
    m = nf.m
    for word in np.ndindex(*([m] * (s + 1))):
        nil = max(nil, iterated_bracket(nf.fields, word).max_abs_coeff())
    for i in range(n):
        for j in range(i + 1, n):
            if w[i] + w[j] > s:
                nil = max(nil, lie_bracket(nf.fields[i], nf.fields[j]).max_abs_coeff())
    # each layer is spanned by brackets of the horizontal fields of that length
    z = np.zeros(n)
    layer = 0.0
    for length in range(1, s + 1):
        idx = np.where(w == length)[0]
        vecs = [iterated_bracket(nf.fields, word)(z)
                for word in np.ndindex(*([m] * length))]
        B = np.array(vecs).T[idx]
        if numerical_rank(B) < len(idx):
            layer = max(layer, 1.0)
            continue
        coef, *_ = np.linalg.lstsq(B, np.eye(len(idx)), rcond=None)
        layer = max(layer, float(np.max(np.abs(B @ coef - np.eye(len(idx))))))
        # brackets of length j must not leave the layer
        others = np.setdiff1d(np.arange(n), idx)
        if len(others):
            layer = max(layer, float(np.max(np.abs(np.array(vecs).T[others]))))
    # structure constants reproduce the brackets everywhere
    C = nf.structure_constants
    struct = 0.0
    for i in range(n):
        for j in range(n):
            br = lie_bracket(nf.fields[i], nf.fields[j])
            comb = PolyVectorField.zero(n)
            for k in range(n):
                if C[i, j, k] != 0.0:
                    comb = comb + nf.fields[k] * C[i, j, k]
            struct = max(struct, (br - comb).max_abs_coeff())
    jac = 0.0
    for i in range(n):
        for j in range(n):
            for k in range(n):
                # sum_l c_ij^l c_lk^r + cyclic = 0
                v = C[i, j] @ C[:, k] + C[j, k] @ C[:, i] + C[k, i] @ C[:, j]
                jac = max(jac, float(np.max(np.abs(v))))
    return StratifiedReport(hom, nil, layer, struct, jac, tol)


def exp_map_polynomial(fields: Sequence[PolyVectorField], max_order: int) -> list[Polynomial]:
    """Lie series of (a, x) -> exp(sum_i x_i X_i)(a) as polynomials in 2n variables.

    Exact for nilpotent homogeneous frames once ``max_order`` reaches the step.
    """
    n = fields[0].dim
    N = 2 * n
    a_fields = [[c.embed(N, 0) for c in f.coeffs] for f in fields]
    xs = [Polynomial.variable(N, n + i) for i in range(n)]
    # V = sum_i x_i X_i(a), acting on functions of a
    V = [sum((xs[i] * a_fields[i][k] for i in range(len(fields))), Polynomial.zero(N))
         for k in range(n)]
    out = []
    for j in range(n):
        term = Polynomial.variable(N, j)
        total = term
        fact = 1.0
        for k in range(1, max_order + 1):
            nxt = Polynomial.zero(N)
            for l in range(n):
                if not V[l].is_zero():
                    nxt = nxt + V[l] * term.diff(l)
            term = nxt
            fact *= k
            if term.is_zero():
                break
            total = total + term * (1.0 / fact)
        out.append(total)
    return out


class GroupLaw:
    """Product of the tangent group in exponential coordinates: a*x = exp(x.X^)(a)."""

    def __init__(self, nf: NilpotentFrame):
        self.n = nf.dim
        self.polys = exp_map_polynomial(nf.fields, nf.step + 1)
        monos = sorted({e for p in self.polys for e in p.terms})
        index = {e: i for i, e in enumerate(monos)}
        self._exps = np.array(monos, dtype=np.int64).reshape(len(monos), 2 * self.n)
        self._coef = np.zeros((self.n, len(monos)))
        for j, p in enumerate(self.polys):
            for e, c in p.terms.items():
                self._coef[j, index[e]] = c

    def __call__(self, a, x) -> np.ndarray:
        a = np.asarray(a, dtype=float)
        x = np.asarray(x, dtype=float)
        a, x = np.broadcast_arrays(a, x)
        z = np.concatenate([a, x], axis=-1)
        flat = np.ascontiguousarray(z.reshape(-1, 2 * self.n))
        return K.poly_eval_batch(self._exps, self._coef, flat).reshape(z.shape[:-1] + (self.n,))

    def inverse(self, a) -> np.ndarray:
        return -np.asarray(a, dtype=float)
