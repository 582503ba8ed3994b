"""Truncated multivariate Taylor series and their transport through polynomial flows."""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache
from typing import Mapping, Sequence

import numpy as np
from scipy import sparse
from scipy.integrate import solve_ivp

from .poly import Exponent, Polynomial, PolyVectorField, all_exponents, compile_fields


class JetAlgebra:
    """Dense jets in ``n`` variables truncated at total degree ``degree``."""

    def __init__(self, n: int, degree: int):
        self.n = n
        self.degree = degree
        self.monos: list[Exponent] = all_exponents(n, degree)
        self.index = {e: i for i, e in enumerate(self.monos)}
        self.size = len(self.monos)
        rows, ia, ib = [], [], []
        for i, a in enumerate(self.monos):
            for j, b in enumerate(self.monos):
                c = tuple(x + y for x, y in zip(a, b))
                k = self.index.get(c)
                if k is not None:
                    ia.append(i)
                    ib.append(j)
                    rows.append(k)
        self._ia = np.array(ia)
        self._ib = np.array(ib)
        self._scatter = sparse.csr_matrix(
            (np.ones(len(rows)), (np.arange(len(rows)), np.array(rows))),
            shape=(len(rows), self.size),
        )
        self._diff = []
        for k in range(n):
            src, dst, fac = [], [], []
            for i, a in enumerate(self.monos):
                if a[k]:
                    b = list(a)
                    b[k] -= 1
                    src.append(i)
                    dst.append(self.index[tuple(b)])
                    fac.append(a[k])
            self._diff.append((np.array(src, dtype=int), np.array(dst, dtype=int), np.array(fac, float)))

    def const(self, c: float) -> np.ndarray:
        out = np.zeros(self.size)
        out[0] = c
        return out

    def var(self, k: int, at: float = 0.0) -> np.ndarray:
        out = self.const(at)
        e = [0] * self.n
        e[k] = 1
        out[self.index[tuple(e)]] = 1.0
        return out

    def mul(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        """Product of jets; leading axes broadcast."""
        prods = a[..., self._ia] * b[..., self._ib]
        flat = prods.reshape(-1, prods.shape[-1])
        out = (self._scatter.T @ flat.T).T
        return np.asarray(out).reshape(prods.shape[:-1] + (self.size,))

    def diff(self, a: np.ndarray, k: int) -> np.ndarray:
        src, dst, fac = self._diff[k]
        out = np.zeros_like(a)
        out[..., dst] = a[..., src] * fac
        return out

    def compose_fields(self, exps: np.ndarray, coef: np.ndarray, args: np.ndarray) -> np.ndarray:
        """Packed polynomial fields evaluated at a vector of jets: returns (m, n, size)."""
        K = exps.shape[0]
        maxdeg = int(exps.max()) if exps.size else 0
        powers = [[self.const(1.0)] for _ in range(self.n)]
        for k in range(self.n):
            for _ in range(maxdeg):
                powers[k].append(self.mul(powers[k][-1], args[k]))
        monos = np.empty((K, self.size))
        for a in range(K):
            v = self.const(1.0)
            for k in range(self.n):
                e = int(exps[a, k])
                if e:
                    v = self.mul(v, powers[k][e])
            monos[a] = v
        return np.einsum("ijk,kl->ijl", coef, monos)

    def inverse_matrix(self, M: np.ndarray) -> np.ndarray:
        """Inverse of a jet matrix (r, r, size) with invertible constant part."""
        M0 = M[..., 0]
        M0inv = np.linalg.inv(M0)
        N = M.copy()
        N[..., 0] = 0.0
        # (M0 + N)^-1 = sum_k (-M0^-1 N)^k M0^-1, nilpotent under truncation
        T = -np.einsum("ij,jkl->ikl", M0inv, N)
        term = np.zeros_like(M)
        term[..., 0] = M0inv
        out = term.copy()
        for _ in range(self.degree):
            term = self.matmul(T, term)
            out = out + term
        return out

    def matmul(self, A: np.ndarray, B: np.ndarray) -> np.ndarray:
        prod = self.mul(A[:, :, None, :], B[None, :, :, :])
        return prod.sum(axis=1)

    def to_dict(self, a: np.ndarray) -> dict[Exponent, float]:
        return {e: float(c) for e, c in zip(self.monos, a) if c != 0.0}


@lru_cache(maxsize=16)
def jet_algebra(n: int, degree: int) -> JetAlgebra:
    return JetAlgebra(n, degree)


@dataclass(frozen=True)
class JetSeries:
    """Taylor coefficients of one scalar function at the expansion point.

    Only multi-indices of weighted degree <= ``order`` are stored.
    """

    dim: int
    order: int
    weights: tuple[int, ...]
    coeffs: Mapping[Exponent, float] = field(default_factory=dict)

    def __post_init__(self):
        for e in self.coeffs:
            if sum(a * w for a, w in zip(e, self.weights)) > self.order:
                raise ValueError(f"multi-index {e} exceeds weighted order {self.order}")

    def polynomial(self) -> Polynomial:
        return Polynomial(self.dim, dict(self.coeffs))

    def homogeneous_part(self, degree: int) -> Polynomial:
        return self.polynomial().homogeneous_part(self.weights, degree)

    def part_below(self, degree: int) -> Polynomial:
        return Polynomial(self.dim, {e: c for e, c in self.coeffs.items()
                                     if sum(a * w for a, w in zip(e, self.weights)) < degree})

    def __call__(self, x):
        return self.polynomial()(x)

    @classmethod
    def from_polynomial(cls, p: Polynomial, order: int, weights: Sequence[int]) -> "JetSeries":
        w = tuple(int(v) for v in weights)
        return cls(p.nvars, order, w, {e: c for e, c in p.terms.items()
                                        if sum(a * b for a, b in zip(e, w)) <= order})


def transport_exp_jets(fields: Sequence[PolyVectorField], q, center, degree: int,
                       rel_tol: float = 1e-13, abs_tol: float = 1e-15):
    """Taylor expansion in h of F(center + h) = exp(sum_i (center_i + h_i) X_i)(q).

    The truncated series is carried through the flow by integrating its
    coefficient ODE, so the returned jets are F and its derivatives at ``center``.
    Returns ``(algebra, F)`` with F of shape (n, size).
    """
    n = fields[0].dim
    alg = jet_algebra(n, degree)
    exps, coef = compile_fields(list(fields))
    center = np.asarray(center, dtype=float)
    ctrl = np.stack([alg.var(i, center[i]) for i in range(len(fields))])
    y0 = np.stack([alg.const(v) for v in np.asarray(q, dtype=float)])

    def rhs(_t, z):
        Y = z.reshape(n, alg.size)
        Xy = alg.compose_fields(exps, coef, Y)  # (m, n, size)
        out = alg.mul(ctrl[:, None, :], Xy).sum(axis=0)
        return out.ravel()

    sol = solve_ivp(rhs, (0.0, 1.0), y0.ravel(), method="DOP853", rtol=rel_tol, atol=abs_tol)
    if not sol.success:
        raise RuntimeError(f"jet transport failed: {sol.message}")
    return alg, sol.y[:, -1].reshape(n, alg.size)


def pulled_back_coefficient_jets(fields: Sequence[PolyVectorField], q, center, degree: int,
                                 rel_tol: float = 1e-13, abs_tol: float = 1e-15):
    """Jets at ``center`` of a_ij with X~_i = sum_j a_ij d_j, X~_i = (F_q^-1)_* X_i.

    Valid to total degree ``degree``; returns ``(algebra, A)`` with A of shape (n, n, size).
    """
    n = fields[0].dim
    alg1, F = transport_exp_jets(fields, q, center, degree + 1, rel_tol, abs_tol)
    alg = jet_algebra(n, degree)
    # restrict to the lower-degree algebra
    sel = np.array([alg1.index[e] for e in alg.monos])
    dF = np.stack([np.stack([alg1.diff(F[j], k)[sel] for k in range(n)]) for j in range(n)])
    exps, coef = compile_fields(list(fields))
    XF = alg.compose_fields(exps, coef, F[:, sel])  # (n_fields, n, size)
    inv = alg.inverse_matrix(dF)
    A = np.stack([alg.matmul(inv, XF[i][:, None, :])[:, 0, :] for i in range(len(fields))])
    return alg, A
