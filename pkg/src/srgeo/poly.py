"""Exact multivariate polynomials and polynomial vector fields.

Coefficients are float64 and arithmetic is exact up to coefficient rounding.
A polynomial is a map ``exponent tuple -> coefficient``; exact zeros are
dropped so the zero polynomial has an empty term map.
"""

from __future__ import annotations

from itertools import product
from typing import Iterable, Mapping, Sequence

import numpy as np

Exponent = tuple[int, ...]


class DimensionError(ValueError):
    pass


class Polynomial:
    __slots__ = ("nvars", "terms", "_arrays")

    def __init__(self, nvars: int, terms: Mapping[Exponent, float] | None = None):
        self.nvars = int(nvars)
        clean: dict[Exponent, float] = {}
        for e, c in (terms or {}).items():
            e = tuple(int(v) for v in e)
            if len(e) != self.nvars:
                raise DimensionError(f"exponent {e} has wrong length for {nvars} variables")
            if min(e, default=0) < 0:
                raise ValueError(f"negative exponent {e}")
            c = float(c)
            if c != 0.0:
                clean[e] = clean.get(e, 0.0) + c
                if clean[e] == 0.0:
                    del clean[e]
        self.terms = clean
        self._arrays = None

    @classmethod
    def zero(cls, nvars: int) -> "Polynomial":
        return cls(nvars)

    @classmethod
    def constant(cls, nvars: int, c: float) -> "Polynomial":
        return cls(nvars, {(0,) * nvars: c})

    @classmethod
    def variable(cls, nvars: int, k: int) -> "Polynomial":
        e = [0] * nvars
        e[k] = 1
        return cls(nvars, {tuple(e): 1.0})

    # -- arithmetic -------------------------------------------------------

    def _coerce(self, other) -> "Polynomial":
        if isinstance(other, Polynomial):
            if other.nvars != self.nvars:
                raise DimensionError(f"{self.nvars} vs {other.nvars} variables")
            return other
        return Polynomial.constant(self.nvars, float(other))

    def __add__(self, other):
        other = self._coerce(other)
        out = dict(self.terms)
        for e, c in other.terms.items():
            out[e] = out.get(e, 0.0) + c
        return Polynomial(self.nvars, out)

    __radd__ = __add__

    def __neg__(self):
        return Polynomial(self.nvars, {e: -c for e, c in self.terms.items()})

    def __sub__(self, other):
        return self + (-self._coerce(other))

    def __rsub__(self, other):
        return self._coerce(other) - self

    def __mul__(self, other):
        if not isinstance(other, Polynomial):
            c = float(other)
            return Polynomial(self.nvars, {e: c * v for e, v in self.terms.items()})
        other = self._coerce(other)
        out: dict[Exponent, float] = {}
        for e1, c1 in self.terms.items():
            for e2, c2 in other.terms.items():
                e = tuple(a + b for a, b in zip(e1, e2))
                out[e] = out.get(e, 0.0) + c1 * c2
        return Polynomial(self.nvars, out)

    __rmul__ = __mul__

    def __pow__(self, k: int):
        if int(k) != k or k < 0:
            raise ValueError("only non-negative integer powers")
        out = Polynomial.constant(self.nvars, 1.0)
        base = self
        k = int(k)
        while k:
            if k & 1:
                out = out * base
            base = base * base
            k >>= 1
        return out

    def __eq__(self, other):
        if isinstance(other, (int, float)):
            other = Polynomial.constant(self.nvars, other)
        if not isinstance(other, Polynomial):
            return NotImplemented
        return self.nvars == other.nvars and self.terms == other.terms

    def __hash__(self):
        return hash((self.nvars, frozenset(self.terms.items())))

    def __repr__(self):
        return f"Polynomial({self.nvars}, {self.terms!r})"

    # -- calculus ---------------------------------------------------------

    def diff(self, k: int) -> "Polynomial":
        out = {}
        for e, c in self.terms.items():
            if e[k]:
                d = list(e)
                d[k] -= 1
                out[tuple(d)] = c * e[k]
        return Polynomial(self.nvars, out)

    def is_zero(self) -> bool:
        return not self.terms

    def degree(self) -> int:
        return max((sum(e) for e in self.terms), default=-1)

    def weighted_degrees(self, weights: Sequence[int]) -> set[int]:
        return {sum(a * w for a, w in zip(e, weights)) for e in self.terms}

    def homogeneous_part(self, weights: Sequence[int], degree: int) -> "Polynomial":
        return Polynomial(
            self.nvars,
            {e: c for e, c in self.terms.items()
             if sum(a * w for a, w in zip(e, weights)) == degree},
        )

    def max_abs_coeff(self) -> float:
        return max((abs(c) for c in self.terms.values()), default=0.0)

    def compose(self, subs: Sequence["Polynomial"]) -> "Polynomial":
        """Substitute variable k by ``subs[k]`` (all sharing one variable count)."""
        if len(subs) != self.nvars:
            raise DimensionError("need one substitution per variable")
        nv = subs[0].nvars
        out = Polynomial.zero(nv)
        cache: dict[tuple[int, int], Polynomial] = {}
        for e, c in self.terms.items():
            term = Polynomial.constant(nv, c)
            for k, a in enumerate(e):
                if a:
                    if (k, a) not in cache:
                        cache[(k, a)] = subs[k] ** a
                    term = term * cache[(k, a)]
            out = out + term
        return out

    def embed(self, nvars: int, offset: int = 0) -> "Polynomial":
        """Same polynomial viewed in ``nvars`` variables, shifted by ``offset``."""
        out = {}
        for e, c in self.terms.items():
            f = [0] * nvars
            f[offset:offset + self.nvars] = e
            out[tuple(f)] = c
        return Polynomial(nvars, out)

    # -- evaluation -------------------------------------------------------

    def arrays(self) -> tuple[np.ndarray, np.ndarray]:
        if self._arrays is None:
            if self.terms:
                exps = np.array(list(self.terms.keys()), dtype=np.int64)
                coefs = np.array(list(self.terms.values()), dtype=float)
            else:
                exps = np.zeros((0, self.nvars), dtype=np.int64)
                coefs = np.zeros(0)
            self._arrays = (exps, coefs)
        return self._arrays

    def __call__(self, x) -> np.ndarray | float:
        x = np.asarray(x, dtype=float)
        if x.shape[-1] != self.nvars:
            raise DimensionError(f"point of length {x.shape[-1]} for {self.nvars} variables")
        exps, coefs = self.arrays()
        if not len(coefs):
            out = np.zeros(x.shape[:-1])
        else:
            mono = np.prod(x[..., None, :] ** exps, axis=-1)
            out = mono @ coefs
        return float(out) if out.ndim == 0 else out


def polynomial_from_terms(nvars: int, terms: Iterable[tuple[Exponent, float]]) -> Polynomial:
    out: dict[Exponent, float] = {}
    for e, c in terms:
        out[tuple(e)] = out.get(tuple(e), 0.0) + c
    return Polynomial(nvars, out)


class PolyVectorField:
    """Vector field ``sum_j coeffs[j] * d_j`` on R^dim with polynomial coefficients."""

    __slots__ = ("dim", "coeffs")

    def __init__(self, coeffs: Sequence[Polynomial]):
        coeffs = tuple(coeffs)
        if not coeffs:
            raise DimensionError("a vector field needs at least one component")
        dim = len(coeffs)
        for c in coeffs:
            if c.nvars != dim:
                raise DimensionError(f"coefficient in {c.nvars} variables for a field on R^{dim}")
        self.dim = dim
        self.coeffs = coeffs

    @classmethod
    def constant(cls, vector: Sequence[float]) -> "PolyVectorField":
        n = len(vector)
        return cls([Polynomial.constant(n, v) for v in vector])

    @classmethod
    def coordinate(cls, dim: int, k: int) -> "PolyVectorField":
        v = [0.0] * dim
        v[k] = 1.0
        return cls.constant(v)

    @classmethod
    def zero(cls, dim: int) -> "PolyVectorField":
        return cls([Polynomial.zero(dim)] * dim)

    def __add__(self, other: "PolyVectorField"):
        self._check(other)
        return PolyVectorField([a + b for a, b in zip(self.coeffs, other.coeffs)])

    def __sub__(self, other: "PolyVectorField"):
        self._check(other)
        return PolyVectorField([a - b for a, b in zip(self.coeffs, other.coeffs)])

    def __neg__(self):
        return PolyVectorField([-a for a in self.coeffs])

    def __mul__(self, s):
        # scalar or polynomial multiple
        return PolyVectorField([a * s for a in self.coeffs])

    __rmul__ = __mul__

    def __eq__(self, other):
        if not isinstance(other, PolyVectorField):
            return NotImplemented
        return self.coeffs == other.coeffs

    def __hash__(self):
        return hash(self.coeffs)

    def __repr__(self):
        return f"PolyVectorField({list(self.coeffs)!r})"

    def _check(self, other: "PolyVectorField"):
        if self.dim != other.dim:
            raise DimensionError(f"fields on R^{self.dim} and R^{other.dim}")

    def is_zero(self) -> bool:
        return all(c.is_zero() for c in self.coeffs)

    def max_abs_coeff(self) -> float:
        return max(c.max_abs_coeff() for c in self.coeffs)

    def apply(self, f: Polynomial) -> Polynomial:
        """Directional derivative X f."""
        out = Polynomial.zero(self.dim)
        for k, c in enumerate(self.coeffs):
            if not c.is_zero():
                out = out + c * f.diff(k)
        return out

    def __call__(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return np.stack([np.broadcast_to(c(x), x.shape[:-1]) for c in self.coeffs], axis=-1)

    def degree(self) -> int:
        return max(c.degree() for c in self.coeffs)


def lie_bracket(X: PolyVectorField, Y: PolyVectorField) -> PolyVectorField:
    """[X, Y] = (X . grad) Y - (Y . grad) X, computed exactly."""
    if X.dim != Y.dim:
        raise DimensionError(f"cannot bracket fields on R^{X.dim} and R^{Y.dim}")
    return PolyVectorField([X.apply(b) - Y.apply(a) for a, b in zip(X.coeffs, Y.coeffs)])


def iterated_bracket(fields: Sequence[PolyVectorField], index: Sequence[int]) -> PolyVectorField:
    """Left-normed bracket [...[[X_i1, X_i2], X_i3], ...] for a 0-based multi-index."""
    out = fields[index[0]]
    for i in index[1:]:
        out = lie_bracket(out, fields[i])
    return out


def linear_combination(coefs: Sequence[float], fields: Sequence[PolyVectorField]) -> PolyVectorField:
    out = PolyVectorField.zero(fields[0].dim)
    for c, f in zip(coefs, fields):
        if c != 0.0:
            out = out + f * float(c)
    return out


def compile_fields(fields: Sequence[PolyVectorField]) -> tuple[np.ndarray, np.ndarray]:
    """Pack fields into ``(exps (K, n) int64, coef (m, n, K) float64)`` over their joint monomials."""
    n = fields[0].dim
    monos: dict[Exponent, int] = {}
    for f in fields:
        for c in f.coeffs:
            for e in c.terms:
                monos.setdefault(e, len(monos))
    if not monos:
        monos[(0,) * n] = 0
    exps = np.array(list(monos.keys()), dtype=np.int64).reshape(len(monos), n)
    coef = np.zeros((len(fields), n, len(monos)))
    for i, f in enumerate(fields):
        for j, c in enumerate(f.coeffs):
            for e, v in c.terms.items():
                coef[i, j, monos[e]] = v
    return exps, coef


def frame_matrix(fields: Sequence[PolyVectorField], x) -> np.ndarray:
    """Columns are the field values at ``x`` (shape ``(n, len(fields))``)."""
    return np.stack([f(x) for f in fields], axis=-1)


def all_exponents(nvars: int, max_degree: int) -> list[Exponent]:
    return sorted(
        (e for e in product(range(max_degree + 1), repeat=nvars) if sum(e) <= max_degree),
        key=lambda e: (sum(e), tuple(-a for a in e)),
    )
