"""Bracket-generating frames: flags, privileged frames and metric extensions."""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .poly import (
    DimensionError,
    Polynomial,
    PolyVectorField,
    frame_matrix,
    iterated_bracket,
    lie_bracket,
)

RANK_RTOL = 1e-9


class FrameError(ValueError):
    """Raised when a frame is not bracket generating, not regular, or singular."""


def numerical_rank(M: np.ndarray, rtol: float = RANK_RTOL) -> int:
    if M.size == 0:
        return 0
    s = np.linalg.svd(M, compute_uv=False)
    if s[0] == 0.0:
        return 0
    return int(np.sum(s > rtol * s[0]))


def _bracket_words(m: int, length: int):
    # left-normed words; [X_i, X_i] = 0 so skip a repeated first pair
    for w in itertools.product(range(m), repeat=length):
        if length >= 2 and w[0] >= w[1]:
            continue
        yield w


class _BracketCache:
    def __init__(self, horizontal: Sequence[PolyVectorField]):
        self.h = list(horizontal)
        self.cache: dict[tuple[int, ...], PolyVectorField] = {(i,): f for i, f in enumerate(self.h)}

    def get(self, word: tuple[int, ...]) -> PolyVectorField:
        if word not in self.cache:
            self.cache[word] = lie_bracket(self.get(word[:-1]), self.h[word[-1]])
        return self.cache[word]

    def layer(self, length: int) -> list[tuple[tuple[int, ...], PolyVectorField]]:
        return [(w, self.get(w)) for w in _bracket_words(len(self.h), length)]


@dataclass(frozen=True)
class FlagResult:
    growth: tuple[int, ...]
    step: int
    equiregular: bool
    per_point: tuple[tuple[int, ...], ...]
    first_irregular_point: tuple[float, ...] | None = None

    @property
    def Q(self) -> int:
        return homogeneous_dimension(self.growth)


def homogeneous_dimension(growth: Sequence[int]) -> int:
    prev, Q = 0, 0
    for j, nj in enumerate(growth, start=1):
        Q += j * (nj - prev)
        prev = nj
    return Q


def weights_from_growth(growth: Sequence[int]) -> tuple[int, ...]:
    w, prev = [], 0
    for j, nj in enumerate(growth, start=1):
        w.extend([j] * (nj - prev))
        prev = nj
    return tuple(w)


def _check_fields(horizontal: Sequence[PolyVectorField]) -> int:
    if not horizontal:
        raise FrameError("at least one horizontal field is required")
    n = horizontal[0].dim
    for f in horizontal:
        if f.dim != n:
            raise DimensionError("horizontal fields live on different dimensions")
    return n


def compute_flag(
    horizontal: Sequence[PolyVectorField],
    probe_points: Sequence[Sequence[float]],
    max_step: int = 6,
) -> FlagResult:
    """Growth vector of D^1 c D^2 c ... at each probe point.

    Raises FrameError when the horizontal fields are dependent at a probe point or
    when brackets up to ``max_step`` do not span R^n there.
    """
    n = _check_fields(horizontal)
    cache = _BracketCache(horizontal)
    per_point = []
    for q in probe_points:
        q = np.asarray(q, dtype=float)
        cols = [f(q) for f in horizontal]
        if numerical_rank(np.array(cols).T) < len(horizontal):
            raise FrameError(f"horizontal fields are linearly dependent at {tuple(q)}")
        growth = [numerical_rank(np.array(cols).T)]
        length = 1
        while growth[-1] < n:
            length += 1
            if length > max_step:
                raise FrameError(
                    f"Chow condition fails within step {max_step} at point {tuple(q)}"
                )
            cols.extend(f(q) for _, f in cache.layer(length))
            r = numerical_rank(np.array(cols).T)
            growth.append(r)
        # drop trailing repeats that can appear when a layer adds nothing new
        per_point.append(tuple(growth))
    first = per_point[0]
    for q, g in zip(probe_points, per_point):
        if g != first:
            return FlagResult(first, len(first), False, tuple(per_point),
                              tuple(float(v) for v in q))
    return FlagResult(first, len(first), True, tuple(per_point))


@dataclass(frozen=True)
class MetricExtension:
    """Riemannian metric extending the sub-Riemannian one.

    ``mode == "frame-orthonormal"`` declares the privileged frame orthonormal;
    ``mode == "user-matrix"`` uses the polynomial Gram matrix ``matrix_field``.
    """

    mode: str = "frame-orthonormal"
    matrix_field: tuple[tuple[Polynomial, ...], ...] | None = None

    def __post_init__(self):
        if self.mode not in ("frame-orthonormal", "user-matrix"):
            raise ValueError(f"unknown metric extension mode {self.mode!r}")
        if self.mode == "user-matrix":
            if self.matrix_field is None:
                raise ValueError("user-matrix mode needs matrix_field")
            n = len(self.matrix_field)
            if any(len(row) != n for row in self.matrix_field):
                raise DimensionError("metric matrix must be square")
            for i in range(n):
                for j in range(n):
                    if self.matrix_field[i][j] != self.matrix_field[j][i]:
                        raise ValueError("metric matrix must be symmetric")

    def gram(self, q) -> np.ndarray:
        assert self.matrix_field is not None
        q = np.asarray(q, dtype=float)
        return np.array([[float(g(q)) for g in row] for row in self.matrix_field])

    def validate(self, horizontal: Sequence[PolyVectorField], probe_points, tol: float = 1e-8):
        """Positive definite and reproducing the horizontal orthonormality."""
        if self.mode == "frame-orthonormal":
            return
        for q in probe_points:
            G = self.gram(q)
            if np.linalg.eigvalsh(G).min() <= 0:
                raise FrameError(f"metric matrix not positive definite at {tuple(q)}")
            H = frame_matrix(horizontal, q)
            R = H.T @ G @ H - np.eye(H.shape[1])
            if np.abs(R).max() > tol:
                raise FrameError(
                    f"metric does not restrict to the sub-Riemannian metric at {tuple(q)} "
                    f"(residual {np.abs(R).max():.2e})"
                )


def _adjugate(M: list[list[Polynomial]]) -> list[list[Polynomial]]:
    n = len(M)

    def det(A):
        if len(A) == 1:
            return A[0][0]
        out = Polynomial.zero(A[0][0].nvars)
        for j in range(len(A)):
            minor = [row[:j] + row[j + 1:] for row in A[1:]]
            term = A[0][j] * det(minor)
            out = out + term if j % 2 == 0 else out - term
        return out

    adj = [[None] * n for _ in range(n)]
    for i in range(n):
        for j in range(n):
            minor = [row[:j] + row[j + 1:] for k, row in enumerate(M) if k != i]
            c = det(minor) if minor else Polynomial.constant(M[0][0].nvars, 1.0)
            adj[j][i] = c if (i + j) % 2 == 0 else -c
    return adj, det(M)


def frame_scaled_metric(fields: Sequence[PolyVectorField], scales: Sequence[float]) -> MetricExtension:
    """Metric making ``fields[i]`` orthogonal with length ``scales[i]``.

    Needs a frame with constant determinant so that the inverse frame matrix stays polynomial.
    """
    n = len(fields)
    M = [[fields[j].coeffs[i] for j in range(n)] for i in range(n)]
    adj, det = _adjugate(M)
    if det.degree() > 0 or det.is_zero():
        raise FrameError("frame determinant is not a nonzero constant")
    d = next(iter(det.terms.values()))
    inv = [[adj[i][j] * (1.0 / d) for j in range(n)] for i in range(n)]
    G = []
    for a in range(n):
        row = []
        for b in range(n):
            s = Polynomial.zero(n)
            for k in range(n):
                s = s + inv[k][a] * inv[k][b] * float(scales[k]) ** 2
            row.append(s)
        G.append(tuple(row))
    return MetricExtension("user-matrix", tuple(G))


@dataclass(frozen=True)
class PrivilegedFrame:
    fields: tuple[PolyVectorField, ...]
    weights: tuple[int, ...]
    growth: tuple[int, ...]
    bracket_recipe: tuple[tuple[int, ...], ...]
    metric: MetricExtension = field(default_factory=MetricExtension)
    base_point: tuple[float, ...] = ()

    @property
    def dim(self) -> int:
        return len(self.fields)

    @property
    def m(self) -> int:
        return self.growth[0]

    @property
    def step(self) -> int:
        return len(self.growth)

    @property
    def Q(self) -> int:
        return int(sum(self.weights))

    @property
    def horizontal(self) -> tuple[PolyVectorField, ...]:
        return self.fields[: self.m]

    def matrix(self, q) -> np.ndarray:
        return frame_matrix(self.fields, q)


def build_privileged_frame(
    horizontal: Sequence[PolyVectorField],
    metric: MetricExtension | None = None,
    base_point: Sequence[float] | None = None,
    probe_points: Sequence[Sequence[float]] | None = None,
) -> PrivilegedFrame:
    """Complete the horizontal frame by iterated brackets into a privileged frame.

    Brackets of each length are added greedily: the candidate with the largest
    component orthogonal to the current span wins, ties going to the
    lexicographically smallest word.  With a user metric, non-horizontal fields
    are Gram-Schmidt orthonormalized at ``base_point`` by constant combinations.
    """
    metric = metric or MetricExtension()
    n = _check_fields(horizontal)
    q0 = np.zeros(n) if base_point is None else np.asarray(base_point, dtype=float)
    probes = [q0] if probe_points is None else [np.asarray(p, float) for p in probe_points]
    flag = compute_flag(horizontal, probes)
    if not flag.equiregular:
        raise FrameError(f"structure is not equiregular near {flag.first_irregular_point}")
    m = len(horizontal)
    cache = _BracketCache(horizontal)
    fields = list(horizontal)
    recipe: list[tuple[int, ...]] = [(i,) for i in range(m)]
    for length in range(2, flag.step + 1):
        target = flag.growth[length - 1]
        candidates = cache.layer(length)
        while len(fields) < target:
            B = frame_matrix(fields, q0)
            Qb, _ = np.linalg.qr(B)
            best, best_val = None, -1.0
            scale = max(1.0, np.linalg.norm(B))
            for w, f in candidates:
                v = f(q0)
                resid = np.linalg.norm(v - Qb @ (Qb.T @ v))
                if resid > best_val * (1 + 1e-12) + 1e-15:
                    best, best_val = (w, f), resid
            if best is None or best_val <= RANK_RTOL * scale:
                raise FrameError(f"rank deficiency at base point {tuple(q0)}: not a regular point")
            fields.append(best[1])
            recipe.append(best[0])
            candidates = [c for c in candidates if c[0] != best[0]]
    if numerical_rank(frame_matrix(fields, q0)) < n:
        raise FrameError(f"rank deficiency at base point {tuple(q0)}: not a regular point")
    weights = weights_from_growth(flag.growth)
    if metric.mode == "user-matrix":
        metric.validate(horizontal, probes)
        fields = _gram_schmidt(fields, metric.gram(q0), q0, m)
    return PrivilegedFrame(tuple(fields), weights, flag.growth, tuple(recipe), metric,
                           tuple(float(v) for v in q0))


def _gram_schmidt(fields, G, q0, m):
    # constant-coefficient orthonormalization at the base point; horizontal fields
    # are already G-orthonormal, later ones only subtract earlier (lower or equal layer) fields
    out = list(fields[:m])
    vals = [f(q0) for f in out]
    for f in fields[m:]:
        v = f(q0)
        g = f
        for e, ve in zip(out, vals):
            c = float(v @ G @ ve)
            g = g - e * c
            v = v - c * ve
        nrm = float(np.sqrt(v @ G @ v))
        out.append(g * (1.0 / nrm))
        vals.append(v / nrm)
    return out


def evaluate_metric(metric: MetricExtension, frame: PrivilegedFrame, q, v, w) -> float:
    q = np.asarray(q, dtype=float)
    v = np.asarray(v, dtype=float)
    w = np.asarray(w, dtype=float)
    if metric.mode == "user-matrix":
        return float(v @ metric.gram(q) @ w)
    M = frame.matrix(q)
    if numerical_rank(M) < M.shape[0]:
        raise FrameError(f"frame is singular at {tuple(q)}")
    cv = np.linalg.solve(M, v)
    cw = np.linalg.solve(M, w)
    return float(cv @ cw)


def metric_gram(metric: MetricExtension, frame: PrivilegedFrame, q) -> np.ndarray:
    """Gram matrix of g at q in chart coordinates."""
    if metric.mode == "user-matrix":
        return metric.gram(q)
    Minv = np.linalg.inv(frame.matrix(q))
    return Minv.T @ Minv
