import math

import numpy as np
import pytest

from conftest import heis_gauge
from srgeo.distance import (DistanceQuery, ball_boundary_sample, ball_roundtrip_check,
                            diameter_estimate, distance_oracle, distance_shooting, geodesic_shoot,
                            local_global_consistency, shooting_solve, structure)
from srgeo.dsl import builtin


def heis_mul(a, b):
    out = a + b
    out[..., 2] += 0.5 * (a[..., 0] * b[..., 1] - a[..., 1] * b[..., 0])
    return out


def heis_dist(x, y):
    z = heis_mul(-np.asarray(x, float), np.asarray(y, float))
    return heis_gauge(math.hypot(z[0], z[1]), z[2])


@pytest.fixture(scope="module")
def pairs():
    rng = np.random.default_rng(11)
    return rng.uniform(-0.6, 0.6, size=(50, 2, 3))


def d(sr, x, y):
    L, P, _ = shooting_solve(sr, x, y)
    assert P is not None
    return L


def test_matches_closed_form(heis, pairs):
    sr = structure(heis)
    for x, y in pairs[:20]:
        assert d(sr, x, y) == pytest.approx(heis_dist(x, y), rel=1e-6)


def test_symmetry(heis, pairs):
    sr = structure(heis)
    for x, y in pairs:
        assert abs(d(sr, x, y) - d(sr, y, x)) < 1e-6


def test_triangle_inequality(engel_frame):
    sr = structure(engel_frame.horizontal)
    rng = np.random.default_rng(4)
    for x, y, z in rng.uniform(-0.3, 0.3, size=(8, 3, 4)):
        assert d(sr, x, z) <= d(sr, x, y) + d(sr, y, z) + 1e-6


def test_left_invariance(heis):
    sr = structure(heis)
    rng = np.random.default_rng(8)
    for g, x, y in rng.uniform(-0.5, 0.5, size=(20, 3, 3)):
        assert abs(d(sr, heis_mul(g, x), heis_mul(g, y)) - d(sr, x, y)) < 1e-4


@pytest.mark.parametrize("r", [0.5, 0.25])
def test_dilation_homogeneity(heis, r):
    sr = structure(heis)
    s = np.array([r, r, r * r])
    rng = np.random.default_rng(9)
    for x, y in rng.uniform(-0.6, 0.6, size=(10, 2, 3)):
        assert abs(d(sr, s * x, s * y) - r * d(sr, x, y)) < 1e-4 * r


def test_vertical_distance(heis):
    res = distance_shooting(DistanceQuery(heis, (0, 0, 0), (0, 0, 1)))
    assert res.value == pytest.approx(2 * math.sqrt(math.pi), rel=1e-3)


def test_oracle_is_upper_bound(heis):
    q = DistanceQuery(heis, (0, 0, 0), (0.3, -0.2, 0.15), engine="oracle")
    orc = distance_oracle(q, segments=16)
    L = distance_shooting(q).value
    assert L <= orc.upper_bound + 1e-3 * L
    assert orc.upper_bound < 1.1 * L


def test_geodesic_circle_radius(heis):
    lam = 2.0
    arc = geodesic_shoot(heis, (0, 0, 0), (1.0, 0.0, lam), 2 * math.pi / lam, samples=65)
    xy = arc.points[:, :2]
    center = 0.5 * (xy.max(axis=0) + xy.min(axis=0))
    radii = np.linalg.norm(xy - center, axis=1)
    assert np.ptp(radii) < 1e-6 and radii.mean() == pytest.approx(1 / lam, rel=1e-6)
    assert np.linalg.norm(xy[-1]) < 1e-8
    assert arc.hamiltonian_drift < 1e-9


def test_ball_boundary_roundtrip(heis):
    assert ball_roundtrip_check(heis, np.zeros(3), 0.1) < 1e-4
    pts = ball_boundary_sample(heis, np.zeros(3), 0.1, 8)
    sr = structure(heis)
    for p in pts:
        assert d(sr, np.zeros(3), p) == pytest.approx(0.1, abs=1e-4)


def test_diameter_bounds(heis):
    est = diameter_estimate(heis, np.zeros(3), 0.1)
    assert 0.95 <= est.ratio <= 1.001


def test_euclidean_diameter():
    est = diameter_estimate(builtin("euclidean(3)").horizontal, np.zeros(3), 0.1)
    assert est.ratio == pytest.approx(1.0, abs=1e-6)


def test_local_global_consistency(heis_frame):
    rep = local_global_consistency(heis_frame, np.zeros(3), 0.1, q_shift=(0.05, 0, 0), pairs=6)
    assert rep.status == "ok", rep
    assert rep.max_discrepancy < 1e-3


def test_domain_rejects_outside_points(heis):
    with pytest.raises(ValueError):
        DistanceQuery(heis, (0, 0, 0), (5, 0, 0), domain=((-1, -1, -1), (1, 1, 1)))
    with pytest.raises(ValueError):
        DistanceQuery(heis, (0, 0, 0), (0, 0, 0), engine="magic")
