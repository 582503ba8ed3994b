import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from srgeo.dsl import builtin
from srgeo.frame_core import MetricExtension, build_privileged_frame, frame_scaled_metric
from srgeo.measure import (BumpField, HypersurfacePatch, Region, VolumeForm, coordinate_plane,
                           divergence_identity_check, double_blowup_check,
                           extension_independence_check, federer_density, horizontal_normal,
                           lebesgue, spherical_factor, sr_surface_measure, volume_norm)
from srgeo.nilpotent import nilpotent_frame_at
from srgeo.poly import Polynomial, PolyVectorField
from srgeo.scenarios import divergence_test_fields as make_bumps

from conftest import rotate

FLAT = MetricExtension()
SLICE_AT_ORIGIN = 0.5112090552662251  # area of {x1 = 0} in the Heisenberg unit ball


@pytest.fixture(scope="module")
def euclid2():
    return build_privileged_frame(builtin("euclidean(2)").horizontal)


@given(st.tuples(*[st.floats(-2, 2)] * 3), st.floats(0.5, 10))
def test_volume_norm_heisenberg(heis_frame, q, c):
    assert volume_norm(lebesgue(3), FLAT, heis_frame, np.array(q)) == pytest.approx(1.0)
    assert volume_norm(lebesgue(3, c), FLAT, heis_frame, np.array(q)) == pytest.approx(c)


def test_horizontal_normal_vertical_plane(heis_frame):
    pl = coordinate_plane(3, 0, 0.0, ((-1, -1), (1, 1)))
    hn = horizontal_normal(pl, FLAT, heis_frame, np.array([0.4, -0.3]))
    assert hn.norm == pytest.approx(1.0) and not hn.characteristic


def test_characteristic_point(heis_frame):
    pl = coordinate_plane(3, 2, 0.0, ((-1, -1), (1, 1)))
    assert horizontal_normal(pl, FLAT, heis_frame, np.zeros(2)).characteristic
    assert not horizontal_normal(pl, FLAT, heis_frame, np.array([0.5, 0.0])).characteristic


def test_characteristic_patch_has_negligible_measure(heis_frame):
    eps = 1e-9
    pl = coordinate_plane(3, 2, 0.0, ((-eps, -eps), (eps, eps)))
    riemannian = (2 * eps) ** 2
    assert sr_surface_measure(pl, lebesgue(3), FLAT, heis_frame, quad=4).value < 1e-6 * riemannian


def test_vertical_plane_box_measure(heis_frame):
    pl = coordinate_plane(3, 0, 0.2, ((-1, -1), (1, 1)))
    m = sr_surface_measure(pl, lebesgue(3), FLAT, heis_frame, Region.box((-5, -1, 0), (5, 0.5, 0.4)))
    assert m.value == pytest.approx(1.5 * 0.4, rel=1e-12)


def _tilted_patch(box):
    s1, s2 = Polynomial.variable(2, 0), Polynomial.variable(2, 1)
    return HypersurfacePatch((s1 * 0.3 + s2 * 0.2 + 0.1, s1, s2 + s1 * s1 * 0.5), box)


@given(st.floats(-0.8, 0.8), st.floats(-0.8, 0.8))
def test_additivity(heis_frame, a, b):
    whole = sr_surface_measure(_tilted_patch(((-1, -1), (1, 1))), lebesgue(3), FLAT, heis_frame,
                               quad=12).value
    parts = 0.0
    for lo1, hi1 in ((-1, a), (a, 1)):
        for lo2, hi2 in ((-1, b), (b, 1)):
            parts += sr_surface_measure(_tilted_patch(((lo1, lo2), (hi1, hi2))), lebesgue(3), FLAT,
                                        heis_frame, quad=12).value
    assert parts == pytest.approx(whole, rel=1e-8)


def test_sr_ball_slice_scaling(heis_frame):
    pl = coordinate_plane(3, 0, 0.0, ((-1, -1), (1, 1)))
    vals = {}
    for r in (0.5, 0.25):
        m = sr_surface_measure(pl, lebesgue(3), FLAT, heis_frame, Region.ball((0, 0, 0), r),
                               quad=8, s0=(0.0, 0.0))
        vals[r] = m.value / r ** 3
        assert m.error < 0.02 * m.value
    assert vals[0.5] == pytest.approx(SLICE_AT_ORIGIN, rel=5e-3)
    assert vals[0.25] == pytest.approx(vals[0.5], rel=0.05)


def test_spherical_factor_euclidean_plane(euclid2):
    nf = nilpotent_frame_at(euclid2, np.zeros(2))
    sf = spherical_factor(nf, np.eye(2), np.array([0.6, 0.8]), mc_points=20000, seed=3)
    assert sf.beta == pytest.approx(2.0, rel=1e-2)


def test_spherical_factor_symmetric_and_rotation_invariant(heis, heis_frame, heis_nf):
    a = spherical_factor(heis_nf, np.eye(3), np.array([1.0, 0, 0]), mc_points=40000, seed=1)
    b = spherical_factor(heis_nf, np.eye(3), np.array([-1.0, 0, 0]), mc_points=40000, seed=2)
    se = math.hypot(a.standard_error, b.standard_error)
    assert abs(a.beta - b.beta) < 2 * se + 1e-3
    frame_Y = build_privileged_frame(rotate(heis, math.radians(30)))
    nfY = nilpotent_frame_at(frame_Y, np.zeros(3))
    nu = frame_Y.matrix(np.zeros(3))[:, 0]
    c = spherical_factor(nfY, frame_Y.matrix(np.zeros(3)), nu, mc_points=40000, seed=4)
    assert abs(a.beta - c.beta) < 2 * math.hypot(a.standard_error, c.standard_error) + 1e-3
    assert a.value_at_origin == pytest.approx(SLICE_AT_ORIGIN, rel=2e-2)
    assert a.beta >= a.value_at_origin


@pytest.mark.parametrize("c", [2.0, 10.0])
def test_density_linear_in_omega(euclid2, c):
    pl = coordinate_plane(2, 0, 0.0, ((-1,), (1,)))
    s_p = np.zeros(1)
    base = federer_density(pl, lebesgue(2), FLAT, euclid2, s_p, radii=(0.2,), center_count=3)
    scaled = federer_density(pl, lebesgue(2, c), FLAT, euclid2, s_p, radii=(0.2,), center_count=3)
    assert scaled.value == pytest.approx(c * base.value, rel=1e-9)
    rep = double_blowup_check(pl, lebesgue(2, c), FLAT, euclid2, s_p, radii=(0.2,),
                              center_count=3, mc_points=4000)
    assert rep.right_side == pytest.approx(c * 2.0, rel=1e-2)
    assert rep.relative_discrepancy < 0.05


def test_divergence_identity_weighted(heis_frame):
    omega = VolumeForm(Polynomial.constant(3, 1.0) + Polynomial.variable(3, 0) ** 2 * 0.1)
    for bump in make_bumps(heis_frame, np.zeros(3), 0.5):
        rep = divergence_identity_check(omega, FLAT, heis_frame, np.zeros(3), 0.5, bump)
        assert rep.relative_mismatch < 1e-3
        assert abs(rep.volume_side) > 1e-3


def test_divergence_identity_classical(heis_frame):
    x = [Polynomial.variable(3, k) for k in range(3)]
    radial = BumpField(PolyVectorField(x), (0.0, 0.0, 0.0), math.inf)
    euclid = build_privileged_frame(builtin("euclidean(3)").horizontal)
    rep = divergence_identity_check(lebesgue(3), FLAT, euclid, np.zeros(3), 1.0, radial)
    assert rep.volume_side == pytest.approx(4 * math.pi, rel=1e-10)
    assert rep.boundary_side == pytest.approx(4 * math.pi, rel=1e-10)


def test_extension_independence(heis_frame):
    pl = coordinate_plane(3, 0, 0.1, ((-0.5, -0.5), (0.5, 0.5)))
    metric_B = frame_scaled_metric(heis_frame.fields, (1.0, 1.0, 4.0))
    rep = extension_independence_check(pl, lebesgue(3), heis_frame, None, FLAT, metric_B)
    assert rep.relative_discrepancy < 1e-3


def test_bump_vanishes_outside_support():
    b = BumpField(PolyVectorField.coordinate(3, 0), (0.0, 0.0, 0.0), 0.3)
    assert np.all(b(np.array([[0.31, 0, 0], [0, 0.5, 0]])) == 0)
    assert b(np.zeros(3))[0] == pytest.approx(1.0)
