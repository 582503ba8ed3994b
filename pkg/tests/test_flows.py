import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from srgeo.flows import (Dilation, FlowConfig, ChartEscape, FlowError, coordinate_frame, dilate,
                         exp_coords, exp_coords_inverse, flow, rescaled_frame)
from srgeo.nilpotent import nilpotent_frame_at

coord = st.floats(-0.5, 0.5)


@given(st.tuples(coord, coord, coord), st.floats(-0.8, 0.8), st.floats(-0.8, 0.8))
def test_flow_group_law(perturbed_frame, q, s, t):
    X = perturbed_frame.fields[1]
    a = flow(X, flow(X, q, s), t)
    b = flow(X, q, s + t)
    assert np.abs(a - b).max() < 1e-9


def test_diagonal_flow_closed_form(heis):
    assert np.allclose(flow(heis[0] + heis[1], np.zeros(3), 1.0), [1, 1, 0], atol=1e-12)


def test_exp_coords_identity_on_group(heis_frame):
    rng = np.random.default_rng(3)
    for x in rng.uniform(-1, 1, size=(10, 3)):
        assert np.abs(exp_coords(heis_frame, np.zeros(3), x) - x).max() < 1e-10


def test_exp_coords_inverse_diagonal(heis_frame):
    x = exp_coords_inverse(heis_frame, np.zeros(3), np.array([1.0, 1.0, 0.0]))
    assert np.allclose(x, [1, 1, 0], atol=1e-9)


@given(st.tuples(coord, coord, coord))
def test_exp_coords_inverse_roundtrip(perturbed_frame, x):
    q = np.array([0.1, -0.2, 0.05])
    p = exp_coords(perturbed_frame, q, x)
    assert np.abs(exp_coords_inverse(perturbed_frame, q, p, tol=1e-12) - x).max() < 1e-8


def test_exp_coords_injective_spot_check(perturbed_frame):
    rng = np.random.default_rng(5)
    q = np.zeros(3)
    for _ in range(100):
        x, y = rng.uniform(-0.4, 0.4, size=(2, 3))
        if np.linalg.norm(x - y) < 1e-3:
            continue
        d = np.linalg.norm(exp_coords(perturbed_frame, q, x) - exp_coords(perturbed_frame, q, y))
        assert d >= 1e-6


def test_coordinate_frame_at_origin_is_standard_basis(engel_frame):
    C = coordinate_frame(engel_frame, np.array([0.2, 0.1, -0.1, 0.3]), np.zeros(4))
    assert np.abs(C - np.eye(4)).max() < 1e-10


def test_coordinate_frame_reproduces_group_fields(heis_frame):
    s = np.array([0.3, -0.2, 0.1])
    C = coordinate_frame(heis_frame, np.zeros(3), s)
    expect = np.array([f(s) for f in heis_frame.fields])
    assert np.abs(C - expect).max() < 1e-9


@pytest.mark.parametrize("r,s", [(0.5, 0.5), (0.5, 0.25), (0.25, 0.5)])
def test_rescaled_frame_scaling_identity(perturbed_frame, r, s):
    q = np.zeros(3)
    x = np.array([0.3, -0.4, 0.2])
    w = np.asarray(perturbed_frame.weights, float)
    lhs = rescaled_frame(perturbed_frame, q, r * s, x)
    # r s-rescaling equals the s-rescaling of the r-rescaled frame
    inner = rescaled_frame(perturbed_frame, q, r, x * s ** w)
    rhs = (s ** w)[:, None] * inner / (s ** w)[None, :]
    assert np.abs(lhs - rhs).max() < 1e-8


def test_rescaled_frame_approaches_nilpotent(perturbed_frame):
    nf = nilpotent_frame_at(perturbed_frame, np.zeros(3))
    x = np.array([0.5, -0.5, 0.3])
    target = np.array([f(x) for f in nf.fields])
    errs = [np.abs(rescaled_frame(perturbed_frame, np.zeros(3), r, x) - target).max()
            for r in (0.4, 0.1)]
    assert errs[1] < errs[0] and errs[1] < 0.1


def test_dilation():
    d = Dilation((1, 1, 2), 0.5)
    assert np.allclose(dilate([1, 2, 4], d), [0.5, 1, 1])
    with pytest.raises(ValueError):
        Dilation((1,), 0.0)


def test_chart_escape(perturbed_frame):
    cfg = FlowConfig(chart_box=((-0.45, -3, -3), (3, 3, 3)))
    with pytest.raises(FlowError):
        flow(perturbed_frame.fields[0], np.zeros(3), -1.0, cfg)
