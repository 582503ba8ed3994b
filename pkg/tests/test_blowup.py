import math

import numpy as np
import pytest

from srgeo.blowup import (coordinate_change_isometry, diameter_asymptotics, distance_convergence,
                          frame_convergence, q_grid, rescaled_distance, uniform_radius_estimate)
from srgeo.flows import FlowConfig
from srgeo.frame_core import build_privileged_frame

from conftest import rotate

PERTURBED_CFG = FlowConfig(chart_box=((-0.45, -3, -3), (3, 3, 3)))


def test_group_input_deviation_is_noise(heis_frame):
    rep = distance_convergence(heis_frame, [(0.0, 0.0, 0.0), (0.2, -0.1, 0.3)], (0.4, 0.1),
                               pair_count=6, box=0.3, seed=1)
    assert max(rep.sup_deviation) < 5e-3


def test_rescaled_distance_approaches_tangent(perturbed_frame):
    vals = [rescaled_distance(perturbed_frame, np.zeros(3), r, np.zeros(3), np.array([1.0, 0, 0]),
                              PERTURBED_CFG) for r in (0.4, 0.1)]
    assert abs(vals[1] - 1.0) < abs(vals[0] - 1.0) + 1e-9
    assert abs(vals[1] - 1.0) < 0.05


def test_perturbed_deviation_decreases(perturbed_frame):
    rep = distance_convergence(perturbed_frame, [(0.0, 0.0, 0.0)], (0.4, 0.2, 0.1), pair_count=8,
                               box=0.25, seed=3, cfg=PERTURBED_CFG)
    assert rep.monotone_decreasing
    rows = rep.csv_rows()
    assert len(rows) == 3 and rows[0][:2] == (0.4, 0)


def test_frame_convergence_linear_rate(perturbed_frame):
    rep = frame_convergence(perturbed_frame, np.zeros(3), (0.4, 0.2, 0.1), cfg=PERTURBED_CFG)
    assert rep.linear_rate, rep.ratios
    assert rep.deviation[-1] < rep.deviation[0]


def test_frame_convergence_on_group_is_noise(heis_frame):
    rep = frame_convergence(heis_frame, np.array([0.3, 0.1, -0.2]), (0.4, 0.1))
    assert max(rep.deviation) < 1e-8 and rep.linear_rate


def test_isometry_rotated_heisenberg(heis, heis_frame):
    theta = math.radians(30)
    frame_Y = build_privileged_frame(rotate(heis, theta))
    rep = coordinate_change_isometry(heis_frame, frame_Y, np.zeros(3), epsilons=(0.1, 0.01),
                                     pair_count=4)
    L = np.array(rep.L_hat)
    c, s = math.cos(theta), math.sin(theta)
    assert np.abs(L[:2, :2] - np.array([[c, s], [-s, c]])).max() < 1e-2
    assert abs(abs(L[2, 2]) - 1) < 1e-2
    assert rep.orthogonality[-1] <= rep.orthogonality[0] + 1e-12
    assert rep.metric_isometry < 2e-2 and rep.off_block[-1] < 1e-2


def test_uniform_radius_positive(perturbed_frame):
    rep = uniform_radius_estimate(perturbed_frame, [(0.0, 0.0, 0.0), (0.3, 0.2, -0.1)],
                                  ((-0.5, -0.5, -0.5), (0.5, 0.5, 0.5)), PERTURBED_CFG,
                                  count=8, iters=6)
    assert rep.r0 > 0


def test_uniform_radius_needs_origin(perturbed_frame):
    with pytest.raises(ValueError):
        uniform_radius_estimate(perturbed_frame, [(0, 0, 0)], ((0.1, 0.1, 0.1), (1, 1, 1)))


def test_diameter_ratios_nondecreasing(heis):
    rep = diameter_asymptotics(heis, [(0.0, 0.0, 0.0)], (0.2, 0.1, 0.05), count=12)
    assert rep.nondecreasing and rep.max_ratio <= 1 + 1e-3 and rep.passed


def test_q_grid():
    g = q_grid((0.0, 1.0, 2.0), 0.5)
    assert len(g) == 27 and g[0] == (-0.5, 0.5, 1.5) and g[-1] == (0.5, 1.5, 2.5)


def test_radii_must_decrease():
    from srgeo.blowup import ConvergenceReport
    with pytest.raises(ValueError):
        ConvergenceReport((0.1, 0.2), [0.0, 0.0], [[0.0], [0.0]], "")
