import numpy as np
import pytest

from srgeo.dsl import builtin
from srgeo.frame_core import build_privileged_frame
from srgeo.nilpotent import (GroupLaw, coefficient_jets,
                             nilpotent_approximation, nilpotent_frame_at, structure_constants,
                             verify_stratified)
from srgeo.poly import PolyVectorField


def _max_coeff_diff(A, B):
    return max((a - b).max_abs_coeff() for a, b in zip(A, B))


def test_perturbed_heisenberg_tangent_is_heisenberg(perturbed_frame, heis_frame):
    nf = nilpotent_frame_at(perturbed_frame, np.zeros(3))
    assert _max_coeff_diff(nf.fields, heis_frame.fields) < 1e-8


def test_perturbed_jet_linear_coefficient(perturbed_frame):
    jets = coefficient_jets(perturbed_frame, np.zeros(3))
    # a_23 = x1/2 + x1^2 + ...: linear coefficient in x1 is 1/2
    assert jets[1][2].coeffs.get((1, 0, 0), 0.0) == pytest.approx(0.5, abs=1e-9)


@pytest.mark.parametrize("name", ["heisenberg1", "engel", "euclidean(3)", "perturbed_heisenberg"])
def test_verify_stratified(name):
    fr = build_privileged_frame(builtin(name).horizontal)
    rep = verify_stratified(nilpotent_frame_at(fr, np.zeros(fr.dim)))
    assert rep.passed
    assert max(rep.homogeneity_residual, rep.nilpotency_residual, rep.layer_residual,
               rep.structure_residual, rep.jacobi_residual) < 1e-10


def test_engel_tangent_at_origin_is_engel(engel_frame):
    nf = nilpotent_frame_at(engel_frame, np.zeros(4))
    rep = verify_stratified(nf)
    assert nf.step == 3 and rep.passed
    # exponential coordinates differ from the given chart; the algebra must not
    assert np.abs(nf.structure_constants - structure_constants(engel_frame.fields)).max() < 1e-8


@pytest.mark.parametrize("q", [(0.3, -0.2, 0.1), (1.0, 0.5, -1.0)])
def test_idempotence(perturbed_frame, q):
    nf = nilpotent_frame_at(perturbed_frame, np.asarray(q))
    again = nilpotent_approximation(nf.jets(), nf.weights, q)
    assert _max_coeff_diff(nf.fields, again.fields) < 1e-10


def test_remainder_has_no_low_weighted_part(perturbed_frame):
    q = np.array([0.4, 0.2, -0.3])
    jets = coefficient_jets(perturbed_frame, q)
    nf = nilpotent_frame_at(perturbed_frame, q)
    w = nf.weights
    for i in range(3):
        for j in range(3):
            deg = w[j] - w[i]
            rho = jets[i][j].polynomial() - nf.fields[i].coeffs[j]
            assert abs(rho(np.zeros(3))) < 1e-8
            for d in range(max(deg, 0) + 1):
                part = rho.homogeneous_part(w, d)
                assert part.max_abs_coeff() < 1e-8, (i, j, d)


def test_structure_constants_antisymmetric_and_jacobi(engel_frame):
    nf = nilpotent_frame_at(engel_frame, np.array([0.2, -0.1, 0.3, 0.1]))
    C = nf.structure_constants
    assert np.abs(C + C.transpose(1, 0, 2)).max() < 1e-10
    assert verify_stratified(nf).jacobi_residual < 1e-10


def test_jets_of_too_low_order_rejected(heis_frame):
    jets = coefficient_jets(heis_frame, np.zeros(3))
    short = [[type(j)(j.dim, 0, j.weights, {e: c for e, c in j.coeffs.items() if sum(e) == 0})
              for j in row] for row in jets]
    with pytest.raises(ValueError, match="below required"):
        nilpotent_approximation(short, heis_frame.weights)


def test_group_law_heisenberg(heis_nf):
    law = GroupLaw(heis_nf)
    rng = np.random.default_rng(0)
    a, b = rng.normal(size=(2, 3))
    expect = a + b
    expect[2] += 0.5 * (a[0] * b[1] - a[1] * b[0])
    assert np.allclose(law(a, b), expect, atol=1e-12)
    assert np.allclose(law(a, law.inverse(a)), 0, atol=1e-12)


def test_key_ignores_negative_zero(heis_nf):
    flipped = type(heis_nf)(tuple(PolyVectorField([c * -1.0 * -1.0 for c in f.coeffs])
                                  for f in heis_nf.fields),
                            heis_nf.weights, heis_nf.structure_constants, heis_nf.base_point)
    assert flipped.key() == heis_nf.key()
