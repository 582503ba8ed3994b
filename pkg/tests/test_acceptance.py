"""Acceptance suite: twelve end-to-end checks at their stated tolerances.

Each test prints one ``[PASS]``/``[FAIL]`` line with the measured values; the lines are
repeated in the terminal summary.  Run with ``pytest tests/test_acceptance.py``.
"""

import math
import os
import subprocess
import sys

import numpy as np
import pytest

from srgeo.distance import DistanceQuery, distance_oracle, distance_shooting
from srgeo.dsl import builtin, parse_manifold_spec
from srgeo.frame_core import build_privileged_frame
from srgeo.measure import spherical_factor
from srgeo.nilpotent import nilpotent_frame_at, verify_stratified
from srgeo.scenarios import ScenarioConfig, run_scenario

from conftest import ACCEPTANCE_LINES, rotate

pytestmark = pytest.mark.acceptance


@pytest.fixture
def report(capsys):
    def emit(number: int, title: str, ok: bool, detail: str):
        line = f"[{'PASS' if ok else 'FAIL'}] criterion {number:2d} {title}: {detail}"
        ACCEPTANCE_LINES.append(line)
        with capsys.disabled():
            print("\n" + line)
        assert ok, line
    return emit


def _run(manifold, task, seed=0, **params):
    return run_scenario(ScenarioConfig(manifold, task, params, seed=seed))


def test_01_planar_distance(report):
    q = DistanceQuery(builtin("heisenberg1").horizontal, (0, 0, 0), (0.6, 0.8, 0.0))
    L = distance_shooting(q).value
    U = distance_oracle(q, segments=32).upper_bound
    err, rel = abs(L - 1.0), abs(U - 1.0)
    report(1, "Heisenberg planar distance", err < 1e-4 and rel < 0.02,
           f"shooting {L:.8f} (|err| {err:.1e} < 1e-4), oracle {U:.6f} (rel {rel:.1e} < 2e-2)")


def test_02_vertical_distance(report):
    exact = 2.0 * math.sqrt(math.pi)
    q = DistanceQuery(builtin("heisenberg1").horizontal, (0, 0, 0), (0.0, 0.0, 1.0))
    L = distance_shooting(q).value
    U = distance_oracle(q, segments=32).upper_bound
    rs, ro = abs(L - exact) / exact, abs(U - exact) / exact
    report(2, "Heisenberg vertical distance", rs < 5e-3 and ro < 0.05,
           f"2*sqrt(pi) = {exact:.6f}; shooting {L:.6f} (rel {rs:.1e} < 5e-3), "
           f"oracle {U:.6f} (rel {ro:.1e} < 5e-2)")


def test_03_nilpotent_approximation(report):
    heis = build_privileged_frame(builtin("heisenberg1").horizontal)
    pert = build_privileged_frame(builtin("perturbed_heisenberg").horizontal)
    nf = nilpotent_frame_at(pert, np.zeros(3))
    coeff_err = max((a - b).max_abs_coeff() for a, b in zip(nf.fields, heis.fields))
    residuals = {}
    for name in ("heisenberg1", "engel", "euclidean(3)"):
        fr = build_privileged_frame(builtin(name).horizontal)
        rep = verify_stratified(nilpotent_frame_at(fr, np.zeros(fr.dim)))
        residuals[name] = (rep.passed, max(rep.homogeneity_residual, rep.nilpotency_residual,
                                           rep.layer_residual, rep.structure_residual,
                                           rep.jacobi_residual))
    ok = coeff_err < 1e-8 and all(p and r < 1e-10 for p, r in residuals.values())
    detail = ", ".join(f"{k} {r:.1e}" for k, (_, r) in residuals.items())
    report(3, "nilpotent approximation", ok,
           f"coefficient error {coeff_err:.1e} < 1e-8; stratified residuals {detail} < 1e-10")


@pytest.mark.parametrize("name", ["perturbed_heisenberg", "engel"])
def test_04_blowup_convergence(report, name):
    out = _run(name, "blowup")
    r = out.report["results"]
    sup = r["sup_deviation"]
    ok = (len(r["q_list"]) == 27 and r["monotone_decreasing"] and sup[-1] < 0.05
          and tuple(r["radii"]) == (0.4, 0.2, 0.1, 0.05))
    note = " (rescaled = tangent up to round-off)" if r["at_noise_floor"] else ""
    report(4, f"blow-up convergence on {name}", ok,
           f"sup deviation {', '.join(f'{v:.2e}' for v in sup)} over 27 q x {r['sample']}; "
           f"decreasing={r['monotone_decreasing']}{note}, final < 0.05")


@pytest.mark.parametrize("name", ["heisenberg1", "engel"])
def test_05_diameter_asymptotics(report, name):
    out = _run(name, "diameter")
    r = out.report["results"]
    ratios = np.array(r["ratios"])
    last = ratios[-1]
    per_q_monotone = bool(np.all(np.diff(ratios, axis=0) >= -1e-6))
    ok = (r["radii"][-1] == 0.05 and len(last) == 3 and last.min() >= 0.95
          and ratios.max() <= 1.001 and per_q_monotone)
    report(5, f"diameter asymptotics on {name}", ok,
           f"diam/(2r) at r=0.05: {', '.join(f'{v:.6f}' for v in last)} in [0.95, 1.001]; "
           f"nondecreasing as r shrinks: {per_q_monotone}")


def test_06_coordinate_change_isometry(report):
    out = _run("heisenberg1", "isometry", radii=[0.1, 0.03, 0.01])
    r = out.report["results"]
    orth, off, pred, iso = (r["orthogonality"][-1], r["off_block"][-1],
                            r["prediction_residual"][-1], r["metric_isometry"])
    ok = orth < 1e-2 and off < 1e-2 and iso < 2e-2 and pred < 1e-2
    report(6, "coordinate-change isometry", ok,
           f"at eps=1e-2: orthogonality {orth:.1e}, off-block {off:.1e}, "
           f"metric isometry {iso:.1e}, prediction {pred:.1e}")


def test_07_spherical_factor_sanity(report):
    b2 = _run("euclidean(2)", "factor", mc_points=200_000).report["results"]["beta"]
    b3 = _run("euclidean(3)", "factor", mc_points=200_000).report["results"]["beta"]
    e2, e3 = abs(b2 - 2.0) / 2.0, abs(b3 - math.pi) / math.pi
    report(7, "spherical factor sanity", e2 < 0.01 and e3 < 0.02,
           f"euclidean(2) beta {b2:.5f} (rel {e2:.1e} < 1e-2), "
           f"euclidean(3) beta {b3:.5f} (rel {e3:.1e} < 2e-2)")


def test_08_spherical_factor_invariance(report):
    heis = builtin("heisenberg1").horizontal
    results = []
    for fields, seed in ((heis, 11), (rotate(heis, math.radians(30)), 12)):
        fr = build_privileged_frame(fields)
        M = fr.matrix(np.zeros(3))
        nf = nilpotent_frame_at(fr, np.zeros(3))
        results.append(spherical_factor(nf, M, M[:, 0], mc_points=200_000, seed=seed))
    a, b = results
    se = math.hypot(a.standard_error, b.standard_error)
    diff = abs(a.beta - b.beta)
    report(8, "spherical factor invariance", diff < 2 * se,
           f"beta(X1) {a.beta:.5f} +- {a.standard_error:.1e}, rotated {b.beta:.5f} "
           f"+- {b.standard_error:.1e}; |diff| {diff:.1e} < 2 SE {2 * se:.1e}")


_WEIGHTED_HEIS = """\
name = heisenberg1_weighted
dim = 3
chart_box = -3,-3,-3 : 3,3,3
volume_density = 1 + 0.1*x1^2
X1 = d1 - 0.5*x2*d3
X2 = d2 + 0.5*x1*d3
"""


@pytest.fixture(scope="module")
def area_check():
    return _run(parse_manifold_spec(_WEIGHTED_HEIS), "area-check").report["results"]


def test_09_divergence_identity(report, area_check):
    mism = [d["relative_mismatch"] for d in area_check["divergence"]]
    report(9, "divergence identity", len(mism) == 3 and max(mism) < 1e-3,
           f"density 1 + x1^2/10, three test fields: mismatch "
           f"{', '.join(f'{m:.1e}' for m in mism)} < 1e-3")


def test_10_extension_independence(report, area_check):
    ext = area_check["extension"]
    d = ext["relative_discrepancy"]
    report(10, "extension independence", d < 1e-3,
           f"sigma_SR({{x1=0}}) {ext['value_A']:.10f} vs {ext['value_B']:.10f} with vertical "
           f"scale {area_check['extension_scales'][-1]:g}; discrepancy {d:.1e} < 1e-3")


def test_11_double_blowup(report):
    h = _run("heisenberg1", "density", point=[0.0, 0.0, 0.1]).report["results"]
    e = _run("euclidean(3)", "density").report["results"]
    ok = h["relative_discrepancy"] < 0.10 and e["relative_discrepancy"] < 0.05
    report(11, "double blow-up identity", ok,
           f"Heisenberg p=(0,0,0.1): density {h['federer_density']:.4f} vs "
           f"|omega| beta {h['right_side']:.4f} (rel {h['relative_discrepancy']:.1e} < 0.10); "
           f"flat: {e['federer_density']:.4f} vs {e['right_side']:.4f} "
           f"(rel {e['relative_discrepancy']:.1e} < 0.05)")


# one cheap configuration per task; each runs in a fresh interpreter
_DETERMINISM_RUNS = [
    ("flag", "engel", []),
    ("nilpotent", "perturbed_heisenberg", []),
    ("distance", "heisenberg1", ["--point", "0.3,0.2,0.1"]),
    ("ball", "heisenberg1", ["--radii", "0.1"]),
    ("blowup", "perturbed_heisenberg", ["--radii", "0.2,0.1", "--param", "pairs=3"]),
    ("isometry", "heisenberg1", ["--radii", "0.1,0.03"]),
    ("factor", "euclidean(3)", ["--param", "mc_points=20000"]),
    ("density", "euclidean(2)", ["--radii", "0.2", "--param", "mc_points=4000"]),
    ("area-check", "heisenberg1", []),
    ("diameter", "euclidean(3)", ["--radii", "0.1"]),
]


def _cli_json(task, manifold, extra, threads):
    env = {**os.environ, "SRGEO_THREADS": str(threads)}
    proc = subprocess.run([sys.executable, "-m", "srgeo.cli", task, "--manifold", manifold,
                           "--seed", "5", "--json", *extra],
                          capture_output=True, text=True, env=env, timeout=600)
    assert proc.returncode in (0, 2), proc.stderr
    return proc.stdout


def test_12_determinism(report):
    differing = []
    for task, manifold, extra in _DETERMINISM_RUNS:
        texts = {_cli_json(task, manifold, extra, t) for t in (1, 3)}
        if len(texts) != 1:
            differing.append(task)
    report(12, "determinism", not differing,
           f"{len(_DETERMINISM_RUNS)} tasks rerun with SRGEO_THREADS=1 and 3: "
           + ("byte-identical JSON" if not differing else f"differences in {differing}"))
