"""Scenario execution: one task against one manifold, reported as deterministic JSON (and CSV)."""

from __future__ import annotations

import csv
import io
import json
import math
import os
import time
from dataclasses import dataclass, field
from typing import Any, Callable

import numpy as np

from . import __version__
from .blowup import (coordinate_change_isometry, diameter_asymptotics, distance_convergence,
                     q_grid)
from .distance import DistanceQuery, ball_roundtrip_check, distance
from .dsl import ManifoldSpec, format_field, load_manifold
from .flows import FlowConfig
from .frame_core import (MetricExtension, PrivilegedFrame, build_privileged_frame, compute_flag,
                         frame_scaled_metric, metric_gram)
from .measure import (BumpField, VolumeForm, coordinate_plane, divergence_identity_check,
                      double_blowup_check, extension_independence_check, spherical_factor)
from .nilpotent import nilpotent_frame_at, verify_stratified
from .poly import Polynomial, PolyVectorField

TASKS = ("flag", "nilpotent", "distance", "ball", "blowup", "isometry", "factor", "density",
         "area-check", "diameter")
RANDOMIZED = frozenset({"ball", "blowup", "isometry", "factor", "density", "diameter"})

CSV_HEADERS = {
    "blowup": ("r", "q_index", "sup_deviation"),
    "diameter": ("r", "q_index", "ratio"),
    "ball": ("r", "roundtrip_error"),
}

DEFAULT_RADII = {
    "ball": (0.2, 0.1),
    "blowup": (0.4, 0.2, 0.1, 0.05),
    "isometry": (0.1, 0.03, 0.01),
    "density": (0.2, 0.1),
    "diameter": (0.2, 0.1, 0.05),
}


class ScenarioError(RuntimeError):
    pass


@dataclass
class ScenarioConfig:
    manifold: str | ManifoldSpec
    task: str
    params: dict = field(default_factory=dict)
    seed: int | None = None
    out_dir: str | None = None
    write_json: bool = True
    write_csv: bool = False
    timing: bool = False

    def __post_init__(self):
        if self.task not in TASKS:
            raise ScenarioError(f"unknown task {self.task!r}; choose from {', '.join(TASKS)}")
        if self.task in RANDOMIZED and self.seed is None:
            raise ScenarioError(f"task {self.task!r} is randomized and needs an explicit seed")


@dataclass
class ScenarioOutcome:
    report: dict
    csv_header: tuple[str, ...] | None
    csv_rows: list[tuple]
    paths: list[str]

    @property
    def verdict(self) -> bool:
        return self.report["verdict"] == "pass"

    @property
    def exit_code(self) -> int:
        return 0 if self.verdict else 2

    def json_text(self) -> str:
        return emit_json(self.report)

    def csv_text(self) -> str:
        return emit_csv(self.csv_header, self.csv_rows) if self.csv_header else ""


def _clean(v: Any) -> Any:
    if isinstance(v, dict):
        return {str(k): _clean(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_clean(x) for x in v]
    if isinstance(v, np.ndarray):
        return _clean(v.tolist())
    if isinstance(v, (bool, np.bool_)):
        return bool(v)
    if isinstance(v, (int, np.integer)):
        return int(v)
    if isinstance(v, (float, np.floating)):
        v = float(v) + 0.0  # folds -0.0
        # JSON has no inf/nan
        return v if math.isfinite(v) else None
    return v


def emit_json(report: dict) -> str:
    return json.dumps(_clean(report), sort_keys=True, indent=2, allow_nan=False) + "\n"


def emit_csv(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in row])
    return buf.getvalue()


# -- geometry set-up ------------------------------------------------------------------


@dataclass
class _Context:
    spec: ManifoldSpec
    frame: PrivilegedFrame
    metric: MetricExtension
    cfg: FlowConfig
    point: np.ndarray
    params: dict
    seed: int

    @property
    def domain(self):
        return self.spec.chart_box

    @property
    def omega(self) -> VolumeForm:
        return VolumeForm(self.spec.density)

    def radii(self, task: str) -> tuple[float, ...]:
        return tuple(float(r) for r in self.params.get("radii", DEFAULT_RADII[task]))


def default_point(spec: ManifoldSpec) -> np.ndarray:
    """Origin when the chart contains it, else the chart centre."""
    n = spec.dim
    if spec.chart_box is None:
        return np.zeros(n)
    lo, hi = (np.asarray(v, float) for v in spec.chart_box)
    if np.all(lo < 0) and np.all(hi > 0):
        return np.zeros(n)
    return 0.5 * (lo + hi)


def _probes(spec: ManifoldSpec, base: np.ndarray, count: int = 9) -> list[np.ndarray]:
    pts = [base]
    if spec.chart_box is not None:
        lo, hi = (np.asarray(v, float) for v in spec.chart_box)
        rng = np.random.Generator(np.random.Philox(2024))
        pts += list(lo + (hi - lo) * rng.uniform(0.05, 0.95, size=(count - 1, spec.dim)))
    return pts


def _build_frame(spec: ManifoldSpec, base: np.ndarray) -> tuple[PrivilegedFrame, MetricExtension]:
    probes = _probes(spec, base)
    frame = build_privileged_frame(spec.horizontal, None, base, probes)
    if spec.metric == "frame-orthonormal":
        return frame, MetricExtension()
    metric = spec.metric_extension(frame.fields)
    return build_privileged_frame(spec.horizontal, metric, base, probes), metric


def _context(cfg: ScenarioConfig, spec: ManifoldSpec) -> _Context:
    point = cfg.params.get("point")
    point = default_point(spec) if point is None else np.asarray(point, float)
    if cfg.task != "distance" and len(point) != spec.dim:
        raise ScenarioError(f"--point has {len(point)} coordinates, manifold has dimension {spec.dim}")
    base = point if cfg.task != "distance" else default_point(spec)
    frame, metric = _build_frame(spec, base)
    flow = FlowConfig(chart_box=spec.chart_box)
    return _Context(spec, frame, metric, flow, base, cfg.params,
                    0 if cfg.seed is None else int(cfg.seed))


def _rotated(horizontal, theta: float) -> tuple[PolyVectorField, ...]:
    c, s = math.cos(theta), math.sin(theta)
    X1, X2 = horizontal[0], horizontal[1]
    return (X1 * c + X2 * s, X1 * (-s) + X2 * c) + tuple(horizontal[2:])


# -- tasks ---------------------------------------------------------------------------------

TaskResult = tuple[dict, bool, tuple | None, list]


def _task_flag(ctx: _Context) -> TaskResult:
    fl = compute_flag(ctx.spec.horizontal, _probes(ctx.spec, ctx.point))
    res = {"growth": list(fl.growth), "step": fl.step, "Q": fl.Q,
           "weights": list(ctx.frame.weights), "equiregular": fl.equiregular,
           "first_irregular_point": fl.first_irregular_point,
           "privileged_frame": [format_field(f) for f in ctx.frame.fields]}
    return res, fl.equiregular, None, []


def _task_nilpotent(ctx: _Context) -> TaskResult:
    nf = nilpotent_frame_at(ctx.frame, ctx.point, ctx.cfg)
    rep = verify_stratified(nf)
    cleaned = [PolyVectorField([_round_poly(c) for c in f.coeffs]) for f in nf.fields]
    res = {"fields": [format_field(f) for f in cleaned], "weights": list(nf.weights),
           "structure_constants": np.round(nf.structure_constants, 12), "stratified": rep.as_dict()}
    return res, rep.passed, None, []


def _round_poly(p: Polynomial, digits: int = 12) -> Polynomial:
    return Polynomial(p.nvars, {e: round(c, digits) for e, c in p.terms.items()
                                if round(c, digits) != 0.0})


def _task_distance(ctx: _Context) -> TaskResult:
    n = ctx.spec.dim
    target = ctx.params.get("point")
    y = np.eye(n)[0] if target is None else np.asarray(target, float)
    if len(y) != n:
        raise ScenarioError(f"--point has {len(y)} coordinates, manifold has dimension {n}")
    q = DistanceQuery(tuple(ctx.spec.horizontal), tuple(ctx.point), tuple(float(v) for v in y),
                      ctx.domain, "both")
    r = distance(q)
    res = {"from": ctx.point, "to": y, **r.as_dict()}
    return res, not r.flagged, None, []


def _task_ball(ctx: _Context) -> TaskResult:
    rows, worst = [], 0.0
    for r in ctx.radii("ball"):
        e = ball_roundtrip_check(ctx.spec.horizontal, ctx.point, r, domain=ctx.domain, seed=ctx.seed)
        rows.append((r, e))
        worst = max(worst, e)
    tol = float(ctx.params.get("tolerance", 1e-6))
    res = {"radii": [r for r, _ in rows], "roundtrip_error": [e for _, e in rows],
           "max_error": worst, "tolerance": tol}
    return res, worst < tol, CSV_HEADERS["ball"], rows


def _task_blowup(ctx: _Context) -> TaskResult:
    qs = q_grid(ctx.point, float(ctx.params.get("q_half_width", 0.1)))
    rep = distance_convergence(ctx.frame, qs, ctx.radii("blowup"),
                               pair_count=int(ctx.params.get("pairs", 50)),
                               box=float(ctx.params.get("pair_box", 0.2)), seed=ctx.seed,
                               cfg=ctx.cfg)
    thr = float(ctx.params.get("threshold", 0.05))
    res = {**rep.as_dict(), "q_list": rep.q_list, "threshold": thr}
    return res, rep.verdict(thr), CSV_HEADERS["blowup"], rep.csv_rows()


def _task_isometry(ctx: _Context) -> TaskResult:
    if ctx.frame.m < 2:
        raise ScenarioError("isometry needs at least two horizontal fields to rotate")
    theta = math.radians(float(ctx.params.get("theta_deg", 30.0)))
    frame_Y = build_privileged_frame(_rotated(ctx.spec.horizontal, theta), None, ctx.point,
                                     _probes(ctx.spec, ctx.point))
    rep = coordinate_change_isometry(ctx.frame, frame_Y, ctx.point, ctx.radii("isometry"),
                                     seed=ctx.seed, cfg=ctx.cfg)
    ok = (rep.orthogonality[-1] < 1e-2 and rep.off_block[-1] < 1e-2
          and rep.metric_isometry < 2e-2 and rep.prediction_residual[-1] < 1e-2)
    return {**rep.as_dict(), "theta_deg": math.degrees(theta)}, ok, None, []


def _unit_ball_volume(k: int) -> float:
    return math.pi ** (k / 2) / math.gamma(k / 2 + 1)


def _task_factor(ctx: _Context) -> TaskResult:
    p = ctx.point
    nf = nilpotent_frame_at(ctx.frame, p, ctx.cfg)
    M = ctx.frame.matrix(p)
    G = metric_gram(ctx.metric, ctx.frame, p)
    sf = spherical_factor(nf, M, M[:, 0], G, mc_points=int(ctx.params.get("mc_points", 200_000)),
                          seed=ctx.seed)
    res = sf.as_dict()
    if ctx.frame.step == 1:
        ref = _unit_ball_volume(ctx.spec.dim - 1)
        res["riemannian_reference"] = ref
        res["relative_error"] = abs(sf.beta - ref) / ref
        ok = res["relative_error"] < 0.02
    else:
        ok = sf.beta > 0 and sf.standard_error < 0.01 * sf.beta
    return res, ok, None, []


def _plane_through(ctx: _Context, half: float = 1.0):
    p = ctx.point
    n = ctx.spec.dim
    lo = tuple(float(v) - half for v in p[1:])
    hi = tuple(float(v) + half for v in p[1:])
    return coordinate_plane(n, 0, float(p[0]), (lo, hi)), np.asarray(p[1:], float)


def _task_density(ctx: _Context) -> TaskResult:
    patch, s_p = _plane_through(ctx)
    rep = double_blowup_check(patch, ctx.omega, ctx.metric, ctx.frame, s_p, ctx.radii("density"),
                              mc_points=int(ctx.params.get("mc_points", 200_000)), seed=ctx.seed,
                              domain=ctx.domain)
    tol = float(ctx.params.get("tolerance", 0.10))
    return {**rep.as_dict(), "tolerance": tol}, rep.relative_discrepancy < tol, None, []


def divergence_test_fields(frame: PrivilegedFrame, center, R: float) -> list[BumpField]:
    """Three test fields for the divergence identity on B_E(center, R).

    Two cutoffs straddle the sphere, so both sides are nonzero; the third has no cutoff.
    """
    n = frame.dim
    c = np.asarray(center, float)
    X = frame.fields
    x = [Polynomial.variable(n, k) - float(c[k]) for k in range(n)]
    radial = X[0] * x[0]
    for k in range(1, n):
        radial = radial + X[k] * x[k]
    shift = np.zeros(n)
    shift[0] = 0.8 * R
    tilt = np.zeros(n)
    tilt[1], tilt[-1] = 0.6 * R, 0.4 * R
    return [BumpField(X[0], tuple(c + shift), 0.6 * R),
            BumpField(radial, tuple(c + tilt), 0.7 * R),
            BumpField(X[1] * x[1] + X[-1], tuple(c), math.inf)]


def _task_area_check(ctx: _Context) -> TaskResult:
    tol = float(ctx.params.get("tolerance", 1e-3))
    res: dict = {"tolerance": tol}
    ok = True
    X = ctx.frame.fields
    c = ctx.point
    if ctx.spec.dim == 3:
        R = float(ctx.params.get("ball_radius", 0.5))
        bumps = divergence_test_fields(ctx.frame, c, R)
        div = [divergence_identity_check(ctx.omega, ctx.metric, ctx.frame, c, R, b).as_dict()
               for b in bumps]
        res["divergence"] = div
        ok &= all(d["relative_mismatch"] < tol for d in div)
    patch, _ = _plane_through(ctx, 0.5)
    scales = [1.0] * ctx.frame.m + [4.0] * (ctx.spec.dim - ctx.frame.m)
    metric_B = frame_scaled_metric(ctx.frame.fields, scales)
    ext = extension_independence_check(patch, ctx.omega, ctx.frame, None, ctx.metric, metric_B)
    res["extension"] = ext.as_dict()
    res["extension_scales"] = scales
    ok &= ext.relative_discrepancy < tol
    return res, ok, None, []


def _task_diameter(ctx: _Context) -> TaskResult:
    h = float(ctx.params.get("q_spacing", 0.1))
    e1 = np.eye(ctx.spec.dim)[0]
    qs = [tuple(ctx.point + t * e1) for t in (-h, 0.0, h)]
    rep = diameter_asymptotics(ctx.spec.horizontal, qs, ctx.radii("diameter"),
                               eps=float(ctx.params.get("eps", 0.05)), domain=ctx.domain,
                               seed=ctx.seed)
    rows = [(r, i, v) for k, r in enumerate(rep.radii) for i, v in enumerate(rep.ratios[k])]
    res = {**rep.as_dict(), "q_list": qs, "ratio": rep.min_ratio[-1]}
    return res, rep.passed, CSV_HEADERS["diameter"], rows


_TASKS: dict[str, Callable[[_Context], TaskResult]] = {
    "flag": _task_flag, "nilpotent": _task_nilpotent, "distance": _task_distance,
    "ball": _task_ball, "blowup": _task_blowup, "isometry": _task_isometry,
    "factor": _task_factor, "density": _task_density, "area-check": _task_area_check,
    "diameter": _task_diameter,
}


def run_scenario(cfg: ScenarioConfig) -> ScenarioOutcome:
    """Run one task; writes ``<task>.json`` (and ``<task>.csv``) under ``cfg.out_dir`` if set."""
    spec = cfg.manifold if isinstance(cfg.manifold, ManifoldSpec) else load_manifold(cfg.manifold)
    t0 = time.perf_counter()
    ctx = _context(cfg, spec)
    results, verdict, header, rows = _TASKS[cfg.task](ctx)
    elapsed = (time.perf_counter() - t0) * 1e3
    report = {
        "tool_version": __version__,
        "spec_hash": spec.spec_hash(),
        "manifold": spec.name,
        "seed": cfg.seed,
        "task": cfg.task,
        "params": {**cfg.params, "point": ctx.point if cfg.task != "distance" else cfg.params.get("point")},
        "results": results,
        "verdict": "pass" if verdict else "fail",
        # wall time breaks byte determinism, so it is opt-in
        "runtime_ms": round(elapsed, 1) if cfg.timing else None,
    }
    out = ScenarioOutcome(_clean(report), header, rows, [])
    if cfg.out_dir:
        os.makedirs(cfg.out_dir, exist_ok=True)
        if cfg.write_json:
            path = os.path.join(cfg.out_dir, f"{cfg.task}.json")
            with open(path, "w", encoding="utf-8") as fh:
                fh.write(out.json_text())
            out.paths.append(path)
        if cfg.write_csv and header:
            path = os.path.join(cfg.out_dir, f"{cfg.task}.csv")
            with open(path, "w", encoding="utf-8") as fh:
                fh.write(out.csv_text())
            out.paths.append(path)
    return out


def emit_report(outcome: ScenarioOutcome) -> tuple[str, str]:
    """(JSON text, CSV text or '') of a finished scenario."""
    return outcome.json_text(), outcome.csv_text()
