"""Command line entry point: ``srgeo <task> --manifold <name|path> [options]``."""

from __future__ import annotations

import argparse
import json
import sys

from .dsl import BUILTIN_NAMES, SpecError
from .scenarios import TASKS, ScenarioConfig, ScenarioError, run_scenario


class _Parser(argparse.ArgumentParser):
    # argparse exits 2 on bad usage, which collides with the verdict-fail code
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(1)


def _floats(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _param(text: str) -> tuple[str, object]:
    key, sep, raw = text.partition("=")
    if not sep or not key.strip():
        raise argparse.ArgumentTypeError(f"expected KEY=VALUE, got {text!r}")
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    return key.strip(), value


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="srgeo", description="Run a sub-Riemannian geometry scenario and report it.",
                epilog="builtin manifolds: " + ", ".join(BUILTIN_NAMES))
    p.add_argument("task", choices=TASKS, metavar="task", help="one of: " + ", ".join(TASKS))
    p.add_argument("--manifold", required=True, help="builtin name or path to a spec file")
    p.add_argument("--seed", type=int, default=0, help="seed for randomized tasks (default 0)")
    p.add_argument("--radii", type=_floats, help="comma-separated radii (epsilons for isometry)")
    p.add_argument("--point", type=_floats, help="base point; target point for the distance task")
    p.add_argument("--param", type=_param, action="append", default=[], metavar="KEY=VALUE",
                   help="task parameter such as mc_points=20000 or pairs=8 (repeatable)")
    p.add_argument("--out", help="directory for report files")
    p.add_argument("--json", action="store_true", help="print the JSON report to stdout")
    p.add_argument("--csv", action="store_true", help="write the CSV series when the task has one")
    p.add_argument("--timing", action="store_true", help="record runtime_ms (breaks byte determinism)")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    params = dict(args.param)
    if args.radii is not None:
        params["radii"] = args.radii
    if args.point is not None:
        params["point"] = args.point
    try:
        cfg = ScenarioConfig(args.manifold, args.task, params, args.seed, args.out,
                             write_json=True, write_csv=args.csv, timing=args.timing)
        out = run_scenario(cfg)
    except (SpecError, ScenarioError, ValueError, RuntimeError, OSError) as exc:
        print(f"srgeo {args.task}: error: {exc}", file=sys.stderr)
        return 1
    if args.json:
        sys.stdout.write(out.json_text())
    if args.csv and out.csv_header and not args.out:
        sys.stdout.write(out.csv_text())
    if not args.json:
        print(f"{args.task} on {out.report['manifold']}: {out.report['verdict']}")
        for path in out.paths:
            print(f"  wrote {path}")
    return out.exit_code


if __name__ == "__main__":
    sys.exit(main())
