"""Command line interface: ``mobidk run|simulate|report|validate``."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .config import ConfigError, Document
from .idk_solvers import CONTROLLERS
from .metrics import METRIC_LABELS, METRIC_NAMES, compute_metrics
from .robot_model import model_from_document
from .scenario_io import (EXIT_INVALID, EXIT_OK, EXIT_PARTIAL, ReportBundle, RunRecord, PlannedRun,
                          emit_comparison, execute, load_bundle, load_manifest, scenario_from_document,
                          write_metrics_csv)
from .simulator import SimulationAborted, run_scenario


def _cmd_run(args) -> int:
    manifest = load_manifest(args.manifest, args.controller, args.dt, args.out)
    bundle = execute(manifest, jobs=args.jobs)
    print((bundle.root / "comparison.txt").read_text(), end="")
    failed = [r for r in bundle.records if not r.ok]
    for r in failed:
        print(f"FAILED {r.run.run_id}: {r.error}", file=sys.stderr)
    print(f"{len(bundle.records) - len(failed)}/{len(bundle.records)} runs completed; report in {bundle.root}")
    return bundle.exit_code


def _cmd_simulate(args) -> int:
    doc = Document.load(args.scenario)
    spec = scenario_from_document(doc, args.controller, args.dt)
    out = Path(args.out) if args.out else Path(f"{spec.name}-{spec.controller.name}")
    out.mkdir(parents=True, exist_ok=True)
    run = PlannedRun(f"{spec.name}-{spec.controller.name}", 0, spec.controller.name, 0, spec.seed)
    try:
        result = run_scenario(spec)
    except SimulationAborted as exc:
        exc.partial.to_csv(out / "trajectory.csv")
        record = RunRecord(run, None, error=f"aborted at step {exc.step}: non-finite value",
                           steps=len(exc.partial))
        write_metrics_csv([record], out / "metrics.csv")
        print(f"{run.run_id}: {record.error}", file=sys.stderr)
        return EXIT_PARTIAL
    result.to_csv(out / "trajectory.csv")
    metrics = compute_metrics(result, spec.p_des, spec.model)
    write_metrics_csv([RunRecord(run, metrics, steps=len(result), stopped=result.stopped)],
                      out / "metrics.csv")
    print(f"{run.run_id}: {len(result)} steps, {'stopped' if result.stopped else 'hit duration cap'}")
    for name in METRIC_NAMES:
        print(f"  {METRIC_LABELS[name]:<10} {getattr(metrics, name):.6g}")
    return EXIT_OK


def _cmd_report(args) -> int:
    bundle = load_bundle(args.bundle)
    if args.out:
        bundle = ReportBundle(Path(args.out), bundle.records)
        bundle.root.mkdir(parents=True, exist_ok=True)
    print(emit_comparison(bundle), end="")
    return bundle.exit_code


def _cmd_validate(args) -> int:
    doc = Document.load(args.file)
    if "runs" in doc.data:
        manifest = load_manifest(args.file, args.controller, args.dt)
        n = sum(len(e.controllers) * e.repetitions for e in manifest.entries)
        print(f"{args.file}: valid manifest, {len(manifest.entries)} scenario(s), {n} planned run(s)")
    elif "arm" in doc.data:
        model = model_from_document(doc)
        print(f"{args.file}: valid model '{model.name}'")
    else:
        spec = scenario_from_document(doc, args.controller, args.dt)
        print(f"{args.file}: valid scenario '{spec.name}' ({spec.controller.name}, dt={spec.dt})")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mobidk",
        description="Whole-body inverse differential kinematics for a mobile manipulator under admittance control.")
    parser.add_argument("-v", "--verbose", action="store_true", help="Log progress to stderr.")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, out_help):
        p.add_argument("--out", type=Path, default=None, help=out_help)
        p.add_argument("--controller", choices=CONTROLLERS, default=None, help="Override the controller.")
        p.add_argument("--dt", type=float, default=None, help="Override the control period (s).")

    p = sub.add_parser("run", help="Execute every run in a manifest and write a report bundle.")
    p.add_argument("manifest", type=Path)
    common(p, "Report directory (default: the manifest's output field).")
    p.add_argument("--jobs", type=int, default=1, help="Worker processes.")
    p.set_defaults(func=_cmd_run)

    p = sub.add_parser("simulate", help="Simulate one scenario; write trajectory.csv and metrics.csv.")
    p.add_argument("scenario", type=Path)
    common(p, "Output directory (default: <scenario>-<controller>).")
    p.set_defaults(func=_cmd_simulate)

    p = sub.add_parser("report", help="Rebuild the comparison table and plot data from a bundle.")
    p.add_argument("bundle", type=Path)
    p.add_argument("--out", type=Path, default=None, help="Write the report elsewhere.")
    p.set_defaults(func=_cmd_report)

    p = sub.add_parser("validate", help="Check a model, scenario or manifest file.")
    p.add_argument("file", type=Path)
    p.add_argument("--controller", choices=CONTROLLERS, default=None)
    p.add_argument("--dt", type=float, default=None)
    p.set_defaults(func=_cmd_validate)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if getattr(args, "dt", None) is not None and not args.dt > 0:
        print("error: --dt must be > 0", file=sys.stderr)
        return EXIT_INVALID
    if getattr(args, "jobs", 1) < 1:
        print("error: --jobs must be >= 1", file=sys.stderr)
        return EXIT_INVALID
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
