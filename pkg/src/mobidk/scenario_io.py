"""Scenario and manifest files, batch execution and report emission.

A manifest lists scenario files, the controllers to run each with and a
repetition count. ``execute`` runs every combination and writes a report
bundle::

    <out>/metrics.csv            one row per run
    <out>/aggregate.csv          boxplot statistics per controller and metric
    <out>/comparison.txt         median table next to the human-study medians
    <out>/runs/<run_id>.csv      trajectory logs (optional)
    <out>/plots/speed_<controller>.csv, energy_<controller>.csv
    <out>/plots/boxplot_<metric>.csv
    <out>/run_info.json          timestamps and environment (not deterministic)
"""

from __future__ import annotations

import csv
import dataclasses
import json
import logging
import platform
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .admittance import AdmittanceParams
from .config import (ConfigError, Document, as_float, as_matrix, as_vector, dump, get,
                     load_yaml_data)
from .idk_solvers import CONTROLLERS, BenchmarkWeights, ControllerConfig, OperatingMode, SecondaryTask
from .metrics import METRIC_LABELS, METRIC_NAMES, RunMetrics, aggregate, box_stats, compute_metrics
from .robot_model import N_DOF, data_path, load_model, model_from_document
from .simulator import (SEGMENT_KINDS, ScenarioSpec, SimulationAborted, TrajectoryLog,
                        WrenchProfile, WrenchSegment, run_scenario)

log = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_PARTIAL = 1
EXIT_INVALID = 2

REFERENCE_FILE = "reference_medians.yaml"


# ---------------------------------------------------------------------------
# scenario files


def _wrench(doc: Document, value, field: str) -> np.ndarray:
    if isinstance(value, list) and len(value) == 3:
        return np.concatenate([as_vector(doc, value, field, 3), np.zeros(3)])
    return as_vector(doc, value, field, 6)


def _segment(doc: Document, raw: dict, field: str) -> WrenchSegment:
    kind = get(doc, raw, field, "kind")
    if kind not in SEGMENT_KINDS:
        raise doc.error(f"{field}.kind", f"unknown segment kind {kind!r}; expected one of {SEGMENT_KINDS}")
    kwargs = {
        "kind": kind,
        "start": as_float(doc, get(doc, raw, field, "start"), f"{field}.start", nonneg=True),
        "duration": as_float(doc, get(doc, raw, field, "duration"), f"{field}.duration", positive=True),
    }
    if "wrench" in raw:
        kwargs["wrench"] = _wrench(doc, raw["wrench"], f"{field}.wrench")
    if kind == "ramp":
        kwargs["wrench_end"] = _wrench(doc, get(doc, raw, field, "wrench_end"), f"{field}.wrench_end")
    if kind == "sinusoid":
        kwargs["frequency"] = as_float(doc, get(doc, raw, field, "frequency"), f"{field}.frequency",
                                       nonneg=True)
        kwargs["phase"] = as_float(doc, raw.get("phase", 0.0), f"{field}.phase")
    if kind == "guide":
        kwargs["stiffness"] = as_float(doc, get(doc, raw, field, "stiffness"), f"{field}.stiffness",
                                       positive=True)
        kwargs["damping"] = as_float(doc, raw.get("damping", 0.0), f"{field}.damping", nonneg=True)
        if "max_force" in raw:
            kwargs["max_force"] = as_float(doc, raw["max_force"], f"{field}.max_force", positive=True)
        if "target" in raw:
            kwargs["target"] = as_vector(doc, raw["target"], f"{field}.target", 3)
    return WrenchSegment(**kwargs)


def scenario_from_document(doc: Document, controller: str | None = None,
                           dt: float | None = None) -> ScenarioSpec:
    """Build a validated ScenarioSpec; ``controller`` and ``dt`` override the file."""
    data = doc.data

    model_ref = get(doc, data, "", "model")
    if isinstance(model_ref, str):
        model_path = doc.resolve(model_ref)
        if not model_path.is_file():
            raise doc.error("model", f"model file not found: {model_path}")
        model = load_model(model_path)
        model_file = str(model_path.resolve())
    elif isinstance(model_ref, dict):
        model = model_from_document(doc.sub("model"))
        model_file = None
    else:
        raise doc.error("model", "expected a model file path or an inline model mapping")

    c = get(doc, data, "", "controller", {})
    name = controller or c.get("name", "min-energy")
    if name not in CONTROLLERS:
        raise doc.error("controller.name", f"unknown controller {name!r}; expected one of {CONTROLLERS}")
    q_des = as_vector(doc, get(doc, data, "", "q_des"), "q_des", N_DOF)
    try:
        weights = BenchmarkWeights(
            task=as_matrix(doc, c.get("task_weight", 1.0), "controller.task_weight", 6),
            damping=as_matrix(doc, c.get("damping_weight", 1e-4), "controller.damping_weight", N_DOF),
        )
        task = SecondaryTask(
            gains=as_vector(doc, c.get("gains", [1.0] * 6 + [0.0] * 3), "controller.gains", N_DOF,
                            allow_scalar=True),
            q_des=q_des,
        )
        ctrl = ControllerConfig(name, weights, task, c.get("projector", "exact"))
    except ConfigError:
        raise
    except ValueError as exc:
        raise doc.error("controller", str(exc)) from None

    adm = data.get("admittance", {})
    try:
        admittance = AdmittanceParams(
            mass=as_vector(doc, adm.get("mass", 4.0), "admittance.mass", 6, allow_scalar=True),
            damping=as_vector(doc, adm.get("damping", 75.0), "admittance.damping", 6, allow_scalar=True),
        )
    except ConfigError:
        raise
    except ValueError as exc:
        raise doc.error("admittance", str(exc)) from None

    target_raw = data.get("target", "derive")
    target = None if target_raw == "derive" else as_vector(doc, target_raw, "target", 3)

    segments_raw = get(doc, data, "", "wrench", [])
    if not isinstance(segments_raw, list):
        raise doc.error("wrench", "expected a list of segments")
    segments = []
    for i, raw in enumerate(segments_raw):
        try:
            segments.append(_segment(doc, raw, f"wrench[{i}]"))
        except ConfigError:
            raise
        except ValueError as exc:
            raise doc.error(f"wrench[{i}]", str(exc)) from None
    try:
        profile = WrenchProfile(tuple(segments))
    except ValueError as exc:
        raise doc.error("wrench", str(exc)) from None

    stop = data.get("stop", {})
    switch = data.get("switch", {})
    schedule = []
    for i, event in enumerate(switch.get("schedule", [])):
        f = f"switch.schedule[{i}]"
        if not (isinstance(event, list) and len(event) == 2):
            raise doc.error(f, "expected [time, mode]")
        try:
            schedule.append((as_float(doc, event[0], f, nonneg=True), OperatingMode(event[1])))
        except ValueError:
            raise doc.error(f, f"unknown mode {event[1]!r}") from None
    jitter = data.get("jitter", {})

    try:
        return ScenarioSpec(
            model=model,
            q0=as_vector(doc, get(doc, data, "", "initial"), "initial", N_DOF),
            profile=profile,
            controller=ctrl,
            admittance=admittance,
            dt=dt if dt is not None else as_float(doc, data.get("dt", 0.002), "dt", positive=True),
            duration=as_float(doc, data.get("duration", 60.0), "duration", positive=True),
            target=target,
            r_stop=as_float(doc, stop.get("radius", 0.01), "stop.radius", positive=True),
            hold=as_float(doc, stop.get("hold", 0.5), "stop.hold", nonneg=True),
            mode_schedule=tuple(schedule),
            switch_latency=as_float(doc, switch.get("latency", 1.0), "switch.latency", nonneg=True),
            joint_limits=bool(data.get("joint_limits", False)),
            jitter=as_float(doc, jitter.get("std", 0.0), "jitter.std", nonneg=True),
            seed=int(jitter.get("seed", 0)),
            name=str(data.get("name", doc.path.stem if doc.path else "scenario")),
            model_file=model_file,
        )
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError(str(exc), doc.path) from None


def load_scenario(path: str | Path, controller: str | None = None, dt: float | None = None) -> ScenarioSpec:
    return scenario_from_document(Document.load(path), controller, dt)


def save_scenario(spec: ScenarioSpec, path: str | Path) -> None:
    Path(path).write_text(dump(spec.to_dict()))


def canned_scenario(controller: str | None = None) -> ScenarioSpec:
    """The bundled peg-in-hole emulation."""
    return load_scenario(data_path("peg_in_hole.yaml"), controller)


# ---------------------------------------------------------------------------
# manifests


@dataclass
class ManifestEntry:
    scenario: Path
    spec: ScenarioSpec
    controllers: tuple[str, ...]
    repetitions: int = 1
    seed: int = 0


@dataclass
class RunManifest:
    entries: list[ManifestEntry]
    output: Path
    trajectories: bool = True
    plots: bool = True


@dataclass(frozen=True)
class PlannedRun:
    run_id: str
    entry: int
    controller: str
    repetition: int
    seed: int


def load_manifest(path: str | Path, controller: str | None = None, dt: float | None = None,
                  output: str | Path | None = None) -> RunManifest:
    """Parse a manifest and every scenario/model it references."""
    doc = Document.load(path)
    data = doc.data
    runs = get(doc, data, "", "runs")
    if not isinstance(runs, list) or not runs:
        raise doc.error("runs", "expected a non-empty list of runs")
    entries = []
    for i, raw in enumerate(runs):
        f = f"runs[{i}]"
        scenario_path = doc.resolve(str(get(doc, raw, f, "scenario")))
        if not scenario_path.is_file():
            raise doc.error(f"{f}.scenario", f"scenario file not found: {scenario_path}")
        spec = load_scenario(scenario_path, dt=dt)
        names = raw.get("controllers", [spec.controller.name])
        if isinstance(names, str):
            names = [names]
        if controller is not None:
            names = [controller]
        for name in names:
            if name not in CONTROLLERS:
                raise doc.error(f"{f}.controllers", f"unknown controller {name!r}")
        reps = raw.get("repetitions", 1)
        if not isinstance(reps, int) or isinstance(reps, bool) or reps < 1:
            raise doc.error(f"{f}.repetitions", "repetition count must be an integer >= 1")
        seed = raw.get("seed", spec.seed)
        if not isinstance(seed, int) or isinstance(seed, bool):
            raise doc.error(f"{f}.seed", "seed must be an integer")
        entries.append(ManifestEntry(scenario_path, spec, tuple(names), reps, seed))

    out = Path(output) if output is not None else doc.resolve(str(data.get("output", "out")))
    if out.exists() and not out.is_dir():
        raise doc.error("output", f"output path is not a directory: {out}")
    fmt = data.get("formats", {})
    return RunManifest(entries, out, bool(fmt.get("trajectories", True)), bool(fmt.get("plots", True)))


def plan(manifest: RunManifest) -> list[PlannedRun]:
    """Every scenario x controller x repetition, in manifest order.

    Repetition r uses seed ``entry.seed + r`` so jittered profiles differ per repetition.
    """
    planned = []
    for i, entry in enumerate(manifest.entries):
        for name in entry.controllers:
            for rep in range(entry.repetitions):
                run_id = f"{entry.spec.name}-{name}-{rep:03d}"
                if len(manifest.entries) > 1:
                    run_id = f"{i:02d}-{run_id}"
                planned.append(PlannedRun(run_id, i, name, rep, entry.seed + rep))
    return planned


def _spec_for(manifest: RunManifest, run: PlannedRun) -> ScenarioSpec:
    spec = manifest.entries[run.entry].spec
    controller = dataclasses.replace(spec.controller, name=run.controller)
    return dataclasses.replace(spec, controller=controller, seed=run.seed)


# ---------------------------------------------------------------------------
# execution


@dataclass
class RunRecord:
    run: PlannedRun
    metrics: RunMetrics | None
    error: str | None = None
    steps: int = 0
    stopped: bool = False
    flags: int = 0  # OR of every logged flag
    series: np.ndarray | None = None  # (N, 3): t, |v|, E_K
    trajectory: Path | None = None

    @property
    def ok(self) -> bool:
        return self.error is None


@dataclass
class ReportBundle:
    root: Path
    records: list[RunRecord]
    files: list[Path] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return all(r.ok for r in self.records)

    @property
    def exit_code(self) -> int:
        return EXIT_OK if self.ok else EXIT_PARTIAL


def _execute_one(spec: ScenarioSpec, run: PlannedRun, trajectory: Path | None) -> RunRecord:
    try:
        result = run_scenario(spec)
    except SimulationAborted as exc:
        return RunRecord(run, None, error=f"aborted at step {exc.step}: non-finite value",
                         steps=len(exc.partial))
    except (ValueError, np.linalg.LinAlgError) as exc:
        return RunRecord(run, None, error=f"failed: {exc}")
    metrics = compute_metrics(result, spec.p_des, spec.model)
    if trajectory is not None:
        result.to_csv(trajectory)
    series = np.column_stack([result.t, np.linalg.norm(result.v, axis=1), result.energy])
    flags = int(np.bitwise_or.reduce(result.flags)) if len(result) else 0
    return RunRecord(run, metrics, steps=len(result), stopped=result.stopped, flags=flags,
                     series=series, trajectory=trajectory)


def _fmt(x: float) -> str:
    return f"{x:.9g}"


def write_metrics_csv(records: list[RunRecord], path: Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["run_id", "controller", "repetition", "seed", "status", "steps", "stopped",
                    "E_mean", "F_mean", "v_mean", "x_f", "T_f"])
        for r in records:
            head = [r.run.run_id, r.run.controller, r.run.repetition, r.run.seed,
                    "ok" if r.ok else r.error, r.steps, int(r.stopped)]
            if r.metrics is None:
                w.writerow(head + [""] * 5)
            else:
                m = r.metrics
                w.writerow(head + [_fmt(m.energy), _fmt(m.force), _fmt(m.velocity),
                                   _fmt(m.displacement), _fmt(m.time)])


def read_metrics_csv(path: Path) -> list[RunRecord]:
    records = []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            run = PlannedRun(row["run_id"], 0, row["controller"], int(row["repetition"]), int(row["seed"]))
            ok = row["status"] == "ok"
            metrics = RunMetrics(float(row["E_mean"]), float(row["F_mean"]), float(row["v_mean"]),
                                 float(row["x_f"]), float(row["T_f"])) if ok else None
            records.append(RunRecord(run, metrics, None if ok else row["status"], int(row["steps"]),
                                     bool(int(row["stopped"]))))
    return records


def execute(manifest: RunManifest, jobs: int = 1) -> ReportBundle:
    """Run every planned combination and write the report bundle.

    Failed runs are recorded in metrics.csv and excluded from aggregates.
    """
    started = time.time()
    root = manifest.output
    root.mkdir(parents=True, exist_ok=True)
    if manifest.trajectories:
        (root / "runs").mkdir(exist_ok=True)
    planned = plan(manifest)
    tasks = [(_spec_for(manifest, run), run,
              root / "runs" / f"{run.run_id}.csv" if manifest.trajectories else None)
             for run in planned]
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            records = list(pool.map(_execute_one, *zip(*tasks)))
    else:
        records = [_execute_one(*t) for t in tasks]
    for r in records:
        if not r.ok:
            log.warning("run %s: %s", r.run.run_id, r.error)

    bundle = ReportBundle(root, records)
    write_metrics_csv(records, root / "metrics.csv")
    bundle.files.append(root / "metrics.csv")
    bundle.files += [r.trajectory for r in records if r.trajectory is not None]
    emit_comparison(bundle, plots=manifest.plots)

    info = {
        "started": started,
        "finished": time.time(),
        "python": platform.python_version(),
        "numpy": np.__version__,
        "runs": len(records),
        "failed": [r.run.run_id for r in records if not r.ok],
    }
    (root / "run_info.json").write_text(json.dumps(info, indent=2) + "\n")
    return bundle


# ---------------------------------------------------------------------------
# reporting


def reference_medians() -> dict[str, RunMetrics]:
    """Median metrics of the human study, per controller. For display only."""
    data = load_yaml_data(data_path(REFERENCE_FILE))
    return {name: RunMetrics(**values) for name, values in data["controllers"].items()}


def _median_energy_run(records: list[RunRecord]) -> RunRecord:
    med = box_stats(r.metrics.energy for r in records).median
    return min(records, key=lambda r: abs(r.metrics.energy - med))


def comparison_table(records: list[RunRecord], controllers=CONTROLLERS) -> str:
    """Median metrics per controller beside the human-study medians."""
    refs = reference_medians()
    header = f"{'controller':<12}" + "".join(f"{METRIC_LABELS[m] + ' sim':>15}{'ref':>8}" for m in METRIC_NAMES)
    lines = [header + f"{'runs':>7}", "-" * (len(header) + 7)]
    for name in controllers:
        ok = [r for r in records if r.run.controller == name and r.ok]
        failed = sum(1 for r in records if r.run.controller == name and not r.ok)
        ref = refs.get(name)
        row = f"{name:<12}"
        med = aggregate([r.metrics for r in ok]).medians() if ok else None
        for m in METRIC_NAMES:
            sim = f"{getattr(med, m):.4g}" if med is not None else "absent"
            row += f"{sim:>15}{getattr(ref, m) if ref else float('nan'):>8.2f}"
        row += f"{len(ok):>7}"
        if failed:
            row += f"  ({failed} failed)"
        lines.append(row)
    lines.append("")
    lines.append("sim: medians over simulated runs. ref: medians of the 27-participant user study,")
    lines.append("shown for orientation only; they are not reproduction targets.")
    return "\n".join(lines) + "\n"


def emit_comparison(bundle: ReportBundle, plots: bool = True) -> str:
    """Write comparison.txt, aggregate.csv and plot-data files; return the table."""
    root = bundle.root
    records = bundle.records
    present = [c for c in CONTROLLERS if any(r.run.controller == c for r in records)]
    table = comparison_table(records, present or CONTROLLERS)
    (root / "comparison.txt").write_text(table)
    bundle.files.append(root / "comparison.txt")

    with open(root / "aggregate.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["controller", "metric", "n", "median", "q1", "q3", "min", "max",
                    "lower_whisker", "upper_whisker", "outliers"])
        for name in present:
            ok = [r.metrics for r in records if r.run.controller == name and r.ok]
            if not ok:
                w.writerow([name, "", 0] + [""] * 8)
                continue
            stats = aggregate(ok)
            for m in METRIC_NAMES:
                s = stats[m]
                w.writerow([name, m, s.n] + [_fmt(x) for x in (s.median, s.q1, s.q3, s.minimum,
                           s.maximum, s.lower_whisker, s.upper_whisker)]
                           + [";".join(_fmt(x) for x in s.outliers)])
    bundle.files.append(root / "aggregate.csv")

    if not plots:
        return table
    plot_dir = root / "plots"
    plot_dir.mkdir(exist_ok=True)
    for m in METRIC_NAMES:
        path = plot_dir / f"boxplot_{m}.csv"
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["controller", "run_id", m])
            for r in records:
                if r.ok:
                    w.writerow([r.run.controller, r.run.run_id, _fmt(getattr(r.metrics, m))])
        bundle.files.append(path)
    for name in present:
        ok = [r for r in records if r.run.controller == name and r.ok]
        if not ok:
            continue
        chosen = _median_energy_run(ok)
        series = chosen.series
        if series is None and chosen.trajectory is not None and chosen.trajectory.is_file():
            traj = TrajectoryLog.from_csv(chosen.trajectory)
            series = np.column_stack([traj.t, np.linalg.norm(traj.v, axis=1), traj.energy])
        if series is None:
            continue
        for col, stem, label in ((1, "speed", "v_norm"), (2, "energy", "E_K")):
            path = plot_dir / f"{stem}_{name}.csv"
            with open(path, "w", newline="") as fh:
                w = csv.writer(fh, lineterminator="\n")
                w.writerow(["t", label, "run_id"])
                for row in series:
                    w.writerow([_fmt(row[0]), _fmt(row[col]), chosen.run.run_id])
            bundle.files.append(path)
    return table


def load_bundle(root: str | Path) -> ReportBundle:
    """Rebuild a bundle from a directory written by ``execute``."""
    root = Path(root)
    path = root / "metrics.csv"
    if not path.is_file():
        raise ConfigError(f"no metrics.csv in {root}", root)
    records = read_metrics_csv(path)
    for r in records:
        traj = root / "runs" / f"{r.run.run_id}.csv"
        r.trajectory = traj if traj.is_file() else None
    return ReportBundle(root, records)
