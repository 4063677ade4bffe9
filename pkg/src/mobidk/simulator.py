"""Closed-loop simulation: human wrench -> admittance -> IDK solver -> joint integration.

Row k of a trajectory log (k = 1..N, t_k = k dt) holds the configuration
reached at t_k together with the wrench, desired twist, commanded joint
velocity, realized twist and kinetic energy that acted over (t_{k-1}, t_k].
Low-level joint velocity tracking is ideal.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .admittance import DEFAULT_DT, AdmittanceParams, admittance_step
from .idk_solvers import ControllerConfig, OperatingMode, solve
from .config import SCHEMA_VERSION, listify
from .robot_model import (ARM, BASE, N_DOF, MobileManipulatorModel, evaluate, forward_kinematics,
                          model_to_dict)

log = logging.getLogger(__name__)

# bit flags stored per log row
FLAG_DAMPED = 1  # singularity guard engaged
FLAG_SATURATED = 2  # joint-limit clamp active
FLAG_DWELL = 4  # switch latency, commanded velocity held at zero
FLAG_LOCOMOTION = 8  # switch controller in locomotion mode

SEGMENT_KINDS = ("constant", "ramp", "sinusoid", "guide")


@dataclass(frozen=True)
class WrenchSegment:
    """One piece of the scripted human wrench.

    ``constant``: ``wrench``. ``ramp``: linear from ``wrench`` to ``wrench_end``.
    ``sinusoid``: ``wrench * sin(2 pi frequency (t - start) + phase)``.
    ``guide``: a spring-damper hand pulling the tool toward ``target`` (the
    scenario target when unset), force magnitude capped at ``max_force``.
    """

    kind: str
    start: float
    duration: float
    wrench: np.ndarray = field(default_factory=lambda: np.zeros(6))
    wrench_end: np.ndarray | None = None
    frequency: float = 0.0
    phase: float = 0.0
    stiffness: float = 0.0
    damping: float = 0.0
    max_force: float = float("inf")
    target: np.ndarray | None = None

    def __post_init__(self):
        if self.kind not in SEGMENT_KINDS:
            raise ValueError(f"unknown wrench segment kind {self.kind!r}")
        if self.start < 0 or not self.duration > 0:
            raise ValueError("segment start must be >= 0 and duration > 0")
        object.__setattr__(self, "wrench", np.asarray(self.wrench, dtype=float))
        if self.wrench.shape != (6,):
            raise ValueError("segment wrench must be a 6-vector")
        if self.kind == "ramp" and self.wrench_end is None:
            raise ValueError("ramp segment needs wrench_end")
        if self.wrench_end is not None:
            object.__setattr__(self, "wrench_end", np.asarray(self.wrench_end, dtype=float))
        if self.target is not None:
            object.__setattr__(self, "target", np.asarray(self.target, dtype=float))
        if self.kind == "guide" and not (self.stiffness > 0 and self.damping >= 0 and self.max_force > 0):
            raise ValueError("guide segment needs stiffness > 0, damping >= 0, max_force > 0")

    @property
    def end(self) -> float:
        return self.start + self.duration

    def evaluate(self, t: float, position=None, twist=None, target=None) -> np.ndarray:
        s = t - self.start
        if self.kind == "constant":
            return self.wrench.copy()
        if self.kind == "ramp":
            return self.wrench + (self.wrench_end - self.wrench) * (s / self.duration)
        if self.kind == "sinusoid":
            return self.wrench * np.sin(2.0 * np.pi * self.frequency * s + self.phase)
        goal = self.target if self.target is not None else target
        if goal is None or position is None:
            raise ValueError("guide segment needs the tool position and a target")
        v = np.zeros(3) if twist is None else np.asarray(twist)[:3]
        force = self.stiffness * (goal - position) - self.damping * v
        norm = np.linalg.norm(force)
        if norm > self.max_force:
            force *= self.max_force / norm
        out = np.zeros(6)
        out[:3] = force
        return out

    def to_dict(self) -> dict:
        out = {"kind": self.kind, "start": self.start, "duration": self.duration,
               "wrench": listify(self.wrench)}
        if self.wrench_end is not None:
            out["wrench_end"] = listify(self.wrench_end)
        if self.kind == "sinusoid":
            out.update(frequency=self.frequency, phase=self.phase)
        if self.kind == "guide":
            out.update(stiffness=self.stiffness, damping=self.damping)
            if np.isfinite(self.max_force):
                out["max_force"] = self.max_force
            if self.target is not None:
                out["target"] = listify(self.target)
        return out


@dataclass(frozen=True)
class WrenchProfile:
    segments: tuple[WrenchSegment, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "segments", tuple(self.segments))
        for a, b in zip(self.segments, self.segments[1:]):
            if b.start < a.start:
                raise ValueError("wrench segments must be sorted by start time")
            if b.start < a.end - 1e-12:
                raise ValueError(f"wrench segments overlap at t={b.start}")

    @property
    def duration(self) -> float:
        return max((s.end for s in self.segments), default=0.0)

    def __call__(self, t: float, position=None, twist=None, target=None) -> np.ndarray:
        """Wrench at time ``t``; zero outside every segment."""
        for seg in self.segments:
            if seg.start <= t < seg.end:
                return seg.evaluate(t, position, twist, target)
        return np.zeros(6)



@dataclass(eq=False)
class ScenarioSpec:
    """Everything needed to reproduce one closed-loop run.

    Equality compares the serialized form (see ``to_dict``).
    """

    model: MobileManipulatorModel
    q0: np.ndarray
    profile: WrenchProfile
    controller: ControllerConfig = field(default_factory=ControllerConfig)
    admittance: AdmittanceParams = field(default_factory=AdmittanceParams)
    dt: float = DEFAULT_DT
    duration: float = 60.0
    target: np.ndarray | None = None  # p_des; FK(q_des) when None
    r_stop: float = 0.01
    hold: float = 0.5
    mode_schedule: tuple[tuple[float, OperatingMode], ...] = ()
    switch_latency: float = 1.0
    joint_limits: bool = False
    jitter: float = 0.0  # std of additive translational force noise (N)
    seed: int = 0
    name: str = "scenario"
    model_file: str | None = None

    def __post_init__(self):
        self.q0 = np.asarray(self.q0, dtype=float)
        if self.q0.shape != (N_DOF,):
            raise ValueError("initial configuration must be a 9-vector")
        if not self.dt > 0:
            raise ValueError("dt must be > 0")
        if not self.duration > 0:
            raise ValueError("duration cap must be > 0")
        if not self.r_stop > 0:
            raise ValueError("r_stop must be > 0")
        if self.hold < 0 or self.switch_latency < 0 or self.jitter < 0:
            raise ValueError("hold, switch_latency and jitter must be >= 0")
        if self.target is not None:
            self.target = np.asarray(self.target, dtype=float)
            if self.target.shape != (3,):
                raise ValueError("target position must be a 3-vector")
        self.mode_schedule = tuple(sorted(
            ((float(t), OperatingMode(m)) for t, m in self.mode_schedule), key=lambda e: e[0]))
        if self.joint_limits and not self.model.arm.has_limits:
            raise ValueError("joint_limits enabled but the model defines none")

    @property
    def q_des(self) -> np.ndarray:
        return self.controller.task.q_des

    def to_dict(self) -> dict:
        c = self.controller
        return {
            "schema_version": SCHEMA_VERSION,
            "name": self.name,
            "model": self.model_file if self.model_file is not None else model_to_dict(self.model),
            "dt": self.dt,
            "duration": self.duration,
            "controller": {
                "name": c.name,
                "task_weight": listify(c.weights.task),
                "damping_weight": listify(c.weights.damping),
                "gains": listify(c.task.gains),
                "projector": c.projector,
            },
            "admittance": {"mass": listify(self.admittance.mass),
                           "damping": listify(self.admittance.damping)},
            "initial": listify(self.q0),
            "q_des": listify(self.q_des),
            "target": "derive" if self.target is None else listify(self.target),
            "stop": {"radius": self.r_stop, "hold": self.hold},
            "switch": {"latency": self.switch_latency,
                       "schedule": [[t, m.value] for t, m in self.mode_schedule]},
            "joint_limits": self.joint_limits,
            "jitter": {"std": self.jitter, "seed": self.seed},
            "wrench": [seg.to_dict() for seg in self.profile.segments],
        }

    def __eq__(self, other) -> bool:
        if not isinstance(other, ScenarioSpec):
            return NotImplemented
        return (self.to_dict() == other.to_dict()
                and model_to_dict(self.model) == model_to_dict(other.model))

    @property
    def p_des(self) -> np.ndarray:
        if self.target is not None:
            return self.target
        return forward_kinematics(self.model, self.q_des).position


@dataclass
class TrajectoryLog:
    t: np.ndarray  # (N,)
    q: np.ndarray  # (N, 9)
    qdot: np.ndarray  # (N, 9)
    v_d: np.ndarray  # (N, 6)
    v: np.ndarray  # (N, 6)
    f_h: np.ndarray  # (N, 6)
    energy: np.ndarray  # (N,)
    flags: np.ndarray  # (N,) int
    dt: float
    stopped: bool = False  # stop criterion met before the duration cap

    def __len__(self) -> int:
        return len(self.t)

    @property
    def duration(self) -> float:
        return len(self) * self.dt

    def truncated(self, n: int) -> "TrajectoryLog":
        return TrajectoryLog(self.t[:n], self.q[:n], self.qdot[:n], self.v_d[:n], self.v[:n],
                             self.f_h[:n], self.energy[:n], self.flags[:n], self.dt, self.stopped)

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(CSV_COLUMNS)
            cols = [self.t[:, None], self.q, self.qdot, self.v_d, self.v, self.f_h, self.energy[:, None]]
            table = np.hstack(cols)
            for row, flag in zip(table, self.flags):
                writer.writerow([f"{x:.9g}" for x in row] + [str(int(flag))])

    @classmethod
    def from_csv(cls, path: str | Path, dt: float | None = None) -> "TrajectoryLog":
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader)
            if header != CSV_COLUMNS:
                raise ValueError(f"{path}: unexpected trajectory header")
            rows = [r for r in reader]
        data = np.array([[float(x) for x in r[:-1]] for r in rows]).reshape(-1, len(CSV_COLUMNS) - 1)
        flags = np.array([int(r[-1]) for r in rows], dtype=int)
        t = data[:, 0]
        if dt is None:
            dt = float(t[0]) if len(t) else 0.0
        return cls(t, data[:, 1:10], data[:, 10:19], data[:, 19:25], data[:, 25:31],
                   data[:, 31:37], data[:, 37], flags, dt)


CSV_COLUMNS = (["t"] + [f"q{i}" for i in range(9)] + [f"qd{i}" for i in range(9)]
               + [f"vd{i}" for i in range(6)] + [f"v{i}" for i in range(6)]
               + [f"fh{i}" for i in range(6)] + ["E_K", "flags"])


class SimulationAborted(RuntimeError):
    """A non-finite value appeared; ``step`` is the offending 1-based step index."""

    def __init__(self, step: int, partial: TrajectoryLog):
        super().__init__(f"non-finite value at step {step}")
        self.step = step
        self.partial = partial


def kinetic_energy(M_a: np.ndarray, M_b: np.ndarray, qdot) -> float:
    qdot = np.asarray(qdot, dtype=float)
    qa, qb = qdot[ARM], qdot[BASE]
    return 0.5 * float(qa @ M_a @ qa) + 0.5 * float(qb @ M_b @ qb)


def integrate_step(q, qdot, dt: float, lower=None, upper=None) -> tuple[np.ndarray, bool]:
    """Explicit Euler step. Base velocities are world-frame so x, y, yaw advance directly.

    With ``lower``/``upper`` given the arm joints are clamped; the flag reports
    whether any clamp was active.
    """
    if not dt > 0:
        raise ValueError(f"dt must be > 0, got {dt}")
    q_next = np.asarray(q, dtype=float) + np.asarray(qdot, dtype=float) * dt
    saturated = False
    if lower is not None:
        arm = q_next[ARM]
        clamped = np.clip(arm, lower, upper)
        saturated = bool(np.any(clamped != arm))
        q_next[ARM] = clamped
    return q_next, saturated


def _mode_at(schedule, t: float) -> OperatingMode:
    """Mode of the latest event at or before ``t``; manipulation before the first event."""
    mode = OperatingMode.MANIPULATION
    for t_event, m in schedule:
        if t_event > t + 1e-12:
            break
        mode = m
    return mode


def _switch_times(schedule) -> list[float]:
    """Times at which the mode actually changes."""
    times, mode = [], OperatingMode.MANIPULATION
    for t_event, m in schedule:
        if m is not mode and t_event > 0:
            times.append(t_event)
        mode = m
    return times


@np.errstate(over="ignore", invalid="ignore")
def run_scenario(spec: ScenarioSpec) -> TrajectoryLog:
    """Run the closed loop until the stop criterion holds or the duration cap is hit.

    Stop criterion: the tool stays within ``r_stop`` of the target for ``hold``
    seconds. Deterministic for a given spec; jitter draws from ``seed``.
    """
    model, dt = spec.model, spec.dt
    p_des = spec.p_des
    n_max = int(round(spec.duration / dt))
    hold_steps = int(round(spec.hold / dt))
    latency_steps = int(round(spec.switch_latency / dt))
    rng = np.random.default_rng(spec.seed)
    limits = (model.arm.lower, model.arm.upper) if spec.joint_limits else (None, None)
    is_switch = spec.controller.name == "switch"
    switch_steps = [int(round(t / dt)) for t in _switch_times(spec.mode_schedule)]

    t_log = np.empty(n_max)
    q_log = np.empty((n_max, N_DOF))
    qd_log = np.empty((n_max, N_DOF))
    vd_log = np.empty((n_max, 6))
    v_log = np.empty((n_max, 6))
    f_log = np.empty((n_max, 6))
    e_log = np.empty(n_max)
    flag_log = np.zeros(n_max, dtype=int)

    q = spec.q0.copy()
    kin = evaluate(model, q)
    v_d = np.zeros(6)
    v = np.zeros(6)
    inside = 0
    stopped = False
    n = 0

    def partial():
        return TrajectoryLog(t_log[:n], q_log[:n], qd_log[:n], vd_log[:n], v_log[:n],
                             f_log[:n], e_log[:n], flag_log[:n], dt)

    for k in range(1, n_max + 1):
        t_prev = (k - 1) * dt
        flags = 0
        f_h = spec.profile(t_prev, kin.pose.position, v, p_des)
        if spec.jitter > 0:
            f_h = f_h.copy()
            f_h[:3] += rng.normal(0.0, spec.jitter, 3)
        v_d = admittance_step(spec.admittance, f_h, v_d, dt)

        mode = OperatingMode.LOCOMOTION
        if is_switch:
            mode = _mode_at(spec.mode_schedule, t_prev)
            if mode is OperatingMode.LOCOMOTION:
                flags |= FLAG_LOCOMOTION
        step = k - 1
        if is_switch and any(s <= step < s + latency_steps for s in switch_steps):
            qdot = np.zeros(N_DOF)
            flags |= FLAG_DWELL
        else:
            out = solve(spec.controller, kin.jacobian, kin.inertia, v_d, q, mode)
            qdot = out.qdot
            if out.damped:
                flags |= FLAG_DAMPED
        v = kin.jacobian @ qdot
        energy = kinetic_energy(kin.inertia[ARM, ARM], kin.inertia[BASE, BASE], qdot)

        q, saturated = integrate_step(q, qdot, dt, *limits)
        if saturated:
            flags |= FLAG_SATURATED
        t_log[n] = k * dt
        q_log[n], qd_log[n], vd_log[n], v_log[n], f_log[n] = q, qdot, v_d, v, f_h
        e_log[n] = energy
        flag_log[n] = flags
        n += 1
        if not (np.all(np.isfinite(q)) and np.all(np.isfinite(qdot)) and np.all(np.isfinite(v_d))
                and np.all(np.isfinite(f_h)) and np.isfinite(energy)):
            raise SimulationAborted(k, partial())

        kin = evaluate(model, q)
        if np.linalg.norm(kin.pose.position - p_des) <= spec.r_stop:
            inside += 1
            if inside > hold_steps:
                stopped = True
                break
        else:
            inside = 0

    result = partial()
    result.stopped = stopped
    log.debug("%s/%s: %d steps, stopped=%s", spec.name, spec.controller.name, n, stopped)
    return result
