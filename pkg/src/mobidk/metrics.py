"""Per-run scalar metrics and boxplot statistics across runs."""

from __future__ import annotations

import statistics
from dataclasses import astuple, dataclass, fields

import numpy as np

from .robot_model import MobileManipulatorModel, forward_kinematics
from .simulator import TrajectoryLog

METRIC_NAMES = ("energy", "force", "velocity", "displacement", "time")
METRIC_LABELS = {
    "energy": "E [J]",
    "force": "F_h [N]",
    "velocity": "v [m/s]",
    "displacement": "x_f [m]",
    "time": "T_f [s]",
}


@dataclass(frozen=True)
class RunMetrics:
    energy: float  # mean kinetic energy
    force: float  # mean human wrench norm
    velocity: float  # mean tool twist norm
    displacement: float  # final distance to the target
    time: float  # execution time

    def __post_init__(self):
        for f in fields(self):
            x = getattr(self, f.name)
            if not (np.isfinite(x) and x >= 0):
                raise ValueError(f"metric {f.name} must be finite and non-negative, got {x}")

    def as_dict(self) -> dict[str, float]:
        return dict(zip(METRIC_NAMES, astuple(self)))


def compute_metrics(log: TrajectoryLog, p_des, model: MobileManipulatorModel) -> RunMetrics:
    """Averages over the N logged steps, T_f = N dt and x_f = |FK(q(T_f)) - p_des|.

    Norms of wrench and twist are taken over the full 6-vectors.
    """
    if len(log) == 0:
        raise ValueError("cannot compute metrics of an empty log")
    final = forward_kinematics(model, log.q[-1]).position
    return RunMetrics(
        energy=float(np.mean(log.energy)),
        force=float(np.mean(np.linalg.norm(log.f_h, axis=1))),
        velocity=float(np.mean(np.linalg.norm(log.v, axis=1))),
        displacement=float(np.linalg.norm(final - np.asarray(p_des, dtype=float))),
        time=len(log) * log.dt,
    )


@dataclass(frozen=True)
class BoxStats:
    """Tukey boxplot summary.

    Quartiles are Tukey hinges: medians of the lower and upper halves, each half
    including the overall median when the count is odd. Whiskers reach the most
    extreme samples within 1.5 IQR of the hinges; anything beyond is an outlier.
    """

    n: int
    median: float
    q1: float
    q3: float
    minimum: float
    maximum: float
    lower_whisker: float
    upper_whisker: float
    outliers: tuple[float, ...]

    @property
    def iqr(self) -> float:
        return self.q3 - self.q1


def box_stats(values) -> BoxStats:
    x = sorted(float(v) for v in values)
    if not x:
        raise ValueError("cannot summarize an empty sample")
    n = len(x)
    q1 = statistics.median(x[: (n + 1) // 2])
    q3 = statistics.median(x[n // 2:])
    lo, hi = q1 - 1.5 * (q3 - q1), q3 + 1.5 * (q3 - q1)
    inside = [v for v in x if lo <= v <= hi]
    return BoxStats(
        n=n,
        median=statistics.median(x),
        q1=q1,
        q3=q3,
        minimum=x[0],
        maximum=x[-1],
        lower_whisker=inside[0],
        upper_whisker=inside[-1],
        outliers=tuple(v for v in x if v < lo or v > hi),
    )


@dataclass(frozen=True)
class AggregateStats:
    energy: BoxStats
    force: BoxStats
    velocity: BoxStats
    displacement: BoxStats
    time: BoxStats

    def __getitem__(self, name: str) -> BoxStats:
        return getattr(self, name)

    def medians(self) -> RunMetrics:
        return RunMetrics(*(self[name].median for name in METRIC_NAMES))


def aggregate(runs: list[RunMetrics]) -> AggregateStats:
    """Boxplot statistics for each metric; independent of run order."""
    if not runs:
        raise ValueError("cannot aggregate an empty set of runs")
    return AggregateStats(*(box_stats(getattr(r, name) for r in runs) for name in METRIC_NAMES))
