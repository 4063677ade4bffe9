"""Inverse differential kinematics solvers for the arm + base system.

Three controllers share one output type:

* ``locomotion``: prioritized damped least squares over all nine joints plus a
  null-space pull toward a preferred configuration (the benchmark).
* ``switch``: the same benchmark in locomotion mode, arm-only damped least
  squares in manipulation mode.
* ``min-energy``: the joint velocity of least kinetic energy that realizes the
  twist exactly, via the inertia-weighted (dynamically consistent) pseudoinverse,
  plus the same null-space pull.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from .robot_model import ARM, BASE, N_ARM, N_DOF

CONTROLLERS = ("locomotion", "switch", "min-energy")

# singularity guard for the 6x6 system inverted by the min-energy solver
CONDITION_LIMIT = 1e8
GUARD_DAMPING = 1e-6


class OperatingMode(enum.Enum):
    MANIPULATION = "manipulation"
    LOCOMOTION = "locomotion"


def _require_spd(A: np.ndarray, what: str) -> None:
    if not np.allclose(A, A.T, atol=1e-12, rtol=0):
        raise ValueError(f"{what} must be symmetric")
    try:
        np.linalg.cholesky(A)
    except np.linalg.LinAlgError:
        raise ValueError(f"{what} must be positive definite") from None


@dataclass(frozen=True)
class BenchmarkWeights:
    """Task weight (6x6) and joint-velocity damping (9x9) of the benchmark objective."""

    task: np.ndarray = field(default_factory=lambda: np.eye(6))
    damping: np.ndarray = field(default_factory=lambda: 1e-4 * np.eye(N_DOF))

    def __post_init__(self):
        task = np.asarray(self.task, dtype=float)
        damping = np.asarray(self.damping, dtype=float)
        if task.shape != (6, 6) or damping.shape != (N_DOF, N_DOF):
            raise ValueError("benchmark weights must be 6x6 (task) and 9x9 (damping)")
        _require_spd(task, "task weight")
        _require_spd(damping, "damping weight")
        object.__setattr__(self, "task", task)
        object.__setattr__(self, "damping", damping)


@dataclass(frozen=True)
class SecondaryTask:
    """Pull toward a preferred configuration: qdot_s = G (q_des - q), G diagonal (1/s)."""

    gains: np.ndarray = field(default_factory=lambda: np.array([1.0] * N_ARM + [0.0] * 3))
    q_des: np.ndarray = field(default_factory=lambda: np.zeros(N_DOF))

    def __post_init__(self):
        gains = np.asarray(self.gains, dtype=float)
        q_des = np.asarray(self.q_des, dtype=float)
        if gains.shape != (N_DOF,) or q_des.shape != (N_DOF,):
            raise ValueError("secondary task gains and q_des must be 9-vectors")
        if np.any(gains < 0):
            raise ValueError("secondary task gains must be non-negative")
        object.__setattr__(self, "gains", gains)
        object.__setattr__(self, "q_des", q_des)


@dataclass
class SolverOutput:
    qdot: np.ndarray
    residual: float  # ||J qdot - v_d||
    energy: float  # kinetic energy of the primary (twist-realizing) component
    condition: float  # condition number of the matrix that was inverted
    damped: bool = False  # singularity guard engaged
    multiplier: np.ndarray | None = None  # Lagrange multiplier, min-energy only
    pinv: np.ndarray | None = None  # generalized inverse used for the projector


def null_projector(J: np.ndarray, J_pinv: np.ndarray) -> np.ndarray:
    """N = I - J_pinv J. A true projector onto ker(J) only if J J_pinv = I."""
    return np.eye(J.shape[1]) - J_pinv @ J


def inverse_error(J: np.ndarray, J_pinv: np.ndarray) -> float:
    """max |J J_pinv - I|, the generalized-inverse defect."""
    return float(np.abs(J @ J_pinv - np.eye(J.shape[0])).max())


def secondary_velocity(task: SecondaryTask, q) -> np.ndarray:
    return task.gains * (task.q_des - np.asarray(q, dtype=float))


def _condition(A: np.ndarray) -> float:
    eig = np.linalg.eigvalsh(A)
    return float(eig[-1] / eig[0]) if eig[0] > 0 else float("inf")


def _quadratic(M, x):
    return 0.5 * float(x @ M @ x)


def damped_pinv(J: np.ndarray, weights: BenchmarkWeights) -> tuple[np.ndarray, float]:
    """(J^T W_a J + W_b)^-1 J^T W_a and the condition number of the normal matrix."""
    A = J.T @ weights.task @ J + weights.damping
    return np.linalg.solve(A, J.T @ weights.task), _condition(A)


def solve_benchmark(J: np.ndarray, v_d, weights: BenchmarkWeights, task: SecondaryTask, q,
                    M: np.ndarray | None = None, projector: str = "exact") -> SolverOutput:
    """Prioritized damped least squares with a null-space secondary task.

    ``projector="exact"`` builds the null projector from the Moore-Penrose
    pseudoinverse of ``J`` (an exact projector); ``"damped"`` reuses the damped
    pseudoinverse of the primary term, which only approximately annihilates J.
    """
    v_d = np.asarray(v_d, dtype=float)
    J_damped, cond = damped_pinv(J, weights)
    primary = J_damped @ v_d
    if projector == "exact":
        J_pinv = np.linalg.pinv(J)
    elif projector == "damped":
        J_pinv = J_damped
    else:
        raise ValueError(f"unknown projector {projector!r}")
    qdot = primary + null_projector(J, J_pinv) @ secondary_velocity(task, q)
    return SolverOutput(
        qdot=qdot,
        residual=float(np.linalg.norm(J @ qdot - v_d)),
        energy=_quadratic(M, primary) if M is not None else float("nan"),
        condition=cond,
        pinv=J_pinv,
    )


def solve_min_energy(J: np.ndarray, M: np.ndarray, v_d) -> SolverOutput:
    """Minimize 1/2 qdot^T M qdot subject to J qdot = v_d.

    The solution is qdot* = M^-1 J^T (J M^-1 J^T)^-1 v_d with multiplier
    lambda = -(J M^-1 J^T)^-1 v_d. If the 6x6 system's condition number exceeds
    ``CONDITION_LIMIT`` it is regularized by ``GUARD_DAMPING * I`` and the output
    is flagged ``damped``; the constraint then holds only approximately.
    """
    v_d = np.asarray(v_d, dtype=float)
    MinvJt = np.linalg.solve(M, J.T)
    A = J @ MinvJt
    A = 0.5 * (A + A.T)
    cond = _condition(A)
    damped = not cond <= CONDITION_LIMIT
    if damped:
        A = A + GUARD_DAMPING * np.eye(A.shape[0])
    # J_M^dagger = M^-1 J^T A^-1; A symmetric
    pinv = np.linalg.solve(A, MinvJt.T).T
    y = np.linalg.solve(A, v_d)
    if not damped:
        # one round of iterative refinement; the heavy base next to a light wrist
        # leaves A badly conditioned and the first solve a few ulps short
        y = y + np.linalg.solve(A, v_d - J @ (MinvJt @ y))
        pinv = pinv + pinv @ (np.eye(A.shape[0]) - J @ pinv)
    qdot = MinvJt @ y
    return SolverOutput(
        qdot=qdot,
        residual=float(np.linalg.norm(J @ qdot - v_d)),
        energy=_quadratic(M, qdot),
        condition=cond,
        damped=damped,
        multiplier=-y,
        pinv=pinv,
    )


def compose_with_secondary(primary: SolverOutput, J: np.ndarray, M: np.ndarray,
                           task: SecondaryTask, q, v_d=None) -> SolverOutput:
    """Add the secondary pull through the inertia-weighted null projector.

    The added motion is invisible at the tool (J N = 0) and M-orthogonal to the
    minimum-energy component.
    """
    pinv = primary.pinv
    if pinv is None:
        pinv = solve_min_energy(J, M, np.zeros(J.shape[0])).pinv
    qdot = primary.qdot + null_projector(J, pinv) @ secondary_velocity(task, q)
    if v_d is None:
        residual = primary.residual + float(np.linalg.norm(J @ (qdot - primary.qdot)))
    else:
        residual = float(np.linalg.norm(J @ qdot - np.asarray(v_d, dtype=float)))
    return SolverOutput(
        qdot=qdot,
        residual=residual,
        energy=primary.energy,
        condition=primary.condition,
        damped=primary.damped,
        multiplier=primary.multiplier,
        pinv=pinv,
    )


def solve_switch(mode: OperatingMode, J_a: np.ndarray, J_b: np.ndarray, M: np.ndarray, v_d,
                 weights: BenchmarkWeights, task: SecondaryTask, q,
                 projector: str = "exact") -> SolverOutput:
    """Manipulation: arm-only damped least squares, base pinned. Locomotion: the benchmark."""
    if mode is OperatingMode.LOCOMOTION:
        return solve_benchmark(np.hstack([J_a, J_b]), v_d, weights, task, q, M, projector)
    v_d = np.asarray(v_d, dtype=float)
    A = J_a.T @ weights.task @ J_a + weights.damping[ARM, ARM]
    qdot = np.zeros(N_DOF)
    qdot[ARM] = np.linalg.solve(A, J_a.T @ weights.task @ v_d)
    return SolverOutput(
        qdot=qdot,
        residual=float(np.linalg.norm(J_a @ qdot[ARM] - v_d)),
        energy=_quadratic(M, qdot),
        condition=_condition(A),
    )


@dataclass(frozen=True)
class ControllerConfig:
    name: str = "min-energy"
    weights: BenchmarkWeights = field(default_factory=BenchmarkWeights)
    task: SecondaryTask = field(default_factory=SecondaryTask)
    projector: str = "exact"

    def __post_init__(self):
        if self.name not in CONTROLLERS:
            raise ValueError(f"unknown controller {self.name!r}; expected one of {CONTROLLERS}")
        if self.projector not in ("exact", "damped"):
            raise ValueError(f"unknown projector {self.projector!r}")


def solve(config: ControllerConfig, J: np.ndarray, M: np.ndarray, v_d, q,
          mode: OperatingMode = OperatingMode.LOCOMOTION) -> SolverOutput:
    """Dispatch one control step to the configured solver."""
    if config.name == "min-energy":
        return compose_with_secondary(solve_min_energy(J, M, v_d), J, M, config.task, q, v_d)
    if config.name == "locomotion":
        return solve_benchmark(J, v_d, config.weights, config.task, q, M, config.projector)
    return solve_switch(mode, J[:, ARM], J[:, BASE], M, v_d, config.weights, config.task, q,
                        config.projector)
