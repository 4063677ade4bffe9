"""Virtual mass-damper admittance turning the human wrench into a desired tool twist."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

DEFAULT_DT = 0.002


@dataclass(frozen=True)
class AdmittanceParams:
    """Diagonals of the virtual mass M (kg, kg m^2) and damping B (N s/m, N m s/rad)."""

    mass: np.ndarray = field(default_factory=lambda: np.full(6, 4.0))
    damping: np.ndarray = field(default_factory=lambda: np.full(6, 75.0))

    def __post_init__(self):
        mass = np.asarray(self.mass, dtype=float)
        damping = np.asarray(self.damping, dtype=float)
        if mass.shape != (6,) or damping.shape != (6,):
            raise ValueError("admittance mass and damping must be 6-vectors (matrix diagonals)")
        if not (np.all(mass > 0) and np.all(damping > 0)):
            raise ValueError("admittance mass and damping must be strictly positive")
        object.__setattr__(self, "mass", mass)
        object.__setattr__(self, "damping", damping)

    @property
    def M(self) -> np.ndarray:
        return np.diag(self.mass)

    @property
    def B(self) -> np.ndarray:
        return np.diag(self.damping)

    @property
    def time_constant(self) -> np.ndarray:
        return self.mass / self.damping


def admittance_step(params: AdmittanceParams, f_h, v_prev, dt: float) -> np.ndarray:
    """Advance ``M dv/dt + B v = f_h`` by ``dt`` with the wrench held constant.

    Each axis is integrated exactly (zero-order hold), so the result does not
    depend on how the interval is subdivided and is stable for any ``dt``.
    """
    if not dt > 0:
        raise ValueError(f"dt must be > 0, got {dt}")
    decay = np.exp(-params.damping * dt / params.mass)
    return decay * np.asarray(v_prev, dtype=float) + (1.0 - decay) * np.asarray(f_h, dtype=float) / params.damping
