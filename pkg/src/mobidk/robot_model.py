"""Kinematic and inertial model of an omnidirectional mobile base carrying a 6-DOF arm.

Generalized coordinates are 9-vectors ordered arm-then-base::

    q    = (q1, ..., q6, x_b, y_b, yaw_b)
    qdot = (qd1, ..., qd6, v_bx, v_by, w_bz)

Base velocities are world-frame virtual joint rates. Twists are
(v_x, v_y, v_z, w_x, w_y, w_z) in the world frame, taken at the tool point.

The arm chain uses standard Denavit-Hartenberg parameters; per-link centre of
mass and inertia tensors are expressed in the link's own DH frame.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import NamedTuple

import numpy as np
from scipy.spatial.transform import Rotation

from .config import ConfigError, Document, as_float, as_vector, dump, get, listify

N_ARM = 6
N_BASE = 3
N_DOF = N_ARM + N_BASE
ARM = slice(0, N_ARM)
BASE = slice(N_ARM, N_DOF)

DEFAULT_MODEL_FILE = "ur10e_kairos.yaml"


def skew(v: np.ndarray) -> np.ndarray:
    return np.array([[0.0, -v[2], v[1]],
                     [v[2], 0.0, -v[0]],
                     [-v[1], v[0], 0.0]])


def dh_transform(theta: float, d: float, a: float, alpha: float) -> np.ndarray:
    """Standard DH link transform Rz(theta) Tz(d) Tx(a) Rx(alpha)."""
    ct, st = np.cos(theta), np.sin(theta)
    ca, sa = np.cos(alpha), np.sin(alpha)
    return np.array([[ct, -st * ca, st * sa, a * ct],
                     [st, ct * ca, -ct * sa, a * st],
                     [0.0, sa, ca, d],
                     [0.0, 0.0, 0.0, 1.0]])


def planar_transform(x: float, y: float, yaw: float, z: float = 0.0) -> np.ndarray:
    c, s = np.cos(yaw), np.sin(yaw)
    return np.array([[c, -s, 0.0, x],
                     [s, c, 0.0, y],
                     [0.0, 0.0, 1.0, z],
                     [0.0, 0.0, 0.0, 1.0]])


@dataclass(frozen=True)
class Link:
    d: float
    a: float
    alpha: float
    offset: float
    mass: float
    com: np.ndarray
    inertia: np.ndarray  # 3x3 about the COM, link frame


@dataclass(frozen=True)
class ArmModel:
    links: tuple[Link, ...]
    lower: np.ndarray | None = None
    upper: np.ndarray | None = None

    def __post_init__(self):
        if len(self.links) != N_ARM:
            raise ValueError(f"arm must have exactly {N_ARM} revolute joints, got {len(self.links)}")
        for i, link in enumerate(self.links):
            if not link.mass > 0:
                raise ValueError(f"link {i}: mass must be > 0")
            inertia = np.asarray(link.inertia)
            if inertia.shape != (3, 3) or not np.allclose(inertia, inertia.T, atol=1e-12):
                raise ValueError(f"link {i}: inertia tensor must be a symmetric 3x3 matrix")
            if np.linalg.eigvalsh(inertia).min() <= 0:
                raise ValueError(f"link {i}: inertia tensor must be positive definite")
        if (self.lower is None) != (self.upper is None):
            raise ValueError("joint limits need both lower and upper bounds")
        if self.lower is not None and not np.all(np.asarray(self.lower) < np.asarray(self.upper)):
            raise ValueError("joint limits must satisfy lower < upper")

    @property
    def has_limits(self) -> bool:
        return self.lower is not None


@dataclass(frozen=True)
class BaseModel:
    mass: float = 115.0
    yaw_inertia: float = 10.0
    mount: np.ndarray = field(default_factory=lambda: np.zeros(3))  # arm root in base frame
    mount_yaw: float = 0.0

    def __post_init__(self):
        if not self.mass > 0:
            raise ValueError("base mass must be > 0")
        if not self.yaw_inertia > 0:
            raise ValueError("base yaw inertia must be > 0")

    @property
    def inertia(self) -> np.ndarray:
        return np.diag([self.mass, self.mass, self.yaw_inertia])


@dataclass(frozen=True)
class MobileManipulatorModel:
    arm: ArmModel
    base: BaseModel
    tool: np.ndarray = field(default_factory=lambda: np.eye(4))
    name: str = "mobile_manipulator"

    def scaled(self, factor: float) -> "MobileManipulatorModel":
        """Copy with every arm link mass and inertia multiplied by ``factor``."""
        links = tuple(Link(l.d, l.a, l.alpha, l.offset, l.mass * factor, l.com, l.inertia * factor)
                      for l in self.arm.links)
        return MobileManipulatorModel(ArmModel(links, self.arm.lower, self.arm.upper),
                                      self.base, self.tool, self.name)


@dataclass(frozen=True)
class Pose:
    position: np.ndarray
    rotation: np.ndarray

    @property
    def quaternion(self) -> np.ndarray:
        """Unit quaternion (w, x, y, z) with w >= 0."""
        x, y, z, w = Rotation.from_matrix(self.rotation).as_quat()
        quat = np.array([w, x, y, z])
        if quat[0] < 0:
            quat = -quat
        return quat / np.linalg.norm(quat)


class Kinematics(NamedTuple):
    """Everything the control loop needs at one configuration."""
    pose: Pose
    jacobian: np.ndarray  # 6x9
    inertia: np.ndarray  # 9x9


# ---------------------------------------------------------------------------
# kinematics


def _split(model: MobileManipulatorModel, q) -> tuple[np.ndarray, np.ndarray]:
    q = np.asarray(q, dtype=float)
    if q.shape == (N_ARM,):
        return q, np.zeros(N_BASE)
    if q.shape != (N_DOF,):
        raise ValueError(f"expected a 6- or 9-vector, got shape {q.shape}")
    return q[ARM], q[BASE]


def _root_frames(model: MobileManipulatorModel, q_a: np.ndarray) -> list[np.ndarray]:
    """Frames 0..6 of the DH chain, relative to the arm root."""
    frames = [np.eye(4)]
    T = frames[0]
    for link, qi in zip(model.arm.links, q_a):
        T = T @ dh_transform(qi + link.offset, link.d, link.a, link.alpha)
        frames.append(T)
    return frames


def _world_root(model: MobileManipulatorModel, q_b: np.ndarray) -> np.ndarray:
    base = model.base
    return planar_transform(q_b[0], q_b[1], q_b[2]) @ planar_transform(
        base.mount[0], base.mount[1], base.mount_yaw, base.mount[2])


def _pose_and_jacobian(model, q_a, q_b, frames):
    W = _world_root(model, q_b)
    world = [W @ T for T in frames]
    ee = world[-1] @ model.tool
    p = ee[:3, 3]

    J = np.zeros((6, N_DOF))
    axes = np.array([T[:3, 2] for T in world[:N_ARM]])
    origins = np.array([T[:3, 3] for T in world[:N_ARM]])
    J[:3, ARM] = np.cross(axes, p - origins).T
    J[3:, ARM] = axes.T
    J[0, 6] = 1.0
    J[1, 7] = 1.0
    # base rotation about world z through (x_b, y_b)
    J[0, 8] = -(p[1] - q_b[1])
    J[1, 8] = p[0] - q_b[0]
    J[5, 8] = 1.0
    return Pose(p.copy(), ee[:3, :3].copy()), J


def forward_kinematics(model: MobileManipulatorModel, q) -> Pose:
    """World-frame tool pose: base planar pose, arm mount, DH chain, tool transform."""
    q_a, q_b = _split(model, q)
    T = _world_root(model, q_b) @ _root_frames(model, q_a)[-1] @ model.tool
    return Pose(T[:3, 3].copy(), T[:3, :3].copy())


def whole_jacobian(model: MobileManipulatorModel, q) -> np.ndarray:
    """6x9 geometric Jacobian [J_a | J_b] in the world frame."""
    q_a, q_b = _split(model, q)
    return _pose_and_jacobian(model, q_a, q_b, _root_frames(model, q_a))[1]


def arm_jacobian(model: MobileManipulatorModel, q) -> np.ndarray:
    """6x6 world-frame geometric Jacobian of the arm joints.

    ``q`` may be the full 9-vector or just the arm angles (base at the origin).
    """
    return whole_jacobian(model, q)[:, ARM]


def base_jacobian(model: MobileManipulatorModel, q) -> np.ndarray:
    """6x3 map from (v_bx, v_by, w_bz) to the tool twist; depends on the tool lever arm."""
    return whole_jacobian(model, q)[:, BASE]


# ---------------------------------------------------------------------------
# inertia


def _crba(model: MobileManipulatorModel, frames: list[np.ndarray]) -> np.ndarray:
    # spatial inertias about the arm-root origin, (angular, linear) ordering
    composite = [None] * N_ARM
    acc = np.zeros((6, 6))
    for i in range(N_ARM - 1, -1, -1):
        link = model.arm.links[i]
        R = frames[i + 1][:3, :3]
        c = frames[i + 1][:3, 3] + R @ link.com
        cx = skew(c)
        m = link.mass
        spatial = np.empty((6, 6))
        spatial[:3, :3] = R @ link.inertia @ R.T - m * cx @ cx
        spatial[:3, 3:] = m * cx
        spatial[3:, :3] = m * cx.T
        spatial[3:, 3:] = m * np.eye(3)
        acc = acc + spatial
        composite[i] = acc

    # joint motion subspaces: unit twists about each axis, origin-referenced
    axes = np.array([T[:3, 2] for T in frames[:N_ARM]])
    origins = np.array([T[:3, 3] for T in frames[:N_ARM]])
    S = np.vstack([axes.T, np.cross(origins, axes).T])

    H = np.empty((N_ARM, N_ARM))
    for i in range(N_ARM):
        F = composite[i] @ S[:, i]
        for j in range(i + 1):
            H[i, j] = H[j, i] = S[:, j] @ F
    return H


def arm_inertia(model: MobileManipulatorModel, q_a) -> np.ndarray:
    """Joint-space inertia M_a(q_a) of the arm on a fixed root (composite rigid body)."""
    q_a, _ = _split(model, q_a)
    return _crba(model, _root_frames(model, q_a))


def whole_inertia(model: MobileManipulatorModel, q_a) -> np.ndarray:
    """Block-diagonal 9x9 inertia diag(M_a(q_a), M_b); independent of the base pose."""
    q_a, _ = _split(model, q_a)
    M = np.zeros((N_DOF, N_DOF))
    M[ARM, ARM] = arm_inertia(model, q_a)
    M[BASE, BASE] = model.base.inertia
    return M


def evaluate(model: MobileManipulatorModel, q) -> Kinematics:
    """Pose, whole Jacobian and whole inertia from a single pass over the chain."""
    q_a, q_b = _split(model, q)
    frames = _root_frames(model, q_a)
    pose, J = _pose_and_jacobian(model, q_a, q_b, frames)
    M = np.zeros((N_DOF, N_DOF))
    M[ARM, ARM] = _crba(model, frames)
    M[BASE, BASE] = model.base.inertia
    return Kinematics(pose, J, M)


# ---------------------------------------------------------------------------
# model files


def _inertia_tensor(doc: Document, value, field: str) -> np.ndarray:
    if isinstance(value, list) and len(value) == 3 and all(isinstance(r, list) for r in value):
        return np.array([as_vector(doc, r, f"{field}[{i}]", 3) for i, r in enumerate(value)])
    ixx, iyy, izz, ixy, ixz, iyz = as_vector(doc, value, field, 6)
    return np.array([[ixx, ixy, ixz], [ixy, iyy, iyz], [ixz, iyz, izz]])


def model_from_document(doc: Document) -> MobileManipulatorModel:
    data = doc.data
    arm = get(doc, data, "", "arm")
    links_raw = get(doc, arm, "arm", "links")
    if not isinstance(links_raw, list) or len(links_raw) != N_ARM:
        raise doc.error("arm.links", f"expected exactly {N_ARM} links")
    links = []
    for i, raw in enumerate(links_raw):
        f = f"arm.links[{i}]"
        inertia = _inertia_tensor(doc, get(doc, raw, f, "inertia"), f"{f}.inertia")
        if not np.allclose(inertia, inertia.T) or np.linalg.eigvalsh(inertia).min() <= 0:
            raise doc.error(f"{f}.inertia", "inertia tensor must be symmetric positive definite")
        links.append(Link(
            d=as_float(doc, get(doc, raw, f, "d"), f"{f}.d"),
            a=as_float(doc, get(doc, raw, f, "a"), f"{f}.a"),
            alpha=as_float(doc, get(doc, raw, f, "alpha"), f"{f}.alpha"),
            offset=as_float(doc, get(doc, raw, f, "offset", 0.0), f"{f}.offset"),
            mass=as_float(doc, get(doc, raw, f, "mass"), f"{f}.mass", positive=True),
            com=as_vector(doc, get(doc, raw, f, "com"), f"{f}.com", 3),
            inertia=inertia,
        ))
    lower = upper = None
    limits = arm.get("limits")
    if limits is not None:
        lower = as_vector(doc, get(doc, limits, "arm.limits", "lower"), "arm.limits.lower", N_ARM)
        upper = as_vector(doc, get(doc, limits, "arm.limits", "upper"), "arm.limits.upper", N_ARM)
        if not np.all(lower < upper):
            raise doc.error("arm.limits", "joint limits must satisfy lower < upper")

    base_raw = get(doc, data, "", "base")
    base = BaseModel(
        mass=as_float(doc, get(doc, base_raw, "base", "mass"), "base.mass", positive=True),
        yaw_inertia=as_float(doc, get(doc, base_raw, "base", "yaw_inertia"), "base.yaw_inertia",
                             positive=True),
        mount=as_vector(doc, get(doc, base_raw, "base", "mount", [0.0, 0.0, 0.0]), "base.mount", 3),
        mount_yaw=as_float(doc, get(doc, base_raw, "base", "mount_yaw", 0.0), "base.mount_yaw"),
    )

    tool = np.eye(4)
    tool_raw = data.get("tool")
    if tool_raw is not None:
        tool[:3, 3] = as_vector(doc, get(doc, tool_raw, "tool", "xyz", [0.0, 0.0, 0.0]), "tool.xyz", 3)
        rpy = as_vector(doc, get(doc, tool_raw, "tool", "rpy", [0.0, 0.0, 0.0]), "tool.rpy", 3)
        tool[:3, :3] = Rotation.from_euler("xyz", rpy).as_matrix()

    return MobileManipulatorModel(ArmModel(tuple(links), lower, upper), base, tool,
                                  str(data.get("name", "mobile_manipulator")))


def load_model(path: str | Path) -> MobileManipulatorModel:
    """Parse a model file. Errors carry the file, line and field."""
    doc = Document.load(path)
    try:
        return model_from_document(doc)
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError(str(exc), path) from exc


def model_to_dict(model: MobileManipulatorModel) -> dict:
    arm: dict = {"links": [
        {"d": l.d, "a": l.a, "alpha": l.alpha, "offset": l.offset, "mass": l.mass,
         "com": listify(l.com), "inertia": listify(l.inertia)}
        for l in model.arm.links]}
    if model.arm.has_limits:
        arm["limits"] = {"lower": listify(model.arm.lower), "upper": listify(model.arm.upper)}
    return {
        "schema_version": 1,
        "name": model.name,
        "arm": arm,
        "base": {"mass": model.base.mass, "yaw_inertia": model.base.yaw_inertia,
                 "mount": listify(model.base.mount), "mount_yaw": model.base.mount_yaw},
        "tool": {"xyz": listify(model.tool[:3, 3]),
                 "rpy": listify(Rotation.from_matrix(model.tool[:3, :3]).as_euler("xyz"))},
    }


def save_model(model: MobileManipulatorModel, path: str | Path) -> None:
    Path(path).write_text(dump(model_to_dict(model)))


def data_path(name: str) -> Path:
    return Path(str(resources.files("mobidk") / "data" / name))


def default_model() -> MobileManipulatorModel:
    """The bundled UR10e-like arm on a 115 kg omnidirectional base."""
    return load_model(data_path(DEFAULT_MODEL_FILE))
