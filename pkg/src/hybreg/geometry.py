"""Point clouds, rigid transforms and rotation parameterizations.

The solver's native parameterization is axis/angle for rotation plus a
direction and a bounded distance for translation::

    R = cos(theta) I + (1 - cos(theta)) v v^T + sin(theta) [v]_x
    T = m(d_u) u

with ``v`` and ``u`` normalized at realization time and ``m`` a smooth map of
the unconstrained scalar ``d_u`` onto [0, d_max]. Euler angles and the 6-D
Gram-Schmidt frame are provided as baseline rotation parameterizations.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    DegenerateAxisError,
    DegenerateDirectionError,
    DegenerateFrameError,
    InvalidArgumentError,
)

ORTHO_TOL = 1e-9


class Mapping(str, enum.Enum):
    """Map from the unconstrained distance variable onto [0, d_max].

    ``CLAMP`` is not a smooth change of variables: the distance is used raw
    and clipped, which is the projected-gradient baseline.
    """

    SIGMOID = "sigmoid"
    SIN = "sin"
    CLAMP = "clamp"


class Plane(str, enum.Enum):
    XY = "xy"
    YZ = "yz"
    XZ = "xz"

    @property
    def axes(self) -> tuple[int, int]:
        return _PLANE_AXES[self]


_PLANE_AXES = {Plane.XY: (0, 1), Plane.YZ: (1, 2), Plane.XZ: (0, 2)}


class RotationKind(str, enum.Enum):
    EULER_XYZ = "euler"
    SIX_D = "sixd"


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=np.float64, copy=True)
    a.setflags(write=False)
    return a


def _vec3(x, name: str) -> np.ndarray:
    a = np.asarray(x, dtype=np.float64)
    if a.shape != (3,):
        raise InvalidArgumentError(f"{name} must be a 3-vector, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise InvalidArgumentError(f"{name} must be finite")
    return a


@dataclass(frozen=True)
class PointCloud:
    """Ordered, immutable set of 3D points.

    ``meta`` carries optional bookkeeping such as the normalization applied
    to produce the cloud; it never affects numerics.
    """

    points: np.ndarray
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64)
        if pts.ndim != 2 or pts.shape[1] != 3:
            raise InvalidArgumentError(f"points must have shape (n, 3), got {pts.shape}")
        if pts.shape[0] < 1:
            raise InvalidArgumentError("point cloud must contain at least one point")
        if not np.all(np.isfinite(pts)):
            raise InvalidArgumentError("point coordinates must be finite")
        object.__setattr__(self, "points", _frozen(np.ascontiguousarray(pts)))

    @property
    def count(self) -> int:
        return self.points.shape[0]

    def __len__(self) -> int:
        return self.count

    def centroid(self) -> np.ndarray:
        return self.points.mean(axis=0)

    def subset(self, idx) -> "PointCloud":
        return PointCloud(self.points[np.asarray(idx)])


@dataclass(frozen=True)
class RigidTransform:
    R: np.ndarray
    T: np.ndarray

    def __post_init__(self):
        R = np.asarray(self.R, dtype=np.float64)
        if R.shape != (3, 3) or not np.all(np.isfinite(R)):
            raise InvalidArgumentError("R must be a finite 3x3 matrix")
        check_rotation(R, ORTHO_TOL)
        object.__setattr__(self, "R", _frozen(R))
        object.__setattr__(self, "T", _frozen(_vec3(self.T, "T")))

    @classmethod
    def identity(cls) -> "RigidTransform":
        return cls(np.eye(3), np.zeros(3))

    def inverse(self) -> "RigidTransform":
        Rt = self.R.T
        return RigidTransform(Rt, -Rt @ self.T)

    def compose(self, other: "RigidTransform") -> "RigidTransform":
        """``self ∘ other``: apply ``other`` first."""
        return RigidTransform(self.R @ other.R, self.R @ other.T + self.T)

    def matrix(self) -> np.ndarray:
        M = np.eye(4)
        M[:3, :3] = self.R
        M[:3, 3] = self.T
        return M


def check_rotation(R: np.ndarray, tol: float) -> None:
    """Raise if ``R`` is not orthonormal with unit determinant within ``tol``."""
    R = np.asarray(R, dtype=np.float64)
    err = np.max(np.abs(R.T @ R - np.eye(3)))
    if not err <= tol:
        raise InvalidArgumentError(f"matrix is not orthonormal (max |R^T R - I| = {err:.3g})")
    det = np.linalg.det(R)
    if not abs(det - 1.0) <= tol:
        raise InvalidArgumentError(f"rotation determinant is {det:.12g}, expected 1")


@dataclass(frozen=True)
class TransformParams:
    """Unconstrained variables ``[v, theta, u, d_u]`` plus the distance bound."""

    v: np.ndarray
    theta: float
    u: np.ndarray
    d_u: float
    d_max: float
    mapping: Mapping = Mapping.SIN

    def __post_init__(self):
        object.__setattr__(self, "v", _frozen(_vec3(self.v, "v")))
        object.__setattr__(self, "u", _frozen(_vec3(self.u, "u")))
        object.__setattr__(self, "mapping", Mapping(self.mapping))
        if not (np.isfinite(self.d_max) and self.d_max > 0):
            raise InvalidArgumentError("d_max must be positive")
        if not np.isfinite(self.theta):
            raise InvalidArgumentError("theta must be finite")
        if np.isnan(self.d_u):
            raise InvalidArgumentError("d_u must not be NaN")
        object.__setattr__(self, "theta", float(self.theta))
        object.__setattr__(self, "d_u", float(self.d_u))
        object.__setattr__(self, "d_max", float(self.d_max))

    def vector(self) -> np.ndarray:
        """Flat layout ``(v0, v1, v2, theta, u0, u1, u2, d_u)`` used by the optimizer."""
        return np.concatenate([self.v, [self.theta], self.u, [self.d_u]])

    @classmethod
    def from_vector(cls, x, d_max: float, mapping: Mapping = Mapping.SIN) -> "TransformParams":
        x = np.asarray(x, dtype=np.float64)
        return cls(x[0:3], x[3], x[4:7], x[7], d_max, mapping)


@dataclass(frozen=True)
class AltRotationParams:
    kind: RotationKind
    values: np.ndarray

    def __post_init__(self):
        kind = RotationKind(self.kind)
        vals = np.asarray(self.values, dtype=np.float64).reshape(-1)
        want = 3 if kind is RotationKind.EULER_XYZ else 6
        if vals.shape != (want,):
            raise InvalidArgumentError(f"{kind.value} rotation needs {want} values, got {vals.size}")
        if not np.all(np.isfinite(vals)):
            raise InvalidArgumentError("rotation values must be finite")
        object.__setattr__(self, "kind", kind)
        object.__setattr__(self, "values", _frozen(vals))


@dataclass(frozen=True)
class AltTransformParams:
    """Baseline parameterization: alternative rotation plus the usual translation variables."""

    rotation: AltRotationParams
    u: np.ndarray
    d_u: float
    d_max: float
    mapping: Mapping = Mapping.SIN

    def __post_init__(self):
        object.__setattr__(self, "u", _frozen(_vec3(self.u, "u")))
        object.__setattr__(self, "mapping", Mapping(self.mapping))
        if not (np.isfinite(self.d_max) and self.d_max > 0):
            raise InvalidArgumentError("d_max must be positive")
        object.__setattr__(self, "d_u", float(self.d_u))
        object.__setattr__(self, "d_max", float(self.d_max))

    def vector(self) -> np.ndarray:
        return np.concatenate([self.rotation.values, self.u, [self.d_u]])


def skew(v) -> np.ndarray:
    """Cross-product matrix: ``skew(v) @ w == np.cross(v, w)``."""
    x, y, z = _vec3(v, "v")
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


def _unit(v, name: str, exc) -> np.ndarray:
    v = _vec3(v, name)
    n = np.sqrt(v @ v)
    if n == 0.0:
        raise exc(f"{name} has zero norm")
    return v / n


def rodrigues(v, theta: float) -> np.ndarray:
    """Rotation by ``theta`` radians about ``v`` (right-hand rule; ``v`` need not be unit)."""
    if not np.isfinite(theta):
        raise InvalidArgumentError("theta must be finite")
    a = _unit(v, "rotation axis", DegenerateAxisError)
    c, s = np.cos(theta), np.sin(theta)
    return c * np.eye(3) + (1.0 - c) * np.outer(a, a) + s * skew(a)


def distance_map(d_u: float, d_max: float, mapping: Mapping) -> float:
    mapping = Mapping(mapping)
    if mapping is Mapping.SIN:
        return 0.5 * d_max * (1.0 + np.sin(d_u))
    if mapping is Mapping.SIGMOID:
        # split form avoids overflow for large |d_u|
        if d_u >= 0:
            return d_max / (1.0 + np.exp(-d_u))
        e = np.exp(d_u)
        return d_max * e / (1.0 + e)
    return float(np.clip(d_u, 0.0, d_max))


def distance_preimage(dist: float, d_max: float, mapping: Mapping) -> float:
    """Inverse of :func:`distance_map` for ``dist`` strictly inside (0, d_max)."""
    mapping = Mapping(mapping)
    r = dist / d_max
    if mapping is Mapping.SIN:
        return float(np.arcsin(np.clip(2.0 * r - 1.0, -1.0, 1.0)))
    if mapping is Mapping.SIGMOID:
        return float(np.log(r / (1.0 - r)))
    return float(dist)


def realize_translation(params: TransformParams | AltTransformParams) -> np.ndarray:
    u = _unit(params.u, "translation direction", DegenerateDirectionError)
    return distance_map(params.d_u, params.d_max, params.mapping) * u


def realize_alt_rotation(params: AltRotationParams) -> np.ndarray:
    vals = params.values
    if params.kind is RotationKind.EULER_XYZ:
        return euler_xyz(*vals)
    a1, a2 = vals[:3], vals[3:]
    n1 = np.sqrt(a1 @ a1)
    if n1 == 0.0:
        raise DegenerateFrameError("first 6-D vector has zero norm")
    b1 = a1 / n1
    w = a2 - (b1 @ a2) * b1
    nw = np.sqrt(w @ w)
    if nw <= 1e-12 * max(np.sqrt(a2 @ a2), 1.0):
        raise DegenerateFrameError("6-D vectors are parallel")
    b2 = w / nw
    return np.stack([b1, b2, np.cross(b1, b2)])


def euler_xyz(a: float, b: float, c: float) -> np.ndarray:
    """Extrinsic x-y-z Euler angles: ``Rz(c) @ Ry(b) @ Rx(a)``."""
    ca, sa = np.cos(a), np.sin(a)
    cb, sb = np.cos(b), np.sin(b)
    cc, sc = np.cos(c), np.sin(c)
    Rx = np.array([[1, 0, 0], [0, ca, -sa], [0, sa, ca]])
    Ry = np.array([[cb, 0, sb], [0, 1, 0], [-sb, 0, cb]])
    Rz = np.array([[cc, -sc, 0], [sc, cc, 0], [0, 0, 1]])
    return Rz @ Ry @ Rx


def euler_from_matrix(R: np.ndarray) -> np.ndarray:
    R = np.asarray(R, dtype=np.float64)
    b = np.arcsin(np.clip(-R[2, 0], -1.0, 1.0))
    if abs(R[2, 0]) < 1.0 - 1e-12:
        a = np.arctan2(R[2, 1], R[2, 2])
        c = np.arctan2(R[1, 0], R[0, 0])
    else:
        # gimbal lock: only a -/+ c is determined
        a = 0.0
        c = np.arctan2(-R[0, 1], R[1, 1])
    return np.array([a, b, c])


def sixd_from_matrix(R: np.ndarray) -> np.ndarray:
    R = np.asarray(R, dtype=np.float64)
    return np.concatenate([R[0], R[1]])


def axis_angle_from_matrix(R: np.ndarray) -> tuple[np.ndarray, float]:
    """Unit axis and angle in [0, pi] with ``rodrigues(axis, angle) == R``."""
    R = np.asarray(R, dtype=np.float64)
    c = np.clip(0.5 * (np.trace(R) - 1.0), -1.0, 1.0)
    theta = float(np.arccos(c))
    w = np.array([R[2, 1] - R[1, 2], R[0, 2] - R[2, 0], R[1, 0] - R[0, 1]])
    s = np.sqrt(w @ w)
    if s > 1e-8:
        return w / s, theta
    if theta < 0.5:
        return np.array([0.0, 0.0, 1.0]), theta
    # near pi: axis from the symmetric part, (R + I)/2 = a a^T
    B = 0.5 * (R + np.eye(3))
    k = int(np.argmax(np.diag(B)))
    a = B[:, k] / np.sqrt(max(B[k, k], 1e-300))
    a /= np.linalg.norm(a)
    if s > 0 and a @ w < 0:
        a = -a
    return a, theta


def realize_transform(params: TransformParams | AltTransformParams) -> RigidTransform:
    if isinstance(params, AltTransformParams):
        R = realize_alt_rotation(params.rotation)
    else:
        R = rodrigues(params.v, params.theta)
    return RigidTransform(R, realize_translation(params))


def apply_transform(cloud: PointCloud, t: RigidTransform) -> PointCloud:
    """Map every point ``p`` to ``R p + T``, preserving order."""
    if np.array_equal(t.R, np.eye(3)) and not np.any(t.T):
        return PointCloud(cloud.points.copy())
    return PointCloud(cloud.points @ t.R.T + t.T)


def random_rotation(rng: np.random.Generator, max_angle: float = np.pi) -> np.ndarray:
    """Axis uniform on the sphere, angle uniform in [0, max_angle]."""
    axis = rng.normal(size=3)
    while not np.any(axis):
        axis = rng.normal(size=3)
    return rodrigues(axis, rng.uniform(0.0, max_angle))
