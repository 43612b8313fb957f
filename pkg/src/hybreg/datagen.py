"""Synthetic partial-to-partial registration pairs.

Each pair takes two independent surface samplings of one parametric shape,
crops each to a single-view partial cloud by directional culling, checks
their overlap, and moves the second crop by a random ground-truth transform.
Rotation levels mimic the benchmark protocol: restricted pairs rotate by at
most 45 degrees, unrestricted ones by up to 180 degrees.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

from .errors import GenerationFailedError, InvalidArgumentError
from .geometry import PointCloud, RigidTransform, apply_transform, rodrigues
from .nn_index import build_index


class Shape(str, enum.Enum):
    SPHERE = "sphere"
    BOX = "box"
    CYLINDER = "cylinder"
    TORUS = "torus"
    COMPOSITE = "composite"


class RotLevel(str, enum.Enum):
    RESTRICTED = "restricted"
    UNRESTRICTED = "unrestricted"

    @property
    def max_angle(self) -> float:
        return np.pi / 4 if self is RotLevel.RESTRICTED else np.pi


@dataclass(frozen=True)
class PairSpec:
    shape: Shape = Shape.COMPOSITE
    n_points: int = 2048
    rot_level: RotLevel = RotLevel.RESTRICTED
    min_overlap: float = 0.5
    seed: int = 0
    keep_fraction: float = 0.6
    view_sep_deg: tuple = (10.0, 60.0)
    overlap_eps: float = 0.05
    d_max: float = 0.5
    noise: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "shape", Shape(self.shape))
        object.__setattr__(self, "rot_level", RotLevel(self.rot_level))
        if self.n_points < 32:
            raise InvalidArgumentError("n_points must be at least 32")
        if not (0.0 <= self.min_overlap <= 1.0):
            raise InvalidArgumentError("min_overlap must lie in [0, 1]")
        if not (0.0 < self.keep_fraction <= 1.0):
            raise InvalidArgumentError("keep_fraction must lie in (0, 1]")
        if self.overlap_eps <= 0 or self.d_max <= 0:
            raise InvalidArgumentError("overlap_eps and d_max must be positive")


@dataclass(frozen=True)
class LabeledPair:
    source: PointCloud
    target: PointCloud
    gt: RigidTransform
    overlap: float
    rot_level: RotLevel


# -- shape samplers ---------------------------------------------------------------

def _unit_vectors(rng, n):
    v = rng.normal(size=(n, 3))
    return v / np.linalg.norm(v, axis=1, keepdims=True)


def _sample_box(rng, n, ext, center=np.zeros(3)):
    ext = np.asarray(ext, dtype=np.float64)
    areas = np.array([ext[1] * ext[2], ext[0] * ext[2], ext[0] * ext[1]] * 2)
    face = rng.choice(6, size=n, p=areas / areas.sum())
    pts = rng.uniform(-1.0, 1.0, size=(n, 3)) * ext
    axis = face % 3
    sign = np.where(face < 3, 1.0, -1.0)
    pts[np.arange(n), axis] = sign * ext[axis]
    return pts + center


def _sample_cylinder(rng, n, radius, half_h):
    side = 2 * np.pi * radius * 2 * half_h
    cap = np.pi * radius ** 2
    part = rng.choice(3, size=n, p=np.array([side, cap, cap]) / (side + 2 * cap))
    phi = rng.uniform(0, 2 * np.pi, size=n)
    rr = np.where(part == 0, radius, radius * np.sqrt(rng.uniform(size=n)))
    z = np.where(part == 0, rng.uniform(-half_h, half_h, size=n),
                 np.where(part == 1, half_h, -half_h))
    return np.stack([rr * np.cos(phi), rr * np.sin(phi), z], axis=1)


def _sample_torus(rng, n, major, minor):
    out = np.empty((0, 3))
    while out.shape[0] < n:
        m = 2 * (n - out.shape[0]) + 16
        u = rng.uniform(0, 2 * np.pi, size=m)
        v = rng.uniform(0, 2 * np.pi, size=m)
        # area element is proportional to major + minor cos(v)
        ok = rng.uniform(size=m) * (major + minor) <= major + minor * np.cos(v)
        u, v = u[ok], v[ok]
        w = major + minor * np.cos(v)
        pts = np.stack([w * np.cos(u), w * np.sin(u), minor * np.sin(v)], axis=1)
        out = np.concatenate([out, pts])
    return out[:n]


def _sample_ellipsoid(rng, n, axes, center):
    # approximate area weighting by rejection on the surface scale factor
    axes = np.asarray(axes, dtype=np.float64)
    out = np.empty((0, 3))
    while out.shape[0] < n:
        m = 2 * (n - out.shape[0]) + 16
        d = _unit_vectors(rng, m)
        p = d * axes
        g = np.linalg.norm(d * (axes.prod() / axes), axis=1)
        ok = rng.uniform(size=m) * g.max() <= g
        out = np.concatenate([out, p[ok]])
    return out[:n] + center


class _CompositeShape:
    """Random asymmetric assembly of an ellipsoid body, a box and a cylinder arm."""

    def __init__(self, rng):
        self.body = rng.uniform([0.5, 0.3, 0.25], [0.8, 0.5, 0.4])
        self.box_ext = rng.uniform([0.12, 0.12, 0.08], [0.3, 0.25, 0.2])
        d = _unit_vectors(rng, 1)[0]
        self.box_c = d * self.body * 0.9
        self.arm_r = rng.uniform(0.06, 0.12)
        self.arm_h = rng.uniform(0.2, 0.35)
        d2 = _unit_vectors(rng, 1)[0]
        if d2 @ d > 0.3:
            d2 = -d2
        self.arm_dir = d2
        self.arm_c = d2 * self.body * 0.85
        self.knob_c = _unit_vectors(rng, 1)[0] * self.body * 0.8
        self.knob_axes = rng.uniform(0.08, 0.16, size=3)
        self.center = None
        self.scale = None

    def _raw(self, rng, n):
        w = np.array([3.0, 1.2, 1.0, 0.5])
        counts = rng.multinomial(n, w / w.sum())
        body = _sample_ellipsoid(rng, counts[0], self.body, np.zeros(3))
        box = _sample_box(rng, counts[1], self.box_ext, self.box_c)
        cyl = _sample_cylinder(rng, counts[2], self.arm_r, self.arm_h)
        # orient the cylinder axis along arm_dir
        z = np.array([0.0, 0.0, 1.0])
        axis = np.cross(z, self.arm_dir)
        if np.linalg.norm(axis) > 1e-9:
            ang = math.acos(float(np.clip(z @ self.arm_dir, -1, 1)))
            cyl = cyl @ rodrigues(axis, ang).T
        cyl = cyl + self.arm_c + self.arm_dir * self.arm_h
        knob = _sample_ellipsoid(rng, counts[3], self.knob_axes, self.knob_c)
        return np.concatenate([body, box, cyl, knob])

    def sample(self, rng, n):
        pts = self._raw(rng, n)
        if self.center is None:
            # frame fixed from a dense reference sampling so repeated scans agree
            ref = self._raw(np.random.default_rng(12345), 20000)
            self.center = 0.5 * (ref.min(axis=0) + ref.max(axis=0))
            self.scale = 1.0 / np.max(np.linalg.norm(ref - self.center, axis=1))
        return (pts - self.center) * self.scale


def _shape_sampler(shape: Shape, rng):
    """Return ``sample(rng, n)`` for a shape whose parameters are drawn from ``rng``."""
    if shape is Shape.SPHERE:
        return lambda r, n: _unit_vectors(r, n)
    if shape is Shape.BOX:
        ext = np.array([1.0, 0.7, 0.45])
        ext = ext / np.linalg.norm(ext)
        return lambda r, n: _sample_box(r, n, ext)
    if shape is Shape.CYLINDER:
        radius, half_h = 0.6, 0.8
        s = 1.0 / math.hypot(radius, half_h)
        return lambda r, n: _sample_cylinder(r, n, radius * s, half_h * s)
    if shape is Shape.TORUS:
        return lambda r, n: _sample_torus(r, n, 0.7, 0.3)
    comp = _CompositeShape(rng)
    return comp.sample


def sample_shape(spec: PairSpec) -> PointCloud:
    """``spec.n_points`` surface samples inside the unit sphere, deterministic per seed."""
    rng = np.random.default_rng(spec.seed)
    sampler = _shape_sampler(spec.shape, rng)
    return PointCloud(sampler(rng, spec.n_points))


def _crop(points: np.ndarray, view_dir: np.ndarray, n_keep: int) -> np.ndarray:
    score = points @ view_dir
    # stable: ties keep the lower index
    order = np.argsort(-score, kind="stable")[:n_keep]
    return points[np.sort(order)]


def partial_view(cloud: PointCloud, view_dir, keep_fraction: float) -> PointCloud:
    """Keep the ``ceil(keep_fraction * n)`` points furthest along ``view_dir``."""
    if not (0.0 < keep_fraction <= 1.0):
        raise InvalidArgumentError("keep_fraction must lie in (0, 1]")
    d = np.asarray(view_dir, dtype=np.float64)
    nd = np.linalg.norm(d)
    if d.shape != (3,) or not nd > 0:
        raise InvalidArgumentError("view_dir must be a non-zero 3-vector")
    n_keep = max(1, min(cloud.count, math.ceil(keep_fraction * cloud.count - 1e-9)))
    if n_keep == cloud.count:
        return PointCloud(cloud.points.copy())
    return PointCloud(_crop(cloud.points, d / nd, n_keep))


def overlap_rate(a: PointCloud, b: PointCloud, eps: float) -> float:
    """Fraction of ``a``'s points within ``eps`` of their nearest neighbour in ``b``."""
    if not eps > 0:
        raise InvalidArgumentError("eps must be positive")
    _, d = build_index(b).query(a.points)
    return float(np.count_nonzero(d <= eps * eps)) / a.count


def _rotate_dir(rng, d, angle):
    perp = np.cross(d, _unit_vectors(rng, 1)[0])
    while np.linalg.norm(perp) < 1e-6:
        perp = np.cross(d, _unit_vectors(rng, 1)[0])
    return rodrigues(perp, angle) @ d


def random_gt(rng, rot_level: RotLevel, d_max: float) -> RigidTransform:
    axis = _unit_vectors(rng, 1)[0]
    R = rodrigues(axis, rng.uniform(0.0, rot_level.max_angle))
    # uniform in the ball of radius 0.8 * d_max
    T = _unit_vectors(rng, 1)[0] * 0.8 * d_max * rng.uniform() ** (1.0 / 3.0)
    return RigidTransform(R, T)


def generate_pair(spec: PairSpec, max_attempts: int = 100) -> LabeledPair:
    rng = np.random.default_rng(spec.seed)
    sampler = _shape_sampler(spec.shape, rng)
    n_dense = math.ceil(spec.n_points / spec.keep_fraction)
    gt = random_gt(rng, spec.rot_level, spec.d_max)
    best = 0.0
    for _ in range(max_attempts):
        scan_a = sampler(rng, n_dense)
        scan_b = sampler(rng, n_dense)
        if spec.noise > 0:
            scan_a = scan_a + rng.normal(scale=spec.noise, size=scan_a.shape)
            scan_b = scan_b + rng.normal(scale=spec.noise, size=scan_b.shape)
        view_a = _unit_vectors(rng, 1)[0]
        sep = np.deg2rad(rng.uniform(*spec.view_sep_deg))
        view_b = _rotate_dir(rng, view_a, sep)
        src = PointCloud(_crop(scan_a, view_a, spec.n_points))
        other = PointCloud(_crop(scan_b, view_b, spec.n_points))
        ov = min(overlap_rate(src, other, spec.overlap_eps),
                 overlap_rate(other, src, spec.overlap_eps))
        best = max(best, ov)
        if ov >= spec.min_overlap:
            target = apply_transform(other, gt)
            return LabeledPair(src, target, gt, ov, spec.rot_level)
    raise GenerationFailedError(
        f"overlap {spec.min_overlap} not reached in {max_attempts} attempts (best {best:.3f})")


def generate_copy_pair(spec: PairSpec) -> LabeledPair:
    """Full-overlap pair: the target is the ground truth applied to the source itself."""
    rng = np.random.default_rng(spec.seed)
    sampler = _shape_sampler(spec.shape, rng)
    gt = random_gt(rng, spec.rot_level, spec.d_max)
    src = PointCloud(sampler(rng, spec.n_points))
    return LabeledPair(src, apply_transform(src, gt), gt, 1.0, spec.rot_level)


def rotation_levels(n_pairs: int, ratio=(4, 1), seed: int = 0) -> list:
    """Restricted/unrestricted labels in the given ratio, shuffled deterministically."""
    a, b = ratio
    n_restricted = int(round(n_pairs * a / (a + b)))
    levels = [RotLevel.RESTRICTED] * n_restricted + [RotLevel.UNRESTRICTED] * (n_pairs - n_restricted)
    order = np.random.default_rng(seed).permutation(n_pairs)
    return [levels[i] for i in order]


def pair_seed(seed: int, index: int) -> int:
    return int(np.random.SeedSequence([seed, index]).generate_state(1, dtype=np.uint64)[0] >> 1)


def generate_dataset(n_pairs: int, seed: int = 0, ratio=(4, 1), shapes=(Shape.COMPOSITE,),
                     levels=None, copy_target: bool = False, **spec_kwargs) -> list:
    """``n_pairs`` labeled pairs; ``levels`` overrides the ratio-based level schedule.

    ``copy_target=True`` builds full-overlap pairs with :func:`generate_copy_pair`.
    """
    if n_pairs < 1:
        raise InvalidArgumentError("n_pairs must be positive")
    if levels is None:
        levels = rotation_levels(n_pairs, ratio, seed)
    shapes = [Shape(s) for s in shapes]
    pairs = []
    for i in range(n_pairs):
        spec = PairSpec(shape=shapes[i % len(shapes)], rot_level=levels[i],
                        seed=pair_seed(seed, i), **spec_kwargs)
        pairs.append(generate_copy_pair(spec) if copy_target else generate_pair(spec))
    return pairs
