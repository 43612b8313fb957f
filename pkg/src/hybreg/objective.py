"""Chamfer-distance objectives and their gradients.

``chamfer`` is the symmetric mean of squared nearest-neighbour distances.
``local_chamfer`` keeps, on each side, only the ``ceil(alpha * n)`` points
with the smallest residuals. ``projected_chamfer`` repeats the symmetric
distance on a coordinate-plane projection of both clouds. The registration
objective is::

    local_chamfer(P, Q, alpha) + beta * (xy + yz + xz)

where ``P`` is the transformed source. Gradients follow the fixed
correspondence convention: matches and trim sets are recomputed at the
current parameters, then held fixed while differentiating.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _kernels as K
from .errors import InvalidArgumentError
from .geometry import (
    AltTransformParams,
    Mapping,
    Plane,
    PointCloud,
    RotationKind,
    TransformParams,
)
from .nn_index import SpatialIndex, build_index

_MAPPING_CODE = {Mapping.SIGMOID: K.SIGMOID, Mapping.SIN: K.SIN, Mapping.CLAMP: K.CLAMP}
_PLANE_ROW = {Plane.XY: 1, Plane.YZ: 2, Plane.XZ: 3}


@dataclass(frozen=True)
class ObjectiveConfig:
    alpha: float = 0.7
    beta: float = 0.02
    mapping: Mapping = Mapping.SIN
    d_max: float = 0.5

    def __post_init__(self):
        object.__setattr__(self, "mapping", Mapping(self.mapping))
        if not (0.0 < self.alpha <= 1.0):
            raise InvalidArgumentError(f"alpha must lie in (0, 1], got {self.alpha}")
        if not (self.beta >= 0.0 and np.isfinite(self.beta)):
            raise InvalidArgumentError(f"beta must be non-negative, got {self.beta}")
        if not (self.d_max > 0.0 and np.isfinite(self.d_max)):
            raise InvalidArgumentError(f"d_max must be positive, got {self.d_max}")


@dataclass(frozen=True)
class LossBreakdown:
    local_cd: float
    proj_xy: float
    proj_yz: float
    proj_xz: float
    total: float

    @classmethod
    def from_parts(cls, parts) -> "LossBreakdown":
        return cls(*(float(p) for p in parts))


def _cloud(c) -> PointCloud:
    return c if isinstance(c, PointCloud) else PointCloud(c)


def _index(c) -> SpatialIndex:
    return c if isinstance(c, SpatialIndex) else build_index(_cloud(c))


def _directed(P: PointCloud, Q: PointCloud, plane: Plane | None):
    """Squared NN distances P->Q and Q->P."""
    d_pq = build_index(Q).query(P.points, plane)[1]
    d_qp = build_index(P).query(Q.points, plane)[1]
    return d_pq, d_qp


def chamfer(P, Q) -> float:
    P, Q = _cloud(P), _cloud(Q)
    d_pq, d_qp = _directed(P, Q, None)
    return K.seq_sum(d_pq) / P.count + K.seq_sum(d_qp) / Q.count


def local_chamfer(P, Q, alpha: float) -> float:
    if not (0.0 < alpha <= 1.0):
        raise InvalidArgumentError(f"alpha must lie in (0, 1], got {alpha}")
    P, Q = _cloud(P), _cloud(Q)
    d_pq, d_qp = _directed(P, Q, None)
    mp, kp = K.trim_mask(d_pq, alpha)
    mq, kq = K.trim_mask(d_qp, alpha)
    return K.masked_sum(d_pq, mp) / kp + K.masked_sum(d_qp, mq) / kq


def projected_chamfer(P, Q, plane: Plane) -> float:
    P, Q = _cloud(P), _cloud(Q)
    d_pq, d_qp = _directed(P, Q, Plane(plane))
    return K.seq_sum(d_pq) / P.count + K.seq_sum(d_qp) / Q.count


# -- parameter plumbing ---------------------------------------------------------

def encode_params(params) -> tuple[int, np.ndarray]:
    """Kernel ``(kind, vector)`` for hybrid or baseline parameters."""
    if isinstance(params, TransformParams):
        return K.HYBRID, params.vector()
    if isinstance(params, AltTransformParams):
        kind = K.EULER if params.rotation.kind is RotationKind.EULER_XYZ else K.SIXD
        return kind, params.vector()
    raise InvalidArgumentError(f"unsupported parameter type {type(params).__name__}")


def _check_realizable(params) -> None:
    # raises the geometry module's degenerate-axis/direction/frame errors
    from .geometry import realize_transform

    realize_transform(params)


def target_trees(target: SpatialIndex) -> tuple:
    """Kernel tree bundle (3D, xy, yz, xz) of an index."""
    return (target.tree, target.planar[Plane.XY], target.planar[Plane.YZ], target.planar[Plane.XZ])


def _evaluate(params, source, target, cfg: ObjectiveConfig, want_grad: bool):
    if not isinstance(cfg, ObjectiveConfig):
        raise InvalidArgumentError("cfg must be an ObjectiveConfig")
    _check_realizable(params)
    source = _cloud(source)
    index = _index(target)
    kind, x = encode_params(params)
    parts, g = K.evaluate(kind, x, source.points, index.source.points, target_trees(index),
                          True, cfg.alpha, cfg.beta, params.d_max,
                          _MAPPING_CODE[params.mapping], want_grad)
    return parts, g


def total_loss(params, source, target, cfg: ObjectiveConfig) -> LossBreakdown:
    """Objective of ``transform(source)`` against ``target`` (cloud or prebuilt index).

    The transformed source is re-indexed on every call. ``params.d_max`` and
    ``params.mapping`` govern the translation; ``cfg`` supplies alpha/beta.
    """
    parts, _ = _evaluate(params, source, target, cfg, False)
    return LossBreakdown.from_parts(parts)


def gradient(params, source, target, cfg: ObjectiveConfig) -> tuple[np.ndarray, LossBreakdown]:
    """Fixed-correspondence gradient over the flat parameter vector, plus the loss.

    For :class:`TransformParams` the layout is ``(v0, v1, v2, theta, u0, u1,
    u2, d_u)``; baseline parameters put their rotation block first and the
    same four translation entries last.
    """
    parts, g = _evaluate(params, source, target, cfg, True)
    return g, LossBreakdown.from_parts(parts)


@dataclass(frozen=True)
class Correspondences:
    """Frozen matches and trim sets, for differentiating a fixed association."""

    fwd: np.ndarray
    rev: np.ndarray
    keep_source: np.ndarray
    keep_target: np.ndarray


def correspondences(params, source, target, cfg: ObjectiveConfig) -> Correspondences:
    source, index = _cloud(source), _index(target)
    kind, x = encode_params(params)
    mapping = _MAPPING_CODE[params.mapping]
    R, T = K.params_to_RT(kind, x, params.d_max, mapping)
    X = K.transform_points(source.points, R, T)
    fi, fd, ri, rd = K.correspond_tree(X, index.source.points, target_trees(index))
    mp, _ = K.trim_mask(fd[0], cfg.alpha)
    mq, _ = K.trim_mask(rd[0], cfg.alpha)
    return Correspondences(fi, ri, mp, mq)


def frozen_loss(params, source, target, cfg: ObjectiveConfig, corr: Correspondences) -> float:
    source, index = _cloud(source), _index(target)
    kind, x = encode_params(params)
    return float(K.frozen_loss(kind, x, source.points, index.source.points, corr.fwd, corr.rev,
                               cfg.alpha, cfg.beta, params.d_max, _MAPPING_CODE[params.mapping],
                               corr.keep_source, corr.keep_target))
