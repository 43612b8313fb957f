"""Registration and point-set evaluation metrics.

Rotation error is the geodesic angle between ground truth and prediction in
degrees, translation error the Euclidean distance, and the combined error is
translation error plus rotation error in radians.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .errors import InvalidArgumentError
from .geometry import PointCloud, RigidTransform, apply_transform, check_rotation
from .nn_index import build_index
from .objective import chamfer

ROTATION_CHECK_TOL = 1e-6


@dataclass(frozen=True)
class PairEvaluation:
    rot_error_deg: float
    trans_error: float
    mse: float
    cd: float
    fscore: float

    def as_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class Summary:
    count: int
    mean: dict
    median: dict
    recall: float
    recall_rot_deg: float
    recall_trans: float

    def as_dict(self) -> dict:
        return asdict(self)


def rotation_error(R_gt, R_pred) -> float:
    R_gt = np.asarray(R_gt, dtype=np.float64)
    R_pred = np.asarray(R_pred, dtype=np.float64)
    for R in (R_gt, R_pred):
        if R.shape != (3, 3) or not np.all(np.isfinite(R)):
            raise InvalidArgumentError("rotations must be finite 3x3 matrices")
        check_rotation(R, ROTATION_CHECK_TOL)
    # inverse of a rotation is its transpose
    rel = R_gt.T @ R_pred
    c = 0.5 * (np.trace(rel) - 1.0)
    # sin of the angle from the antisymmetric part; atan2 stays accurate near 0 and 180 degrees
    w = np.array([rel[2, 1] - rel[1, 2], rel[0, 2] - rel[2, 0], rel[1, 0] - rel[0, 1]])
    s = 0.5 * float(np.sqrt(w @ w))
    return float(np.rad2deg(np.arctan2(s, c)))


def translation_error(t_gt, t_pred) -> float:
    d = np.asarray(t_gt, dtype=np.float64) - np.asarray(t_pred, dtype=np.float64)
    return float(np.sqrt(d @ d))


def mse_error(rot_error_deg: float, trans_error: float) -> float:
    if rot_error_deg < 0 or trans_error < 0:
        raise InvalidArgumentError("errors must be non-negative")
    return float(trans_error + np.deg2rad(rot_error_deg))


def fscore(P, Q, threshold: float) -> float:
    """Harmonic mean of precision (P near Q) and recall (Q near P) at ``threshold``."""
    if not threshold > 0:
        raise InvalidArgumentError("threshold must be positive")
    P = P if isinstance(P, PointCloud) else PointCloud(P)
    Q = Q if isinstance(Q, PointCloud) else PointCloud(Q)
    t2 = threshold * threshold
    precision = np.count_nonzero(build_index(Q).query(P.points)[1] <= t2) / P.count
    recall = np.count_nonzero(build_index(P).query(Q.points)[1] <= t2) / Q.count
    if precision + recall == 0:
        return 0.0
    return float(2.0 * precision * recall / (precision + recall))


def bbox_diagonal(*clouds: PointCloud) -> float:
    pts = np.concatenate([c.points for c in clouds])
    return float(np.linalg.norm(pts.max(axis=0) - pts.min(axis=0)))


def evaluate_pair(pred: RigidTransform, gt: RigidTransform, source: PointCloud,
                  fscore_fraction: float = 0.01) -> PairEvaluation:
    """All metrics for one prediction.

    ``pred`` may be a :class:`RigidTransform` or anything with a ``transform``
    attribute (e.g. a registration result). Chamfer distance and F-score
    compare the source moved by the ground truth with the source moved by
    the prediction; the F-score threshold is ``fscore_fraction`` times their
    joint bounding-box diagonal.
    """
    pred_t = getattr(pred, "transform", pred)
    rot = rotation_error(gt.R, pred_t.R)
    trans = translation_error(gt.T, pred_t.T)
    a = apply_transform(source, gt)
    b = apply_transform(source, pred_t)
    diag = bbox_diagonal(a, b)
    fs = fscore(a, b, fscore_fraction * diag) if diag > 0 else 1.0
    return PairEvaluation(rot, trans, mse_error(rot, trans), float(chamfer(a, b)), fs)


_FIELDS = ("rot_error_deg", "trans_error", "mse", "cd", "fscore")


def lower_median(values) -> float:
    s = sorted(values)
    return float(s[(len(s) - 1) // 2])


def aggregate(evals, recall_rot_deg: float = 5.0, recall_trans: float = 0.05) -> Summary:
    evals = list(evals)
    if not evals:
        raise InvalidArgumentError("cannot aggregate an empty evaluation list")
    mean, median = {}, {}
    for f in _FIELDS:
        vals = [float(getattr(e, f)) for e in evals]
        mean[f] = float(sum(vals) / len(vals))
        median[f] = lower_median(vals)
    hits = sum(1 for e in evals if e.rot_error_deg < recall_rot_deg and e.trans_error < recall_trans)
    return Summary(len(evals), mean, median, hits / len(evals), float(recall_rot_deg),
                   float(recall_trans))
