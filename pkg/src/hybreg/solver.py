"""Multi-start registration with angle-interval escalation.

Starts are a product (or cyclic pairing) of near-uniform rotation axes and
evenly spaced angles inside one interval. Every start is optimized with a
safeguarded first-order method; the lowest loss wins. When the best loss of
an interval is above the threshold, the next angle interval is tried.

Desk-scale execution runs in two stages per interval: all starts are
screened on a random subsample of both clouds, with successive pruning of the
worst starts, and the best few are then refined on a larger subsample and
scored on the full clouds. The overall winner gets a short final polish on
the full clouds.
"""

from __future__ import annotations

import enum
import logging
import time
from dataclasses import dataclass, field, replace

import numpy as np

from . import _kernels as K
from .errors import InvalidArgumentError, RegistrationFailedError
from .geometry import (
    AltRotationParams,
    AltTransformParams,
    PointCloud,
    RigidTransform,
    RotationKind,
    TransformParams,
    distance_preimage,
    euler_from_matrix,
    realize_transform,
    rodrigues,
    sixd_from_matrix,
)
from .nn_index import build_index
from .objective import _MAPPING_CODE, ObjectiveConfig, target_trees, total_loss

log = logging.getLogger(__name__)

DEFAULT_INTERVALS = (
    (0.0, np.pi / 4),
    (np.pi / 4, np.pi / 2),
    (np.pi / 2, 3 * np.pi / 4),
    (3 * np.pi / 4, np.pi),
)

# brute-force correspondences beat tree queries below this many point pairs
_BRUTE_PAIRS = 1200 * 1200


class Combination(str, enum.Enum):
    PRODUCT = "product"
    PAIRED = "paired"


class Optimizer(str, enum.Enum):
    PLAIN_GD = "gd"
    ADAPTIVE = "adaptive"


class Parameterization(str, enum.Enum):
    HYBRID = "hybrid"
    EULER = "euler"
    SIXD = "sixd"


_KIND = {Parameterization.HYBRID: K.HYBRID, Parameterization.EULER: K.EULER,
         Parameterization.SIXD: K.SIXD}
_OPT = {Optimizer.PLAIN_GD: K.PLAIN_GD, Optimizer.ADAPTIVE: K.ADAPTIVE}


@dataclass(frozen=True)
class SolverConfig:
    """Multi-start solver settings.

    ``loss_threshold=None`` derives a per-pair threshold: ``threshold_factor``
    times the objective of the target against itself rotated by
    ``threshold_perturb_deg`` about its centroid. ``escalate=False`` runs only
    the first angle interval. ``screen_points=None`` screens on the full
    clouds; ``refine_top=None`` refines every screened start; an empty
    ``prune`` schedule disables pruning.
    """

    n_directions: int = 64
    n_angles: int = 64
    combination: Combination = Combination.PRODUCT
    angle_intervals: tuple = DEFAULT_INTERVALS
    loss_threshold: float | None = None
    threshold_factor: float = 4.0
    threshold_perturb_deg: float = 2.0
    escalate: bool = True
    max_iters: int = 150
    step_size: float = 0.05
    optimizer: Optimizer = Optimizer.ADAPTIVE
    parameterization: Parameterization = Parameterization.HYBRID
    seed: int = 0
    screen_points: int | None = 96
    prune: tuple = ((15, 64), (40, 16))
    refine_top: int | None = 3
    refine_iters: int = 60
    refine_step: float = 0.01
    refine_points: int | None = 768
    polish_iters: int = 40
    polish_step: float = 0.002
    tol: float = 1e-5
    patience: int = 15
    gtol: float = 1e-12
    max_halvings: int = 10
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8

    def __post_init__(self):
        for name, enum_t in (("combination", Combination), ("optimizer", Optimizer),
                             ("parameterization", Parameterization)):
            object.__setattr__(self, name, enum_t(getattr(self, name)))
        ivs = tuple((float(lo), float(hi)) for lo, hi in self.angle_intervals)
        object.__setattr__(self, "angle_intervals", ivs)
        object.__setattr__(self, "prune", tuple((int(a), int(b)) for a, b in self.prune))
        validate_intervals(ivs)
        if self.n_directions < 1 or self.n_angles < 1:
            raise InvalidArgumentError("n_directions and n_angles must be positive")
        if self.max_iters < 1:
            raise InvalidArgumentError("max_iters must be positive")
        if not self.step_size > 0:
            raise InvalidArgumentError("step_size must be positive")
        if self.loss_threshold is not None and not self.loss_threshold > 0:
            raise InvalidArgumentError("loss_threshold must be positive")
        if self.screen_points is not None and self.screen_points < 1:
            raise InvalidArgumentError("screen_points must be positive")
        if self.refine_top is not None and self.refine_top < 1:
            raise InvalidArgumentError("refine_top must be positive")
        if self.refine_iters < 0 or not self.refine_step > 0:
            raise InvalidArgumentError("refine_iters must be >= 0 and refine_step > 0")
        if self.polish_iters < 0 or not self.polish_step > 0:
            raise InvalidArgumentError("polish_iters must be >= 0 and polish_step > 0")
        if self.max_halvings < 0:
            raise InvalidArgumentError("max_halvings must be >= 0")
        for it, keep in self.prune:
            if it < 1 or keep < 1:
                raise InvalidArgumentError("prune entries must be positive (iteration, keep)")

    @classmethod
    def desk(cls, **overrides) -> "SolverConfig":
        """32 directions x 16 angles, the laptop-sized default."""
        return cls(**{"n_directions": 32, "n_angles": 16, **overrides})

    def replace(self, **changes) -> "SolverConfig":
        return replace(self, **changes)

    @property
    def starts_per_interval(self) -> int:
        if self.combination is Combination.PRODUCT:
            return self.n_directions * self.n_angles
        return max(self.n_directions, self.n_angles)


def validate_intervals(intervals) -> None:
    if not intervals:
        raise InvalidArgumentError("at least one angle interval is required")
    prev_hi = 0.0
    for k, (lo, hi) in enumerate(intervals):
        if not hi > lo:
            raise InvalidArgumentError(f"angle interval {k} is empty: ({lo}, {hi})")
        if abs(lo - prev_hi) > 1e-12:
            raise InvalidArgumentError("angle intervals must be ascending, disjoint and contiguous from 0")
        prev_hi = hi
    if abs(prev_hi - np.pi) > 1e-12:
        raise InvalidArgumentError("angle intervals must cover [0, pi]")


@dataclass
class RegistrationResult:
    transform: RigidTransform
    params: TransformParams | AltTransformParams
    final_loss: float
    restarts_used: int
    intervals_visited: int
    per_restart_losses: list
    wall_time: float
    combination: Combination = Combination.PRODUCT
    loss_threshold: float = float("nan")
    interval_best: list = field(default_factory=list)
    interval_params: list = field(default_factory=list)
    failed_starts: int = 0


def fibonacci_directions(n: int, seed: int) -> np.ndarray:
    """``n`` unit vectors on a Fibonacci spiral, rotated by a seeded random rotation."""
    i = np.arange(n, dtype=np.float64)
    z = 1.0 - (2.0 * i + 1.0) / n
    r = np.sqrt(np.maximum(0.0, 1.0 - z * z))
    phi = i * np.pi * (3.0 - np.sqrt(5.0))
    pts = np.stack([r * np.cos(phi), r * np.sin(phi), z], axis=1)
    rng = np.random.default_rng(seed)
    axis = rng.normal(size=3)
    R = rodrigues(axis, rng.uniform(0.0, np.pi))
    out = pts @ R.T
    return out / np.linalg.norm(out, axis=1, keepdims=True)


def interval_angles(n: int, lo: float, hi: float) -> np.ndarray:
    # cell centres: no duplicate angle across adjacent intervals, no wasted theta=0
    return lo + (np.arange(n) + 0.5) * (hi - lo) / n


def init_grid(cfg: SolverConfig, interval, source: PointCloud | None = None,
              target: PointCloud | None = None, obj_cfg: ObjectiveConfig | None = None) -> list:
    """Starting parameters for one angle interval.

    Translations start along the centroid offset between the target and the
    rotated source, at that distance clamped to [0.05, 0.95] * d_max. Without
    clouds the translation starts at 0.05 * d_max along +x.
    """
    lo, hi = float(interval[0]), float(interval[1])
    if not (np.isfinite(lo) and np.isfinite(hi)) or hi < lo:
        raise InvalidArgumentError(f"invalid angle interval ({lo}, {hi})")
    obj_cfg = obj_cfg or ObjectiveConfig()
    d_max, mapping = obj_cfg.d_max, obj_cfg.mapping
    dirs = fibonacci_directions(cfg.n_directions, cfg.seed)
    angles = interval_angles(cfg.n_angles, lo, hi)
    if cfg.combination is Combination.PRODUCT:
        combos = [(d, a) for d in range(len(dirs)) for a in range(len(angles))]
    else:
        m = max(len(dirs), len(angles))
        combos = [(k % len(dirs), k % len(angles)) for k in range(m)]

    cs = source.centroid() if source is not None else None
    ct = target.centroid() if target is not None else None
    starts = []
    for di, ai in combos:
        v, theta = dirs[di], float(angles[ai])
        R = rodrigues(v, theta)
        if cs is not None and ct is not None:
            off = ct - R @ cs
        else:
            off = np.zeros(3)
        dist = float(np.linalg.norm(off))
        u = off / dist if dist > 0 else np.array([1.0, 0.0, 0.0])
        dist = float(np.clip(dist, 0.05 * d_max, 0.95 * d_max))
        d_u = distance_preimage(dist, d_max, mapping)
        if cfg.parameterization is Parameterization.HYBRID:
            starts.append(TransformParams(v, theta, u, d_u, d_max, mapping))
        elif cfg.parameterization is Parameterization.EULER:
            rot = AltRotationParams(RotationKind.EULER_XYZ, euler_from_matrix(R))
            starts.append(AltTransformParams(rot, u, d_u, d_max, mapping))
        else:
            rot = AltRotationParams(RotationKind.SIX_D, sixd_from_matrix(R))
            starts.append(AltTransformParams(rot, u, d_u, d_max, mapping))
    return starts


def _decode(kind: int, x: np.ndarray, d_max: float, mapping) -> TransformParams | AltTransformParams:
    if kind == K.HYBRID:
        return TransformParams.from_vector(x, d_max, mapping)
    rk = RotationKind.EULER_XYZ if kind == K.EULER else RotationKind.SIX_D
    r = K.param_dim(kind) - 4
    return AltTransformParams(AltRotationParams(rk, x[:r]), x[r:r + 3], x[r + 3], d_max, mapping)


def _subsample(points: np.ndarray, n: int | None, rng: np.random.Generator) -> np.ndarray:
    if n is None or points.shape[0] <= n:
        return np.ascontiguousarray(points)
    idx = np.sort(rng.choice(points.shape[0], size=n, replace=False))
    return np.ascontiguousarray(points[idx])


class _Problem:
    """Clouds and kernel settings for one optimization resolution."""

    def __init__(self, src: np.ndarray, tgt: np.ndarray, trees, obj_cfg: ObjectiveConfig,
                 cfg: SolverConfig, kind: int):
        self.src = src
        self.tgt = tgt
        self.trees = trees if trees is not None else K.build_trees(tgt)
        self.use_tree = src.shape[0] * tgt.shape[0] > _BRUTE_PAIRS
        self.obj = obj_cfg
        self.cfg = cfg
        self.kind = kind
        self.mapping = _MAPPING_CODE[obj_cfg.mapping]

    def init(self, X0: np.ndarray, lr: float, max_iters: int):
        o = self.obj
        return K.init_state(self.kind, X0, self.src, self.tgt, self.trees, self.use_tree,
                            o.alpha, o.beta, o.d_max, self.mapping, lr, max_iters)

    def advance(self, state, active: np.ndarray, n_steps: int, max_iters: int) -> None:
        o, c = self.obj, self.cfg
        K.advance(self.kind, state, active, n_steps, self.src, self.tgt, self.trees,
                  self.use_tree, o.alpha, o.beta, o.d_max, self.mapping, _OPT[c.optimizer],
                  c.adam_beta1, c.adam_beta2, c.adam_eps, c.gtol, c.tol, c.patience,
                  c.max_halvings, max_iters)


def _rank(loss: np.ndarray, status: np.ndarray, eligible: np.ndarray) -> np.ndarray:
    """Eligible, non-failed start ordinals sorted by (loss, ordinal)."""
    ok = np.flatnonzero(eligible & (status != K.FAILED) & np.isfinite(loss))
    return ok[np.lexsort((ok, loss[ok]))]


def _run_starts(problem: _Problem, X0: np.ndarray, lr: float, max_iters: int, prune) -> tuple:
    state = problem.init(X0, lr, max_iters)
    S = X0.shape[0]
    active = np.ones(S, dtype=np.bool_)
    done = 0
    for checkpoint, keep in prune:
        if checkpoint >= max_iters:
            break
        problem.advance(state, active, checkpoint - done, max_iters)
        done = checkpoint
        order = _rank(state[6], state[7], active)
        survivors = np.zeros(S, dtype=np.bool_)
        survivors[order[:keep]] = True
        active &= survivors
    problem.advance(state, active, max_iters - done, max_iters)
    return state, active


def optimize_start(start, source: PointCloud, target: PointCloud, obj_cfg: ObjectiveConfig,
                   solver_cfg: SolverConfig) -> tuple:
    """Optimize one start on the full clouds.

    Returns ``(params, loss, trace)`` where ``trace`` is the accepted loss
    sequence (non-increasing by construction of the step safeguard). A start
    whose loss becomes non-finite returns ``loss = inf`` and params unchanged.
    """
    kind = K.HYBRID if isinstance(start, TransformParams) else (
        K.EULER if start.rotation.kind is RotationKind.EULER_XYZ else K.SIXD)
    obj_cfg = replace(obj_cfg, d_max=start.d_max, mapping=start.mapping)
    index = build_index(target)
    problem = _Problem(np.ascontiguousarray(source.points), index.source.points,
                       target_trees(index), obj_cfg, solver_cfg, kind)
    X0 = start.vector()[None, :].copy()
    state, _ = _run_starts(problem, X0, solver_cfg.step_size, solver_cfg.max_iters, ())
    x, _, _, _, _, _, loss, status, iters, _, trace = state
    tr = trace[0, : iters[0] + 1].copy()
    if status[0] == K.FAILED:
        return start, float("inf"), tr
    return _decode(kind, x[0], obj_cfg.d_max, obj_cfg.mapping), float(loss[0]), tr


def auto_threshold(target: PointCloud, obj_cfg: ObjectiveConfig, cfg: SolverConfig) -> float:
    """Objective of the target against itself after a small rotation, times the factor."""
    c = target.centroid()
    R = rodrigues(np.array([1.0, 1.0, 1.0]), np.deg2rad(cfg.threshold_perturb_deg))
    moved = PointCloud((target.points - c) @ R.T + c)
    ident = TransformParams(np.array([0.0, 0.0, 1.0]), 0.0, np.array([1.0, 0.0, 0.0]),
                            distance_preimage(0.0, obj_cfg.d_max, obj_cfg.mapping),
                            obj_cfg.d_max, obj_cfg.mapping)
    base = total_loss(ident, moved, target, obj_cfg).total
    return cfg.threshold_factor * base


def _stages(source: PointCloud, target: PointCloud, obj_cfg: ObjectiveConfig,
            cfg: SolverConfig, kind: int) -> tuple:
    """Screening, refinement and full-resolution problems for one pair."""
    rng = np.random.default_rng(cfg.seed)
    s_screen = _subsample(source.points, cfg.screen_points, rng)
    t_screen = _subsample(target.points, cfg.screen_points, rng)
    s_fine = _subsample(source.points, cfg.refine_points, rng)
    t_fine = _subsample(target.points, cfg.refine_points, rng)
    screen = _Problem(s_screen, t_screen, None, obj_cfg, cfg, kind)
    fine = _Problem(s_fine, t_fine, None, obj_cfg, cfg, kind)
    full = _Problem(np.ascontiguousarray(source.points), np.ascontiguousarray(target.points),
                    None, obj_cfg, cfg, kind)
    return screen, fine, full


def _solve_batch(stages: tuple, X0: np.ndarray, cfg: SolverConfig) -> tuple:
    """Screen, refine and score one batch of starts.

    Returns ``(finalists, xs, losses, n_failed)``: finalist ordinals in rank
    order, their refined vectors, their full-cloud losses (inf if failed) and
    the number of starts that failed during screening.
    """
    screen, fine, full = stages
    state, _ = _run_starts(screen, X0, cfg.step_size, cfg.max_iters, cfg.prune)
    n_failed = int(np.count_nonzero(state[7] == K.FAILED))
    order = _rank(state[6], state[7], np.ones(X0.shape[0], dtype=np.bool_))
    finalists = order if cfg.refine_top is None else order[: cfg.refine_top]
    if len(finalists) == 0:
        return finalists, np.empty((0, X0.shape[1])), np.empty(0), n_failed
    xs = np.ascontiguousarray(state[0][finalists])
    if cfg.refine_iters > 0:
        xs = np.ascontiguousarray(
            _run_starts(fine, xs, cfg.refine_step, cfg.refine_iters, ())[0][0])
    # finalists are always scored on the full clouds
    fstate = full.init(xs, cfg.refine_step, 1)
    losses = np.where(fstate[7] == K.FAILED, np.inf, fstate[6])
    return finalists, xs, losses, n_failed


def solve_starts(starts: list, source: PointCloud, target: PointCloud,
                 obj_cfg: ObjectiveConfig | None = None,
                 solver_cfg: SolverConfig | None = None) -> tuple:
    """Run the per-interval pipeline on an explicit list of starts.

    Returns ``(params, loss)`` for the best finalist. All starts must share
    one parameterization, the one named by ``solver_cfg``.
    """
    obj_cfg = obj_cfg or ObjectiveConfig()
    cfg = solver_cfg or SolverConfig.desk()
    kind = _KIND[cfg.parameterization]
    if not starts:
        raise InvalidArgumentError("at least one start is required")
    X0 = np.stack([s.vector() for s in starts])
    if X0.shape[1] != K.param_dim(kind):
        raise InvalidArgumentError("starts do not match the configured parameterization")
    finalists, xs, losses, _ = _solve_batch(_stages(source, target, obj_cfg, cfg, kind), X0, cfg)
    if len(finalists) == 0 or not np.isfinite(losses).any():
        raise RegistrationFailedError("every start produced a non-finite loss",
                                      {"restarts": len(starts)})
    j = int(np.argmin(losses))
    return _decode(kind, xs[j], obj_cfg.d_max, obj_cfg.mapping), float(losses[j])


def register(source: PointCloud, target: PointCloud, obj_cfg: ObjectiveConfig | None = None,
             solver_cfg: SolverConfig | None = None) -> RegistrationResult:
    """Estimate the rigid transform mapping ``source`` onto ``target``.

    Both clouds are expected in a shared normalized frame (see
    :func:`hybreg.io.normalize_pair`).
    """
    t0 = time.perf_counter()
    obj_cfg = obj_cfg or ObjectiveConfig()
    cfg = solver_cfg or SolverConfig.desk()
    kind = _KIND[cfg.parameterization]
    if not isinstance(source, PointCloud):
        source = PointCloud(source)
    if not isinstance(target, PointCloud):
        target = PointCloud(target)

    threshold = cfg.loss_threshold
    if threshold is None:
        threshold = auto_threshold(target, obj_cfg, cfg)

    stages = _stages(source, target, obj_cfg, cfg, kind)
    best = None  # (loss, interval, ordinal, x)
    per_restart = []
    interval_best = []
    interval_params = []
    restarts = 0
    failed = 0
    visited = 0
    for k, interval in enumerate(cfg.angle_intervals):
        if k > 0 and (not cfg.escalate or best is not None and best[0] <= threshold):
            break
        visited += 1
        starts = init_grid(cfg, interval, source, target, obj_cfg)
        X0 = np.stack([s.vector() for s in starts])
        restarts += len(starts)
        finalists, xs, losses, n_failed = _solve_batch(stages, X0, cfg)
        failed += n_failed
        ib, ip = float("inf"), None
        for j, ordinal in enumerate(finalists):
            lj = float(losses[j])
            per_restart.append(lj)
            if lj < ib:
                ib, ip = lj, xs[j].copy()
            if np.isfinite(lj) and (best is None or lj < best[0]):
                best = (lj, k, int(ordinal), xs[j].copy())
        interval_best.append(ib)
        interval_params.append(None if ip is None else _decode(kind, ip, obj_cfg.d_max, obj_cfg.mapping))
        log.debug("interval %d: best %.6g (threshold %.6g)", k, ib, threshold)

    if best is None:
        raise RegistrationFailedError(
            "every start produced a non-finite loss",
            {"restarts": restarts, "failed": failed, "intervals_visited": visited},
        )
    if cfg.polish_iters > 0:
        # the finalists were refined on subsamples; finish the winner on the full clouds
        state, _ = _run_starts(stages[2], best[3][None, :].copy(), cfg.polish_step,
                               cfg.polish_iters, ())
        if state[7][0] != K.FAILED and state[6][0] <= best[0]:
            best = (float(state[6][0]), best[1], best[2], state[0][0].copy())
    params = _decode(kind, best[3], obj_cfg.d_max, obj_cfg.mapping)
    transform = realize_transform(params)
    return RegistrationResult(
        transform=transform,
        params=params,
        final_loss=best[0],
        restarts_used=restarts,
        intervals_visited=visited,
        per_restart_losses=per_restart,
        wall_time=time.perf_counter() - t0,
        combination=cfg.combination,
        loss_threshold=float(threshold),
        interval_best=interval_best,
        interval_params=interval_params,
        failed_starts=failed,
    )
