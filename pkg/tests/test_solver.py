import numpy as np
import pytest

from hybreg.datagen import PairSpec, Shape, sample_shape
from hybreg.errors import InvalidArgumentError, RegistrationFailedError
from hybreg.geometry import (
    PointCloud,
    RigidTransform,
    TransformParams,
    apply_transform,
    distance_preimage,
    realize_transform,
    rodrigues,
)
from hybreg.metrics import rotation_error, translation_error
from hybreg.objective import ObjectiveConfig, total_loss
from hybreg.solver import (
    Combination,
    Parameterization,
    SolverConfig,
    fibonacci_directions,
    init_grid,
    interval_angles,
    optimize_start,
    register,
    solve_starts,
    validate_intervals,
)


@pytest.fixture(scope="module")
def shape():
    c = sample_shape(PairSpec(shape=Shape.COMPOSITE, n_points=400, seed=21))
    return PointCloud(c.points - c.centroid())


def _copy(cloud, R, T=np.zeros(3)):
    return apply_transform(cloud, RigidTransform(R, np.asarray(T, dtype=float)))


def test_init_grid_single_identity():
    cfg = SolverConfig(n_directions=1, n_angles=1)
    starts = init_grid(cfg, (0.0, 0.0))
    assert len(starts) == 1
    np.testing.assert_allclose(realize_transform(starts[0]).R, np.eye(3), atol=1e-15)


def test_init_grid_product_count():
    starts = init_grid(SolverConfig(n_directions=4, n_angles=2), (0.0, np.pi / 4))
    assert len(starts) == 8
    for s in starts:
        assert abs(np.linalg.norm(s.v) - 1) < 1e-12


def test_init_grid_paired_count():
    cfg = SolverConfig(n_directions=5, n_angles=3, combination=Combination.PAIRED)
    assert len(init_grid(cfg, (0.0, 1.0))) == 5 == cfg.starts_per_interval


def test_init_grid_empty_interval():
    with pytest.raises(InvalidArgumentError):
        init_grid(SolverConfig(), (1.0, 0.5))


def test_init_grid_translation_from_centroids(shape):
    target = PointCloud(shape.points + [0.2, 0.0, 0.0])
    cfg = SolverConfig(n_directions=3, n_angles=2)
    obj = ObjectiveConfig()
    for s in init_grid(cfg, (0.0, 0.5), shape, target, obj):
        R = rodrigues(s.v, s.theta)
        off = target.centroid() - R @ shape.centroid()
        dist = np.clip(np.linalg.norm(off), 0.05 * obj.d_max, 0.95 * obj.d_max)
        np.testing.assert_allclose(s.u, off / np.linalg.norm(off), atol=1e-12)
        assert abs(s.d_u - distance_preimage(dist, obj.d_max, obj.mapping)) < 1e-12


def test_directions_unit_and_spread():
    d = fibonacci_directions(64, seed=0)
    np.testing.assert_allclose(np.linalg.norm(d, axis=1), 1.0, atol=1e-12)
    cos = d @ d.T
    np.fill_diagonal(cos, -1.0)
    min_sep = np.degrees(np.arccos(cos.max()))
    # a perfect 64-point packing separates by about 25 degrees
    assert min_sep > 15.0
    np.testing.assert_array_equal(d, fibonacci_directions(64, seed=0))


def test_interval_angles_inside():
    a = interval_angles(4, 0.0, np.pi / 4)
    assert np.all((a > 0) & (a < np.pi / 4))
    np.testing.assert_allclose(np.diff(a), np.pi / 16)


def test_validate_intervals():
    validate_intervals(((0.0, 1.0), (1.0, np.pi)))
    for bad in ((), ((0.0, 1.0),), ((0.0, 1.0), (1.5, np.pi)), ((0.0, 0.0), (0.0, np.pi))):
        with pytest.raises(InvalidArgumentError):
            validate_intervals(bad)


def test_config_validation():
    for bad in (dict(n_directions=0), dict(max_iters=0), dict(step_size=0.0),
                dict(loss_threshold=-1.0), dict(prune=((0, 4),)), dict(combination="zigzag")):
        with pytest.raises((InvalidArgumentError, ValueError)):
            SolverConfig(**bad)


def test_optimize_start_already_optimal(shape):
    obj = ObjectiveConfig()
    start = TransformParams([0, 0, 1], 0.0, [1, 0, 0], distance_preimage(0.0, 0.5, obj.mapping), 0.5)
    params, loss, trace = optimize_start(start, shape, shape, obj, SolverConfig())
    assert loss <= 1e-10
    assert len(trace) <= 2


def test_optimize_start_single_point_translation():
    src, tgt = PointCloud([[0.0, 0, 0]]), PointCloud([[0.3, 0, 0]])
    obj = ObjectiveConfig(d_max=0.5)
    start = TransformParams([0, 0, 1], 0.1, [0, 1, 0], 0.2, 0.5)
    params, loss, trace = optimize_start(start, src, tgt, obj, SolverConfig(max_iters=300))
    T = realize_transform(params).T
    assert translation_error(T, [0.3, 0, 0]) < 1e-4


def test_optimize_start_trace_non_increasing(shape):
    tgt = _copy(shape, rodrigues([1, 0, 0], 0.4), [0.05, 0, 0])
    start = init_grid(SolverConfig(n_directions=2, n_angles=1), (0.0, 0.5), shape, tgt)[1]
    _, loss, trace = optimize_start(start, shape, tgt, ObjectiveConfig(), SolverConfig(max_iters=40))
    assert np.all(np.diff(trace) <= 0)
    assert loss == trace.min()


def test_register_self(shape):
    res = register(shape, shape)
    assert rotation_error(np.eye(3), res.transform.R) < 0.1
    assert translation_error(np.zeros(3), res.transform.T) < 1e-3
    assert res.intervals_visited == 1


def test_register_20_degrees_about_z(shape):
    R = rodrigues([0, 0, 1], np.deg2rad(20))
    res = register(shape, _copy(shape, R, [0.05, -0.02, 0.03]))
    assert rotation_error(R, res.transform.R) < 0.5


def test_register_150_degrees_escalates(shape):
    R = rodrigues(np.random.default_rng(5).normal(size=3), np.deg2rad(150))
    res = register(shape, _copy(shape, R), solver_cfg=SolverConfig.desk(loss_threshold=1e-12))
    assert res.intervals_visited >= 3
    assert rotation_error(R, res.transform.R) < 2.0


def test_register_deterministic(shape):
    tgt = _copy(shape, rodrigues([1, 2, 3], 0.6), [0.1, 0, 0])
    cfg = SolverConfig.desk(n_directions=8, n_angles=4, seed=3)
    a, b = register(shape, tgt, solver_cfg=cfg), register(shape, tgt, solver_cfg=cfg)
    np.testing.assert_array_equal(a.transform.R, b.transform.R)
    np.testing.assert_array_equal(a.transform.T, b.transform.T)
    np.testing.assert_array_equal(a.params.vector(), b.params.vector())
    assert a.per_restart_losses == b.per_restart_losses
    assert a.final_loss == b.final_loss and a.intervals_visited == b.intervals_visited


@pytest.mark.parametrize("param", list(Parameterization))
def test_final_loss_matches_reevaluation(shape, param):
    tgt = _copy(shape, rodrigues([0, 1, 1], 0.5), [0, 0.1, 0])
    obj = ObjectiveConfig()
    cfg = SolverConfig.desk(n_directions=8, n_angles=4, parameterization=param)
    res = register(shape, tgt, obj, cfg)
    assert abs(res.final_loss - total_loss(res.params, shape, tgt, obj).total) < 1e-12


def test_polish_never_worsens(shape):
    tgt = _copy(shape, rodrigues([1, 1, 0], 0.4), [0.02, 0, 0.05])
    cfg = SolverConfig.desk(n_directions=8, n_angles=4)
    raw = register(shape, tgt, solver_cfg=cfg.replace(polish_iters=0))
    polished = register(shape, tgt, solver_cfg=cfg)
    assert polished.final_loss <= raw.final_loss
    assert polished.interval_best == raw.interval_best


def test_superset_of_starts_never_worse(shape):
    tgt = _copy(shape, rodrigues([1, -1, 0], 0.7), [0.05, 0.05, 0])
    obj = ObjectiveConfig()
    cfg = SolverConfig(n_directions=6, n_angles=3, refine_top=None, prune=(), max_iters=40,
                       refine_iters=10)
    starts = init_grid(cfg, (0.0, np.pi / 4), shape, tgt, obj)
    rng = np.random.default_rng(2)
    for _ in range(3):
        idx = rng.permutation(len(starts))
        k = int(rng.integers(1, len(starts)))
        sub = [starts[i] for i in idx[:k]]
        _, small = solve_starts(sub, shape, tgt, obj, cfg)
        _, big = solve_starts(sub + [starts[i] for i in idx[k:]], shape, tgt, obj, cfg)
        assert big <= small


def test_escalation_boundary(shape):
    tgt = _copy(shape, rodrigues([0, 0, 1], 0.3))
    cfg = SolverConfig.desk(n_directions=4, n_angles=4, max_iters=40)
    first = register(shape, tgt, solver_cfg=cfg.replace(angle_intervals=((0.0, np.pi / 4), (np.pi / 4, np.pi))))
    level = first.interval_best[0]
    at = register(shape, tgt, solver_cfg=cfg.replace(loss_threshold=level))
    assert at.intervals_visited == 1
    below = register(shape, tgt, solver_cfg=cfg.replace(loss_threshold=float(np.nextafter(level, 0))))
    assert below.intervals_visited >= 2
    assert below.interval_best[0] == level


def test_no_escalation_flag(shape):
    tgt = _copy(shape, rodrigues([0, 0, 1], 2.5))
    cfg = SolverConfig.desk(n_directions=4, n_angles=2, loss_threshold=1e-12, escalate=False)
    res = register(shape, tgt, solver_cfg=cfg)
    assert res.intervals_visited == 1
    assert res.restarts_used == 8


def test_all_starts_failing_raises():
    huge = PointCloud(np.full((8, 3), 1e200) * np.arange(1, 9)[:, None])
    with pytest.raises(RegistrationFailedError):
        register(huge, PointCloud(-huge.points),
                 solver_cfg=SolverConfig.desk(n_directions=2, n_angles=1, max_iters=3))


def test_solve_starts_rejects_mismatched_kind(shape):
    s = init_grid(SolverConfig(n_directions=1, n_angles=1), (0.0, 0.1))
    with pytest.raises(InvalidArgumentError):
        solve_starts(s, shape, shape, solver_cfg=SolverConfig(parameterization=Parameterization.EULER))
