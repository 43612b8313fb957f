import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

import oracles
from hybreg.errors import InvalidArgumentError
from hybreg.geometry import (
    AltRotationParams,
    AltTransformParams,
    Mapping,
    Plane,
    PointCloud,
    RotationKind,
    TransformParams,
    apply_transform,
    realize_transform,
)
from hybreg.nn_index import build_index
from hybreg.objective import (
    LossBreakdown,
    ObjectiveConfig,
    chamfer,
    correspondences,
    frozen_loss,
    gradient,
    local_chamfer,
    projected_chamfer,
    total_loss,
)

coords = st.floats(-5, 5, allow_nan=False, allow_infinity=False)
cloud = arrays(np.float64, st.tuples(st.integers(1, 24), st.just(3)), elements=coords)


def test_chamfer_examples():
    P = PointCloud([[0.0, 0, 0], [2.0, 0, 0]])
    assert chamfer(P, P) == 0.0
    assert chamfer(PointCloud([[0.0, 0, 0]]), PointCloud([[1.0, 0, 0]])) == 2.0
    assert chamfer(P, PointCloud([[0.0, 0, 0]])) == 2.0


def test_local_chamfer_examples():
    P = PointCloud([[0.0, 0, 0], [10.0, 0, 0]])
    assert local_chamfer(P, PointCloud([[0.0, 0, 0]]), 0.5) == 0.0
    P = PointCloud([[0.0, 0, 0], [1.0, 0, 0]])
    Q = PointCloud([[0.0, 0, 0], [1.0, 0, 0], [9.0, 0, 0]])
    assert local_chamfer(P, Q, 2 / 3) == 0.0


def test_projected_examples():
    P = PointCloud([[0.0, 0, 0]])
    Q = PointCloud([[0.0, 0, 7]])
    assert projected_chamfer(P, Q, Plane.XY) == 0.0
    assert projected_chamfer(P, Q, Plane.YZ) == 98.0


def test_alpha_one_equals_chamfer(rng):
    for _ in range(20):
        P = PointCloud(rng.normal(size=(rng.integers(1, 50), 3)))
        Q = PointCloud(rng.normal(size=(rng.integers(1, 50), 3)))
        assert local_chamfer(P, Q, 1.0) == chamfer(P, Q)


def test_alpha_validation():
    P = PointCloud([[0.0, 0, 0]])
    for a in (0.0, -0.1, 1.5):
        with pytest.raises(InvalidArgumentError):
            local_chamfer(P, P, a)


def test_oracle_equality_random(rng):
    for _ in range(40):
        P = rng.normal(size=(rng.integers(1, 40), 3))
        Q = rng.normal(size=(rng.integers(1, 40), 3))
        alpha = float(rng.uniform(0.05, 1.0))
        assert chamfer(P, Q) == oracles.chamfer(P, Q)
        assert local_chamfer(P, Q, alpha) == oracles.local_chamfer(P, Q, alpha)
        for plane in Plane:
            assert projected_chamfer(P, Q, plane) == oracles.projected_chamfer(P, Q, plane.value)


@given(cloud, cloud)
def test_chamfer_symmetric_nonnegative(P, Q):
    a, b = chamfer(P, Q), chamfer(Q, P)
    assert a >= 0.0
    assert abs(a - b) <= 1e-12 * max(1.0, a)


@given(cloud, cloud, st.floats(0.01, 1.0))
def test_property_oracle(P, Q, alpha):
    assert local_chamfer(P, Q, alpha) == oracles.local_chamfer(P, Q, alpha)


def _params(rng, kind="hybrid", mapping=Mapping.SIN, d_max=0.5):
    u = rng.normal(size=3)
    d_u = float(rng.uniform(-1.2, 1.2))
    if kind == "hybrid":
        return TransformParams(rng.normal(size=3), float(rng.uniform(0, np.pi)), u, d_u, d_max, mapping)
    if kind == "euler":
        rot = AltRotationParams(RotationKind.EULER_XYZ, rng.uniform(-np.pi, np.pi, 3))
    else:
        rot = AltRotationParams(RotationKind.SIX_D, rng.normal(size=6))
    return AltTransformParams(rot, u, d_u, d_max, mapping)


def test_breakdown_identity(rng):
    for _ in range(10):
        P, Q = rng.normal(size=(60, 3)), rng.normal(size=(50, 3))
        cfg = ObjectiveConfig(alpha=float(rng.uniform(0.2, 1)), beta=float(rng.uniform(0, 1)))
        lb = total_loss(_params(rng), PointCloud(P), PointCloud(Q), cfg)
        assert abs(lb.total - (lb.local_cd + cfg.beta * (lb.proj_xy + lb.proj_yz + lb.proj_xz))) < 1e-12


def test_total_loss_matches_component_functions(rng):
    P, Q = PointCloud(rng.normal(size=(70, 3))), PointCloud(rng.normal(size=(40, 3)))
    params = _params(rng)
    cfg = ObjectiveConfig(alpha=0.6, beta=0.3)
    X = apply_transform(P, realize_transform(params))
    lb = total_loss(params, P, Q, cfg)
    # the kernel transforms points itself, so agreement is to rounding, not bitwise
    assert abs(lb.local_cd - local_chamfer(X, Q, 0.6)) < 1e-12
    assert abs(lb.proj_xy - projected_chamfer(X, Q, Plane.XY)) < 1e-12
    assert abs(lb.proj_yz - projected_chamfer(X, Q, Plane.YZ)) < 1e-12
    assert abs(lb.proj_xz - projected_chamfer(X, Q, Plane.XZ)) < 1e-12
    dense = oracles.total_loss_dense(X.points, Q.points, 0.6, 0.3)
    assert abs(lb.total - dense) < 1e-12


def test_total_loss_accepts_prebuilt_index(rng):
    P, Q = PointCloud(rng.normal(size=(30, 3))), PointCloud(rng.normal(size=(30, 3)))
    p, cfg = _params(rng), ObjectiveConfig()
    assert total_loss(p, P, Q, cfg) == total_loss(p, P, build_index(Q), cfg)


def test_config_validation():
    for bad in (dict(alpha=0.0), dict(alpha=1.01), dict(beta=-1.0), dict(d_max=0.0)):
        with pytest.raises(InvalidArgumentError):
            ObjectiveConfig(**bad)
    cfg = ObjectiveConfig()
    assert (cfg.alpha, cfg.beta, cfg.d_max, cfg.mapping) == (0.7, 0.02, 0.5, Mapping.SIN)


def _realizer(params):
    kind = params
    if isinstance(kind, TransformParams):
        return lambda x: (lambda t: (t.R, t.T))(realize_transform(
            TransformParams.from_vector(x, params.d_max, params.mapping)))
    rk = params.rotation.kind
    r = 3 if rk is RotationKind.EULER_XYZ else 6
    return lambda x: (lambda t: (t.R, t.T))(realize_transform(AltTransformParams(
        AltRotationParams(rk, x[:r]), x[r:r + 3], x[r + 3], params.d_max, params.mapping)))


def gradient_case(rng, kind, mapping):
    n, m = int(rng.integers(64, 257)), int(rng.integers(64, 257))
    P = PointCloud(rng.normal(size=(n, 3)) * 0.5)
    Q = PointCloud(rng.normal(size=(m, 3)) * 0.5)
    cfg = ObjectiveConfig(alpha=float(rng.uniform(0.3, 1.0)), beta=float(rng.uniform(0.0, 1.0)),
                          mapping=mapping)
    params = _params(rng, kind, mapping)
    g, lb = gradient(params, P, Q, cfg)
    corr = correspondences(params, P, Q, cfg)
    realize = _realizer(params)
    x0 = params.vector()

    def f(x):
        return oracles.frozen_objective(realize, x, P.points, Q.points, corr.fwd, corr.rev,
                                        corr.keep_source, corr.keep_target, cfg.beta)

    assert abs(f(x0) - lb.total) < 1e-10
    fd = oracles.central_diff(f, x0, 1e-6)
    denom = np.maximum(np.abs(g), 1e-6 * np.linalg.norm(g))
    return g, fd, np.abs(g - fd) / denom


@pytest.mark.parametrize("kind", ["hybrid", "euler", "sixd"])
@pytest.mark.parametrize("mapping", [Mapping.SIN, Mapping.SIGMOID])
def test_gradient_matches_finite_differences(kind, mapping):
    seed = ["hybrid", "euler", "sixd"].index(kind) * 10 + (mapping is Mapping.SIN)
    rng = np.random.default_rng(seed)
    for _ in range(4):
        _, _, rel = gradient_case(rng, kind, mapping)
        assert rel.max() < 1e-4


def test_frozen_loss_matches_total_at_base_point(rng):
    P, Q = PointCloud(rng.normal(size=(80, 3))), PointCloud(rng.normal(size=(90, 3)))
    p, cfg = _params(rng), ObjectiveConfig()
    corr = correspondences(p, P, Q, cfg)
    assert abs(frozen_loss(p, P, Q, cfg, corr) - total_loss(p, P, Q, cfg).total) < 1e-14


def test_gradient_zero_at_exact_alignment(rng):
    P = PointCloud(rng.normal(size=(100, 3)))
    p = TransformParams([0, 0, 1], 0.0, [1, 0, 0], -np.pi / 2, 0.5)
    g, lb = gradient(p, P, P, ObjectiveConfig())
    assert lb.total == 0.0
    assert np.all(g == 0.0)


def test_from_parts_round_trip():
    lb = LossBreakdown.from_parts(np.array([1.0, 2, 3, 4, 1.9]))
    assert lb.proj_yz == 3.0 and lb.total == 1.9
