import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from conftest import t64
from srdepth import geometry as g
from srdepth import tensorcore as tc
from srdepth.geometry import Intrinsics, RigidTransform
from srdepth.tensorcore import Tensor

K100 = Intrinsics(100.0, 100.0, 50.0, 50.0)


def _point_map(*pts):
    arr = np.array(pts, dtype=np.float64).T.reshape(1, 3, 1, len(pts))
    return Tensor(arr)


def test_intrinsics_matrix_and_validation():
    m = K100.matrix
    assert np.array_equal(m, [[100, 0, 50], [0, 100, 50], [0, 0, 1]])
    with pytest.raises(ValueError):
        Intrinsics(0.0, 1.0, 0.0, 0.0)
    assert Intrinsics.from_json(json.loads(json.dumps(K100.to_json()))) == K100


def test_backproject_principal_point_and_example():
    pix = np.array([[[[50.0, 60.0]], [[50.0, 50.0]]]])
    depth = np.array([[[[3.0, 2.0]]]])
    pts, valid = g.backproject(depth, K100, pixels=pix)
    assert np.allclose(pts.data[0, :, 0, 0], [0, 0, 3])
    assert np.allclose(pts.data[0, :, 0, 1], [0.2, 0, 2], atol=1e-15)
    assert valid.all()


def test_backproject_flags_nonpositive_depth():
    _, valid = g.backproject(np.array([[[[1.0, 0.0, -2.0]]]]), K100)
    assert valid.ravel().tolist() == [True, False, False]


def test_transform_examples():
    p = _point_map((0, 0, 2))
    assert np.array_equal(g.transform_points(p, RigidTransform.identity()).data, p.data)
    moved = g.transform_points(p, RigidTransform(np.eye(3), [0, 0, 1]))
    assert np.allclose(moved.data.ravel(), [0, 0, 3])
    yaw = g.rotation_from_axis_angle([0, math.pi / 2, 0])
    out = g.transform_points(_point_map((1, 0, 0)), RigidTransform(yaw, np.zeros(3))).data.ravel()
    assert np.allclose(out, yaw @ [1, 0, 0], atol=1e-15)
    assert np.allclose(out, [0, 0, -1], atol=1e-15)


def test_project_examples():
    pix, z, valid = g.project(_point_map((0, 0, 7), (0.2, 0, 2), (1, 1, -1)), K100)
    assert np.allclose(pix.data[0, :, 0, 0], [50, 50])
    assert np.allclose(pix.data[0, :, 0, 1], [60, 50])
    assert valid.ravel().tolist() == [True, True, False]
    assert np.isnan(pix.data[0, :, 0, 2]).all()
    assert z.data.ravel().tolist() == [7.0, 2.0, -1.0]


def test_disparity_depth_values():
    assert g.disparity_to_depth(0.0) == pytest.approx(100.0)
    assert g.disparity_to_depth(1.0) == pytest.approx(0.1)
    assert g.disparity_to_depth(0.5) == pytest.approx(1 / (0.01 + 0.5 * 9.99))
    assert g.disparity_to_depth(0.5) == pytest.approx(0.1998002, abs=1e-7)
    d = np.linspace(0, 1, 1001)
    depth = g.disparity_to_depth(d)
    assert np.all(np.diff(depth) < 0)
    np.testing.assert_allclose(g.depth_to_disparity(depth), d, rtol=1e-6, atol=1e-12)
    with pytest.raises(ValueError):
        g.disparity_to_depth(0.5, 1.0, 0.5)


def test_rigid_transform_invariants():
    with pytest.raises(ValueError):
        RigidTransform(np.diag([1.0, 1.0, -1.0]), np.zeros(3))
    with pytest.raises(ValueError):
        RigidTransform(np.eye(3) * 1.1, np.zeros(3))
    r = g.pose_from_6dof([0.1, -0.2, 0.3], [1, 2, 3])
    assert np.allclose(r.compose(r.inverse()).matrix(), np.eye(4), atol=1e-12)
    back = RigidTransform.from_json(json.loads(json.dumps(r.to_json())))
    assert np.array_equal(back.matrix(), r.matrix())


def test_exponential_map():
    assert np.array_equal(g.rotation_from_axis_angle(np.zeros(3)), np.eye(3))
    theta = 1e-3
    r = g.rotation_from_axis_angle([0, 0, theta])
    first_order = np.eye(3) + theta * np.array([[0, -1, 0], [1, 0, 0], [0, 0, 0]])
    assert np.abs(r - first_order).max() <= theta ** 2
    rng = np.random.default_rng(0)
    for _ in range(50):
        w = rng.normal(size=3) * rng.uniform(0, 3)
        r = g.rotation_from_axis_angle(w)
        assert np.allclose(r.T @ r, np.eye(3), atol=1e-6)
        np.testing.assert_allclose(r, oracles.rodrigues(w), atol=1e-12)


def test_exponential_map_tensor_matches_numpy():
    rng = np.random.default_rng(3)
    vec = rng.normal(size=(5, 6)) * np.array([1, 1, 1, 1, 1, 1])
    vec[0, :3] = 0.0
    vec[1, :3] = 1e-5
    pose = g.pose_from_6dof_tensor(Tensor(vec.reshape(5, 6, 1, 1)))
    for i, t in enumerate(pose.to_transforms()):
        np.testing.assert_allclose(t.rotation, oracles.rodrigues(vec[i, :3]), atol=1e-9)
        np.testing.assert_allclose(t.translation, vec[i, 3:], atol=1e-12)


def test_invert_pose_tensor():
    vec = np.random.default_rng(4).normal(size=(2, 6, 1, 1))
    pose = g.pose_from_6dof_tensor(Tensor(vec))
    inv = g.invert_pose_tensor(pose)
    for a, b in zip(pose.to_transforms(), inv.to_transforms()):
        assert np.allclose(a.compose(b).matrix(), np.eye(4), atol=1e-9)


def test_load_transforms_shapes(tmp_path):
    r = g.pose_from_6dof([0.1, 0, 0], [0, 0, 1])
    one = tmp_path / "one.json"
    one.write_text(json.dumps(r.to_json()))
    many = tmp_path / "many.json"
    many.write_text(json.dumps({"poses": [r.to_json(), r.inverse().to_json()]}))
    assert len(g.load_transforms(one)) == 1
    assert len(g.load_transforms(many)) == 2


def _round_trip_error(rng, n_pixels=10_000):
    """Max pixel error of project . T^-1 . T . backproject over random configurations."""
    k = Intrinsics(*rng.uniform([50, 50, 20, 10], [300, 300, 80, 40]))
    h, w = 100, 100
    pix = np.stack([rng.uniform(0, w - 1, n_pixels), rng.uniform(0, h - 1, n_pixels)]).reshape(1, 2, 1, n_pixels)
    depth = rng.uniform(0.5, 80, (1, 1, 1, n_pixels))
    pose = g.pose_from_6dof(rng.normal(0, 0.3, 3), rng.normal(0, 2, 3))
    pts, _ = g.backproject(depth, k, pixels=pix)
    moved = g.transform_points(pts, pose)
    back = g.transform_points(moved, pose.inverse())
    out, z, valid = g.project(back, k)
    assert valid.all()
    assert np.array_equal(z.data, back.data[:, 2:3])
    return float(np.abs(out.data - pix).max())


def test_round_trip_many():
    rng = np.random.default_rng(0)
    assert max(_round_trip_error(rng, 1000) for _ in range(10)) < 1e-5


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2 ** 32 - 1))
def test_round_trip_property(seed):
    assert _round_trip_error(np.random.default_rng(seed), 200) < 1e-5


def test_geometry_gradients():
    r = np.random.default_rng(9)
    depth = t64(r.uniform(1, 3, (1, 1, 3, 4)))
    vec = t64(r.normal(0, 0.2, (1, 6, 1, 1)))
    k = Intrinsics(4.0, 4.0, 1.5, 1.0)

    def fn(d, v):
        pts, _ = g.backproject(d, k)
        pix, _, _ = g.project(g.transform_points(pts, g.pose_from_6dof_tensor(v)), k)
        return tc.mean(tc.square(pix))

    assert tc.check_gradients(fn, [depth, vec]) <= 1.0


def test_exp_map_gradient_near_zero():
    vec = t64(np.array([1e-4, -2e-4, 3e-5, 0.1, 0.2, 0.3]).reshape(1, 6, 1, 1))
    fn = lambda v: tc.sum(tc.square(g.pose_from_6dof_tensor(v).rotation * 3.0))  # noqa: E731
    assert tc.check_gradients(fn, [vec]) <= 1.0
