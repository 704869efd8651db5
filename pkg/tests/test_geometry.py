import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from numpy.testing import assert_allclose, assert_array_equal

from liftbox.errors import (
    DegenerateRotationError,
    RasterMismatchError,
    UnknownInstanceError,
    ValidationError,
)
from liftbox.geometry import (
    UNIT_CORNERS,
    CameraIntrinsics,
    CuboidParams,
    DepthMap,
    InstanceMask,
    OrientedBox3D,
    PointCloud,
    axis_rotation,
    backproject,
    backproject_pixels,
    box_corners,
    center_from_projection,
    rotation_from_6d,
    rotation_from_6d_jacobian,
)

finite = st.floats(-10, 10, allow_nan=False)


def as_set(corners, decimals=12):
    return sorted(map(tuple, np.round(corners, decimals) + 0.0))


# -- types --------------------------------------------------------------------

@pytest.mark.parametrize("fx,fy", [(0, 1), (1, -1), (np.nan, 1)])
def test_intrinsics_reject_bad_focal(fx, fy):
    with pytest.raises(ValidationError):
        CameraIntrinsics(fx, fy, 0, 0)


def test_intrinsics_reject_nonfinite_principal_point():
    with pytest.raises(ValidationError):
        CameraIntrinsics(1, 1, np.inf, 0)


def test_depth_map_rejects_nan_and_is_immutable():
    with pytest.raises(ValidationError):
        DepthMap(np.array([[1.0, np.nan]]))
    d = DepthMap(np.ones((2, 3)))
    assert (d.height, d.width) == (2, 3)
    with pytest.raises(ValueError):
        d.values[0, 0] = 5


def test_instance_mask_requires_labels_for_every_id():
    with pytest.raises(ValidationError, match=r"\[2\]"):
        InstanceMask(np.array([[0, 1, 2]]), {1: 5})
    m = InstanceMask(np.array([[0, 3, 1]]), {1: 5, 3: 6, 9: 1})
    assert m.instance_ids() == [1, 3]


def test_point_cloud_invariants():
    with pytest.raises(ValidationError):
        PointCloud([[0, 0, 0]])
    with pytest.raises(ValidationError):
        PointCloud([[0, np.inf, 1]])
    assert len(PointCloud(np.empty((0, 3)))) == 0


def test_oriented_box_invariants():
    with pytest.raises(ValidationError):
        OrientedBox3D([0, 0, 0], [1, 0, 1])
    with pytest.raises(ValidationError):
        OrientedBox3D([0, 0, 0], [1, 1, 1], np.diag([1.0, 1.0, -1.0]))
    with pytest.raises(ValidationError):
        OrientedBox3D([0, 0, 0], [1, 1, 1], np.eye(3) * 1.001)
    box = OrientedBox3D([1, 2, 3], [2, 3, 4], axis_rotation(1, 0.3))
    assert box.volume == pytest.approx(24.0)


def test_cuboid_params_invariants():
    good = dict(u=0, v=0, z=1, w=1, h=1, l=1, p=(1, 0, 0, 0, 1, 0), box2d=(0, 0, 10, 10))
    CuboidParams(**good)
    for key, val in [("z", 0.0), ("w", -1.0), ("p", (1, 0, 0, 2, 0, 0)), ("p", (0, 0, 0, 0, 1, 0))]:
        with pytest.raises(ValidationError):
            CuboidParams(**{**good, key: val})


def test_cuboid_vector_round_trip():
    c = CuboidParams(0.1, -0.2, 3.0, 1.0, 2.0, 0.5, (1, 2, 0, 0, 1, 3), (10, 20, 30, 40), s=0.25)
    assert c.as_vector().shape == (13,)
    assert CuboidParams.from_vector(c.as_vector(), c.box2d) == c


# -- backprojection -----------------------------------------------------------

def test_principal_point_pixel_lies_on_optical_axis():
    K = CameraIntrinsics(fx=321.0, fy=123.0, px=3.5, py=2.5)
    depth = DepthMap(np.full((5, 7), 2.0))
    ids = np.zeros((5, 7), dtype=int)
    ids[2, 3] = 1
    pc = backproject(depth, InstanceMask(ids, {1: 4}), K, 1)
    assert_allclose(pc.points, [[0.0, 0.0, 2.0]], atol=1e-15)
    assert (pc.instance_id, pc.class_id) == (1, 4)


def test_backproject_pixels_hand_value():
    K = CameraIntrinsics(500, 500, 320, 320)
    assert_allclose(backproject_pixels(420.0, 320.0, 5.0, K), [1.0, 0.0, 5.0])


def test_full_frame_constant_plane_keeps_every_pixel():
    K = CameraIntrinsics(100, 100, 4, 3)
    pc = backproject(DepthMap(np.full((6, 8), 1.5)), InstanceMask(np.ones((6, 8), int), {1: 0}), K, 1)
    assert len(pc) == 48
    assert_allclose(pc.points[:, 2], 1.5)


def test_backproject_row_major_order_and_invalid_depth():
    K = CameraIntrinsics(10, 10, 0, 0)
    d = np.array([[1.0, 0.0, 2.0], [-1.0, 3.0, 4.0]])
    pc = backproject(DepthMap(d), InstanceMask(np.ones((2, 3), int), {1: 0}), K, 1)
    assert_allclose(pc.points[:, 2], [1.0, 2.0, 3.0, 4.0])
    assert_allclose(pc.points[:, 0], [0.05, 2 * 0.25, 3 * 0.15, 4 * 0.25])


def test_backproject_errors_and_empty_result():
    K = CameraIntrinsics(10, 10, 0, 0)
    mask = InstanceMask(np.array([[1, 0]]), {1: 0})
    with pytest.raises(RasterMismatchError):
        backproject(DepthMap(np.ones((2, 2))), mask, K, 1)
    with pytest.raises(UnknownInstanceError):
        backproject(DepthMap(np.ones((1, 2))), mask, K, 2)
    assert len(backproject(DepthMap(np.zeros((1, 2))), mask, K, 1)) == 0


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_backprojected_points_reproject_to_pixel_centers(seed):
    rng = np.random.default_rng(seed)
    h, w = rng.integers(2, 12, size=2)
    K = CameraIntrinsics(*rng.uniform(50, 900, 2), *rng.uniform(-20, 40, 2))
    depth = rng.uniform(0.1, 50, size=(h, w))
    pc = backproject(DepthMap(depth), InstanceMask(np.ones((h, w), int), {1: 0}), K, 1)
    rows, cols = np.mgrid[0:h, 0:w]
    expected = np.stack([cols.ravel() + 0.5, rows.ravel() + 0.5], axis=1)
    assert np.abs(K.project(pc.points) - expected).max() < 1e-6


# -- rotations ----------------------------------------------------------------

@pytest.mark.parametrize("p", [(1, 0, 0, 0, 1, 0), (2, 0, 0, 0, 3, 0)])
def test_6d_canonical_inputs_give_identity(p):
    assert_allclose(rotation_from_6d(p), np.eye(3), atol=1e-15)


def test_6d_hand_example():
    R = rotation_from_6d((1, 1, 0, 0, 1, 0))
    r = np.sqrt(0.5)
    expected = np.array([[r, -r, 0], [r, r, 0], [0, 0, 1]])
    assert_allclose(R, expected, atol=1e-15)
    assert_allclose(R.T @ R, np.eye(3), atol=1e-12)
    assert np.linalg.det(R) == pytest.approx(1.0, abs=1e-12)


@pytest.mark.parametrize("p", [(0, 0, 0, 0, 1, 0), (1, 0, 0, 0, 0, 0), (1, 2, 3, -2, -4, -6)])
def test_6d_degenerate_inputs_raise(p):
    with pytest.raises(DegenerateRotationError):
        rotation_from_6d(p)


def test_6d_orthonormal_on_1000_random_inputs():
    rng = np.random.default_rng(5)
    for p in rng.normal(size=(1000, 6)):
        R = rotation_from_6d(p)
        assert np.abs(R.T @ R - np.eye(3)).max() < 1e-9
        assert abs(np.linalg.det(R) - 1.0) < 1e-9


@settings(max_examples=100, deadline=None)
@given(st.lists(finite, min_size=6, max_size=6), st.floats(0.01, 100), st.floats(0.01, 100))
def test_6d_invariant_to_positive_half_scaling(p, alpha, beta):
    p = np.array(p)
    try:
        R = rotation_from_6d(p)
    except DegenerateRotationError:
        return
    q = np.concatenate([alpha * p[:3], beta * p[3:]])
    assert_allclose(rotation_from_6d(q), R, atol=1e-9)


def test_6d_jacobian_matches_central_differences():
    rng = np.random.default_rng(11)
    p = rng.normal(size=6)
    R, dR = rotation_from_6d_jacobian(p)
    assert_allclose(R, rotation_from_6d(p))
    eps = 1e-6
    for k in range(6):
        e = np.zeros(6)
        e[k] = eps
        num = (rotation_from_6d(p + e) - rotation_from_6d(p - e)) / (2 * eps)
        assert_allclose(dR[:, :, k], num, atol=1e-8)


def test_axis_rotation_is_right_handed():
    assert_allclose(axis_rotation(2, np.pi / 2) @ [1, 0, 0], [0, 1, 0], atol=1e-15)
    assert_allclose(axis_rotation(0, np.pi / 2) @ [0, 1, 0], [0, 0, 1], atol=1e-15)
    assert_allclose(axis_rotation(1, np.pi / 2) @ [0, 0, 1], [1, 0, 0], atol=1e-15)


# -- projection center and corners -------------------------------------------

def test_center_at_principal_point():
    K = CameraIntrinsics(700, 650, 311, 244)
    c = CuboidParams(0, 0, 3, 1, 1, 1, (1, 0, 0, 0, 1, 0), (311, 244, 80, 60))
    assert_allclose(center_from_projection(c, K), [0, 0, 3], atol=1e-15)


def test_center_hand_example():
    K = CameraIntrinsics(100, 100, 0, 0)
    c = CuboidParams(0.5, 0, 2, 1, 1, 1, (1, 0, 0, 0, 1, 0), (50, 0, 100, 10))
    assert_allclose(center_from_projection(c, K), [2.0, 0.0, 2.0])


@settings(max_examples=50, deadline=None)
@given(st.floats(-1, 1), st.floats(-1, 1), st.floats(0.1, 20), st.floats(0.1, 10))
def test_center_is_linear_in_depth(u, v, z, k):
    K = CameraIntrinsics(600, 500, 320, 240)
    c = CuboidParams(u, v, z, 1, 1, 1, (1, 0, 0, 0, 1, 0), (100, 50, 80, 40))
    ck = CuboidParams(u, v, k * z, 1, 1, 1, (1, 0, 0, 0, 1, 0), (100, 50, 80, 40))
    assert_allclose(center_from_projection(ck, K), k * center_from_projection(c, K), rtol=1e-12)


def test_unit_corner_order_is_lexicographic():
    expected = [(x, y, z) for x in (-0.5, 0.5) for y in (-0.5, 0.5) for z in (-0.5, 0.5)]
    assert_array_equal(UNIT_CORNERS, expected)
    assert not UNIT_CORNERS.flags.writeable


def test_unit_box_corners():
    assert_array_equal(box_corners(OrientedBox3D([0, 0, 0], [1, 1, 1])), UNIT_CORNERS)


def test_scaled_box_corners():
    corners = box_corners(OrientedBox3D([0, 0, 0], [2, 4, 6]))
    assert_array_equal(np.abs(corners), np.tile([1, 2, 3], (8, 1)))
    assert len(set(map(tuple, corners))) == 8


def test_quarter_yaw_swaps_extents():
    rotated = box_corners(OrientedBox3D([0, 0, 0], [2, 1, 1], axis_rotation(1, np.pi / 2)))
    plain = box_corners(OrientedBox3D([0, 0, 0], [1, 1, 2]))
    assert as_set(rotated) == as_set(plain)


@settings(max_examples=100, deadline=None)
@given(st.lists(finite, min_size=3, max_size=3), st.lists(st.floats(0.01, 10), min_size=3, max_size=3),
       st.integers(0, 2**32 - 1))
def test_corner_centroid_equals_center(center, dims, seed):
    R = rotation_from_6d(np.random.default_rng(seed).normal(size=6))
    corners = box_corners(OrientedBox3D(center, dims, R))
    assert np.abs(corners.mean(axis=0) - center).max() < 1e-12


def test_box_contains_its_corners_and_not_outside():
    box = OrientedBox3D([1, 2, 3], [1, 2, 3], axis_rotation(1, 0.4))
    assert box.contains(box.corners()).all()
    assert not box.contains([[1, 2, 3 + 5]]).any()


def test_transformed_box_moves_corners_rigidly():
    box = OrientedBox3D([1, 2, 3], [1, 2, 3], axis_rotation(1, 0.4))
    R, t = axis_rotation(2, 0.7), np.array([0.5, -1, 2])
    assert_allclose(box.transformed(R, t).corners(), box.corners() @ R.T + t, atol=1e-12)
