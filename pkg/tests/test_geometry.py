import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from groundcap.geometry import (
    AABB,
    CameraPose,
    InstanceMask,
    PointCloud,
    aabb_from_mask,
    dominant_objects,
    frustum_crop,
    frustum_mask,
    iou,
)

from reference import ref_in_frustum, ref_iou


def make_cloud(n=10, k=2, seed=0):
    rng = np.random.default_rng(seed)
    return PointCloud(rng.normal(size=(n, 3)), rng.normal(size=(n, k)))


# ---------------------------------------------------------------------------
# PointCloud / InstanceMask


def test_cloud_shapes_and_features():
    pc = make_cloud(n=7, k=3)
    assert pc.n_points == 7
    assert pc.n_aux == 3
    assert pc.features().shape == (7, 6)
    assert np.array_equal(pc.features()[:, :3], pc.xyz)


def test_cloud_rejects_bad_input():
    with pytest.raises(ValueError):
        PointCloud(np.zeros((0, 3)), np.zeros((0, 0)))
    with pytest.raises(ValueError):
        PointCloud(np.zeros((4, 2)), np.zeros((4, 0)))
    with pytest.raises(ValueError):
        PointCloud(np.zeros((4, 3)), np.zeros((3, 1)))
    bad = np.zeros((4, 3))
    bad[0, 0] = np.nan
    with pytest.raises(ValueError):
        PointCloud(bad, np.zeros((4, 0)))


def test_cloud_is_immutable():
    pc = make_cloud()
    with pytest.raises(ValueError):
        pc.xyz[0, 0] = 5.0


def test_select_preserves_order():
    pc = make_cloud(n=6)
    sub = pc.select(np.array([4, 1, 3]))
    assert np.array_equal(sub.xyz, pc.xyz[[4, 1, 3]])
    assert np.array_equal(sub.aux, pc.aux[[4, 1, 3]])


def test_mask_validation():
    m = InstanceMask(np.array([2, 0, 5]), "chair", 0)
    assert m.size == 3
    with pytest.raises(ValueError):
        InstanceMask(np.array([], dtype=np.int64), "chair", 0)
    with pytest.raises(ValueError):
        InstanceMask(np.array([1, 1]), "chair", 0)
    with pytest.raises(ValueError):
        InstanceMask(np.array([-1, 2]), "chair", 0)


# ---------------------------------------------------------------------------
# AABB


def test_aabb_basics():
    b = AABB((0, 0, 0), (2, 3, 4))
    assert b.volume == 24.0
    inside = b.contains(np.array([[1, 1, 1], [2, 3, 4], [2.1, 0, 0]]))
    assert inside.tolist() == [True, True, False]
    t = b.translated((1, 0, -1))
    assert np.array_equal(t.lo, [1, 0, -1])
    assert np.array_equal(t.hi, [3, 3, 3])


def test_aabb_rejects_inverted():
    with pytest.raises(ValueError):
        AABB((0, 0, 0), (-1, 1, 1))
    with pytest.raises(ValueError):
        AABB((0, 0, np.inf), (1, 1, np.inf))


def test_aabb_from_mask():
    xyz = np.array([[0.0, 0, 0], [1, 2, 3], [-1, 5, 0.5], [9, 9, 9]])
    pc = PointCloud(xyz, np.zeros((4, 0)))
    m = InstanceMask(np.array([0, 1, 2]), "table", 1)
    box = aabb_from_mask(pc, m)
    assert np.array_equal(box.lo, [-1, 0, 0])
    assert np.array_equal(box.hi, [1, 5, 3])
    with pytest.raises(IndexError):
        aabb_from_mask(pc, InstanceMask(np.array([0, 4]), "table", 1))


# ---------------------------------------------------------------------------
# IoU


def test_iou_hand_case():
    # unit-shifted 2-cubes: intersection 1, union 15
    a = AABB((0, 0, 0), (2, 2, 2))
    b = AABB((1, 1, 1), (3, 3, 3))
    assert iou(a, b) == pytest.approx(1.0 / 15.0, abs=1e-12)


def test_iou_degenerate_boxes():
    flat = AABB((0, 0, 0), (1, 1, 0))
    assert iou(flat, flat) == 1.0
    other = AABB((5, 5, 5), (6, 6, 5))
    assert iou(flat, other) == 0.0
    assert iou(AABB((0, 0, 0), (1, 1, 1)), AABB((5, 5, 5), (6, 6, 6))) == 0.0


box_strategy = st.builds(
    lambda lo, ext: AABB(lo, [lo[i] + ext[i] for i in range(3)]),
    st.lists(st.floats(-5, 5), min_size=3, max_size=3),
    st.lists(st.floats(0.01, 4), min_size=3, max_size=3),
)


@given(box_strategy, box_strategy)
@settings(max_examples=100, deadline=None)
def test_iou_properties(a, b):
    v = iou(a, b)
    assert 0.0 <= v <= 1.0
    assert iou(b, a) == pytest.approx(v, abs=1e-12)
    # translation invariance
    off = (1.25, -2.5, 0.75)
    assert iou(a.translated(off), b.translated(off)) == pytest.approx(v, abs=1e-9)
    # oracle agreement
    ref = ref_iou(
        (tuple(a.lo.tolist()), tuple(a.hi.tolist())),
        (tuple(b.lo.tolist()), tuple(b.hi.tolist())),
    )
    assert v == pytest.approx(ref, abs=1e-12)


def test_iou_self_is_one():
    a = AABB((0.5, -1, 2), (1.5, 0, 3))
    assert iou(a, a) == 1.0


# ---------------------------------------------------------------------------
# camera / frustum


def default_pose(**kw):
    args = dict(fx=100.0, fy=100.0, cx=64.0, cy=48.0,
                world_to_camera=np.eye(4), width=128, height=96,
                near=0.1, far=25.0)
    args.update(kw)
    return CameraPose(**args)


def test_camera_pose_validation():
    default_pose()  # valid
    bad_rot = np.eye(4)
    bad_rot[0, 0] = 2.0
    with pytest.raises(ValueError):
        default_pose(world_to_camera=bad_rot)
    mirror = np.diag([-1.0, 1.0, 1.0, 1.0])
    with pytest.raises(ValueError):
        default_pose(world_to_camera=mirror)
    with pytest.raises(ValueError):
        default_pose(near=5.0, far=1.0)
    with pytest.raises(ValueError):
        default_pose(fx=0.0)


def test_frustum_mask_matches_reference():
    rng = np.random.default_rng(7)
    # random rigid transform
    q = np.linalg.qr(rng.normal(size=(3, 3)))[0]
    if np.linalg.det(q) < 0:
        q[:, 0] *= -1
    T = np.eye(4)
    T[:3, :3] = q
    T[:3, 3] = rng.normal(size=3)
    pose = default_pose(world_to_camera=T)
    pts = rng.uniform(-12, 12, size=(400, 3))
    pc = PointCloud(pts, np.zeros((400, 0)))
    got = frustum_mask(pc, pose)
    ref_pose = dict(fx=pose.fx, fy=pose.fy, cx=pose.cx, cy=pose.cy,
                    w2c=T.tolist(), width=pose.width, height=pose.height,
                    near=pose.near, far=pose.far)
    want = [ref_in_frustum(tuple(p), ref_pose) for p in pts]
    assert got.tolist() == want


def test_frustum_depth_boundaries_inclusive():
    pose = default_pose()
    pts = np.array([[0.0, 0.0, 0.1], [0.0, 0.0, 25.0], [0.0, 0.0, 0.0999],
                    [0.0, 0.0, 25.001], [0.0, 0.0, -3.0]])
    pc = PointCloud(pts, np.zeros((5, 0)))
    assert frustum_mask(pc, pose).tolist() == [True, True, False, False, False]


def test_frustum_crop_none_when_empty():
    pose = default_pose()
    behind = PointCloud(np.array([[0.0, 0.0, -5.0]]), np.zeros((1, 0)))
    assert frustum_crop(behind, pose) is None
    mixed = PointCloud(np.array([[0.0, 0.0, 5.0], [0.0, 0.0, -5.0]]),
                       np.arange(2).reshape(2, 1).astype(float))
    crop = frustum_crop(mixed, pose)
    assert crop.n_points == 1
    assert crop.aux[0, 0] == 0.0


# ---------------------------------------------------------------------------
# dominant objects


def _mask(n, iid):
    base = iid * 100
    return InstanceMask(np.arange(base, base + n), "chair", iid)


def test_dominant_objects_ordering():
    masks = [_mask(5, 0), _mask(9, 1), _mask(7, 2)]
    assert dominant_objects(masks, 3) == [1, 2, 0]
    assert dominant_objects(masks, 2) == [1, 2]
    assert dominant_objects(masks, 10) == [1, 2, 0]


def test_dominant_objects_tie_breaks_to_smaller_id():
    masks = [_mask(4, 3), _mask(4, 1), _mask(2, 0)]
    assert dominant_objects(masks, 1) == [1]
    assert dominant_objects(masks, 2) == [1, 3]
    with pytest.raises(ValueError):
        dominant_objects(masks, 0)
