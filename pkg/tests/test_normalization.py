import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.spatial.transform import Rotation

from rgbdgaze.errors import Degenerate, DegenerateRoll, GimbalLock, SingularWarp
from rgbdgaze.normalization import (GenericFaceModel, HeadPose, NormParams, compute_face_center,
                                    compute_normalization, crop_eyes, estimate_head_pose,
                                    normalize, normalize_gaze, normalized_head_rotation,
                                    warp_image, warp_landmarks)
from rgbdgaze.pnp import Intrinsics, project_point, reprojection_cost

MODEL = GenericFaceModel.default()
K = Intrinsics(1000.0, 1000.0, 640.0, 360.0)


def project_model(R, t, model=MODEL):
    return project_point(model.points @ np.asarray(R).T + t, K)


def random_pose(rng):
    R = Rotation.from_euler("YXZ", rng.uniform([-0.5, -0.4, -0.4], [0.5, 0.4, 0.4])).as_matrix()
    t = np.r_[rng.uniform(-150, 150, 2), rng.uniform(400, 900)]
    return R, t


def test_default_model_invariants():
    P = MODEL.points
    np.testing.assert_allclose(P[0] * [-1, 1, 1], P[1])  # eyes mirror about x = 0
    np.testing.assert_allclose(MODEL.interocular_axis, [1, 0, 0])
    with pytest.raises(Degenerate):
        GenericFaceModel(np.zeros((5, 3)))
    with pytest.raises(ValueError):
        GenericFaceModel(np.zeros((4, 3)))


def test_model_file_round_trip(tmp_path):
    MODEL.save(tmp_path / "m.json")
    np.testing.assert_array_equal(GenericFaceModel.load(tmp_path / "m.json").points, MODEL.points)


def test_head_pose_recovery(rng):
    for _ in range(25):
        R, t = random_pose(rng)
        pose = estimate_head_pose(project_model(R, t), MODEL, K)
        ang = Rotation.from_matrix(pose.rotation @ R.T).magnitude()
        assert ang < 1e-6
        assert np.max(np.abs(pose.translation - t)) < 1e-3


def test_head_pose_identity_at_600():
    pose = estimate_head_pose(project_model(np.eye(3), [0, 0, 600]), MODEL, K)
    assert abs(pose.translation[2] - 600) < 1e-3


def test_head_pose_degenerate():
    with pytest.raises(Degenerate):
        estimate_head_pose(np.full((5, 2), 100.0), MODEL, K)
    with pytest.raises(Degenerate):
        estimate_head_pose(np.c_[np.arange(5.0), np.arange(5.0)], MODEL, K)


def test_head_pose_is_local_minimum(rng):
    R, t = random_pose(rng)
    L = project_model(R, t) + rng.normal(scale=1.0, size=(5, 2))
    pose = estimate_head_pose(L, MODEL, K)
    base = reprojection_cost(MODEL.points, L, K, pose.rotation, pose.translation)
    for _ in range(100):
        d = rng.normal(size=6)
        d *= 1e-4 / np.linalg.norm(d)
        Rp = Rotation.from_rotvec(d[:3]).as_matrix() @ pose.rotation
        assert reprojection_cost(MODEL.points, L, K, Rp, pose.translation + d[3:]) >= base - 1e-12


def test_face_center_examples():
    model = GenericFaceModel(np.array([[-30, 0, 0], [30, 0, 0], [0, -40, 20],
                                       [-25, 60, -5], [25, 60, -5.0]]))
    c = compute_face_center(HeadPose(np.eye(3), [0, 0, 1e-9]), model)
    np.testing.assert_allclose(c, [0, -40 / 3, 20 / 3 + 1e-9], atol=1e-9)
    t = np.array([5.0, -7.0, 300.0])
    mean = model.points[:3].mean(axis=0)
    np.testing.assert_allclose(compute_face_center(HeadPose(np.eye(3), t), model), mean + t)
    Rz = np.diag([-1.0, -1.0, 1.0])
    got = compute_face_center(HeadPose(Rz, [0, 0, 500]), model)
    np.testing.assert_allclose(got, [-mean[0], -mean[1], mean[2] + 500], atol=1e-12)


def test_normalization_trivial_cases():
    params = NormParams()
    pose = HeadPose(np.eye(3), [0, 0, 300])
    R, scale, _ = compute_normalization(pose, [0, 0, 300], K, params, MODEL)
    np.testing.assert_allclose(R, np.eye(3), atol=1e-9)
    assert scale == 1.0
    _, scale, _ = compute_normalization(pose, [0, 0, 600], K, params, MODEL)
    assert scale == 0.5


def test_normalization_degenerate_roll():
    # head turned 90 degrees so the eye axis points at the camera
    R = Rotation.from_euler("y", 90, degrees=True).as_matrix()
    pose = HeadPose(R, [0, 0, 500])
    with pytest.raises(DegenerateRoll):
        compute_normalization(pose, [0, 0, 500], K, NormParams(), MODEL)


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_normalization_properties(seed):
    rng = np.random.default_rng(seed)
    R0, t = random_pose(rng)
    L = project_model(R0, t)
    pose = estimate_head_pose(L, MODEL, K)
    c = compute_face_center(pose, MODEL)
    R, scale, warp = compute_normalization(pose, c, K, NormParams(), MODEL)
    assert np.max(np.abs(R @ R.T - np.eye(3))) < 1e-12
    assert abs(np.linalg.det(R) - 1) < 1e-12
    assert abs(np.linalg.norm(scale * c) - 300) < 1e-9
    # roll removal: the fitted eye axis has no vertical component after R
    assert abs((R @ pose.rotation @ MODEL.interocular_axis)[1]) < 1e-12
    Lw = warp_landmarks(L, warp)
    assert Lw[1, 0] > Lw[0, 0]  # subject's left eye stays on the image right
    # the face center lands in the middle of the patch
    h = NormParams().K_virtual @ np.diag([1, 1, scale]) @ R @ c
    np.testing.assert_allclose(h[:2] / h[2], [224, 224], atol=1e-9)


@pytest.mark.parametrize("roll_deg", [-35, -10, 5, 20, 40])
def test_rolled_head_eyes_level(roll_deg):
    R0 = Rotation.from_euler("z", roll_deg, degrees=True).as_matrix()
    L = project_model(R0, [0, 0, 550])
    pose = estimate_head_pose(L, MODEL, K)
    c = compute_face_center(pose, MODEL)
    _, _, warp = compute_normalization(pose, c, K, NormParams(), MODEL)
    Lw = warp_landmarks(L, warp)
    assert abs(Lw[0, 1] - Lw[1, 1]) < 1e-6


def test_normalize_gaze():
    g = np.array([0.3, -0.2, 0.9])
    np.testing.assert_array_equal(normalize_gaze(g, np.eye(3)), g)
    Ry = Rotation.from_euler("y", 90, degrees=True).as_matrix()
    np.testing.assert_allclose(normalize_gaze([0, 0, 1], Ry), Ry @ [0, 0, 1])
    np.testing.assert_allclose(normalize_gaze([0, 0, 1], Ry), [1, 0, 0], atol=1e-15)


@given(st.integers(0, 2**32 - 1))
def test_normalize_gaze_preserves_norm(seed):
    rng = np.random.default_rng(seed)
    R = Rotation.random(random_state=seed).as_matrix()
    g = rng.normal(size=3)
    assert abs(np.linalg.norm(normalize_gaze(g, R)) - np.linalg.norm(g)) < 1e-12


def brute_warp(img, warp, size):
    inv = np.linalg.inv(warp)
    out = np.zeros((size, size))
    H, W = img.shape
    for v in range(size):
        for u in range(size):
            x, y, w = inv @ [u, v, 1.0]
            x, y = x / w, y / w
            acc = 0.0
            for yy in (int(np.floor(y)), int(np.floor(y)) + 1):
                for xx in (int(np.floor(x)), int(np.floor(x)) + 1):
                    if 0 <= xx < W and 0 <= yy < H:
                        acc += (1 - abs(x - xx)) * (1 - abs(y - yy)) * img[yy, xx]
            out[v, u] = acc
    return out


def test_warp_image_identity_and_constant(rng):
    img = rng.integers(0, 255, size=(32, 32)).astype(np.uint8)
    np.testing.assert_array_equal(warp_image(img, np.eye(3), 32), img)
    const = np.full((40, 40), 7.0)
    out = warp_image(const, np.diag([2.0, 2.0, 1.0]), 60)
    np.testing.assert_allclose(out[:78 // 2, :78 // 2], 7.0)
    with pytest.raises(SingularWarp):
        warp_image(img, np.zeros((3, 3)), 8)


def test_warp_image_matches_brute_force():
    img = np.zeros((20, 20))
    img[10, 8] = 100.0
    T = np.array([[1, 0, 3.5], [0, 1, 0], [0, 0, 1.0]])
    np.testing.assert_allclose(warp_image(img, T, 20), brute_warp(img, T, 20), atol=1e-12)
    P = np.array([[0.9, 0.1, 2], [-0.05, 1.1, 1], [1e-3, -2e-3, 1.0]])
    rng = np.random.default_rng(0)
    tex = rng.random((20, 20))
    np.testing.assert_allclose(warp_image(tex, P, 20), brute_warp(tex, P, 20), atol=1e-12)


def test_warp_rgb_channels(rng):
    img = rng.random((16, 16, 3))
    T = np.array([[1, 0, 1.25], [0, 1, -0.5], [0, 0, 1.0]])
    out = warp_image(img, T, 16)
    for ch in range(3):
        np.testing.assert_allclose(out[..., ch], warp_image(img[..., ch], T, 16))


def test_warp_landmarks_consistent_with_image():
    img = np.zeros((100, 100))
    img[40, 30] = 1.0
    T = np.array([[1.0, 0, 5], [0, 1.0, 7], [0, 0, 1]])
    out = warp_image(img, T, 100)
    peak = np.unravel_index(np.argmax(out), out.shape)
    np.testing.assert_allclose(warp_landmarks([[30, 40]], T)[0], [peak[1], peak[0]], atol=0.5)
    L = np.random.default_rng(2).random((5, 2)) * 100
    np.testing.assert_allclose(warp_landmarks(L, np.eye(3)), L)
    with pytest.raises(SingularWarp):
        warp_landmarks([[1.0, 0.0]], np.array([[1, 0, 0], [0, 1, 0], [-1, 0, 1.0]]))


def test_crop_eyes():
    patch = np.arange(448 * 448).reshape(448, 448)
    L = np.full((5, 2), 224.0)
    right, left, clamped = crop_eyes(patch, L, NormParams(flip_left_eye=False))
    np.testing.assert_array_equal(right, patch[168:280, 168:280])
    np.testing.assert_array_equal(left, patch[168:280, 168:280])
    assert clamped == (False, False)
    _, flipped, _ = crop_eyes(patch, L)
    np.testing.assert_array_equal(flipped[:, ::-1], left)
    np.testing.assert_array_equal(flipped[:, ::-1][:, ::-1], flipped)
    L[0] = (10, 440)
    right, _, clamped = crop_eyes(patch, L)
    assert right.shape == (112, 112) and clamped[0]
    np.testing.assert_array_equal(right, patch[336:448, 0:112])


def test_normalized_head_rotation():
    pose = HeadPose(np.eye(3), [0, 0, 500])
    np.testing.assert_allclose(normalized_head_rotation(pose, np.eye(3)), 0, atol=1e-15)
    target = Rotation.from_euler("YXZ", [0.3, -0.2, 0.0]).as_matrix()
    R = Rotation.random(random_state=3).as_matrix()
    pose = HeadPose(R.T @ target, [0, 0, 500])
    roll, pitch, yaw = normalized_head_rotation(pose, R)
    assert abs(roll) < 1e-9
    assert abs(pitch + 0.2) < 1e-9 and abs(yaw - 0.3) < 1e-9
    gimbal = HeadPose(Rotation.from_euler("x", np.pi / 2).as_matrix(), [0, 0, 500])
    with pytest.raises(GimbalLock):
        normalized_head_rotation(gimbal, np.eye(3))


def test_normalize_end_to_end():
    rng = np.random.default_rng(9)
    R0, t = random_pose(rng)
    L = project_model(R0, t)
    image = rng.integers(0, 255, size=(720, 1280, 3)).astype(np.uint8)
    depth = np.full((720, 1280), 600, dtype=np.uint16)
    res, patches = normalize(image, L, K, MODEL, depth=depth)
    assert patches["face"].shape == (448, 448, 3) and patches["face"].dtype == np.uint8
    assert patches["depth"].dtype == np.uint16
    assert patches["right_eye"].shape == (112, 112, 3)
    assert np.all((res.landmarks >= 0) & (res.landmarks <= 448))
