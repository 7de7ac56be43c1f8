import itertools
import json

import h5py
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from rgbdgaze.dataset import metrics, protocol, schema, splits
from rgbdgaze.errors import SchemaError
from rgbdgaze.geometry import MonitorSpec, angles_to_vector
from rgbdgaze.synthetic import make_subject

M = MonitorSpec(w=3840, h=2160, W=597.0, H=336.0)


@pytest.fixture(scope="module")
def subject():
    return make_subject(60, seed=3, n_sessions=2, images="noise")


@pytest.fixture(scope="module")
def subject_path(tmp_path_factory, subject):
    path = tmp_path_factory.mktemp("ds") / "p001.h5"
    schema.write_subject(path, subject)
    return path


# schema -----------------------------------------------------------------------

def test_synthetic_subject_is_valid(subject):
    assert schema.validate(subject) == []
    assert subject.n_samples == 60 and subject.n_sessions == 2


def test_round_trip_is_bit_identical(subject, subject_path):
    back = schema.read_subject(subject_path)
    assert set(back) == set(schema.ALL_KEYS)
    for k in schema.ALL_KEYS:
        assert back[k].dtype == subject[k].dtype
        assert back[k].tobytes() == np.asarray(subject[k]).tobytes(), k
    assert back["extrinsics"].shape == (2, 3, 4)


def test_file_layout_is_flat(subject_path):
    with h5py.File(subject_path) as f:
        assert sorted(f.keys()) == sorted(schema.ALL_KEYS)
        assert all(isinstance(f[k], h5py.Dataset) for k in f)


def test_three_samples_two_sessions(tmp_path):
    d = make_subject(3, seed=0, n_sessions=2)
    schema.write_subject(tmp_path / "s.h5", d)
    back = schema.read_subject(tmp_path / "s.h5")
    assert back["extrinsics"].shape == (2, 3, 4)
    np.testing.assert_array_equal(back["extrinsics"], d["extrinsics"])


def test_missing_key_names_it(tmp_path, subject_path):
    with h5py.File(subject_path) as src, h5py.File(tmp_path / "bad.h5", "w") as dst:
        for k in src:
            if k != "gaze":
                src.copy(k, dst)
    with pytest.raises(SchemaError) as err:
        schema.read_subject(tmp_path / "bad.h5")
    assert "gaze" in err.value.keys
    assert "gaze" in str(err.value)


def test_wrong_dtype_and_shape_rejected(subject):
    bad = schema.SubjectFile(subject)
    bad["gaze"] = subject["gaze"].astype(np.float32)
    bad["face_landmarks"] = np.zeros((60, 4, 2), np.float32)
    with pytest.raises(SchemaError) as err:
        schema.write_subject("/nonexistent/x.h5", bad)
    assert set(err.value.keys) == {"gaze", "face_landmarks"}


def mutate(d, key, fn):
    out = schema.SubjectFile({k: np.array(v, copy=True) for k, v in d.items()})
    fn(out[key])
    return out


MUTATIONS = {
    "landmark_high": ("face_landmarks", lambda a: a.__setitem__((4, 0, 0), 450.0)),
    "landmark_negative": ("face_landmarks", lambda a: a.__setitem__((2, 3, 1), -1.0)),
    "landmark_nan": ("face_landmarks", lambda a: a.__setitem__((2, 3, 1), np.nan)),
    "recording_index_132": ("recording_index", lambda a: a.__setitem__(7, 132)),
    "recording_index_negative": ("recording_index", lambda a: a.__setitem__(7, -1)),
    "in_recording_negative": ("in_recording_index", lambda a: a.__setitem__(59, -4)),
    "duplicate_tuple": ("recording_index", lambda a: a.__setitem__(59, a[58])),
    "session_out_of_range": ("recording_session", lambda a: a.__setitem__(0, 5)),
    "rotation_scaled": ("face_transformation", lambda a: a.__setitem__(3, a[3] * 1.1)),
    "rotation_reflected": ("face_transformation", lambda a: a.__setitem__((3, 0), -a[3, 0])),
    "center_behind": ("face_center", lambda a: a.__setitem__((1, 2), -500.0)),
    "pitch_out_of_range": ("gaze", lambda a: a.__setitem__((5, 0), 2.0)),
    "gaze_nan": ("gaze", lambda a: a.__setitem__((5, 1), np.nan)),
    "gaze_point_inf": ("gaze_point", lambda a: a.__setitem__((5, 1), np.inf)),
    "head_rotation_nan": ("head_rot_norm", lambda a: a.__setitem__((9, 1), np.nan)),
    "mouse_negative": ("mouse_distance", lambda a: a.__setitem__(0, -1.0)),
    "moving_on_grid": ("on_grid", lambda a: a.__setitem__(-1, True)),
    "extrinsics_not_rotation": ("extrinsics", lambda a: a.__setitem__((0, 0, 0), 3.0)),
    "monitor_zero_width": ("monitor", lambda a: a.__setitem__((1, 0, 0), 0)),
}


@pytest.fixture(scope="module")
def moving_subject(subject):
    # last sample moved into a phase-3 recording so the grid rule applies
    d = mutate(subject, "recording_index", lambda a: a.__setitem__(-1, 125))
    assert schema.validate(d) == []
    return d


@pytest.mark.parametrize("name", sorted(MUTATIONS))
def test_mutation_detected(moving_subject, name):
    key, fn = MUTATIONS[name]
    report = schema.validate(mutate(moving_subject, key, fn))
    assert report, name
    assert key in {v.key for v in report} or name == "duplicate_tuple"
    assert schema.validate(moving_subject) == []


def test_structural_mutations(subject):
    short = schema.SubjectFile(subject)
    short["gaze"] = subject["gaze"][:-1]
    assert any(v.rule == "length" for v in schema.validate(short))
    extra = schema.SubjectFile(subject)
    extra["extrinsics"] = np.concatenate([subject["extrinsics"], subject["extrinsics"][:1]])
    extra["monitor"] = np.concatenate([subject["monitor"], subject["monitor"][:1]])
    assert any(v.key == "extrinsics" for v in schema.validate(extra))
    fewer_monitors = schema.SubjectFile(subject)
    fewer_monitors["monitor"] = subject["monitor"][:1]
    assert any(v.key == "monitor" for v in schema.validate(fewer_monitors))
    missing = schema.SubjectFile({k: v for k, v in subject.items() if k != "on_grid"})
    assert [v.rule for v in schema.validate(missing)] == ["missing key"]


def test_duplicate_tuple_rule(subject):
    key, fn = MUTATIONS["duplicate_tuple"]
    report = schema.validate(mutate(subject, key, fn))
    assert any("unique" in v.rule for v in report)


def test_phase1_index_rule(subject):
    d = mutate(subject, "in_recording_index", lambda a: a.__setitem__(0, 1))
    assert any("single-sample" in v.rule for v in schema.validate(d))


def test_empty_subject_shapes():
    d = schema.empty_subject(2, 3)
    assert d["face_color"].shape == (2, 448, 448, 3) and d["extrinsics"].shape == (3, 3, 4)


# splits -----------------------------------------------------------------------

def test_split_tables():
    assert splits.split_assign("p000")["set"] == "test"
    assert splits.TEST_SUBJECTS == ("p000", "p005", "p006")
    assert splits.split_assign("p009")["folds"][2] == "val"
    assert splits.split_assign("p010")["folds"] == {1: "train", 2: "train", 3: "train",
                                                   4: "train", 5: "val"}
    vals = list(splits.FOLD_VALIDATION.values())
    for a, b in itertools.combinations(vals, 2):
        assert not set(a) & set(b)
    assert sorted(itertools.chain(*vals)) == sorted(splits.TRAIN_SUBJECTS)
    for k in splits.FOLD_VALIDATION:
        tr, va = splits.fold_subjects(k)
        assert not set(tr) & set(splits.TEST_SUBJECTS) and not set(va) & set(splits.TEST_SUBJECTS)
    with pytest.raises(KeyError):
        splits.split_assign("p012")


def test_split_sample_counts():
    # totals printed with the subject table
    assert splits.set_size(splits.TRAIN_SUBJECTS) == 105_218
    assert splits.set_size(splits.TEST_SUBJECTS) == 27_756
    expected = {1: 76_921, 2: 85_272, 3: 86_878, 4: 86_176, 5: 85_625}
    for k, n in expected.items():
        assert splits.set_size(splits.fold_subjects(k)[0]) == n
    doc = json.loads(splits.splits_json())
    assert doc["folds"]["5"]["val"] == ["p010"]


def test_phase_of():
    P = splits.Phase
    assert splits.phase_of(0) == P.SinglePointSingleSample
    assert splits.phase_of(99) == P.SinglePointSingleSample
    assert splits.phase_of(100) == P.SinglePointContinuous
    assert splits.phase_of(121) == P.SinglePointContinuous
    assert splits.phase_of(122) == P.MovingPointContinuous
    assert splits.phase_of(131) == P.MovingPointContinuous
    for bad in (132, -1):
        with pytest.raises(ValueError):
            splits.phase_of(bad)


# protocol ---------------------------------------------------------------------

def test_phase1_targets():
    pts, grid = protocol.gen_phase1_targets(M, 7)
    assert pts.shape == (100, 2) and grid.sum() == 20
    g = pts[grid]
    np.testing.assert_allclose(sorted(set(g[:, 0])), [384, 1152, 1920, 2688, 3456])
    assert g[:, 0].min() == M.w / 10 and g[:, 0].max() == 9 * M.w / 10
    assert g[:, 1].min() == M.h / 8 and g[:, 1].max() == 7 * M.h / 8
    assert len(set(g[:, 1])) == 4
    a, b = protocol.gen_phase1_targets(M, 7)
    np.testing.assert_array_equal(a, pts)
    assert not np.array_equal(protocol.gen_phase1_targets(M, 8)[0], pts)


def test_phase2_targets():
    pts = protocol.gen_phase2_targets(M, 1)
    assert pts.shape == (22, 2)
    inner, perimeter = protocol.phase2_grids(M)
    assert sorted(set(inner[:, 0])) == [480, 1440, 2400, 3360]
    assert sorted(set(inner[:, 1])) == [360, 1080, 1800]
    assert len(perimeter) == 10
    assert perimeter[:, 0].min() == M.w / 100 and perimeter[:, 0].max() == M.w * 99 / 100
    # the 4x3 perimeter excludes its two interior points
    interior = {(x, y) for x in np.unique(perimeter[:, 0])[1:3] for y in [1080.0]}
    assert not interior & {tuple(p) for p in perimeter}


@settings(max_examples=30)
@given(st.integers(0, 2**32 - 1), st.sampled_from([(1920, 1080, 531, 299), (3840, 2160, 597, 336),
                                                    (2560, 1440, 597, 336)]))
def test_targets_on_screen(seed, dims):
    m = MonitorSpec(*dims)
    pts, _ = protocol.gen_phase1_targets(m, seed)
    assert np.all((pts >= 0) & (pts <= [m.w, m.h]))
    pts = protocol.gen_phase2_targets(m, seed)
    assert np.all((pts >= 0) & (pts <= [m.w, m.h]))
    path, acc = protocol.gen_phase3_path(m, seed)
    t = np.linspace(0, 20, 400)
    px = path.sample(t)
    assert np.all((px >= 0) & (px <= [m.w, m.h]))
    mm = path.sample_mm(t)
    r = np.linalg.norm(mm - path.center_mm, axis=1)
    assert np.max(np.abs(r - path.radius_mm)) < 1e-9
    lo, hi = protocol.RADIUS_RANGE
    assert lo * min(m.W, m.H) <= path.radius_mm <= hi * min(m.W, m.H)


def test_penalty_accounting():
    acc = protocol.PenaltyAccountant()
    for _ in range(1000):
        assert not acc.observe((10.0, 10.0), (10.0, 10.0))
    assert acc.total == 0
    acc = protocol.PenaltyAccountant()
    below = [acc.add_distance(4.7) for _ in range(100)]
    assert not any(below) and acc.total == 0
    acc = protocol.PenaltyAccountant()
    flags = [acc.add_distance(5.0) for _ in range(80)]
    assert flags.index(True) == 70  # the 71st sample pushes the total past 350 mm
    assert acc.total == 400


# metrics ----------------------------------------------------------------------

def test_angular_error_examples():
    assert metrics.angular_error([0.1, 0.2], [0.1, 0.2]) == 0
    assert abs(metrics.angular_error([0, 0], [0, np.pi / 2]) - 90) < 1e-12
    assert abs(metrics.angular_error([0.0, 0.0], [0.1, 0.0]) - 5.72958) < 1e-5
    assert abs(metrics.angular_error([0.0, 0.0], [0.1, 0.0]) - np.degrees(0.1)) < 1e-12


@settings(max_examples=200)
@given(st.integers(0, 2**32 - 1))
def test_angular_error_is_a_metric(seed):
    rng = np.random.default_rng(seed)
    a, b, c = rng.uniform([-1.5, -3.1], [1.5, 3.1], size=(3, 2))
    ab, ba = metrics.angular_error(a, b), metrics.angular_error(b, a)
    assert abs(ab - ba) < 1e-12
    assert metrics.angular_error(a, c) <= ab + metrics.angular_error(b, c) + 1e-9
    cos = np.clip(angles_to_vector(a) @ angles_to_vector(b), -1, 1)
    assert abs(ab - np.degrees(np.arccos(cos))) < 1e-6


def test_euclidean_and_means():
    assert metrics.euclidean_error([0, 0], [3, 4]) == 5
    assert metrics.euclidean_error([1, 1], [1, 1]) == 0
    np.testing.assert_allclose(metrics.px_to_mm([M.w, M.h], M), [M.W, M.H])
    assert metrics.mean_errors([1, np.nan, 3], [2, 4, np.nan]) == (2.0, 3.0)


def test_heatmap(tmp_path):
    rng = np.random.default_rng(0)
    pts = rng.uniform([0, 0], [3840, 2160], size=(500, 2))
    hm = metrics.error_heatmap(np.full(500, 2.5), pts, bins=(8, 6), extent=(0, 3840, 0, 2160))
    assert hm.mean.shape == (6, 8)
    np.testing.assert_allclose(hm.mean[~hm.empty], 2.5)
    assert hm.count.sum() == 500
    sparse = metrics.error_heatmap([1.0, 3.0], [[10, 10], [20, 20]], bins=(2, 2),
                                   extent=(0, 100, 0, 100))
    assert sparse.mean[0, 0] == 2.0 and sparse.empty.sum() == 3
    hm.write_csv(tmp_path / "h.csv")
    assert len((tmp_path / "h.csv").read_text().splitlines()) == 7
