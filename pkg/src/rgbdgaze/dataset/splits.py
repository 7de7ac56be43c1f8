"""Subject-level train/test assignment and the five cross-validation folds."""

from __future__ import annotations

import json
from enum import IntEnum

SUBJECTS = tuple(f"p{i:03d}" for i in range(12))
TEST_SUBJECTS = ("p000", "p005", "p006")
TRAIN_SUBJECTS = tuple(s for s in SUBJECTS if s not in TEST_SUBJECTS)

SAMPLE_COUNTS = {
    "p000": 9487, "p001": 9464, "p002": 18833, "p003": 9812, "p004": 10477, "p005": 8666,
    "p006": 9603, "p007": 9688, "p008": 8652, "p009": 9469, "p010": 19593, "p011": 9230,
}
# fold -> validation subjects
FOLD_VALIDATION = {
    1: ("p001", "p002"),
    2: ("p004", "p009"),
    3: ("p007", "p008"),
    4: ("p003", "p011"),
    5: ("p010",),
}
FOLD_TRAIN_COUNTS = {1: 76921, 2: 85272, 3: 86878, 4: 86176, 5: 85625}


def split_assign(subject: str) -> dict:
    """``{"set": "train"|"test", "folds": {k: "train"|"val"}}``; test subjects have no folds."""
    if subject not in SUBJECTS:
        raise KeyError(f"unknown subject {subject!r}")
    if subject in TEST_SUBJECTS:
        return {"set": "test", "folds": {}}
    return {"set": "train",
            "folds": {k: "val" if subject in v else "train" for k, v in FOLD_VALIDATION.items()}}


def fold_subjects(fold: int) -> tuple[tuple, tuple]:
    """(training subjects, validation subjects) of a fold."""
    val = FOLD_VALIDATION[fold]
    return tuple(s for s in TRAIN_SUBJECTS if s not in val), val


def set_size(subjects) -> int:
    return sum(SAMPLE_COUNTS[s] for s in subjects)


def splits_json() -> str:
    return json.dumps({
        "test": list(TEST_SUBJECTS), "train": list(TRAIN_SUBJECTS),
        "folds": {str(k): {"train": list(fold_subjects(k)[0]), "val": list(v)}
                  for k, v in FOLD_VALIDATION.items()},
        "samples": SAMPLE_COUNTS,
    }, indent=2)


class Phase(IntEnum):
    SinglePointSingleSample = 1
    SinglePointContinuous = 2
    MovingPointContinuous = 3


PHASE_RANGES = {Phase.SinglePointSingleSample: (0, 100),
                Phase.SinglePointContinuous: (100, 122),
                Phase.MovingPointContinuous: (122, 132)}


def phase_of(recording_index: int) -> Phase:
    i = int(recording_index)
    for phase, (lo, hi) in PHASE_RANGES.items():
        if lo <= i < hi:
            return phase
    raise ValueError(f"recording index {i} outside [0, 132)")
