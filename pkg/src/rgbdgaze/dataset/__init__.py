"""Subject files, splits, collection protocol and metrics."""

from .metrics import angular_error, error_heatmap, euclidean_error, mean_errors, px_to_mm
from .protocol import (CircularPath, PenaltyAccountant, gen_phase1_targets,
                       gen_phase2_targets, gen_phase3_path)
from .schema import (ALL_KEYS, SAMPLE_KEYS, SESSION_KEYS, SubjectFile, Violation,
                     empty_subject, read_subject, validate, write_subject)
from .splits import (FOLD_VALIDATION, TEST_SUBJECTS, TRAIN_SUBJECTS, Phase, fold_subjects,
                     phase_of, split_assign)

__all__ = [
    "ALL_KEYS", "FOLD_VALIDATION", "SAMPLE_KEYS", "SESSION_KEYS", "TEST_SUBJECTS",
    "TRAIN_SUBJECTS", "CircularPath", "PenaltyAccountant", "Phase", "SubjectFile",
    "Violation", "angular_error", "empty_subject", "error_heatmap", "euclidean_error",
    "fold_subjects", "gen_phase1_targets", "gen_phase2_targets", "gen_phase3_path",
    "mean_errors", "phase_of", "px_to_mm", "read_subject", "split_assign", "validate",
    "write_subject",
]
