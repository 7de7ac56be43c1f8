"""Feature-fusion transformer with a hand-written backward pass."""

from .gradcheck import finite_diff_grad, max_relative_error, relative_error
from .layers import VARIANTS, encoder_block_forward, mhsa_forward, sinusoidal_encoding
from .model import (HyperParams, SubjectBias, apply_subject_bias, attention_maps,
                    fusion_backward, fusion_forward, init_fusion_params, init_mlp_params,
                    mlp_backward, mlp_substitute_forward, mse_loss, project_to_token)
from .optim import (AdamState, FitConfig, FitResult, adam_step, fit_toy,
                    planted_linear_problem, write_trace_csv)
from .serialization import load_params, save_params

__all__ = [
    "VARIANTS", "AdamState", "FitConfig", "FitResult", "HyperParams", "SubjectBias",
    "adam_step", "apply_subject_bias", "attention_maps", "encoder_block_forward",
    "finite_diff_grad", "fit_toy", "fusion_backward", "fusion_forward",
    "init_fusion_params", "init_mlp_params", "load_params", "max_relative_error",
    "mhsa_forward", "mlp_backward", "mlp_substitute_forward", "mse_loss",
    "planted_linear_problem", "project_to_token", "relative_error", "save_params", "sinusoidal_encoding",
    "write_trace_csv",
]
