"""Directional-kernel prompting for low-light tracking: reference
operators, a frozen-weight tracker, a gradient verification harness and
benchmark tooling."""

from .boxes import BBox
from .dk_analysis import PrototypeSet, check_directional_selectivity, fd_gradient, soft_min_score
from .dke import BpmParams, DirectionalKernel, bpm_forward, ie_apply, make_dk, tst_mask
from .dpp import dpp_forward, fuse_embed
from .kgp import NORM_MODES, apply_prompt, channel_descriptor, prompt_from_sim, spatial_gate
from .metrics import giou, iou, precision_curves, run_benchmark, success_auc
from .pipeline import ModelConfig, Tracker, decode_corners, init_tracker, locate_loss, track_frame

__version__ = "0.1.0"

__all__ = [
    "BBox", "BpmParams", "DirectionalKernel", "ModelConfig", "NORM_MODES", "PrototypeSet", "Tracker",
    "apply_prompt", "bpm_forward", "channel_descriptor", "check_directional_selectivity",
    "decode_corners", "dpp_forward", "fd_gradient", "fuse_embed", "giou", "ie_apply", "init_tracker",
    "iou", "locate_loss", "make_dk", "precision_curves", "prompt_from_sim", "run_benchmark",
    "soft_min_score", "spatial_gate", "success_auc", "track_frame", "tst_mask",
]
