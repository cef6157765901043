"""
网络模块: 编码器、融合、扩散调度、DiT 动作头与完整策略
"""

from .diffusion import DiffusionSchedule, ddim_step, denoise, make_schedule, q_sample
from .dit import DiTBlock, DiTHead, inject_conditions
from .encoders import CloudTokenizer, Encoders, ImageEncoder, ModalityFeatures, StateEncoder, TextEncoder, farthest_point_sample
from .fusion import STREAM_NAMES, PerceptionFusion, cosine_scores, normalize_weights, plain_concat, pool, reweight
from .policy import ACDiTPolicy, MobilityOutput, PolicyOutput, load_policy, load_policy_config, save_policy, sidecar_path

__all__ = [
    "ACDiTPolicy",
    "CloudTokenizer",
    "DiTBlock",
    "DiTHead",
    "DiffusionSchedule",
    "Encoders",
    "ImageEncoder",
    "ModalityFeatures",
    "MobilityOutput",
    "PerceptionFusion",
    "PolicyOutput",
    "STREAM_NAMES",
    "StateEncoder",
    "TextEncoder",
    "cosine_scores",
    "ddim_step",
    "denoise",
    "farthest_point_sample",
    "inject_conditions",
    "load_policy",
    "load_policy_config",
    "make_schedule",
    "normalize_weights",
    "plain_concat",
    "pool",
    "q_sample",
    "reweight",
    "save_policy",
    "sidecar_path",
]
