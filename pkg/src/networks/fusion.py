"""
感知自适应多模态融合

各视觉流(外部视角、左腕、右腕、点云)与语言分别池化并投影到共享空间,
按与语言向量的余弦相似度做 softmax 得到重要性权重, 再按 4·w 缩放拼接成 F_v。
流顺序固定为 (exterior, left_wrist, right_wrist, cloud), 权重导出也按此顺序。
"""

from typing import List, Sequence, Tuple

import torch
import torch.nn.functional as F
from torch import nn

from src.models.config_data import ModelConfig
from src.networks.encoders import ModalityFeatures
from src.networks.layers import mlp

STREAM_NAMES = ("exterior", "left_wrist", "right_wrist", "cloud")
COSINE_EPS = 1e-8


def pool(tokens: torch.Tensor) -> torch.Tensor:
    """沿 token 轴取均值, (B, T, d) -> (B, d)"""
    return tokens.mean(dim=1)


def cosine_scores(visual: torch.Tensor, lang: torch.Tensor, eps: float = COSINE_EPS) -> torch.Tensor:
    """
    ⟨u, ℓ⟩ / (max(‖u‖, ε)·max(‖ℓ‖, ε))

    Args:
        visual: (B, S, d_s)
        lang: (B, d_s)

    Returns:
        (B, S)
    """
    dot = (visual * lang[:, None, :]).sum(-1)
    u_norm = visual.norm(dim=-1).clamp_min(eps)
    l_norm = lang.norm(dim=-1, keepdim=True).clamp_min(eps)
    return dot / (u_norm * l_norm)


def normalize_weights(scores: torch.Tensor, temperature: float = 1.0) -> torch.Tensor:
    """softmax(scores / T), 沿最后一维"""
    if temperature <= 0:
        raise ValueError(f"温度必须为正: {temperature}")
    return F.softmax(scores / temperature, dim=-1)


def reweight(streams: Sequence[torch.Tensor], weights: torch.Tensor, scale_mode: str = "uniform_identity") -> torch.Tensor:
    """
    按流缩放后沿 token 轴拼接

    Args:
        streams: S 个 (B, T_s, d)
        weights: (B, S)
        scale_mode: uniform_identity 乘 S·w(均匀权重时为恒等); raw 直接乘 w
    """
    if weights.shape[-1] != len(streams):
        raise ValueError(f"权重数 {weights.shape[-1]} 与流数 {len(streams)} 不一致")
    factor = float(len(streams)) if scale_mode == "uniform_identity" else 1.0
    scaled = [s * (factor * weights[:, i])[:, None, None] for i, s in enumerate(streams)]
    return torch.cat(scaled, dim=1)


class PerceptionFusion(nn.Module):
    """三个投影器 + 相似度门控, 在 ACDiTPolicy 中注册为 fusion"""

    def __init__(self, config: ModelConfig):
        super().__init__()
        self.config = config
        d, ds = config.d_model, config.fusion_dim
        self.proj_2d = mlp(d, d, ds)
        self.proj_3d = mlp(d, d, ds)
        self.proj_lang = mlp(d, d, ds)

    def project_and_pool(self, features: ModalityFeatures) -> Tuple[torch.Tensor, torch.Tensor]:
        """
        Returns:
            (视觉向量 (B, 4, d_s), 语言向量 (B, d_s))
        """
        visual: List[torch.Tensor] = [self.proj_2d(pool(v)) for v in features.views]
        visual.append(self.proj_3d(pool(features.cloud)))
        return torch.stack(visual, dim=1), self.proj_lang(pool(features.lang))

    def weights(self, features: ModalityFeatures) -> torch.Tensor:
        """重要性权重 (B, 4)"""
        visual, lang = self.project_and_pool(features)
        return normalize_weights(cosine_scores(visual, lang), self.config.fusion_temperature)

    def forward(self, features: ModalityFeatures) -> Tuple[torch.Tensor, torch.Tensor]:
        """
        Returns:
            (F_v (B, ΣT, d), 权重 (B, 4))
        """
        w = self.weights(features)
        return reweight(features.visual_streams, w, self.config.fusion_scale_mode), w


def plain_concat(features: ModalityFeatures) -> Tuple[torch.Tensor, torch.Tensor]:
    """不做融合时的 F_v: 直接拼接, 权重记为均匀"""
    streams = features.visual_streams
    ref = streams[0]
    uniform = ref.new_full((ref.shape[0], len(streams)), 1.0 / len(streams))
    return torch.cat(streams, dim=1), uniform
