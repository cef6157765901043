"""
DiT 动作头

每个块: 自注意力(动作 token) -> 交叉注意力(条件 token) -> MLP, 均为预归一化残差。
时间步嵌入加到输入动作 token 上; 末层 LayerNorm + MLP 解码输出。

输出参数化 (prediction):
- epsilon: 末层输出直接作为 ε̂
- sample: 末层输出是干净动作块估计 â_0, 再换算为
  ε̂ = (x_t − √ᾱ_t·â_0) / √(1 − ᾱ_t)
两种方式对外都返回 ε̂, 训练损失与 DDIM 采样不区分。
"""

from typing import List, Optional, Sequence, Tuple

import torch
from torch import nn

from src.networks.diffusion import DiffusionSchedule
from src.networks.layers import TimestepEmbedder, mlp

INJECT_MODES = ("concat", "alternate")
PREDICTION_TYPES = ("epsilon", "sample")


def inject_conditions(mode: str, groups: Sequence[torch.Tensor], num_blocks: int) -> List[torch.Tensor]:
    """
    为每个块分配条件序列

    concat: 每个块都看全部条件组的拼接
    alternate: 第 i 个块只看第 (i mod G) 组

    Raises:
        ValueError: 未知模式或没有条件组
    """
    if mode not in INJECT_MODES:
        raise ValueError(f"未知条件注入模式: {mode}")
    if not groups:
        raise ValueError("至少需要一个条件组")
    if mode == "concat":
        merged = torch.cat(list(groups), dim=1)
        return [merged] * num_blocks
    return [groups[i % len(groups)] for i in range(num_blocks)]


class DiTBlock(nn.Module):
    def __init__(self, d_model: int, num_heads: int, mlp_ratio: float = 4.0):
        super().__init__()
        self.norm1 = nn.LayerNorm(d_model)
        self.self_attn = nn.MultiheadAttention(d_model, num_heads, batch_first=True)
        self.norm2 = nn.LayerNorm(d_model)
        self.cross_attn = nn.MultiheadAttention(d_model, num_heads, batch_first=True)
        self.norm3 = nn.LayerNorm(d_model)
        self.mlp = mlp(d_model, int(d_model * mlp_ratio), d_model)

    def forward(self, x: torch.Tensor, cond: torch.Tensor) -> torch.Tensor:
        h = self.norm1(x)
        x = x + self.self_attn(h, h, h, need_weights=False)[0]
        x = x + self.cross_attn(self.norm2(x), cond, cond, need_weights=False)[0]
        return x + self.mlp(self.norm3(x))


class DiTHead(nn.Module):
    """
    扩散动作头

    Args:
        action_dim: 每步动作维度(轻量头 2 或 3, 全身头 5)
        horizon: 动作 token 数 T_a = k
        prediction: 输出参数化, sample 需要 schedule
    """

    def __init__(
        self,
        action_dim: int,
        horizon: int,
        d_model: int,
        num_heads: int,
        num_blocks: int,
        mlp_ratio: float = 4.0,
        inject_mode: str = "concat",
        prediction: str = "epsilon",
        schedule: Optional[DiffusionSchedule] = None,
    ):
        super().__init__()
        if inject_mode not in INJECT_MODES:
            raise ValueError(f"未知条件注入模式: {inject_mode}")
        if prediction not in PREDICTION_TYPES:
            raise ValueError(f"未知输出参数化: {prediction}")
        if prediction == "sample" and schedule is None:
            raise ValueError("sample 参数化需要噪声调度")
        self.prediction = prediction
        self.schedule = schedule
        self.action_dim = action_dim
        self.horizon = horizon
        self.inject_mode = inject_mode
        self.in_proj = nn.Linear(action_dim, d_model)
        self.pos = nn.Parameter(torch.randn(1, horizon, d_model) * 0.02)
        self.t_embed = TimestepEmbedder(d_model)
        self.blocks = nn.ModuleList([DiTBlock(d_model, num_heads, mlp_ratio) for _ in range(num_blocks)])
        self.final_norm = nn.LayerNorm(d_model)
        self.final_mlp = mlp(d_model, d_model, action_dim)

    def forward(
        self,
        x: torch.Tensor,
        t: torch.Tensor,
        groups: Sequence[torch.Tensor],
    ) -> Tuple[torch.Tensor, torch.Tensor]:
        """
        Args:
            x: 带噪动作 (B, k, action_dim)
            t: 时间步 (B,) long
            groups: 有序条件组, 每个 (B, n_g, d)

        Returns:
            (ε̂ (B, k, action_dim), 末个 DiT 块输出 token (B, k, d))
        """
        h = self.in_proj(x) + self.pos + self.t_embed(t)[:, None, :]
        for block, cond in zip(self.blocks, inject_conditions(self.inject_mode, groups, len(self.blocks))):
            h = block(h, cond)
        out = self.final_mlp(self.final_norm(h))
        if self.prediction == "sample":
            out = self.sample_to_eps(x, out, t)
        return out, h

    def sample_to_eps(self, x: torch.Tensor, a0_hat: torch.Tensor, t: torch.Tensor) -> torch.Tensor:
        ab = self.schedule.alpha_bar(t, x)
        return (x - ab.sqrt() * a0_hat) / (1.0 - ab).sqrt()

    def num_parameters(self) -> int:
        return sum(p.numel() for p in self.parameters())
