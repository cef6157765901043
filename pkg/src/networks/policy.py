"""
AC-DiT 策略

    enc      模态编码器
    fusion   感知自适应融合
    head.mob 轻量动作头 H_l (底盘速度, 或 upper_body 方向下的机械臂列)
    head.manip 全身动作头 H (v, ω, Δj1, Δj2, grip)
    norm     归一化统计量(buffer, 随检查点保存)

推理流程: 编码 -> H_l 完整去噪得到 F_m -> 融合得到 F_v -> H 在 [F_v, F_ℓ+state, F_m] 条件下去噪。
检查点为 ParamStore 格式, 旁边的 <checkpoint>.json 保存 ModelConfig。
"""

import json
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional, Tuple, Union

import numpy as np
import torch
from src.utils.logger import logger
from torch import nn

from src.core.errors import MissingCheckpointError, ShapeError
from src.data.normalization import STD_FLOOR, NormStats
from src.data.windows import ObsBatch
from src.models.config_data import ModelConfig
from src.networks.diffusion import DiffusionSchedule, denoise, make_schedule, sample_noise
from src.networks.dit import DiTHead
from src.networks.encoders import Encoders, ModalityFeatures
from src.networks.fusion import PerceptionFusion, plain_concat
from src.numerics.guards import resolve_dtype
from src.numerics.param_store import ParamStore


@dataclass
class MobilityOutput:
    rows: torch.Tensor  # (B, k, latent_dim) 归一化空间
    latent: torch.Tensor  # F_m (B, K·k, d)


@dataclass
class PolicyOutput:
    actions: torch.Tensor  # (B, k, 5) 原始单位
    weights: torch.Tensor  # (B, 4)
    mobility: Optional[MobilityOutput] = None


class ActionHeads(nn.Module):
    def __init__(self, config: ModelConfig, schedule: DiffusionSchedule):
        super().__init__()
        common = dict(
            horizon=config.horizon,
            d_model=config.d_model,
            num_heads=config.num_heads,
            mlp_ratio=config.mlp_ratio,
            inject_mode=config.inject_mode,
            prediction=config.prediction_type,
            schedule=schedule,
        )
        self.mob = DiTHead(config.latent_action_dim, num_blocks=config.mobility_blocks, **common)
        self.manip = DiTHead(config.action_dim, num_blocks=config.manipulation_blocks, **common)


class NormBuffers(nn.Module):
    def __init__(self, state_dim: int, action_dim: int):
        super().__init__()
        self.register_buffer("state_mean", torch.zeros(state_dim))
        self.register_buffer("state_std", torch.ones(state_dim))
        self.register_buffer("action_mean", torch.zeros(action_dim))
        self.register_buffer("action_std", torch.ones(action_dim))


class ACDiTPolicy(nn.Module):
    def __init__(self, config: ModelConfig):
        super().__init__()
        self.config = config
        self.enc = Encoders(config)
        self.fusion = PerceptionFusion(config)
        self.schedule = make_schedule(
            config.diffusion_steps, config.beta_schedule, config.beta_start, config.beta_end
        )
        self.head = ActionHeads(config, self.schedule)
        self.norm = NormBuffers(config.state_dim, config.action_dim)
        self.to(resolve_dtype(config.dtype))
        logger.info(
            f"策略已构建: 轻量头参数 {self.head.mob.num_parameters():,}, "
            f"全身头参数 {self.head.manip.num_parameters():,}, 总参数 {self.num_parameters():,}"
        )

    @property
    def dtype(self) -> torch.dtype:
        return self.norm.state_mean.dtype

    def num_parameters(self, prefix: str = "") -> int:
        return sum(p.numel() for n, p in self.named_parameters() if n.startswith(prefix))

    # ------------------------------------------------------------------
    # 归一化
    # ------------------------------------------------------------------

    def set_norm_stats(self, stats: NormStats) -> None:
        with torch.no_grad():
            for name in ("state_mean", "state_std", "action_mean", "action_std"):
                getattr(self.norm, name).copy_(torch.as_tensor(getattr(stats, name), dtype=self.dtype))

    def norm_stats(self) -> NormStats:
        def arr(name: str) -> np.ndarray:
            return getattr(self.norm, name).detach().cpu().double().numpy()

        return NormStats(
            state_mean=arr("state_mean"),
            state_std=np.maximum(arr("state_std"), STD_FLOOR),
            action_mean=arr("action_mean"),
            action_std=np.maximum(arr("action_std"), STD_FLOOR),
        )

    def normalize_states(self, z: torch.Tensor) -> torch.Tensor:
        return (z - self.norm.state_mean) / self.norm.state_std

    def normalize_actions(self, a: torch.Tensor) -> torch.Tensor:
        return (a - self.norm.action_mean) / self.norm.action_std

    def denormalize_actions(self, a: torch.Tensor) -> torch.Tensor:
        return a * self.norm.action_std + self.norm.action_mean

    # ------------------------------------------------------------------
    # 条件
    # ------------------------------------------------------------------

    def encode(self, batch: ObsBatch) -> ModalityFeatures:
        batch = batch.to(self.dtype)
        return self.enc(batch.views, batch.clouds, self.normalize_states(batch.states), batch.freq, batch.text)

    def visual_tokens(self, features: ModalityFeatures) -> Tuple[torch.Tensor, torch.Tensor]:
        """F_v 与重要性权重; 关闭融合时为普通拼接 + 均匀权重"""
        if self.config.use_fusion:
            return self.fusion(features)
        return plain_concat(features)

    def mobility_groups(self, features: ModalityFeatures) -> List[torch.Tensor]:
        if self.config.mobility_uses_fusion:
            visual, _ = self.visual_tokens(features)
        else:
            visual, _ = plain_concat(features)
        return [visual, torch.cat([features.lang, features.state], dim=1)]

    def manipulation_groups(
        self,
        features: ModalityFeatures,
        f_v: torch.Tensor,
        f_m: Optional[torch.Tensor],
    ) -> List[torch.Tensor]:
        """有序条件组 [F_v, F_ℓ+state, F_m]; conditioning_direction=none 时没有 F_m"""
        groups = [f_v, torch.cat([features.lang, features.state], dim=1)]
        if f_m is not None:
            groups.append(f_m)
        return groups

    # ------------------------------------------------------------------
    # 去噪
    # ------------------------------------------------------------------

    def _noise(self, batch: int, dim: int, generator: Optional[torch.Generator]) -> torch.Tensor:
        return sample_noise((batch, self.config.horizon, dim), self.dtype, generator)

    def mobility_forward(
        self,
        features: ModalityFeatures,
        generator: Optional[torch.Generator] = None,
        noise: Optional[torch.Tensor] = None,
    ) -> MobilityOutput:
        """轻量头完整去噪, F_m 为每一步末层 token 按去噪顺序的拼接"""
        groups = self.mobility_groups(features)
        B = features.state.shape[0]
        if noise is None:
            noise = self._noise(B, self.config.latent_action_dim, generator)

        def model(x, t):
            return self.head.mob(x, t, groups)

        rows, trace = denoise(model, noise, self.schedule, op="mobility_denoise")
        return MobilityOutput(rows=rows, latent=torch.cat(trace, dim=1))

    def manipulation_eps(
        self,
        x_t: torch.Tensor,
        t: torch.Tensor,
        groups: List[torch.Tensor],
    ) -> torch.Tensor:
        return self.head.manip(x_t, t, groups)[0]

    def conditions(
        self,
        batch: ObsBatch,
        generator: Optional[torch.Generator] = None,
    ) -> Tuple[List[torch.Tensor], torch.Tensor, Optional[MobilityOutput]]:
        """编码并构造全身头的条件组"""
        features = self.encode(batch)
        mobility = None
        f_m = None
        if self.config.conditioning_direction != "none":
            mobility = self.mobility_forward(features, generator)
            f_m = mobility.latent
        f_v, weights = self.visual_tokens(features)
        return self.manipulation_groups(features, f_v, f_m), weights, mobility

    @torch.no_grad()
    def predict_actions(self, batch: ObsBatch, seed: Optional[int] = None) -> PolicyOutput:
        """
        预测动作块

        Args:
            batch: 观测批次, 历史长度须等于配置
            seed: 初始噪声种子; 相同种子与参数给出逐位相同的结果

        Returns:
            PolicyOutput, actions 列顺序 (v, ω, Δj1, Δj2, grip)
        """
        if batch.states.shape[1] != self.config.history:
            raise ShapeError(f"历史长度 {batch.states.shape[1]} != {self.config.history}")
        generator = torch.Generator().manual_seed(seed) if seed is not None else None
        groups, weights, mobility = self.conditions(batch, generator)
        noise = self._noise(batch.batch_size, self.config.action_dim, generator)

        def model(x, t):
            return self.head.manip(x, t, groups)

        rows, _ = denoise(model, noise, self.schedule, op="manipulation_denoise")
        return PolicyOutput(actions=self.denormalize_actions(rows), weights=weights, mobility=mobility)


# ==================== 检查点 ====================


def sidecar_path(path: Union[str, Path]) -> Path:
    path = Path(path)
    return path.with_name(path.name + ".json")


def save_policy(policy: ACDiTPolicy, path: Union[str, Path]) -> Path:
    """写出参数文件与 ModelConfig 旁车文件"""
    path = ParamStore.from_module(policy).save(path)
    sidecar_path(path).write_text(policy.config.model_dump_json(indent=2), encoding="utf-8")
    logger.info(f"检查点已保存: {path}")
    return path


def load_policy_config(path: Union[str, Path]) -> ModelConfig:
    sidecar = sidecar_path(path)
    if not Path(path).exists() or not sidecar.exists():
        raise MissingCheckpointError(f"检查点或其配置文件不存在: {path}")
    return ModelConfig(**json.loads(sidecar.read_text(encoding="utf-8")))


def load_policy(path: Union[str, Path], config: Optional[ModelConfig] = None) -> ACDiTPolicy:
    """
    从检查点重建策略

    Args:
        config: 覆盖旁车文件中的结构配置(须与参数形状一致)

    Raises:
        MissingCheckpointError: 检查点不存在
    """
    if not Path(path).exists():
        raise MissingCheckpointError(f"检查点不存在: {path}")
    config = config or load_policy_config(path)
    policy = ACDiTPolicy(config)
    ParamStore.load(path).load_into(policy, strict=True)
    policy.eval()
    logger.info(f"检查点已加载: {path}")
    return policy
