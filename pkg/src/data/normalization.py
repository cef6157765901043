"""
归一化统计量

对 state(12 维)与 action(5 维)逐维 z-score; 标准差下限 1e-6,
常量维度归一化后恒为 0。
"""

from dataclasses import dataclass
from typing import Sequence, Union

import numpy as np
import torch

from src.core.errors import EmptyDatasetError, ShapeError
from src.data.trajectory import Trajectory

STD_FLOOR = 1e-6

ArrayLike = Union[np.ndarray, torch.Tensor]


@dataclass(frozen=True)
class NormStats:
    state_mean: np.ndarray
    state_std: np.ndarray
    action_mean: np.ndarray
    action_std: np.ndarray

    def __post_init__(self):
        if self.state_mean.shape != self.state_std.shape or self.action_mean.shape != self.action_std.shape:
            raise ShapeError("均值与标准差维度不一致")
        if np.any(self.state_std < STD_FLOOR) or np.any(self.action_std < STD_FLOOR):
            raise ShapeError(f"标准差必须 ≥ {STD_FLOOR}")

    def _pair(self, kind: str):
        if kind == "state":
            return self.state_mean, self.state_std
        if kind == "action":
            return self.action_mean, self.action_std
        raise ValueError(f"未知归一化类型: {kind}")

    @classmethod
    def identity(cls, state_dim: int, action_dim: int) -> "NormStats":
        return cls(
            state_mean=np.zeros(state_dim),
            state_std=np.ones(state_dim),
            action_mean=np.zeros(action_dim),
            action_std=np.ones(action_dim),
        )


def compute_norm_stats(dataset: Sequence[Trajectory]) -> NormStats:
    """
    在全部时间步上计算逐维均值/标准差(总体标准差)

    Raises:
        EmptyDatasetError: 数据集为空或没有任何时间步
    """
    if not dataset or sum(t.length for t in dataset) == 0:
        raise EmptyDatasetError("无法在空数据集上计算归一化统计量")
    states = np.concatenate([t.states for t in dataset]).astype(np.float64)
    actions = np.concatenate([t.actions for t in dataset]).astype(np.float64)
    return NormStats(
        state_mean=states.mean(axis=0),
        state_std=np.maximum(states.std(axis=0), STD_FLOOR),
        action_mean=actions.mean(axis=0),
        action_std=np.maximum(actions.std(axis=0), STD_FLOOR),
    )


def _cast(stat: np.ndarray, like: ArrayLike):
    if isinstance(like, torch.Tensor):
        return torch.as_tensor(stat, dtype=like.dtype, device=like.device)
    return stat


def normalize(x: ArrayLike, stats: NormStats, kind: str = "action") -> ArrayLike:
    """x 的最后一维须与统计量维度一致"""
    mean, std = stats._pair(kind)
    if x.shape[-1] != mean.shape[0]:
        raise ShapeError(f"{kind} 维度 {x.shape[-1]} != {mean.shape[0]}")
    return (x - _cast(mean, x)) / _cast(std, x)


def denormalize(x: ArrayLike, stats: NormStats, kind: str = "action") -> ArrayLike:
    mean, std = stats._pair(kind)
    if x.shape[-1] != mean.shape[0]:
        raise ShapeError(f"{kind} 维度 {x.shape[-1]} != {mean.shape[0]}")
    return x * _cast(std, x) + _cast(mean, x)
