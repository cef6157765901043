"""
滑动窗口采样

窗口 t 包含观测 o_{t−τ..t}(开头不足时重复 o_0)和动作 a_{t..t+k−1};
需要动作填充的窗口(t > T−k)直接丢弃。
"""

from dataclasses import dataclass
from typing import Iterator, List, Optional, Sequence, Tuple

import numpy as np
import torch

from src.core.errors import EmptyDatasetError, WindowRangeError
from src.data.trajectory import Trajectory
from src.sim.observation import Observation


@dataclass(frozen=True)
class WindowSample:
    views: np.ndarray  # (τ+1, 3, C, H, W)
    clouds: np.ndarray  # (τ+1, N, 4)
    states: np.ndarray  # (τ+1, STATE_DIM)
    freq: float
    instruction: np.ndarray  # (T_ℓ,)
    actions: np.ndarray  # (k, ACTION_DIM)

    @property
    def history(self) -> int:
        return len(self.states)

    @property
    def horizon(self) -> int:
        return len(self.actions)


def valid_range(traj: Trajectory, k: int = 2) -> range:
    """合法窗口起点 [0, T−k]"""
    return range(0, max(traj.length - k + 1, 0))


def window_sample(traj: Trajectory, t: int, tau: int = 1, k: int = 2) -> WindowSample:
    """
    取出时刻 t 的窗口

    Raises:
        WindowRangeError: t 不在 [0, T−k] 内
    """
    if not 0 <= t <= traj.length - k:
        raise WindowRangeError(f"窗口起点 {t} 越界: 合法范围 [0, {traj.length - k}]")
    idx = np.clip(np.arange(t - tau, t + 1), 0, None)
    return WindowSample(
        views=traj.views[idx],
        clouds=traj.clouds[idx],
        states=traj.states[idx],
        freq=traj.freq,
        instruction=np.asarray(traj.instruction, dtype=np.int64),
        actions=traj.actions[t:t + k],
    )


@dataclass
class ObsBatch:
    """
    模型输入批次(全部为张量, state 未归一化)

    actions 仅训练时存在, 同样未归一化。
    """

    views: torch.Tensor  # (B, H, V, C, S, S)
    clouds: torch.Tensor  # (B, H, N, 4)
    states: torch.Tensor  # (B, H, STATE_DIM)
    freq: torch.Tensor  # (B, H)
    text: torch.Tensor  # (B, T_ℓ) long
    actions: Optional[torch.Tensor] = None  # (B, k, ACTION_DIM)

    @property
    def batch_size(self) -> int:
        return int(self.states.shape[0])

    def to(self, dtype: torch.dtype) -> "ObsBatch":
        def cast(x):
            return None if x is None else x.to(dtype)

        return ObsBatch(
            views=cast(self.views),
            clouds=cast(self.clouds),
            states=cast(self.states),
            freq=cast(self.freq),
            text=self.text,
            actions=cast(self.actions),
        )


def collate(samples: Sequence[WindowSample], dtype: torch.dtype = torch.float32) -> ObsBatch:
    """把若干窗口堆叠成批次"""
    if not samples:
        raise EmptyDatasetError("空批次")
    history = samples[0].history
    return ObsBatch(
        views=torch.as_tensor(np.stack([s.views for s in samples]), dtype=dtype),
        clouds=torch.as_tensor(np.stack([s.clouds for s in samples]), dtype=dtype),
        states=torch.as_tensor(np.stack([s.states for s in samples]), dtype=dtype),
        freq=torch.tensor([[s.freq] * history for s in samples], dtype=dtype),
        text=torch.as_tensor(np.stack([s.instruction for s in samples]), dtype=torch.long),
        actions=torch.as_tensor(np.stack([s.actions for s in samples]), dtype=dtype),
    )


def batch_from_history(
    history: Sequence[Observation],
    instruction: Sequence[int],
    dtype: torch.dtype = torch.float32,
) -> ObsBatch:
    """推理时由最近 τ+1 个观测构造单样本批次"""
    return ObsBatch(
        views=torch.as_tensor(np.stack([o.views for o in history])[None], dtype=dtype),
        clouds=torch.as_tensor(np.stack([o.cloud for o in history])[None], dtype=dtype),
        states=torch.as_tensor(np.stack([o.state for o in history])[None], dtype=dtype),
        freq=torch.tensor([[o.freq for o in history]], dtype=dtype),
        text=torch.as_tensor(np.asarray(instruction, dtype=np.int64)[None]),
    )


class WindowSampler:
    """
    窗口采样器

    sequential 模式按 (轨迹, t) 顺序遍历; shuffle 模式每个 epoch 取一个排列。
    采样器自带随机状态, 多个采样器可共享同一数据集。
    """

    def __init__(
        self,
        dataset: Sequence[Trajectory],
        tau: int = 1,
        k: int = 2,
        shuffle: bool = True,
        seed: int = 0,
    ):
        self.dataset = dataset
        self.tau = tau
        self.k = k
        self.shuffle = shuffle
        self.rng = np.random.default_rng(seed)
        self.index: List[Tuple[int, int]] = [
            (i, t) for i, traj in enumerate(dataset) for t in valid_range(traj, k)
        ]
        if not self.index:
            raise EmptyDatasetError("数据集中没有任何合法窗口")

    def __len__(self) -> int:
        return len(self.index)

    def epoch(self) -> Iterator[WindowSample]:
        order = self.rng.permutation(len(self.index)) if self.shuffle else range(len(self.index))
        for j in order:
            i, t = self.index[j]
            yield window_sample(self.dataset[i], t, self.tau, self.k)

    def batches(self, batch_size: int, dtype: torch.dtype = torch.float32) -> Iterator[ObsBatch]:
        """无限批次流, epoch 结束后自动开始下一个"""
        buffer: List[WindowSample] = []
        while True:
            for sample in self.epoch():
                buffer.append(sample)
                if len(buffer) == batch_size:
                    yield collate(buffer, dtype)
                    buffer = []
