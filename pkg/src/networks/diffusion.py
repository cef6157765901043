"""
扩散调度与采样

- ε 预测参数化(动作头可输出 â_0 再换算)
- 前向加噪 q_sample
- DDIM 确定性采样(η=0), t=0 时 ᾱ_prev 取 1
"""

import math
from dataclasses import dataclass
from typing import Callable, List, Optional, Tuple, Union

import torch

from src.core.errors import TimestepRangeError
from src.numerics.guards import check_finite

COSINE_OFFSET = 0.008
MAX_BETA = 0.999


@dataclass(frozen=True)
class DiffusionSchedule:
    betas: torch.Tensor  # (K,) float64
    alphas: torch.Tensor
    alpha_bars: torch.Tensor

    @property
    def num_steps(self) -> int:
        return int(self.betas.shape[0])

    def check_timestep(self, t: Union[int, torch.Tensor]) -> None:
        t_min, t_max = (int(t), int(t)) if isinstance(t, int) else (int(t.min()), int(t.max()))
        if t_min < 0 or t_max >= self.num_steps:
            raise TimestepRangeError(f"时间步越界: 需要 0 ≤ t < {self.num_steps}")

    def alpha_bar(self, t: Union[int, torch.Tensor], like: torch.Tensor) -> torch.Tensor:
        """按 like 的精度取 ᾱ_t; t 为张量时返回形状 (B, 1, 1)"""
        self.check_timestep(t)
        values = self.alpha_bars.to(device=like.device, dtype=like.dtype)
        if isinstance(t, int):
            return values[t]
        return values[t.long()].reshape(-1, *([1] * (like.dim() - 1)))


def make_schedule(
    K: int,
    kind: str = "linear",
    beta_start: float = 1e-4,
    beta_end: float = 0.02,
) -> DiffusionSchedule:
    """
    构造 K 步噪声调度

    linear: β 在 [beta_start, beta_end] 上线性插值
    cosine: ᾱ(t) = cos²((t/K + s)/(1 + s)·π/2) 的离散化

    Raises:
        ValueError: K < 1 或未知调度类型
    """
    if K < 1:
        raise ValueError(f"扩散步数必须 ≥ 1, 当前 {K}")
    if kind == "linear":
        betas = torch.linspace(beta_start, beta_end, K, dtype=torch.float64)
    elif kind == "cosine":
        def f(t: float) -> float:
            return math.cos((t / K + COSINE_OFFSET) / (1 + COSINE_OFFSET) * math.pi / 2) ** 2

        betas = torch.tensor(
            [min(1 - f(t + 1) / f(t), MAX_BETA) for t in range(K)],
            dtype=torch.float64,
        )
    else:
        raise ValueError(f"未知调度类型: {kind}")
    alphas = 1.0 - betas
    return DiffusionSchedule(betas=betas, alphas=alphas, alpha_bars=torch.cumprod(alphas, dim=0))


def q_sample(
    a0: torch.Tensor,
    t: Union[int, torch.Tensor],
    eps: torch.Tensor,
    schedule: DiffusionSchedule,
) -> torch.Tensor:
    """a_t = √ᾱ_t·a0 + √(1−ᾱ_t)·eps"""
    ab = schedule.alpha_bar(t, a0)
    return ab.sqrt() * a0 + (1 - ab).sqrt() * eps


def ddim_step(x_t: torch.Tensor, eps_hat: torch.Tensor, t: int, schedule: DiffusionSchedule) -> torch.Tensor:
    """η=0 的 DDIM 更新 x_t -> x_{t−1}"""
    ab = schedule.alpha_bar(t, x_t)
    ab_prev = schedule.alpha_bar(t - 1, x_t) if t > 0 else torch.ones((), dtype=x_t.dtype, device=x_t.device)
    x0 = (x_t - (1 - ab).sqrt() * eps_hat) / ab.sqrt()
    return ab_prev.sqrt() * x0 + (1 - ab_prev).sqrt() * eps_hat


# 去噪网络: (x_t, t 批次张量) -> (ε̂, 末层 token)
Denoiser = Callable[[torch.Tensor, torch.Tensor], Tuple[torch.Tensor, torch.Tensor]]


def denoise(
    model: Denoiser,
    noise: torch.Tensor,
    schedule: DiffusionSchedule,
    op: str = "denoise",
) -> Tuple[torch.Tensor, List[torch.Tensor]]:
    """
    从 a_K = noise 出发执行 K 步 DDIM

    Returns:
        (a_0, 每一步末层 token 的列表, 按去噪顺序)

    Raises:
        NonFiniteError: 中间结果出现非有限值, site 标明时间步
    """
    x = noise
    trace: List[torch.Tensor] = []
    batch = noise.shape[0]
    for t in reversed(range(schedule.num_steps)):
        t_batch = torch.full((batch,), t, dtype=torch.long, device=noise.device)
        eps_hat, tokens = model(x, t_batch)
        trace.append(tokens)
        x = check_finite(ddim_step(x, eps_hat, t, schedule), op, site=f"t={t}")
    return x, trace


def sample_noise(shape, dtype: torch.dtype, generator: Optional[torch.Generator] = None) -> torch.Tensor:
    return torch.randn(*shape, dtype=dtype, generator=generator)
