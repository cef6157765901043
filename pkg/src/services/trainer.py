"""
两阶段训练服务

阶段1: 只训练轻量头 head.mob.* 与模态适配层 enc.adapter.*, 其余参数冻结,
       在归一化动作块的底盘列(upper_body 方向下为机械臂列)上做去噪 MSE。
阶段2: 加载阶段1检查点后训练全模型, 在完整 5 维动作块上做去噪 MSE;
       F_m 在前向中由 H_l 完整去噪得到, 梯度默认回传到 H_l。

优化器 AdamW(β=(0.9, 0.999), ε=1e-8), 余弦退火到最小学习率, 全局梯度裁剪。
"""

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Dict, Iterable, List, Optional, Sequence, Union

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from src.core.errors import DivergenceError, EmptyDatasetError, MissingCheckpointError
from src.data.normalization import compute_norm_stats
from src.data.storage import load_dataset
from src.data.trajectory import Trajectory
from src.data.windows import ObsBatch, WindowSample, WindowSampler, collate
from src.models.config_data import TrainConfig
from src.networks.diffusion import q_sample
from src.networks.policy import ACDiTPolicy, load_policy_config, save_policy
from src.numerics.param_store import ParamStore
from src.utils.logger import logger, run_log

STAGE1_PREFIXES = ("head.mob.", "enc.adapter.")
ADAM_BETAS = (0.9, 0.999)
ADAM_EPS = 1e-8
METRICS_HEADER = ("step", "stage", "loss", "lr")


# ==================== 冻结掩码 ====================


def build_freeze_mask(
    policy: nn.Module,
    stage: int,
    freeze_encoder_trunk: bool = False,
    freeze_mobility_head: bool = False,
) -> Dict[str, bool]:
    """
    参数路径 -> 是否可训练

    buffer 始终不可训练。
    """
    buffers = {name for name, _ in policy.named_buffers()}
    mask = {}
    for name in ParamStore.from_module(policy).names():
        if name in buffers:
            mask[name] = False
        elif stage == 1:
            mask[name] = name.startswith(STAGE1_PREFIXES)
        else:
            frozen = (freeze_encoder_trunk and name.startswith("enc.trunk.")) or (
                freeze_mobility_head and name.startswith("head.mob.")
            )
            mask[name] = not frozen
    return mask


def apply_freeze_mask(policy: nn.Module, mask: Dict[str, bool]) -> ParamStore:
    store = ParamStore.from_module(policy)
    store.set_trainable(mask)
    return store


def make_optimizer(
    params: Iterable[torch.Tensor],
    learning_rate: float,
    weight_decay: float,
) -> torch.optim.AdamW:
    return torch.optim.AdamW(params, lr=learning_rate, betas=ADAM_BETAS, eps=ADAM_EPS, weight_decay=weight_decay)


# ==================== 损失 ====================


def _require_actions(batch: ObsBatch) -> torch.Tensor:
    if batch.actions is None or batch.batch_size == 0:
        raise EmptyDatasetError("训练批次为空或缺少动作目标")
    return batch.actions


def _draw(
    policy: ACDiTPolicy,
    target: torch.Tensor,
    generator: Optional[torch.Generator],
    timesteps: Optional[torch.Tensor],
    noise: Optional[torch.Tensor],
):
    K = policy.schedule.num_steps
    if timesteps is None:
        timesteps = torch.randint(0, K, (target.shape[0],), generator=generator)
    if noise is None:
        noise = torch.randn(target.shape, dtype=target.dtype, generator=generator)
    return timesteps, noise


def stage1_loss(
    policy: ACDiTPolicy,
    batch: ObsBatch,
    generator: Optional[torch.Generator] = None,
    timesteps: Optional[torch.Tensor] = None,
    noise: Optional[torch.Tensor] = None,
) -> torch.Tensor:
    """轻量头去噪 MSE(只用 latent_columns 对应的动作列)"""
    actions = _require_actions(batch).to(policy.dtype)
    features = policy.encode(batch)
    cols = list(policy.config.latent_columns)
    target = policy.normalize_actions(actions)[..., cols]
    timesteps, noise = _draw(policy, target, generator, timesteps, noise)
    x_t = q_sample(target, timesteps, noise, policy.schedule)
    eps_hat, _ = policy.head.mob(x_t, timesteps, policy.mobility_groups(features))
    return F.mse_loss(eps_hat, noise)


def stage2_loss(
    policy: ACDiTPolicy,
    batch: ObsBatch,
    generator: Optional[torch.Generator] = None,
    timesteps: Optional[torch.Tensor] = None,
    noise: Optional[torch.Tensor] = None,
) -> torch.Tensor:
    """全身头去噪 MSE, 条件为 [F_v, F_ℓ+state, F_m]"""
    actions = _require_actions(batch).to(policy.dtype)
    groups, _, _ = policy.conditions(batch, generator)
    target = policy.normalize_actions(actions)
    timesteps, noise = _draw(policy, target, generator, timesteps, noise)
    x_t = q_sample(target, timesteps, noise, policy.schedule)
    return F.mse_loss(policy.manipulation_eps(x_t, timesteps, groups), noise)


STAGE_LOSSES = {1: stage1_loss, 2: stage2_loss}


# ==================== 训练循环 ====================


@dataclass
class TrainResult:
    checkpoint: Path
    metrics: Path
    losses: List[float] = field(default_factory=list)
    stage: int = 2

    @property
    def final_loss(self) -> float:
        return self.losses[-1] if self.losses else math.nan


def metrics_path_for(checkpoint: Union[str, Path]) -> Path:
    path = Path(checkpoint)
    return path.with_name(f"{path.stem}_metrics.csv")


def seed_everything(seed: int) -> None:
    torch.manual_seed(seed)
    np.random.seed(seed)


class Trainer:
    """
    单阶段训练器

    Args:
        config: 训练配置(stage 决定掩码与损失)
        out: 最终检查点路径
        dataset: 已加载的演示; 缺省时从 config.dataset_path 读取
        progress: 每步回调 (step, loss)
    """

    def __init__(
        self,
        config: TrainConfig,
        out: Union[str, Path],
        dataset: Optional[Sequence[Trajectory]] = None,
        progress: Optional[Callable[[int, float], None]] = None,
    ):
        self.config = config
        self.out = Path(out)
        self.dataset = list(dataset) if dataset is not None else None
        self.progress = progress
        self.policy: Optional[ACDiTPolicy] = None

    @property
    def num_steps(self) -> int:
        return self.config.resolved_stage1_steps() if self.config.stage == 1 else self.config.steps

    def _load_data(self) -> List[Trajectory]:
        if self.dataset is None:
            self.dataset = load_dataset(self.config.dataset_path)
        if not self.dataset:
            raise EmptyDatasetError(f"数据集为空: {self.config.dataset_path}")
        return self.dataset

    def _init_policy(self, dataset: Sequence[Trajectory]) -> ACDiTPolicy:
        cfg = self.config
        policy = ACDiTPolicy(cfg.to_model_config())
        init = Path(cfg.init_checkpoint) if cfg.init_checkpoint else None
        has_init = init is not None and init.exists()

        if cfg.stage == 2 and cfg.conditioning_direction != "none" and not has_init:
            raise MissingCheckpointError(
                f"阶段2 (conditioning_direction={cfg.conditioning_direction}) 需要阶段1检查点: {cfg.init_checkpoint or '<未设置>'}"
            )
        if cfg.stage == 2 and has_init:
            stage1_config = load_policy_config(init)
            if stage1_config.latent_action_dim != policy.config.latent_action_dim:
                raise MissingCheckpointError(f"阶段1检查点的条件方向与当前配置不一致: {init}")
            ParamStore.load(init).load_into(policy, strict=True)
            logger.info(f"已加载阶段1检查点: {init}")
        else:
            policy.set_norm_stats(compute_norm_stats(dataset))
        return policy

    def run(self) -> TrainResult:
        with run_log(self.out):
            return self._run()

    def _run(self) -> TrainResult:
        cfg = self.config
        seed_everything(cfg.seed)
        dataset = self._load_data()
        policy = self._init_policy(dataset)
        policy.train()
        self.policy = policy

        mask = build_freeze_mask(policy, cfg.stage, cfg.freeze_encoder_trunk, cfg.freeze_mobility_head)
        store = apply_freeze_mask(policy, mask)
        params = store.trainable_tensors()
        logger.info(
            f"阶段{cfg.stage}开始: 步数={self.num_steps}, 可训练参数 "
            f"{sum(p.numel() for p in params):,}/{store.num_elements():,}"
        )

        optimizer = make_optimizer(params, cfg.learning_rate, cfg.weight_decay)
        scheduler = torch.optim.lr_scheduler.CosineAnnealingLR(
            optimizer, T_max=self.num_steps, eta_min=cfg.min_learning_rate
        )
        sampler = WindowSampler(dataset, tau=cfg.history - 1, k=cfg.horizon, shuffle=True, seed=cfg.seed)
        batches = sampler.batches(cfg.batch_size, policy.dtype)
        generator = torch.Generator().manual_seed(cfg.seed)
        loss_fn = STAGE_LOSSES[cfg.stage]

        metrics = metrics_path_for(self.out)
        metrics.parent.mkdir(parents=True, exist_ok=True)
        losses: List[float] = []
        with open(metrics, "w", newline="", encoding="utf-8") as f:
            writer = csv.writer(f)
            writer.writerow(METRICS_HEADER)
            for step in range(1, self.num_steps + 1):
                lr = optimizer.param_groups[0]["lr"]
                loss = loss_fn(policy, next(batches), generator)
                value = float(loss.detach())
                if not math.isfinite(value):
                    raise DivergenceError(step, value)
                optimizer.zero_grad(set_to_none=True)
                loss.backward()
                torch.nn.utils.clip_grad_norm_(params, cfg.grad_clip)
                optimizer.step()
                scheduler.step()

                losses.append(value)
                writer.writerow([step, cfg.stage, f"{value:.8g}", f"{lr:.8g}"])
                if step % cfg.log_every == 0 or step == 1:
                    logger.info(f"[stage {cfg.stage}] step {step}/{self.num_steps} loss={value:.5f} lr={lr:.2e}")
                if step % cfg.checkpoint_every == 0 and step < self.num_steps:
                    save_policy(policy, self.out.with_name(f"{self.out.stem}_step{step}{self.out.suffix}"))
                if self.progress is not None:
                    self.progress(step, value)

        policy.eval()
        checkpoint = save_policy(policy, self.out)
        logger.info(f"阶段{cfg.stage}完成: 最终 loss={losses[-1]:.5f}, 检查点 {checkpoint}")
        return TrainResult(checkpoint=checkpoint, metrics=metrics, losses=losses, stage=cfg.stage)


def train(
    config: TrainConfig,
    out: Union[str, Path],
    dataset: Optional[Sequence[Trajectory]] = None,
    progress: Optional[Callable[[int, float], None]] = None,
) -> TrainResult:
    return Trainer(config, out, dataset, progress).run()


def train_two_stage(
    config: TrainConfig,
    out_dir: Union[str, Path],
    dataset: Optional[Sequence[Trajectory]] = None,
    progress: Optional[Callable[[int, float], None]] = None,
) -> TrainResult:
    """
    阶段1 + 阶段2 完整流程; conditioning_direction=none 时跳过阶段1

    产物: <out_dir>/stage1.acdt (若有), <out_dir>/stage2.acdt 及各自的 metrics CSV
    """
    out_dir = Path(out_dir)
    if dataset is None:
        dataset = load_dataset(config.dataset_path)
    init = ""
    if config.conditioning_direction != "none":
        stage1 = config.model_copy(update={"stage": 1})
        init = str(train(stage1, out_dir / "stage1.acdt", dataset, progress).checkpoint)
    stage2 = config.model_copy(update={"stage": 2, "init_checkpoint": init})
    return train(stage2, out_dir / "stage2.acdt", dataset, progress)


# ==================== 单样本过拟合 ====================


@dataclass
class OverfitResult:
    policy: ACDiTPolicy
    losses: List[float]
    timestep_losses: List[float]  # 训练结束后按 t 评估的去噪 MSE
    decode_error: float  # 归一化单位下 DDIM 解码与目标的最大绝对误差

    @property
    def eval_loss(self) -> float:
        return float(np.mean(self.timestep_losses))


def overfit_window(
    config: TrainConfig,
    sample: WindowSample,
    dataset: Sequence[Trajectory],
    eval_draws: int = 64,
    decode_seed: int = 0,
) -> OverfitResult:
    """
    在单个窗口上做阶段2训练, 用于检查动作头能否记住一个 (条件, 动作) 对

    批次由 batch_size 份相同窗口组成, 每份各自抽取 t 与噪声。
    """
    seed_everything(config.seed)
    policy = ACDiTPolicy(config.to_model_config())
    policy.set_norm_stats(compute_norm_stats(dataset))
    policy.train()
    params = [p for p in policy.parameters() if p.requires_grad]
    optimizer = make_optimizer(params, config.learning_rate, config.weight_decay)
    scheduler = torch.optim.lr_scheduler.CosineAnnealingLR(
        optimizer, T_max=config.steps, eta_min=config.min_learning_rate
    )
    batch = collate([sample] * config.batch_size, policy.dtype)
    generator = torch.Generator().manual_seed(config.seed)

    losses: List[float] = []
    for step in range(1, config.steps + 1):
        loss = stage2_loss(policy, batch, generator)
        value = float(loss.detach())
        if not math.isfinite(value):
            raise DivergenceError(step, value)
        optimizer.zero_grad(set_to_none=True)
        loss.backward()
        torch.nn.utils.clip_grad_norm_(params, config.grad_clip)
        optimizer.step()
        scheduler.step()
        losses.append(value)
        if step % config.log_every == 0:
            logger.debug(f"[overfit] step {step}/{config.steps} loss={value:.3e}")

    policy.eval()
    evaluation = collate([sample] * eval_draws, policy.dtype)
    eval_generator = torch.Generator().manual_seed(config.seed + 1)
    timestep_losses = []
    with torch.no_grad():
        for t in range(policy.schedule.num_steps):
            timesteps = torch.full((eval_draws,), t, dtype=torch.long)
            loss = stage2_loss(policy, evaluation, eval_generator, timesteps=timesteps)
            timestep_losses.append(float(loss))

        single = collate([sample], policy.dtype)
        target = policy.normalize_actions(single.actions)
        decoded = policy.normalize_actions(policy.predict_actions(single, seed=decode_seed).actions)
        decode_error = float((decoded - target).abs().max())

    logger.info(
        f"单样本过拟合: 训练末 loss={losses[-1]:.3e}, 评估 loss={np.mean(timestep_losses):.3e}, "
        f"解码误差={decode_error:.3e}"
    )
    return OverfitResult(policy=policy, losses=losses, timestep_losses=timestep_losses, decode_error=decode_error)
