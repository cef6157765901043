"""
消融实验

    Exp1  仅 2D 视角(点云替换为 null token), 无融合, 无移动条件
    Exp2  + 点云
    Exp3  + 移动条件 (conditioning_direction=mobility)
    Exp4  + 感知自适应融合(完整模型)

每个配置在 ablation_seeds 个训练种子上各训练一次并评估, 报告跨种子平均成功率和相对 Exp1 的增益。
"""

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, List, Optional, Sequence, Union

import numpy as np

from src.data.storage import load_dataset
from src.data.trajectory import Trajectory
from src.models.config_data import TrainConfig
from src.models.eval_data import AblationRow
from src.networks.policy import load_policy
from src.services.evaluator import PolicyAgent, config_hash, evaluate
from src.services.trainer import train_two_stage
from src.utils.logger import logger

ABLATION_HEADER = ("exp", "2d", "3d", "pma", "mbc", "mean", "gain")


@dataclass(frozen=True)
class Experiment:
    name: str
    use_cloud: bool
    use_fusion: bool
    mobility: bool

    def apply(self, base: TrainConfig, seed: int) -> TrainConfig:
        return base.model_copy(update={
            "use_cloud": self.use_cloud,
            "use_fusion": self.use_fusion,
            "conditioning_direction": "mobility" if self.mobility else "none",
            "seed": seed,
        })


EXPERIMENTS = (
    Experiment("Exp1", use_cloud=False, use_fusion=False, mobility=False),
    Experiment("Exp2", use_cloud=True, use_fusion=False, mobility=False),
    Experiment("Exp3", use_cloud=True, use_fusion=False, mobility=True),
    Experiment("Exp4", use_cloud=True, use_fusion=True, mobility=True),
)


def run_experiment(
    experiment: Experiment,
    base: TrainConfig,
    out_dir: Path,
    dataset: Sequence[Trajectory],
    progress: Optional[Callable[[str], None]] = None,
) -> List[float]:
    """训练并评估一个配置, 返回每个训练种子的平均成功率"""
    rates = []
    for s in range(base.ablation_seeds):
        config = experiment.apply(base, base.seed + s)
        run_dir = out_dir / experiment.name.lower() / f"seed{s}"
        result = train_two_stage(config, run_dir, dataset)
        policy = load_policy(result.checkpoint)
        report = evaluate(
            PolicyAgent(policy),
            config.task_list(),
            config.eval_episodes,
            config.eval_repeats,
            tag=config_hash(policy),
        )
        rates.append(report.mean)
        logger.info(f"{experiment.name} seed{s}: 成功率 {report.mean:.1f}%")
        if progress is not None:
            progress(f"{experiment.name} seed{s}")
    return rates


def ablate(
    base: TrainConfig,
    out_dir: Union[str, Path],
    dataset: Optional[Sequence[Trajectory]] = None,
    experiments: Sequence[Experiment] = EXPERIMENTS,
    progress: Optional[Callable[[str], None]] = None,
) -> List[AblationRow]:
    out_dir = Path(out_dir)
    if dataset is None:
        dataset = load_dataset(base.dataset_path)
    rows: List[AblationRow] = []
    baseline = None
    for exp in experiments:
        per_seed = run_experiment(exp, base, out_dir, dataset, progress)
        mean = float(np.mean(per_seed))
        if baseline is None:
            baseline = mean
        rows.append(AblationRow(
            exp=exp.name,
            use_3d=exp.use_cloud,
            pma=exp.use_fusion,
            mbc=exp.mobility,
            mean=mean,
            gain=mean - baseline,
            per_seed=per_seed,
        ))
    return rows


def write_ablation(rows: Sequence[AblationRow], out: Union[str, Path]) -> Path:
    out = Path(out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(ABLATION_HEADER)
        writer.writerows(row.to_row() for row in rows)
    logger.info(f"消融表已写入: {out}")
    return out
