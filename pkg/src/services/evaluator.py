"""
闭环评估服务

rollout: 观测 -> 预测动作块 -> 执行前 stride 行 -> 再次预测, 直到成功或 200 步。
evaluate: 每个任务跑 repeats 轮 × episodes 个回合, 报告成功率均值与标准差(总体)。
评估种子 = seed_offset + r·episodes + e, 与采集种子不重叠但来自同一初始分布。
"""

import csv
import hashlib
from pathlib import Path
from typing import Callable, Dict, List, Optional, Protocol, Sequence, Tuple, Union

import numpy as np
from src.utils.logger import logger

from src.core.errors import ACDiTError, ShapeError
from src.data.windows import batch_from_history
from src.models.eval_data import EpisodeResult, EvalReport, TaskScore
from src.networks.policy import ACDiTPolicy, load_policy
from src.sim.expert import expert_action
from src.sim.kinematics import DEFAULT_ROBOT, RobotSpec
from src.sim.observation import Observation, observe
from src.sim.tasks import MAX_EPISODE_STEPS, phase_of, reset, success
from src.sim.world import WorldState, clamp_action, step

EVAL_SEED_OFFSET = 100000
REPORT_HEADER = ("task", "mean", "std", "n")
WEIGHTS_HEADER = ("step", "wf", "wl", "wr", "wp", "phase")
UNIFORM_WEIGHTS = (0.25, 0.25, 0.25, 0.25)


class Agent(Protocol):
    """闭环智能体: 给出动作块 (k, 5) 与重要性权重 (4,)"""

    horizon: int

    def act(
        self,
        history: Sequence[Observation],
        instruction: Sequence[int],
        state: WorldState,
    ) -> Tuple[np.ndarray, Tuple[float, ...]]:
        ...


class PolicyAgent:
    """包装训练好的策略; 每次决策的初始噪声种子由 (回合种子, 步数) 派生"""

    def __init__(self, policy: ACDiTPolicy):
        self.policy = policy
        self.horizon = policy.config.horizon
        self.history = policy.config.history

    def act(self, history, instruction, state):
        batch = batch_from_history(history, instruction, self.policy.dtype)
        seed = int(np.random.SeedSequence([state.seed, state.step_count, 1]).generate_state(1)[0])
        out = self.policy.predict_actions(batch, seed=seed)
        weights = tuple(float(w) for w in out.weights[0].double())
        return out.actions[0].double().cpu().numpy(), weights


class ExpertAgent:
    """绕过网络直接使用脚本专家(评估框架自检用)"""

    history = 1

    def __init__(self, horizon: int = 2, robot: RobotSpec = DEFAULT_ROBOT):
        self.horizon = horizon
        self.robot = robot

    def act(self, history, instruction, state):
        return expert_action(state, k=self.horizon, robot=self.robot).as_array(), UNIFORM_WEIGHTS


def rollout(
    agent: Agent,
    task: str,
    seed: int,
    stride: int = 1,
    max_steps: int = MAX_EPISODE_STEPS,
    robot: RobotSpec = DEFAULT_ROBOT,
) -> EpisodeResult:
    """
    单回合闭环执行

    Args:
        stride: 每个动作块执行的行数(1..k), 1 表示每步重新规划

    Raises:
        ShapeError: stride 超出动作块长度
    """
    if not 1 <= stride <= agent.horizon:
        raise ShapeError(f"stride={stride} 必须在 [1, {agent.horizon}] 内")
    state, instruction = reset(task, seed, robot)
    history_len = getattr(agent, "history", 1)
    history: List[Observation] = [observe(state, robot)] * history_len

    weights, actions, phases = [], [], []
    pending: List[np.ndarray] = []
    current_w: Tuple[float, ...] = UNIFORM_WEIGHTS
    while not success(state, task) and state.step_count < max_steps:
        if not pending:
            try:
                chunk, current_w = agent.act(history, instruction, state)
            except ACDiTError:
                logger.error(f"rollout 出错: task={task}, seed={seed}, step={state.step_count}")
                raise
            pending = [np.asarray(row, dtype=np.float64) for row in chunk[:stride]]
        row = clamp_action(pending.pop(0), robot)
        phases.append(phase_of(state, task, robot))
        weights.append(list(current_w))
        actions.append([float(x) for x in row])
        state = step(state, row, robot=robot)
        history = (history + [observe(state, robot)])[-history_len:]

    result = EpisodeResult(
        task=task,
        seed=seed,
        success=success(state, task),
        steps=state.step_count,
        weights=weights,
        actions=actions,
        phases=phases,
    )
    logger.debug(f"rollout: task={task}, seed={seed}, success={result.success}, steps={result.steps}")
    return result


def config_hash(policy: ACDiTPolicy) -> str:
    return hashlib.sha256(policy.config.model_dump_json().encode("utf-8")).hexdigest()[:12]


def evaluate(
    agent: Agent,
    tasks: Sequence[str],
    episodes: int = 50,
    repeats: int = 3,
    stride: int = 1,
    seed_offset: int = EVAL_SEED_OFFSET,
    tag: str = "",
    progress: Optional[Callable[[int], None]] = None,
) -> EvalReport:
    """
    多任务评估

    Args:
        tag: 写入报告的配置指纹
        progress: 每完成一个回合回调一次(参数为已完成回合数)
    """
    if episodes < 1 or repeats < 1:
        raise ValueError("episodes 与 repeats 必须 ≥ 1")
    scores = []
    done = 0
    for task in tasks:
        rates = []
        for r in range(repeats):
            hits = 0
            for e in range(episodes):
                result = rollout(agent, task, seed_offset + r * episodes + e, stride)
                hits += int(result.success)
                done += 1
                if progress is not None:
                    progress(done)
            rates.append(100.0 * hits / episodes)
        score = TaskScore(task=task, mean=float(np.mean(rates)), std=float(np.std(rates)), n=episodes, rates=rates)
        logger.info(f"评估 {task}: 成功率 {score.mean:.1f}% ± {score.std:.1f} (n={episodes}×{repeats})")
        scores.append(score)
    return EvalReport(scores=scores, episodes=episodes, repeats=repeats, stride=stride, config_hash=tag)


def evaluate_checkpoint(
    checkpoint: Union[str, Path],
    tasks: Sequence[str],
    episodes: int = 50,
    repeats: int = 3,
    stride: int = 1,
    progress: Optional[Callable[[int], None]] = None,
) -> EvalReport:
    policy = load_policy(checkpoint)
    return evaluate(PolicyAgent(policy), tasks, episodes, repeats, stride, tag=config_hash(policy), progress=progress)


def write_report(report: EvalReport, out: Union[str, Path]) -> Path:
    """CSV (task,mean,std,n) 写到 out, 完整 JSON 写到同名 .json"""
    out = Path(out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(REPORT_HEADER)
        writer.writerows(report.to_rows())
    out.with_suffix(".json").write_text(report.model_dump_json(indent=2), encoding="utf-8")
    logger.info(f"评估报告已写入: {out}")
    return out


# ==================== 权重轨迹 ====================


def phase_summary(result: EpisodeResult) -> Dict[str, float]:
    """各阶段 wl + wr + wp(腕部 + 点云)的平均值"""
    totals: Dict[str, List[float]] = {}
    for w, phase in zip(result.weights, result.phases):
        totals.setdefault(phase, []).append(w[1] + w[2] + w[3])
    return {phase: float(np.mean(v)) for phase, v in totals.items()}


def inspect_weights(
    agent: Agent,
    task: str,
    seed: int,
    out: Union[str, Path],
) -> Tuple[Path, str]:
    """
    导出一回合的重要性权重轨迹

    Returns:
        (CSV 路径, 汇总行)
    """
    result = rollout(agent, task, seed)
    out = Path(out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(WEIGHTS_HEADER)
        for i, (w, phase) in enumerate(zip(result.weights, result.phases)):
            writer.writerow([i, *(f"{x:.8f}" for x in w), phase])

    summary = phase_summary(result)
    drive = summary.get("drive", float("nan"))
    manipulate = summary.get("manipulate", float("nan"))
    line = (
        f"task={task} seed={seed} success={result.success} steps={result.steps} "
        f"wrist+cloud weight: drive={drive:.4f} manipulate={manipulate:.4f}"
    )
    logger.info(f"权重轨迹已写入 {out}: {line}")
    return out, line


__all__ = [
    "Agent",
    "EVAL_SEED_OFFSET",
    "ExpertAgent",
    "PolicyAgent",
    "evaluate",
    "evaluate_checkpoint",
    "inspect_weights",
    "phase_summary",
    "rollout",
    "write_report",
]
