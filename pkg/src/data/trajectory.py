"""
演示轨迹与专家采集

Trajectory 保存逐步观测和实际执行的单步动作; 动作块在采样时由相邻动作拼出。
机械臂列存的是有效增量 joints_{t+1} − joints_t(限位截断之后)。
"""

from dataclasses import dataclass, field
from typing import Callable, List, Optional

import numpy as np

from src.core.errors import ExpertFailureError, ShapeError, UnreachableTargetError
from src.sim.expert import expert_row
from src.sim.kinematics import DEFAULT_ROBOT, RobotSpec
from src.sim.observation import STATE_DIM, Observation, observe
from src.sim.tasks import MAX_EPISODE_STEPS, PHASES, phase_of, reset, success
from src.sim.world import ACTION_DIM, clamp_action, step
from src.utils.logger import logger

MAX_EXPERT_FAILURES = 10
RESEED_STRIDE = 10007


@dataclass
class Trajectory:
    """一条成功的演示"""

    task: str
    seed: int
    instruction: List[int]
    freq: float
    views: np.ndarray  # (T, 3, C, H, W) float32
    clouds: np.ndarray  # (T, N, 4) float32
    states: np.ndarray  # (T, STATE_DIM) float32
    actions: np.ndarray  # (T, ACTION_DIM) float32
    phases: List[str] = field(default_factory=list)

    def __post_init__(self):
        T = len(self.actions)
        if not (len(self.views) == len(self.clouds) == len(self.states) == T):
            raise ShapeError("观测与动作数量不一致")
        if T > MAX_EPISODE_STEPS:
            raise ShapeError(f"轨迹长度 {T} 超过上限 {MAX_EPISODE_STEPS}")
        if self.states.ndim != 2 or self.states.shape[1] != STATE_DIM:
            raise ShapeError(f"state 形状错误: {self.states.shape}")
        if self.actions.ndim != 2 or self.actions.shape[1] != ACTION_DIM:
            raise ShapeError(f"action 形状错误: {self.actions.shape}")
        if self.phases and len(self.phases) != T:
            raise ShapeError(f"阶段标注数 {len(self.phases)} 与步数 {T} 不一致")
        unknown = set(self.phases) - set(PHASES)
        if unknown:
            raise ShapeError(f"未知阶段: {sorted(unknown)}")

    @property
    def length(self) -> int:
        return len(self.actions)

    def observation(self, t: int) -> Observation:
        return Observation(self.views[t], self.clouds[t], self.states[t], self.freq)

    def __eq__(self, other) -> bool:
        if not isinstance(other, Trajectory):
            return NotImplemented
        return (
            self.task == other.task
            and self.seed == other.seed
            and list(self.instruction) == list(other.instruction)
            and self.freq == other.freq
            and list(self.phases) == list(other.phases)
            and all(
                np.array_equal(getattr(self, name), getattr(other, name))
                for name in ("views", "clouds", "states", "actions")
            )
        )


def _rollout_expert(task: str, seed: int, robot: RobotSpec) -> Optional[Trajectory]:
    state, instruction = reset(task, seed, robot)
    views, clouds, states, actions, phases = [], [], [], [], []

    while not success(state, task) and state.step_count < MAX_EPISODE_STEPS:
        obs = observe(state, robot)
        phases.append(phase_of(state, task, robot))
        row = clamp_action(expert_row(state, task, robot), robot)
        nxt = step(state, row, robot=robot)
        row[2] = nxt.arm_joints[0] - state.arm_joints[0]
        row[3] = nxt.arm_joints[1] - state.arm_joints[1]
        views.append(obs.views)
        clouds.append(obs.cloud)
        states.append(obs.state)
        actions.append(row.astype(np.float32))
        state = nxt

    if not success(state, task) or not actions:
        return None
    return Trajectory(
        task=task,
        seed=int(seed),
        instruction=list(instruction),
        freq=float(robot.control_frequency),
        views=np.stack(views),
        clouds=np.stack(clouds),
        states=np.stack(states),
        actions=np.stack(actions),
        phases=phases,
    )


def record_episode(task: str, seed: int, robot: RobotSpec = DEFAULT_ROBOT) -> Trajectory:
    """
    用脚本专家采集一条成功演示

    失败的回合丢弃并以 seed + 10007·n 重新生成场景。

    Raises:
        ExpertFailureError: 连续 10 次失败
    """
    for attempt in range(MAX_EXPERT_FAILURES):
        episode_seed = seed + RESEED_STRIDE * attempt
        try:
            traj = _rollout_expert(task, episode_seed, robot)
        except UnreachableTargetError as e:
            logger.warning(f"专家目标不可达 (task={task}, seed={episode_seed}): {e}")
            traj = None
        if traj is not None:
            logger.debug(f"采集成功: task={task}, seed={episode_seed}, T={traj.length}")
            return traj
        logger.warning(f"专家失败, 重新生成场景: task={task}, seed={episode_seed}")
    raise ExpertFailureError(f"任务 {task} 从种子 {seed} 起连续 {MAX_EXPERT_FAILURES} 次专家失败")


def record_dataset(
    task: str,
    episodes: int,
    seed_start: int = 0,
    progress: Optional[Callable[[int], None]] = None,
) -> List[Trajectory]:
    """
    采集多条演示, 第 i 条使用种子 seed_start + i

    Args:
        progress: 每完成一条回调一次(参数为已完成条数)
    """
    dataset = []
    for i in range(episodes):
        dataset.append(record_episode(task, seed_start + i))
        if progress is not None:
            progress(i + 1)
    steps = sum(t.length for t in dataset)
    logger.info(f"采集完成: task={task}, 轨迹数={len(dataset)}, 总步数={steps}")
    return dataset
