"""
世界状态与单步推进

WorldState 是不可变值, step() 返回新状态; 同一 (任务, 种子, 动作序列)
得到逐位相同的轨迹。抓取是距离阈值吸附, 不做接触物理。
"""

import math
from dataclasses import dataclass, replace
from typing import Dict, Optional, Tuple

import numpy as np

from src.sim.kinematics import DEFAULT_ROBOT, Pose2D, RobotSpec, arm_fk, unicycle_integrate

# 动作列顺序 (v, ω, Δj1, Δj2, grip), 检查点与数据集共用
ACTION_DIM = 5
ACTION_COLUMNS = ("v", "omega", "dj1", "dj2", "grip")


@dataclass(frozen=True)
class SceneObject:
    """场景物体(圆盘或门闩)"""

    position: Tuple[float, float]
    radius: float
    category: int
    is_latch: bool = False
    toggled: bool = False


@dataclass(frozen=True)
class GoalRegion:
    center: Tuple[float, float]
    radius: float

    def contains(self, point: Tuple[float, float]) -> bool:
        return math.hypot(point[0] - self.center[0], point[1] - self.center[1]) <= self.radius


@dataclass(frozen=True)
class WorldState:
    """
    仿真器状态

    gripper 记录夹爪闭合指令水平(1=闭合), 向上越过阈值抓取、向下越过阈值释放。
    base_velocity 是上一步执行的 (v, ω), 作为本体状态的速度分量。
    """

    base: Pose2D
    arm_joints: Tuple[float, float]
    gripper: float
    held_object: Optional[int]
    objects: Dict[int, SceneObject]
    goal_region: Optional[GoalRegion]
    step_count: int
    task_id: str
    target_id: int
    seed: int = 0
    base_velocity: Tuple[float, float] = (0.0, 0.0)

    def end_effector(self, robot: RobotSpec = DEFAULT_ROBOT) -> Tuple[float, float]:
        return arm_fk(self.base, self.arm_joints, robot.link_lengths)

    @property
    def target(self) -> SceneObject:
        return self.objects[self.target_id]


@dataclass(frozen=True)
class ActionChunk:
    """
    动作块: k 步底盘绝对速度 + 机械臂关节增量 + 夹爪指令
    """

    base: np.ndarray  # (k, 2)
    arm: np.ndarray  # (k, 2)
    gripper: np.ndarray  # (k, 1)

    @property
    def horizon(self) -> int:
        return int(self.base.shape[0])

    def as_array(self) -> np.ndarray:
        return np.concatenate([self.base, self.arm, self.gripper], axis=-1)

    @classmethod
    def from_array(cls, rows: np.ndarray) -> "ActionChunk":
        rows = np.asarray(rows, dtype=np.float64).reshape(-1, ACTION_DIM)
        return cls(base=rows[:, 0:2].copy(), arm=rows[:, 2:4].copy(), gripper=rows[:, 4:5].copy())

    def row(self, i: int) -> np.ndarray:
        return self.as_array()[i]


def clamp_action(row, robot: RobotSpec = DEFAULT_ROBOT) -> np.ndarray:
    """
    把单步动作限幅到执行器范围

    夹爪列是绝对闭合水平而非增量: 全零动作会张开夹爪并释放手中物体。
    """
    v, omega, dj1, dj2, grip = (float(x) for x in np.asarray(row, dtype=np.float64).reshape(ACTION_DIM))
    return np.array([
        np.clip(v, -robot.max_linear_velocity, robot.max_linear_velocity),
        np.clip(omega, -robot.max_angular_velocity, robot.max_angular_velocity),
        np.clip(dj1, -robot.max_joint_delta, robot.max_joint_delta),
        np.clip(dj2, -robot.max_joint_delta, robot.max_joint_delta),
        np.clip(grip, 0.0, 1.0),
    ])


def _nearest_within(
    objects: Dict[int, SceneObject],
    point: Tuple[float, float],
    radius: float,
    exclude: Optional[int] = None,
) -> Optional[int]:
    best, best_dist = None, radius
    for oid in sorted(objects):
        if oid == exclude:
            continue
        pos = objects[oid].position
        dist = math.hypot(pos[0] - point[0], pos[1] - point[1])
        if dist <= best_dist:
            best, best_dist = oid, dist
    return best


def step(
    state: WorldState,
    action_row,
    dt: Optional[float] = None,
    robot: RobotSpec = DEFAULT_ROBOT,
) -> WorldState:
    """
    推进一步

    动作先限幅(不拒绝); 底盘按独轮车积分, 关节累加增量并限制在 ±π/2,
    夹爪越过 0.5 时抓取末端 0.08 m 内最近的物体或释放手中物体。
    """
    dt = robot.dt if dt is None else dt
    v, omega, dj1, dj2, grip = clamp_action(action_row, robot)
    base = unicycle_integrate(state.base, v, omega, dt)
    limit = robot.joint_limit
    joints = (
        float(np.clip(state.arm_joints[0] + dj1, -limit, limit)),
        float(np.clip(state.arm_joints[1] + dj2, -limit, limit)),
    )
    ee = arm_fk(base, joints, robot.link_lengths)

    objects = dict(state.objects)
    held = state.held_object
    threshold = robot.grasp_threshold
    if state.gripper < threshold <= grip and held is None:
        oid = _nearest_within(objects, ee, robot.grasp_radius)
        if oid is not None:
            if objects[oid].is_latch:
                objects[oid] = replace(objects[oid], toggled=True)
            else:
                held = oid
    elif state.gripper >= threshold > grip and held is not None:
        objects[held] = replace(objects[held], position=ee)
        held = None

    if held is not None:
        objects[held] = replace(objects[held], position=ee)

    return replace(
        state,
        base=base,
        base_velocity=(float(v), float(omega)),
        arm_joints=joints,
        gripper=float(grip),
        held_object=held,
        objects=objects,
        step_count=state.step_count + 1,
    )
