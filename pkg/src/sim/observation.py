"""
观测构建

Observation = (三视角图像, 点云, 本体状态 z, 控制频率 c)

z 的 12 个分量(顺序固定):
    0 v            底盘线速度
    1 omega        底盘角速度
    2 j1, 3 j2     关节角
    4 gripper      夹爪闭合指令
    5,6  goal      当前目标点位置(底盘系)
    7,8  nearest   距末端最近的未持有物体位置(底盘系)
    9,10 ee        末端执行器位置(底盘系)
    11 grasped     是否持有物体

特权分量只有位置不含朝向: 物体是圆盘, 末端朝向可由 j1+j2 得到。
"""

import math
from dataclasses import dataclass

import numpy as np

from src.core.errors import ShapeError
from src.sim.kinematics import DEFAULT_ROBOT, RobotSpec
from src.sim.sensors import CLOUD_POINTS, IMAGE_CHANNELS, IMAGE_SIZE, PAD_INTENSITY, VIEW_IDS, cloud_seed, render_views, sample_cloud
from src.sim.tasks import current_target
from src.sim.world import WorldState

STATE_DIM = 12
STATE_FIELDS = ("v", "omega", "j1", "j2", "gripper", "goal_x", "goal_y", "near_x", "near_y", "ee_x", "ee_y", "grasped")


@dataclass(frozen=True)
class Observation:
    views: np.ndarray  # (3, C, H, W) float32
    cloud: np.ndarray  # (N, 4) float32
    state: np.ndarray  # (STATE_DIM,) float32
    freq: float

    def validate(self) -> "Observation":
        """检查类型不变量"""
        expected = (len(VIEW_IDS), IMAGE_CHANNELS, IMAGE_SIZE, IMAGE_SIZE)
        if self.views.shape != expected:
            raise ShapeError(f"views 形状 {self.views.shape} != {expected}")
        if self.cloud.shape != (CLOUD_POINTS, 4):
            raise ShapeError(f"cloud 形状 {self.cloud.shape} != ({CLOUD_POINTS}, 4)")
        if self.state.shape != (STATE_DIM,) or not np.all(np.isfinite(self.state)):
            raise ShapeError("state 维度错误或含非有限值")
        pad = self.cloud[:, 3] == PAD_INTENSITY
        if np.any(self.cloud[~pad, 3] < 0):
            raise ShapeError("点云强度为负但未标记为填充")
        return self


def state_vector(state: WorldState, robot: RobotSpec = DEFAULT_ROBOT) -> np.ndarray:
    """本体状态 + 特权信息"""
    base = state.base
    ee = state.end_effector(robot)
    goal_point, _ = current_target(state)

    nearest = (0.0, 0.0)
    best = math.inf
    for oid in sorted(state.objects):
        if oid == state.held_object:
            continue
        pos = state.objects[oid].position
        dist = math.hypot(pos[0] - ee[0], pos[1] - ee[1])
        if dist < best:
            best, nearest = dist, base.to_body(pos)

    return np.array(
        [
            state.base_velocity[0],
            state.base_velocity[1],
            state.arm_joints[0],
            state.arm_joints[1],
            state.gripper,
            *base.to_body(goal_point),
            *nearest,
            *base.to_body(ee),
            1.0 if state.held_object is not None else 0.0,
        ],
        dtype=np.float32,
    )


def observe(state: WorldState, robot: RobotSpec = DEFAULT_ROBOT) -> Observation:
    """渲染当前状态的完整观测"""
    return Observation(
        views=render_views(state, robot),
        cloud=sample_cloud(state, CLOUD_POINTS, cloud_seed(state.seed, state.step_count)),
        state=state_vector(state, robot),
        freq=float(robot.control_frequency),
    )
