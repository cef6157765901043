"""
脚本专家

分阶段控制器: 远距离时收臂行驶, 进入 1.4 m 后展开机械臂到就位姿态,
末端到位后闭合(抓取/拨动门闩)或张开(放置)夹爪。专家读取仿真器特权状态,
只用于生成演示数据。
"""

import math
from typing import Optional

import numpy as np

from src.core.errors import UnreachableTargetError
from src.core.config import get_task_registry
from src.sim.kinematics import DEFAULT_ROBOT, RobotSpec
from src.sim.tasks import READY_JOINTS, STOWED_JOINTS, current_target
from src.sim.world import ActionChunk, WorldState, step

UNFOLD_DISTANCE = 1.4
TURN_GAIN = 4.0
DRIVE_GAIN = 2.5
TURN_IN_PLACE = 0.6
MAX_FORWARD = 1.5
MAX_REVERSE = 0.6
ARM_RATE = 0.2
JOINT_TOLERANCE = 0.05
GRASP_TOLERANCE = 0.03
PLACE_TOLERANCE = 0.04


def _arm_delta(current, target) -> np.ndarray:
    delta = np.asarray(target, dtype=np.float64) - np.asarray(current, dtype=np.float64)
    return np.clip(delta, -ARM_RATE, ARM_RATE)


def expert_row(state: WorldState, task: Optional[str] = None, robot: RobotSpec = DEFAULT_ROBOT) -> np.ndarray:
    """
    单步专家动作 (v, ω, Δj1, Δj2, grip)

    Raises:
        UnreachableTargetError: 目标点在世界边界之外
    """
    point, mode = current_target(state, task)
    half = get_task_registry().world.half_extent
    if abs(point[0]) > half or abs(point[1]) > half:
        raise UnreachableTargetError(f"目标点 {point} 超出世界边界 ±{half}")

    if mode == "done":
        return np.array([0.0, 0.0, 0.0, 0.0, state.gripper])

    base = state.base
    bx, by = base.to_body(point)
    dist = math.hypot(bx, by)
    bearing = math.atan2(by, bx)
    ready_reach = robot.reach

    arm_goal = READY_JOINTS if dist < UNFOLD_DISTANCE else STOWED_JOINTS
    dj = _arm_delta(state.arm_joints, arm_goal)

    omega = float(np.clip(TURN_GAIN * bearing, -robot.max_angular_velocity, robot.max_angular_velocity))
    if abs(bearing) > TURN_IN_PLACE:
        v = 0.0
    else:
        v = float(np.clip(DRIVE_GAIN * (dist - ready_reach), -MAX_REVERSE, MAX_FORWARD))

    ee = state.end_effector(robot)
    ee_err = math.hypot(point[0] - ee[0], point[1] - ee[1])
    arm_ready = all(abs(j - r) < JOINT_TOLERANCE for j, r in zip(state.arm_joints, READY_JOINTS))

    if mode == "grasp":
        grip = 1.0 if (ee_err < GRASP_TOLERANCE and arm_ready) else 0.0
    else:
        grip = 0.0 if (ee_err < PLACE_TOLERANCE and arm_ready) else 1.0
    return np.array([v, omega, dj[0], dj[1], grip])


def expert_action(
    state: WorldState,
    task: Optional[str] = None,
    k: int = 2,
    robot: RobotSpec = DEFAULT_ROBOT,
) -> ActionChunk:
    """
    k 步专家动作块(逐步在内部推进仿真得到后续行)
    """
    rows = []
    current = state
    for _ in range(k):
        row = expert_row(current, task, robot)
        rows.append(row)
        current = step(current, row, robot=robot)
    return ActionChunk.from_array(np.stack(rows))
