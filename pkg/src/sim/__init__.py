"""
桌面级移动操作仿真器

2D 平面世界 + 独轮车底盘 + 两连杆机械臂 + 距离阈值夹爪,
合成三视角语义图像、点云和本体状态。
"""

from src.sim.expert import expert_action, expert_row
from src.sim.kinematics import DEFAULT_ROBOT, Pose2D, RobotSpec, arm_fk, unicycle_integrate, wrap_angle
from src.sim.observation import STATE_DIM, Observation, observe, state_vector
from src.sim.sensors import CLOUD_POINTS, IMAGE_SIZE, VIEW_IDS, render_views, sample_cloud
from src.sim.tasks import MAX_EPISODE_STEPS, PHASES, current_target, get_task, phase_of, reset, success, task_names
from src.sim.vocab import PAD_ID, VOCAB_SIZE, decode_instruction, encode_instruction
from src.sim.world import ACTION_DIM, ActionChunk, GoalRegion, SceneObject, WorldState, step

__all__ = [
    "ACTION_DIM",
    "ActionChunk",
    "CLOUD_POINTS",
    "DEFAULT_ROBOT",
    "GoalRegion",
    "IMAGE_SIZE",
    "MAX_EPISODE_STEPS",
    "Observation",
    "PAD_ID",
    "PHASES",
    "Pose2D",
    "RobotSpec",
    "STATE_DIM",
    "SceneObject",
    "VIEW_IDS",
    "VOCAB_SIZE",
    "WorldState",
    "arm_fk",
    "current_target",
    "decode_instruction",
    "encode_instruction",
    "expert_action",
    "expert_row",
    "get_task",
    "observe",
    "phase_of",
    "render_views",
    "reset",
    "sample_cloud",
    "state_vector",
    "step",
    "success",
    "task_names",
    "unicycle_integrate",
    "wrap_angle",
]
