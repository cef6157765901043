"""
任务: 重置、成功判定、阶段标注

任务参数来自 config/tasks.yaml。
"""

import math
from typing import List, Optional, Tuple

import numpy as np
from src.utils.logger import logger

from src.core.config import get_task_registry
from src.core.errors import UnknownTaskError
from src.models.task_data import TaskSpec
from src.sim.kinematics import DEFAULT_ROBOT, Pose2D, RobotSpec, arm_fk
from src.sim.vocab import encode_instruction
from src.sim.world import GoalRegion, SceneObject, WorldState

STOWED_JOINTS = (1.2, -1.5)
LATCH_CATEGORY = 3
READY_JOINTS = (0.0, 0.0)
TEXT_TOKENS = 8
MAX_EPISODE_STEPS = 200

PHASES = ("drive", "approach", "manipulate")
DRIVE_DISTANCE = 1.2
MANIPULATE_DISTANCE = 0.15
_PLACEMENT_ATTEMPTS = 200


def task_names() -> List[str]:
    return list(get_task_registry().tasks)


def get_task(task: str) -> TaskSpec:
    """
    查询任务定义

    Raises:
        UnknownTaskError: 任务不在注册表中
    """
    tasks = get_task_registry().tasks
    if task not in tasks:
        raise UnknownTaskError(f"未知任务: {task} (可选: {', '.join(tasks)})")
    return tasks[task]


def _polar(rng: np.random.Generator, origin: Tuple[float, float], dist_range) -> Tuple[float, float]:
    dist = rng.uniform(dist_range[0], dist_range[1])
    bearing = rng.uniform(-math.pi, math.pi)
    return (origin[0] + dist * math.cos(bearing), origin[1] + dist * math.sin(bearing))


def _inside(point, bound: float) -> bool:
    return abs(point[0]) <= bound and abs(point[1]) <= bound


def _far_from(point, others, min_dist: float) -> bool:
    return all(math.hypot(point[0] - o[0], point[1] - o[1]) >= min_dist for o in others)


def reset(task: str, seed: int, robot: RobotSpec = DEFAULT_ROBOT) -> Tuple[WorldState, List[int]]:
    """
    按种子随机生成初始状态

    Args:
        task: 任务名
        seed: 随机种子

    Returns:
        (初始状态, 指令 id 序列)
    """
    spec = get_task(task)
    registry = get_task_registry()
    world = registry.world
    rng = np.random.default_rng(seed)
    bound = world.half_extent - 0.5

    lo, hi = world.base_xy_range
    base = Pose2D(rng.uniform(lo, hi), rng.uniform(lo, hi), rng.uniform(-math.pi, math.pi))
    category = int(rng.choice(spec.target_categories))
    radius = world.latch_radius if spec.latch else world.object_radius

    joints = STOWED_JOINTS
    gripper = 0.0
    held = None
    if spec.start_holding:
        target_pos = arm_fk(base, joints, robot.link_lengths)
        gripper = 1.0
        held = 0
    else:
        for _ in range(_PLACEMENT_ATTEMPTS):
            target_pos = _polar(rng, base.xy, spec.target_distance)
            if _inside(target_pos, bound):
                break
    objects = {0: SceneObject(position=target_pos, radius=radius, category=category, is_latch=spec.latch)}

    goal = None
    if spec.has_goal_region:
        anchor = base.xy if spec.start_holding else target_pos
        for _ in range(_PLACEMENT_ATTEMPTS):
            center = _polar(rng, anchor, spec.goal_distance)
            if _inside(center, bound) and _far_from(center, [target_pos], spec.goal_radius + 0.5):
                break
        goal = GoalRegion(center=center, radius=spec.goal_radius)

    disc_categories = [c for c in registry.categories if c not in (category, LATCH_CATEGORY)]
    n_distractors = int(rng.integers(world.distractor_count[0], world.distractor_count[1] + 1))
    occupied = [base.xy, target_pos] + ([goal.center] if goal else [])
    for k in range(n_distractors):
        for _ in range(_PLACEMENT_ATTEMPTS):
            pos = _polar(rng, base.xy, (0.8, 3.5))
            if _inside(pos, bound) and _far_from(pos, occupied, world.distractor_min_separation):
                break
        else:
            continue
        occupied.append(pos)
        objects[k + 1] = SceneObject(
            position=pos,
            radius=world.object_radius,
            category=int(rng.choice(disc_categories)),
        )

    color = registry.categories[category].word
    instruction = encode_instruction(spec.instruction.format(color=color), TEXT_TOKENS)
    state = WorldState(
        base=base,
        arm_joints=joints,
        gripper=gripper,
        held_object=held,
        objects=objects,
        goal_region=goal,
        step_count=0,
        task_id=task,
        target_id=0,
        seed=int(seed),
    )
    logger.debug(f"reset: task={task}, seed={seed}, 物体数={len(objects)}")
    return state, instruction


def success(state: WorldState, task: Optional[str] = None) -> bool:
    """任务成功判定"""
    spec = get_task(task or state.task_id)
    target = state.objects.get(state.target_id)
    if target is None:
        return False
    if spec.success == "held":
        return state.held_object == state.target_id
    if spec.success == "toggled":
        return target.toggled
    return (
        state.held_object != state.target_id
        and state.goal_region is not None
        and state.goal_region.contains(target.position)
    )


def current_target(state: WorldState, task: Optional[str] = None) -> Tuple[Tuple[float, float], str]:
    """
    当前需要到达的位置和动作模式

    Returns:
        (目标点世界坐标, "grasp" | "place" | "done")
    """
    spec = get_task(task or state.task_id)
    if success(state, spec.name):
        return state.target.position, "done"
    if spec.success == "placed" and state.held_object == state.target_id:
        return state.goal_region.center, "place"
    return state.target.position, "grasp"


def phase_of(state: WorldState, task: Optional[str] = None, robot: RobotSpec = DEFAULT_ROBOT) -> str:
    """
    阶段标注: drive(底盘远离目标) / approach(接近中) / manipulate(末端已到位)
    """
    point, mode = current_target(state, task)
    if mode == "done":
        return "manipulate"
    if math.hypot(point[0] - state.base.x, point[1] - state.base.y) > DRIVE_DISTANCE:
        return "drive"
    ee = state.end_effector(robot)
    if math.hypot(point[0] - ee[0], point[1] - ee[1]) > MANIPULATE_DISTANCE:
        return "approach"
    return "manipulate"
