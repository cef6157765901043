"""
合成传感器: 三视角语义图像与点云

图像通道:
    0 占用(物体、机器人底盘投影)
    1 物体类别强度
    2 目标区域标记

栅格映射(每个视角一个体坐标系, 边长 extent, 32×32):
    局部点 (u, w) -> i = floor((u + extent/2) / cell), j = floor((w + extent/2) / cell)
    cell = extent / 32, 图像下标为 image[channel, i, j]
    i 沿视角坐标系 x 轴(前向), j 沿 y 轴(左向)

视角坐标系:
    exterior     原点=底盘中心, 朝向=底盘朝向, extent=4 m
    left_wrist   原点=末端执行器, 朝向=底盘朝向, extent=1 m
    right_wrist  原点=末端沿末端连杆方向前移 0.35 m, 朝向=末端连杆朝向, extent=1 m
"""

import math
from dataclasses import dataclass
from typing import Dict, Tuple

import numpy as np

from src.core.config import get_task_registry
from src.sim.kinematics import DEFAULT_ROBOT, Pose2D, RobotSpec, end_effector_heading
from src.sim.world import WorldState

VIEW_IDS = ("exterior", "left_wrist", "right_wrist")
IMAGE_SIZE = 32
IMAGE_CHANNELS = 3
CLOUD_POINTS = 256
PAD_INTENSITY = -1.0
OBJECT_HEIGHT = 0.1
GOAL_INTENSITY = 0.0
SENSOR_RANGE = 3.5
POINTS_PER_OBJECT = 48
POINTS_PER_GOAL = 64
RIGHT_WRIST_OFFSET = 0.35

VIEW_EXTENTS = {"exterior": 4.0, "left_wrist": 1.0, "right_wrist": 1.0}


@dataclass(frozen=True)
class ViewFrame:
    """视角坐标系(原点 + 朝向 + 边长)"""

    origin: Tuple[float, float]
    theta: float
    extent: float
    size: int = IMAGE_SIZE

    @property
    def cell(self) -> float:
        return self.extent / self.size

    def cell_index(self, point: Tuple[float, float]) -> Tuple[int, int]:
        """世界坐标 -> 栅格下标(可能越界)"""
        local = Pose2D(self.origin[0], self.origin[1], self.theta).to_body(point)
        half = self.extent / 2
        return (
            int(math.floor((local[0] + half) / self.cell)),
            int(math.floor((local[1] + half) / self.cell)),
        )

    def cell_center(self, i: int, j: int) -> Tuple[float, float]:
        """栅格下标 -> 栅格中心世界坐标"""
        half = self.extent / 2
        local = (-half + (i + 0.5) * self.cell, -half + (j + 0.5) * self.cell)
        return Pose2D(self.origin[0], self.origin[1], self.theta).to_world(local)

    def centers(self) -> np.ndarray:
        """全部栅格中心的世界坐标, 形状 (size, size, 2)"""
        half = self.extent / 2
        ticks = -half + (np.arange(self.size) + 0.5) * self.cell
        u, w = np.meshgrid(ticks, ticks, indexing="ij")
        c, s = math.cos(self.theta), math.sin(self.theta)
        x = self.origin[0] + c * u - s * w
        y = self.origin[1] + s * u + c * w
        return np.stack([x, y], axis=-1)


def view_frame(state: WorldState, view_id: str, robot: RobotSpec = DEFAULT_ROBOT) -> ViewFrame:
    """
    获取视角坐标系

    Raises:
        ValueError: 未知视角
    """
    if view_id not in VIEW_EXTENTS:
        raise ValueError(f"未知视角: {view_id}")
    extent = VIEW_EXTENTS[view_id]
    if view_id == "exterior":
        return ViewFrame(state.base.xy, state.base.theta, extent)
    ee = state.end_effector(robot)
    if view_id == "left_wrist":
        return ViewFrame(ee, state.base.theta, extent)
    heading = end_effector_heading(state.base, state.arm_joints)
    origin = (ee[0] + RIGHT_WRIST_OFFSET * math.cos(heading), ee[1] + RIGHT_WRIST_OFFSET * math.sin(heading))
    return ViewFrame(origin, heading, extent)


def _category_intensity() -> Dict[int, float]:
    return {cid: spec.intensity for cid, spec in get_task_registry().categories.items()}


def render_view(state: WorldState, view_id: str, robot: RobotSpec = DEFAULT_ROBOT) -> np.ndarray:
    """
    正交栅格化单个视角

    Returns:
        (3, 32, 32) float32 语义图像; 世界范围外的栅格为 0
    """
    frame = view_frame(state, view_id, robot)
    centers = frame.centers()
    image = np.zeros((IMAGE_CHANNELS, frame.size, frame.size), dtype=np.float32)
    margin = frame.cell / 2
    intensity = _category_intensity()

    def disc(center: Tuple[float, float], radius: float) -> np.ndarray:
        d = np.hypot(centers[..., 0] - center[0], centers[..., 1] - center[1])
        return d <= radius + margin

    image[0][disc(state.base.xy, robot.footprint_radius)] = 1.0

    if state.goal_region is not None:
        goal = np.hypot(
            centers[..., 0] - state.goal_region.center[0],
            centers[..., 1] - state.goal_region.center[1],
        ) <= state.goal_region.radius
        image[2][goal] = 1.0

    for oid in sorted(state.objects):
        obj = state.objects[oid]
        mask = disc(obj.position, obj.radius)
        image[0][mask] = 1.0
        image[1][mask] = np.maximum(image[1][mask], intensity.get(obj.category, 1.0))

    half_world = get_task_registry().world.half_extent
    outside = (np.abs(centers[..., 0]) > half_world) | (np.abs(centers[..., 1]) > half_world)
    image[:, outside] = 0.0
    return image


def render_views(state: WorldState, robot: RobotSpec = DEFAULT_ROBOT) -> np.ndarray:
    """三个视角, 形状 (3, C, H, W), 顺序 exterior/left_wrist/right_wrist"""
    return np.stack([render_view(state, v, robot) for v in VIEW_IDS])


def _disc_samples(rng: np.random.Generator, center, radius: float, count: int) -> np.ndarray:
    r = radius * np.sqrt(rng.random(count))
    a = rng.uniform(-math.pi, math.pi, count)
    return np.stack([center[0] + r * np.cos(a), center[1] + r * np.sin(a)], axis=-1)


def sample_cloud(
    state: WorldState,
    n: int = CLOUD_POINTS,
    seed: int = 0,
    sensor_range: float = SENSOR_RANGE,
) -> np.ndarray:
    """
    深度传感器点云(底盘坐标系)

    物体圆盘 z=0.1, 目标区域 z=0; 第4列为类别强度, 填充行为 −1。
    仅返回圆心距底盘 sensor_range 以内的表面采样。

    Returns:
        (n, 4) float32
    """
    rng = np.random.default_rng(seed)
    intensity = _category_intensity()
    chunks = []
    base = state.base

    def in_range(center, radius) -> bool:
        return math.hypot(center[0] - base.x, center[1] - base.y) <= sensor_range + radius

    for oid in sorted(state.objects):
        obj = state.objects[oid]
        if not in_range(obj.position, obj.radius):
            continue
        xy = _disc_samples(rng, obj.position, obj.radius, POINTS_PER_OBJECT)
        z = np.full((len(xy), 1), OBJECT_HEIGHT)
        value = np.full((len(xy), 1), intensity.get(obj.category, 1.0))
        chunks.append(np.concatenate([xy, z, value], axis=1))

    goal = state.goal_region
    if goal is not None and in_range(goal.center, goal.radius):
        xy = _disc_samples(rng, goal.center, goal.radius, POINTS_PER_GOAL)
        chunks.append(np.concatenate([xy, np.zeros((len(xy), 1)), np.full((len(xy), 1), GOAL_INTENSITY)], axis=1))

    cloud = np.zeros((n, 4), dtype=np.float32)
    cloud[:, 3] = PAD_INTENSITY
    if not chunks:
        return cloud

    points = np.concatenate(chunks, axis=0)
    if len(points) > n:
        keep = np.sort(rng.choice(len(points), size=n, replace=False))
        points = points[keep]

    # 世界系 -> 底盘系
    c, s = math.cos(base.theta), math.sin(base.theta)
    dx, dy = points[:, 0] - base.x, points[:, 1] - base.y
    points[:, 0], points[:, 1] = c * dx + s * dy, -s * dx + c * dy
    cloud[: len(points)] = points.astype(np.float32)
    return cloud


def cloud_seed(episode_seed: int, step_count: int) -> int:
    """由回合种子和步数派生点云采样种子"""
    return int(np.random.SeedSequence([int(episode_seed), int(step_count)]).generate_state(1)[0])


def padding_mask(cloud: np.ndarray) -> np.ndarray:
    """True 表示填充行"""
    return cloud[:, 3] == PAD_INTENSITY
