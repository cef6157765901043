"""
平面运动学

- 独轮车底盘: 精确圆弧积分
- 两连杆机械臂: 正运动学(与底盘位姿复合)
"""

import math
from dataclasses import dataclass
from typing import Tuple

from src.core.errors import NonFiniteError

TWO_PI = 2.0 * math.pi
STRAIGHT_LINE_OMEGA = 1e-9


def wrap_angle(theta: float) -> float:
    """把角度归一化到 (−π, π]"""
    wrapped = (theta + math.pi) % TWO_PI - math.pi
    if wrapped <= -math.pi:
        wrapped += TWO_PI
    return wrapped


@dataclass(frozen=True)
class Pose2D:
    """底盘位姿 (x, y 米; theta 弧度, 始终在 (−π, π] 内)"""

    x: float
    y: float
    theta: float

    def __post_init__(self):
        object.__setattr__(self, "theta", wrap_angle(float(self.theta)))

    @property
    def xy(self) -> Tuple[float, float]:
        return (self.x, self.y)

    def to_body(self, point: Tuple[float, float]) -> Tuple[float, float]:
        """世界坐标 -> 底盘坐标(x 轴朝前)"""
        dx, dy = point[0] - self.x, point[1] - self.y
        c, s = math.cos(self.theta), math.sin(self.theta)
        return (c * dx + s * dy, -s * dx + c * dy)

    def to_world(self, point: Tuple[float, float]) -> Tuple[float, float]:
        """底盘坐标 -> 世界坐标"""
        c, s = math.cos(self.theta), math.sin(self.theta)
        return (self.x + c * point[0] - s * point[1], self.y + s * point[0] + c * point[1])


@dataclass(frozen=True)
class RobotSpec:
    """机器人常量(执行器限幅、连杆长度等)"""

    link_lengths: Tuple[float, float] = (0.3, 0.25)
    joint_limit: float = math.pi / 2
    max_linear_velocity: float = 1.8
    max_angular_velocity: float = math.pi
    max_joint_delta: float = 0.25
    grasp_radius: float = 0.08
    grasp_threshold: float = 0.5
    footprint_radius: float = 0.2
    control_frequency: float = 15.0

    @property
    def dt(self) -> float:
        return 1.0 / self.control_frequency

    @property
    def reach(self) -> float:
        return self.link_lengths[0] + self.link_lengths[1]


DEFAULT_ROBOT = RobotSpec()


def _require_finite(**values: float) -> None:
    for name, value in values.items():
        if not math.isfinite(value):
            raise NonFiniteError("unicycle_integrate", f"{name}={value}")


def unicycle_integrate(pose: Pose2D, v: float, omega: float, dt: float) -> Pose2D:
    """
    独轮车模型闭式积分

    x' = x + (v/ω)(sin(θ+ωdt) − sin θ)
    y' = y + (v/ω)(cos θ − cos(θ+ωdt))
    |ω| < 1e-9 时退化为直线。

    Raises:
        ValueError: dt <= 0
        NonFiniteError: 输入非有限
    """
    _require_finite(x=pose.x, y=pose.y, theta=pose.theta, v=v, omega=omega, dt=dt)
    if dt <= 0:
        raise ValueError(f"dt 必须大于0, 当前: {dt}")
    theta = pose.theta
    if abs(omega) < STRAIGHT_LINE_OMEGA:
        return Pose2D(pose.x + v * math.cos(theta) * dt, pose.y + v * math.sin(theta) * dt, theta)
    theta_next = theta + omega * dt
    radius = v / omega
    return Pose2D(
        pose.x + radius * (math.sin(theta_next) - math.sin(theta)),
        pose.y + radius * (math.cos(theta) - math.cos(theta_next)),
        theta_next,
    )


def arm_fk(
    base: Pose2D,
    joints: Tuple[float, float],
    link_lengths: Tuple[float, float] = DEFAULT_ROBOT.link_lengths,
) -> Tuple[float, float]:
    """两连杆正运动学, 返回末端执行器的世界坐标"""
    l1, l2 = link_lengths
    j1, j2 = joints
    local = (
        l1 * math.cos(j1) + l2 * math.cos(j1 + j2),
        l1 * math.sin(j1) + l2 * math.sin(j1 + j2),
    )
    return base.to_world(local)


def end_effector_heading(base: Pose2D, joints: Tuple[float, float]) -> float:
    """末端连杆朝向(世界系)"""
    return wrap_angle(base.theta + joints[0] + joints[1])
