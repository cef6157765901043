"""
任务注册表数据模型

对应 config/tasks.yaml 的结构，reset() 只读取这里的区间参数。
"""

from typing import Dict, List, Literal, Optional, Tuple

from pydantic import BaseModel, Field, field_validator


class CategorySpec(BaseModel):
    """物体类别: 颜色词 + 渲染强度"""

    word: str
    intensity: float = Field(..., gt=0, le=1)


class WorldSpec(BaseModel):
    """世界范围与物体放置参数"""

    half_extent: float = Field(default=6.0, gt=0)
    base_xy_range: Tuple[float, float] = (-0.5, 0.5)
    object_radius: float = Field(default=0.06, gt=0)
    latch_radius: float = Field(default=0.07, gt=0)
    distractor_count: Tuple[int, int] = (1, 2)
    distractor_min_separation: float = Field(default=0.6, gt=0)


class TaskSpec(BaseModel):
    """
    单个任务定义

    success 取值:
    - held: 目标物体被抓住
    - placed: 目标物体在目标区域内且已松开
    - toggled: 门闩已被拨动
    """

    name: str = ""
    instruction: str
    target_categories: List[int]
    target_distance: Optional[Tuple[float, float]] = None
    goal_distance: Optional[Tuple[float, float]] = None
    goal_radius: float = Field(default=0.25, gt=0)
    start_holding: bool = False
    latch: bool = False
    success: Literal["held", "placed", "toggled"]

    @field_validator("target_distance", "goal_distance")
    @classmethod
    def _check_range(cls, v):
        if v is not None and not (0 < v[0] <= v[1]):
            raise ValueError(f"非法距离区间: {v}")
        return v

    @property
    def has_goal_region(self) -> bool:
        return self.goal_distance is not None


class TaskRegistry(BaseModel):
    """完整注册表"""

    world: WorldSpec = Field(default_factory=WorldSpec)
    categories: Dict[int, CategorySpec]
    tasks: Dict[str, TaskSpec]

    def model_post_init(self, __context) -> None:
        for name, spec in self.tasks.items():
            spec.name = name
