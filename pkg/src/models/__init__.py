# src/models/__init__.py
"""
数据模型模块

包含配置、任务注册表和评估结果的数据模型定义。
"""

from .config_data import (
    ModelConfig,
    TrainConfig,
)

from .task_data import (
    CategorySpec,
    WorldSpec,
    TaskSpec,
    TaskRegistry,
)

from .eval_data import (
    EpisodeResult,
    TaskScore,
    EvalReport,
    AblationRow,
)

__all__ = [
    # 配置
    'ModelConfig',
    'TrainConfig',
    # 任务
    'CategorySpec',
    'WorldSpec',
    'TaskSpec',
    'TaskRegistry',
    # 评估
    'EpisodeResult',
    'TaskScore',
    'EvalReport',
    'AblationRow',
]
