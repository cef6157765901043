"""
配置加载模块

1. 训练配置: 平铺 key=value 文本, 键必须与 TrainConfig 字段名完全一致
2. 任务注册表: config/tasks.yaml
3. 环境变量: ACDIT_TASKS_FILE / ACDIT_LOG_LEVEL / ACDIT_LOG_DIR (支持 .env)
"""

import os
from functools import lru_cache
from pathlib import Path
from typing import Any, Dict, Optional, Union

import yaml
from dotenv import load_dotenv
from pydantic import ValidationError

from src.core.errors import ConfigError
from src.models.config_data import TrainConfig
from src.models.task_data import TaskRegistry

load_dotenv()

PROJECT_ROOT = Path(__file__).resolve().parent.parent.parent
DEFAULT_TASKS_FILE = PROJECT_ROOT / "config" / "tasks.yaml"
DEFAULT_TRAIN_CONFIG = PROJECT_ROOT / "config" / "train_default.cfg"


def parse_key_value(text: str) -> Dict[str, str]:
    """
    解析 key=value 文本

    Args:
        text: 配置文本, 支持 # 注释和空行

    Returns:
        原始字符串字典

    Raises:
        ConfigError: 行格式错误或键重复
    """
    result: Dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"第{lineno}行缺少 '=': {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if not key:
            raise ConfigError(f"第{lineno}行键为空")
        if key in result:
            raise ConfigError(f"键重复: {key}")
        result[key] = value
    return result


def build_train_config(values: Dict[str, Any]) -> TrainConfig:
    """从字典构造 TrainConfig, 未知键与非法值统一转换为 ConfigError"""
    unknown = sorted(set(values) - set(TrainConfig.model_fields))
    if unknown:
        raise ConfigError(f"未知配置键: {', '.join(unknown)}")
    try:
        return TrainConfig(**values)
    except ValidationError as e:
        raise ConfigError(f"配置取值非法: {e}") from e


def load_train_config(
    path: Optional[Union[str, Path]] = None,
    **overrides: Any,
) -> TrainConfig:
    """
    加载训练配置

    Args:
        path: 配置文件路径, 不传则使用 config/train_default.cfg
        **overrides: 覆盖项(如 CLI 的 --stage)

    Returns:
        TrainConfig 实例
    """
    path = Path(path) if path else DEFAULT_TRAIN_CONFIG
    if not path.exists():
        raise ConfigError(f"配置文件不存在: {path}")
    values: Dict[str, Any] = dict(parse_key_value(path.read_text(encoding="utf-8")))
    values.update({k: v for k, v in overrides.items() if v is not None})
    return build_train_config(values)


def dump_train_config(config: TrainConfig) -> str:
    """序列化为 key=value 文本(可被 load_train_config 读回)"""
    lines = []
    for key, value in config.model_dump().items():
        if isinstance(value, bool):
            value = "true" if value else "false"
        lines.append(f"{key}={value}")
    return "\n".join(lines) + "\n"


def tasks_file() -> Path:
    return Path(os.getenv("ACDIT_TASKS_FILE", str(DEFAULT_TASKS_FILE)))


@lru_cache(maxsize=4)
def _load_registry(path: str) -> TaskRegistry:
    with open(path, "r", encoding="utf-8") as f:
        raw = yaml.safe_load(f)
    try:
        return TaskRegistry(**raw)
    except ValidationError as e:
        raise ConfigError(f"任务注册表非法 ({path}): {e}") from e


def get_task_registry() -> TaskRegistry:
    """获取任务注册表(按文件路径缓存)"""
    return _load_registry(str(tasks_file()))


def log_settings() -> Dict[str, str]:
    """日志相关环境变量"""
    return {
        "log_level": os.getenv("ACDIT_LOG_LEVEL", "INFO"),
        "log_dir": os.getenv("ACDIT_LOG_DIR", "output/logs"),
    }
