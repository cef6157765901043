"""
日志配置模块

使用loguru库配置系统日志:
- setup_logger: 控制台(stderr) + app.log / error.log 轮转文件
- run_log: 训练期间额外写一份与检查点同目录的运行日志
"""

import sys
from contextlib import contextmanager
from pathlib import Path
from typing import Iterator, Union

from loguru import logger

__all__ = ["logger", "setup_logger", "run_log", "run_log_path"]

CONSOLE_FORMAT = (
    "<green>{time:YYYY-MM-DD HH:mm:ss}</green> | "
    "<level>{level: <8}</level> | "
    "<cyan>{name}</cyan>:<cyan>{function}</cyan>:<cyan>{line}</cyan> - "
    "<level>{message}</level>"
)
FILE_FORMAT = "{time:YYYY-MM-DD HH:mm:ss} | {level: <8} | {name}:{function}:{line} - {message}"

# 修复 Windows 控制台编码问题
if sys.platform == "win32":
    try:
        sys.stdout.reconfigure(encoding="utf-8", errors="replace")
    except AttributeError:
        pass


def setup_logger(log_dir: str = "output/logs", log_level: str = "INFO", log_file: bool = True):
    """
    配置日志系统

    控制台日志写到 stderr, 表格等结果输出留给 stdout。

    Args:
        log_dir: 日志文件目录
        log_level: 控制台日志级别
        log_file: 是否写入日志文件
    """
    logger.remove()
    logger.add(sys.stderr, format=CONSOLE_FORMAT, level=log_level.upper(), colorize=True)

    if not log_file:
        return

    Path(log_dir).mkdir(parents=True, exist_ok=True)
    logger.add(
        f"{log_dir}/app.log",
        format=FILE_FORMAT,
        level="DEBUG",
        rotation="10 MB",
        retention="30 days",
        compression="zip",
    )
    logger.add(
        f"{log_dir}/error.log",
        format=FILE_FORMAT,
        level="ERROR",
        rotation="10 MB",
        retention="90 days",
        compression="zip",
    )

    logger.debug(f"日志系统初始化完成: level={log_level}, dir={log_dir}")


def run_log_path(checkpoint: Union[str, Path]) -> Path:
    """检查点 x.acdt 对应的运行日志 x_train.log"""
    path = Path(checkpoint)
    return path.with_name(f"{path.stem}_train.log")


@contextmanager
def run_log(checkpoint: Union[str, Path], level: str = "DEBUG") -> Iterator[Path]:
    """
    在 with 块内把日志额外写入检查点旁的运行日志, 退出时移除该 sink

    同一路径重复训练时覆盖旧日志。
    """
    path = run_log_path(checkpoint)
    path.parent.mkdir(parents=True, exist_ok=True)
    handler_id = logger.add(str(path), format=FILE_FORMAT, level=level, mode="w", encoding="utf-8")
    try:
        yield path
    finally:
        logger.remove(handler_id)
