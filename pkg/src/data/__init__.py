"""
演示数据: 采集、存储、归一化、滑动窗口
"""

from .normalization import NormStats, compute_norm_stats, denormalize, normalize
from .storage import DATASET_MAGIC, DATASET_VERSION, load_dataset, save_dataset
from .trajectory import Trajectory, record_dataset, record_episode
from .windows import ObsBatch, WindowSample, WindowSampler, batch_from_history, collate, valid_range, window_sample

__all__ = [
    "DATASET_MAGIC",
    "DATASET_VERSION",
    "NormStats",
    "ObsBatch",
    "Trajectory",
    "WindowSample",
    "WindowSampler",
    "batch_from_history",
    "collate",
    "compute_norm_stats",
    "denormalize",
    "load_dataset",
    "normalize",
    "record_dataset",
    "record_episode",
    "save_dataset",
    "valid_range",
    "window_sample",
]
