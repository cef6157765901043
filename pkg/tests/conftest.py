"""
pytest配置文件 - AC-DiT 测试公共夹具
"""

import sys
from pathlib import Path

import numpy as np
import pytest
import torch

# 添加项目根目录到Python路径
project_root = Path(__file__).parent.parent
sys.path.insert(0, str(project_root))

from src.data.storage import save_dataset
from src.data.trajectory import record_dataset
from src.data.windows import WindowSampler
from src.models.config_data import ModelConfig, TrainConfig

# 测试用的小模型: float64 便于梯度校验, 其余维度尽量小
TINY_MODEL = dict(
    dtype="float64",
    d_model=16,
    num_heads=2,
    encoder_layers=1,
    text_layers=1,
    mlp_ratio=2.0,
    cloud_tokens=8,
    group_size=4,
    plane_grid=8,
    fusion_dim=8,
    mobility_blocks=1,
    manipulation_blocks=2,
    diffusion_steps=3,
    history=2,
    horizon=2,
)


@pytest.fixture
def tiny_config() -> ModelConfig:
    """float64 小模型配置"""
    return ModelConfig(**TINY_MODEL)


@pytest.fixture
def micro_config() -> ModelConfig:
    """逐元素有限差分用的更小配置: d=8, K=2"""
    return ModelConfig(**{**TINY_MODEL, "d_model": 8, "fusion_dim": 4, "cloud_tokens": 4, "diffusion_steps": 2})


@pytest.fixture(scope="session")
def small_dataset():
    """两条 navigate_pick 专家演示(整个会话共享, 不要原地修改)"""
    return record_dataset("navigate_pick", episodes=2, seed_start=0)


@pytest.fixture
def dataset_file(tmp_path, small_dataset) -> Path:
    return save_dataset(small_dataset, tmp_path / "data" / "navigate_pick.acds")


@pytest.fixture
def tiny_train_config(dataset_file) -> TrainConfig:
    """几步就能跑完的训练配置"""
    return TrainConfig(
        **TINY_MODEL,
        steps=4,
        stage1_steps=2,
        batch_size=4,
        checkpoint_every=1000,
        log_every=1,
        dataset_path=str(dataset_file),
        eval_episodes=1,
        eval_repeats=1,
        ablation_seeds=1,
    )


@pytest.fixture
def batch(small_dataset):
    """一个 float64 训练批次(含动作)"""
    sampler = WindowSampler(small_dataset, tau=1, k=2, shuffle=False)
    return next(sampler.batches(3, torch.float64))


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(0)
