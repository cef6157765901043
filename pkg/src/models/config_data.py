"""
模型与训练配置数据模型

ModelConfig 描述网络结构、扩散调度和消融开关；
TrainConfig 是平铺的训练配置(key=value 文件的键与字段名一一对应)。
使用Pydantic进行数据验证，未知字段直接报错。
"""

from typing import Literal, Tuple

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator


ConditioningDirection = Literal["mobility", "upper_body", "none"]
InjectMode = Literal["concat", "alternate"]
FusionScaleMode = Literal["uniform_identity", "raw"]
BetaSchedule = Literal["linear", "cosine"]
PredictionType = Literal["epsilon", "sample"]
DType = Literal["float32", "float64"]


class ModelConfig(BaseModel):
    """
    网络结构配置

    默认值即桌面级默认模型(约0.4M参数的两个动作头)。
    """

    model_config = ConfigDict(extra="forbid")

    dtype: DType = Field(default="float32", description="参数与计算精度")

    # 编码器
    d_model: int = Field(default=64, gt=0, description="统一token宽度 d")
    num_heads: int = Field(default=4, gt=0, description="注意力头数")
    encoder_layers: int = Field(default=2, gt=0, description="共享视觉主干层数 L")
    text_layers: int = Field(default=1, gt=0, description="文本编码器层数")
    mlp_ratio: float = Field(default=4.0, gt=0)
    image_size: int = Field(default=32, gt=0)
    patch_size: int = Field(default=8, gt=0)
    image_channels: int = Field(default=3, gt=0)
    num_views: int = Field(default=3, gt=0)
    cloud_points: int = Field(default=256, gt=0, description="点云行数 N")
    cloud_tokens: int = Field(default=32, gt=0, description="点云token数 T_p")
    group_size: int = Field(default=8, gt=0, description="每组近邻点数")
    plane_grid: int = Field(default=16, gt=0, description="虚拟平面网格边长")
    plane_extent: float = Field(default=4.0, gt=0, description="平面覆盖 x/y ∈ [-extent, extent]")
    plane_z_min: float = Field(default=0.0)
    plane_z_max: float = Field(default=0.2)
    text_tokens: int = Field(default=8, gt=0, description="指令长度 T_ℓ")
    vocab_size: int = Field(default=64, gt=0)
    state_dim: int = Field(default=12, gt=0, description="本体状态 z 维度")
    frequency_scale: float = Field(default=30.0, gt=0, description="控制频率归一化因子")
    history: int = Field(default=2, gt=0, description="观测窗口长度 τ+1")
    horizon: int = Field(default=2, gt=0, description="动作块长度 k")
    action_dim: int = Field(default=5, gt=0)

    # 多模态融合
    fusion_dim: int = Field(default=32, gt=0, description="共享空间维度 d_s")
    fusion_temperature: float = Field(default=1.0, gt=0)
    fusion_scale_mode: FusionScaleMode = "uniform_identity"

    # 动作头
    mobility_blocks: int = Field(default=2, gt=0)
    manipulation_blocks: int = Field(default=4, gt=0)
    inject_mode: InjectMode = "concat"

    # 扩散
    diffusion_steps: int = Field(default=5, ge=1, description="K")
    # 线性调度在 K=5 时 ᾱ_{K−1}≈0.95, 采样起点 N(0, I) 远离训练分布; 默认用余弦调度
    beta_schedule: BetaSchedule = "cosine"
    beta_start: float = Field(default=1e-4, gt=0, lt=1)
    beta_end: float = Field(default=0.02, gt=0, lt=1)
    prediction_type: PredictionType = Field(default="sample", description="动作头输出 ε̂ 或 â_0")

    # 消融开关
    conditioning_direction: ConditioningDirection = "mobility"
    use_cloud: bool = True
    use_fusion: bool = True
    mobility_uses_fusion: bool = False

    @model_validator(mode="after")
    def _check_dims(self) -> "ModelConfig":
        if self.d_model % self.num_heads != 0:
            raise ValueError(f"d_model={self.d_model} 不能被 num_heads={self.num_heads} 整除")
        if self.image_size % self.patch_size != 0:
            raise ValueError("image_size 必须是 patch_size 的整数倍")
        if self.beta_end <= self.beta_start and self.diffusion_steps > 1:
            raise ValueError("beta_end 必须大于 beta_start")
        if self.plane_z_max <= self.plane_z_min:
            raise ValueError("plane_z_max 必须大于 plane_z_min")
        return self

    @property
    def image_tokens(self) -> int:
        """每个视角的 patch 数 T_v"""
        return (self.image_size // self.patch_size) ** 2

    @property
    def latent_action_dim(self) -> int:
        """轻量头预测的动作维度"""
        return 3 if self.conditioning_direction == "upper_body" else 2

    @property
    def latent_columns(self) -> Tuple[int, ...]:
        """轻量头对应的动作列 (v, ω) 或 (Δj1, Δj2, grip)"""
        return (2, 3, 4) if self.conditioning_direction == "upper_body" else (0, 1)


class TrainConfig(ModelConfig):
    """
    训练配置(平铺)

    继承全部模型字段，额外包含优化、数据与阶段设置。
    """

    stage: int = Field(default=2, description="1=轻量头预训练, 2=全模型训练")
    steps: int = Field(default=3000, gt=0, description="阶段2步数")
    stage1_steps: int = Field(default=0, ge=0, description="阶段1步数, 0 表示 steps 的 20%")
    stage1_fraction: float = Field(default=0.2, gt=0, le=1)
    batch_size: int = Field(default=32, gt=0)
    learning_rate: float = Field(default=3e-4, gt=0)
    min_learning_rate: float = Field(default=3e-5, gt=0)
    weight_decay: float = Field(default=1e-4, ge=0)
    grad_clip: float = Field(default=1.0, gt=0)
    seed: int = Field(default=0, ge=0)
    dataset_path: str = Field(default="output/data/navigate_pick.acds")
    init_checkpoint: str = Field(default="", description="阶段2加载的阶段1检查点")
    log_every: int = Field(default=10, gt=0)
    checkpoint_every: int = Field(default=500, gt=0)
    freeze_encoder_trunk: bool = False
    freeze_mobility_head: bool = False

    # 消融/评估(ablate 子命令使用)
    eval_tasks: str = Field(default="navigate_pick", description="逗号分隔的任务名")
    eval_episodes: int = Field(default=50, gt=0)
    eval_repeats: int = Field(default=3, gt=0)
    ablation_seeds: int = Field(default=3, gt=0)

    @field_validator("stage")
    @classmethod
    def _check_stage(cls, v: int) -> int:
        if v not in (1, 2):
            raise ValueError(f"stage 必须是 1 或 2, 当前: {v}")
        return v

    def resolved_stage1_steps(self) -> int:
        """阶段1实际步数"""
        if self.stage1_steps > 0:
            return self.stage1_steps
        return max(1, round(self.steps * self.stage1_fraction))

    def to_model_config(self) -> ModelConfig:
        """抽取模型字段"""
        return ModelConfig(**self.model_dump(include=set(ModelConfig.model_fields)))

    def task_list(self) -> list:
        return [t.strip() for t in self.eval_tasks.split(",") if t.strip()]
