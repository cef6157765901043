"""
评估结果数据模型

EpisodeResult 记录单回合的逐步权重、动作与阶段标注;
EvalReport 汇总多任务多轮重复的成功率; AblationRow 是消融表的一行。
"""

from typing import List

from pydantic import BaseModel, Field, model_validator

MAX_EPISODE_STEPS = 200
WEIGHT_TOLERANCE = 1e-6


def _flag(value: bool) -> str:
    return "1" if value else "0"


# ===== 单回合 =====


class EpisodeResult(BaseModel):
    """单回合结果"""

    task: str
    seed: int
    success: bool
    steps: int = Field(..., ge=0, le=MAX_EPISODE_STEPS)
    weights: List[List[float]] = Field(default_factory=list, description="每步 (wf, wl, wr, wp)")
    actions: List[List[float]] = Field(default_factory=list, description="每步实际执行的 (v, ω, Δj1, Δj2, grip)")
    phases: List[str] = Field(default_factory=list, description="每步阶段标注 drive/approach/manipulate")

    @model_validator(mode="after")
    def _check_trace(self) -> "EpisodeResult":
        for name in ("weights", "actions", "phases"):
            if len(getattr(self, name)) != self.steps:
                raise ValueError(f"{name} 长度 {len(getattr(self, name))} 与步数 {self.steps} 不一致")
        for w in self.weights:
            if len(w) != 4 or any(x <= 0 for x in w) or abs(sum(w) - 1.0) > WEIGHT_TOLERANCE:
                raise ValueError(f"重要性权重不在单纯形上: {w}")
        return self


# ===== 汇总 =====


class TaskScore(BaseModel):
    """单任务在 repeats 轮上的成功率(百分比)"""

    task: str
    mean: float = Field(..., ge=0, le=100)
    std: float = Field(..., ge=0)
    n: int = Field(..., ge=1, description="每轮回合数")
    rates: List[float] = Field(default_factory=list, description="每轮成功率")


class EvalReport(BaseModel):
    """评估报告"""

    scores: List[TaskScore]
    episodes: int = Field(..., ge=1)
    repeats: int = Field(..., ge=1)
    stride: int = Field(default=1, ge=1)
    config_hash: str = ""

    @property
    def mean(self) -> float:
        """跨任务平均成功率"""
        return sum(s.mean for s in self.scores) / len(self.scores) if self.scores else 0.0

    def to_rows(self) -> List[List[str]]:
        """CSV 行: task, mean, std, n"""
        return [[s.task, f"{s.mean:.4f}", f"{s.std:.4f}", str(s.n)] for s in self.scores]


class AblationRow(BaseModel):
    """消融表的一行"""

    exp: str
    use_2d: bool = True
    use_3d: bool
    pma: bool
    mbc: bool
    mean: float = Field(..., ge=0, le=100)
    gain: float = 0.0
    per_seed: List[float] = Field(default_factory=list)

    def to_row(self) -> List[str]:
        """CSV 行: exp, 2d, 3d, pma, mbc, mean, gain"""
        return [self.exp, _flag(self.use_2d), _flag(self.use_3d), _flag(self.pma), _flag(self.mbc), f"{self.mean:.4f}", f"{self.gain:+.4f}"]
