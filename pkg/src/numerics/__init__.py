"""
数值基础模块

反向传播直接使用 torch.autograd, 本模块提供:
- ParamStore: 命名参数仓库 + 可训练掩码 + 检查点格式
- finite_difference_gradient / grad_check: 梯度校验
- check_finite: NaN/Inf 快速失败
"""

from .guards import check_finite, resolve_dtype
from .param_store import CHECKPOINT_MAGIC, CHECKPOINT_VERSION, ParamStore
from .gradcheck import GradCheckReport, autograd_gradients, finite_difference_gradient, grad_check

__all__ = [
    "ParamStore",
    "CHECKPOINT_MAGIC",
    "CHECKPOINT_VERSION",
    "GradCheckReport",
    "autograd_gradients",
    "finite_difference_gradient",
    "grad_check",
    "check_finite",
    "resolve_dtype",
]
