"""NaN/Inf 快速失败检查"""

from typing import Optional

import torch

from src.core.errors import NonFiniteError

DTYPES = {"float32": torch.float32, "float64": torch.float64}


def check_finite(tensor: torch.Tensor, op: str, site: Optional[str] = None) -> torch.Tensor:
    """
    检查张量全部有限, 否则抛出带操作名的 NonFiniteError

    Returns:
        原张量(便于链式调用)
    """
    if not torch.isfinite(tensor).all():
        raise NonFiniteError(op, site)
    return tensor


def resolve_dtype(name: str) -> torch.dtype:
    try:
        return DTYPES[name]
    except KeyError:
        raise ValueError(f"不支持的精度: {name}") from None
