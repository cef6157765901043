"""
梯度校验工具

反向传播由 torch.autograd 提供, 这里只保留两个验证操作:
- finite_difference_gradient: 中心差分估计单个参数的梯度
- grad_check: 对比反向传播梯度与中心差分, 输出逐路径相对误差

f 是以 ParamStore 为参数的标量函数, 每次调用必须是确定性的
(随机的时间步/噪声需要由调用方固定)。
"""

from dataclasses import dataclass, field
from typing import Callable, Dict, Iterable, List

import torch

from src.core.errors import NonFiniteError, ParameterPathError
from src.numerics.param_store import ParamStore

ScalarFn = Callable[[ParamStore], torch.Tensor]


def _evaluate(f: ScalarFn, store: ParamStore, site: str) -> float:
    value = f(store)
    value = float(value.detach()) if isinstance(value, torch.Tensor) else float(value)
    if value != value or value in (float("inf"), float("-inf")):
        raise NonFiniteError("finite_difference_gradient", site)
    return value


def finite_difference_gradient(
    f: ScalarFn,
    store: ParamStore,
    path: str,
    eps: float = 1e-6,
) -> torch.Tensor:
    """
    中心差分梯度 (f(θ+eps·e) − f(θ−eps·e)) / (2·eps)

    Args:
        f: 标量函数
        store: 参数仓库(原地扰动后恢复)
        path: 参数路径
        eps: 扰动步长

    Returns:
        与参数同形状的梯度估计
    """
    if eps <= 0:
        raise ValueError(f"eps 必须大于0, 当前: {eps}")
    param = store[path]
    grad = torch.zeros_like(param, dtype=torch.float64)
    flat = param.data.view(-1)
    flat_grad = grad.view(-1)
    with torch.no_grad():
        for i in range(flat.numel()):
            original = flat[i].item()
            flat[i] = original + eps
            f_plus = _evaluate(f, store, f"{path}[{i}]+eps")
            flat[i] = original - eps
            f_minus = _evaluate(f, store, f"{path}[{i}]-eps")
            flat[i] = original
            flat_grad[i] = (f_plus - f_minus) / (2.0 * eps)
    return grad.to(param.dtype)


@dataclass
class GradCheckReport:
    """梯度校验报告"""

    tol: float
    errors: Dict[str, float] = field(default_factory=dict)

    @property
    def max_error(self) -> float:
        return max(self.errors.values(), default=0.0)

    @property
    def passed(self) -> bool:
        return all(err < self.tol for err in self.errors.values())

    def failing_paths(self) -> List[str]:
        return [p for p, err in self.errors.items() if err >= self.tol]


def autograd_gradients(f: ScalarFn, store: ParamStore, paths: Iterable[str]) -> Dict[str, torch.Tensor]:
    """反向传播梯度; 与 f 无关的参数返回全零"""
    paths = list(paths)
    tensors = [store[p] for p in paths]
    requires = [t.requires_grad for t in tensors]
    for t in tensors:
        t.requires_grad_(True)
    try:
        value = f(store)
        grads = torch.autograd.grad(value, tensors, allow_unused=True)
    finally:
        for t, flag in zip(tensors, requires):
            t.requires_grad_(flag)
    return {
        p: (g.detach() if g is not None else torch.zeros_like(t))
        for p, t, g in zip(paths, tensors, grads)
    }


def grad_check(
    f: ScalarFn,
    store: ParamStore,
    paths: Iterable[str],
    eps: float = 1e-6,
    tol: float = 1e-6,
) -> GradCheckReport:
    """
    逐路径比较反向传播与中心差分

    相对误差 = ‖g_ad − g_fd‖∞ / max(‖g_fd‖∞, 1e-12)

    Raises:
        ParameterPathError: 路径不存在
    """
    paths = list(paths)
    for p in paths:
        if p not in store:
            raise ParameterPathError(p)
    ad = autograd_gradients(f, store, paths)
    report = GradCheckReport(tol=tol)
    for p in paths:
        fd = finite_difference_gradient(f, store, p, eps).to(torch.float64)
        diff = (ad[p].to(torch.float64) - fd).abs().max().item()
        scale = max(fd.abs().max().item(), 1e-12)
        report.errors[p] = diff / scale
    return report
