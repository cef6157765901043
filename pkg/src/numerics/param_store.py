"""
参数仓库与检查点格式

ParamStore 是 "参数路径 -> 张量" 的有序映射, 附带逐参数可训练掩码。
从 nn.Module 构建时直接引用模块内的张量(不复制), 因此有限差分扰动与
优化器更新都作用在同一份数据上。

检查点二进制格式(全部小端):
    magic   4 bytes  b"ACDT"
    version u32
    count   u32
    每个条目:
        name_len u32, name UTF-8 bytes
        dtype    u8   (0=f32, 1=f64)
        rank     u32
        dims     u32 * rank
        data     原始元素字节
"""

import struct
from collections import OrderedDict
from pathlib import Path
from typing import Dict, Iterator, List, Mapping, Optional, Tuple, Union

import numpy as np
import torch
from src.utils.logger import logger
from torch import nn

from src.core.errors import (
    BadMagicError,
    FormatError,
    ParameterPathError,
    ShapeError,
    TruncatedFileError,
    VersionMismatchError,
)

CHECKPOINT_MAGIC = b"ACDT"
CHECKPOINT_VERSION = 1

_DTYPE_TAGS = {torch.float32: 0, torch.float64: 1}
_TAG_NUMPY = {0: np.dtype("<f4"), 1: np.dtype("<f8")}


class ParamStore:
    """
    参数仓库

    - 名称唯一, 按插入顺序迭代
    - trainable 掩码覆盖每一个参数
    """

    def __init__(
        self,
        tensors: Optional[Mapping[str, torch.Tensor]] = None,
        trainable: Optional[Mapping[str, bool]] = None,
    ):
        self._tensors: "OrderedDict[str, torch.Tensor]" = OrderedDict()
        self._trainable: Dict[str, bool] = {}
        for name, tensor in (tensors or {}).items():
            self.add(name, tensor, trainable=(trainable or {}).get(name, True))

    @classmethod
    def from_module(cls, module: nn.Module, include_buffers: bool = True) -> "ParamStore":
        """
        以模块的命名参数(及持久化 buffer)构建仓库

        buffer 不可训练; 参数的可训练性取自 requires_grad。
        """
        store = cls()
        for name, param in module.named_parameters():
            store.add(name, param, trainable=param.requires_grad)
        if include_buffers:
            persistent = _persistent_buffer_names(module)
            for name, buf in module.named_buffers():
                if name in persistent:
                    store.add(name, buf, trainable=False)
        return store

    def add(self, name: str, tensor: torch.Tensor, trainable: bool = True) -> None:
        if name in self._tensors:
            raise ValueError(f"参数名重复: {name}")
        if tensor.dtype not in _DTYPE_TAGS:
            raise TypeError(f"参数 {name} 的精度不受支持: {tensor.dtype}")
        self._tensors[name] = tensor
        self._trainable[name] = bool(trainable)

    def __getitem__(self, name: str) -> torch.Tensor:
        try:
            return self._tensors[name]
        except KeyError:
            raise ParameterPathError(name) from None

    def __contains__(self, name: str) -> bool:
        return name in self._tensors

    def __len__(self) -> int:
        return len(self._tensors)

    def __iter__(self) -> Iterator[str]:
        return iter(self._tensors)

    def names(self) -> List[str]:
        return list(self._tensors)

    def items(self) -> Iterator[Tuple[str, torch.Tensor]]:
        return iter(self._tensors.items())

    def is_trainable(self, name: str) -> bool:
        if name not in self._trainable:
            raise ParameterPathError(name)
        return self._trainable[name]

    def trainable_mask(self) -> Dict[str, bool]:
        return dict(self._trainable)

    def set_trainable(self, mask: Mapping[str, bool]) -> None:
        """
        应用可训练掩码

        掩码必须覆盖每个参数; 对 nn.Parameter 同步 requires_grad。
        """
        missing = [n for n in self._tensors if n not in mask]
        if missing:
            raise ValueError(f"掩码未覆盖参数: {missing[:5]}")
        for name, flag in mask.items():
            tensor = self[name]
            self._trainable[name] = bool(flag)
            if isinstance(tensor, nn.Parameter):
                tensor.requires_grad_(bool(flag))

    def trainable_tensors(self) -> List[torch.Tensor]:
        return [t for n, t in self._tensors.items() if self._trainable[n] and isinstance(t, nn.Parameter)]

    def snapshot(self) -> Dict[str, torch.Tensor]:
        """深拷贝当前全部数值"""
        return {n: t.detach().clone() for n, t in self._tensors.items()}

    def num_elements(self, prefix: str = "") -> int:
        return sum(t.numel() for n, t in self._tensors.items() if n.startswith(prefix))

    def load_into(self, module: nn.Module, strict: bool = True) -> List[str]:
        """
        把仓库数值拷贝进模块的同名参数/buffer

        Args:
            module: 目标模块
            strict: True 时模块中缺失的条目或多余条目都报错

        Returns:
            已加载的名称列表
        """
        target = ParamStore.from_module(module)
        loaded = []
        for name, value in self.items():
            if name not in target:
                if strict:
                    raise ParameterPathError(name)
                continue
            dest = target[name]
            if tuple(dest.shape) != tuple(value.shape):
                raise ShapeError(f"{name}: 形状 {tuple(value.shape)} 与模块 {tuple(dest.shape)} 不一致")
            with torch.no_grad():
                dest.copy_(value.to(dest.dtype))
            loaded.append(name)
        if strict:
            absent = [n for n in target.names() if n not in self]
            if absent:
                raise ParameterPathError(absent[0])
        return loaded

    # ------------------------------------------------------------------
    # 检查点读写
    # ------------------------------------------------------------------

    def save(self, path: Union[str, Path]) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "wb") as f:
            f.write(CHECKPOINT_MAGIC)
            f.write(struct.pack("<II", CHECKPOINT_VERSION, len(self)))
            for name, tensor in self.items():
                encoded = name.encode("utf-8")
                tag = _DTYPE_TAGS[tensor.dtype]
                array = tensor.detach().cpu().numpy().astype(_TAG_NUMPY[tag], copy=False)
                f.write(struct.pack("<I", len(encoded)))
                f.write(encoded)
                f.write(struct.pack("<BI", tag, array.ndim))
                f.write(struct.pack(f"<{array.ndim}I", *array.shape))
                f.write(np.ascontiguousarray(array).tobytes())
        logger.debug(f"检查点已写入: {path} ({len(self)} 个条目)")
        return path

    @classmethod
    def load(cls, path: Union[str, Path]) -> "ParamStore":
        data = Path(path).read_bytes()
        reader = ByteReader(data)
        if reader.take(4) != CHECKPOINT_MAGIC:
            raise BadMagicError(f"不是检查点文件(魔数错误): {path}")
        version, count = reader.unpack("<II")
        if version != CHECKPOINT_VERSION:
            raise VersionMismatchError(f"检查点版本 {version} 不受支持(期望 {CHECKPOINT_VERSION})")
        store = cls()
        for _ in range(count):
            (name_len,) = reader.unpack("<I")
            name = reader.take(name_len).decode("utf-8")
            tag, rank = reader.unpack("<BI")
            if tag not in _TAG_NUMPY:
                raise BadMagicError(f"未知 dtype 标记 {tag} ({name})")
            dims = reader.unpack(f"<{rank}I") if rank else ()
            dtype = _TAG_NUMPY[tag]
            numel = int(np.prod(dims)) if rank else 1
            raw = reader.take(numel * dtype.itemsize)
            array = np.frombuffer(raw, dtype=dtype).reshape(dims).copy()
            store.add(name, torch.from_numpy(array))
        if reader.remaining:
            raise FormatError(f"检查点尾部有 {reader.remaining} 字节多余数据")
        return store


class ByteReader:
    """带越界检查的字节读取器"""

    def __init__(self, data: bytes):
        self.data = data
        self.offset = 0

    @property
    def remaining(self) -> int:
        return len(self.data) - self.offset

    def take(self, n: int) -> bytes:
        if self.offset + n > len(self.data):
            raise TruncatedFileError(f"文件在偏移 {self.offset} 处被截断(需要 {n} 字节)")
        chunk = self.data[self.offset:self.offset + n]
        self.offset += n
        return chunk

    def unpack(self, fmt: str) -> tuple:
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def _persistent_buffer_names(module: nn.Module) -> set:
    names = set()
    for mod_name, mod in module.named_modules():
        skip = getattr(mod, "_non_persistent_buffers_set", set())
        for buf_name in mod._buffers:
            if mod._buffers[buf_name] is None or buf_name in skip:
                continue
            names.add(f"{mod_name}.{buf_name}" if mod_name else buf_name)
    return names
