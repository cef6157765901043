"""
异常定义模块

系统内所有可预期错误都继承自 ACDiTError，CLI 统一捕获后以非零退出码结束。
"""

from typing import Optional


class ACDiTError(Exception):
    """系统错误基类"""


class ConfigError(ACDiTError, ValueError):
    """配置文件错误(未知键、非法取值)"""


class ShapeError(ACDiTError, ValueError):
    """张量/数组形状不匹配"""


class NonFiniteError(ACDiTError, FloatingPointError):
    """
    出现 NaN/Inf

    Args:
        op: 产生非有限值的操作名
        site: 额外定位信息(扰动位置、去噪步等)
    """

    def __init__(self, op: str, site: Optional[str] = None):
        self.op = op
        self.site = site
        message = f"操作 '{op}' 产生非有限值"
        if site:
            message += f" ({site})"
        super().__init__(message)


class ParameterPathError(ACDiTError, KeyError):
    """参数路径不存在"""

    def __init__(self, path: str):
        self.path = path
        super().__init__(f"参数路径不存在: {path}")

    def __str__(self) -> str:
        return self.args[0]


class FormatError(ACDiTError, ValueError):
    """二进制文件格式错误"""


class BadMagicError(FormatError):
    """魔数不匹配"""


class VersionMismatchError(FormatError):
    """文件版本不受支持"""


class TruncatedFileError(FormatError):
    """文件被截断"""


class UnknownTaskError(ACDiTError, ValueError):
    """任务不在注册表中"""


class UnreachableTargetError(ACDiTError, RuntimeError):
    """专家无法到达目标"""


class ExpertFailureError(ACDiTError, RuntimeError):
    """专家连续失败(任务或脚本缺陷)"""


class EmptyDatasetError(ACDiTError, ValueError):
    """数据集为空"""


class WindowRangeError(ACDiTError, IndexError):
    """滑动窗口起点越界"""


class VocabularyError(ACDiTError, ValueError):
    """词表 id 越界或未知词"""


class MissingCheckpointError(ACDiTError, FileNotFoundError):
    """缺少所需检查点"""


class DivergenceError(ACDiTError, RuntimeError):
    """训练发散(损失非有限)"""

    def __init__(self, step: int, loss: float):
        self.step = step
        self.loss = loss
        super().__init__(f"训练在第 {step} 步发散: loss={loss}")


class TimestepRangeError(ACDiTError, IndexError):
    """扩散时间步越界"""
