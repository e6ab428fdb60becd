"""数值库与命令行共享的异常类型，每种异常携带对应的进程退出码。"""

from typing import Optional

from .constants import EXIT_CONFIG_ERROR, EXIT_DIVERGENCE, EXIT_FAILURE, EXIT_RESOURCE_CAP


class WsgmError(Exception):
    """所有库内异常的基类。"""

    exit_code = EXIT_FAILURE


class ConfigurationError(WsgmError):
    """参数或配置不合法。"""

    exit_code = EXIT_CONFIG_ERROR


class ShapeError(ConfigurationError):
    """场的形状与操作不兼容（奇数边长、尺度数过大、通道数不符等）。"""


class DegenerateDataError(ConfigurationError):
    """数据退化，例如某个尺度上的小波能量为零。"""


class DomainError(WsgmError):
    """输入超出数学定义域（非正特征值、奇异协方差等）。"""

    exit_code = EXIT_CONFIG_ERROR


class ResourceCapError(WsgmError):
    """稠密矩阵或其他资源超出上限。"""

    exit_code = EXIT_RESOURCE_CAP


class NumericalDivergenceError(WsgmError):
    """逆向采样出现非有限值。"""

    exit_code = EXIT_DIVERGENCE

    def __init__(self, message: str, step: Optional[int] = None, scale: Optional[int] = None):
        self.step = step
        self.scale = scale
        super().__init__(message)

    def with_scale(self, scale: int) -> "NumericalDivergenceError":
        """返回一个标注了尺度 j 的副本。"""
        return NumericalDivergenceError(f"尺度 j={scale}: {self.args[0]}", step=self.step, scale=scale)


class TrainingError(WsgmError):
    """分数模型训练发散。"""

    exit_code = EXIT_DIVERGENCE

    def __init__(self, message: str, time_index: Optional[int] = None):
        self.time_index = time_index
        super().__init__(message)
