from typing import Tuple

import numpy as np

from .constants import DENSE_DIM_CAP
from .exceptions import ConfigurationError, ResourceCapError, ShapeError


def is_power_of_two(value: int) -> bool:
    """检查一个正整数是否为 2 的幂。"""
    return isinstance(value, (int, np.integer)) and value > 0 and (value & (value - 1)) == 0


def resolve_dims(array: np.ndarray, dims) -> int:
    """确定空间维数；未指定时取数组维数（仅允许 1 或 2）。"""
    if dims is None:
        dims = array.ndim
    if dims not in (1, 2):
        raise ConfigurationError(f"空间维数必须为 1 或 2，当前为 {dims}")
    if array.ndim < dims:
        raise ShapeError(f"数组维数 {array.ndim} 小于空间维数 {dims}")
    return dims


def spatial_shape(array: np.ndarray, dims: int) -> Tuple[int, ...]:
    """返回数组末尾 dims 个空间轴的形状。"""
    return tuple(array.shape[-dims:])


def check_square(shape: Tuple[int, ...]) -> int:
    """要求各空间轴边长一致，返回边长。"""
    if len(set(shape)) != 1:
        raise ShapeError(f"仅支持各方向边长相同的网格: {shape}")
    return shape[0]


def check_dense_cap(dimension: int, what: str = "稠密矩阵"):
    """检查稠密矩阵维数是否超过上限。"""
    if dimension > DENSE_DIM_CAP:
        raise ResourceCapError(f"{what}维数 {dimension} 超过上限 {DENSE_DIM_CAP}")


def spatial_axes(dims: int) -> Tuple[int, ...]:
    """末尾 dims 个轴的负索引元组，用于 FFT 与求和。"""
    return tuple(range(-dims, 0))


def relative_error(actual: np.ndarray, expected: np.ndarray) -> float:
    """相对误差 ‖a − e‖ / max(‖e‖, tiny)。"""
    denom = max(float(np.linalg.norm(expected)), np.finfo(float).tiny)
    return float(np.linalg.norm(np.asarray(actual) - np.asarray(expected)) / denom)
