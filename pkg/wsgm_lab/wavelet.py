"""
周期正交小波变换
提供 1D / 2D 场上的单层分析与合成、带归一化的多尺度分解与重建，
以及用于高斯条件分布和 Hessian 投影的稠密算子矩阵。
所有运算都作用于数组末尾的 dims 个空间轴，前面的轴视为批量维。
"""

from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np
import pywt
from loguru import logger

from .constants import FILTER_DC_TOLERANCE
from .exceptions import ConfigurationError, DegenerateDataError, ShapeError
from .utils import check_dense_cap, check_square, resolve_dims, spatial_shape

SUPPORTED_DAUBECHIES = (2, 3, 4)
PERIODIC_MODE = "periodization"


# --- 滤波器 ---

@dataclass(frozen=True, eq=False)
class FilterPair:
    """一维正交滤波器对 (g, ḡ)；2D 变换按轴做张量积。"""
    name: str
    lowpass: np.ndarray
    highpass: np.ndarray
    vanishing_moments: int
    wavelet: pywt.Wavelet


def parse_filter_name(name: str) -> Tuple[str, Optional[int]]:
    """解析 'haar'、'daubechies-4'、'db4' 一类的名称。"""
    text = name.strip().lower()
    if text == "haar":
        return "haar", 1
    if text.startswith("db") and text[2:].isdigit():
        return "daubechies", int(text[2:])
    if text.startswith("daubechies"):
        suffix = text[len("daubechies"):].lstrip("-_")
        return "daubechies", int(suffix) if suffix.isdigit() else None
    raise ConfigurationError(f"不支持的小波名称: {name}")


def make_filters(name: str, q: Optional[int] = None) -> FilterPair:
    """按名称构造正交滤波器对，系数取自 PyWavelets（Daubechies 为极值相位）。"""
    family, parsed_q = parse_filter_name(name)
    q = parsed_q if q is None else q

    if family == "haar":
        wavelet = pywt.Wavelet("haar")
        q = 1
    else:
        if q not in SUPPORTED_DAUBECHIES:
            raise ConfigurationError(f"Daubechies 消失矩必须属于 {SUPPORTED_DAUBECHIES}，当前为 {q}")
        wavelet = pywt.Wavelet(f"db{q}")

    lowpass = np.array(wavelet.rec_lo, dtype=float)
    highpass = np.array(wavelet.rec_hi, dtype=float)
    if abs(lowpass.sum() - np.sqrt(2.0)) > FILTER_DC_TOLERANCE:
        raise ConfigurationError(f"滤波器 {name} 的直流增益不是 √2")
    lowpass.setflags(write=False)
    highpass.setflags(write=False)

    label = "haar" if family == "haar" else f"daubechies-{q}"
    return FilterPair(name=label, lowpass=lowpass, highpass=highpass, vanishing_moments=q, wavelet=wavelet)


# --- 沿单个轴的周期变换 ---

def _analyze_axis(x: np.ndarray, f: FilterPair, axis: int) -> Tuple[np.ndarray, np.ndarray]:
    low, high = pywt.dwt(x, f.wavelet, mode=PERIODIC_MODE, axis=axis)
    return np.asarray(low, dtype=float), np.asarray(high, dtype=float)


def _synthesize_axis(low: np.ndarray, high: np.ndarray, f: FilterPair, axis: int) -> np.ndarray:
    """_analyze_axis 的逆。"""
    return np.asarray(pywt.idwt(low, high, f.wavelet, mode=PERIODIC_MODE, axis=axis), dtype=float)


# --- 单层分析与合成 ---

def analyze_once(x: np.ndarray, f: FilterPair, dims: Optional[int] = None) -> Tuple[np.ndarray, np.ndarray]:
    """
    单层小波分析。

    返回:
        (low, detail)，low 的边长减半；detail 形状为 (..., 2ⁿ−1, 边长/2, ...)。
    """
    x = np.asarray(x, dtype=float)
    dims = resolve_dims(x, dims)
    for side in spatial_shape(x, dims):
        if side < 2 or side % 2:
            raise ShapeError(f"分析要求偶数边长，当前形状为 {spatial_shape(x, dims)}")

    if dims == 1:
        low, high = _analyze_axis(x, f, -1)
        return low, high[..., np.newaxis, :]

    lo_cols, hi_cols = _analyze_axis(x, f, -1)
    ll, hl = _analyze_axis(lo_cols, f, -2)
    lh, hh = _analyze_axis(hi_cols, f, -2)
    return ll, np.stack([lh, hl, hh], axis=-3)


def synthesize_once(low: np.ndarray, detail: np.ndarray, f: FilterPair, dims: Optional[int] = None) -> np.ndarray:
    """单层小波合成，是 analyze_once 的精确逆。"""
    low = np.asarray(low, dtype=float)
    detail = np.asarray(detail, dtype=float)
    dims = resolve_dims(low, dims)
    channels = 2 ** dims - 1
    expected = low.shape[:-dims] + (channels,) + low.shape[-dims:]
    if detail.shape != expected:
        raise ShapeError(f"细节系数形状 {detail.shape} 与低频形状 {low.shape} 不匹配（应为 {expected}）")

    if dims == 1:
        return _synthesize_axis(low, detail[..., 0, :], f, -1)

    lh, hl, hh = detail[..., 0, :, :], detail[..., 1, :, :], detail[..., 2, :, :]
    lo_cols = _synthesize_axis(low, hl, f, -2)
    hi_cols = _synthesize_axis(lh, hh, f, -2)
    return _synthesize_axis(lo_cols, hi_cols, f, -1)


# --- 归一化多尺度分解 ---

@dataclass(frozen=True)
class NormalizerSet:
    """每个尺度 j = 1..J 的归一化因子 γ_j。"""
    gamma: Tuple[float, ...] = field(default_factory=tuple)

    def __post_init__(self):
        values = tuple(float(v) for v in self.gamma)
        if any(not np.isfinite(v) or v <= 0 for v in values):
            raise ConfigurationError(f"归一化因子必须为正: {values}")
        object.__setattr__(self, "gamma", values)

    @property
    def scales(self) -> int:
        return len(self.gamma)

    @classmethod
    def identity(cls, scales: int) -> "NormalizerSet":
        return cls(tuple([1.0] * scales))


@dataclass(frozen=True, eq=False)
class WaveletPyramid:
    """归一化小波系数 {x_J, x̄_j}；details[j-1] 对应尺度 j。"""
    coarse: np.ndarray
    details: Tuple[np.ndarray, ...]
    normalizers: NormalizerSet
    base_side: int
    dims: int

    @property
    def scales(self) -> int:
        return len(self.details)

    @property
    def coefficient_count(self) -> int:
        count = int(np.prod(self.coarse.shape[-self.dims:]))
        for detail in self.details:
            count += int(np.prod(detail.shape[-self.dims - 1:]))
        return count


def _check_scales(side: int, scales: int):
    if scales < 0:
        raise ShapeError(f"尺度数不能为负: {scales}")
    if side % (2 ** scales):
        raise ShapeError(f"边长 {side} 不能被 2^{scales} 整除")


def decompose(x: np.ndarray, J: int, f: FilterPair, norms: NormalizerSet,
              dims: Optional[int] = None) -> WaveletPyramid:
    """按 x_j = γ_j⁻¹ G x_{j−1}、x̄_j = γ_j⁻¹ Ḡ x_{j−1} 逐层分解。"""
    x = np.asarray(x, dtype=float)
    dims = resolve_dims(x, dims)
    side = check_square(spatial_shape(x, dims))
    _check_scales(side, J)
    if norms.scales != J:
        raise ConfigurationError(f"归一化因子数量 {norms.scales} 与尺度数 {J} 不一致")

    current = x
    details = []
    for gamma in norms.gamma:
        low, detail = analyze_once(current, f, dims)
        details.append(detail / gamma)
        current = low / gamma
    return WaveletPyramid(coarse=current, details=tuple(details), normalizers=norms, base_side=side, dims=dims)


def reconstruct(p: WaveletPyramid, f: FilterPair) -> np.ndarray:
    """decompose 的逆: x_{j−1} = γ_j G^⊤ x_j + γ_j Ḡ^⊤ x̄_j。"""
    current = p.coarse
    for j in range(p.scales, 0, -1):
        gamma = p.normalizers.gamma[j - 1]
        current = gamma * synthesize_once(current, p.details[j - 1], f, p.dims)
    return current


def normalized_lows(x: np.ndarray, f: FilterPair, norms: NormalizerSet,
                    dims: Optional[int] = None) -> List[np.ndarray]:
    """返回 [x_0, x_1, …, x_J]，x_j = γ_j⁻¹ G x_{j−1}，用于各尺度的整场模型训练。"""
    current = np.asarray(x, dtype=float)
    dims = resolve_dims(current, dims)
    _check_scales(check_square(spatial_shape(current, dims)), norms.scales)
    lows = [current]
    for gamma in norms.gamma:
        low, _ = analyze_once(current, f, dims)
        current = low / gamma
        lows.append(current)
    return lows


def estimate_normalizers(dataset: Sequence[np.ndarray], J: int, f: FilterPair,
                         dims: Optional[int] = None) -> NormalizerSet:
    """
    由数据估计 γ_j，使归一化后 E‖x̄_j‖² = (2ⁿ−1)(2^{−j}L)ⁿ。
    逐尺度计算：在已归一化的 x_{j−1} 上求细节能量，再用得到的 γ_j 归一化下一层。
    """
    data = np.asarray(dataset, dtype=float)
    if data.ndim == 0 or data.shape[0] == 0:
        raise ConfigurationError("估计归一化因子需要非空数据集")
    dims = data.ndim - 1 if dims is None else dims
    dims = resolve_dims(data[0], dims)
    side = check_square(spatial_shape(data, dims))
    _check_scales(side, J)

    gammas = []
    current = data
    reduce_axes = tuple(range(1, current.ndim))
    for j in range(1, J + 1):
        low, detail = analyze_once(current, f, dims)
        detail_axes = tuple(range(1, detail.ndim))
        energy = float(np.mean(np.sum(detail ** 2, axis=detail_axes)))
        total = float(np.mean(np.sum(current ** 2, axis=reduce_axes)))
        if energy <= 1e-20 * max(total, np.finfo(float).tiny):
            raise DegenerateDataError(f"尺度 j={j} 上的小波能量为零，无法归一化")
        target = (2 ** dims - 1) * (side / 2 ** j) ** dims
        gamma = float(np.sqrt(energy / target))
        gammas.append(gamma)
        current = low / gamma
        reduce_axes = tuple(range(1, current.ndim))
        logger.debug(f"尺度 j={j}: 细节能量 {energy:.4g}, γ_j = {gamma:.4g}")
    return NormalizerSet(tuple(gammas))


# --- 稠密算子 ---

def _identity_fields(side: int, dims: int) -> np.ndarray:
    d = side ** dims
    return np.eye(d).reshape((d,) + (side,) * dims)


def operator_matrices(f: FilterPair, side: int, dims: int) -> Tuple[np.ndarray, np.ndarray]:
    """
    返回稠密的 (G, Ḡ)，作用于按行优先展平的场。
    [G; Ḡ] 的行构成一组正交基。
    """
    if side < 2 or side % 2:
        raise ShapeError(f"算子矩阵要求偶数边长: {side}")
    d = side ** dims
    check_dense_cap(d, "小波算子矩阵")
    low, detail = analyze_once(_identity_fields(side, dims), f, dims)
    return low.reshape(d, -1).T.copy(), detail.reshape(d, -1).T.copy()


def cascade_matrix(f: FilterPair, side: int, dims: int, J: int) -> np.ndarray:
    """未归一化的 J 层正交变换矩阵，行按 (x̄_1, …, x̄_J, x_J) 排列。"""
    d = side ** dims
    check_dense_cap(d, "多尺度变换矩阵")
    pyramid = decompose(_identity_fields(side, dims), J, f, NormalizerSet.identity(J), dims=dims)
    blocks = [detail.reshape(d, -1) for detail in pyramid.details]
    blocks.append(pyramid.coarse.reshape(d, -1))
    return np.concatenate(blocks, axis=1).T.copy()
