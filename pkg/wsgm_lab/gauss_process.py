"""
平稳高斯多尺度场
由功率谱定义的周期平稳高斯场：谱构造、精确采样、精确分数、
小波条件高斯分布 N(A x_1, Γ) 以及归一化小波系数协方差（白化诊断）。
"""

from dataclasses import dataclass
from typing import Tuple, Union

import numpy as np
import scipy.linalg
from loguru import logger

from .constants import COVARIANCE_CONDITION_LIMIT
from .exceptions import ConfigurationError, DomainError, ShapeError
from .utils import check_dense_cap, spatial_axes
from .wavelet import FilterPair, NormalizerSet, cascade_matrix, operator_matrices

NORMALIZATIONS = ("raw", "trace")


# --- 谱定义 ---

@dataclass(frozen=True)
class SpectrumSpec:
    """P(ω) = c (ξ^η + |ω|^η)^{-1} 的参数。normalization 为 'raw'（c = 1）或 'trace'（Tr Σ = d）。"""
    eta: float
    xi: float
    side: int
    dims: int = 1
    normalization: str = "trace"


def _negated_frequencies(values: np.ndarray) -> np.ndarray:
    """把按 FFT 顺序存放的数组重排为 ω → −ω 后的值。"""
    axes = tuple(range(values.ndim))
    return np.roll(np.flip(values, axis=axes), 1, axis=axes)


@dataclass(frozen=True, eq=False)
class StationaryGaussian:
    """均值为常数 μ、协方差由功率谱对角化的周期平稳高斯场。谱按 FFT 频率顺序存放。"""
    spectrum: np.ndarray
    mean: float = 0.0

    def __post_init__(self):
        spectrum = np.array(self.spectrum, dtype=float)
        if spectrum.ndim not in (1, 2) or len(set(spectrum.shape)) != 1:
            raise ShapeError(f"功率谱必须是 1D 或方形 2D 数组: {spectrum.shape}")
        if not np.all(np.isfinite(spectrum)) or np.any(spectrum <= 0):
            raise DomainError("功率谱必须处处为正且有限")
        if not np.allclose(spectrum, _negated_frequencies(spectrum), rtol=1e-10, atol=0.0):
            raise DomainError("功率谱在 ω → −ω 下不对称")
        spectrum.setflags(write=False)
        object.__setattr__(self, "spectrum", spectrum)
        object.__setattr__(self, "mean", float(self.mean))

    @property
    def side(self) -> int:
        return self.spectrum.shape[0]

    @property
    def dims(self) -> int:
        return self.spectrum.ndim

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.spectrum.shape

    @property
    def dimension(self) -> int:
        return self.spectrum.size


def frequency_grid(side: int, dims: int) -> np.ndarray:
    """按 FFT 顺序返回 |ω|，ω = 2πm/L，m 折叠到 [−L/2, L/2)。"""
    omega = 2 * np.pi * np.fft.fftfreq(side, d=1.0 / side) / side
    if dims == 1:
        return np.abs(omega)
    if dims == 2:
        return np.sqrt(omega[:, np.newaxis] ** 2 + omega[np.newaxis, :] ** 2)
    raise ConfigurationError(f"不支持的维数: {dims}")


def build_spectrum(spec: SpectrumSpec) -> StationaryGaussian:
    """按幂律谱构造平稳高斯场。"""
    if spec.eta <= 0:
        raise ConfigurationError(f"η 必须为正，当前为 {spec.eta}")
    if spec.xi <= 0:
        raise ConfigurationError(f"ξ 必须为正（否则 P(0) 发散），当前为 {spec.xi}")
    if spec.side < 2:
        raise ShapeError(f"边长过小: {spec.side}")
    if spec.normalization not in NORMALIZATIONS:
        raise ConfigurationError(f"未知的归一化方式: {spec.normalization}")

    spectrum = 1.0 / (spec.xi ** spec.eta + frequency_grid(spec.side, spec.dims) ** spec.eta)
    if spec.normalization == "trace":
        spectrum *= spec.side ** spec.dims / spectrum.sum()
    return StationaryGaussian(spectrum=spectrum)


# --- 采样与分数 ---

def _apply_multiplier(x: np.ndarray, multiplier: np.ndarray, dims: int) -> np.ndarray:
    axes = spatial_axes(dims)
    return np.fft.ifftn(np.fft.fftn(x, axes=axes) * multiplier, axes=axes).real


def sample(g: StationaryGaussian, rng: np.random.Generator, count: int) -> np.ndarray:
    """
    精确采样 count 个场。
    在实 FFT 半谱上对白噪声乘以 √P，Hermitian 对称性由 irfftn 保证。
    """
    if count < 1:
        raise ConfigurationError(f"样本数必须至少为 1，当前为 {count}")
    axes = spatial_axes(g.dims)
    noise = rng.standard_normal((count,) + g.shape)
    half = np.sqrt(g.spectrum)[..., : g.side // 2 + 1]
    fields = np.fft.irfftn(np.fft.rfftn(noise, axes=axes) * half, s=g.shape, axes=axes)
    return fields + g.mean


def condition_number(g: Union[StationaryGaussian, np.ndarray]) -> float:
    """κ = max P / min P。"""
    spectrum = g.spectrum if isinstance(g, StationaryGaussian) else np.asarray(g, dtype=float)
    if np.any(spectrum <= 0):
        raise DomainError("条件数要求所有特征值为正")
    return float(spectrum.max() / spectrum.min())


def _noised_spectrum(g: StationaryGaussian, t: float) -> np.ndarray:
    if t < 0:
        raise DomainError(f"扩散时间不能为负: {t}")
    decay = np.exp(-2.0 * t)
    return decay * g.spectrum + 1.0 - decay


def score_exact(g: StationaryGaussian, t: float, x: np.ndarray) -> np.ndarray:
    """p_t 的精确分数：逐频率乘以 −1/(e^{−2t}P + 1 − e^{−2t})。"""
    sigma = _noised_spectrum(g, t)
    centered = np.asarray(x, dtype=float) - np.exp(-t) * g.mean
    return -_apply_multiplier(centered, 1.0 / sigma, g.dims)


def log_density(g: StationaryGaussian, t: float, x: np.ndarray) -> np.ndarray:
    """p_t 的对数密度，逐频率计算。"""
    sigma = _noised_spectrum(g, t)
    axes = spatial_axes(g.dims)
    centered = np.asarray(x, dtype=float) - np.exp(-t) * g.mean
    coefficients = np.fft.fftn(centered, axes=axes)
    quadratic = np.sum(np.abs(coefficients) ** 2 / sigma, axis=axes) / g.dimension
    log_det = np.sum(np.log(2 * np.pi * sigma))
    return -0.5 * (quadratic + log_det)


def covariance_matrix(g: StationaryGaussian) -> np.ndarray:
    """稠密协方差矩阵 Σ（行优先展平）。"""
    d = g.dimension
    check_dense_cap(d, "协方差矩阵")
    basis = np.eye(d).reshape((d,) + g.shape)
    return _apply_multiplier(basis, g.spectrum, g.dims).reshape(d, d)


# --- 小波域 ---

def exact_normalizers(g: StationaryGaussian, f: FilterPair, J: int) -> NormalizerSet:
    """用解析二阶矩代替样本估计 γ_j。"""
    cov = covariance_matrix(g)
    side = g.side
    gammas = []
    for j in range(1, J + 1):
        G, G_bar = operator_matrices(f, side, g.dims)
        energy = float(np.trace(G_bar @ cov @ G_bar.T))
        target = (2 ** g.dims - 1) * (side // 2) ** g.dims
        gamma = np.sqrt(energy / target)
        gammas.append(gamma)
        cov = G @ cov @ G.T / gamma ** 2
        side //= 2
    return NormalizerSet(tuple(gammas))


@dataclass(frozen=True, eq=False)
class ConditionalGaussian:
    """零均值场上 x̄ | x_low ~ N(A x_low, Γ) 及其所依赖的协方差块（均为归一化坐标）。"""
    A: np.ndarray
    Gamma: np.ndarray
    var_low: np.ndarray
    cov_detail_low: np.ndarray
    var_detail: np.ndarray
    gamma: float
    side: int
    dims: int

    def joint_covariance(self) -> np.ndarray:
        """由 (A, Γ, Var(x_low)) 重建 (x̄, x_low) 的联合协方差。"""
        top_left = self.Gamma + self.A @ self.var_low @ self.A.T
        off = self.A @ self.var_low
        return np.block([[top_left, off], [off.T, self.var_low]])


def conditional_from_covariance(cov: np.ndarray, f: FilterPair, gamma: float,
                                side: int, dims: int) -> ConditionalGaussian:
    """由 x_{j−1} 的稠密协方差计算一层的条件高斯分布。"""
    G, G_bar = operator_matrices(f, side, dims)
    scale = 1.0 / gamma ** 2
    var_detail = scale * G_bar @ cov @ G_bar.T
    var_low = scale * G @ cov @ G.T
    cov_detail_low = scale * G_bar @ cov @ G.T

    if np.linalg.cond(var_low) > COVARIANCE_CONDITION_LIMIT:
        raise DomainError("Var(x_low) 奇异，条件分布无定义")
    try:
        A = scipy.linalg.solve(var_low, cov_detail_low.T, assume_a="pos").T
    except np.linalg.LinAlgError as e:
        raise DomainError(f"Var(x_low) 不是正定矩阵: {e}") from e

    Gamma = var_detail - A @ cov_detail_low.T
    Gamma = 0.5 * (Gamma + Gamma.T)
    logger.debug(f"条件高斯: d = {cov.shape[0]}, Tr Γ = {np.trace(Gamma):.4g}, Tr Var(x̄) = {np.trace(var_detail):.4g}")
    return ConditionalGaussian(A=A, Gamma=Gamma, var_low=var_low, cov_detail_low=cov_detail_low,
                               var_detail=var_detail, gamma=float(gamma), side=side, dims=dims)


def conditional_gaussian(g: StationaryGaussian, f: FilterPair, gamma1: float = 1.0) -> ConditionalGaussian:
    """第一层细节系数在真实低频 x_1 条件下的分布，A = +Cov(x̄_1, x_1) Var(x_1)^{-1}。"""
    return conditional_from_covariance(covariance_matrix(g), f, gamma1, g.side, g.dims)


def wavelet_covariance(g: StationaryGaussian, f: FilterPair, J: int) -> np.ndarray:
    """全部小波系数 (x̄_1..x̄_J, x_J) 的协方差，经对角归一化后对角线为 1。"""
    W = cascade_matrix(f, g.side, g.dims, J)
    cov = W @ covariance_matrix(g) @ W.T
    inv_std = 1.0 / np.sqrt(np.diag(cov))
    normalized = inv_std[:, np.newaxis] * cov * inv_std[np.newaxis, :]
    return 0.5 * (normalized + normalized.T)
