"""
生成样本与真实样本的定量比较：功率谱 D₁、边缘分布直方图总变差 D₂ 及其和。
"""

from dataclasses import dataclass
from typing import Dict, Optional, Sequence, Tuple

import numpy as np

from .constants import HISTOGRAM_BINS, HISTOGRAM_RANGE
from .exceptions import ConfigurationError
from .utils import resolve_dims, spatial_axes


@dataclass(frozen=True, eq=False)
class EnsembleSummary:
    spectrum_hat: np.ndarray
    hist_masses: np.ndarray
    bin_edges: np.ndarray
    sample_count: int


def _batch(samples: np.ndarray, dims: Optional[int]) -> Tuple[np.ndarray, int]:
    samples = np.asarray(samples, dtype=float)
    if samples.ndim < 2 or samples.shape[0] == 0:
        raise ConfigurationError(f"需要非空的样本批量: {samples.shape}")
    dims = samples.ndim - 1 if dims is None else dims
    return samples, resolve_dims(samples[0], dims)


def estimate_spectrum(samples: np.ndarray, dims: Optional[int] = None) -> np.ndarray:
    """样本周期图的平均 E|x̂(ω)|² / Lⁿ，按 FFT 顺序排列。"""
    samples, dims = _batch(samples, dims)
    axes = spatial_axes(dims)
    d = int(np.prod(samples.shape[-dims:]))
    power = np.abs(np.fft.fftn(samples, axes=axes)) ** 2 / d
    return power.reshape((-1,) + samples.shape[-dims:]).mean(axis=0)


def marginal_histogram(samples: np.ndarray, bins: int = HISTOGRAM_BINS,
                       value_range: Tuple[float, float] = HISTOGRAM_RANGE) -> Tuple[np.ndarray, np.ndarray]:
    """所有格点取值的直方图（质量和为 1），区间外的值计入两端的分箱。"""
    values = np.clip(np.asarray(samples, dtype=float).ravel(), *value_range)
    if values.size == 0:
        raise ConfigurationError("直方图需要至少一个取值")
    counts, edges = np.histogram(values, bins=bins, range=value_range)
    return counts / counts.sum(), edges


def d1(P: np.ndarray, P_hat: np.ndarray) -> float:
    """D₁ = ‖P − P̂‖²（频率网格上的平方 L² 范数）。"""
    P, P_hat = np.asarray(P, dtype=float), np.asarray(P_hat, dtype=float)
    if P.shape != P_hat.shape:
        raise ConfigurationError(f"功率谱形状不一致: {P.shape} 与 {P_hat.shape}")
    return float(np.sum((P - P_hat) ** 2))


def d2_marginal_tv(hist_a: np.ndarray, hist_b: np.ndarray) -> float:
    """D₂ = ½ Σ|a − b|，两个直方图必须使用相同的分箱。"""
    hist_a, hist_b = np.asarray(hist_a, dtype=float), np.asarray(hist_b, dtype=float)
    if hist_a.shape != hist_b.shape:
        raise ConfigurationError(f"直方图分箱不一致: {hist_a.shape} 与 {hist_b.shape}")
    return float(0.5 * np.sum(np.abs(hist_a - hist_b)))


def combined_error(P: Optional[np.ndarray], samples_gen: np.ndarray, samples_ref: np.ndarray,
                   dims: Optional[int] = None, bins: int = HISTOGRAM_BINS) -> float:
    """D₁ + D₂；P 为空时用参考样本的谱估计代替真实功率谱。"""
    samples_ref, dims = _batch(samples_ref, dims)
    if P is None:
        P = estimate_spectrum(samples_ref, dims)
    hist_gen, _ = marginal_histogram(samples_gen, bins)
    hist_ref, _ = marginal_histogram(samples_ref, bins)
    return d1(P, estimate_spectrum(samples_gen, dims)) + d2_marginal_tv(hist_gen, hist_ref)


def summarize(samples: np.ndarray, dims: Optional[int] = None, bins: int = HISTOGRAM_BINS) -> EnsembleSummary:
    samples, dims = _batch(samples, dims)
    masses, edges = marginal_histogram(samples, bins)
    return EnsembleSummary(spectrum_hat=estimate_spectrum(samples, dims), hist_masses=masses,
                           bin_edges=edges, sample_count=int(samples.shape[0]))


def split_half_floor(samples: np.ndarray, dims: Optional[int] = None, bins: int = HISTOGRAM_BINS) -> float:
    """把同一组样本分成两半后的 D₁ + D₂，即重采样噪声下限。"""
    samples, dims = _batch(samples, dims)
    half = samples.shape[0] // 2
    if half == 0:
        raise ConfigurationError("split-half 下限至少需要两个样本")
    first, second = samples[:half], samples[half:2 * half]
    return combined_error(estimate_spectrum(first, dims), second, first, dims, bins)


def binning_sensitivity(samples_gen: np.ndarray, samples_ref: np.ndarray,
                        bin_counts: Sequence[int] = (41, HISTOGRAM_BINS, 81)) -> Dict[int, float]:
    """不同分箱数下的 D₂，用于检查结果对分箱的稳健性。"""
    return {bins: d2_marginal_tv(marginal_histogram(samples_gen, bins)[0], marginal_histogram(samples_ref, bins)[0])
            for bins in bin_counts}


def summary_row(params: Dict[str, object], summary: EnsembleSummary, **metrics: float) -> Dict[str, object]:
    """以实验参数为键的一行结果。"""
    row = dict(params)
    row["sample_count"] = summary.sample_count
    row["mean_power"] = float(summary.spectrum_hat.mean())
    row.update({name: float(value) for name, value in metrics.items()})
    return row
