"""
周期 L×L 格点上的 φ⁴ 模型
能量 E(x) = β Σ_{边} (x(u) − x(v))² + Σ_u (x(u)² − 1)²（每条无向边计一次，
等价于对有序近邻对求和再乘 β/2），以及梯度、Hessian、Metropolis 数据生成
与像素域 / 小波域 Hessian 条件数统计。
"""

import math
from dataclasses import dataclass, field
from typing import Dict, Tuple

import numpy as np
from loguru import logger
from scipy import stats

from .constants import (
    HESSIAN_HISTOGRAM_BINS,
    HESSIAN_SIDE_CAP,
    KAPPA_TRIM_FRACTION,
    PHI4_CRITICAL_BETA,
    TARGET_ACCEPTANCE,
    TUNE_INTERVAL,
)
from .exceptions import ConfigurationError, ResourceCapError, ShapeError
from .wavelet import FilterPair, operator_matrices

LATTICE_AXES = (-2, -1)


@dataclass(frozen=True)
class Phi4Config:
    side: int
    beta: float = PHI4_CRITICAL_BETA

    def __post_init__(self):
        if self.side < 4 or self.side % 2:
            raise ConfigurationError(f"边长必须为不小于 4 的偶数: {self.side}")
        if self.beta < 0:
            raise ConfigurationError(f"β 不能为负: {self.beta}")


@dataclass(frozen=True)
class MCMCParams:
    """
    sweeps 为总 sweep 数（含 burn-in），每个 sweep 由两个棋盘格半步组成。
    chains 条链并行推进；tune 为 True 时在 burn-in 期间调节提议宽度。
    """
    sweeps: int
    burn_in: int
    thinning: int = 1
    proposal_std: float = 1.0
    chains: int = 1
    tune: bool = True

    def __post_init__(self):
        if self.sweeps < 1 or not 0 <= self.burn_in < self.sweeps:
            raise ConfigurationError(f"要求 0 ≤ burn_in < sweeps: burn_in={self.burn_in}, sweeps={self.sweeps}")
        if self.thinning < 1:
            raise ConfigurationError(f"thinning 必须至少为 1: {self.thinning}")
        if self.proposal_std <= 0:
            raise ConfigurationError(f"提议宽度必须为正: {self.proposal_std}")
        if self.chains < 1:
            raise ConfigurationError(f"链数必须至少为 1: {self.chains}")

    @property
    def kept_per_chain(self) -> int:
        return (self.sweeps - self.burn_in) // self.thinning


# --- 能量与导数 ---

def _check_lattice(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.ndim < 2 or x.shape[-1] != x.shape[-2]:
        raise ShapeError(f"φ⁴ 场必须是方形 2D 格点（可带批量轴）: {x.shape}")
    return x


def _neighbour_sum(x: np.ndarray) -> np.ndarray:
    return sum(np.roll(x, shift, axis=axis) for axis in LATTICE_AXES for shift in (1, -1))


def energy(x: np.ndarray, beta: float):
    """E(x)，批量输入时逐场返回。"""
    x = _check_lattice(x)
    coupling = sum(np.sum((x - np.roll(x, 1, axis=axis)) ** 2, axis=LATTICE_AXES) for axis in LATTICE_AXES)
    potential = np.sum((x ** 2 - 1.0) ** 2, axis=LATTICE_AXES)
    return beta * coupling + potential


def grad_energy(x: np.ndarray, beta: float) -> np.ndarray:
    """∇E = 2β(4x − Σ_近邻 x) + 4x(x² − 1)"""
    x = _check_lattice(x)
    return 2.0 * beta * (4.0 * x - _neighbour_sum(x)) + 4.0 * x * (x ** 2 - 1.0)


def coupling_matrix(side: int, beta: float) -> np.ndarray:
    """耦合项的 Hessian K = 2β(4 Id − 邻接矩阵)，行优先展平。"""
    if side > HESSIAN_SIDE_CAP:
        raise ResourceCapError(f"稠密 Hessian 边长 {side} 超过上限 {HESSIAN_SIDE_CAP}")
    d = side * side
    basis = np.eye(d).reshape(d, side, side)
    return (2.0 * beta * (4.0 * basis - _neighbour_sum(basis))).reshape(d, d)


def hessian_logp(x: np.ndarray, beta: float) -> np.ndarray:
    """−∇² log p(x) = K + diag(12x² − 4)"""
    x = _check_lattice(x)
    if x.ndim != 2:
        raise ShapeError("hessian_logp 只接受单个场")
    return coupling_matrix(x.shape[-1], beta) + np.diag((12.0 * x ** 2 - 4.0).ravel())


def projected_hessian(x: np.ndarray, beta: float, f: FilterPair, gamma: float) -> np.ndarray:
    """x̄_1 | x_1 条件分数的 Hessian γ² Ḡ H Ḡᵀ。"""
    hessian = hessian_logp(x, beta)
    _, G_bar = operator_matrices(f, x.shape[-1], 2)
    return gamma ** 2 * G_bar @ hessian @ G_bar.T


# --- Metropolis 采样 ---

def _checkerboard(side: int) -> Tuple[np.ndarray, np.ndarray]:
    parity = np.add.outer(np.arange(side), np.arange(side)) % 2
    return parity == 0, parity == 1


def _half_sweep(x: np.ndarray, mask: np.ndarray, beta: float, std: float, rng: np.random.Generator) -> int:
    """
    更新一种颜色的全部格点，返回接受次数。
    同色格点互不相邻，因此各格点的能量差相互独立。
    """
    proposal = x + std * rng.standard_normal(x.shape)
    neighbours = _neighbour_sum(x)
    delta = (beta * (4.0 * (proposal ** 2 - x ** 2) - 2.0 * (proposal - x) * neighbours)
             + (proposal ** 2 - 1.0) ** 2 - (x ** 2 - 1.0) ** 2)
    accept = mask & (np.log(rng.random(x.shape)) < -delta)
    x[accept] = proposal[accept]
    return int(np.count_nonzero(accept))


def mcmc_sample(cfg: Phi4Config, params: MCMCParams, rng: np.random.Generator) -> np.ndarray:
    """
    单格点随机游走 Metropolis，目标 p ∝ e^{−E}。

    返回:
        burn-in 之后每隔 thinning 个 sweep 保存的状态，形状 (kept × chains, L, L)。
    """
    side = cfg.side
    masks = _checkerboard(side)
    sites = params.chains * side * side
    x = rng.standard_normal((params.chains, side, side))
    log_std = math.log(params.proposal_std)

    kept = []
    window_accepted, window_sweeps, tune_round = 0, 0, 0
    total_accepted, total_sweeps = 0, 0
    for sweep in range(params.sweeps):
        std = math.exp(log_std)
        accepted = sum(_half_sweep(x, mask, cfg.beta, std, rng) for mask in masks)

        if sweep < params.burn_in:
            window_accepted += accepted
            window_sweeps += 1
            if params.tune and window_sweeps == TUNE_INTERVAL:
                # Robbins-Monro：log σ ← log σ + (接受率 − 目标)/√(k+1)
                rate = window_accepted / (window_sweeps * sites)
                tune_round += 1
                log_std += (rate - TARGET_ACCEPTANCE) / math.sqrt(tune_round)
                window_accepted, window_sweeps = 0, 0
            continue

        total_accepted += accepted
        total_sweeps += 1
        if (sweep - params.burn_in + 1) % params.thinning == 0:
            kept.append(x.copy())

    if total_sweeps:
        logger.info(f"φ⁴ MCMC (L={side}, β={cfg.beta}): 接受率 {total_accepted / (total_sweeps * sites):.3f}，"
                    f"提议宽度 {math.exp(log_std):.3f}，保存 {len(kept) * params.chains} 个场")
    return np.stack(kept).reshape(-1, side, side)


# --- Hessian 统计 ---

@dataclass(frozen=True, eq=False)
class DomainStats:
    """某一表示下每个样本的 λ_min、λ_max（带符号）与 κ = max|λ| / min|λ|。"""
    lambda_min: np.ndarray
    lambda_max: np.ndarray
    kappa: np.ndarray

    def summary(self) -> Dict[str, float]:
        """均值与标准差；κ 额外给出中位数和截尾均值，像素域 Hessian 不定时 κ 的分布是重尾的。"""
        result = {}
        for name in ("lambda_min", "lambda_max", "kappa"):
            values = getattr(self, name)
            result[f"{name}_mean"] = float(values.mean())
            result[f"{name}_std"] = float(values.std())
        result["kappa_median"] = float(np.median(self.kappa))
        result["kappa_trimmed_mean"] = float(stats.trim_mean(self.kappa, KAPPA_TRIM_FRACTION))
        result["indefinite_fraction"] = float(np.mean(self.lambda_min < 0))
        return result

    def histograms(self, bins: int = HESSIAN_HISTOGRAM_BINS) -> Dict[str, Tuple[np.ndarray, np.ndarray]]:
        return {name: np.histogram(getattr(self, name), bins=bins)
                for name in ("lambda_min", "lambda_max", "kappa")}


@dataclass(frozen=True, eq=False)
class HessianStats:
    pixel: DomainStats
    wavelet: DomainStats
    metadata: Dict[str, float] = field(default_factory=dict)

    def domains(self) -> Dict[str, DomainStats]:
        return {"pixel": self.pixel, "wavelet": self.wavelet}


def _spectrum_stats(matrices) -> DomainStats:
    lows, highs, kappas = [], [], []
    for matrix in matrices:
        eigenvalues = np.linalg.eigvalsh(matrix)
        magnitudes = np.abs(eigenvalues)
        lows.append(eigenvalues[0])
        highs.append(eigenvalues[-1])
        smallest = magnitudes.min()
        kappas.append(magnitudes.max() / smallest if smallest > 0 else np.inf)
    return DomainStats(lambda_min=np.array(lows), lambda_max=np.array(highs), kappa=np.array(kappas))


def hessian_stats(dataset: np.ndarray, beta: float, f: FilterPair, gamma: float) -> HessianStats:
    """对数据集中每个场计算像素域 Hessian 与小波投影 Hessian 的特征值统计。"""
    dataset = _check_lattice(dataset)
    if dataset.ndim == 2:
        dataset = dataset[np.newaxis]
    side = dataset.shape[-1]
    K = coupling_matrix(side, beta)
    _, G_bar = operator_matrices(f, side, 2)

    def full(x):
        return K + np.diag((12.0 * x ** 2 - 4.0).ravel())

    pixel = _spectrum_stats(full(x) for x in dataset)
    wavelet = _spectrum_stats(gamma ** 2 * G_bar @ full(x) @ G_bar.T for x in dataset)
    logger.info(f"Hessian 统计 (L={side}, {len(dataset)} 个样本): "
                f"像素域 κ 均值 {pixel.kappa.mean():.2f}（中位数 {np.median(pixel.kappa):.2f}），"
                f"小波域 κ 均值 {wavelet.kappa.mean():.2f}（中位数 {np.median(wavelet.kappa):.2f}）")
    return HessianStats(pixel=pixel, wavelet=wavelet,
                        metadata={"side": side, "beta": beta, "gamma": gamma, "count": len(dataset)})
