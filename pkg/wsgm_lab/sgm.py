"""
正向 OU 加噪、逆向 Euler-Maruyama 采样，以及小波级联的 WSGM 采样。
"""

from dataclasses import dataclass
from typing import List, Optional, Protocol, Sequence, Tuple

import numpy as np
import scipy.linalg
from loguru import logger

from .constants import EIGEN_FLOOR
from .exceptions import ConfigurationError, DomainError, NumericalDivergenceError, ShapeError
from .gauss_process import (
    ConditionalGaussian,
    StationaryGaussian,
    conditional_from_covariance,
    covariance_matrix,
    score_exact,
)
from .wavelet import FilterPair, NormalizerSet, operator_matrices, synthesize_once


# --- 时间离散 ---

@dataclass(frozen=True)
class Schedule:
    """均匀时间网格 t_k = kδ，k = 0..N，δ = T/N。"""
    horizon: float
    steps: int

    def __post_init__(self):
        if not self.horizon > 0:
            raise ConfigurationError(f"时间范围 T 必须为正: {self.horizon}")
        if int(self.steps) != self.steps or self.steps < 0:
            raise ConfigurationError(f"步数 N 必须为非负整数: {self.steps}")
        object.__setattr__(self, "horizon", float(self.horizon))
        object.__setattr__(self, "steps", int(self.steps))

    @classmethod
    def uniform(cls, horizon: float, steps: int) -> "Schedule":
        return cls(horizon=horizon, steps=steps)

    @property
    def step_size(self) -> float:
        return self.horizon / self.steps if self.steps else 0.0

    @property
    def step_sizes(self) -> np.ndarray:
        return np.full(self.steps, self.step_size)

    @property
    def grid(self) -> np.ndarray:
        if not self.steps:
            return np.zeros(1)
        times = np.arange(self.steps + 1) * self.step_size
        times[-1] = self.horizon
        return times


class ScoreFunction(Protocol):
    """(t, x, conditioning) → 与 x 同形状的分数。"""

    def __call__(self, t: float, x: np.ndarray, conditioning: Optional[np.ndarray] = None) -> np.ndarray:
        ...


# --- 正向与逆向过程 ---

def forward_noise(x0: np.ndarray, t: float, rng: np.random.Generator) -> np.ndarray:
    """x_t = e^{−t} x_0 + (1 − e^{−2t})^{1/2} z。"""
    if t < 0:
        raise DomainError(f"扩散时间不能为负: {t}")
    x0 = np.asarray(x0, dtype=float)
    noise = rng.standard_normal(x0.shape)
    return np.exp(-t) * x0 + np.sqrt(-np.expm1(-2.0 * t)) * noise


def euler_maruyama_reverse(score: ScoreFunction, sched: Schedule, rng: np.random.Generator,
                           shape: Tuple[int, ...], conditioning: Optional[np.ndarray] = None) -> np.ndarray:
    """
    从 N(0, Id) 出发，按 k = N..1 迭代
    x ← x + δ(x + 2 s_{t_k}(x)) + √(2δ) z，返回 t_0 时刻的样本。
    """
    x = rng.standard_normal(shape)
    if not sched.steps:
        return x

    delta = sched.step_size
    noise_scale = np.sqrt(2.0 * delta)
    times = sched.grid
    for k in range(sched.steps, 0, -1):
        drift = np.asarray(score(times[k], x, conditioning))
        if not np.all(np.isfinite(drift)):
            raise NumericalDivergenceError(f"第 {k} 步分数出现非有限值 (t = {times[k]:.4g})", step=k)
        x = x + delta * (x + 2.0 * drift) + noise_scale * rng.standard_normal(shape)
        if not np.all(np.isfinite(x)):
            raise NumericalDivergenceError(f"第 {k} 步状态出现非有限值 (t = {times[k]:.4g})", step=k)
    return x


def wsgm_sample(coarse_score: ScoreFunction, cond_scores: Sequence[ScoreFunction], f: FilterPair,
                norms: NormalizerSet, sched: Schedule, rng: np.random.Generator,
                side: int, dims: int, count: int = 1) -> np.ndarray:
    """
    由粗到细的级联采样。

    参数:
        cond_scores: cond_scores[j-1] 为尺度 j 上 x̄_j | x_j 的条件分数。
        side: 最终场 x_0 的边长。

    返回:
        形状为 (count, side, ...) 的样本。
    """
    scales = len(cond_scores)
    if norms.scales != scales:
        raise ConfigurationError(f"条件分数数量 {scales} 与归一化因子数量 {norms.scales} 不一致")
    if side % (2 ** scales):
        raise ShapeError(f"边长 {side} 不能被 2^{scales} 整除")

    coarse_shape = (count,) + (side // 2 ** scales,) * dims
    try:
        x = euler_maruyama_reverse(coarse_score, sched, rng, coarse_shape)
    except NumericalDivergenceError as e:
        raise e.with_scale(scales) from e

    channels = 2 ** dims - 1
    for j in range(scales, 0, -1):
        detail_shape = (count, channels) + (side // 2 ** j,) * dims
        try:
            detail = euler_maruyama_reverse(cond_scores[j - 1], sched, rng, detail_shape, conditioning=x)
        except NumericalDivergenceError as e:
            raise e.with_scale(j) from e
        x = norms.gamma[j - 1] * synthesize_once(x, detail, f, dims)
        logger.debug(f"WSGM: 完成尺度 j={j}，当前边长 {x.shape[-1]}")
    return x


# --- 精确分数 ---

def exact_conditional_score(A: np.ndarray, Gamma: np.ndarray, t: float,
                            x_bar: np.ndarray, x_low: np.ndarray) -> np.ndarray:
    """
    N(e^{−t} A x_low, e^{−2t}Γ + (1 − e^{−2t}) Id) 在 x̄_t 处的分数。
    A、Γ 已处于归一化坐标，γ 不再单独出现。
    """
    if t < 0:
        raise DomainError(f"扩散时间不能为负: {t}")
    n_detail, n_low = A.shape
    x_bar = np.asarray(x_bar, dtype=float)
    bar_flat = x_bar.reshape(-1, n_detail)
    low_flat = np.asarray(x_low, dtype=float).reshape(-1, n_low)
    decay = np.exp(-2.0 * t)
    cov_t = decay * Gamma + (1.0 - decay) * np.eye(n_detail)
    residual = bar_flat - np.exp(-t) * low_flat @ A.T
    try:
        factor = scipy.linalg.cho_factor(cov_t)
    except np.linalg.LinAlgError as e:
        raise DomainError(f"t = {t} 时条件协方差奇异: {e}") from e
    return -scipy.linalg.cho_solve(factor, residual.T).T.reshape(x_bar.shape)


class ExactScore:
    """平稳高斯场的精确分数。"""

    def __init__(self, g: StationaryGaussian):
        self.g = g

    def __call__(self, t: float, x: np.ndarray, conditioning: Optional[np.ndarray] = None) -> np.ndarray:
        return score_exact(self.g, t, x)


class DenseGaussianScore:
    """零均值、稠密协方差高斯分布的精确分数，用特征分解逐模式计算。"""

    def __init__(self, cov: np.ndarray, field_shape: Tuple[int, ...]):
        eigenvalues, eigenvectors = np.linalg.eigh(0.5 * (cov + cov.T))
        if eigenvalues.min() <= 0:
            raise DomainError("协方差矩阵不是正定的")
        self.eigenvalues = eigenvalues
        self.eigenvectors = eigenvectors
        self.field_shape = tuple(field_shape)

    def __call__(self, t: float, x: np.ndarray, conditioning: Optional[np.ndarray] = None) -> np.ndarray:
        decay = np.exp(-2.0 * t)
        flat = np.asarray(x, dtype=float).reshape(-1, self.eigenvalues.size)
        modes = flat @ self.eigenvectors / (decay * self.eigenvalues + 1.0 - decay)
        return -(modes @ self.eigenvectors.T).reshape(np.shape(x))


class ExactConditionalScore:
    """x̄ | x_low ~ N(A x_low, Γ) 加噪后的精确条件分数，Γ 的特征分解只做一次。"""

    def __init__(self, cond: ConditionalGaussian):
        eigenvalues, eigenvectors = np.linalg.eigh(cond.Gamma)
        floor = EIGEN_FLOOR * max(eigenvalues.max(), 1.0)
        self.cond = cond
        self.rank_deficient = bool(eigenvalues.min() <= floor)
        self.eigenvalues = np.clip(eigenvalues, 0.0, None)
        self.eigenvectors = eigenvectors

    def __call__(self, t: float, x: np.ndarray, conditioning: Optional[np.ndarray] = None) -> np.ndarray:
        if conditioning is None:
            raise ConfigurationError("条件分数需要低频条件 x_low")
        if t == 0 and self.rank_deficient:
            raise DomainError("Γ 秩亏，t = 0 时条件分数无定义")
        A = self.cond.A
        decay = np.exp(-2.0 * t)
        x = np.asarray(x, dtype=float)
        residual = x.reshape(-1, A.shape[0]) - np.exp(-t) * np.asarray(conditioning).reshape(-1, A.shape[1]) @ A.T
        modes = residual @ self.eigenvectors / (decay * self.eigenvalues + 1.0 - decay)
        return -(modes @ self.eigenvectors.T).reshape(x.shape)


def exact_cascade_scores(g: StationaryGaussian, f: FilterPair,
                         norms: NormalizerSet) -> Tuple[DenseGaussianScore, List[ExactConditionalScore]]:
    """为零均值高斯目标构造所有尺度上的精确分数 (coarse, [尺度 1..J 的条件分数])。"""
    if g.mean != 0:
        raise ConfigurationError("精确级联分数仅支持零均值场")
    cov = covariance_matrix(g)
    side = g.side
    conditionals = []
    for gamma in norms.gamma:
        cond = conditional_from_covariance(cov, f, gamma, side, g.dims)
        conditionals.append(ExactConditionalScore(cond))
        G, _ = operator_matrices(f, side, g.dims)
        cov = G @ cov @ G.T / gamma ** 2
        side //= 2
    return DenseGaussianScore(cov, (side,) * g.dims), conditionals
