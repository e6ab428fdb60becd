"""
高斯目标上离散逆向链的精确分析（不采样）
所有量都按协方差特征值（平稳情形下即 Fourier 模式）逐个计算：
协方差/均值递推、Gaussian KL、离散化误差上界 E_T 与 E_δ、一阶展开、
连续时间逆向边缘方差，以及达到给定谱误差所需的步数 N(ε)。
"""

import math
from dataclasses import dataclass
from typing import Callable, List, NamedTuple, Optional, Tuple, Union

import numpy as np
from loguru import logger

from .constants import DEFAULT_HORIZON, EIGEN_FLOOR, SERIES_THRESHOLD, STEP_SEARCH_CAP
from .exceptions import ConfigurationError, DomainError
from .gauss_process import StationaryGaussian, conditional_gaussian, exact_normalizers
from .sgm import Schedule
from .utils import spatial_axes
from .wavelet import FilterPair, make_filters, operator_matrices

METHODS = ("sgm", "wsgm-1scale")


@dataclass(frozen=True, eq=False)
class DiscretizationOutcome:
    """离散链终点 N(μ̂_N, P̂_N) 的逐模式参数及输入 (T, δ, N)。"""
    spectrum_out: np.ndarray
    mean_out: Optional[np.ndarray]
    horizon: float
    step: float
    steps: int


@dataclass(frozen=True)
class ErrorBreakdown:
    """E_T、E_δ 两项上界、逐模态精确 KL 以及余项。"""
    e_T: float
    e_delta: float
    kl_exact: float
    residual: float


class ExpansionTerms(NamedTuple):
    sigma_delta: np.ndarray
    sigma_T: np.ndarray
    mu_delta: np.ndarray
    mu_T: np.ndarray


# --- 辅助函数 ---

def _positive(spectrum) -> np.ndarray:
    values = np.asarray(spectrum, dtype=float)
    if np.any(~np.isfinite(values)) or np.any(values <= 0):
        raise DomainError("特征值必须为正且有限")
    return values


def _noised_variance(p: np.ndarray, t: float) -> np.ndarray:
    """σ_t = e^{−2t} p + 1 − e^{−2t}"""
    return np.exp(-2.0 * t) * p - np.expm1(-2.0 * t)


def _steps_taken(sched: Schedule, stop_after: Optional[int]) -> int:
    if sched.steps and sched.step_size >= 1:
        raise ConfigurationError(f"递推要求 δ < 1，当前 δ = {sched.step_size}")
    if stop_after is None:
        return sched.steps
    if not 0 <= stop_after <= sched.steps:
        raise ConfigurationError(f"stop_after 必须位于 [0, {sched.steps}]: {stop_after}")
    return int(stop_after)


def f_divergence(t) -> np.ndarray:
    """f(t) = t − log(1 + t)"""
    return np.asarray(t) - np.log1p(t)


def _log_ratio(p: np.ndarray) -> np.ndarray:
    """log p / (p − 1)，在 |p − 1| < SERIES_THRESHOLD 内用四项级数。"""
    u = p - 1.0
    near = np.abs(u) < SERIES_THRESHOLD
    safe_u = np.where(near, 1.0, u)
    direct = np.log(np.where(near, 2.0, p)) / safe_u
    series = 1.0 - u / 2.0 + u ** 2 / 3.0 - u ** 3 / 4.0
    return np.where(near, series, direct)


def _bound_terms(p: np.ndarray, horizon: float, delta: float) -> Tuple[float, float]:
    trace_T = abs(float(np.sum((p - 1.0) * p)))
    trace_delta = abs(float(np.sum(1.0 / p - 0.5 * p * _log_ratio(p) + (1.0 - 1.0 / p) / 3.0)))
    e_T = float(f_divergence(math.exp(-4.0 * horizon) * trace_T))
    e_delta = float(f_divergence(delta * trace_delta))
    return e_T, e_delta


# --- 递推 ---

def covariance_recursion(spectrum, sched: Schedule, stop_after: Optional[int] = None) -> DiscretizationOutcome:
    """h_0 = 1，h_{k+1} = λ_k² h_k + 2δ，λ_k = 1 + δ − 2δ/σ_{T−kδ}。"""
    p = _positive(spectrum)
    steps = _steps_taken(sched, stop_after)
    delta, horizon = sched.step_size, sched.horizon

    h = np.ones_like(p)
    for k in range(steps):
        lam = 1.0 + delta - 2.0 * delta / _noised_variance(p, horizon - k * delta)
        h = lam ** 2 * h + 2.0 * delta
    return DiscretizationOutcome(spectrum_out=h, mean_out=None, horizon=horizon, step=delta, steps=steps)


def mean_recursion(spectrum, mu, sched: Schedule, stop_after: Optional[int] = None) -> np.ndarray:
    """h_0 = 0，h_{k+1} = λ_k h_k + 2δ e^{−(T−kδ)} μ / σ_{T−kδ}。"""
    p = _positive(spectrum)
    mu = np.broadcast_to(np.asarray(mu, dtype=float), p.shape)
    steps = _steps_taken(sched, stop_after)
    delta, horizon = sched.step_size, sched.horizon

    m = np.zeros_like(p)
    for k in range(steps):
        t = horizon - k * delta
        sigma = _noised_variance(p, t)
        m = (1.0 + delta - 2.0 * delta / sigma) * m + 2.0 * delta * math.exp(-t) * mu / sigma
    return m


# --- KL 与误差项 ---

def kl_gaussians(mu0, var0, mu1, var1) -> float:
    """
    KL(N(μ0, Σ0) ‖ N(μ1, Σ1))。
    Σ0、Σ1 以同一基下的特征值给出；也可以给出稠密矩阵，此时两者必须可交换。
    """
    if np.ndim(var0) == 2 or np.ndim(var1) == 2:
        return _kl_dense(mu0, var0, mu1, var1)
    v0, v1 = _positive(var0), _positive(var1)
    mu0 = np.broadcast_to(np.asarray(mu0, dtype=float), v0.shape)
    mu1 = np.broadcast_to(np.asarray(mu1, dtype=float), v1.shape)
    return float(0.5 * np.sum(np.log(v1 / v0) - 1.0 + v0 / v1 + (mu1 - mu0) ** 2 / v1))


def _kl_dense(mu0, cov0, mu1, cov1) -> float:
    cov0, cov1 = np.asarray(cov0, dtype=float), np.asarray(cov1, dtype=float)
    if cov0.shape != cov1.shape or cov0.ndim != 2 or cov0.shape[0] != cov0.shape[1]:
        raise ConfigurationError(f"协方差矩阵形状不一致: {cov0.shape} 与 {cov1.shape}")
    commutator = cov0 @ cov1 - cov1 @ cov0
    if np.linalg.norm(commutator) > 1e-10 * np.linalg.norm(cov0) * np.linalg.norm(cov1):
        raise DomainError("两个协方差矩阵不可交换，不支持该 KL 计算")
    # 可交换矩阵可同时对角化；Σ0 + Σ1 的特征向量在重特征值时仍是公共特征基
    _, basis = np.linalg.eigh(cov0 + np.pi * cov1)
    v0 = np.einsum("ij,ik,kj->j", basis, cov0, basis)
    v1 = np.einsum("ij,ik,kj->j", basis, cov1, basis)
    d = cov0.shape[0]
    shift = basis.T @ (np.broadcast_to(np.asarray(mu1, dtype=float), (d,))
                       - np.broadcast_to(np.asarray(mu0, dtype=float), (d,)))
    return kl_gaussians(0.0, v0, shift, v1)


def theorem1_bounds(spectrum, T: float, delta: float) -> ErrorBreakdown:
    """计算 E_T、E_δ，并与 N = T/δ 步精确递推的 KL 比较。"""
    p = _positive(spectrum)
    steps = int(round(T / delta))
    if steps < 1 or abs(steps * delta - T) > 1e-9 * T:
        raise ConfigurationError(f"T/δ 必须为正整数: T = {T}, δ = {delta}")
    e_T, e_delta = _bound_terms(p, T, delta)
    outcome = covariance_recursion(p, Schedule(T, steps))
    kl = kl_gaussians(0.0, p, 0.0, outcome.spectrum_out)
    return ErrorBreakdown(e_T=e_T, e_delta=e_delta, kl_exact=kl, residual=kl - e_T - e_delta)


def corollary7_expansion(spectrum, mu=0.0) -> ExpansionTerms:
    """P̂_N ≈ p + δΣ_δ + e^{−4T}Σ_T，μ̂_N ≈ μ + δμ_δ + e^{−2T}μ_T 的逐模式系数。"""
    p = _positive(spectrum)
    mu = np.broadcast_to(np.asarray(mu, dtype=float), p.shape)
    p_log_ratio = p * _log_ratio(p)
    sigma_delta = 1.0 - 0.5 * p * p_log_ratio
    sigma_T = -(p - 1.0) * p ** 2
    mu_delta = (-2.0 / p - 0.25 * p_log_ratio) * mu
    mu_T = p * mu
    return ExpansionTerms(sigma_delta=sigma_delta, sigma_T=sigma_T, mu_delta=mu_delta, mu_T=mu_T)


def backward_marginal_exact(spectrum, T: float, t: float) -> np.ndarray:
    """连续时间逆向过程 y_t（从 N(0, Id) 出发）的逐模式方差。"""
    p = _positive(spectrum)
    if not 0 <= t <= T:
        raise DomainError(f"要求 0 ≤ t ≤ T，当前 t = {t}, T = {T}")
    alpha = (p - 1.0) * math.exp(-2.0 * T)
    grown = 1.0 + alpha * math.exp(2.0 * t)
    decay = math.exp(-2.0 * t)
    return (1.0 - decay) * grown / (1.0 + alpha) + decay * grown ** 2 / (1.0 + alpha) ** 2


def spectrum_error(P_hat, P) -> float:
    """max|P̂ − P| / max|P|"""
    P_hat, P = np.asarray(P_hat, dtype=float), np.asarray(P, dtype=float)
    return float(np.max(np.abs(P_hat - P)) / np.max(np.abs(P)))


# --- 单尺度 WSGM 的精确分析 ---

@dataclass(frozen=True, eq=False)
class WsgmOutcome:
    """单尺度 WSGM 输出的联合协方差、像素域谱以及条件链的期望 KL。"""
    joint_covariance: np.ndarray
    spectrum: np.ndarray
    kl: float
    conditional_spectrum: np.ndarray


class WsgmOneScale:
    """
    以真实低频 x_1 为条件、用精确条件分数运行逆向链时，
    (x̄_1, x_1) 的联合协方差及其在像素域的 Fourier 对角。
    """

    def __init__(self, g: StationaryGaussian, f: FilterPair, gamma: Optional[float] = None):
        if gamma is None:
            gamma = exact_normalizers(g, f, 1).gamma[0]
        self.g = g
        self.cond = conditional_gaussian(g, f, gamma)
        eigenvalues, eigenvectors = np.linalg.eigh(self.cond.Gamma)
        floor = EIGEN_FLOOR * max(eigenvalues.max(), 1.0)
        self.modes = np.clip(eigenvalues, floor, None)
        self.basis = eigenvectors
        self.projected_mean = eigenvectors.T @ self.cond.A

        # 系数 → 像素 → Fourier 的合成矩阵，每列对应一个频率
        G, G_bar = operator_matrices(f, g.side, g.dims)
        d = g.dimension
        phases = np.fft.fftn(np.eye(d).reshape((d,) + g.shape), axes=spatial_axes(g.dims)).reshape(d, d)
        self.fourier = gamma * np.vstack([G_bar, G]) @ phases
        mean_cov = self.projected_mean @ self.cond.var_low @ self.projected_mean.T
        self.mean_energy = np.diag(mean_cov)

    def outcome(self, sched: Schedule) -> WsgmOutcome:
        h = covariance_recursion(self.modes, sched).spectrum_out
        mean_factor = mean_recursion(self.modes, 1.0, sched)

        U, V = self.basis, self.cond.var_low
        A_hat = U @ (mean_factor[:, np.newaxis] * self.projected_mean)
        Gamma_hat = (U * h) @ U.T
        off = A_hat @ V
        joint = np.block([[Gamma_hat + off @ A_hat.T, off], [off.T, V]])

        fourier = self.fourier
        spectrum = np.real(np.sum(np.conj(fourier) * (joint @ fourier), axis=0)) / self.g.dimension
        kl = kl_gaussians(0.0, self.modes, 0.0, h) + 0.5 * float(np.sum((mean_factor - 1.0) ** 2 * self.mean_energy / h))
        return WsgmOutcome(joint_covariance=joint, spectrum=spectrum.reshape(self.g.shape), kl=kl,
                           conditional_spectrum=self.modes)

    def error(self, sched: Schedule) -> float:
        return spectrum_error(self.outcome(sched).spectrum, self.g.spectrum)


def wsgm_one_scale_outcome(g: StationaryGaussian, f: FilterPair, sched: Schedule) -> WsgmOutcome:
    return WsgmOneScale(g, f).outcome(sched)


# --- N(ε) ---

@dataclass(frozen=True)
class StepsToError:
    """steps 为 None 表示在给定 T 下不可达，此时 floor 给出 T 限制的误差下限。"""
    steps: Optional[int]
    error: float
    extrapolated: bool = False
    reachable: bool = True
    floor: Optional[float] = None


def _error_function(target, method: str, horizon: float,
                    filters: Optional[FilterPair]) -> Tuple[Callable[[int], float], Optional[float]]:
    if method == "sgm":
        p = _positive(target.spectrum if isinstance(target, StationaryGaussian) else target)
        floor = spectrum_error(backward_marginal_exact(p, horizon, horizon), p)
        return (lambda n: spectrum_error(covariance_recursion(p, Schedule(horizon, n)).spectrum_out, p)), floor
    if method == "wsgm-1scale":
        if not isinstance(target, StationaryGaussian):
            raise ConfigurationError("wsgm-1scale 需要完整的 StationaryGaussian（含边长与维数）")
        setup = WsgmOneScale(target, filters or make_filters("haar"))
        return (lambda n: setup.error(Schedule(horizon, n))), None
    raise ConfigurationError(f"未知方法: {method}，可选 {METHODS}")


def steps_to_error(target: Union[StationaryGaussian, np.ndarray], epsilon: float, method: str = "sgm",
                   horizon: float = DEFAULT_HORIZON, filters: Optional[FilterPair] = None,
                   step_cap: int = STEP_SEARCH_CAP) -> StepsToError:
    """
    满足 spectrum_error ≤ ε 的最小 N。
    先在倍增网格上搜索（从 δ < 1 的最小 N 开始），再二分；超过上限时按幂律外推。
    """
    if epsilon <= 0:
        raise ConfigurationError(f"ε 必须为正: {epsilon}")
    error_at, floor = _error_function(target, method, horizon, filters)

    if floor is not None and floor > epsilon:
        logger.info(f"{method}: T = {horizon} 时误差下限 {floor:.4g} 高于 ε = {epsilon}")
        return StepsToError(steps=None, error=floor, reachable=False, floor=floor)

    # 不做任何反向步只对 ε ≥ 1 这种平凡目标成立
    if epsilon >= 1.0:
        initial = error_at(0)
        if initial <= epsilon:
            return StepsToError(steps=0, error=initial, floor=floor)

    # 1. 倍增网格
    first = int(math.floor(horizon)) + 1
    visited: List[Tuple[int, float]] = []
    n = first
    while True:
        err = error_at(n)
        visited.append((n, err))
        if err <= epsilon:
            break
        if n >= step_cap:
            return _extrapolate(visited, epsilon, floor)
        n = min(2 * n, step_cap)

    upper, upper_err = visited[-1]
    if len(visited) == 1:
        return StepsToError(steps=upper, error=upper_err, floor=floor)

    # 2. 二分
    lower = visited[-2][0]
    while upper - lower > 1:
        middle = (lower + upper) // 2
        err = error_at(middle)
        if err <= epsilon:
            upper, upper_err = middle, err
        else:
            lower = middle
    logger.debug(f"{method}: N(ε={epsilon}) = {upper}, 误差 {upper_err:.4g}")
    return StepsToError(steps=upper, error=upper_err, floor=floor)


def _extrapolate(visited: List[Tuple[int, float]], epsilon: float, floor: Optional[float]) -> StepsToError:
    """用最后两个网格点拟合 err ∝ N^{−b} 并外推。"""
    last_n, last_err = visited[-1]
    if len(visited) >= 2:
        prev_n, prev_err = visited[-2]
        if prev_err > last_err > 0 and last_n > prev_n:
            rate = math.log(prev_err / last_err) / math.log(last_n / prev_n)
            estimate = int(math.ceil(last_n * (last_err / epsilon) ** (1.0 / rate)))
            logger.info(f"N(ε) 超过上限 {last_n}，幂律外推 (b = {rate:.3f}) 得到 {estimate}")
            return StepsToError(steps=estimate, error=epsilon, extrapolated=True, floor=floor)
    logger.warning(f"N(ε) 无法外推，上限处误差为 {last_err:.4g}")
    return StepsToError(steps=None, error=last_err, reachable=False, floor=last_err if floor is None else floor)
