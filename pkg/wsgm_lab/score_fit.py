"""
线性参数化的分数模型与隐式分数匹配
模型势函数 s_{K,θ}(x) = ½ xᵀKx + Σ_u Σ_i θ_i v_i(x(u))，K 为平移不变的对称模板
（中心、最近邻、次近邻三个权重）。损失 E[|∇s|² + 2Δs] 是参数的二次型，
因此既可以梯度下降训练，也可以直接解线性方程作为参照解。
"""

from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
import scipy.linalg
from loguru import logger

from .constants import (
    BASIS_FD_STEP,
    BASIS_FD_TOLERANCE,
    DIVERGENCE_PATIENCE,
    GRAM_CONDITION_LIMIT,
    LOSS_GAP_TOLERANCE,
    TRAIN_HORIZON,
    TRAIN_INITIAL_ITERATIONS,
    TRAIN_LEARNING_RATE,
    TRAIN_TIME_STEPS,
    TRAIN_WARM_ITERATIONS,
)
from .exceptions import ConfigurationError, TrainingError
from .sgm import Schedule, ScoreFunction, forward_noise
from .utils import resolve_dims, spatial_axes
from .wavelet import FilterPair, analyze_once, synthesize_once

STENCIL_SIZE = 3

# 模板的位移集合：N1 为最近邻，N2 为次近邻
STENCIL_SHIFTS = {
    1: (((1,), (-1,)), ((2,), (-2,))),
    2: (((1, 0), (-1, 0), (0, 1), (0, -1)), ((1, 1), (1, -1), (-1, 1), (-1, -1))),
}


# --- 标量基函数 ---

@dataclass(frozen=True)
class BasisTerm:
    name: str
    value: Callable[[np.ndarray], np.ndarray]
    first: Callable[[np.ndarray], np.ndarray]
    second: Callable[[np.ndarray], np.ndarray]


class ScalarBasis:
    """v_1..v_m 及其一阶、二阶导数，构造时用有限差分校验导数。"""

    def __init__(self, terms: Sequence[BasisTerm]):
        self.terms = tuple(terms)
        self._check_derivatives()

    def __len__(self) -> int:
        return len(self.terms)

    @property
    def names(self) -> List[str]:
        return [term.name for term in self.terms]

    def _check_derivatives(self):
        points = np.linspace(-2.0, 2.0, 9)
        h = BASIS_FD_STEP
        for term in self.terms:
            for derivative, primitive, label in ((term.first, term.value, "一阶"), (term.second, term.first, "二阶")):
                analytic = derivative(points)
                numeric = (primitive(points + h) - primitive(points - h)) / (2 * h)
                if np.any(np.abs(analytic - numeric) > BASIS_FD_TOLERANCE * np.maximum(1.0, np.abs(analytic))):
                    raise ConfigurationError(f"基函数 {term.name} 的{label}导数与有限差分不符")

    def values(self, x: np.ndarray) -> np.ndarray:
        return np.stack([term.value(x) for term in self.terms]) if self.terms else np.zeros((0,) + np.shape(x))

    def firsts(self, x: np.ndarray) -> np.ndarray:
        return np.stack([term.first(x) for term in self.terms]) if self.terms else np.zeros((0,) + np.shape(x))

    def seconds(self, x: np.ndarray) -> np.ndarray:
        return np.stack([term.second(x) for term in self.terms]) if self.terms else np.zeros((0,) + np.shape(x))


def _monomial(power: int) -> BasisTerm:
    if power < 1:
        raise ConfigurationError(f"单项式次数必须至少为 1: {power}")
    return BasisTerm(
        name=f"x^{power}",
        value=lambda x: x ** power,
        first=lambda x: power * x ** (power - 1),
        second=lambda x: power * (power - 1) * x ** (power - 2) if power > 1 else np.zeros_like(x),
    )


def polynomial_basis(powers: Sequence[int] = (4,)) -> ScalarBasis:
    """由单项式 x^p 组成的基。x² 与模板中心权重共线，默认只取 x⁴。"""
    return ScalarBasis([_monomial(int(p)) for p in powers])


# --- 参数 ---

@dataclass(frozen=True, eq=False)
class LinearScoreParams:
    """stencil = (中心, 最近邻, 次近邻) 权重；theta 为基函数系数。"""
    stencil: np.ndarray
    theta: np.ndarray

    def __post_init__(self):
        stencil = np.asarray(self.stencil, dtype=float).reshape(-1)
        if stencil.size != STENCIL_SIZE:
            raise ConfigurationError(f"模板必须有 {STENCIL_SIZE} 个权重: {stencil.size}")
        object.__setattr__(self, "stencil", stencil)
        object.__setattr__(self, "theta", np.asarray(self.theta, dtype=float).reshape(-1))

    @classmethod
    def zeros(cls, basis_size: int) -> "LinearScoreParams":
        return cls(np.zeros(STENCIL_SIZE), np.zeros(basis_size))

    def as_vector(self) -> np.ndarray:
        return np.concatenate([self.stencil, self.theta])

    @classmethod
    def from_vector(cls, vector: np.ndarray) -> "LinearScoreParams":
        vector = np.asarray(vector, dtype=float)
        return cls(vector[:STENCIL_SIZE], vector[STENCIL_SIZE:])

    def to_dict(self) -> Dict[str, List[float]]:
        return {"stencil": self.stencil.tolist(), "theta": self.theta.tolist()}


@dataclass(frozen=True)
class TrainConfig:
    horizon: float = TRAIN_HORIZON
    time_steps: int = TRAIN_TIME_STEPS
    learning_rate: float = TRAIN_LEARNING_RATE
    initial_iterations: int = TRAIN_INITIAL_ITERATIONS
    warm_iterations: int = TRAIN_WARM_ITERATIONS

    def __post_init__(self):
        for name in ("horizon", "time_steps", "learning_rate", "initial_iterations", "warm_iterations"):
            if getattr(self, name) <= 0:
                raise ConfigurationError(f"TrainConfig.{name} 必须为正: {getattr(self, name)}")

    def schedule(self) -> Schedule:
        return Schedule(self.horizon, self.time_steps)


# --- 模型求值 ---

def _neighbour_sums(x: np.ndarray, dims: int) -> Tuple[np.ndarray, np.ndarray]:
    axes = spatial_axes(dims)
    near, far = STENCIL_SHIFTS[dims]
    return (sum(np.roll(x, shift, axis=axes) for shift in near),
            sum(np.roll(x, shift, axis=axes) for shift in far))


def apply_stencil(stencil: np.ndarray, x: np.ndarray, dims: int) -> np.ndarray:
    """K x"""
    near, far = _neighbour_sums(x, dims)
    return stencil[0] * x + stencil[1] * near + stencil[2] * far


def stencil_trace_weights(side: int, dims: int) -> np.ndarray:
    """Tr K 对三个模板权重的系数；位移在周期网格上退化为零时计入对角。"""
    d = side ** dims
    near, far = STENCIL_SHIFTS[dims]

    def on_diagonal(shifts):
        return sum(all(component % side == 0 for component in shift) for shift in shifts)

    return np.array([d, d * on_diagonal(near), d * on_diagonal(far)], dtype=float)


def stencil_symbol(stencil: np.ndarray, side: int, dims: int) -> np.ndarray:
    """K 的 Fourier 特征值，按 FFT 顺序排列。"""
    k = 2 * np.pi * np.fft.fftfreq(side)
    grids = np.meshgrid(*([k] * dims), indexing="ij")
    near, far = STENCIL_SHIFTS[dims]

    def cosine_sum(shifts):
        return sum(np.cos(sum(g * s for g, s in zip(grids, shift))) for shift in shifts)

    return stencil[0] + stencil[1] * cosine_sum(near) + stencil[2] * cosine_sum(far)


def _batch_dims(x: np.ndarray, dims: Optional[int]) -> int:
    return resolve_dims(x, x.ndim if dims is None else dims)


def potential_eval(p: LinearScoreParams, basis: ScalarBasis, x: np.ndarray, dims: Optional[int] = None):
    """s_{K,θ}(x)，批量输入时逐场返回。"""
    x = np.asarray(x, dtype=float)
    dims = _batch_dims(x, dims)
    axes = spatial_axes(dims)
    quadratic = 0.5 * np.sum(x * apply_stencil(p.stencil, x, dims), axis=axes)
    pointwise = np.tensordot(p.theta, basis.values(x), axes=1) if len(basis) else np.zeros_like(x)
    return quadratic + np.sum(pointwise, axis=axes)


def score_eval(p: LinearScoreParams, basis: ScalarBasis, x: np.ndarray, dims: Optional[int] = None) -> np.ndarray:
    """∇s = Kx + Σ_i θ_i v_i′(x)"""
    x = np.asarray(x, dtype=float)
    dims = _batch_dims(x, dims)
    score = apply_stencil(p.stencil, x, dims)
    if len(basis):
        score = score + np.tensordot(p.theta, basis.firsts(x), axes=1)
    return score


# --- 损失的二次型 ---

@dataclass(frozen=True, eq=False)
class GramStatistics:
    """
    ℓ(w) = wᵀMw + 2bᵀw，w = (模板, θ)。
    M = E[⟨Φ_k, Φ_l⟩]（Φ 为 ∇s 对各参数的导数场），b = E[Δs 对各参数的系数]。
    """
    gram: np.ndarray
    linear: np.ndarray
    count: int

    @classmethod
    def from_batch(cls, basis: ScalarBasis, batch: np.ndarray, dims: Optional[int] = None) -> "GramStatistics":
        batch = np.asarray(batch, dtype=float)
        if batch.ndim == 0 or batch.shape[0] == 0:
            raise ConfigurationError("损失需要非空批量")
        dims = batch.ndim - 1 if dims is None else dims
        dims = resolve_dims(batch[0], dims)
        count = batch.shape[0]
        side = batch.shape[-1]

        near, far = _neighbour_sums(batch, dims)
        features = np.concatenate([np.stack([batch, near, far]), basis.firsts(batch)])
        flat = features.reshape(features.shape[0], count, -1)
        gram = np.einsum("kni,lni->kl", flat, flat) / count

        laplacian = stencil_trace_weights(side, dims)
        if len(basis):
            seconds = basis.seconds(batch).reshape(len(basis), count, -1)
            laplacian = np.concatenate([laplacian, seconds.sum(axis=2).mean(axis=1)])
        return cls(gram=0.5 * (gram + gram.T), linear=laplacian, count=count)

    def loss(self, vector: np.ndarray) -> float:
        return float(vector @ self.gram @ vector + 2.0 * self.linear @ vector)

    def gradient(self, vector: np.ndarray) -> np.ndarray:
        return 2.0 * (self.gram @ vector + self.linear)

    def minimizer(self) -> np.ndarray:
        """−M⁻¹b；M 病态时退化为最小范数解并给出警告。"""
        condition = np.linalg.cond(self.gram)
        if not np.isfinite(condition) or condition > GRAM_CONDITION_LIMIT:
            logger.warning(f"Gram 矩阵病态 (κ = {condition:.3g})，改用最小范数解")
            solution, *_ = np.linalg.lstsq(self.gram, -self.linear, rcond=None)
            return solution
        return scipy.linalg.solve(self.gram, -self.linear, assume_a="sym")


def ism_loss(p: LinearScoreParams, basis: ScalarBasis, batch: np.ndarray, dims: Optional[int] = None) -> float:
    """E[|∇s(x)|² + 2Δs(x)]"""
    return GramStatistics.from_batch(basis, batch, dims).loss(p.as_vector())


def ism_loss_grad(p: LinearScoreParams, basis: ScalarBasis, batch: np.ndarray,
                  dims: Optional[int] = None) -> LinearScoreParams:
    return LinearScoreParams.from_vector(GramStatistics.from_batch(basis, batch, dims).gradient(p.as_vector()))


def solve_least_squares(basis: ScalarBasis, batch: np.ndarray, dims: Optional[int] = None) -> LinearScoreParams:
    return LinearScoreParams.from_vector(GramStatistics.from_batch(basis, batch, dims).minimizer())


# --- 梯度下降 ---

class _Descent:
    """以 Gram 矩阵伪逆为预条件的梯度下降，记录损失并检测发散。"""

    def __init__(self, stats: GramStatistics, learning_rate: float):
        self.stats = stats
        self.learning_rate = learning_rate
        self.preconditioner = np.linalg.pinv(stats.gram, hermitian=True)

    def step(self, vector: np.ndarray) -> np.ndarray:
        return vector - 0.5 * self.learning_rate * self.preconditioner @ self.stats.gradient(vector)

    def run(self, vector: np.ndarray, iterations: int, time_index: Optional[int] = None) -> np.ndarray:
        loss = self.stats.loss(vector)
        rising = 0
        for _ in range(iterations):
            vector = self.step(vector)
            new_loss = self.stats.loss(vector)
            if not np.isfinite(new_loss):
                raise TrainingError(f"时间点 {time_index} 的损失出现非有限值", time_index=time_index)
            rising = rising + 1 if new_loss > loss else 0
            if rising >= DIVERGENCE_PATIENCE:
                raise TrainingError(f"时间点 {time_index} 的损失连续 {rising} 次上升", time_index=time_index)
            loss = new_loss
        return vector


def _relative_gap(loss: float, oracle: float) -> float:
    return (loss - oracle) / max(abs(oracle), np.finfo(float).tiny)


def iterations_to_gap(stats: GramStatistics, start: LinearScoreParams, gap: float = LOSS_GAP_TOLERANCE,
                      learning_rate: float = TRAIN_LEARNING_RATE, max_iterations: int = TRAIN_INITIAL_ITERATIONS) -> int:
    """从 start 出发，损失与参照解的相对差距降到 gap 以内所需的迭代次数；达不到时返回 max_iterations。"""
    oracle = stats.loss(stats.minimizer())
    descent = _Descent(stats, learning_rate)
    vector = start.as_vector()
    for iteration in range(max_iterations):
        if _relative_gap(stats.loss(vector), oracle) <= gap:
            return iteration
        vector = descent.step(vector)
    return max_iterations


# --- 按时间训练 ---

@dataclass(frozen=True, eq=False)
class ScoreTable:
    """每个训练时间点的参数、最终损失与参照解损失。"""
    times: np.ndarray
    params: Tuple[LinearScoreParams, ...]
    losses: np.ndarray
    oracle_losses: np.ndarray
    basis_powers: Tuple[int, ...] = (4,)
    dims: int = 2
    metadata: Dict[str, float] = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.params)

    @property
    def loss_gaps(self) -> np.ndarray:
        return np.array([_relative_gap(a, b) for a, b in zip(self.losses, self.oracle_losses)])

    @cached_property
    def _vectors(self) -> np.ndarray:
        return np.stack([p.as_vector() for p in self.params])

    def at(self, t: float) -> LinearScoreParams:
        """在训练网格上线性插值，超出范围时取端点。"""
        vectors = self._vectors
        interpolated = [np.interp(t, self.times, vectors[:, k]) for k in range(vectors.shape[1])]
        return LinearScoreParams.from_vector(np.array(interpolated))

    def basis(self) -> ScalarBasis:
        return polynomial_basis(self.basis_powers)


def train_schedule(dataset: np.ndarray, sched: Optional[Schedule], cfg: TrainConfig, rng: np.random.Generator,
                   basis_powers: Sequence[int] = (4,), dims: Optional[int] = None) -> ScoreTable:
    """
    在时间网格的每个 t_k 上对加噪数据拟合分数模型。
    t = 0 时从零参数做 initial_iterations 步下降，之后从上一时间点热启动做 warm_iterations 步。
    """
    dataset = np.asarray(dataset, dtype=float)
    dims = dataset.ndim - 1 if dims is None else dims
    sched = cfg.schedule() if sched is None else sched
    basis = polynomial_basis(basis_powers)

    vector = LinearScoreParams.zeros(len(basis)).as_vector()
    params, losses, oracles = [], [], []
    times = sched.grid
    for k, t in enumerate(times):
        noised = forward_noise(dataset, t, rng) if t > 0 else dataset
        stats = GramStatistics.from_batch(basis, noised, dims)
        iterations = cfg.initial_iterations if k == 0 else cfg.warm_iterations
        vector = _Descent(stats, cfg.learning_rate).run(vector, iterations, time_index=k)

        loss, oracle = stats.loss(vector), stats.loss(stats.minimizer())
        if _relative_gap(loss, oracle) > LOSS_GAP_TOLERANCE:
            logger.warning(f"t = {t:.4g}: 下降结果与参照解的损失差距 {_relative_gap(loss, oracle):.3%}")
        params.append(LinearScoreParams.from_vector(vector))
        losses.append(loss)
        oracles.append(oracle)
        if k % max(1, len(times) // 10) == 0:
            logger.debug(f"训练 t = {t:.4g} ({k + 1}/{len(times)}): 损失 {loss:.6g}，参照 {oracle:.6g}")

    return ScoreTable(times=times, params=tuple(params), losses=np.array(losses), oracle_losses=np.array(oracles),
                      basis_powers=tuple(int(p) for p in basis_powers), dims=dims,
                      metadata={"horizon": sched.horizon, "steps": sched.steps, "count": int(dataset.shape[0])})


# --- 分数对象 ---

class FittedScore:
    """按时间插值的拟合分数，满足 ScoreFunction 协议。"""

    def __init__(self, table: ScoreTable):
        self.table = table
        self.basis = table.basis()

    def __call__(self, t: float, x: np.ndarray, conditioning: Optional[np.ndarray] = None) -> np.ndarray:
        return score_eval(self.table.at(t), self.basis, x, self.table.dims)


def conditional_score_projected(full_score: ScoreFunction, f: FilterPair, gamma: float, t: float,
                                x_bar: np.ndarray, x_low: np.ndarray, dims: Optional[int] = None) -> np.ndarray:
    """
    由尺度 j−1 的整场分数得到 x̄_j | x_j 的条件分数：
    在 x = γ(Gᵀx_low + Ḡᵀx̄) 处求整场分数，再返回 γ Ḡ 作用后的结果。
    """
    x_low = np.asarray(x_low, dtype=float)
    dims = resolve_dims(x_low, x_low.ndim if dims is None else dims)
    field_ = gamma * synthesize_once(x_low, x_bar, f, dims)
    _, detail = analyze_once(np.asarray(full_score(t, field_)), f, dims)
    return gamma * detail


class ProjectedConditionalScore:
    def __init__(self, full_score: ScoreFunction, f: FilterPair, gamma: float, dims: int):
        self.full_score = full_score
        self.f = f
        self.gamma = gamma
        self.dims = dims

    def __call__(self, t: float, x: np.ndarray, conditioning: Optional[np.ndarray] = None) -> np.ndarray:
        if conditioning is None:
            raise ConfigurationError("条件分数需要低频条件 x_low")
        return conditional_score_projected(self.full_score, self.f, self.gamma, t, x, conditioning, self.dims)
