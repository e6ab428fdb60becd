"""
实验配置
扁平的 JSON 文档，由 pydantic 校验；也可以直接传入一次运行写出的 manifest.json，
或者 manifest 中记录的配置 token。
"""

import json
import os
from pathlib import Path
from typing import Any, Dict, List, Literal, Optional, get_args

from pydantic import BaseModel, ConfigDict, Field, NonNegativeInt, ValidationError, field_validator, model_validator

from ..config_coder import TOKEN_PREFIX, decompress_config
from ..constants import (
    DEFAULT_COARSE_SIDE,
    DEFAULT_EPSILON,
    DEFAULT_HORIZON,
    DEFAULT_XI_FACTOR,
    PHI4_CRITICAL_BETA,
    SEED_ENV_VAR,
    TRAIN_HORIZON,
    TRAIN_INITIAL_ITERATIONS,
    TRAIN_LEARNING_RATE,
    TRAIN_TIME_STEPS,
    TRAIN_WARM_ITERATIONS,
)
from ..exceptions import ConfigurationError
from ..phi4 import MCMCParams
from ..score_fit import TrainConfig
from ..utils import is_power_of_two

ExperimentName = Literal["fig2-gaussian", "fig3-phi4", "hessian-stats", "wavelet-check", "schedule-sweep"]
EXPERIMENTS = get_args(ExperimentName)

# 子命令别名到实验名的映射
EXPERIMENT_ALIASES = {
    "fig2": "fig2-gaussian",
    "fig2-gaussian": "fig2-gaussian",
    "fig3": "fig3-phi4",
    "fig3-phi4": "fig3-phi4",
    "hessian-stats": "hessian-stats",
    "wavelet-check": "wavelet-check",
    "schedule-sweep": "schedule-sweep",
}


class McmcSettings(BaseModel):
    model_config = ConfigDict(extra="forbid")

    sweeps: int = Field(2000, ge=1)
    burn_in: int = Field(500, ge=0)
    thinning: int = Field(10, ge=1)
    proposal_std: float = Field(1.0, gt=0)
    chains: int = Field(8, ge=1)

    def to_params(self) -> MCMCParams:
        return MCMCParams(sweeps=self.sweeps, burn_in=self.burn_in, thinning=self.thinning,
                          proposal_std=self.proposal_std, chains=self.chains)


class TrainSettings(BaseModel):
    model_config = ConfigDict(extra="forbid")

    horizon: float = Field(TRAIN_HORIZON, gt=0)
    time_steps: int = Field(TRAIN_TIME_STEPS, ge=1)
    learning_rate: float = Field(TRAIN_LEARNING_RATE, gt=0)
    initial_iterations: int = Field(TRAIN_INITIAL_ITERATIONS, ge=1)
    warm_iterations: int = Field(TRAIN_WARM_ITERATIONS, ge=1)
    basis_powers: List[int] = Field(default_factory=lambda: [4])

    def to_config(self) -> TrainConfig:
        return TrainConfig(horizon=self.horizon, time_steps=self.time_steps, learning_rate=self.learning_rate,
                           initial_iterations=self.initial_iterations, warm_iterations=self.warm_iterations)


class ExperimentConfig(BaseModel):
    """所有子命令共用的配置；未用到的字段保持默认值即可。"""
    model_config = ConfigDict(extra="forbid")

    experiment: Optional[ExperimentName] = None
    seeds: List[NonNegativeInt] = Field(default_factory=lambda: [0], min_length=1)

    # --- 网格 ---
    sides: List[int] = Field(default_factory=lambda: [16, 32, 64], min_length=1)
    dims: Literal[1, 2] = 1
    steps: List[int] = Field(default_factory=lambda: [16, 32, 64, 128, 256, 512, 1024], min_length=1)
    deltas: List[float] = Field(default_factory=lambda: [0.1, 0.05, 0.025, 0.0125], min_length=1)
    horizon: float = Field(DEFAULT_HORIZON, gt=0)
    horizons: List[float] = Field(default_factory=lambda: [1.5, 3.0, 6.0], min_length=1)

    # --- 高斯谱 ---
    eta: float = Field(1.0, gt=0)
    xi: Optional[float] = Field(None, gt=0)
    normalization: Literal["raw", "trace"] = "raw"
    epsilon: float = Field(DEFAULT_EPSILON, gt=0)
    methods: List[Literal["sgm", "wsgm-1scale"]] = Field(default_factory=lambda: ["sgm", "wsgm-1scale"], min_length=1)
    spectra: int = Field(5, ge=1)
    kappa_max: float = Field(100.0, ge=1)

    # --- 小波 ---
    wavelet: str = "haar"
    wavelets: List[str] = Field(default_factory=lambda: ["haar", "daubechies-4"], min_length=1)
    scales: Optional[int] = Field(None, ge=1)
    coarse_side: int = Field(DEFAULT_COARSE_SIDE, ge=2)

    # --- phi4 ---
    beta: float = Field(PHI4_CRITICAL_BETA, ge=0)
    mcmc: McmcSettings = Field(default_factory=McmcSettings)
    train: TrainSettings = Field(default_factory=TrainSettings)

    # --- 样本预算 ---
    sample_count: int = Field(1000, ge=2)
    hessian_samples: int = Field(200, ge=1)
    preview: bool = True

    out: Optional[str] = None

    @field_validator("sides")
    @classmethod
    def _check_sides(cls, sides: List[int]) -> List[int]:
        for side in sides:
            if not is_power_of_two(side) or side < 4:
                raise ValueError(f"边长必须是不小于 4 的 2 的幂: {side}")
        return sides

    @field_validator("steps")
    @classmethod
    def _check_steps(cls, steps: List[int]) -> List[int]:
        if any(n < 1 for n in steps):
            raise ValueError("步数网格中的值必须为正")
        return sorted(set(steps))

    @field_validator("deltas", "horizons")
    @classmethod
    def _check_positive(cls, values: List[float]) -> List[float]:
        if any(v <= 0 for v in values):
            raise ValueError("网格中的值必须为正")
        return values

    @model_validator(mode="after")
    def _check_budget(self) -> "ExperimentConfig":
        if self.mcmc.burn_in >= self.mcmc.sweeps:
            raise ValueError("mcmc.burn_in 必须小于 mcmc.sweeps")
        return self

    def xi_for(self, side: int) -> float:
        """未指定 ξ 时取 2π/L（最低非零频率）。"""
        return self.xi if self.xi is not None else DEFAULT_XI_FACTOR / side

    def scales_for(self, side: int) -> int:
        if self.scales is not None:
            return self.scales
        return max(1, side.bit_length() - self.coarse_side.bit_length())

    def echo(self) -> Dict[str, Any]:
        return self.model_dump(mode="json")


def _read_source(source: str) -> Dict[str, Any]:
    """读取配置文件、manifest 或配置 token。"""
    if source.startswith(TOKEN_PREFIX):
        return decompress_config(source)
    path = Path(source)
    if not path.exists():
        raise ConfigurationError(f"配置文件不存在: {source}")
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise ConfigurationError(f"配置文件不是合法的 JSON: {e}") from e
    if not isinstance(data, dict):
        raise ConfigurationError("配置文件的顶层必须是 JSON 对象")
    # manifest.json 中的 config 字段就是当时使用的完整配置
    if "config" in data and "version" in data:
        data = data["config"]
    return data


def load_config(source: str, experiment: Optional[str] = None) -> ExperimentConfig:
    """
    加载并校验配置。

    参数:
        source: 配置文件路径、manifest 路径或 wsgm: 开头的 token。
        experiment: 命令行子命令（可以是别名）；与配置中的 experiment 不一致时报错。
    """
    data = dict(_read_source(source))
    if data.get("experiment") in EXPERIMENT_ALIASES:
        data["experiment"] = EXPERIMENT_ALIASES[data["experiment"]]
    if experiment is not None:
        canonical = EXPERIMENT_ALIASES.get(experiment)
        if canonical is None:
            raise ConfigurationError(f"未知子命令: {experiment}")
        declared = data.get("experiment")
        if declared is not None and EXPERIMENT_ALIASES.get(declared, declared) != canonical:
            raise ConfigurationError(f"配置中的实验 {declared} 与子命令 {experiment} 不一致")
        data["experiment"] = canonical

    seed_override = os.environ.get(SEED_ENV_VAR)
    if seed_override:
        try:
            data["seeds"] = [int(seed_override)]
        except ValueError as e:
            raise ConfigurationError(f"{SEED_ENV_VAR} 必须是整数: {seed_override}") from e

    try:
        return ExperimentConfig.model_validate(data)
    except ValidationError as e:
        raise ConfigurationError(f"配置校验失败:\n{e}") from e
