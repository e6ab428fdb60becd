"""
子命令处理器
每个 run_* 把配置展开成网格点，网格点在线程中并发计算（并发数由 --jobs 决定），
全部完成后按网格顺序串行写出结果表。
"""

import asyncio
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Dict, List, Sequence, Tuple

import numpy as np
from loguru import logger

from ..config_coder import derive_seed
from ..constants import (
    DENSE_DIM_CAP,
    HISTOGRAM_FILE,
    REPORT_FILE,
    RESULTS_FILE,
    SCORE_TABLE_DIR,
    STEPS_FILE,
    SUMMARY_FILE,
)
from ..data_manager import load_or_create_dataset, save_score_table, write_csv
from ..exceptions import NumericalDivergenceError
from ..field_renderer import render_contact_sheet
from ..gauss_analysis import (
    WsgmOneScale,
    corollary7_expansion,
    covariance_recursion,
    spectrum_error,
    steps_to_error,
    theorem1_bounds,
)
from ..gauss_process import SpectrumSpec, build_spectrum, condition_number
from ..metrics import binning_sensitivity, d1, d2_marginal_tv, estimate_spectrum, marginal_histogram, split_half_floor
from ..phi4 import Phi4Config, hessian_stats, mcmc_sample
from ..score_fit import FittedScore, ProjectedConditionalScore, train_schedule
from ..sgm import Schedule, euler_maruyama_reverse, wsgm_sample
from ..utils import relative_error
from ..wavelet import (
    NormalizerSet,
    analyze_once,
    decompose,
    estimate_normalizers,
    make_filters,
    normalized_lows,
    operator_matrices,
    reconstruct,
)
from .config import ExperimentConfig

ROUND_TRIP_TOLERANCE = 1e-10
UNITARITY_TOLERANCE = 1e-12


@dataclass
class RunContext:
    out_dir: Path
    jobs: int = 1


@dataclass
class RunResult:
    files: List[Path] = field(default_factory=list)
    passed: bool = True


# --- 并发调度 ---

async def run_grid(points: Sequence[Dict[str, Any]], worker: Callable[[Dict[str, Any]], Any], jobs: int) -> List[Any]:
    """
    在线程中并发执行 worker(point)，最多同时运行 jobs 个。
    所有任务结束后，若有失败则抛出第一个异常；返回值按网格顺序排列。
    """
    semaphore = asyncio.Semaphore(max(1, jobs))

    async def guarded(point: Dict[str, Any]):
        async with semaphore:
            return await asyncio.to_thread(worker, point)

    # 1. 为每个网格点创建任务
    tasks = [guarded(point) for point in points]

    # 2. 并发执行所有任务
    results = await asyncio.gather(*tasks, return_exceptions=True)

    # 3. 汇报失败的网格点
    failures = [(point, result) for point, result in zip(points, results) if isinstance(result, BaseException)]
    for point, error in failures:
        logger.error(f"网格点 {point} 失败: {error}")
    if failures:
        raise failures[0][1]
    return list(results)


def _rng(cfg: ExperimentConfig, point: Dict[str, Any], stream: int = 0) -> np.random.Generator:
    seed = derive_seed(point.get("seed", cfg.seeds[0]), {"experiment": cfg.experiment, **point})
    return np.random.default_rng([seed, stream])


def _phi4_dataset(cfg: ExperimentConfig, ctx: RunContext, side: int, seed: int) -> np.ndarray:
    """MCMC 数据集，按 (L, β, 种子, MCMC 参数) 缓存到检查点目录。"""
    key = {"kind": "phi4", "side": side, "beta": cfg.beta, "seed": seed, "mcmc": cfg.mcmc.model_dump()}
    rng = np.random.default_rng([derive_seed(seed, key), 0])
    return load_or_create_dataset(ctx.out_dir, key,
                                  lambda: mcmc_sample(Phi4Config(side, cfg.beta), cfg.mcmc.to_params(), rng))


# --- fig2-gaussian ---

def _fig2_point(cfg: ExperimentConfig, point: Dict[str, Any]) -> Tuple[List[Dict[str, Any]], Dict[str, Any]]:
    side, method = point["side"], point["method"]
    g = build_spectrum(SpectrumSpec(cfg.eta, cfg.xi_for(side), side, cfg.dims, cfg.normalization))
    f = make_filters(cfg.wavelet)
    horizon = cfg.horizon
    setup = WsgmOneScale(g, f) if method == "wsgm-1scale" else None

    curve = []
    for steps in cfg.steps:
        if horizon / steps >= 1:
            continue
        sched = Schedule(horizon, steps)
        if setup is None:
            estimate = covariance_recursion(g.spectrum, sched).spectrum_out
            sup_error = spectrum_error(estimate, g.spectrum)
            bounds = theorem1_bounds(g.spectrum, horizon, sched.step_size)
            kl = bounds.kl_exact
        else:
            outcome = setup.outcome(sched)
            sup_error = spectrum_error(outcome.spectrum, g.spectrum)
            bounds = theorem1_bounds(setup.modes, horizon, sched.step_size)
            kl = outcome.kl
        curve.append({"L": side, "method": method, "N": steps, "sup_error": sup_error, "kl": kl,
                      "e_T": bounds.e_T, "e_delta": bounds.e_delta})

    found = steps_to_error(g, cfg.epsilon, method, horizon, f)
    summary = {"L": side, "method": method, "epsilon": cfg.epsilon, "n_eps": found.steps, "error": found.error,
               "extrapolated": found.extrapolated, "reachable": found.reachable, "floor": found.floor,
               "kappa": condition_number(g)}
    logger.info(f"fig2: L={side}, {method}: N(ε={cfg.epsilon}) = {found.steps}")
    return curve, summary


async def run_fig2(cfg: ExperimentConfig, ctx: RunContext) -> RunResult:
    """每个 (L, 方法) 的误差-步数曲线（精确递推，不采样）与 N(ε)。"""
    points = [{"side": side, "method": method} for side in cfg.sides for method in cfg.methods]
    results = await run_grid(points, lambda point: _fig2_point(cfg, point), ctx.jobs)

    curves = [row for curve, _ in results for row in curve]
    summaries = [summary for _, summary in results]
    return RunResult(files=[
        write_csv(ctx.out_dir / RESULTS_FILE, curves, ["L", "method", "N", "sup_error", "kl", "e_T", "e_delta"]),
        write_csv(ctx.out_dir / STEPS_FILE, summaries),
    ])


# --- fig3-phi4 ---

def _train_scales(cfg: ExperimentConfig, ctx: RunContext, lows: List[np.ndarray], side: int, seed: int,
                  rng: np.random.Generator) -> List[FittedScore]:
    """在尺度 0..J 的归一化低频场上分别训练整场分数模型。"""
    train_cfg = cfg.train.to_config()
    scores = []
    for j, fields in enumerate(lows):
        table = train_schedule(fields, None, train_cfg, rng, cfg.train.basis_powers, dims=2)
        save_score_table(ctx.out_dir / SCORE_TABLE_DIR / f"L{side}_seed{seed}_scale{j}.json", table)
        worst = float(np.max(table.loss_gaps))
        logger.info(f"fig3: L={side} 尺度 {j} 训练完成，最大损失差距 {worst:.3%}")
        scores.append(FittedScore(table))
    return scores


def _fig3_point(cfg: ExperimentConfig, ctx: RunContext, point: Dict[str, Any]) -> List[Dict[str, Any]]:
    side, seed = point["side"], point["seed"]
    dataset = _phi4_dataset(cfg, ctx, side, seed)
    f = make_filters(cfg.wavelet)
    J = cfg.scales_for(side)
    norms = estimate_normalizers(dataset, J, f, dims=2)
    scores = _train_scales(cfg, ctx, normalized_lows(dataset, f, norms, dims=2), side, seed, _rng(cfg, point, 1))
    conditional = [ProjectedConditionalScore(scores[j - 1], f, norms.gamma[j - 1], dims=2) for j in range(1, J + 1)]

    reference = estimate_spectrum(dataset, 2)
    reference_hist, _ = marginal_histogram(dataset)
    floor = split_half_floor(dataset, 2)
    rng = _rng(cfg, point, 2)
    count = cfg.sample_count

    rows, previews = [], {"MCMC": dataset[:count]}
    for steps in cfg.steps:
        sched = Schedule(cfg.train.horizon, steps)
        for method in ("sgm", "wsgm"):
            row = {"L": side, "seed": seed, "method": method, "N": steps, "floor": floor}
            try:
                if method == "sgm":
                    samples = euler_maruyama_reverse(scores[0], sched, rng, (count, side, side))
                else:
                    samples = wsgm_sample(scores[J], conditional, f, norms, sched, rng, side, 2, count)
            except NumericalDivergenceError as e:
                logger.warning(f"fig3: L={side}, {method}, N={steps} 采样发散: {e}")
                rows.append({**row, "d1": math.nan, "d2": math.nan, "error": math.nan, "diverged": True})
                continue
            spectrum_gap = d1(reference, estimate_spectrum(samples, 2))
            marginal_gap = d2_marginal_tv(marginal_histogram(samples)[0], reference_hist)
            rows.append({**row, "d1": spectrum_gap, "d2": marginal_gap, "error": spectrum_gap + marginal_gap,
                         "diverged": False})
            previews[f"{method.upper()} N={steps}"] = samples
            if steps == cfg.steps[-1]:
                sensitivity = binning_sensitivity(samples, dataset)
                logger.info(f"fig3: L={side}, {method}: 不同分箱数下的 D2 = {sensitivity}")

    if cfg.preview:
        last = cfg.steps[-1]
        sheet = {title: fields for title, fields in previews.items() if title == "MCMC" or title.endswith(f"N={last}")}
        render_contact_sheet(sheet, ctx.out_dir / f"preview_L{side}_seed{seed}.png")
    return rows


async def run_fig3(cfg: ExperimentConfig, ctx: RunContext) -> RunResult:
    """φ⁴ 全流程：MCMC 数据 → 小波分解 → 各尺度训练 → SGM / WSGM 采样 → D₁ + D₂。"""
    points = [{"side": side, "seed": seed} for side in cfg.sides for seed in cfg.seeds]
    results = await run_grid(points, lambda point: _fig3_point(cfg, ctx, point), ctx.jobs)
    rows = [row for point_rows in results for row in point_rows]
    columns = ["L", "seed", "method", "N", "d1", "d2", "error", "floor", "diverged"]
    return RunResult(files=[write_csv(ctx.out_dir / RESULTS_FILE, rows, columns)])


# --- hessian-stats ---

def _hessian_point(cfg: ExperimentConfig, ctx: RunContext, point: Dict[str, Any]):
    side, seed = point["side"], point["seed"]
    dataset = _phi4_dataset(cfg, ctx, side, seed)
    f = make_filters(cfg.wavelet)
    gamma = estimate_normalizers(dataset, 1, f, dims=2).gamma[0]
    stats = hessian_stats(dataset[:cfg.hessian_samples], cfg.beta, f, gamma)

    summaries, histograms = [], []
    for domain, domain_stats in stats.domains().items():
        summary = domain_stats.summary()
        summary["kappa_cv"] = summary["kappa_std"] / summary["kappa_mean"]
        summaries.append({"L": side, "seed": seed, "domain": domain, "count": len(domain_stats.kappa),
                          "gamma": gamma, **summary})
        for quantity, (counts, edges) in domain_stats.histograms().items():
            for count, left, right in zip(counts, edges[:-1], edges[1:]):
                histograms.append({"L": side, "seed": seed, "domain": domain, "quantity": quantity,
                                   "bin_left": left, "bin_right": right, "count": int(count)})
    ratio = stats.pixel.kappa.mean() / stats.wavelet.kappa.mean()
    logger.info(f"hessian-stats: L={side}, 像素域与小波域 κ 均值之比 {ratio:.2f}")
    return summaries, histograms


async def run_hessian_stats(cfg: ExperimentConfig, ctx: RunContext) -> RunResult:
    """像素域与小波投影 Hessian 的 λ_min、λ_max、κ 分布。"""
    points = [{"side": side, "seed": seed} for side in cfg.sides for seed in cfg.seeds]
    results = await run_grid(points, lambda point: _hessian_point(cfg, ctx, point), ctx.jobs)
    return RunResult(files=[
        write_csv(ctx.out_dir / SUMMARY_FILE, [row for summaries, _ in results for row in summaries]),
        write_csv(ctx.out_dir / HISTOGRAM_FILE, [row for _, histograms in results for row in histograms]),
    ])


# --- wavelet-check ---

def _wavelet_point(cfg: ExperimentConfig, point: Dict[str, Any]) -> List[Dict[str, Any]]:
    name, side, dims = point["wavelet"], point["side"], point["dims"]
    f = make_filters(name)
    rng = _rng(cfg, point)
    J = cfg.scales_for(side)
    x = rng.standard_normal((4,) + (side,) * dims)

    def check(label: str, value: float, tolerance: float) -> Dict[str, Any]:
        return {"wavelet": f.name, "L": side, "dims": dims, "check": label, "value": value,
                "tolerance": tolerance, "passed": bool(value <= tolerance)}

    norms = NormalizerSet(tuple(rng.uniform(0.5, 2.0, J)))
    restored = reconstruct(decompose(x, J, f, norms, dims), f)
    rows = [check("round_trip", relative_error(restored, x), ROUND_TRIP_TOLERANCE)]

    low, detail = analyze_once(x, f, dims)
    energy = np.sum(low ** 2) + np.sum(detail ** 2)
    rows.append(check("energy", float(abs(energy - np.sum(x ** 2)) / np.sum(x ** 2)), UNITARITY_TOLERANCE))

    if side ** dims <= DENSE_DIM_CAP:
        G, G_bar = operator_matrices(f, side, dims)
        W = np.vstack([G, G_bar])
        rows.append(check("unitarity", float(np.max(np.abs(W @ W.T - np.eye(W.shape[0])))), UNITARITY_TOLERANCE))
    return rows


async def run_wavelet_check(cfg: ExperimentConfig, ctx: RunContext) -> RunResult:
    """小波变换的重建、能量守恒与正交性自检。"""
    points = [{"wavelet": name, "side": side, "dims": dims}
              for name in cfg.wavelets for side in cfg.sides for dims in (1, 2)]
    results = await run_grid(points, lambda point: _wavelet_point(cfg, point), ctx.jobs)
    rows = [row for point_rows in results for row in point_rows]
    failed = [row for row in rows if not row["passed"]]
    for row in failed:
        logger.error(f"wavelet-check 未通过: {row}")
    logger.info(f"wavelet-check: {len(rows) - len(failed)}/{len(rows)} 项通过")
    return RunResult(files=[write_csv(ctx.out_dir / REPORT_FILE, rows)], passed=not failed)


# --- schedule-sweep ---

def _sweep_row(p: np.ndarray, horizon: float, delta: float) -> Dict[str, Any]:
    bounds = theorem1_bounds(p, horizon, delta)
    scale = delta + math.exp(-4.0 * horizon)
    terms = corollary7_expansion(p)
    estimate = covariance_recursion(p, Schedule(horizon, int(round(horizon / delta)))).spectrum_out
    remainder = estimate - p - delta * terms.sigma_delta - math.exp(-4.0 * horizon) * terms.sigma_T
    return {"T": horizon, "delta": delta, "kl": bounds.kl_exact, "e_T": bounds.e_T, "e_delta": bounds.e_delta,
            "residual_ratio": bounds.residual / scale, "expansion_ratio": float(np.max(np.abs(remainder))) / scale}


def _strictly_decreasing(values: Sequence[float]) -> bool:
    return all(b < a for a, b in zip(values, values[1:]))


def _sweep_point(cfg: ExperimentConfig, point: Dict[str, Any]) -> List[Dict[str, Any]]:
    rng = _rng(cfg, point)
    half_range = 0.5 * math.log(cfg.kappa_max)
    p = np.exp(rng.uniform(-half_range, half_range, cfg.sides[0] ** cfg.dims))
    base = {"spectrum": point["spectrum"], "seed": point["seed"], "kappa": float(p.max() / p.min())}

    fixed_horizon = max(cfg.horizons)
    delta_rows = [{**base, "sweep": "delta", **_sweep_row(p, fixed_horizon, delta)}
                  for delta in sorted(cfg.deltas, reverse=True)]
    horizon_rows = [{**base, "sweep": "horizon", **_sweep_row(p, horizon, min(cfg.deltas))}
                    for horizon in sorted(cfg.horizons)]

    residual_ok = _strictly_decreasing([abs(r["residual_ratio"]) for r in delta_rows])
    expansion_ok = _strictly_decreasing([r["expansion_ratio"] for r in delta_rows])
    logger.info(f"schedule-sweep: 谱 {point['spectrum']}: 残差比单调 {residual_ok}，展开余项比单调 {expansion_ok}")
    return delta_rows + horizon_rows


async def run_schedule_sweep(cfg: ExperimentConfig, ctx: RunContext) -> RunResult:
    """沿 δ 减半与 T 加倍两个方向的误差上界残差比与一阶展开余项比。"""
    points = [{"spectrum": index, "seed": seed} for seed in cfg.seeds for index in range(cfg.spectra)]
    results = await run_grid(points, lambda point: _sweep_point(cfg, point), ctx.jobs)
    rows = [row for point_rows in results for row in point_rows]
    return RunResult(files=[write_csv(ctx.out_dir / RESULTS_FILE, rows)])


SUBCOMMAND_HANDLERS = {
    "fig2-gaussian": run_fig2,
    "fig2": run_fig2,
    "fig3-phi4": run_fig3,
    "fig3": run_fig3,
    "hessian-stats": run_hessian_stats,
    "wavelet-check": run_wavelet_check,
    "schedule-sweep": run_schedule_sweep,
}
