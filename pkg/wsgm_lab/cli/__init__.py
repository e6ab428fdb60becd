import argparse
import asyncio
import subprocess
import sys
import time
from pathlib import Path
from typing import List, Optional

from loguru import logger

from .. import __version__
from ..config_coder import compress_config
from ..constants import DEFAULT_OUTPUT_DIR, EXIT_FAILURE, EXIT_OK, LOG_FILE, USAGE
from ..data_manager import write_manifest
from ..exceptions import ConfigurationError, WsgmError
from .config import ExperimentConfig, load_config
from .handlers import SUBCOMMAND_HANDLERS, RunContext

# 子命令 → 别名
SUBCOMMANDS = {
    "fig2": ["fig2-gaussian"],
    "fig3": ["fig3-phi4"],
    "hessian-stats": [],
    "wavelet-check": [],
    "schedule-sweep": [],
}


def version_string() -> str:
    """git describe 风格的版本号；不在 git 仓库中时退回包版本。"""
    try:
        described = subprocess.run(["git", "describe", "--tags", "--always", "--dirty"],
                                   cwd=Path(__file__).resolve().parent, capture_output=True, text=True, timeout=5)
        if described.returncode == 0 and described.stdout.strip():
            return f"{__version__}+{described.stdout.strip()}"
    except (OSError, subprocess.SubprocessError):
        pass
    return __version__


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="wsgm", usage=USAGE.splitlines()[0],
                                     description=USAGE, formatter_class=argparse.RawDescriptionHelpFormatter)
    subparsers = parser.add_subparsers(dest="command", required=True)
    for name, aliases in SUBCOMMANDS.items():
        sub = subparsers.add_parser(name, aliases=aliases)
        sub.add_argument("--config", required=True, help="配置 JSON、manifest.json 或 wsgm: token")
        sub.add_argument("--jobs", type=int, default=1, help="并发网格点数")
        sub.add_argument("--out", type=str, default=None, help="输出目录")
        sub.add_argument("--verbose", action="store_true", help="输出 DEBUG 日志")
    return parser


def _output_dir(args: argparse.Namespace, cfg: ExperimentConfig) -> Path:
    if args.out:
        return Path(args.out)
    if cfg.out:
        return Path(cfg.out)
    return Path(DEFAULT_OUTPUT_DIR) / cfg.experiment


async def dispatch(cfg: ExperimentConfig, ctx: RunContext):
    """根据实验名分发到对应的处理器。"""
    return await SUBCOMMAND_HANDLERS[cfg.experiment](cfg, ctx)


def main(argv: Optional[List[str]] = None) -> int:
    """
    命令统一入口
    先写 manifest（配置回显、种子、版本），再运行实验，最后补上耗时。
    """
    args = build_parser().parse_args(argv)
    logger.remove()
    logger.add(sys.stderr, level="DEBUG" if args.verbose else "INFO")

    file_sink = None
    try:
        cfg = load_config(args.config, args.command)
        if args.jobs < 1:
            raise ConfigurationError("--jobs 必须至少为 1")
        out_dir = _output_dir(args, cfg)
        out_dir.mkdir(parents=True, exist_ok=True)
        file_sink = logger.add(out_dir / LOG_FILE, level="DEBUG", encoding="utf-8")

        echo = cfg.echo()
        manifest = {
            "experiment": cfg.experiment,
            "version": version_string(),
            "seeds": list(cfg.seeds),
            "config": echo,
            "token": compress_config(echo),
            "jobs": args.jobs,
            "wall_time": None,
        }
        write_manifest(out_dir, manifest)
        logger.info(f"{cfg.experiment}: 输出目录 {out_dir}")

        start = time.perf_counter()
        result = asyncio.run(dispatch(cfg, RunContext(out_dir=out_dir, jobs=args.jobs)))
        manifest["wall_time"] = time.perf_counter() - start
        manifest["files"] = [path.name for path in result.files]
        manifest["passed"] = result.passed
        write_manifest(out_dir, manifest)

        logger.info(f"{cfg.experiment}: 完成，用时 {manifest['wall_time']:.1f} 秒")
        return EXIT_OK if result.passed else EXIT_FAILURE
    except WsgmError as e:
        logger.error(f"{type(e).__name__}: {e}")
        return e.exit_code
    except Exception:
        logger.exception("运行失败")
        return EXIT_FAILURE
    finally:
        if file_sink is not None:
            logger.remove(file_sink)


if __name__ == "__main__":
    sys.exit(main())
