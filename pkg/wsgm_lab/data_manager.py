import csv
import json
import os
from pathlib import Path
from typing import Any, Callable, Dict, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np
from loguru import logger

from .config_coder import canonical_json, config_digest
from .constants import CHECKPOINT_DIR_NAME, DATASET_DTYPE, DATASET_SUFFIX, MANIFEST_FILE, SIDECAR_SUFFIX
from .exceptions import ConfigurationError
from .score_fit import LinearScoreParams, ScoreTable

PathLike = Union[str, Path]


# --- JSON 基础读写 ---

def _load_json(path: PathLike) -> Dict[str, Any]:
    """从JSON文件中加载数据。"""
    path = Path(path)
    if not path.exists():
        raise ConfigurationError(f"文件不存在: {path}")
    with open(path, "r", encoding="utf-8") as f:
        try:
            return json.load(f)
        except json.JSONDecodeError as e:
            raise ConfigurationError(f"JSON 解析失败 {path}: {e}") from e


def _save_json(path: PathLike, data: Dict[str, Any]):
    """将数据保存到JSON文件。"""
    path = Path(path)
    if not path.parent.exists():
        os.makedirs(path.parent)
    with open(path, "w", encoding="utf-8") as f:
        json.dump(data, f, indent=4, ensure_ascii=False)


# --- 数据集：小端 float64 原始数据 + JSON 侧车 ---

def _dataset_paths(stem: PathLike) -> Tuple[Path, Path]:
    stem = str(stem)
    return Path(stem + DATASET_SUFFIX), Path(stem + SIDECAR_SUFFIX)


def save_dataset(stem: PathLike, array: np.ndarray, metadata: Optional[Dict[str, Any]] = None) -> Path:
    """写入 <stem>.f64 与 <stem>.json，返回原始数据文件路径。"""
    data_path, sidecar_path = _dataset_paths(stem)
    array = np.ascontiguousarray(array, dtype=DATASET_DTYPE)
    if not data_path.parent.exists():
        os.makedirs(data_path.parent)
    array.tofile(data_path)
    _save_json(sidecar_path, {"shape": list(array.shape), "dtype": DATASET_DTYPE, **(metadata or {})})
    return data_path


def load_dataset(stem: PathLike) -> Tuple[np.ndarray, Dict[str, Any]]:
    data_path, sidecar_path = _dataset_paths(stem)
    sidecar = _load_json(sidecar_path)
    shape = tuple(sidecar.get("shape", ()))
    array = np.fromfile(data_path, dtype=sidecar.get("dtype", DATASET_DTYPE))
    if array.size != int(np.prod(shape)):
        raise ConfigurationError(f"数据集 {data_path} 的长度 {array.size} 与侧车形状 {shape} 不符")
    return array.reshape(shape).astype(float), sidecar


# --- 检查点缓存 ---

def get_checkpoint_stem(out_dir: PathLike, key: Dict[str, Any]) -> Path:
    """生成检查点路径（使用配置的SHA256哈希）"""
    return Path(out_dir) / CHECKPOINT_DIR_NAME / config_digest(key)


def load_or_create_dataset(out_dir: PathLike, key: Dict[str, Any], factory: Callable[[], np.ndarray]) -> np.ndarray:
    """
    命中检查点时直接读取，否则调用 factory 生成并写入缓存。
    写入先落到临时文件，再原子性重命名，中断的运行不会留下半个数据集。
    """
    stem = get_checkpoint_stem(out_dir, key)
    data_path, sidecar_path = _dataset_paths(stem)

    # 1. 检查缓存是否有效
    if data_path.exists() and sidecar_path.exists():
        try:
            array, sidecar = load_dataset(stem)
            if sidecar.get("key") == json.loads(canonical_json(key)):
                logger.info(f"使用检查点数据集: {data_path.name}")
                return array
        except ConfigurationError as e:
            logger.warning(f"检查点 {data_path.name} 无法读取，将重新生成: {e}")

    # 2. 生成数据
    array = np.asarray(factory(), dtype=float)

    # 3. 写入临时文件后原子性重命名
    temp_stem = stem.with_name(stem.name + "_tmp")
    temp_data, temp_sidecar = _dataset_paths(temp_stem)
    try:
        save_dataset(temp_stem, array, {"key": key})
        temp_data.replace(data_path)
        temp_sidecar.replace(sidecar_path)
        logger.info(f"已写入检查点数据集: {data_path.name}")
    except OSError as e:
        logger.warning(f"写入检查点失败 {data_path}: {e}")
        temp_data.unlink(missing_ok=True)
        temp_sidecar.unlink(missing_ok=True)
    return array


# --- 分数表 ---

def save_score_table(path: PathLike, table: ScoreTable):
    _save_json(path, {
        "basis_powers": list(table.basis_powers),
        "dims": table.dims,
        "metadata": table.metadata,
        "steps": [
            {"t": float(t), **p.to_dict(), "loss": float(loss), "oracle_loss": float(oracle)}
            for t, p, loss, oracle in zip(table.times, table.params, table.losses, table.oracle_losses)
        ],
    })


def load_score_table(path: PathLike) -> ScoreTable:
    data = _load_json(path)
    steps = data.get("steps", [])
    if not steps:
        raise ConfigurationError(f"分数表 {path} 没有任何时间点")
    return ScoreTable(
        times=np.array([s["t"] for s in steps]),
        params=tuple(LinearScoreParams(s["stencil"], s["theta"]) for s in steps),
        losses=np.array([s["loss"] for s in steps]),
        oracle_losses=np.array([s["oracle_loss"] for s in steps]),
        basis_powers=tuple(data.get("basis_powers", (4,))),
        dims=int(data.get("dims", 2)),
        metadata=data.get("metadata", {}),
    )


# --- 结果表与 manifest ---

def write_csv(path: PathLike, rows: Iterable[Dict[str, Any]], columns: Optional[Sequence[str]] = None) -> Path:
    """写入带表头的逗号分隔表格；未给出列名时按首次出现的顺序收集。"""
    rows = list(rows)
    if columns is None:
        columns = []
        for row in rows:
            columns.extend(name for name in row if name not in columns)
    path = Path(path)
    if not path.parent.exists():
        os.makedirs(path.parent)
    with open(path, "w", encoding="utf-8", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=list(columns), extrasaction="ignore")
        writer.writeheader()
        for row in rows:
            writer.writerow({name: _format_cell(row.get(name, "")) for name in columns})
    return path


def _format_cell(value: Any) -> Any:
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    if isinstance(value, np.integer):
        return int(value)
    return "" if value is None else value


def read_csv(path: PathLike) -> List[Dict[str, str]]:
    with open(path, "r", encoding="utf-8", newline="") as f:
        return list(csv.DictReader(f))


def write_manifest(out_dir: PathLike, manifest: Dict[str, Any]) -> Path:
    path = Path(out_dir) / MANIFEST_FILE
    _save_json(path, manifest)
    return path


def load_manifest(path: PathLike) -> Dict[str, Any]:
    return _load_json(path)
