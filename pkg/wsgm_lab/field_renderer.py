# 1. 标准库导入
from pathlib import Path
from typing import Dict, Tuple, Union

# 2. 第三方库导入
import numpy as np
from PIL import Image, ImageDraw, ImageFont

# 3. 本地应用/项目特定导入
from .constants import (
    PREVIEW_BACKGROUND_COLOR,
    PREVIEW_COLUMNS,
    PREVIEW_CREDIT_COLOR,
    PREVIEW_CREDIT_HEIGHT,
    PREVIEW_CREDIT_TEXT,
    PREVIEW_FONT_SIZE,
    PREVIEW_PADDING,
    PREVIEW_TEXT_COLOR,
    PREVIEW_TILE_SCALE,
    PREVIEW_TITLE_HEIGHT,
    PREVIEW_VALUE_RANGE,
)
from .exceptions import ShapeError

FONT = ImageFont.load_default(size=PREVIEW_FONT_SIZE)


def _as_tiles(fields: np.ndarray) -> np.ndarray:
    """把 (count, L) 或 (count, L, L) 的样本统一为 (count, 高, 宽)。"""
    fields = np.asarray(fields, dtype=float)
    if fields.ndim == 2:
        return fields[:, np.newaxis, :]
    if fields.ndim != 3:
        raise ShapeError(f"预览图只支持 1D / 2D 场的批量: {fields.shape}")
    return fields


def _field_to_image(field: np.ndarray, value_range: Tuple[float, float]) -> Image.Image:
    """线性映射到灰度并按 PREVIEW_TILE_SCALE 放大（最近邻）。"""
    low, high = value_range
    gray = np.clip((field - low) / (high - low), 0.0, 1.0)
    tile = Image.fromarray((gray * 255).astype(np.uint8)).convert('RGBA')
    return tile.resize((field.shape[1] * PREVIEW_TILE_SCALE, field.shape[0] * PREVIEW_TILE_SCALE), Image.Resampling.NEAREST)


def calculate_sheet_size(rows: Dict[str, np.ndarray]) -> Tuple[int, int, int, int]:
    """返回 (画布宽, 画布高, 图块宽, 图块高)。"""
    tiles = [_as_tiles(fields) for fields in rows.values()]
    tile_height = max(t.shape[1] for t in tiles) * PREVIEW_TILE_SCALE
    tile_width = max(t.shape[2] for t in tiles) * PREVIEW_TILE_SCALE
    columns = min(PREVIEW_COLUMNS, max(len(t) for t in tiles))
    width = PREVIEW_PADDING + columns * (tile_width + PREVIEW_PADDING)
    height = len(tiles) * (PREVIEW_TITLE_HEIGHT + tile_height + PREVIEW_PADDING) + PREVIEW_CREDIT_HEIGHT
    return width, height, tile_width, tile_height


def render_contact_sheet(rows: Dict[str, np.ndarray], path: Union[str, Path],
                         value_range: Tuple[float, float] = PREVIEW_VALUE_RANGE) -> Path:
    """
    每个键一行：标题加上最多 PREVIEW_COLUMNS 个样本的灰度图块，保存为 PNG。
    """
    if not rows:
        raise ShapeError("预览图至少需要一行样本")
    width, height, tile_width, tile_height = calculate_sheet_size(rows)

    img = Image.new('RGBA', (width, height), color=PREVIEW_BACKGROUND_COLOR)
    draw = ImageDraw.Draw(img)

    current_y = 0
    for title, fields in rows.items():
        draw.text((PREVIEW_PADDING, current_y + PREVIEW_TITLE_HEIGHT / 2), text=title, anchor='lm',
                  fill=PREVIEW_TEXT_COLOR, font=FONT)
        current_y += PREVIEW_TITLE_HEIGHT
        for column, field in enumerate(_as_tiles(fields)[:PREVIEW_COLUMNS]):
            x = PREVIEW_PADDING + column * (tile_width + PREVIEW_PADDING)
            img.paste(_field_to_image(field, value_range), (x, current_y))
        current_y += tile_height + PREVIEW_PADDING

    draw.text((width / 2, height - PREVIEW_CREDIT_HEIGHT / 2), PREVIEW_CREDIT_TEXT,
              fill=PREVIEW_CREDIT_COLOR, font=FONT, anchor='mm')

    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    img.save(path)
    return path
