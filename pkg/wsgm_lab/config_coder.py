import base64
import hashlib
import json
import zlib
from typing import Any, Dict

from .exceptions import ConfigurationError

TOKEN_PREFIX = "wsgm:"


def canonical_json(value: Any) -> str:
    """键排序、无空白的 JSON，用于哈希与种子派生。"""
    return json.dumps(value, sort_keys=True, separators=(',', ':'), ensure_ascii=False)


def derive_seed(base_seed: int, grid_point: Dict[str, Any]) -> int:
    """seed = base ⊕ (sha256(规范化网格点) 的前 4 个字节)"""
    digest = hashlib.sha256(canonical_json(grid_point).encode('utf-8')).digest()
    return int(base_seed) ^ int.from_bytes(digest[:4], 'little')


def config_digest(value: Any) -> str:
    """配置的 sha256 十六进制摘要，用作检查点缓存的键。"""
    return hashlib.sha256(canonical_json(value).encode('utf-8')).hexdigest()


def _to_url_safe_base64(b64_bytes: bytes) -> str:
    """将标准的Base64转换为URL安全的Base64。"""
    return b64_bytes.replace(b'+', b'-').replace(b'/', b'_').rstrip(b'=').decode('ascii')


def _from_url_safe_base64(url_safe_b64_str: str) -> bytes:
    """将URL安全的Base64转换回标准的Base64。"""
    b64_str = url_safe_b64_str.replace('-', '+').replace('_', '/')
    padding = -len(b64_str) % 4
    if padding:
        b64_str += '=' * padding
    return b64_str.encode('ascii')


def compress_config(config: Dict[str, Any]) -> str:
    """
    将实验配置压缩成可以直接粘贴到命令行的 token（写入 manifest 便于复现）。
    """
    compressed = zlib.compress(canonical_json(config).encode('utf-8'), level=9)
    return TOKEN_PREFIX + _to_url_safe_base64(base64.b64encode(compressed))


def decompress_config(token: str) -> Dict[str, Any]:
    """
    将 token 解压回配置字典。
    """
    if not token.startswith(TOKEN_PREFIX):
        raise ConfigurationError(f"配置 token 必须以 {TOKEN_PREFIX} 开头")
    try:
        binary_string = base64.b64decode(_from_url_safe_base64(token[len(TOKEN_PREFIX):]))
        config = json.loads(zlib.decompress(binary_string).decode('utf-8'))
    except (ValueError, zlib.error) as e:
        raise ConfigurationError(f"配置 token 解压失败: {e}") from e
    if not isinstance(config, dict):
        raise ConfigurationError("配置 token 的内容必须是 JSON 对象")
    return config
