"""
CLI File I/O

원자적(atomic) 파일 쓰기, `<file>.meta.json` sidecar, 모델 digest 를 제공합니다.
"""

from pathlib import Path
from typing import Any, Dict, Optional
import hashlib
import json
import os
import tempfile
import logging

from src.core.config import FORMAT_VERSION
from src.core.exceptions import ConfigError

# Configure logging
logger = logging.getLogger(__name__)

META_SUFFIX = ".meta.json"


def read_text(path: str) -> str:
    """Read a UTF-8 input file (missing files are usage errors)"""
    file_path = Path(path)
    if not file_path.is_file():
        raise ConfigError(f"Input file not found: {path}")
    with open(file_path, "rb") as f:
        data = f.read()
    try:
        return data.decode("utf-8")
    except UnicodeDecodeError as e:
        raise ConfigError(f"Input file is not UTF-8: {path} ({e})")


def write_atomic(path: str, content: str) -> None:
    """
    임시 파일에 쓴 뒤 os.replace 로 교체

    Args:
        path: 대상 경로 (상위 디렉토리는 자동 생성)
        content: 파일 내용
    """
    target = Path(path)
    target.parent.mkdir(parents=True, exist_ok=True)
    fd, temp_path = tempfile.mkstemp(prefix=f".{target.name}.", dir=str(target.parent))
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as f:
            f.write(content)
            f.flush()
            os.fsync(f.fileno())
        os.replace(temp_path, target)
    except BaseException:
        if os.path.exists(temp_path):
            os.unlink(temp_path)
        raise
    logger.debug(f"Wrote {target}")


def write_json(path: str, document: Dict[str, Any]) -> None:
    write_atomic(path, json.dumps(document, indent=2, allow_nan=False) + "\n")


def write_with_meta(
    path: str,
    content: str,
    artifact: str,
    run_config: Dict[str, Any],
    extra: Optional[Dict[str, Any]] = None
) -> None:
    """CSV artifact plus `<path>.meta.json` carrying the effective config"""
    write_atomic(path, content)
    meta: Dict[str, Any] = {
        "format_version": FORMAT_VERSION,
        "artifact": artifact,
        "run_config": run_config
    }
    if extra:
        meta.update(extra)
    write_json(path + META_SUFFIX, meta)


def file_digest(path: str) -> str:
    """SHA-256 hex digest of a file"""
    digest = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 16), b""):
            digest.update(chunk)
    return digest.hexdigest()
