from __future__ import annotations

import logging
import os
from pathlib import Path
from typing import Dict

THREAD_ENV = "SLOTSSM_NUM_THREADS"
_BLAS_THREAD_VARS = ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS", "NUMEXPR_NUM_THREADS")


def ensure_dir(path: Path) -> None:
    """Create parent directory if needed."""
    path.parent.mkdir(parents=True, exist_ok=True)


def load_key_values(path: Path) -> Dict[str, str]:
    """Load `key=value` lines, skipping blanks and `#` comments. Later keys win."""
    if not path.exists():
        raise FileNotFoundError(path)

    values: Dict[str, str] = {}
    for lineno, raw in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        stripped = raw.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if "=" not in stripped:
            raise ValueError(f"{path}:{lineno}: expected key=value, got {stripped!r}")
        key, value = stripped.split("=", 1)
        values[key.strip()] = value.strip()
    return values


def configure_logging(level: str | int = "INFO", name: str = "slotssm") -> logging.Logger:
    logging.basicConfig(level=level, format="%(levelname)s:%(message)s")
    return logging.getLogger(name)


def parse_int(value: str | None, default: int) -> int:
    if value is None:
        return default
    try:
        return int(value)
    except Exception:
        return default


def pin_threads_from_env() -> int | None:
    """Copy SLOTSSM_NUM_THREADS into the BLAS/OpenMP variables; call before numpy does real work."""
    threads = parse_int(os.environ.get(THREAD_ENV), 0)
    if threads <= 0:
        return None
    for var in _BLAS_THREAD_VARS:
        os.environ[var] = str(threads)
    return threads
