"""Plain-text file formats used by the command line tool.

Every reader is strict: a malformed line raises :class:`DataFormatError`
naming the file and the 1-based line number.
"""
from __future__ import annotations

import dataclasses
import os
import re
import tempfile
from pathlib import Path

import numpy as np

from .joint import DiffusionConfig

_REAL = re.compile(r"[+-]?(?:\d+(?:\.\d*)?|\.\d+)(?:[eE][+-]?\d+)?")
_UINT = re.compile(r"\d+")

CONFIG_ALIASES = {"N": "n_neighbors", "K": "k", "T1": "t1", "T2": "t2"}


class DataFormatError(ValueError):
    pass


class ConfigError(ValueError):
    pass


def _lines(path):
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.rstrip("\r\n")
            if line.strip() == "":
                continue
            yield lineno, line


def _real(token: str, path, lineno: int) -> float:
    token = token.strip()
    if not _REAL.fullmatch(token):
        raise DataFormatError(f"{path}:{lineno}: not a decimal number: {token!r}")
    return float(token)


def read_features(path) -> np.ndarray:
    rows = []
    width = None
    for lineno, line in _lines(path):
        row = [_real(tok, path, lineno) for tok in line.split(",")]
        if width is None:
            width = len(row)
        elif len(row) != width:
            raise DataFormatError(f"{path}:{lineno}: expected {width} columns, got {len(row)}")
        rows.append(row)
    if not rows:
        raise DataFormatError(f"{path}: no rows")
    return np.array(rows, dtype=float)


def read_predictions(path) -> np.ndarray:
    values = []
    for lineno, line in _lines(path):
        values.append(_real(line, path, lineno))
    if not values:
        raise DataFormatError(f"{path}: no values")
    return np.array(values, dtype=float)


def read_index_pairs(path) -> np.ndarray:
    """Lines ``i,j`` of unsigned integers."""
    pairs = []
    for lineno, line in _lines(path):
        parts = [p.strip() for p in line.split(",")]
        if len(parts) != 2 or not all(_UINT.fullmatch(p) for p in parts):
            raise DataFormatError(f"{path}:{lineno}: expected 'i,j' with unsigned integers, got {line!r}")
        pairs.append((int(parts[0]), int(parts[1])))
    return np.array(pairs, dtype=np.int64).reshape(-1, 2)


def format_real(x: float) -> str:
    return f"{x:.17g}"


def format_accuracy(x: float) -> str:
    """Shortest round-trip decimal, without a trailing ``.0``."""
    s = repr(float(x))
    return s[:-2] if s.endswith(".0") else s


def atomic_write(path, data: bytes) -> None:
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent or ".", prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_predictions(path, values) -> None:
    text = "".join(format_real(v) + "\n" for v in np.asarray(values, dtype=float))
    atomic_write(path, text.encode())


def write_matrix(path, matrix) -> None:
    m = np.atleast_2d(np.asarray(matrix, dtype=float))
    text = "".join(",".join(format_real(v) for v in row) + "\n" for row in m)
    atomic_write(path, text.encode())


def write_index_pairs(path, pairs) -> None:
    text = "".join(f"{int(i)},{int(j)}\n" for i, j in np.asarray(pairs).reshape(-1, 2))
    atomic_write(path, text.encode())


def metric_to_gray(rho) -> np.ndarray:
    """``round_half_away_from_zero((rho + 1) / 2 * 255)`` as uint8."""
    x = (np.asarray(rho, dtype=float) + 1.0) / 2.0 * 255.0
    x = np.nan_to_num(x, nan=0.0)
    px = np.sign(x) * np.floor(np.abs(x) + 0.5)
    return np.clip(px, 0, 255).astype(np.uint8)


def pgm_bytes(matrix) -> bytes:
    px = metric_to_gray(matrix)
    h, w = px.shape
    return f"P5\n{w} {h}\n255\n".encode() + px.tobytes()


def write_pgm(path, matrix) -> None:
    atomic_write(path, pgm_bytes(matrix))


def read_config(path, base: DiffusionConfig | None = None) -> DiffusionConfig:
    """Parse ``key = value`` lines into a :class:`DiffusionConfig`."""
    base = base or DiffusionConfig()
    fields = {f.name: f for f in dataclasses.fields(DiffusionConfig)}
    updates = {}
    try:
        lines = list(_lines(path))
    except UnicodeDecodeError as exc:
        raise ConfigError(f"{path}: not valid UTF-8") from exc
    for lineno, line in lines:
        stripped = line.strip()
        if stripped.startswith("#"):
            continue
        key, sep, value = stripped.partition("=")
        key, value = key.strip(), value.strip()
        if not sep or not key or not value:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
        key = CONFIG_ALIASES.get(key, key)
        if key not in fields:
            raise ConfigError(f"{path}:{lineno}: unknown key {key!r}")
        kind = type(getattr(base, key))
        try:
            if kind is bool:
                if value.lower() not in ("true", "false"):
                    raise ValueError(value)
                updates[key] = value.lower() == "true"
            elif kind is int:
                if not _UINT.fullmatch(value):
                    raise ValueError(value)
                updates[key] = int(value)
            elif kind is float:
                if not _REAL.fullmatch(value):
                    raise ValueError(value)
                updates[key] = float(value)
            else:
                updates[key] = value
        except ValueError:
            raise ConfigError(f"{path}:{lineno}: bad value for {key}: {value!r}") from None
    try:
        return dataclasses.replace(base, **updates)
    except ValueError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
