"""Serialization: 17-significant-digit JSON/CSV writers and texture readers.

Texture files are either plain PGM (``P2`` magic, width, height, maxval,
whitespace-separated integers) or JSON::

    {"shape": [H, W], "data": [...]}                 # one texture
    {"textures": [{"shape": ..., "data": ...}, ...]}  # a set
    {"features": [[...], ...]}                       # feature rows for Frechet
"""

from __future__ import annotations

import json
import math
import re
from pathlib import Path

import numpy as np


class InputFormatError(ValueError):
    def __init__(self, path, offset: int, message: str):
        super().__init__(f"{path}: byte {offset}: {message}")
        self.path = str(path)
        self.offset = offset


def fmt_float(x: float) -> str:
    x = float(x)
    if not math.isfinite(x):
        raise ValueError(f"cannot serialize non-finite value {x}")
    return format(x, ".17g")


def dumps(obj, indent: int | None = None, _level: int = 0) -> str:
    """JSON text with every float written at 17 significant digits."""
    pad = "" if indent is None else "\n" + " " * (indent * (_level + 1))
    end = "" if indent is None else "\n" + " " * (indent * _level)
    if isinstance(obj, bool) or obj is None:
        return json.dumps(obj)
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        return fmt_float(obj)
    if isinstance(obj, str):
        return json.dumps(obj)
    if isinstance(obj, np.ndarray):
        obj = obj.tolist()
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [f"{pad}{json.dumps(str(k))}: {dumps(v, indent, _level + 1)}" for k, v in obj.items()]
        return "{" + ",".join(items) + end + "}"
    if isinstance(obj, (list, tuple)):
        if not obj:
            return "[]"
        if all(isinstance(v, (int, float, np.number)) and not isinstance(v, bool) for v in obj):
            return "[" + ", ".join(dumps(v) for v in obj) + "]"
        items = [pad + dumps(v, indent, _level + 1) for v in obj]
        return "[" + ",".join(items) + end + "]"
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def tensor_to_json(t) -> dict:
    a = np.asarray(t, dtype=np.float64)
    return {"shape": list(a.shape), "data": a.ravel().tolist()}


def tensor_from_json(obj) -> np.ndarray:
    shape = tuple(int(s) for s in obj["shape"])
    data = np.asarray(obj["data"], dtype=np.float64)
    if int(np.prod(shape)) != data.size:
        raise ValueError(f"shape {shape} does not match {data.size} values")
    return data.reshape(shape)


def trace_to_json(trace) -> dict:
    return {
        "attn_maps": [
            {"active": m.active, **tensor_to_json(m.weights)} for m in trace.attn_maps
        ],
        "features": tensor_to_json(trace.features),
    }


def write_text(path, text: str):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="\n") as fh:
        fh.write(text)


def csv_text(header, rows) -> str:
    def cell(v):
        if isinstance(v, bool):
            return "1" if v else "0"
        if isinstance(v, (float, np.floating)):
            return fmt_float(v)
        if v is None:
            return ""
        return str(v)

    lines = [",".join(header)]
    lines.extend(",".join(cell(r[h]) for h in header) for r in rows)
    return "\n".join(lines) + "\n"


_TOKEN = re.compile(rb"\S+")


def _read_pgm(path: Path, raw: bytes) -> list:
    # strip comments but keep byte offsets intact
    cleaned = re.sub(rb"#[^\n]*", lambda m: b" " * len(m.group()), raw)
    tokens = [(m.start(), m.group()) for m in _TOKEN.finditer(cleaned)]
    if not tokens or tokens[0][1] != b"P2":
        raise InputFormatError(path, 0, "expected 'P2' magic")
    if len(tokens) < 4:
        raise InputFormatError(path, len(raw), "truncated header")

    def as_int(i):
        off, tok = tokens[i]
        try:
            v = int(tok)
        except ValueError:
            raise InputFormatError(path, off, f"expected integer, got {tok[:16]!r}") from None
        if v < 0:
            raise InputFormatError(path, off, "negative value")
        return v

    width, height, maxval = as_int(1), as_int(2), as_int(3)
    if width == 0 or height == 0 or maxval == 0:
        raise InputFormatError(path, tokens[1][0], "zero dimension or maxval")
    need = width * height
    if len(tokens) - 4 < need:
        raise InputFormatError(path, len(raw), f"expected {need} values, found {len(tokens) - 4}")
    if len(tokens) - 4 > need:
        raise InputFormatError(path, tokens[4 + need][0], "trailing data")
    vals = np.empty(need)
    for j in range(need):
        v = as_int(4 + j)
        if v > maxval:
            raise InputFormatError(path, tokens[4 + j][0], f"value {v} exceeds maxval {maxval}")
        vals[j] = v
    return [vals.reshape(height, width) / maxval]


def _json_error(path, err: json.JSONDecodeError):
    return InputFormatError(path, len(err.doc[: err.pos].encode()), err.msg)


def _texture_from_obj(path, obj, where: str) -> np.ndarray:
    try:
        arr = tensor_from_json(obj)
    except (KeyError, TypeError, ValueError) as e:
        raise InputFormatError(path, 0, f"{where}: {e}") from None
    if arr.ndim not in (2, 3):
        raise InputFormatError(path, 0, f"{where}: texture must be 2-D or 3-D")
    if not np.all(np.isfinite(arr)) or arr.min() < 0 or arr.max() > 1:
        raise InputFormatError(path, 0, f"{where}: values must be finite and in [0, 1]")
    return arr


def read_json(path):
    path = Path(path)
    raw = path.read_bytes()
    try:
        return json.loads(raw.decode("utf-8"))
    except UnicodeDecodeError as e:
        raise InputFormatError(path, e.start, "invalid UTF-8") from None
    except json.JSONDecodeError as e:
        raise _json_error(path, e) from None


def read_texture_file(path) -> dict:
    """Returns ``{"textures": [arrays]}`` or ``{"features": array}``."""
    path = Path(path)
    raw = path.read_bytes()
    if raw.lstrip().startswith(b"P2"):
        return {"textures": _read_pgm(path, raw)}
    obj = read_json(path)
    if isinstance(obj, dict) and "features" in obj:
        try:
            feats = np.asarray(obj["features"], dtype=np.float64)
        except (TypeError, ValueError) as e:
            raise InputFormatError(path, 0, f"features: {e}") from None
        if feats.ndim != 2 or not np.all(np.isfinite(feats)):
            raise InputFormatError(path, 0, "features must be a finite 2-D array")
        return {"features": feats}
    if isinstance(obj, dict) and "textures" in obj:
        return {"textures": [_texture_from_obj(path, t, f"textures[{i}]")
                             for i, t in enumerate(obj["textures"])]}
    if isinstance(obj, dict) and "shape" in obj:
        return {"textures": [_texture_from_obj(path, obj, "texture")]}
    raise InputFormatError(path, 0, "unrecognized texture document")


def write_pgm(path, img, maxval: int = 65535):
    a = np.asarray(img, dtype=np.float64)
    if a.ndim != 2:
        raise ValueError("PGM holds one 2-D texture")
    q = np.rint(np.clip(a, 0, 1) * maxval).astype(int)
    lines = ["P2", f"{a.shape[1]} {a.shape[0]}", str(maxval)]
    lines.extend(" ".join(str(v) for v in row) for row in q)
    write_text(path, "\n".join(lines) + "\n")
