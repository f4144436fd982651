"""Deterministic JSON output with floats written at 17 significant digits."""

from __future__ import annotations

import json
import math
from pathlib import Path
from typing import Any

import numpy as np


def _fmt_float(x: float) -> str:
    if math.isnan(x) or math.isinf(x):
        # Not valid JSON; keep it readable and loadable by Python's json module.
        return "NaN" if math.isnan(x) else ("Infinity" if x > 0 else "-Infinity")
    s = format(x, ".17g")
    if "e" not in s and "." not in s and "n" not in s:
        s += ".0"
    return s


def _encode(obj: Any, indent: int | None, level: int) -> str:
    pad = "" if indent is None else "\n" + " " * (indent * (level + 1))
    end = "" if indent is None else "\n" + " " * (indent * level)
    sep = ","
    if obj is None or isinstance(obj, (bool, np.bool_)):
        return json.dumps(None if obj is None else bool(obj))
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        return _fmt_float(float(obj))
    if isinstance(obj, str):
        return json.dumps(obj)
    if isinstance(obj, np.ndarray):
        return _encode(obj.tolist(), indent, level)
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [json.dumps(str(k)) + ": " + _encode(v, indent, level + 1) for k, v in obj.items()]
        return "{" + pad + (sep + pad).join(items) + end + "}"
    if isinstance(obj, (list, tuple)):
        if not obj:
            return "[]"
        # Numeric leaf lists stay on one line to keep coefficient dumps compact.
        if all(isinstance(v, (int, float, np.integer, np.floating)) and not isinstance(v, bool)
               for v in obj):
            return "[" + ", ".join(_encode(v, None, 0) for v in obj) + "]"
        items = [_encode(v, indent, level + 1) for v in obj]
        return "[" + pad + (sep + pad).join(items) + end + "]"
    if hasattr(obj, "to_json"):
        return _encode(obj.to_json(), indent, level)
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def dumps(obj: Any, indent: int | None = 1) -> str:
    return _encode(obj, indent, 0)


def dump(obj: Any, path: str | Path, indent: int | None = 1) -> None:
    Path(path).write_text(dumps(obj, indent) + "\n")


def load(path: str | Path) -> Any:
    text = Path(path).read_text()
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise ValueError(f"{path}: malformed JSON at line {exc.lineno} column {exc.colno}: "
                         f"{exc.msg}") from exc
