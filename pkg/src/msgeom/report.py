"""Deterministic JSON emission: insertion-ordered fields, floats with 17
significant digits, so identical runs produce byte-identical reports."""

from __future__ import annotations

import numpy as np


def _format(value):
    if isinstance(value, bool) or isinstance(value, np.bool_):
        return "true" if value else "false"
    if value is None:
        return "null"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        v = float(value)
        if v != v:
            return '"nan"'
        if v in (float("inf"), float("-inf")):
            return f'"{v}"'
        return f"{v:.17g}"
    if isinstance(value, str):
        return '"' + value.replace("\\", "\\\\").replace('"', '\\"') + '"'
    if isinstance(value, dict):
        inner = ",".join(f'{_format(str(k))}:{_format(v)}' for k, v in value.items())
        return "{" + inner + "}"
    if isinstance(value, (list, tuple, np.ndarray)):
        seq = value.tolist() if isinstance(value, np.ndarray) else value
        return "[" + ",".join(_format(v) for v in seq) + "]"
    raise TypeError(f"cannot serialize {type(value)!r}")


def dumps_json(doc):
    return _format(doc)


def dump_json(doc, path):
    text = dumps_json(doc)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(text)
        fh.write("\n")
    return text
