"""Deterministic JSON writing: fixed key order, floats at 17 significant digits.

Reading uses the stdlib parser; writing is hand-rolled so that every float is
rendered with ``%.17g``, which round-trips IEEE doubles bit-exactly and keeps
output byte-identical across runs.
"""

import json
import math


def fmt_float(x: float) -> str:
    if math.isnan(x) or math.isinf(x):
        raise ValueError("non-finite float in deterministic output: %r" % x)
    if x == 0.0:
        # normalize -0.0 so byte-identity does not depend on summation quirks
        x = 0.0
    return "%.17g" % x


def safe_number(x: float):
    """Non-finite values become strings (JSON has no literals for them)."""
    x = float(x)
    if math.isnan(x) or math.isinf(x):
        return repr(x)
    return x


def _write(obj, parts):
    if obj is None:
        parts.append("null")
    elif obj is True:
        parts.append("true")
    elif obj is False:
        parts.append("false")
    elif isinstance(obj, int):
        parts.append(str(obj))
    elif isinstance(obj, float):
        parts.append(fmt_float(obj))
    elif isinstance(obj, str):
        parts.append(json.dumps(obj))
    elif isinstance(obj, dict):
        parts.append("{")
        for i, (k, v) in enumerate(obj.items()):
            if i:
                parts.append(",")
            parts.append(json.dumps(str(k)))
            parts.append(":")
            _write(v, parts)
        parts.append("}")
    elif isinstance(obj, (list, tuple)):
        parts.append("[")
        for i, v in enumerate(obj):
            if i:
                parts.append(",")
            _write(v, parts)
        parts.append("]")
    else:
        raise TypeError("cannot serialize %r" % type(obj))


def dumps(obj) -> str:
    """Serialize to a single deterministic JSON line (no trailing newline)."""
    parts = []
    _write(obj, parts)
    return "".join(parts)


def loads(text: str):
    return json.loads(text)
