"""Serialisation helpers: atomic writes, 17-digit numbers, manifests, golden files."""

from __future__ import annotations

import datetime as _dt
import hashlib
import json
import math
import os
import tempfile
from pathlib import Path

from . import __version__

SCHEMA_VERSION = 1

# per-subcommand result.json schema: field path -> numeric tolerance
# ("exact" for strings/ints/bools); paths use dots, "[]" means every element
SCHEMAS = {
    "spectrum": {
        "version": 1,
        "fields": {
            "n_bands": "exact",
            "n_time": "exact",
            "root_residual": {"atol": 1e-12},
            "gap_report.min_ratio": {"rtol": 1e-8},
            "gap_report.passed": "exact",
            "means[]": {"rtol": 1e-9},
        },
    },
    "floquet": {
        "version": 1,
        "fields": {
            "dim": "exact",
            "hermiticity_defect": {"atol": 1e-10},
            "decay_exponent": {"atol": 1e-3},
            "finite_norm_off_0_2": {"rtol": 1e-6},
        },
    },
    "kam": {
        "version": 1,
        "fields": {
            "converged": "exact",
            "final_offdiag": {"atol": 1e-8},
            "eigenvalues[]": {"atol": 1e-8},
        },
    },
    "sieve": {
        "version": 1,
        "fields": {
            "total_measure": {"rtol": 1e-9},
            "n_intervals": "exact",
            "test_passed": "exact",
        },
    },
    "evolve": {
        "version": 1,
        "fields": {
            "sup_energy": {"rtol": 1e-8},
            "ratio": {"rtol": 1e-8},
            "max_unitarity_defect": {"atol": 1e-10},
        },
    },
    "resonant": {
        "version": 1,
        "fields": {
            "p": "exact",
            "q": "exact",
            "hs_norm": {"rtol": 1e-6},
            "passed": "exact",
        },
    },
    "sweep": {
        "version": 1,
        "fields": {
            "rows[].alpha": "exact",
            "rows[].bounded": "exact",
            "rows[].ratio": {"rtol": 1e-6},
        },
    },
}


def format_float(x):
    if math.isnan(x):
        return "NaN"
    if math.isinf(x):
        return "Infinity" if x > 0 else "-Infinity"
    s = format(x, ".17g")
    # keep floats recognisable as floats when read back
    if "e" not in s and "." not in s and "n" not in s.lower():
        s += ".0"
    return s


def to_json(obj, indent=2, _level=0):
    """JSON text with every float written with 17 significant digits."""
    pad = " " * (indent * (_level + 1))
    end = " " * (indent * _level)
    if obj is None:
        return "null"
    if obj is True:
        return "true"
    if obj is False:
        return "false"
    if isinstance(obj, int):
        return str(obj)
    if isinstance(obj, float):
        return format_float(obj)
    if isinstance(obj, str):
        return json.dumps(obj)
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [f"{pad}{to_json(str(k))}: {to_json(v, indent, _level + 1)}" for k, v in obj.items()]
        return "{\n" + ",\n".join(items) + "\n" + end + "}"
    if isinstance(obj, (list, tuple)):
        if not obj:
            return "[]"
        if all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in obj):
            return "[" + ", ".join(to_json(v) for v in obj) + "]"
        items = [f"{pad}{to_json(v, indent, _level + 1)}" for v in obj]
        return "[\n" + ",\n".join(items) + "\n" + end + "]"
    if getattr(obj, "ndim", None) == 0 and hasattr(obj, "item"):  # numpy scalar
        return to_json(obj.item(), indent, _level)
    if hasattr(obj, "tolist"):
        return to_json(obj.tolist(), indent, _level)
    raise TypeError(f"cannot serialise {type(obj).__name__}")


def atomic_write(path, text):
    """Write to a temporary file in the same directory, then rename into place."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _cell(v):
    if isinstance(v, str):
        return v
    if isinstance(v, (int,)) and not isinstance(v, bool):
        return str(v)
    if hasattr(v, "dtype") and v.dtype.kind in "iu":
        return str(int(v))
    return format_float(float(v))


def csv_text(header, rows):
    out = [",".join(header)]
    for row in rows:
        out.append(",".join(_cell(v) for v in row))
    return "\n".join(out) + "\n"


def sha256_file(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def sha256_text(text):
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


def make_manifest(subcommand, config_text, config_dict, inputs, seed, threads, outputs, timestamp=None):
    return {
        "schema_version": SCHEMA_VERSION,
        "subcommand": subcommand,
        "tool_version": __version__,
        "config_text": config_text,
        "config": config_dict,
        "config_digest": sha256_text(config_text),
        "input_digests": inputs,
        "seed": seed,
        "threads": threads,
        "outputs": outputs,
        "timestamp": timestamp or _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds"),
    }


def _lookup(obj, path):
    """Values at a dotted path; ``name[]`` fans out over a list."""
    parts = path.split(".")
    vals = [obj]
    for part in parts:
        nxt = []
        fan = part.endswith("[]")
        key = part[:-2] if fan else part
        for v in vals:
            if not isinstance(v, dict) or key not in v:
                raise KeyError(path)
            item = v[key]
            if fan:
                nxt.extend(item)
            else:
                nxt.append(item)
        vals = nxt
    return vals


def compare_to_golden(actual, golden, schema):
    """List of mismatch descriptions (empty if the result matches the golden file)."""
    problems = []
    if golden.get("schema_version") != schema["version"] or actual.get("schema_version") != schema["version"]:
        problems.append("schema_version mismatch")
    for path, tol in schema["fields"].items():
        try:
            a = _lookup(actual, path)
            b = _lookup(golden, path)
        except KeyError:
            problems.append(f"{path}: missing")
            continue
        if len(a) != len(b):
            problems.append(f"{path}: length {len(a)} != {len(b)}")
            continue
        for x, y in zip(a, b):
            if tol == "exact":
                if x != y:
                    problems.append(f"{path}: {x!r} != {y!r}")
            else:
                bound = tol.get("atol", 0.0) + tol.get("rtol", 0.0) * abs(y)
                if not abs(x - y) <= bound:
                    problems.append(f"{path}: |{x} - {y}| > {bound:.3g}")
    return problems
