"""Reading and writing coefficient fields and reports as JSON.

Floats are written with 17 significant digits so files round-trip exactly.
Masked nodes are written as ``null`` and the mask itself is stored when any
node is invalid. The output for a given payload is byte-for-byte stable.
"""

from __future__ import annotations

import json
import math
from typing import IO

import numpy as np

from .core import Coeffs
from .grid import GridError, GridSpec, ScalarField

FIELD_KEYS = ("beta", "gamma", "V", "W")


class FieldFileError(ValueError):
    """A field or boundary file is missing keys or holds malformed data."""


def _fmt(x: float) -> str:
    if not math.isfinite(x):
        return "null"
    s = format(x, ".17g")
    if "e" not in s and "." not in s and "n" not in s:
        s += ".0"
    return s


def dumps(obj, indent: int = 1) -> str:
    """Deterministic JSON with ``.17g`` floats and sorted keys."""
    out: list[str] = []

    def emit(o, depth):
        pad = " " * (indent * (depth + 1))
        end = " " * (indent * depth)
        if isinstance(o, (bool, np.bool_)):
            out.append("true" if o else "false")
        elif o is None:
            out.append("null")
        elif isinstance(o, (int, np.integer)):
            out.append(str(int(o)))
        elif isinstance(o, (float, np.floating)):
            out.append(_fmt(float(o)))
        elif isinstance(o, str):
            out.append(json.dumps(o))
        elif isinstance(o, dict):
            if not o:
                out.append("{}")
                return
            out.append("{\n")
            items = sorted(o.items(), key=lambda kv: str(kv[0]))
            for n, (k, v) in enumerate(items):
                out.append(f"{pad}{json.dumps(str(k))}: ")
                emit(v, depth + 1)
                out.append(",\n" if n < len(items) - 1 else "\n")
            out.append(end + "}")
        elif isinstance(o, (list, tuple, np.ndarray)):
            seq = list(np.asarray(o).ravel()) if isinstance(o, np.ndarray) else list(o)
            if all(isinstance(v, (int, float, bool, np.number, np.bool_)) or v is None for v in seq):
                out.append("[")
                for n, v in enumerate(seq):
                    if n:
                        out.append(", ")
                    emit(v, depth + 1)
                out.append("]")
                return
            out.append("[\n")
            for n, v in enumerate(seq):
                out.append(pad)
                emit(v, depth + 1)
                out.append(",\n" if n < len(seq) - 1 else "\n")
            out.append(end + "]")
        else:
            raise TypeError(f"cannot serialise {type(o).__name__}")

    emit(obj, 0)
    out.append("\n")
    return "".join(out)


def field_payload(c: Coeffs) -> dict:
    valid = c.valid
    payload: dict = {"grid": c.grid.as_dict()}
    for key, f in zip(FIELD_KEYS, c.fields()):
        payload[key] = np.where(valid, f.values, np.nan).ravel().tolist()
    if not valid.all():
        payload["mask"] = valid.ravel().astype(int).tolist()
    return payload


def write_field(c: Coeffs, fh: IO[str]) -> None:
    fh.write(dumps(field_payload(c)))


def _grid_from(obj) -> GridSpec:
    if not isinstance(obj, dict):
        raise FieldFileError("'grid' must be an object")
    try:
        g = GridSpec(int(obj["nx"]), int(obj["ny"]), float(obj["x0"]), float(obj["y0"]),
                     float(obj["hx"]), float(obj["hy"]))
    except KeyError as exc:
        raise FieldFileError(f"grid lacks {exc.args[0]!r}") from None
    except (TypeError, ValueError, GridError) as exc:
        raise FieldFileError(f"bad grid: {exc}") from None
    return g


def _array(values, grid: GridSpec, name: str) -> np.ndarray:
    if not isinstance(values, list):
        raise FieldFileError(f"{name!r} must be a list")
    try:
        arr = np.array([np.nan if v is None else v for v in np.ravel(np.array(values, dtype=object))], dtype=float)
    except (TypeError, ValueError):
        raise FieldFileError(f"{name!r} holds non-numeric entries") from None
    if arr.size != grid.nx * grid.ny:
        raise FieldFileError(f"{name!r} has {arr.size} entries, grid needs {grid.nx * grid.ny}")
    return arr.reshape(grid.shape)


def field_from_payload(obj) -> Coeffs:
    if not isinstance(obj, dict):
        raise FieldFileError("field file must hold a JSON object")
    missing = [k for k in ("grid",) + FIELD_KEYS if k not in obj]
    if missing:
        raise FieldFileError(f"field file lacks {', '.join(missing)}")
    g = _grid_from(obj["grid"])
    mask = np.ones(g.shape, bool)
    if obj.get("mask") is not None:
        mask = _array(obj["mask"], g, "mask") != 0
    fields = [ScalarField(g, _array(obj[k], g, k), mask) for k in FIELD_KEYS]
    return Coeffs(*fields)


def read_field(fh: IO[str]) -> Coeffs:
    try:
        obj = json.load(fh)
    except json.JSONDecodeError as exc:
        raise FieldFileError(f"not valid JSON: {exc}") from None
    return field_from_payload(obj)


def read_boundary(fh: IO[str]) -> dict:
    """Dirac/Bäcklund boundary data: ``u1_left``, ``u2_bottom``, ``lambda`` and optional corners."""
    try:
        obj = json.load(fh)
    except json.JSONDecodeError as exc:
        raise FieldFileError(f"not valid JSON: {exc}") from None
    if not isinstance(obj, dict):
        raise FieldFileError("boundary file must hold a JSON object")
    out = {}
    for key in ("u1_left", "u2_bottom"):
        if key in obj:
            try:
                out[key] = np.asarray(obj[key], dtype=float).ravel()
            except (TypeError, ValueError):
                raise FieldFileError(f"{key!r} must be a list of numbers") from None
    for key in ("lambda", "H_corner", "K_corner"):
        if key in obj:
            v = obj[key]
            if isinstance(v, bool) or not isinstance(v, (int, float)) or not math.isfinite(v):
                raise FieldFileError(f"{key!r} must be a finite number")
            out[key] = float(v)
    return out
