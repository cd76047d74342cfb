"""Reading and writing designs, curves and run configurations.

Design files are plain text::

    # oed-design v1
    # coords: T t
    4\t0\t0.2
    4\t87.957...\t0.2

Values are written with ``repr`` precision so a file re-reads to the
bit-identical design.  Curves are CSV files with a header row.  Run
configurations are JSON documents validated against :data:`CONFIG_SCHEMA`;
validation errors name the offending line.
"""
from __future__ import annotations

import csv
import io
import json
import os
import re
import tempfile
from pathlib import Path
from typing import Iterable, Sequence, Tuple

import jsonschema
import numpy as np

from .design import ApproximateDesign

__all__ = [
    "DESIGN_HEADER",
    "ConfigError",
    "atomic_write",
    "write_design",
    "read_design",
    "format_design",
    "parse_design",
    "write_curve",
    "read_curve",
    "CONFIG_SCHEMA",
    "load_config",
]

DESIGN_HEADER = "# oed-design v1"


class ConfigError(ValueError):
    """Invalid input file; ``line`` is 1-based when known."""

    def __init__(self, path, message: str, line: int = None):
        self.path, self.line = str(path), line
        where = f"{path}:{line}" if line else str(path)
        super().__init__(f"{where}: {message}")


def atomic_write(path, text: str) -> Path:
    """Write ``text`` to ``path`` via a temporary file in the same directory and a rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


# --------------------------------------------------------------------------- designs


def format_design(design: ApproximateDesign, coord_names: Sequence[str] = None) -> str:
    lines = [DESIGN_HEADER]
    if coord_names:
        lines.append("# coords: " + " ".join(coord_names))
    for p, w in zip(design.points, design.weights):
        lines.append("\t".join([*(repr(float(c)) for c in p), repr(float(w))]))
    return "\n".join(lines) + "\n"


def parse_design(text: str, source: str = "<string>") -> ApproximateDesign:
    lines = text.splitlines()
    if not lines or lines[0].strip() != DESIGN_HEADER:
        raise ConfigError(source, f"missing header line {DESIGN_HEADER!r}", 1)
    rows, width = [], None
    for n, raw in enumerate(lines[1:], start=2):
        s = raw.strip()
        if not s or s.startswith("#"):
            continue
        fields = s.split("\t")
        try:
            vals = [float(f) for f in fields]
        except ValueError:
            raise ConfigError(source, f"malformed number in {raw!r}", n) from None
        if len(vals) < 2:
            raise ConfigError(source, "a row needs at least one coordinate and a weight", n)
        if width is not None and len(vals) != width:
            raise ConfigError(source, f"expected {width} columns, found {len(vals)}", n)
        if not all(np.isfinite(vals)):
            raise ConfigError(source, "non-finite value", n)
        width = len(vals)
        rows.append(vals)
    if not rows:
        raise ConfigError(source, "no support points")
    arr = np.array(rows)
    try:
        return ApproximateDesign(arr[:, :-1], arr[:, -1])
    except ValueError as exc:
        raise ConfigError(source, str(exc)) from None


def write_design(path, design: ApproximateDesign, coord_names: Sequence[str] = None) -> Path:
    return atomic_write(path, format_design(design, coord_names))


def read_design(path) -> ApproximateDesign:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(path, "design file not found")
    return parse_design(path.read_text(encoding="utf-8"), str(path))


# --------------------------------------------------------------------------- curves


def write_curve(path, columns: Sequence[str], rows: Iterable[Sequence[float]]) -> Path:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow(["" if (isinstance(v, float) and not np.isfinite(v)) else repr(float(v)) for v in r])
    return atomic_write(path, buf.getvalue())


def read_curve(path) -> Tuple[list, np.ndarray]:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], rows[1:]
    return header, np.array([[float(v) if v else np.nan for v in r] for r in body])


# --------------------------------------------------------------------------- run configuration

_NUM = {"type": "number"}
_POS = {"type": "number", "exclusiveMinimum": 0}
_INT2 = {"type": "integer", "minimum": 2}

CONFIG_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "additionalProperties": False,
    "required": ["version"],
    "properties": {
        "version": {"const": 1},
        "model": {"enum": ["baranyi", "extended"]},
        "nominal": {"type": "object", "additionalProperties": _NUM,
                    "propertyNames": {"enum": ["y0", "y_max", "mu_max", "lam", "b", "T_min"]}},
        "log_convention": {"enum": ["natural", "decimal"]},
        "efficiency_convention": {"enum": ["raw", "homogeneous"]},
        "space": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "time": {"type": "array", "items": _NUM, "minItems": 2, "maxItems": 2},
                "temperature": {"type": "array", "items": _NUM, "minItems": 2, "maxItems": 2},
                "grid_time": _INT2,
                "grid_temp": _INT2,
                "plateau_depth": _POS,
            },
        },
        "criterion": {
            "type": "object",
            "additionalProperties": False,
            "required": ["kind"],
            "properties": {
                "kind": {"enum": ["D", "c", "L"]},
                "parameters": {"type": "array", "items": {"type": "string"}, "minItems": 1},
                "scaled": {"type": "boolean"},
            },
        },
        "solver": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "max_iterations": {"type": "integer", "minimum": 1},
                "tol": _POS,
                "step_rule": {"enum": ["fedorov-optimal", "harmonic"]},
                "collapse_tol_x": _POS,
                "collapse_tol_w": _POS,
                "max_phases": {"type": "integer", "minimum": 1},
            },
        },
        "study": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "primary": {"type": "object", "additionalProperties": {
                    "type": "array", "items": _NUM, "minItems": 4, "maxItems": 4}},
                "reference_designs": {"type": "object", "additionalProperties": {
                    "type": "array", "items": {"type": "number", "minimum": 0}, "minItems": 1}},
                "b": _POS,
                "T_min": _NUM,
                "plateau_tol": _POS,
                "c_plateau_tol": _POS,
                "joint_lambda": {"type": "number", "minimum": 0},
                "scan_temperatures": {"type": "array", "items": _NUM, "minItems": 3},
                "targets": {"type": "array", "items": {"type": "number", "exclusiveMinimum": 0, "maximum": 1}},
                "sensitivity_points": {"type": "integer", "minimum": 2},
            },
        },
        "output": {
            "type": "object",
            "additionalProperties": False,
            "properties": {"dir": {"type": "string"}, "design_file": {"type": "string"}},
        },
    },
}


def _line_of(text: str, path: Sequence) -> int:
    """Best-effort line number of the JSON element at ``path`` (keys and indices)."""
    pos = 0
    for part in path:
        if isinstance(part, str):
            m = re.compile(r'"%s"\s*:' % re.escape(part)).search(text, pos)
            if m is None:
                break
            pos = m.start()
        else:
            # step over ``part`` commas at the current nesting depth inside the array
            start = text.find("[", pos)
            if start < 0:
                break
            depth, i, count = 0, start, 0
            while i < len(text):
                ch = text[i]
                if ch in "[{":
                    depth += 1
                elif ch in "]}":
                    depth -= 1
                    if depth == 0:
                        break
                elif ch == "," and depth == 1:
                    count += 1
                    if count == part:
                        pos = i + 1
                        break
                i += 1
            else:
                break
            if part == 0:
                pos = start + 1
    return text.count("\n", 0, pos) + 1


def load_config(path) -> dict:
    """Read and validate a JSON run configuration.

    Raises
    ------
    ConfigError
        When the file is missing, is not valid JSON, or violates the schema
        (including unknown keys); the message carries ``path:line``.
    """
    path = Path(path)
    if not path.is_file():
        raise ConfigError(path, "config file not found")
    text = path.read_text(encoding="utf-8")
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(path, f"invalid JSON: {exc.msg}", exc.lineno) from None
    validator = jsonschema.Draft202012Validator(CONFIG_SCHEMA)
    errors = sorted(validator.iter_errors(data), key=lambda e: list(e.absolute_path))
    if errors:
        err = errors[0]
        where = list(err.absolute_path)
        if err.validator == "additionalProperties":
            extra = re.findall(r"'([^']+)'", err.message)
            if extra:
                where = where + [extra[0]]
        loc = "/".join(str(p) for p in where) or "<root>"
        raise ConfigError(path, f"{loc}: {err.message}", _line_of(text, where))
    return data
