"""Deterministic readers and writers for vectors, samples, reports and
manifests.

Floats are always written with 17 significant digits, which round-trips
IEEE doubles exactly.  JSON output has sorted keys and a fixed layout.
"""

from __future__ import annotations

import hashlib
import json
import math
import os
from pathlib import Path

import numpy as np

from .errors import MalformedFileError, SchemaError

SCHEMA_VERSION = 1


def fmt_float(x: float) -> str:
    s = "%.17g" % x
    if not any(c in s for c in ".eEn"):
        s += ".0"
    return s


# --------------------------------------------------------------------------
# CSV
# --------------------------------------------------------------------------


def _parse_float(tok: str, line: int, col: int, path) -> float:
    try:
        v = float(tok)
    except ValueError:
        raise MalformedFileError(f"{path}: line {line}, column {col}: not a number: {tok!r}") from None
    if not math.isfinite(v):
        raise MalformedFileError(f"{path}: line {line}, column {col}: non-finite value")
    return v


def write_vector_csv(x, path) -> None:
    """One coordinate per line."""
    x = np.asarray(x, dtype=np.float64).ravel()
    with open(path, "w", newline="\n") as fh:
        fh.write("".join(fmt_float(v) + "\n" for v in x.tolist()))


def read_vector_csv(path) -> np.ndarray:
    with open(path) as fh:
        lines = fh.read().splitlines()
    values = []
    for i, raw in enumerate(lines, start=1):
        s = raw.strip()
        if not s or s.startswith("#"):
            continue
        if "," in s:
            raise MalformedFileError(f"{path}: line {i}, column {s.index(',') + 1}: "
                                     "expected a single value per line")
        values.append(_parse_float(s, i, 1, path))
    if not values:
        raise MalformedFileError(f"{path}: line 1, column 1: empty vector file")
    return np.array(values, dtype=np.float64)


def write_table_csv(path, header, rows, meta: dict | None = None) -> None:
    """Comma-separated table with optional ``#key=value`` lines and a
    column-name line."""
    with open(path, "w", newline="\n") as fh:
        for k in sorted(meta or {}):
            fh.write(f"#{k}={_meta_value(meta[k])}\n")
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(_cell(v) for v in row) + "\n")


def read_table_csv(path):
    """Returns ``(meta, header, rows)``; numeric cells become floats."""
    meta, header, rows = {}, None, []
    with open(path) as fh:
        for i, raw in enumerate(fh.read().splitlines(), start=1):
            if raw.startswith("#"):
                k, _, v = raw[1:].partition("=")
                meta[k] = v
            elif header is None:
                header = raw.split(",")
            elif raw:
                cells = raw.split(",")
                if len(cells) != len(header):
                    raise MalformedFileError(f"{path}: line {i}, column {len(cells)}: "
                                             f"expected {len(header)} columns")
                rows.append([_maybe_float(c) for c in cells])
    if header is None:
        raise MalformedFileError(f"{path}: line 1, column 1: empty table")
    return meta, header, rows


def _cell(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return fmt_float(float(v))
    return str(v)


def _maybe_float(c: str):
    try:
        return float(c)
    except ValueError:
        return c


def _meta_value(v) -> str:
    if isinstance(v, (float, np.floating)):
        return fmt_float(float(v))
    if isinstance(v, (dict, list)):
        return dumps(v).replace("\n", " ")
    return str(v)


def write_sample_csv(sample, path) -> None:
    """One observation per line, meta as ``#key=value`` comments."""
    Y = sample.observations
    with open(path, "w", newline="\n") as fh:
        for k in sorted(sample.meta):
            fh.write(f"#{k}={_meta_value(sample.meta[k])}\n")
        for row in Y.tolist():
            fh.write(",".join(fmt_float(v) for v in row) + "\n")


def read_sample_csv(path):
    from .model import ObservationSample

    meta, rows, width = {}, [], None
    with open(path) as fh:
        for i, raw in enumerate(fh.read().splitlines(), start=1):
            if raw.startswith("#"):
                k, sep, v = raw[1:].partition("=")
                if not sep:
                    raise MalformedFileError(f"{path}: line {i}, column 2: expected #key=value")
                meta[k] = _decode_meta(v)
                continue
            if not raw.strip():
                continue
            cells = raw.split(",")
            if width is None:
                width = len(cells)
            elif len(cells) != width:
                raise MalformedFileError(f"{path}: line {i}, column {min(len(cells), width) + 1}: "
                                         f"expected {width} columns")
            rows.append([_parse_float(c, i, j, path) for j, c in enumerate(cells, start=1)])
    if not rows:
        raise MalformedFileError(f"{path}: line 1, column 1: no observations")
    return ObservationSample(np.array(rows, dtype=np.float64), meta)


def _decode_meta(v: str):
    for conv in (int, float):
        try:
            return conv(v)
        except ValueError:
            pass
    return v


# --------------------------------------------------------------------------
# JSON
# --------------------------------------------------------------------------


def _to_jsonable(obj):
    if isinstance(obj, np.ndarray):
        return _to_jsonable(obj.tolist())
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return float(obj)
    if isinstance(obj, dict):
        return {str(k): _to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_to_jsonable(v) for v in obj]
    return obj


def _encode(obj, indent: int, level: int) -> str:
    pad = " " * (indent * (level + 1))
    end = " " * (indent * level)
    if obj is None:
        return "null"
    if obj is True:
        return "true"
    if obj is False:
        return "false"
    if isinstance(obj, int):
        return str(obj)
    if isinstance(obj, float):
        if not math.isfinite(obj):
            raise SchemaError("non-finite value cannot be serialised")
        return fmt_float(obj)
    if isinstance(obj, str):
        return json.dumps(obj, ensure_ascii=True)
    if isinstance(obj, list):
        if not obj:
            return "[]"
        if all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in obj):
            return "[" + ", ".join(_encode(v, indent, level + 1) for v in obj) + "]"
        items = ",\n".join(pad + _encode(v, indent, level + 1) for v in obj)
        return "[\n" + items + "\n" + end + "]"
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = ",\n".join(pad + json.dumps(k) + ": " + _encode(obj[k], indent, level + 1)
                           for k in sorted(obj))
        return "{\n" + items + "\n" + end + "}"
    raise SchemaError(f"cannot serialise {type(obj).__name__}")


def dumps(obj, indent: int = 2) -> str:
    """Canonical JSON: sorted keys, 17-digit floats, no NaN or infinity."""
    return _encode(_to_jsonable(obj), indent, 0)


def write_json(obj, path) -> None:
    with open(path, "w", newline="\n") as fh:
        fh.write(dumps(obj) + "\n")


def read_json(path):
    try:
        with open(path) as fh:
            return json.load(fh, parse_constant=_reject_constant)
    except json.JSONDecodeError as exc:
        raise MalformedFileError(f"{path}: line {exc.lineno}, column {exc.colno}: {exc.msg}") from None


def _reject_constant(name):
    raise SchemaError(f"non-finite constant {name} in JSON")


# reports ---------------------------------------------------------------

REPORT_FIELDS = {
    "MaxMaxReport": {"estimate", "iterations", "variance_trajectory", "assignments_final",
                     "karcher_verified", "start_id"},
    "BiasReport": {"K_estimate", "K_std_error", "sigma", "t0_norm", "cb_lower", "cb_upper",
                   "EB", "EB_over_sigma", "method"},
    "CriticalNoise": {"sigma_c", "regime", "inputs"},
    "ExperimentSummary": {"experiment", "values"},
}


def _report_type(report) -> str:
    name = type(report).__name__
    if name in REPORT_FIELDS:
        return name
    raise SchemaError(f"no report schema for {name}")


def report_to_dict(report) -> dict:
    if isinstance(report, dict):
        rtype, data = report["report_type"], report["data"]
    else:
        rtype, data = _report_type(report), report.to_dict()
    if set(data) != REPORT_FIELDS[rtype]:
        raise SchemaError(f"{rtype} fields do not match the schema")
    return {"schema_version": SCHEMA_VERSION, "report_type": rtype, "data": data}


def write_report_json(report, path) -> None:
    write_json(report_to_dict(report), path)


def read_report_json(path, as_object: bool = True):
    """Load a report.  Unknown or missing fields raise :class:`SchemaError`."""
    doc = read_json(path)
    return report_from_dict(doc, as_object)


def report_from_dict(doc: dict, as_object: bool = True):
    if not isinstance(doc, dict):
        raise SchemaError("report must be a JSON object")
    extra = set(doc) - {"schema_version", "report_type", "data"}
    if extra:
        raise SchemaError(f"unknown top-level fields: {sorted(extra)}")
    if doc.get("schema_version") != SCHEMA_VERSION:
        raise SchemaError(f"unsupported schema_version {doc.get('schema_version')!r}")
    rtype = doc.get("report_type")
    if rtype not in REPORT_FIELDS:
        raise SchemaError(f"unknown report_type {rtype!r}")
    data = doc.get("data")
    if not isinstance(data, dict):
        raise SchemaError("data must be an object")
    unknown = set(data) - REPORT_FIELDS[rtype]
    if unknown:
        raise SchemaError(f"unknown fields for {rtype}: {sorted(unknown)}")
    missing = REPORT_FIELDS[rtype] - set(data)
    if missing:
        raise SchemaError(f"missing fields for {rtype}: {sorted(missing)}")
    if not as_object:
        return data
    return _build(rtype, data)


def _build(rtype, data):
    if rtype == "MaxMaxReport":
        from .maxmax import MaxMaxReport

        af = data["assignments_final"]
        return MaxMaxReport(np.array(data["estimate"], dtype=np.float64), int(data["iterations"]),
                            [float(v) for v in data["variance_trajectory"]],
                            None if af is None else np.array(af, dtype=np.int64),
                            bool(data["karcher_verified"]), data["start_id"])
    if rtype == "BiasReport":
        from .bias import BiasReport

        return BiasReport(**{k: (v if k == "method" else float(v)) for k, v in data.items()})
    if rtype == "CriticalNoise":
        from .noninvariant import CriticalNoise

        return CriticalNoise(float(data["sigma_c"]), data["regime"],
                             {k: float(v) for k, v in data["inputs"].items()})
    return data


# samples as JSON -----------------------------------------------------------


def write_sample_json(sample, path) -> None:
    write_json({"schema_version": SCHEMA_VERSION, "meta": sample.meta,
                "observations": sample.observations}, path)


def read_sample_json(path):
    from .model import ObservationSample

    doc = read_json(path)
    if set(doc) != {"schema_version", "meta", "observations"}:
        raise SchemaError("sample JSON must hold schema_version, meta and observations")
    if doc["schema_version"] != SCHEMA_VERSION:
        raise SchemaError(f"unsupported schema_version {doc['schema_version']!r}")
    Y = np.array(doc["observations"], dtype=np.float64)
    if Y.ndim != 2 or Y.shape[0] == 0:
        raise MalformedFileError(f"{path}: observations must be a non-empty list of rows")
    return ObservationSample(Y, doc["meta"])


# manifest ----------------------------------------------------------------


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def write_manifest(out_dir, config: dict, code_version: str, elapsed: float,
                   name: str = "manifest.json") -> dict:
    """List every other file under ``out_dir`` with its SHA-256.

    ``elapsed_seconds`` is the only run-dependent field.
    """
    out_dir = Path(out_dir)
    arts = []
    for p in sorted(out_dir.rglob("*")):
        if p.is_file() and p.name != name:
            arts.append({"path": p.relative_to(out_dir).as_posix(), "sha256": sha256_file(p)})
    doc = {"schema_version": SCHEMA_VERSION, "config": config, "artifacts": arts,
           "code_version": code_version, "elapsed_seconds": float(elapsed)}
    write_json(doc, out_dir / name)
    return doc


def verify_manifest(out_dir, name: str = "manifest.json") -> bool:
    out_dir = Path(out_dir)
    doc = read_json(out_dir / name)
    for a in doc["artifacts"]:
        p = out_dir / a["path"]
        if not p.is_file() or sha256_file(p) != a["sha256"]:
            return False
    return True


def ensure_dir(path) -> Path:
    p = Path(path)
    os.makedirs(p, exist_ok=True)
    return p
