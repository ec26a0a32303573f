"""GLF1 tensor files plus JSON/CSV report serialization.

GLF1 layout, all little-endian::

    b"GLF1" | u32 ndim | ndim x u32 dims | u8 dtype | row-major payload

dtype 1 is float32 and dtype 2 is uint32. ``ndim`` is between 1 and 4 and
every dim is at least 1. The file holds nothing after the payload.
"""

import csv
import json
import math
import struct
from pathlib import Path
from typing import NamedTuple

import numpy as np

MAGIC = b"GLF1"
DTYPES = {1: np.dtype("<f4"), 2: np.dtype("<u4")}
DTYPE_NAMES = {"f32": 1, "u32": 2}
MAX_NDIM = 4


class TensorFormatError(ValueError):
    """Base class for malformed GLF1 files."""


class BadMagicError(TensorFormatError):
    pass


class TruncatedFileError(TensorFormatError):
    pass


class UnknownDtypeError(TensorFormatError):
    pass


class LengthMismatchError(TensorFormatError):
    pass


class HeaderError(TensorFormatError):
    """ndim or dims outside the allowed range."""


class ReportFormatError(ValueError):
    pass


class Tensor(NamedTuple):
    dims: tuple
    dtype: int
    values: np.ndarray


def _dtype_code(dtype):
    if isinstance(dtype, str):
        if dtype not in DTYPE_NAMES:
            raise UnknownDtypeError(f"unknown dtype {dtype!r}")
        return DTYPE_NAMES[dtype]
    if dtype not in DTYPES:
        raise UnknownDtypeError(f"unknown dtype code {dtype}")
    return dtype


def _check_dims(dims):
    if not 1 <= len(dims) <= MAX_NDIM:
        raise HeaderError(f"ndim must be in [1, {MAX_NDIM}], got {len(dims)}")
    if any(d < 1 for d in dims):
        raise HeaderError(f"every dim must be >= 1, got {dims}")


def encode_tensor(dims, dtype, values):
    dims = tuple(int(d) for d in dims)
    code = _dtype_code(dtype)
    _check_dims(dims)
    arr = np.asarray(values)
    if arr.size != math.prod(dims):
        raise LengthMismatchError(f"{arr.size} values for dims {dims}")
    if code == 2:
        if arr.dtype.kind == "f":
            raise UnknownDtypeError("float values given for a u32 tensor")
        if arr.size and (arr.min() < 0 or arr.max() > 0xFFFFFFFF):
            raise ValueError("u32 values out of range")
    payload = np.ascontiguousarray(arr.reshape(-1), dtype=DTYPES[code]).tobytes()
    header = MAGIC + struct.pack(f"<I{len(dims)}I", len(dims), *dims) + struct.pack("<B", code)
    return header + payload


def decode_tensor(data):
    data = bytes(data)
    if len(data) < 4:
        raise TruncatedFileError("file shorter than the magic bytes")
    if data[:4] != MAGIC:
        raise BadMagicError(f"bad magic {data[:4]!r}")
    if len(data) < 8:
        raise TruncatedFileError("missing ndim")
    (ndim,) = struct.unpack_from("<I", data, 4)
    if not 1 <= ndim <= MAX_NDIM:
        raise HeaderError(f"ndim must be in [1, {MAX_NDIM}], got {ndim}")
    head = 8 + 4 * ndim + 1
    if len(data) < head:
        raise TruncatedFileError("header cut short")
    dims = struct.unpack_from(f"<{ndim}I", data, 8)
    _check_dims(dims)
    code = data[head - 1]
    if code not in DTYPES:
        raise UnknownDtypeError(f"unknown dtype code {code}")
    expected = head + DTYPES[code].itemsize * math.prod(dims)
    if len(data) < expected:
        raise TruncatedFileError(f"payload has {len(data) - head} bytes, expected {expected - head}")
    if len(data) > expected:
        raise LengthMismatchError(f"{len(data) - expected} trailing bytes after payload")
    values = np.frombuffer(data, dtype=DTYPES[code], offset=head).reshape(dims)
    return Tensor(tuple(dims), code, values)


def write_tensor(path, dims, dtype, values):
    Path(path).write_bytes(encode_tensor(dims, dtype, values))


def read_tensor(path):
    return decode_tensor(Path(path).read_bytes())


def write_array(path, arr, dtype=None):
    """Shape-preserving convenience wrapper; picks u32 for integer arrays."""
    arr = np.asarray(arr)
    if dtype is None:
        dtype = "u32" if arr.dtype.kind in "iub" else "f32"
    write_tensor(path, arr.shape, dtype, arr)


def read_array(path):
    return read_tensor(path).values


# -- reports ----------------------------------------------------------------

REPORT_KEYS = ("scheme", "requested_bins", "bins", "ace", "ece", "total_samples", "method",
               "sample_count", "seed", "wall_time_seconds")
OPTIONAL_KEYS = ("miou", "per_class_iou")
BIN_KEYS = ("lower", "upper", "count", "mean_confidence", "accuracy")


def _clean(v):
    if isinstance(v, float) and not np.isfinite(v):
        return None
    if isinstance(v, (np.floating, np.integer)):
        return _clean(v.item())
    if isinstance(v, dict):
        return {k: _clean(x) for k, x in v.items()}
    if isinstance(v, (list, tuple, np.ndarray)):
        return [_clean(x) for x in v]
    return v


def report_dict(report, *, method, sample_count=None, seed=None, wall_time_seconds=None,
                miou=None, per_class_iou=None, **extra):
    d = report.to_dict()
    d.update(method=method, sample_count=sample_count, seed=seed,
             wall_time_seconds=wall_time_seconds)
    if miou is not None:
        d["miou"] = miou
        d["per_class_iou"] = per_class_iou
    d.update(extra)
    return _clean(d)


def dumps_report(doc):
    # floats use shortest round-trip repr, so values survive parsing exactly
    return json.dumps(_clean(doc), indent=2, sort_keys=True, allow_nan=False) + "\n"


def validate_report(doc):
    missing = [k for k in REPORT_KEYS if k not in doc]
    if missing:
        raise ReportFormatError(f"report missing keys {missing}")
    if not isinstance(doc["bins"], list):
        raise ReportFormatError("'bins' must be a list")
    for b in doc["bins"]:
        if not isinstance(b, dict) or set(BIN_KEYS) - set(b):
            raise ReportFormatError(f"malformed bin entry {b!r}")
    return doc


def write_report(path, doc):
    Path(path).write_text(dumps_report(validate_report(doc)), encoding="utf-8")


def read_report(path):
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ReportFormatError(f"invalid JSON in {path}: {exc}") from exc
    if not isinstance(doc, dict):
        raise ReportFormatError("report must be a JSON object")
    return validate_report(doc)


def write_csv(path, rows, fields=BIN_KEYS):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=list(fields), lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: repr(r[k]) if isinstance(r[k], float) else r[k] for k in fields})


def read_csv(path, fields=BIN_KEYS):
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or list(reader.fieldnames) != list(fields):
            raise ReportFormatError(f"unexpected CSV header {reader.fieldnames}")
        rows = []
        for line in reader:
            try:
                rows.append({k: int(line[k]) if k == "count" else float(line[k]) for k in fields})
            except (TypeError, ValueError) as exc:
                raise ReportFormatError(f"bad CSV row {line}: {exc}") from exc
        return rows
