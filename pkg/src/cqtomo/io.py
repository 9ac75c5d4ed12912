"""File formats: grid fields, measurement sets, sinograms, reports and PGM images.

Every data file starts with one line of JSON (the header), then a newline,
then the payload: binary matrices in the matrix serialization order, or CSV
text. JSON is written with sorted keys and floats in ``repr`` form, so equal
inputs give byte-identical files.
"""

from __future__ import annotations

import csv
import io as _io
import json
import logging
import os
import struct

import numpy as np

from .errors import DataIOError
from .fields import GridField, GridScalar, GridSpec
from .gauge import MeasurementSet, StateSets
from .matrix import deserialize_matrix, serialize_matrix
from .xray import Sinogram

log = logging.getLogger(__name__)

GRID_FORMAT = "cqtomo-grid/1"
MEASUREMENT_FORMAT = "cqtomo-measurement/1"
SINOGRAM_FORMAT = "cqtomo-sinogram/1"


def dumps(obj):
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=False)


def _write(path, header, payload: bytes):
    try:
        with open(path, "wb") as fh:
            fh.write(dumps(header).encode() + b"\n")
            fh.write(payload)
    except OSError as exc:
        raise DataIOError(f"cannot write {path}: {exc.strerror}") from None


def _read(path, expected_format):
    try:
        with open(path, "rb") as fh:
            raw = fh.read()
    except OSError as exc:
        raise DataIOError(f"cannot read {path}: {exc.strerror}") from None
    cut = raw.find(b"\n")
    if cut < 0:
        raise DataIOError(f"{path}: no header line")
    try:
        header = json.loads(raw[:cut])
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise DataIOError(f"{path}: bad header ({exc})") from None
    if header.get("format") != expected_format:
        raise DataIOError(f"{path}: format {header.get('format')!r}, expected {expected_format!r}")
    return header, raw[cut + 1 :]


def _pack(stack):
    return b"".join(serialize_matrix(m) for m in stack)


def _unpack(buf, count, path):
    out = []
    off = 0
    try:
        for _ in range(count):
            m, off = deserialize_matrix(buf, off)
            out.append(m)
    except (ValueError, IndexError, struct.error) as exc:
        raise DataIOError(f"{path}: truncated matrix payload ({exc})") from None
    if off != len(buf):
        raise DataIOError(f"{path}: {len(buf) - off} trailing bytes after {count} matrices")
    return np.array(out) if out else np.zeros((0, 0, 0), dtype=np.complex128)


# ---------------------------------------------------------------- grid fields


def write_grid_field(path, fld):
    """Write a :class:`GridField` (or :class:`GridScalar`, stored as 1x1 matrices)."""
    scalar = isinstance(fld, GridScalar)
    values = np.asarray(fld.values, dtype=np.complex128)
    mats = values.reshape(-1, 1, 1) if scalar else values.reshape((-1,) + values.shape[-2:])
    header = dict(fld.grid.to_dict(), format=GRID_FORMAT, N=int(mats.shape[-1]), scalar=scalar)
    _write(path, header, _pack(mats))


def read_grid_field(path):
    header, body = _read(path, GRID_FORMAT)
    try:
        grid = GridSpec(header["origin"], header["spacing"], header["dims"])
        n = int(header["N"])
    except KeyError as exc:
        raise DataIOError(f"{path}: header is missing {exc.args[0]!r}") from None
    mats = _unpack(body, grid.size, path)
    if mats.shape[-1] != n:
        raise DataIOError(f"{path}: payload matrices are {mats.shape[-1]}x{mats.shape[-1]}, header says N={n}")
    if header.get("scalar"):
        return GridScalar(grid, mats.reshape(grid.dims).real)
    return GridField(grid, mats.reshape(grid.dims + (n, n)))


# ---------------------------------------------------------------- measurements


def write_measurements(path, data: MeasurementSet):
    header = {
        "format": MEASUREMENT_FORMAT,
        "mode": data.mode,
        "family": data.family_header,
        "states": data.states.to_dict() if data.states is not None else None,
        "count": len(data),
        "meta": data.meta,
    }
    if data.mode == "amplitudes":
        buf = _io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["ray_index", "a_index", "b_index", "value"])
        for r, a, b in np.ndindex(data.values.shape):
            w.writerow([r, a, b, repr(float(data.values[r, a, b]))])
        payload = buf.getvalue().encode()
    else:
        payload = _pack(data.values)
    _write(path, header, payload)


def read_measurements(path):
    header, body = _read(path, MEASUREMENT_FORMAT)
    try:
        mode, count = header["mode"], int(header["count"])
        states = StateSets.from_dict(header["states"]) if header.get("states") else None
        family = header["family"]
    except KeyError as exc:
        raise DataIOError(f"{path}: header is missing {exc.args[0]!r}") from None
    if mode == "amplitudes":
        if states is None:
            raise DataIOError(f"{path}: amplitude data without state sets")
        vals = np.zeros((count, len(states.final), len(states.initial)))
        try:
            rows = csv.reader(_io.StringIO(body.decode()))
            next(rows)
            for row in rows:
                vals[int(row[0]), int(row[1]), int(row[2])] = float(row[3])
        except (ValueError, IndexError, StopIteration) as exc:
            raise DataIOError(f"{path}: bad amplitude row ({exc})") from None
    else:
        vals = _unpack(body, count, path)
    return MeasurementSet(mode, vals, family, states, header.get("meta", {}))


# ---------------------------------------------------------------- sinograms


def write_sinogram(path, sino: Sinogram):
    vals = np.asarray(sino.values)
    flat = vals.reshape(len(vals), -1)
    header = {"format": SINOGRAM_FORMAT, "family": sino.header, "shape": list(vals.shape)}
    buf = _io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["ray_index", "component_index", "re", "im"])
    for r, c in np.ndindex(flat.shape):
        z = complex(flat[r, c])
        w.writerow([r, c, repr(z.real), repr(z.imag)])
    _write(path, header, buf.getvalue().encode())


def read_sinogram(path):
    header, body = _read(path, SINOGRAM_FORMAT)
    shape = tuple(header.get("shape", ()))
    if not shape:
        raise DataIOError(f"{path}: header is missing 'shape'")
    flat = np.zeros((shape[0], int(np.prod(shape[1:], dtype=int))), dtype=np.complex128)
    try:
        rows = csv.reader(_io.StringIO(body.decode()))
        next(rows)
        for row in rows:
            flat[int(row[0]), int(row[1])] = complex(float(row[2]), float(row[3]))
    except (ValueError, IndexError, StopIteration) as exc:
        raise DataIOError(f"{path}: bad sinogram row ({exc})") from None
    vals = flat.reshape(shape)
    if not np.any(vals.imag):
        vals = vals.real
    return Sinogram(vals, header["family"])


# ---------------------------------------------------------------- reports and images


def write_json(path, obj):
    try:
        with open(path, "w") as fh:
            fh.write(json.dumps(obj, sort_keys=True, indent=2, allow_nan=False) + "\n")
    except OSError as exc:
        raise DataIOError(f"cannot write {path}: {exc.strerror}") from None


def write_pgm(path, image):
    """Binary 8-bit PGM with linear min-max scaling; returns the scaling used.

    The scaling is stored in a header comment as well, so the image can be
    mapped back to field values.
    """
    img = np.asarray(image, dtype=float)
    if img.ndim != 2:
        raise ValueError(f"PGM needs a 2D image, got shape {img.shape}")
    lo, hi = float(img.min()), float(img.max())
    span = hi - lo
    scaled = np.zeros_like(img) if span == 0 else (img - lo) / span
    # rows of the image run top to bottom, so flip the second grid axis
    pix = np.round(255 * scaled.T[::-1]).astype(np.uint8)
    head = f"P5\n# min={lo!r} max={hi!r}\n{img.shape[0]} {img.shape[1]}\n255\n".encode()
    try:
        with open(path, "wb") as fh:
            fh.write(head + pix.tobytes())
    except OSError as exc:
        raise DataIOError(f"cannot write {path}: {exc.strerror}") from None
    return {"file": os.path.basename(path), "min": lo, "max": hi}


def read_pgm(path):
    """Pixels (rows top to bottom) and the ``min``/``max`` comment values, if any."""
    try:
        with open(path, "rb") as fh:
            raw = fh.read()
    except OSError as exc:
        raise DataIOError(f"cannot read {path}: {exc.strerror}") from None
    tokens, meta, pos = [], {}, 0
    while len(tokens) < 4:
        end = raw.index(b"\n", pos)
        line = raw[pos:end].decode()
        pos = end + 1
        if line.startswith("#"):
            for item in line[1:].split():
                key, _, val = item.partition("=")
                meta[key] = float(val)
        else:
            tokens.extend(line.split())
    if tokens[0] != "P5":
        raise DataIOError(f"{path}: not a binary PGM")
    width, height = int(tokens[1]), int(tokens[2])
    pix = np.frombuffer(raw, dtype=np.uint8, count=width * height, offset=pos).reshape(height, width)
    return pix, meta
