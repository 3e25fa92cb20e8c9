"""File formats: binary trajectory snapshots, CSV tables and run manifests.

Binary layout (little endian)::

    b"MSLB1" | u64 dim | u64 N_1 [| u64 N_2] | u64 N_t | (f64 re, f64 im) * nodes * (N_t + 1)

Values are node-major, time-minor: all snapshots of node 0 first.
"""
import csv
import json
import struct

import numpy as np

from .errors import ConfigurationError

MAGIC = b"MSLB1"


def write_snapshots(path, shape, series):
    """Write ``series`` of shape ``(N_t + 1, *shape)`` in the binary format."""
    series = np.asarray(series, dtype=complex)
    shape = tuple(shape)
    if series.shape[1:] != shape:
        raise ConfigurationError(f"series shape {series.shape} does not match grid {shape}")
    header = MAGIC + struct.pack(f"<{len(shape) + 2}Q", len(shape), *shape, series.shape[0] - 1)
    body = np.empty(series.shape[1:] + (series.shape[0], 2), dtype="<f8")
    moved = np.moveaxis(series, 0, -1)
    body[..., 0] = moved.real
    body[..., 1] = moved.imag
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(body.tobytes(order="C"))


def read_snapshots(path):
    """Inverse of :func:`write_snapshots`; returns ``(shape, series)``."""
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:5] != MAGIC:
        raise ConfigurationError(f"{path}: not an MSLB1 file")
    (dim,) = struct.unpack_from("<Q", raw, 5)
    if dim not in (1, 2):
        raise ConfigurationError(f"{path}: bad dimension {dim}")
    fields = struct.unpack_from(f"<{dim + 1}Q", raw, 13)
    shape, nt = tuple(fields[:dim]), fields[dim]
    offset = 13 + 8 * (dim + 1)
    body = np.frombuffer(raw, dtype="<f8", offset=offset)
    expected = int(np.prod(shape)) * (nt + 1) * 2
    if body.size != expected:
        raise ConfigurationError(f"{path}: expected {expected} values, found {body.size}")
    body = body.reshape(shape + (nt + 1, 2))
    series = np.moveaxis(body[..., 0] + 1j * body[..., 1], -1, 0)
    return shape, series


def write_trajectory(path, traj, order=0):
    write_snapshots(path, traj.grid.shape, traj.series(order))


def write_vector_field(path, shape, v):
    """A static vector field: the time axis carries the component index."""
    write_snapshots(path, shape, np.asarray(v, dtype=float).astype(complex))


def format_value(x):
    if isinstance(x, (bool, np.bool_)):
        return "1" if x else "0"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    return str(x)


def write_csv(path, header, rows):
    """Plain CSV with a fixed float format (``repr``) so reruns are byte-identical."""
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(header)
        for row in rows:
            if len(row) != len(header):
                raise ConfigurationError(f"row of length {len(row)} for {len(header)} columns")
            wr.writerow([format_value(x) for x in row])


def read_csv(path):
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    return rows[0], rows[1:]


def write_manifest(path, payload):
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True, default=_jsonable)
        fh.write("\n")


def _jsonable(x):
    if isinstance(x, np.ndarray):
        return x.tolist()
    if isinstance(x, np.generic):
        return x.item()
    raise TypeError(f"cannot serialize {type(x).__name__}")
