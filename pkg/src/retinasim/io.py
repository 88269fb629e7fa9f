"""File formats.

All writers go through :func:`atomic_write`, so a crash never leaves a
half-written output. Floats in text files use 17 significant digits, which
round-trips IEEE doubles exactly. Every reader failure is reported as
:class:`~retinasim.errors.FileFormatError`.
"""

from __future__ import annotations

import io
import json
import os
import struct
import tempfile
from pathlib import Path
from typing import Iterable, Sequence, Union

import numpy as np

from .dynamics import SpikeRaster
from .errors import FileFormatError

PathLike = Union[str, os.PathLike]

FLOAT_FMT = "%.17g"
FRAME_MAGIC = b"RSFRAME1"
TRAJECTORY_MAGIC = b"RSTRAJ01"


def atomic_write(path: PathLike, data: Union[bytes, str]) -> Path:
    """Write ``data`` to a temporary sibling, then rename it over ``path``."""
    path = Path(path)
    payload = data.encode() if isinstance(data, str) else data
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
        with os.fdopen(fd, "wb") as fh:
            fh.write(payload)
        os.replace(tmp, path)
    except OSError as exc:
        raise FileFormatError(f"{path}: cannot write ({exc})") from exc
    return path


def _read_bytes(path: PathLike) -> bytes:
    try:
        return Path(path).read_bytes()
    except OSError as exc:
        raise FileFormatError(f"{path}: cannot read ({exc})") from exc


def _fmt(x) -> str:
    return FLOAT_FMT % x


# -- dense matrices ---------------------------------------------------------


def write_matrix_csv(path: PathLike, matrix) -> Path:
    """Header line ``rows,cols`` followed by one comma-separated row per line."""
    m = np.atleast_2d(np.asarray(matrix, float))
    lines = [f"{m.shape[0]},{m.shape[1]}"] + [",".join(_fmt(v) for v in row) for row in m]
    return atomic_write(path, "\n".join(lines) + "\n")


def read_matrix_csv(path: PathLike) -> np.ndarray:
    text = _read_bytes(path).decode(errors="replace")
    lines = [ln for ln in text.splitlines() if ln.strip()]
    try:
        rows, cols = (int(v) for v in lines[0].split(","))
        values = [[float(v) for v in ln.split(",")] for ln in lines[1:]]
    except (IndexError, ValueError) as exc:
        raise FileFormatError(f"{path}: malformed matrix file ({exc})") from exc
    if len(values) != rows or any(len(r) != cols for r in values):
        raise FileFormatError(f"{path}: header says {rows}x{cols} but the body does not match")
    return np.array(values, float).reshape(rows, cols)


def write_table_csv(path: PathLike, header: Sequence[str], columns: Iterable) -> Path:
    """Columns of equal length under a header line. Integers stay integers."""
    cols = [np.asarray(c) for c in columns]
    if len({len(c) for c in cols}) > 1:
        raise ValueError("table columns differ in length")
    buf = io.StringIO()
    buf.write(",".join(header) + "\n")
    for row in zip(*cols):
        buf.write(",".join(str(int(v)) if np.issubdtype(type(v), np.integer) else _fmt(v) for v in row) + "\n")
    return atomic_write(path, buf.getvalue())


def read_table_csv(path: PathLike) -> dict:
    text = _read_bytes(path).decode(errors="replace")
    lines = [ln for ln in text.splitlines() if ln.strip() and not ln.startswith("#")]
    if not lines:
        raise FileFormatError(f"{path}: empty table")
    header = [h.strip() for h in lines[0].split(",")]
    try:
        body = np.array([[float(v) for v in ln.split(",")] for ln in lines[1:]], float).reshape(-1, len(header))
    except ValueError as exc:
        raise FileFormatError(f"{path}: malformed table ({exc})") from exc
    return {h: body[:, i] for i, h in enumerate(header)}


def write_json(path: PathLike, obj) -> Path:
    return atomic_write(path, json.dumps(obj, indent=2, sort_keys=True, default=_json_default) + "\n")


def _json_default(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, Path):
        return str(o)
    raise TypeError(f"not JSON serialisable: {type(o).__name__}")


# -- frame sequences --------------------------------------------------------


def write_frames(path: PathLike, frames, pixel_mm: float, frame_ms: float) -> Path:
    """Binary movie: magic, uint32 width/height/count, float64 pitch/period, float32 frames."""
    f = np.asarray(frames, np.float32)
    if f.ndim != 3:
        raise ValueError("frames must be (frame, row, col)")
    n, h, w = f.shape
    head = FRAME_MAGIC + struct.pack("<IIIdd", w, h, n, pixel_mm, frame_ms)
    return atomic_write(path, head + f.astype("<f4").tobytes(order="C"))


def read_frames(path: PathLike):
    """Return ``(frames, pixel_mm, frame_ms)`` with frames shaped (frame, row, col)."""
    raw = _read_bytes(path)
    hsize = len(FRAME_MAGIC) + struct.calcsize("<IIIdd")
    if len(raw) < hsize or not raw.startswith(FRAME_MAGIC):
        raise FileFormatError(f"{path}: not a frame-sequence file")
    w, h, n, pitch, period = struct.unpack("<IIIdd", raw[len(FRAME_MAGIC):hsize])
    body = raw[hsize:]
    if len(body) != 4 * w * h * n:
        raise FileFormatError(f"{path}: expected {n} frames of {h}x{w}, got {len(body)} bytes")
    frames = np.frombuffer(body, "<f4").reshape(n, h, w).astype(float)
    return frames, pitch, period


# -- trajectories -----------------------------------------------------------


def write_trajectory_csv(path: PathLike, times, states) -> Path:
    """Long format ``time,cell,value`` with 0-based cell indices."""
    t = np.asarray(times, float)
    x = np.asarray(states, float)
    buf = io.StringIO()
    buf.write("time,cell,value\n")
    for i, ti in enumerate(t):
        for c, v in enumerate(x[i]):
            buf.write(f"{_fmt(ti)},{c},{_fmt(v)}\n")
    return atomic_write(path, buf.getvalue())


def write_trajectory_binary(path: PathLike, times, states) -> Path:
    """Magic, uint64 sample and cell counts, then float64 times and the (samples, cells) matrix."""
    t = np.asarray(times, "<f8")
    x = np.asarray(states, "<f8")
    head = TRAJECTORY_MAGIC + struct.pack("<QQ", *x.shape)
    return atomic_write(path, head + t.tobytes() + np.ascontiguousarray(x).tobytes())


def read_trajectory_binary(path: PathLike):
    raw = _read_bytes(path)
    hsize = len(TRAJECTORY_MAGIC) + 16
    if len(raw) < hsize or not raw.startswith(TRAJECTORY_MAGIC):
        raise FileFormatError(f"{path}: not a trajectory file")
    n, m = struct.unpack("<QQ", raw[len(TRAJECTORY_MAGIC):hsize])
    if len(raw) != hsize + 8 * n * (m + 1):
        raise FileFormatError(f"{path}: truncated trajectory file")
    t = np.frombuffer(raw, "<f8", n, hsize).copy()
    x = np.frombuffer(raw, "<f8", n * m, hsize + 8 * n).reshape(n, m).copy()
    return t, x


# -- rasters ----------------------------------------------------------------


def write_raster(path: PathLike, raster: SpikeRaster) -> Path:
    """``# trials=..,neurons=..,bins=..,bin_ms=..`` then one ``trial,neuron,bin`` line per spike."""
    r, k, b = np.nonzero(raster.spikes)
    tr, nn, nb = raster.spikes.shape
    lines = [f"# trials={tr},neurons={nn},bins={nb},bin_ms={_fmt(raster.bin_ms)}", "trial,neuron,bin"]
    lines += [f"{a},{c},{d}" for a, c, d in zip(r, k, b)]
    return atomic_write(path, "\n".join(lines) + "\n")


def read_raster(path: PathLike) -> SpikeRaster:
    lines = _read_bytes(path).decode(errors="replace").splitlines()
    try:
        meta = dict(kv.split("=") for kv in lines[0].lstrip("# ").split(","))
        shape = (int(meta["trials"]), int(meta["neurons"]), int(meta["bins"]))
        spikes = np.zeros(shape, np.uint8)
        for ln in lines[2:]:
            if ln.strip():
                a, c, d = (int(v) for v in ln.split(","))
                spikes[a, c, d] = 1
        return SpikeRaster(spikes, float(meta["bin_ms"]))
    except (IndexError, KeyError, ValueError) as exc:
        raise FileFormatError(f"{path}: malformed raster ({exc})") from exc


# -- gIF network tables -----------------------------------------------------

NEURON_COLUMNS = ("capacitance", "g_leak", "e_leak", "threshold", "reset")
SYNAPSE_COLUMNS = ("post", "pre", "conductance", "reversal", "tau_syn_ms")


def read_gif_tables(neuron_path: PathLike, synapse_path: PathLike) -> dict:
    """Per-neuron and per-synapse CSV tables as keyword arguments for ``GifNetwork``.

    Neuron rows are in neuron order. Synapse rows give 0-based ``post`` and
    ``pre`` indices; absent synapses have zero conductance.
    """
    neurons = read_table_csv(neuron_path)
    missing = [c for c in NEURON_COLUMNS if c not in neurons]
    if missing:
        raise FileFormatError(f"{neuron_path}: missing columns {missing}")
    n = len(neurons["capacitance"])
    syn = read_table_csv(synapse_path)
    missing = [c for c in SYNAPSE_COLUMNS if c not in syn]
    if missing:
        raise FileFormatError(f"{synapse_path}: missing columns {missing}")
    G = np.zeros((n, n))
    E = np.zeros((n, n))
    tau = np.full((n, n), 10.0)
    for post, pre, g, e, ts in zip(*(syn[c] for c in SYNAPSE_COLUMNS)):
        k, j = int(post), int(pre)
        if not (0 <= k < n and 0 <= j < n) or k != post or j != pre:
            raise FileFormatError(f"{synapse_path}: synapse index ({post}, {pre}) out of range")
        G[k, j], E[k, j], tau[k, j] = g, e, ts
    out = {c: neurons[c] for c in NEURON_COLUMNS}
    out.update(conductance=G, reversal=E, tau_syn_ms=tau)
    return out
