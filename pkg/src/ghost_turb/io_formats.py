"""File output and input helpers.

Images go out as 16-bit binary PGM with a plain-text sidecar recording
the affine scale, maps as CSV with full-precision floats, and run
records as stable JSON.  Object masks can be read back from 8-bit PGM.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np

from .correlator import PsfMetrics
from .errors import ValidationError
from .optics import Grid2D

FLOAT_FMT = "%.17g"


def write_pgm16(path, values: np.ndarray, lo: float | None = None,
                hi: float | None = None) -> tuple[float, float]:
    """Write a 2-D map as binary 16-bit PGM plus a .scale.txt sidecar.

    Values are mapped affinely so lo -> 0 and hi -> 65535 (defaults:
    data min and max).  Returns the (lo, hi) actually used; the sidecar
    stores them so the map can be reconstructed exactly to 16-bit
    resolution.
    """
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim != 2:
        raise ValidationError(f"expected a 2-D map, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValidationError("map contains non-finite values")
    vlo = float(np.min(arr)) if lo is None else float(lo)
    vhi = float(np.max(arr)) if hi is None else float(hi)
    if vhi > vlo:
        scaled = (arr - vlo) * (65535.0 / (vhi - vlo))
    else:
        scaled = np.zeros_like(arr)
    pixels = np.clip(np.rint(scaled), 0, 65535).astype(">u2")
    path = Path(path)
    with open(path, "wb") as fh:
        fh.write(f"P5\n{arr.shape[1]} {arr.shape[0]}\n65535\n".encode("ascii"))
        fh.write(pixels.tobytes())
    sidecar = path.with_suffix(path.suffix + ".scale.txt")
    with open(sidecar, "w", encoding="ascii") as fh:
        fh.write(f"lo {FLOAT_FMT % vlo}\nhi {FLOAT_FMT % vhi}\n")
    return vlo, vhi


def _pgm_tokens(raw: bytes):
    """Yield header tokens of a PGM file, skipping # comments."""
    i = 0
    n = len(raw)
    while i < n:
        c = raw[i:i + 1]
        if c.isspace():
            i += 1
        elif c == b"#":
            while i < n and raw[i:i + 1] not in (b"\n", b"\r"):
                i += 1
        else:
            j = i
            while j < n and not raw[j:j + 1].isspace() and raw[j:j + 1] != b"#":
                j += 1
            yield raw[i:j].decode("ascii"), j
            i = j


def read_pgm8(path) -> np.ndarray:
    """Read an 8-bit PGM (binary P5 or ASCII P2) as floats in [0, 1]."""
    raw = Path(path).read_bytes()
    tokens = _pgm_tokens(raw)
    try:
        magic, _ = next(tokens)
        width, _ = next(tokens)
        height, _ = next(tokens)
        maxval, end = next(tokens)
    except StopIteration:
        raise ValidationError(f"{path}: truncated PGM header") from None
    if magic not in ("P5", "P2"):
        raise ValidationError(f"{path}: not a PGM file (magic {magic!r})")
    w, h, mv = int(width), int(height), int(maxval)
    if w < 1 or h < 1:
        raise ValidationError(f"{path}: bad PGM dimensions {w}x{h}")
    if not 0 < mv <= 255:
        raise ValidationError(f"{path}: expected 8-bit PGM, maxval {mv}")
    if magic == "P5":
        payload = raw[end + 1:]
        if len(payload) < w * h:
            raise ValidationError(f"{path}: truncated PGM pixel data")
        data = np.frombuffer(payload, dtype=np.uint8, count=w * h)
    else:
        flat = [int(tok) for tok, _ in tokens]
        if len(flat) != w * h:
            raise ValidationError(f"{path}: expected {w * h} samples, got {len(flat)}")
        data = np.asarray(flat, dtype=np.uint8)
    return data.reshape(h, w).astype(np.float64) / mv


def write_map_csv(path, grid: Grid2D, values: np.ndarray,
                  value_name: str = "value") -> None:
    """Write one value per grid pixel as x_m,y_m,<value_name> rows."""
    arr = np.asarray(values, dtype=np.float64)
    if arr.shape != (grid.ny, grid.nx):
        raise ValidationError(f"values shape {arr.shape} does not match grid "
                              f"({grid.ny}, {grid.nx})")
    xs = grid.x()
    ys = grid.y()
    with open(path, "w", encoding="ascii", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["x_m", "y_m", value_name])
        for iy in range(grid.ny):
            for ix in range(grid.nx):
                writer.writerow([FLOAT_FMT % xs[ix], FLOAT_FMT % ys[iy],
                                 FLOAT_FMT % arr[iy, ix]])


def write_psf_csv(path, metrics: PsfMetrics | None, note: str = "") -> None:
    """Write peak metrics as metric,value rows; a status row comes first."""
    with open(path, "w", encoding="ascii", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["metric", "value"])
        if metrics is None:
            writer.writerow(["status", note or "no_detection"])
            return
        writer.writerow(["status", "ok"])
        writer.writerow(["peak_x_m", FLOAT_FMT % metrics.peak_x])
        writer.writerow(["peak_y_m", FLOAT_FMT % metrics.peak_y])
        writer.writerow(["peak_value", FLOAT_FMT % metrics.peak_value])
        writer.writerow(["baseline", FLOAT_FMT % metrics.baseline])
        writer.writerow(["fwhm_x_m", FLOAT_FMT % metrics.fwhm_x])
        writer.writerow(["fwhm_y_m", FLOAT_FMT % metrics.fwhm_y])
        writer.writerow(["second_moment_width_m", FLOAT_FMT % metrics.second_moment_width])
        if metrics.peak_stderr is not None:
            writer.writerow(["peak_stderr", FLOAT_FMT % metrics.peak_stderr])


def write_run_json(path, record: dict) -> None:
    """Write a run record as deterministic, human-diffable JSON."""
    with open(path, "w", encoding="ascii") as fh:
        json.dump(record, fh, indent=2, sort_keys=True)
        fh.write("\n")
