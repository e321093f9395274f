"""File formats: run-length masks, JSON lines, 8-bit PGM dumps, CSV rows."""
from __future__ import annotations

import csv
import json
import re
from pathlib import Path
from typing import Iterable

import numpy as np

from gvground.errors import InvalidArgument


def mask_to_rle(mask) -> dict:
    """Row-major run lengths, alternating 0-runs and 1-runs, starting with zeros."""
    m = np.asarray(mask, dtype=bool)
    if m.ndim != 2:
        raise InvalidArgument(f"mask must be 2-D, got shape {m.shape}")
    flat = m.ravel().astype(np.int8)
    edges = np.flatnonzero(np.diff(flat)) + 1
    bounds = np.concatenate([[0], edges, [flat.size]])
    counts = np.diff(bounds).tolist()
    if flat.size and flat[0]:
        counts.insert(0, 0)
    return {"size": [int(m.shape[0]), int(m.shape[1])], "counts": [int(c) for c in counts]}


def rle_to_mask(rle: dict) -> np.ndarray:
    try:
        h, w = (int(v) for v in rle["size"])
        counts = [int(c) for c in rle["counts"]]
    except (KeyError, TypeError, ValueError) as exc:
        raise InvalidArgument(f"malformed RLE: {exc}") from exc
    if min(counts, default=0) < 0 or sum(counts) != h * w:
        raise InvalidArgument(f"RLE counts sum to {sum(counts)}, expected {h * w}")
    values = np.arange(len(counts)) % 2 == 1
    return np.repeat(values, counts).reshape(h, w)


def write_jsonl(path, rows: Iterable[dict]) -> None:
    with open(path, "w") as fh:
        for row in rows:
            fh.write(json.dumps(row, sort_keys=True) + "\n")


def read_jsonl(path) -> list[dict]:
    rows = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                rows.append(json.loads(line))
            except json.JSONDecodeError as exc:
                raise InvalidArgument(f"{path}:{lineno}: {exc}") from exc
    return rows


def write_pgm(path, values, lo: float | None = None, hi: float | None = None) -> None:
    """Binary 8-bit PGM, linearly rescaled from [lo, hi] (default: data range)."""
    a = np.asarray(values, dtype=np.float64)
    if a.ndim != 2:
        raise InvalidArgument(f"PGM needs a 2-D array, got shape {a.shape}")
    lo = float(a.min()) if lo is None else lo
    hi = float(a.max()) if hi is None else hi
    scale = (a - lo) / (hi - lo) if hi > lo else np.zeros_like(a)
    pixels = np.clip(np.rint(scale * 255.0), 0, 255).astype(np.uint8)
    header = f"P5\n{a.shape[1]} {a.shape[0]}\n255\n".encode("ascii")
    Path(path).write_bytes(header + pixels.tobytes())


_PGM_HEADER = re.compile(rb"P5\s+(\d+)\s+(\d+)\s+(\d+)\s")


def read_pgm(path) -> np.ndarray:
    data = Path(path).read_bytes()
    m = _PGM_HEADER.match(data)
    if not m:
        raise InvalidArgument(f"{path}: not a binary PGM")
    w, h, maxval = (int(g) for g in m.groups())
    if maxval != 255:
        raise InvalidArgument(f"{path}: only 8-bit PGM supported")
    pixels = data[m.end(): m.end() + w * h]
    if len(pixels) != w * h:
        raise InvalidArgument(f"{path}: truncated pixel data")
    return np.frombuffer(pixels, dtype=np.uint8).reshape(h, w)


def write_csv(path, rows: list[dict], fields: list[str] | None = None) -> None:
    fields = fields or (list(rows[0]) if rows else [])
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=fields)
        writer.writeheader()
        writer.writerows(rows)


def write_json(path, obj) -> None:
    Path(path).write_text(json.dumps(obj, indent=1, sort_keys=True) + "\n")


def read_json(path):
    try:
        return json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise InvalidArgument(f"{path}: {exc}") from exc
