"""File formats: .vol volumes (JSON header + raw payload), PGM/PBM frames.

A ``name.vol`` file is a JSON header with fields shape, spacing, origin,
axes, dtype ("u8" or "f32") and data_file; the payload is a separate raw
little-endian binary in C order (axis 0 major), referenced relative to the
header's directory.
"""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .volume import Volume3, Image2

_DTYPES = {"u8": np.dtype("uint8"), "f32": np.dtype("<f4")}


def save_volume(vol: Volume3, path: str | Path) -> Path:
    """Write a volume as header + raw pair; float data is stored as f32."""
    path = Path(path)
    data = vol.data
    if np.issubdtype(data.dtype, np.integer):
        data = data.astype(np.uint8)
        dtype_tag = "u8"
    else:
        data = data.astype("<f4")
        dtype_tag = "f32"
    raw_name = path.stem + ".raw"
    header = {
        "shape": [int(n) for n in vol.shape],
        "spacing": [float(v) for v in vol.spacing],
        "origin": [float(v) for v in vol.origin],
        "axes": [[float(v) for v in row] for row in vol.axes],
        "dtype": dtype_tag,
        "data_file": raw_name,
    }
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(header, indent=1) + "\n")
    (path.parent / raw_name).write_bytes(np.ascontiguousarray(data).tobytes())
    return path


def load_volume(path: str | Path) -> Volume3:
    path = Path(path)
    header = json.loads(path.read_text())
    try:
        dtype = _DTYPES[header["dtype"]]
        shape = tuple(int(n) for n in header["shape"])
        raw = (path.parent / header["data_file"]).read_bytes()
    except KeyError as exc:
        raise ValueError(f"malformed volume header {path}: missing {exc}") from exc
    expected = int(np.prod(shape)) * dtype.itemsize
    if len(raw) != expected:
        raise ValueError(f"{path}: payload is {len(raw)} bytes, expected {expected}")
    data = np.frombuffer(raw, dtype=dtype).reshape(shape)
    return Volume3(data, header["spacing"], header["origin"], header["axes"])


def save_pgm(image: Image2, path: str | Path) -> Path:
    """Write a grayscale frame as binary PGM, scaling floats to 0..255."""
    path = Path(path)
    data = np.asarray(image.data)
    if np.issubdtype(data.dtype, np.floating):
        lo, hi = float(data.min()), float(data.max())
        scale = 255.0 / (hi - lo) if hi > lo else 0.0
        data = np.round((data - lo) * scale).astype(np.uint8)
    else:
        data = np.clip(data, 0, 255).astype(np.uint8)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(f"P5\n{data.shape[1]} {data.shape[0]}\n255\n".encode())
        fh.write(data.tobytes())
    return path


def save_pbm(mask: Image2, path: str | Path) -> Path:
    """Write a binary mask as PBM (P4, packed bits)."""
    path = Path(path)
    data = (np.asarray(mask.data) != 0).astype(np.uint8)
    packed = np.packbits(data, axis=1)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(f"P4\n{data.shape[1]} {data.shape[0]}\n".encode())
        fh.write(packed.tobytes())
    return path
