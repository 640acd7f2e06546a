"""Reading and writing volumes in the VVOL container format.

A VVOL dataset is a pair of files: ``NAME.vvol`` holds a small JSON header

    {"dims": [nx, ny, nz], "spacing": [sx, sy, sz],
     "channels": C, "dtype": "f32", "data": "NAME.raw"}

and ``NAME.raw`` holds the payload as little-endian 32-bit floats.  The
payload is laid out with the channel index innermost (interleaved per voxel),
then x varying fastest among the spatial axes:

    offset(x, y, z, c) = (((z * ny + y) * nx + x) * C + c) * 4 bytes

Scalar volumes use ``channels = 1``, vector fields ``channels = 3``.
Writing quantizes to float32; a float32 round trip is bit-exact.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .grid import Geometry, ScalarVolume, VectorField

__all__ = ["write_vvol", "read_vvol", "read_scalar_vvol", "read_vector_vvol"]

_HEADER_KEYS = {"dims", "spacing", "channels", "dtype", "data"}


def _header_path(path) -> Path:
    p = Path(path)
    if p.suffix != ".vvol":
        p = p.with_suffix(p.suffix + ".vvol") if p.suffix else p.with_suffix(".vvol")
    return p


def write_vvol(path, volume: ScalarVolume | VectorField) -> Path:
    """Write a scalar volume or vector field; returns the header path.

    The payload file sits next to the header with a ``.raw`` suffix.
    """
    header_path = _header_path(path)
    raw_path = header_path.with_suffix(".raw")
    if isinstance(volume, ScalarVolume):
        arr = volume.values[..., np.newaxis]
    elif isinstance(volume, VectorField):
        arr = volume.vectors
    else:
        raise TypeError(f"expected ScalarVolume or VectorField, got {type(volume).__name__}")
    channels = arr.shape[-1]
    # in-memory (nx, ny, nz, C)  ->  disk (z, y, x, C), x fastest spatially
    disk = np.ascontiguousarray(arr.transpose(2, 1, 0, 3)).astype("<f4")
    header = {
        "dims": list(volume.geometry.dims),
        "spacing": list(volume.geometry.spacing),
        "channels": channels,
        "dtype": "f32",
        "data": raw_path.name,
    }
    header_path.parent.mkdir(parents=True, exist_ok=True)
    header_path.write_text(json.dumps(header, indent=2) + "\n")
    raw_path.write_bytes(disk.tobytes())
    return header_path


def read_vvol(path) -> ScalarVolume | VectorField:
    """Read a VVOL dataset; returns a ScalarVolume (1 channel) or VectorField (3)."""
    header_path = Path(path)
    try:
        header = json.loads(header_path.read_text())
    except json.JSONDecodeError as exc:
        raise ValueError(f"{header_path}: invalid JSON header: {exc}") from exc
    if not isinstance(header, dict) or set(header) != _HEADER_KEYS:
        raise ValueError(f"{header_path}: header must contain exactly the keys {sorted(_HEADER_KEYS)}")
    if header["dtype"] != "f32":
        raise ValueError(f"{header_path}: unsupported dtype {header['dtype']!r} (only 'f32')")
    dims = tuple(int(d) for d in header["dims"])
    spacing = tuple(float(s) for s in header["spacing"])
    channels = int(header["channels"])
    if channels not in (1, 3):
        raise ValueError(f"{header_path}: channels must be 1 or 3, got {channels}")
    geometry = Geometry(dims, spacing)

    raw_path = header_path.parent / header["data"]
    payload = raw_path.read_bytes()
    expected = geometry.n_voxels * channels * 4
    if len(payload) != expected:
        raise ValueError(f"{raw_path}: payload is {len(payload)} bytes, expected {expected}")
    nx, ny, nz = dims
    disk = np.frombuffer(payload, dtype="<f4").reshape(nz, ny, nx, channels)
    arr = disk.transpose(2, 1, 0, 3).astype(np.float32)
    if channels == 1:
        return ScalarVolume(geometry, arr[..., 0])
    return VectorField(geometry, arr)


def read_scalar_vvol(path) -> ScalarVolume:
    vol = read_vvol(path)
    if not isinstance(vol, ScalarVolume):
        raise ValueError(f"{path}: expected a 1-channel volume")
    return vol


def read_vector_vvol(path) -> VectorField:
    vol = read_vvol(path)
    if not isinstance(vol, VectorField):
        raise ValueError(f"{path}: expected a 3-channel field")
    return vol
