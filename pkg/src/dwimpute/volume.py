"""Volumetric scalar fields and their on-disk format.

A volume is stored as two files: ``<name>.vol`` holds the voxels as raw
little-endian float32 in row-major order (z varies fastest), and
``<name>.vol.json`` is a small human-readable header::

    {"dims": [nx, ny, nz], "spacing_mm": [sx, sy, sz],
     "range_tag": "unit", "dtype": "float32", "endianness": "little",
     "order": "C", "schema_version": 1}
"""
from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

SCHEMA_VERSION = 1
RANGE_TAGS = ("raw", "unit")
_DTYPE = np.dtype("<f4")


class VolumeError(ValueError):
    """Base class for invalid volumes and volume files."""


class InvalidDimsError(VolumeError):
    pass


class SizeMismatchError(VolumeError):
    pass


class RangeError(VolumeError):
    pass


class VolumeNotFoundError(VolumeError, FileNotFoundError):
    pass


@dataclass
class Volume3D:
    """A 3D scalar field.

    ``voxels`` is always a C-ordered float32 array of shape ``dims``.
    Values of a ``unit`` tagged volume lie in [0, 1].
    """

    voxels: np.ndarray
    spacing_mm: tuple[float, float, float] = (1.0, 1.0, 1.0)
    range_tag: str = "raw"
    dims: tuple[int, int, int] = field(init=False)

    def __post_init__(self):
        arr = np.ascontiguousarray(self.voxels, dtype=np.float32)
        if arr.ndim != 3:
            raise InvalidDimsError(f"expected a 3D array, got shape {arr.shape}")
        if min(arr.shape) <= 0:
            raise InvalidDimsError(f"dims must be positive, got {arr.shape}")
        spacing = tuple(float(s) for s in self.spacing_mm)
        if len(spacing) != 3 or min(spacing) <= 0:
            raise InvalidDimsError(f"spacing must be 3 positive values, got {self.spacing_mm}")
        if self.range_tag not in RANGE_TAGS:
            raise ValueError(f"range_tag must be one of {RANGE_TAGS}")
        if self.range_tag == "unit" and arr.size and (arr.min() < 0 or arr.max() > 1):
            raise RangeError(
                f"unit-tagged volume has values in [{arr.min()}, {arr.max()}]"
            )
        self.voxels = arr
        self.spacing_mm = spacing
        self.dims = tuple(int(n) for n in arr.shape)

    @classmethod
    def zeros(cls, dims, spacing_mm=(1.0, 1.0, 1.0), range_tag="unit"):
        return cls(np.zeros(tuple(dims), np.float32), spacing_mm, range_tag)

    @property
    def size(self) -> int:
        return self.voxels.size

    def with_voxels(self, voxels, range_tag=None) -> "Volume3D":
        return Volume3D(voxels, self.spacing_mm, range_tag or self.range_tag)

    def __eq__(self, other):
        if not isinstance(other, Volume3D):
            return NotImplemented
        return (
            self.dims == other.dims
            and self.spacing_mm == other.spacing_mm
            and self.range_tag == other.range_tag
            and self.voxels.tobytes() == other.voxels.tobytes()
        )


def minmax_normalize(v: Volume3D) -> Volume3D:
    """Affinely map voxel values onto [0, 1].

    A constant volume maps to all zeros.
    """
    x = v.voxels.astype(np.float64)
    lo, hi = x.min(), x.max()
    if hi == lo:
        out = np.zeros_like(x)
    else:
        out = (x - lo) / (hi - lo)
    # float32 rounding can push a value a hair outside the interval
    out = np.clip(out.astype(np.float32), 0.0, 1.0)
    return Volume3D(out, v.spacing_mm, "unit")


def _header_path(path) -> Path:
    return Path(str(path) + ".json")


def write_volume(v: Volume3D, path) -> None:
    path = Path(path)
    header = {
        "dims": list(v.dims),
        "spacing_mm": list(v.spacing_mm),
        "range_tag": v.range_tag,
        "dtype": "float32",
        "endianness": "little",
        "order": "C",
        "schema_version": SCHEMA_VERSION,
    }
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(v.voxels.astype(_DTYPE, copy=False).tobytes(order="C"))
    os.replace(tmp, path)
    _header_path(path).write_text(json.dumps(header, indent=1) + "\n")


def read_volume(path) -> Volume3D:
    path = Path(path)
    hpath = _header_path(path)
    if not path.exists():
        raise VolumeNotFoundError(f"no volume payload at {path}")
    if not hpath.exists():
        raise VolumeNotFoundError(f"no volume header at {hpath}")
    header = json.loads(hpath.read_text())
    dims = tuple(int(d) for d in header["dims"])
    if len(dims) != 3 or min(dims) <= 0:
        raise InvalidDimsError(f"{hpath}: dims must be 3 positive integers, got {dims}")
    if header.get("dtype", "float32") != "float32" or header.get("endianness", "little") != "little":
        raise VolumeError(f"{hpath}: unsupported dtype/endianness")
    payload = path.read_bytes()
    expected = int(np.prod(dims)) * _DTYPE.itemsize
    if len(payload) != expected:
        raise SizeMismatchError(
            f"{path}: header declares {int(np.prod(dims))} voxels "
            f"({expected} bytes), payload has {len(payload)} bytes"
        )
    voxels = np.frombuffer(payload, dtype=_DTYPE).reshape(dims).astype(np.float32)
    return Volume3D(voxels, tuple(header["spacing_mm"]), header["range_tag"])
