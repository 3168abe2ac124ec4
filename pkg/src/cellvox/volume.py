"""Dense voxel volumes and their sidecar + raw file format.

In-memory arrays have shape (nx, ny, nz) and are indexed [x, y, z].
On disk a volume is a pair of files: ``<name>.json`` header and
``<name>.raw`` little-endian payload in x-fastest order.
Intensities are kept normalized to [0, 1] regardless of the stored dtype.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import (
    DimsMismatchError,
    EmptyOperandsError,
    HeaderMalformedError,
    InvariantViolationError,
    IoFailureError,
    PayloadSizeMismatchError,
    UnknownDtypeError,
)
from .ioutil import atomic_write_bytes, atomic_write_text

_DTYPES = {"u8": np.dtype("<u1"), "u16": np.dtype("<u2"), "f32": np.dtype("<f4")}
_DTYPE_MAX = {"u8": 255.0, "u16": 65535.0}
_HEADER_KEYS = {"dims", "dtype", "order", "kind"}


@dataclass
class IntensityVolume:
    """Scalar image volume with values in [0, 1] (float32 in memory)."""

    data: np.ndarray
    dtype_tag: str = "f32"
    spacing: tuple[float, float, float] = (1.0, 1.0, 1.0)

    def __post_init__(self):
        self.data = np.ascontiguousarray(self.data, dtype=np.float32)
        if self.data.ndim != 3 or min(self.data.shape) < 1:
            raise ValueError(f"expected a non-empty 3D array, got {self.data.shape}")
        if self.dtype_tag not in _DTYPES:
            raise UnknownDtypeError(self.dtype_tag)
        lo, hi = float(self.data.min()), float(self.data.max())
        if lo < 0.0 or hi > 1.0:
            raise InvariantViolationError(f"intensities in [{lo}, {hi}] not in [0, 1]")

    @property
    def dims(self) -> tuple[int, int, int]:
        return self.data.shape  # type: ignore[return-value]


@dataclass
class LabelVolume:
    """Instance-id volume; 0 is background, ids are positive integers."""

    data: np.ndarray
    spacing: tuple[float, float, float] = (1.0, 1.0, 1.0)

    def __post_init__(self):
        self.data = np.ascontiguousarray(self.data, dtype=np.int32)
        if self.data.ndim != 3 or min(self.data.shape) < 1:
            raise ValueError(f"expected a non-empty 3D array, got {self.data.shape}")
        if self.data.min() < 0:
            raise InvariantViolationError("negative instance id")

    @property
    def dims(self) -> tuple[int, int, int]:
        return self.data.shape  # type: ignore[return-value]

    def labels(self) -> np.ndarray:
        """Sorted array of instance ids present (excluding background)."""
        ids = np.unique(self.data)
        return ids[ids > 0]

    def mask(self, instance_id: int) -> np.ndarray:
        return self.data == instance_id

    def instance_sizes(self) -> dict[int, int]:
        counts = np.bincount(self.data.ravel())
        return {i: int(c) for i, c in enumerate(counts) if i > 0 and c > 0}


@dataclass
class SoftMask:
    """Per-voxel foreground probability in [0, 1]."""

    data: np.ndarray

    def __post_init__(self):
        self.data = np.ascontiguousarray(self.data, dtype=np.float32)
        if self.data.ndim != 3:
            raise ValueError(f"expected a 3D array, got {self.data.shape}")
        lo, hi = float(self.data.min()), float(self.data.max())
        if lo < 0.0 or hi > 1.0:
            raise InvariantViolationError(f"probabilities in [{lo}, {hi}] not in [0, 1]")

    @property
    def dims(self) -> tuple[int, int, int]:
        return self.data.shape  # type: ignore[return-value]


def mask_iou(a: np.ndarray, b: np.ndarray) -> float:
    """Exact voxel-set IoU between two boolean masks of equal dims."""
    a = np.asarray(a, dtype=bool)
    b = np.asarray(b, dtype=bool)
    if a.shape != b.shape:
        raise DimsMismatchError(f"{a.shape} vs {b.shape}")
    union = int(np.count_nonzero(a | b))
    if union == 0:
        raise EmptyOperandsError("both voxel sets are empty")
    inter = int(np.count_nonzero(a & b))
    return inter / union


# -- file IO -------------------------------------------------------------------

def _base_path(path) -> Path:
    p = Path(path)
    if p.suffix in (".json", ".raw"):
        p = p.with_suffix("")
    return p


def volume_write(vol: IntensityVolume | LabelVolume, path) -> None:
    """Write ``<path>.json`` + ``<path>.raw``; byte output is deterministic."""
    base = _base_path(path)
    if isinstance(vol, IntensityVolume):
        kind, tag = "intensity", vol.dtype_tag
        if tag == "f32":
            payload = vol.data.astype(_DTYPES[tag])
        else:
            payload = np.round(vol.data * _DTYPE_MAX[tag]).astype(_DTYPES[tag])
    elif isinstance(vol, LabelVolume):
        kind = "label"
        max_id = int(vol.data.max()) if vol.data.size else 0
        tag = "u8" if max_id <= 255 else "u16"
        if max_id > 65535:
            raise InvariantViolationError(f"instance id {max_id} exceeds u16 range")
        payload = vol.data.astype(_DTYPES[tag])
    else:
        raise TypeError(f"cannot write {type(vol).__name__}")
    header = {
        "dims": list(vol.dims),
        "dtype": tag,
        "order": "x-fastest",
        "kind": kind,
        "spacing": list(vol.spacing),
    }
    atomic_write_text(base.with_suffix(".json"),
                      json.dumps(header, sort_keys=True, indent=2) + "\n")
    atomic_write_bytes(base.with_suffix(".raw"), payload.tobytes(order="F"))


def volume_read(path) -> IntensityVolume | LabelVolume:
    """Read a sidecar + raw pair written by :func:`volume_write`."""
    base = _base_path(path)
    try:
        header_text = base.with_suffix(".json").read_text()
        raw = base.with_suffix(".raw").read_bytes()
    except OSError as exc:
        raise IoFailureError(str(exc)) from exc
    try:
        header = json.loads(header_text)
    except json.JSONDecodeError as exc:
        raise HeaderMalformedError(f"{base}.json: {exc}") from exc
    if not isinstance(header, dict):
        raise HeaderMalformedError(f"{base}.json: header is not an object")
    keys = set(header)
    if not _HEADER_KEYS <= keys:
        raise HeaderMalformedError(f"missing keys {_HEADER_KEYS - keys}")
    if keys - _HEADER_KEYS - {"spacing"}:
        raise HeaderMalformedError(f"unknown keys {keys - _HEADER_KEYS - {'spacing'}}")

    dims = header["dims"]
    if (not isinstance(dims, list) or len(dims) != 3
            or not all(isinstance(d, int) and d > 0 for d in dims)):
        raise HeaderMalformedError(f"bad dims {dims!r}")
    if header["order"] != "x-fastest":
        raise HeaderMalformedError(f"unsupported order {header['order']!r}")
    tag = header["dtype"]
    if tag not in _DTYPES:
        raise UnknownDtypeError(str(tag))
    kind = header["kind"]
    if kind not in ("intensity", "label"):
        raise HeaderMalformedError(f"unknown kind {kind!r}")
    if kind == "label" and tag == "f32":
        raise HeaderMalformedError("label volumes require an integer dtype")
    spacing = tuple(float(s) for s in header.get("spacing", (1.0, 1.0, 1.0)))
    if len(spacing) != 3:
        raise HeaderMalformedError(f"bad spacing {header['spacing']!r}")

    dtype = _DTYPES[tag]
    expected = dims[0] * dims[1] * dims[2] * dtype.itemsize
    if len(raw) != expected:
        raise PayloadSizeMismatchError(
            f"{base}.raw: {len(raw)} bytes, expected {expected}")
    arr = np.frombuffer(raw, dtype=dtype).reshape(dims, order="F")

    if kind == "label":
        return LabelVolume(arr.astype(np.int32), spacing=spacing)
    if tag == "f32":
        return IntensityVolume(arr, dtype_tag=tag, spacing=spacing)
    return IntensityVolume(arr.astype(np.float32) / _DTYPE_MAX[tag],
                           dtype_tag=tag, spacing=spacing)
