"""Per-box segmentation: crop, pad to cube, resize to 48^3, segment the
primary cell, restore, and assemble everything with a per-voxel argmax.

There is deliberately no watershed or morphological post-processing
anywhere in this module; overlaps between restored box masks are resolved
purely by the argmax over per-box foreground probabilities.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import ndimage

from .boxes import Box3D
from .errors import (
    BoxOutsideVolumeError,
    HeaderMalformedError,
    InvariantViolationError,
    MissingMaskFileError,
    PayloadSizeMismatchError,
)
from .volume import IntensityVolume, LabelVolume, SoftMask

log = logging.getLogger(__name__)

CUBE_SIDE = 48

_STRUCT_26 = np.ones((3, 3, 3), dtype=bool)


@dataclass
class BoxPipelineRecord:
    """Everything needed to place one box's segmentation back into the volume."""

    index: int
    source_box: Box3D
    clipped_box: Box3D | None
    crop_dims: tuple[int, int, int] | None
    padded_side: int | None
    pad_offsets: tuple[int, int, int] | None
    backend: str
    mask48: np.ndarray | None = None
    restored: np.ndarray | None = None
    empty_foreground: bool = False


def crop_box(vol: IntensityVolume | LabelVolume, box: Box3D) -> np.ndarray:
    """Copy the subvolume under the box, clipped to the volume bounds."""
    b = box.clip_to(vol.dims)
    return np.ascontiguousarray(
        vol.data[b.x_min:b.x_max, b.y_min:b.y_max, b.z_min:b.z_max])


def pad_to_cube(sub: np.ndarray) -> tuple[np.ndarray, tuple[int, int, int]]:
    """Zero-pad to a cube whose side is the largest dim.

    Content is centered; for an odd difference the extra voxel goes to the
    high side. Returns the cube and the low-side offsets per axis.
    """
    if sub.size == 0:
        raise ValueError("empty subvolume")
    side = max(sub.shape)
    lows = tuple((side - d) // 2 for d in sub.shape)
    pad = [(lo, side - d - lo) for lo, d in zip(lows, sub.shape)]
    return np.pad(sub, pad, mode="constant"), lows  # type: ignore[return-value]


def _axis_coords(n_in: int, n_out: int) -> np.ndarray:
    # half-voxel-centered sampling: output voxel centers mapped into input space
    return (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5


def resize_cube(cube: np.ndarray, target_side: int = CUBE_SIDE,
                mode: str = "trilinear") -> np.ndarray:
    """Separable resample to ``target_side``^3 with clamp-to-edge sampling.

    ``trilinear`` for intensities and soft masks, ``nearest`` for labels.
    Identity when the size already matches.
    """
    if mode not in ("trilinear", "nearest"):
        raise ValueError(f"unknown resize mode {mode!r}")
    out = cube.astype(np.float32) if mode == "trilinear" else cube
    for ax in range(3):
        n_in = out.shape[ax]
        if n_in == target_side:
            continue
        c = _axis_coords(n_in, target_side)
        if mode == "nearest":
            idx = np.clip(np.round(c), 0, n_in - 1).astype(np.int64)
            out = np.take(out, idx, axis=ax)
        else:
            c = np.clip(c, 0.0, n_in - 1.0)
            i0 = np.floor(c).astype(np.int64)
            i1 = np.minimum(i0 + 1, n_in - 1)
            t = (c - i0).astype(np.float32)
            shape = [1, 1, 1]
            shape[ax] = target_side
            t = t.reshape(shape)
            out = np.take(out, i0, axis=ax) * (1.0 - t) + np.take(out, i1, axis=ax) * t
    return out


# -- segmentation backends -------------------------------------------------------

class OracleSegBackend:
    """Perfect per-box mask derived from ground-truth labels.

    The primary cell is the instance with the largest voxel overlap with the
    clipped box; its binary mask is pushed through the same pad/resize chain
    (nearest mode).
    """

    tag = "oracle"

    def __init__(self, gt: LabelVolume):
        self.gt = gt

    def segment(self, cube48: np.ndarray, record: BoxPipelineRecord) -> np.ndarray:
        box = record.clipped_box
        assert box is not None
        region = self.gt.data[box.x_min:box.x_max, box.y_min:box.y_max,
                              box.z_min:box.z_max]
        counts = np.bincount(region.ravel())
        counts[0] = 0
        if counts.max(initial=0) == 0:
            record.empty_foreground = True
            return np.zeros((CUBE_SIDE,) * 3, dtype=np.float32)
        primary = int(np.argmax(counts))  # ties resolve to the lower id
        sub = (region == primary).astype(np.float32)
        cube, _ = pad_to_cube(sub)
        return resize_cube(cube, CUBE_SIDE, mode="nearest").astype(np.float32)


class ClassicalSegBackend:
    """Otsu threshold + 26-connected components + centrality prior.

    The primary component is the one with maximal overlap with the central
    core of the cube (falling back to the largest component when none
    touches the core).
    """

    tag = "classical"

    def __init__(self, threshold: float | str = "otsu", core_side: int = 16):
        self.threshold = threshold
        self.core_side = core_side

    def segment(self, cube48: np.ndarray, record: BoxPipelineRecord) -> np.ndarray:
        from .detect import otsu_threshold

        if self.threshold == "otsu":
            if cube48.max() == cube48.min():
                record.empty_foreground = True
                return np.zeros((CUBE_SIDE,) * 3, dtype=np.float32)
            thr = otsu_threshold(cube48)
        else:
            thr = float(self.threshold)
        fg = cube48 > thr
        if not fg.any():
            record.empty_foreground = True
            return np.zeros((CUBE_SIDE,) * 3, dtype=np.float32)
        labeled, n = ndimage.label(fg, structure=_STRUCT_26)
        lo = (CUBE_SIDE - self.core_side) // 2
        hi = lo + self.core_side
        core = labeled[lo:hi, lo:hi, lo:hi]
        core_counts = np.bincount(core.ravel(), minlength=n + 1)
        core_counts[0] = 0
        if core_counts.max(initial=0) > 0:
            primary = int(np.argmax(core_counts))
        else:
            sizes = np.bincount(labeled.ravel(), minlength=n + 1)
            sizes[0] = 0
            primary = int(np.argmax(sizes))
        return (labeled == primary).astype(np.float32)


class ExternalSegBackend:
    """Masks produced by an external model, one f32 48^3 file per box index.

    Directory layout: ``index.json`` ({"side": 48, "count": N}) plus
    ``box_<index>.raw`` little-endian float32 payloads in x-fastest order.
    """

    tag = "external"

    def __init__(self, mask_dir):
        self.mask_dir = Path(mask_dir)
        index_path = self.mask_dir / "index.json"
        if not index_path.exists():
            raise MissingMaskFileError(f"missing {index_path}")
        try:
            meta = json.loads(index_path.read_text())
        except json.JSONDecodeError as exc:
            raise HeaderMalformedError(f"{index_path}: {exc}") from exc
        if meta.get("side") != CUBE_SIDE:
            raise HeaderMalformedError(
                f"{index_path}: side {meta.get('side')!r} != {CUBE_SIDE}")
        self.count = int(meta.get("count", 0))

    def segment(self, cube48: np.ndarray, record: BoxPipelineRecord) -> np.ndarray:
        path = self.mask_dir / f"box_{record.index}.raw"
        if not path.exists():
            raise MissingMaskFileError(str(path))
        raw = path.read_bytes()
        expected = CUBE_SIDE ** 3 * 4
        if len(raw) != expected:
            raise PayloadSizeMismatchError(
                f"{path}: {len(raw)} bytes, expected {expected}")
        mask = np.frombuffer(raw, dtype="<f4").reshape((CUBE_SIDE,) * 3, order="F")
        if float(mask.min()) < 0.0 or float(mask.max()) > 1.0:
            raise InvariantViolationError(f"{path}: probabilities outside [0, 1]")
        return np.ascontiguousarray(mask)


def save_external_masks(masks: list[np.ndarray], mask_dir) -> None:
    """Write masks in the external-backend directory layout."""
    out = Path(mask_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "index.json").write_text(
        json.dumps({"side": CUBE_SIDE, "count": len(masks)}, sort_keys=True) + "\n")
    for i, m in enumerate(masks):
        if m.shape != (CUBE_SIDE,) * 3:
            raise ValueError(f"mask {i} has shape {m.shape}")
        (out / f"box_{i}.raw").write_bytes(
            m.astype("<f4").tobytes(order="F"))


def segment_primary(cube48: np.ndarray, backend, record: BoxPipelineRecord) -> np.ndarray:
    """Run the backend on one 48^3 cube, returning its soft mask."""
    if cube48.shape != (CUBE_SIDE,) * 3:
        raise ValueError(f"expected {(CUBE_SIDE,) * 3} cube, got {cube48.shape}")
    mask = backend.segment(cube48, record)
    if mask.shape != (CUBE_SIDE,) * 3:
        raise ValueError(f"backend returned shape {mask.shape}")
    return SoftMask(np.clip(mask.astype(np.float32), 0.0, 1.0)).data


def restore_mask(mask48: np.ndarray, record: BoxPipelineRecord) -> np.ndarray:
    """Invert the forward resize + pad: back to the clipped crop dims."""
    assert record.padded_side is not None and record.crop_dims is not None
    assert record.pad_offsets is not None
    cube = resize_cube(mask48, record.padded_side, mode="trilinear")
    (ox, oy, oz), (dx, dy, dz) = record.pad_offsets, record.crop_dims
    return np.ascontiguousarray(cube[ox:ox + dx, oy:oy + dy, oz:oz + dz])


def assemble(records: list[BoxPipelineRecord], dims: tuple[int, int, int],
             threshold: float = 0.5) -> LabelVolume:
    """Per-voxel argmax over a background channel plus one channel per box.

    The background channel scores ``threshold`` everywhere; each box channel
    scores its restored probability inside its clipped box and 0 outside.
    A box claims a voxel when its probability is at least the current best;
    between boxes, priority is (higher box score, smaller box volume, lower
    box index). Output ids are ``index + 1``.
    """
    best = np.full(dims, threshold, dtype=np.float32)
    label = np.zeros(dims, dtype=np.int32)
    order = sorted(
        (r for r in records if r.restored is not None and r.clipped_box is not None),
        key=lambda r: (-r.source_box.score, r.clipped_box.volume, r.index))
    for rec in order:
        b = rec.clipped_box
        region = (slice(b.x_min, b.x_max), slice(b.y_min, b.y_max),
                  slice(b.z_min, b.z_max))
        prob = rec.restored
        cur_best = best[region]
        cur_label = label[region]
        # a box beats the background on equality but never an earlier
        # (higher-priority) box; label 0 implies cur_best == threshold
        take = (prob > cur_best) | ((prob == cur_best) & (cur_label == 0)
                                    & (prob > 0.0))
        cur_best[take] = prob[take]
        cur_label[take] = rec.index + 1
    return LabelVolume(label)


def segment_volume(vol: IntensityVolume, boxes: list[Box3D], backend,
                   threshold: float = 0.5) -> tuple[LabelVolume, list[BoxPipelineRecord]]:
    """Crop/pad/resize/segment/restore every box, then assemble.

    Per-box failures produce empty masks and never abort the volume.
    """
    records: list[BoxPipelineRecord] = []
    for i, box in enumerate(boxes):
        rec = BoxPipelineRecord(index=i, source_box=box, clipped_box=None,
                                crop_dims=None, padded_side=None,
                                pad_offsets=None, backend=backend.tag)
        try:
            clipped = box.clip_to(vol.dims)
            rec.clipped_box = clipped
            sub = crop_box(vol, clipped)
            rec.crop_dims = sub.shape
            cube, offsets = pad_to_cube(sub)
            rec.padded_side = cube.shape[0]
            rec.pad_offsets = offsets
            cube48 = resize_cube(cube, CUBE_SIDE, mode="trilinear")
            rec.mask48 = segment_primary(cube48, backend, rec)
            rec.restored = restore_mask(rec.mask48, rec)
        except BoxOutsideVolumeError:
            log.warning("box %d lies outside the volume; skipped", i)
        except (MissingMaskFileError, PayloadSizeMismatchError,
                InvariantViolationError, HeaderMalformedError) as exc:
            log.warning("box %d failed: %s", i, exc)
            rec.mask48 = None
            rec.restored = None
        records.append(rec)
    return assemble(records, vol.dims, threshold=threshold), records
