"""Per-slice 2D detection in the three orthogonal views.

Detections come from pluggable sources: tight boxes derived from ground-truth
labels, a classical threshold + connected-component blob finder, or an
external JSON-lines file (the plug-in boundary for learned detectors).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import ndimage

from .boxes import Box2D, Box3D, View
from .errors import (
    InvariantViolationError,
    IoFailureError,
    ParseError,
    SliceOutOfRangeError,
)
from .ioutil import atomic_write_text
from .volume import IntensityVolume, LabelVolume

_STRUCT_8 = np.ones((3, 3), dtype=bool)

VIEW_ORDER = (View.XY, View.XZ, View.YZ)


@dataclass
class DetectionSet:
    """All 2D boxes for one volume, canonically ordered.

    Boxes are kept sorted by (view, slice, a_min, b_min, ...) so that every
    downstream stage sees a deterministic, input-order-independent sequence.
    """

    boxes: list[Box2D]
    dims: tuple[int, int, int] | None = None
    backend: str = "unknown"
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        self.boxes = sorted(self.boxes, key=Box2D.sort_key)
        if self.dims is not None:
            self.dims = tuple(int(d) for d in self.dims)  # type: ignore[assignment]
            for b in self.boxes:
                self._check_bounds(b)

    def _check_bounds(self, b: Box2D) -> None:
        assert self.dims is not None
        ai, bi = b.view.plane_axes
        if b.slice_index >= self.dims[b.view.normal_axis]:
            raise InvariantViolationError(f"slice out of extent: {b}")
        if b.a_min < 0 or b.b_min < 0 or b.a_max > self.dims[ai] or b.b_max > self.dims[bi]:
            raise InvariantViolationError(f"box outside volume {self.dims}: {b}")

    def __len__(self) -> int:
        return len(self.boxes)

    def by_view(self, view: View) -> list[Box2D]:
        return [b for b in self.boxes if b.view == view]

    def group_by_slice(self) -> dict[tuple[View, int], list[Box2D]]:
        groups: dict[tuple[View, int], list[Box2D]] = {}
        for b in self.boxes:
            groups.setdefault((b.view, b.slice_index), []).append(b)
        return groups


def slice_view(vol: IntensityVolume | LabelVolume, view: View, index: int) -> np.ndarray:
    """Extract the in-plane cross-section at ``index`` along the view normal.

    The returned 2D array is indexed by the view's canonical in-plane axes.
    """
    n = vol.dims[view.normal_axis]
    if not 0 <= index < n:
        raise SliceOutOfRangeError(f"{view.value} slice {index} outside [0, {n})")
    if view == View.XY:
        plane = vol.data[:, :, index]
    elif view == View.XZ:
        plane = vol.data[:, index, :]
    else:
        plane = vol.data[index, :, :]
    return np.ascontiguousarray(plane)


def otsu_threshold(values: np.ndarray, bins: int = 256) -> float:
    """Otsu's histogram threshold for values in [0, 1].

    Returns the upper edge of the background class; foreground is
    strictly above the returned value.
    """
    hist, edges = np.histogram(np.asarray(values, dtype=np.float64).ravel(),
                               bins=bins, range=(0.0, 1.0))
    total = hist.sum()
    if total == 0:
        return 1.0
    centers = 0.5 * (edges[:-1] + edges[1:])
    w0 = np.cumsum(hist)
    w1 = total - w0
    m = np.cumsum(hist * centers)
    mt = m[-1]
    valid = (w0 > 0) & (w1 > 0)
    if not valid.any():
        return 1.0  # constant image: no split exists
    mu0 = np.where(valid, m / np.maximum(w0, 1), 0.0)
    mu1 = np.where(valid, (mt - m) / np.maximum(w1, 1), 0.0)
    between = np.where(valid, w0 * w1 * (mu0 - mu1) ** 2, -1.0)
    # the maximum can plateau across an empty gap; split it in the middle
    peaks = np.flatnonzero(between == between.max())
    k = int(peaks[(len(peaks) - 1) // 2])
    return float(edges[k + 1])


def detect_blobs(image: np.ndarray, view: View, slice_index: int,
                 threshold: float | str = "otsu", min_area: int = 1) -> list[Box2D]:
    """Threshold + 8-connected components; one tight box per component.

    ``threshold`` is a fixed value in (0, 1) or "otsu". Component confidence
    is the mean intensity over its pixels. A constant image yields nothing.
    """
    img = np.asarray(image, dtype=np.float32)
    if threshold == "otsu":
        if img.max() == img.min():
            return []
        thr = otsu_threshold(img)
    else:
        thr = float(threshold)
        if not 0.0 < thr < 1.0:
            raise ValueError(f"threshold {thr} outside (0, 1)")
    fg = img > thr
    if not fg.any():
        return []
    labeled, n = ndimage.label(fg, structure=_STRUCT_8)
    boxes = []
    objects = ndimage.find_objects(labeled)
    areas = np.bincount(labeled.ravel(), minlength=n + 1)
    means = ndimage.mean(img, labels=labeled, index=np.arange(1, n + 1))
    for comp in range(1, n + 1):
        if areas[comp] < min_area:
            continue
        sl_a, sl_b = objects[comp - 1]
        conf = float(np.clip(means[comp - 1], 0.0, 1.0))
        boxes.append(Box2D(view, slice_index, sl_a.start, sl_a.stop,
                           sl_b.start, sl_b.stop, confidence=conf))
    return boxes


def blob_detections(vol: IntensityVolume, threshold: float | str = "otsu",
                    min_area: int = 1) -> DetectionSet:
    """Run the blob finder over every slice of every view."""
    boxes: list[Box2D] = []
    for view in VIEW_ORDER:
        for s in range(vol.dims[view.normal_axis]):
            boxes.extend(detect_blobs(slice_view(vol, view, s), view, s,
                                      threshold=threshold, min_area=min_area))
    return DetectionSet(boxes, dims=vol.dims, backend="blob",
                        provenance={"threshold": threshold, "min_area": min_area})


def _per_instance_coords(gt: LabelVolume):
    """Voxel coordinates grouped by instance id, one pass over the volume."""
    flat = gt.data.ravel(order="C")
    nz = np.flatnonzero(flat)
    ids = flat[nz]
    xs, ys, zs = np.unravel_index(nz, gt.dims)
    order = np.argsort(ids, kind="stable")
    ids, xs, ys, zs = ids[order], xs[order], ys[order], zs[order]
    uniq, starts = np.unique(ids, return_index=True)
    out = {}
    for i, uid in enumerate(uniq):
        lo = starts[i]
        hi = starts[i + 1] if i + 1 < len(starts) else len(ids)
        out[int(uid)] = (xs[lo:hi], ys[lo:hi], zs[lo:hi])
    return out


def oracle_boxes_2d(gt: LabelVolume) -> DetectionSet:
    """Tight per-slice boxes of every instance, confidence 1.0."""
    coords = _per_instance_coords(gt)
    boxes: list[Box2D] = []
    for view in VIEW_ORDER:
        ai, bi = view.plane_axes
        ni = view.normal_axis
        for uid in sorted(coords):
            xyz = coords[uid]
            normal, a, b = xyz[ni], xyz[ai], xyz[bi]
            order = np.argsort(normal, kind="stable")
            normal, a, b = normal[order], a[order], b[order]
            slice_ids, starts = np.unique(normal, return_index=True)
            a_lo = np.minimum.reduceat(a, starts)
            a_hi = np.maximum.reduceat(a, starts)
            b_lo = np.minimum.reduceat(b, starts)
            b_hi = np.maximum.reduceat(b, starts)
            for s, a0, a1, b0, b1 in zip(slice_ids, a_lo, a_hi, b_lo, b_hi):
                boxes.append(Box2D(view, int(s), int(a0), int(a1) + 1,
                                   int(b0), int(b1) + 1, confidence=1.0))
    return DetectionSet(boxes, dims=gt.dims, backend="oracle2d")


def oracle_boxes_3d(gt: LabelVolume) -> dict[int, Box3D]:
    """Tight 3D box per instance, keyed by instance id, score 1.0."""
    max_id = int(gt.data.max())
    if max_id == 0:
        return {}
    objects = ndimage.find_objects(gt.data, max_label=max_id)
    out: dict[int, Box3D] = {}
    for uid, slices in enumerate(objects, start=1):
        if slices is None:
            continue
        sx, sy, sz = slices
        out[uid] = Box3D(sx.start, sx.stop, sy.start, sy.stop,
                         sz.start, sz.stop, score=1.0)
    return out


# -- detections file format -----------------------------------------------------
#
# JSON Lines, one object per box:
# {"view": "xy"|"xz"|"yz", "slice": int, "min": [a, b], "max": [a, b],
#  "confidence": float}

def save_detections(dets: DetectionSet, path) -> None:
    lines = []
    for b in dets.boxes:
        lines.append(json.dumps({
            "view": b.view.value,
            "slice": b.slice_index,
            "min": [b.a_min, b.b_min],
            "max": [b.a_max, b.b_max],
            "confidence": b.confidence,
        }, sort_keys=True))
    atomic_write_text(path, "".join(line + "\n" for line in lines))


def load_detections(path, dims: tuple[int, int, int] | None = None) -> DetectionSet:
    """Parse a JSON-lines detections file, validating every box invariant."""
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise IoFailureError(str(exc)) from exc
    boxes = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ParseError(f"{path}:{lineno}: {exc}") from exc
        try:
            view = View(obj["view"])
            box = Box2D(view, int(obj["slice"]),
                        int(obj["min"][0]), int(obj["max"][0]),
                        int(obj["min"][1]), int(obj["max"][1]),
                        confidence=float(obj["confidence"]))
        except (KeyError, TypeError, IndexError) as exc:
            raise ParseError(f"{path}:{lineno}: {exc}") from exc
        except ValueError as exc:
            raise InvariantViolationError(f"{path}:{lineno}: {exc}") from exc
        boxes.append(box)
    try:
        return DetectionSet(boxes, dims=dims, backend="file",
                            provenance={"path": str(path)})
    except InvariantViolationError as exc:
        raise InvariantViolationError(f"{path}: {exc}") from exc
