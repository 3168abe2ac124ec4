"""Axis-aligned boxes in voxel units and their overlap geometry.

All coordinates are half-open integer intervals, so box volumes and
intersections are exact integer arithmetic and can be cross-checked by
voxel enumeration.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace
from enum import Enum
from pathlib import Path

from .errors import BoxOutsideVolumeError, IoFailureError, ParseError, ViewMismatchError
from .ioutil import atomic_write_text


class View(str, Enum):
    """One of the three orthogonal slicing directions.

    In-plane axes are always in canonical ascending order: XY -> (x, y),
    XZ -> (x, z), YZ -> (y, z).
    """

    XY = "xy"
    XZ = "xz"
    YZ = "yz"

    @property
    def normal_axis(self) -> int:
        return {View.XY: 2, View.XZ: 1, View.YZ: 0}[self]

    @property
    def plane_axes(self) -> tuple[int, int]:
        return {View.XY: (0, 1), View.XZ: (0, 2), View.YZ: (1, 2)}[self]


@dataclass(frozen=True)
class Box2D:
    """In-plane detection rectangle at one slice of one view.

    (a, b) are the view's two in-plane axes in canonical order.
    """

    view: View
    slice_index: int
    a_min: int
    a_max: int
    b_min: int
    b_max: int
    confidence: float = 1.0

    def __post_init__(self):
        if not (self.a_min < self.a_max and self.b_min < self.b_max):
            raise ValueError(f"degenerate 2D box {self}")
        if not 0.0 <= self.confidence <= 1.0:
            raise ValueError(f"confidence {self.confidence} outside [0, 1]")
        if self.slice_index < 0:
            raise ValueError(f"negative slice index {self.slice_index}")

    @property
    def area(self) -> int:
        return (self.a_max - self.a_min) * (self.b_max - self.b_min)

    def sort_key(self):
        return (self.view.value, self.slice_index, self.a_min, self.b_min,
                self.a_max, self.b_max, self.confidence)


@dataclass(frozen=True)
class Box3D:
    """Axis-aligned cuboid [x_min,x_max) x [y_min,y_max) x [z_min,z_max)."""

    x_min: int
    x_max: int
    y_min: int
    y_max: int
    z_min: int
    z_max: int
    score: float = 1.0

    def __post_init__(self):
        if not (self.x_min < self.x_max and self.y_min < self.y_max
                and self.z_min < self.z_max):
            raise ValueError(f"degenerate 3D box {self}")
        if not 0.0 <= self.score <= 1.0:
            raise ValueError(f"score {self.score} outside [0, 1]")

    @property
    def volume(self) -> int:
        return ((self.x_max - self.x_min) * (self.y_max - self.y_min)
                * (self.z_max - self.z_min))

    @property
    def bounds(self) -> tuple[int, int, int, int, int, int]:
        return (self.x_min, self.x_max, self.y_min, self.y_max,
                self.z_min, self.z_max)

    def clip_to(self, dims: tuple[int, int, int]) -> "Box3D":
        """Intersect with [0,nx) x [0,ny) x [0,nz); error if empty."""
        nx, ny, nz = dims
        x0, x1 = max(self.x_min, 0), min(self.x_max, nx)
        y0, y1 = max(self.y_min, 0), min(self.y_max, ny)
        z0, z1 = max(self.z_min, 0), min(self.z_max, nz)
        if x0 >= x1 or y0 >= y1 or z0 >= z1:
            raise BoxOutsideVolumeError(f"{self} does not intersect volume {dims}")
        return replace(self, x_min=x0, x_max=x1, y_min=y0, y_max=y1,
                       z_min=z0, z_max=z1)

    def sort_key(self):
        return self.bounds + (self.score,)


def box2d_iou(a: Box2D, b: Box2D) -> float:
    """In-plane rectangle IoU; the slice indices are ignored."""
    if a.view != b.view:
        raise ViewMismatchError(f"cannot overlap {a.view.value} with {b.view.value}")
    iw = min(a.a_max, b.a_max) - max(a.a_min, b.a_min)
    ih = min(a.b_max, b.b_max) - max(a.b_min, b.b_min)
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    return inter / (a.area + b.area - inter)


def box3d_intersection(a: Box3D, b: Box3D) -> int:
    """Voxel count of the cuboid intersection."""
    ix = min(a.x_max, b.x_max) - max(a.x_min, b.x_min)
    iy = min(a.y_max, b.y_max) - max(a.y_min, b.y_min)
    iz = min(a.z_max, b.z_max) - max(a.z_min, b.z_min)
    if ix <= 0 or iy <= 0 or iz <= 0:
        return 0
    return ix * iy * iz


def box3d_iou(a: Box3D, b: Box3D) -> float:
    inter = box3d_intersection(a, b)
    if inter == 0:
        return 0.0
    return inter / (a.volume + b.volume - inter)


def box3d_overlap(a: Box3D, b: Box3D, measure: str = "iou") -> float:
    """Overlap ratio under the configured measure.

    "iou" is intersection over union; "intersection_over_min" is
    intersection over the smaller box volume (containment-friendly).
    """
    inter = box3d_intersection(a, b)
    if inter == 0:
        return 0.0
    if measure == "iou":
        return inter / (a.volume + b.volume - inter)
    if measure == "intersection_over_min":
        return inter / min(a.volume, b.volume)
    raise ValueError(f"unknown overlap measure {measure!r}")


# -- 3D box file format -------------------------------------------------------
#
# JSON array of {"min": [x, y, z], "max": [x, y, z], "score": float}.

def save_boxes3d(boxes: list[Box3D], path) -> None:
    payload = [
        {"min": [b.x_min, b.y_min, b.z_min],
         "max": [b.x_max, b.y_max, b.z_max],
         "score": b.score}
        for b in boxes
    ]
    atomic_write_text(path, json.dumps(payload, indent=2, sort_keys=True) + "\n")


def load_boxes3d(path) -> list[Box3D]:
    try:
        raw = json.loads(Path(path).read_text())
    except OSError as exc:
        raise IoFailureError(str(exc)) from exc
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: {exc}") from exc
    if not isinstance(raw, list):
        raise ParseError(f"{path}: expected a JSON array of boxes")
    boxes = []
    for i, item in enumerate(raw):
        try:
            lo, hi = item["min"], item["max"]
            boxes.append(Box3D(int(lo[0]), int(hi[0]), int(lo[1]), int(hi[1]),
                               int(lo[2]), int(hi[2]),
                               score=float(item.get("score", 1.0))))
        except (KeyError, TypeError, IndexError, ValueError) as exc:
            raise ParseError(f"{path}: box {i}: {exc}") from exc
    return boxes
