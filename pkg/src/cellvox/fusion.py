"""Fusing per-slice 2D detections from three orthogonal views into 3D boxes.

Stages: confidence filtering, per-slice 2D non-maximum suppression, 3D
proposal construction, overlap clustering, per-cluster median boxes, and a
final 3D non-maximum suppression.

Proposals can be built two ways (``FusionConfig.proposal_mode``):

* ``"stacked"`` (default): same-view boxes at adjacent slices that overlap
  in-plane are chained into tracks; each track yields one 3D box whose
  normal-axis extent is the slice range and whose in-plane extent is the
  union of its member boxes. Tracks from the three views then corroborate
  each other through clustering.
* ``"pairwise"``: every geometrically compatible pair of boxes from two
  different views yields one proposal directly; the doubly measured axis is
  joined by intersection (or union, see ``shared_axis_join``).

The stacked mode recovers tight boxes for rounded objects, where the
pairwise mode systematically shrinks them (most slices of a sphere see less
than its full extent, and the cluster median follows the typical slice).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .boxes import Box2D, Box3D, View, box2d_iou, box3d_iou
from .detect import VIEW_ORDER, DetectionSet
from .errors import ConfigError, EmptyClusterError


@dataclass(frozen=True)
class FusionConfig:
    confidence_min: float = 0.5
    nms2d_iou: float = 0.5
    cluster_overlap: float = 0.05
    nms3d_iou: float = 0.5
    overlap_measure: str = "iou"  # or "intersection_over_min"
    proposal_mode: str = "stacked"  # or "pairwise"
    shared_axis_join: str = "intersection"  # or "union" (pairwise mode)

    def __post_init__(self):
        for name in ("confidence_min", "nms2d_iou", "cluster_overlap", "nms3d_iou"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ConfigError(f"{name}={v} outside [0, 1]")
        if self.overlap_measure not in ("iou", "intersection_over_min"):
            raise ConfigError(f"unknown overlap_measure {self.overlap_measure!r}")
        if self.proposal_mode not in ("stacked", "pairwise"):
            raise ConfigError(f"unknown proposal_mode {self.proposal_mode!r}")
        if self.shared_axis_join not in ("intersection", "union"):
            raise ConfigError(f"unknown shared_axis_join {self.shared_axis_join!r}")


@dataclass
class ProposalCluster:
    """Single-linkage component of mutually overlapping proposals."""

    members: list[Box3D]
    representative: Box3D
    support: int


def filter_confidence(dets: DetectionSet, confidence_min: float) -> DetectionSet:
    """Keep boxes with confidence >= the threshold (strict rejection below)."""
    kept = [b for b in dets.boxes if b.confidence >= confidence_min]
    return DetectionSet(kept, dims=dets.dims, backend=dets.backend,
                        provenance=dets.provenance)


def nms_2d(dets: DetectionSet, nms2d_iou: float) -> DetectionSet:
    """Greedy per-(view, slice) suppression of boxes overlapping a kept box.

    Boxes are visited by descending confidence (ties: larger area, then
    lexicographic coordinates) and dropped when their in-plane IoU with any
    already kept box exceeds the threshold.
    """
    kept_all: list[Box2D] = []
    for _, group in dets.group_by_slice().items():
        order = sorted(group, key=lambda b: (-b.confidence, -b.area, b.a_min,
                                             b.b_min, b.a_max, b.b_max))
        kept: list[Box2D] = []
        for b in order:
            if all(box2d_iou(b, k) <= nms2d_iou for k in kept):
                kept.append(b)
        kept_all.extend(kept)
    return DetectionSet(kept_all, dims=dets.dims, backend=dets.backend,
                        provenance=dets.provenance)


# -- proposal construction ------------------------------------------------------

def _box_arrays(boxes: list[Box2D]):
    coords = np.array([(b.a_min, b.a_max, b.b_min, b.b_max, b.slice_index)
                       for b in boxes], dtype=np.int64).reshape(-1, 5)
    confs = np.array([b.confidence for b in boxes], dtype=np.float64)
    return coords, confs


def _shared_positions(v1: View, v2: View) -> tuple[int, int, int]:
    """Return (shared axis, position of it in v1's plane, position in v2's)."""
    common = set(v1.plane_axes) & set(v2.plane_axes)
    axis = common.pop()
    return axis, v1.plane_axes.index(axis), v2.plane_axes.index(axis)


def pair_proposals(dets: DetectionSet, shared_axis_join: str = "intersection") -> list[Box3D]:
    """One 3D proposal per compatible cross-view pair of 2D boxes.

    Two boxes are compatible when their intervals on the shared in-plane
    axis overlap and each box's slice position lies inside the other box's
    interval on that axis. The doubly measured axis is joined; each singly
    measured axis is taken from the view that measures it; the proposal
    score is the smaller of the two confidences.
    """
    proposals: list[Box3D] = []
    by_view = {v: dets.by_view(v) for v in VIEW_ORDER}
    for i, v1 in enumerate(VIEW_ORDER):
        for v2 in VIEW_ORDER[i + 1:]:
            b1, b2 = by_view[v1], by_view[v2]
            if not b1 or not b2:
                continue
            c1, f1 = _box_arrays(b1)
            c2, f2 = _box_arrays(b2)
            axis, p1, p2 = _shared_positions(v1, v2)
            q1 = 1 - p1  # position of v1's singly measured interval
            q2 = 1 - p2
            s1_lo, s1_hi = c1[:, 2 * p1], c1[:, 2 * p1 + 1]
            o1_lo, o1_hi = c1[:, 2 * q1], c1[:, 2 * q1 + 1]
            s2_lo, s2_hi = c2[:, 2 * p2], c2[:, 2 * p2 + 1]
            o2_lo, o2_hi = c2[:, 2 * q2], c2[:, 2 * q2 + 1]
            sl1, sl2 = c1[:, 4], c2[:, 4]

            lo = np.maximum(s1_lo[:, None], s2_lo[None, :])
            hi = np.minimum(s1_hi[:, None], s2_hi[None, :])
            compat = (lo < hi)
            compat &= (sl2[None, :] >= o1_lo[:, None]) & (sl2[None, :] < o1_hi[:, None])
            compat &= (sl1[:, None] >= o2_lo[None, :]) & (sl1[:, None] < o2_hi[None, :])
            ii, jj = np.nonzero(compat)
            if len(ii) == 0:
                continue
            if shared_axis_join == "union":
                shared_lo = np.minimum(s1_lo[ii], s2_lo[jj])
                shared_hi = np.maximum(s1_hi[ii], s2_hi[jj])
            else:
                shared_lo, shared_hi = lo[ii, jj], hi[ii, jj]
            scores = np.minimum(f1[ii], f2[jj])

            # v1's singly measured axis and v2's singly measured axis
            axis_q1 = v1.plane_axes[q1]
            axis_q2 = v2.plane_axes[q2]
            bounds = np.empty((len(ii), 6), dtype=np.int64)
            bounds[:, 2 * axis:2 * axis + 2] = np.stack([shared_lo, shared_hi], axis=1)
            bounds[:, 2 * axis_q1:2 * axis_q1 + 2] = np.stack(
                [o1_lo[ii], o1_hi[ii]], axis=1)
            bounds[:, 2 * axis_q2:2 * axis_q2 + 2] = np.stack(
                [o2_lo[jj], o2_hi[jj]], axis=1)
            for row, s in zip(bounds, scores):
                proposals.append(Box3D(int(row[0]), int(row[1]), int(row[2]),
                                       int(row[3]), int(row[4]), int(row[5]),
                                       score=float(s)))
    proposals.sort(key=Box3D.sort_key)
    return proposals


def stack_tracks(dets: DetectionSet) -> list[Box3D]:
    """Chain same-view boxes across adjacent slices into 3D track boxes.

    Boxes at slices s and s+1 of one view are linked when their rectangles
    overlap (strictly positive intersection area). Each connected component
    becomes a box: union of in-plane extents, slice range on the normal
    axis, score = mean member confidence.
    """
    proposals: list[Box3D] = []
    for view in VIEW_ORDER:
        boxes = dets.by_view(view)
        if not boxes:
            continue
        parent = list(range(len(boxes)))

        def find(i: int) -> int:
            while parent[i] != i:
                parent[i] = parent[parent[i]]
                i = parent[i]
            return i

        by_slice: dict[int, list[int]] = {}
        for idx, b in enumerate(boxes):
            by_slice.setdefault(b.slice_index, []).append(idx)
        for s, idxs in by_slice.items():
            nxt = by_slice.get(s + 1)
            if not nxt:
                continue
            for i in idxs:
                bi = boxes[i]
                for j in nxt:
                    bj = boxes[j]
                    if (min(bi.a_max, bj.a_max) > max(bi.a_min, bj.a_min)
                            and min(bi.b_max, bj.b_max) > max(bi.b_min, bj.b_min)):
                        ri, rj = find(i), find(j)
                        if ri != rj:
                            parent[max(ri, rj)] = min(ri, rj)

        tracks: dict[int, list[int]] = {}
        for idx in range(len(boxes)):
            tracks.setdefault(find(idx), []).append(idx)

        ai, bi_axis = view.plane_axes
        normal = view.normal_axis
        for root in sorted(tracks):
            members = [boxes[i] for i in tracks[root]]
            bounds = [0, 0, 0, 0, 0, 0]
            bounds[2 * ai] = min(m.a_min for m in members)
            bounds[2 * ai + 1] = max(m.a_max for m in members)
            bounds[2 * bi_axis] = min(m.b_min for m in members)
            bounds[2 * bi_axis + 1] = max(m.b_max for m in members)
            bounds[2 * normal] = min(m.slice_index for m in members)
            bounds[2 * normal + 1] = max(m.slice_index for m in members) + 1
            score = float(np.mean([m.confidence for m in members]))
            proposals.append(Box3D(*bounds, score=min(1.0, score)))
    proposals.sort(key=Box3D.sort_key)
    return proposals


# -- clustering and reduction ----------------------------------------------------

def cluster_proposals(proposals: list[Box3D], cluster_overlap: float = 0.05,
                      overlap_measure: str = "iou") -> list[ProposalCluster]:
    """Single-linkage components of the overlap graph.

    Two proposals are connected when their overlap (under the configured
    measure) strictly exceeds ``cluster_overlap``. Every proposal lands in
    exactly one cluster; the representative is the componentwise lower
    median of the member coordinates.
    """
    n = len(proposals)
    if n == 0:
        return []
    coords = np.array([p.bounds for p in proposals], dtype=np.int64)
    vols = ((coords[:, 1] - coords[:, 0]) * (coords[:, 3] - coords[:, 2])
            * (coords[:, 5] - coords[:, 4])).astype(np.float64)

    parent = np.arange(n)

    def find(i: int) -> int:
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return int(i)

    # cap the pairwise work matrices at ~16M entries per block
    block = max(16, min(1024, (1 << 24) // n))
    for start in range(0, n, block):
        stop = min(start + block, n)
        rows = np.arange(start, stop)
        ix = np.minimum(coords[rows, None, 1], coords[None, :, 1]) - \
            np.maximum(coords[rows, None, 0], coords[None, :, 0])
        iy = np.minimum(coords[rows, None, 3], coords[None, :, 3]) - \
            np.maximum(coords[rows, None, 2], coords[None, :, 2])
        iz = np.minimum(coords[rows, None, 5], coords[None, :, 5]) - \
            np.maximum(coords[rows, None, 4], coords[None, :, 4])
        inter = (np.maximum(ix, 0) * np.maximum(iy, 0)
                 * np.maximum(iz, 0)).astype(np.float64)
        if overlap_measure == "iou":
            denom = vols[rows, None] + vols[None, :] - inter
        else:
            denom = np.minimum(vols[rows, None], vols[None, :])
        ratio = inter / denom
        ii, jj = np.nonzero(ratio > cluster_overlap)
        for a, b in zip(ii, jj):
            gi, gj = int(rows[a]), int(b)
            if gj <= gi:
                continue
            ra, rb = find(gi), find(gj)
            if ra != rb:
                parent[max(ra, rb)] = min(ra, rb)

    groups: dict[int, list[int]] = {}
    for i in range(n):
        groups.setdefault(find(i), []).append(i)
    clusters = []
    for root in sorted(groups):
        members = [proposals[i] for i in groups[root]]
        rep = median_box_of(members)
        clusters.append(ProposalCluster(members=members, representative=rep,
                                        support=len(members)))
    return clusters


def median_box_of(members: list[Box3D], max_support: int | None = None) -> Box3D:
    """Componentwise lower-median box over the members.

    The lower median keeps coordinates on the integer grid for even member
    counts. The score is the member count normalized by ``max_support``
    (clamped into (0, 1]); with no context the score is 1.0.
    """
    if not members:
        raise EmptyClusterError("median box of an empty cluster")
    coords = np.array([m.bounds for m in members], dtype=np.int64)
    med = np.sort(coords, axis=0)[(len(members) - 1) // 2]
    if max_support is None or max_support <= 0:
        score = 1.0
    else:
        score = min(1.0, len(members) / max_support)
    return Box3D(int(med[0]), int(med[1]), int(med[2]), int(med[3]),
                 int(med[4]), int(med[5]), score=score)


def median_box(cluster: ProposalCluster, max_support: int | None = None) -> Box3D:
    return median_box_of(cluster.members, max_support=max_support)


def nms_3d(boxes: list[Box3D], nms3d_iou: float) -> list[Box3D]:
    """Greedy 3D suppression by descending score.

    Ties broken by larger volume, then lexicographic coordinates; a box is
    dropped when its IoU with an already kept box exceeds the threshold.
    """
    order = sorted(boxes, key=lambda b: (-b.score, -b.volume) + b.bounds)
    kept: list[Box3D] = []
    for b in order:
        if all(box3d_iou(b, k) <= nms3d_iou for k in kept):
            kept.append(b)
    return kept


def fuse(dets: DetectionSet, config: FusionConfig = FusionConfig()) -> list[Box3D]:
    """Run the full 2D-to-3D fusion chain over a detection set."""
    dets = filter_confidence(dets, config.confidence_min)
    dets = nms_2d(dets, config.nms2d_iou)
    if config.proposal_mode == "pairwise":
        proposals = pair_proposals(dets, shared_axis_join=config.shared_axis_join)
    else:
        proposals = stack_tracks(dets)
    if not proposals:
        return []
    clusters = cluster_proposals(proposals, config.cluster_overlap,
                                 config.overlap_measure)
    max_support = max(c.support for c in clusters)
    reps = [median_box(c, max_support=max_support) for c in clusters]
    return nms_3d(reps, config.nms3d_iou)
