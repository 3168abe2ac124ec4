"""Instance matching and precision / recall / Jaccard curves over IoU
thresholds, with per-threshold averages over volumes and integrated means.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import DimsMismatchError, EmptyInputError
from .ioutil import atomic_write_text
from .volume import LabelVolume

DEFAULT_GRID = tuple(round(0.5 + 0.05 * k, 2) for k in range(10))  # 0.50 .. 0.95


@dataclass
class MatchResult:
    """Greedy one-to-one pairing of predicted and ground-truth instances.

    ``matches`` rows are (pred_id, gt_id, iou, intersection_voxels); every
    id appears at most once and zero-IoU pairs never match. Totals carry
    what the voxel-level counting mode needs.
    """

    matches: list[tuple[int, int, float, int]]
    unmatched_pred: list[int]
    unmatched_gt: list[int]
    n_pred: int
    n_gt: int
    pred_foreground: int
    gt_foreground: int

    @property
    def match_ious(self) -> np.ndarray:
        return np.array([m[2] for m in self.matches], dtype=np.float64)


def match_instances(pred: LabelVolume, gt: LabelVolume) -> MatchResult:
    """Match instances greedily by descending IoU (one-to-one).

    All pairwise IoUs come from a single joint-histogram pass. Ties are
    broken by lower gt id, then lower pred id.
    """
    if pred.dims != gt.dims:
        raise DimsMismatchError(f"{pred.dims} vs {gt.dims}")
    p = pred.data.ravel()
    g = gt.data.ravel()
    either = (p > 0) | (g > 0)
    p_nz, g_nz = p[either], g[either]

    pred_sizes = np.bincount(p_nz[p_nz > 0]) if (p_nz > 0).any() else np.zeros(1, int)
    gt_sizes = np.bincount(g_nz[g_nz > 0]) if (g_nz > 0).any() else np.zeros(1, int)
    pred_ids = np.flatnonzero(pred_sizes)
    gt_ids = np.flatnonzero(gt_sizes)

    both = (p_nz > 0) & (g_nz > 0)
    pb, gb = p_nz[both].astype(np.int64), g_nz[both].astype(np.int64)
    candidates: list[tuple[float, int, int, int]] = []
    if len(pb):
        key = pb * (int(g_nz.max()) + 1) + gb
        uniq, counts = np.unique(key, return_counts=True)
        for k, inter in zip(uniq, counts):
            pi = int(k // (int(g_nz.max()) + 1))
            gi = int(k % (int(g_nz.max()) + 1))
            union = int(pred_sizes[pi]) + int(gt_sizes[gi]) - int(inter)
            candidates.append((int(inter) / union, gi, pi, int(inter)))

    candidates.sort(key=lambda c: (-c[0], c[1], c[2]))
    matched_p: set[int] = set()
    matched_g: set[int] = set()
    matches: list[tuple[int, int, float, int]] = []
    for iou, gi, pi, inter in candidates:
        if iou <= 0.0 or pi in matched_p or gi in matched_g:
            continue
        matched_p.add(pi)
        matched_g.add(gi)
        matches.append((pi, gi, iou, inter))

    return MatchResult(
        matches=matches,
        unmatched_pred=[int(i) for i in pred_ids if i not in matched_p],
        unmatched_gt=[int(i) for i in gt_ids if i not in matched_g],
        n_pred=len(pred_ids),
        n_gt=len(gt_ids),
        pred_foreground=int(pred_sizes.sum()),
        gt_foreground=int(gt_sizes.sum()),
    )


def _ratio(num: float, den: float, both_empty: bool) -> float:
    if den == 0:
        return 1.0 if both_empty else 0.0
    return num / den


def prj_at(match: MatchResult, th: float, mode: str = "instance") -> tuple[float, float, float]:
    """Precision, recall, and Jaccard at one IoU threshold.

    Instance mode counts matched instances with IoU >= th as true
    positives. Voxel mode counts intersection voxels of those matches as
    true positives against total predicted / ground-truth foreground.
    0/0 ratios resolve to 1 when both sides are empty, else 0.
    """
    if not 0.0 <= th <= 1.0:
        raise ValueError(f"threshold {th} outside [0, 1]")
    both_empty = match.n_pred == 0 and match.n_gt == 0
    if mode == "instance":
        tp = sum(1 for _, _, iou, _ in match.matches if iou >= th)
        fp = match.n_pred - tp
        fn = match.n_gt - tp
    elif mode == "voxel":
        tp = sum(inter for _, _, iou, inter in match.matches if iou >= th)
        fp = match.pred_foreground - tp
        fn = match.gt_foreground - tp
        both_empty = match.pred_foreground == 0 and match.gt_foreground == 0
    else:
        raise ValueError(f"unknown counting mode {mode!r}")
    p = _ratio(tp, tp + fp, both_empty)
    r = _ratio(tp, tp + fn, both_empty)
    j = _ratio(tp, tp + fp + fn, both_empty)
    return p, r, j


@dataclass
class ScoreCurve:
    """Per-threshold P/R/J for each volume plus their unweighted averages."""

    grid: tuple[float, ...]
    per_volume: list[dict[str, list[float]]]
    ap: list[float]
    ar: list[float]
    aj: list[float]


def curves(matches: list[MatchResult], grid=DEFAULT_GRID,
           mode: str = "instance") -> ScoreCurve:
    """Average P/R/J over volumes at each grid threshold."""
    if not matches:
        raise EmptyInputError("no volumes to average")
    grid = tuple(float(t) for t in grid)
    if any(b <= a for a, b in zip(grid, grid[1:])):
        raise ValueError("grid must be strictly ascending")
    per_volume = []
    for m in matches:
        scores = [prj_at(m, th, mode=mode) for th in grid]
        per_volume.append({
            "P": [s[0] for s in scores],
            "R": [s[1] for s in scores],
            "J": [s[2] for s in scores],
        })
    n = len(matches)
    ap = [sum(v["P"][k] for v in per_volume) / n for k in range(len(grid))]
    ar = [sum(v["R"][k] for v in per_volume) / n for k in range(len(grid))]
    aj = [sum(v["J"][k] for v in per_volume) / n for k in range(len(grid))]
    return ScoreCurve(grid=grid, per_volume=per_volume, ap=ap, ar=ar, aj=aj)


def mean_scores(curve: ScoreCurve) -> tuple[float, float, float]:
    """Integrate the per-threshold averages over the grid (uniform mean)."""
    n = len(curve.grid)
    return (sum(curve.ap) / n, sum(curve.ar) / n, sum(curve.aj) / n)


@dataclass
class MetricsReport:
    """Score curve plus integrated means and the configuration echo."""

    curve: ScoreCurve
    map: float
    mar: float
    maj: float
    mode: str
    config: dict = field(default_factory=dict)

    @classmethod
    def from_matches(cls, matches: list[MatchResult], grid=DEFAULT_GRID,
                     mode: str = "instance", config: dict | None = None) -> "MetricsReport":
        curve = curves(matches, grid=grid, mode=mode)
        m_ap, m_ar, m_aj = mean_scores(curve)
        return cls(curve=curve, map=m_ap, mar=m_ar, maj=m_aj, mode=mode,
                   config=dict(config or {}))

    def to_dict(self) -> dict:
        return {
            "grid": list(self.curve.grid),
            "per_volume": self.curve.per_volume,
            "ap": self.curve.ap,
            "ar": self.curve.ar,
            "aj": self.curve.aj,
            "map": self.map,
            "mar": self.mar,
            "maj": self.maj,
            "mode": self.mode,
            "config": self.config,
        }


def save_report(report: MetricsReport, path) -> None:
    atomic_write_text(path, json.dumps(report.to_dict(), sort_keys=True, indent=2) + "\n")


def save_curve_csv(report: MetricsReport, path) -> None:
    """CSV of (threshold, AP, AR, AJ) rows for plotting."""
    lines = ["th,AP,AR,AJ"]
    for k, th in enumerate(report.curve.grid):
        lines.append(f"{th:.6g},{report.curve.ap[k]:.10g},"
                     f"{report.curve.ar[k]:.10g},{report.curve.aj[k]:.10g}")
    atomic_write_text(path, "\n".join(lines) + "\n")
