import itertools
import json

import numpy as np
import pytest

from cellvox import (
    DEFAULT_GRID,
    LabelVolume,
    MetricsReport,
    curves,
    match_instances,
    mean_scores,
    prj_at,
    save_curve_csv,
    save_report,
)
from cellvox.errors import DimsMismatchError, EmptyInputError
from cellvox.metrics import MatchResult, ScoreCurve


def brute_force_ious(pred: LabelVolume, gt: LabelVolume):
    """Independent triple-free IoU table via direct set counting."""
    table = {}
    for pid in pred.labels():
        pm = pred.data == pid
        for gid in gt.labels():
            gm = gt.data == gid
            inter = int(np.count_nonzero(pm & gm))
            if inter:
                union = int(np.count_nonzero(pm | gm))
                table[(int(pid), int(gid))] = inter / union
    return table


def brute_force_best_assignment(pred: LabelVolume, gt: LabelVolume):
    """Exhaustive max-weight one-to-one assignment over all injections."""
    table = brute_force_ious(pred, gt)
    pids = [int(p) for p in pred.labels()]
    gids = [int(g) for g in gt.labels()]
    best, best_pairs = -1.0, []
    k = min(len(pids), len(gids))
    for psel in itertools.permutations(pids, k):
        for gsel in itertools.combinations(gids, k):
            pairs = [(p, g) for p, g in zip(psel, gsel) if (p, g) in table]
            w = sum(table[(p, g)] for p, g in pairs)
            if w > best:
                best, best_pairs = w, pairs
    return best_pairs, table


def random_label_pair(rng, n=12, k_pred=3, k_gt=3):
    pred = np.zeros((n, n, n), dtype=np.int32)
    gt = np.zeros((n, n, n), dtype=np.int32)
    for vol, k in ((pred, k_pred), (gt, k_gt)):
        for uid in range(1, k + 1):
            lo = rng.integers(0, n - 5, size=3)
            ext = rng.integers(3, 6, size=3)
            region = tuple(slice(l, min(l + e, n)) for l, e in zip(lo, ext))
            vol[region] = uid
    return LabelVolume(pred), LabelVolume(gt)


def test_match_identity():
    rng = np.random.default_rng(0)
    pred, _ = random_label_pair(rng)
    m = match_instances(pred, pred)
    assert len(m.matches) == m.n_pred == m.n_gt
    assert all(iou == 1.0 and p == g for p, g, iou, _ in m.matches)
    assert m.unmatched_pred == [] and m.unmatched_gt == []


def test_match_empty_pred():
    gt = LabelVolume(np.ones((4, 4, 4), dtype=np.int32))
    pred = LabelVolume(np.zeros((4, 4, 4), dtype=np.int32))
    m = match_instances(pred, gt)
    assert m.matches == []
    assert m.unmatched_gt == [1]
    assert m.n_pred == 0 and m.n_gt == 1


def test_match_dims_mismatch():
    with pytest.raises(DimsMismatchError):
        match_instances(LabelVolume(np.zeros((4, 4, 4), dtype=np.int32)),
                        LabelVolume(np.zeros((5, 4, 4), dtype=np.int32)))


def test_match_zero_iou_pairs_never_match():
    pred = np.zeros((6, 6, 6), dtype=np.int32)
    gt = np.zeros((6, 6, 6), dtype=np.int32)
    pred[0:2, 0:2, 0:2] = 1
    gt[4:6, 4:6, 4:6] = 1
    m = match_instances(LabelVolume(pred), LabelVolume(gt))
    assert m.matches == []
    assert m.unmatched_pred == [1] and m.unmatched_gt == [1]


def test_match_equals_exhaustive_assignment_distinct_ious():
    rng = np.random.default_rng(21)
    found = 0
    for _ in range(30):
        pred, gt = random_label_pair(rng)
        pairs, table = brute_force_best_assignment(pred, gt)
        ious = sorted(table.values())
        if any(b - a < 1e-12 for a, b in zip(ious, ious[1:])):
            continue  # property holds for pairwise-distinct IoUs
        m = match_instances(pred, gt)
        got = sorted((p, g) for p, g, _, _ in m.matches if table[(p, g)] > 0)
        want = sorted(pairs)
        # at thresholds >= 0.5 the counted pairs must agree even when
        # low-IoU pairings differ between greedy and exhaustive search
        got_high = sorted((p, g) for p, g in got if table[(p, g)] >= 0.5)
        want_high = sorted((p, g) for p, g in want if table[(p, g)] >= 0.5)
        assert got_high == want_high
        found += 1
    assert found >= 10


def test_prj_formula_arithmetic():
    matches = [(i, i, 0.9, 10) for i in range(1, 8)]
    m = MatchResult(matches=matches, unmatched_pred=[8], unmatched_gt=[8, 9, 10],
                    n_pred=8, n_gt=10, pred_foreground=80, gt_foreground=100)
    p, r, j = prj_at(m, 0.5)
    assert (p, r, j) == (7 / 8, 7 / 10, 7 / 11)


def test_prj_perfect():
    matches = [(i, i, 1.0, 5) for i in range(1, 4)]
    m = MatchResult(matches, [], [], 3, 3, 15, 15)
    for th in (0.0, 0.5, 1.0):
        assert prj_at(m, th) == (1.0, 1.0, 1.0)


def test_prj_above_all_ious():
    matches = [(1, 1, 0.6, 5)]
    m = MatchResult(matches, [], [], 1, 1, 10, 10)
    assert prj_at(m, 0.7) == (0.0, 0.0, 0.0)


def test_prj_degenerate_denominators():
    empty = MatchResult([], [], [], 0, 0, 0, 0)
    assert prj_at(empty, 0.5) == (1.0, 1.0, 1.0)
    # 0/0 resolves to 1 only when both sides are empty, else 0
    pred_only = MatchResult([], [1], [], 1, 0, 10, 0)
    assert prj_at(pred_only, 0.5) == (0.0, 0.0, 0.0)
    gt_only = MatchResult([], [], [1], 0, 1, 0, 10)
    assert prj_at(gt_only, 0.5) == (0.0, 0.0, 0.0)


def test_prj_voxel_mode():
    matches = [(1, 1, 0.8, 40), (2, 2, 0.6, 20)]
    m = MatchResult(matches, [], [], 2, 2, 80, 90)
    p, r, j = prj_at(m, 0.5, mode="voxel")
    assert p == 60 / 80 and r == 60 / 90 and j == 60 / (60 + 20 + 30)
    p, r, j = prj_at(m, 0.7, mode="voxel")
    assert p == 40 / 80 and r == 40 / 90
    # voxel TP never exceeds either foreground total
    for th in DEFAULT_GRID:
        tp = sum(i for _, _, iou, i in matches if iou >= th)
        assert tp <= min(80, 90)


def test_prj_monotone_in_threshold():
    rng = np.random.default_rng(3)
    pred, gt = random_label_pair(rng, k_pred=4, k_gt=4)
    m = match_instances(pred, gt)
    for mode in ("instance", "voxel"):
        prev = (np.inf, np.inf, np.inf)
        for th in DEFAULT_GRID:
            cur = prj_at(m, th, mode=mode)
            assert all(c <= p for c, p in zip(cur, prev))
            prev = cur


def test_j_bounded_by_p_and_r():
    rng = np.random.default_rng(4)
    for _ in range(10):
        pred, gt = random_label_pair(rng, k_pred=4, k_gt=3)
        m = match_instances(pred, gt)
        for th in DEFAULT_GRID:
            p, r, j = prj_at(m, th)
            assert j <= min(p, r) + 1e-15


def test_relabeling_invariance():
    rng = np.random.default_rng(5)
    pred, gt = random_label_pair(rng)
    m1 = match_instances(pred, gt)
    perm = {1: 7, 2: 3, 3: 12}
    remapped = np.zeros_like(pred.data)
    for old, new in perm.items():
        remapped[pred.data == old] = new
    m2 = match_instances(LabelVolume(remapped), gt)
    for th in DEFAULT_GRID:
        assert prj_at(m1, th) == prj_at(m2, th)


def test_curves_single_volume():
    rng = np.random.default_rng(6)
    pred, gt = random_label_pair(rng)
    m = match_instances(pred, gt)
    c = curves([m])
    assert len(c.grid) == 10
    assert c.ap == c.per_volume[0]["P"]
    assert c.aj == c.per_volume[0]["J"]


def test_curves_mean_of_two_volumes():
    perfect = MatchResult([(1, 1, 1.0, 5)], [], [], 1, 1, 5, 5)
    awful = MatchResult([], [1], [1], 1, 1, 5, 5)
    c = curves([perfect, awful])
    assert all(v == 0.5 for v in c.ap)
    assert all(v == 0.5 for v in c.ar)


def test_curves_empty_input():
    with pytest.raises(EmptyInputError):
        curves([])


def test_default_grid():
    assert len(DEFAULT_GRID) == 10
    assert DEFAULT_GRID[0] == 0.5 and DEFAULT_GRID[-1] == 0.95


def test_mean_scores_constant_and_perfect():
    c = ScoreCurve(grid=DEFAULT_GRID, per_volume=[],
                   ap=[0.4] * 10, ar=[0.4] * 10, aj=[0.4] * 10)
    assert mean_scores(c) == pytest.approx((0.4, 0.4, 0.4))
    perfect = MatchResult([(1, 1, 1.0, 5)], [], [], 1, 1, 5, 5)
    report = MetricsReport.from_matches([perfect])
    assert (report.map, report.mar, report.maj) == (1.0, 1.0, 1.0)


def test_mean_scores_linear_curve():
    vals = [1.0 - 0.1 * k for k in range(10)]  # 1.0 at 0.5 down to 0.1 at 0.95
    c = ScoreCurve(grid=DEFAULT_GRID, per_volume=[], ap=vals, ar=vals, aj=vals)
    m_ap, m_ar, m_aj = mean_scores(c)
    assert m_ap == pytest.approx(0.55)


def test_report_means_equal_curve_means(tmp_path):
    rng = np.random.default_rng(8)
    ms = [match_instances(*random_label_pair(rng)) for _ in range(3)]
    report = MetricsReport.from_matches(ms, config={"note": 1})
    assert report.map == pytest.approx(sum(report.curve.ap) / 10)
    assert report.maj == pytest.approx(sum(report.curve.aj) / 10)

    save_report(report, tmp_path / "r.json")
    loaded = json.loads((tmp_path / "r.json").read_text())
    assert loaded["map"] == report.map
    assert loaded["grid"] == list(DEFAULT_GRID)
    assert loaded["config"] == {"note": 1}

    save_curve_csv(report, tmp_path / "r.csv")
    lines = (tmp_path / "r.csv").read_text().strip().splitlines()
    assert lines[0] == "th,AP,AR,AJ"
    assert len(lines) == 11
