import numpy as np
import pytest

from ribkit.metrics import (
    DimensionMismatchError,
    aggregate_reports,
    evaluate_case,
    label_dice,
    rib_recall,
)
from ribkit.volume import LabelVolume, Spacing

SP = Spacing(1, 1, 1)


def labelvol(data):
    return LabelVolume(np.asarray(data, dtype=np.uint8), SP)


def set_oracle(pred, gt):
    """Brute-force per-rib recall/dice by materializing voxel index sets."""
    out = {}
    for rib in range(1, 25):
        gset = set(np.flatnonzero(gt.ravel() == rib))
        pset = set(np.flatnonzero(pred.ravel() == rib))
        if not gset:
            out[rib] = (None, None)
            continue
        inter = len(gset & pset)
        out[rib] = (inter / len(gset), 2 * inter / (len(gset) + len(pset)))
    return out


def afit_oracle(recalls, threshold=0.7):
    """Independent A/F/I/T accuracies from a rib->recall mapping."""
    groups = {"A": [0, 0], "F": [0, 0], "I": [0, 0], "T": [0, 0]}
    for rib, rec in recalls.items():
        if rec is None:
            continue
        t = (rib - 1) % 12 + 1
        g = "F" if t == 1 else ("T" if t == 12 else "I")
        for key in ("A", g):
            groups[key][0] += int(rec > threshold)
            groups[key][1] += 1
    return {g: (100.0 * c / n if n else None) for g, (c, n) in groups.items()}


def test_identical_volumes_score_perfect():
    rng = np.random.default_rng(0)
    data = rng.integers(0, 25, size=(8, 8, 8)).astype(np.uint8)
    vol = labelvol(data)
    report = evaluate_case(vol, vol, case_id="x")
    assert report.label_accuracy["A"] == 100.0
    assert report.dice_avg == 1.0 and report.dice_min == 1.0
    for s in report.per_rib:
        if s.gt_present:
            assert s.recall == 1.0 and s.dice == 1.0


def test_recall_voxel_counting_and_emptiness():
    gt = np.zeros((10, 1, 1), dtype=np.uint8)
    gt[0:10, 0, 0] = 4
    pred = np.zeros_like(gt)
    pred[0:7, 0, 0] = 4
    assert rib_recall(labelvol(pred), labelvol(gt), 4) == pytest.approx(0.7)
    assert rib_recall(labelvol(pred), labelvol(gt), 5) is None
    with pytest.raises(ValueError):
        rib_recall(labelvol(pred), labelvol(gt), 0)


def test_threshold_is_strict():
    # recall exactly 0.70 counts as incorrect
    gt = np.zeros((10, 1, 1), dtype=np.uint8)
    gt[:, 0, 0] = 4
    pred = np.zeros_like(gt)
    pred[0:7, 0, 0] = 4
    report = evaluate_case(labelvol(pred), labelvol(gt))
    assert report.per_rib[3].recall == pytest.approx(0.7)
    assert report.label_accuracy["A"] == 0.0


def test_afit_grouping_one_intermediate_failure():
    gt = np.zeros((24, 10, 1), dtype=np.uint8)
    pred = np.zeros_like(gt)
    for rib in range(1, 25):
        gt[rib - 1, :, 0] = rib
        pred[rib - 1, :, 0] = rib
    pred[4, 4:, 0] = 0  # rib 5 (intermediate): recall 0.4
    report = evaluate_case(labelvol(pred), labelvol(gt))
    assert report.label_accuracy["A"] == pytest.approx(100.0 * 23 / 24)
    assert report.label_accuracy["I"] == pytest.approx(95.0)
    assert report.label_accuracy["F"] == 100.0
    assert report.label_accuracy["T"] == 100.0


def test_dice_values():
    gt = np.zeros((16, 1, 1), dtype=np.uint8)
    gt[0:8, 0, 0] = 3
    pred = np.zeros_like(gt)
    pred[4:12, 0, 0] = 3  # 8 predicted, overlap 4
    dices, avg, mn = label_dice(labelvol(pred), labelvol(gt))
    assert dices[2] == pytest.approx(0.5)
    assert avg == pytest.approx(0.5) and mn == pytest.approx(0.5)

    pred2 = np.zeros_like(gt)
    pred2[8:16, 0, 0] = 3  # disjoint
    dices, avg, mn = label_dice(labelvol(pred2), labelvol(gt))
    assert dices[2] == 0.0 and mn == 0.0


def test_empty_gt_rib_skipped_not_zeroed():
    gt = np.zeros((8, 1, 1), dtype=np.uint8)
    gt[0:4, 0, 0] = 1
    pred = gt.copy()
    pred[6, 0, 0] = 9  # hallucinated rib 9
    report = evaluate_case(labelvol(pred), labelvol(gt))
    assert report.per_rib[8].gt_present is False
    assert report.per_rib[8].dice is None
    assert report.dice_avg == 1.0  # rib 9 never enters the average
    assert report.hallucinated_labels == 1


def test_no_scored_ribs_gives_na():
    empty = labelvol(np.zeros((4, 4, 4)))
    report = evaluate_case(empty, empty)
    assert report.dice_avg is None and report.dice_min is None
    assert all(v is None for v in report.label_accuracy.values())


def test_dim_mismatch_rejected():
    a = labelvol(np.zeros((4, 4, 4)))
    b = labelvol(np.zeros((4, 4, 5)))
    with pytest.raises(DimensionMismatchError):
        evaluate_case(a, b)


def test_matches_set_oracle_randomized():
    rng = np.random.default_rng(1)
    for _ in range(20):
        pred = rng.integers(0, 25, size=(16, 16, 16)).astype(np.uint8)
        gt = rng.integers(0, 25, size=(16, 16, 16)).astype(np.uint8)
        report = evaluate_case(labelvol(pred), labelvol(gt))
        oracle = set_oracle(pred, gt)
        for s in report.per_rib:
            orec, odice = oracle[s.rib_label]
            if orec is None:
                assert not s.gt_present
            else:
                assert abs(s.recall - orec) < 1e-12
                assert abs(s.dice - odice) < 1e-12
        oa = afit_oracle({r: oracle[r][0] for r in oracle})
        for g in ("A", "F", "I", "T"):
            if oa[g] is None:
                assert report.label_accuracy[g] is None
            else:
                assert abs(report.label_accuracy[g] - oa[g]) < 1e-12


def test_accuracy_counts_partition():
    rng = np.random.default_rng(2)
    pred = rng.integers(0, 25, size=(12, 12, 12)).astype(np.uint8)
    gt = rng.integers(0, 25, size=(12, 12, 12)).astype(np.uint8)
    report = evaluate_case(labelvol(pred), labelvol(gt))
    c = report.accuracy_counts
    assert c["A"][0] == c["F"][0] + c["I"][0] + c["T"][0]
    assert c["A"][1] == c["F"][1] + c["I"][1] + c["T"][1]


def test_dice_ordering_invariant():
    rng = np.random.default_rng(3)
    pred = rng.integers(0, 25, size=(10, 10, 10)).astype(np.uint8)
    gt = rng.integers(0, 25, size=(10, 10, 10)).astype(np.uint8)
    report = evaluate_case(labelvol(pred), labelvol(gt))
    if report.dice_avg is not None:
        assert 0.0 <= report.dice_min <= report.dice_avg <= 1.0


def test_aggregate_micro_vs_macro():
    gt = np.zeros((10, 1, 1), dtype=np.uint8)
    gt[:, 0, 0] = 1
    perfect = evaluate_case(labelvol(gt), labelvol(gt), case_id="a")
    half = np.zeros_like(gt)
    half[0:5, 0, 0] = 1
    missed = evaluate_case(labelvol(half), labelvol(gt), case_id="b")
    agg = aggregate_reports([perfect, missed])
    assert agg["cases"] == 2
    assert agg["micro"]["label_accuracy"]["A"] == pytest.approx(50.0)
    assert agg["macro"]["label_accuracy"]["A"] == pytest.approx(50.0)
    assert agg["micro"]["dice_min"] == pytest.approx(2 * 5 / (10 + 5))
