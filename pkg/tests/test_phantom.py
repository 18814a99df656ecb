import numpy as np
import pytest

from ribkit.components import label_components
from ribkit.metrics import evaluate_case
from ribkit.phantom import (
    BONE_HU,
    PhantomConfig,
    boundary_noise,
    break_rib,
    corrupt,
    drop_rib,
    generate,
    label_shift,
    merge_adjacent,
    parse_corruption,
    spine_center_mm,
)
from ribkit.refine import probable_types
from ribkit.volume import LabelVolume

SMALL = PhantomConfig(dims=(120, 120, 160))


def components_of(labels):
    binary = LabelVolume((labels.data > 0).astype(np.uint8), labels.spacing)
    return label_components(binary, 26)


def test_default_phantom_has_24_components():
    _, labels, _ = generate(PhantomConfig())
    assert labels.label_set() == set(range(1, 25))
    assert len(components_of(labels)) == 24


def test_generation_is_deterministic():
    v1, l1, c1 = generate(PhantomConfig(seed=7))
    v2, l2, c2 = generate(PhantomConfig(seed=7))
    assert np.array_equal(v1.data, v2.data)
    assert np.array_equal(l1.data, l2.data)
    assert np.array_equal(c1.points, c2.points)

    v3, l3, _ = generate(PhantomConfig(seed=8))
    assert not np.array_equal(v1.data, v3.data)  # intensity noise differs
    assert np.array_equal(l1.data, l3.data)      # geometry does not


def test_single_pair_phantom():
    _, labels, _ = generate(PhantomConfig(rib_pairs=1, dims=(120, 120, 160)))
    assert labels.label_set() == {1, 13}
    assert len(components_of(labels)) == 2


def test_intensities_cover_expected_ranges():
    vol, labels, _ = generate(SMALL)
    rib_mean = float(vol.data[labels.data > 0].mean())
    assert abs(rib_mean - BONE_HU) < 30.0
    assert vol.data.min() < -800.0  # air present


def test_centerline_tracks_spine():
    cfg = SMALL
    _, _, line = generate(cfg)
    sx, sy = spine_center_mm(cfg)
    assert np.allclose(line.points[:, 0], sx)
    assert np.allclose(line.points[:, 1], sy)


def test_config_validation():
    with pytest.raises(ValueError):
        PhantomConfig(rib_pairs=0)
    with pytest.raises(ValueError):
        PhantomConfig(rib_pairs=14)


def test_drop_rib_metrics():
    _, gt, _ = generate(SMALL)
    pred = corrupt(gt, drop_rib(24))
    report = evaluate_case(pred, gt)
    per_rib = {s.rib_label: s for s in report.per_rib}
    assert per_rib[24].recall == 0.0
    others = [s.recall for s in report.per_rib if s.gt_present and s.rib_label != 24]
    assert all(r == 1.0 for r in others)
    with pytest.raises(ValueError):
        corrupt(pred, drop_rib(24))  # already gone


def test_label_shift_moves_probable_types():
    _, gt, _ = generate(SMALL)
    shifted = corrupt(gt, label_shift(8, 11, +1))
    cs = components_of(gt)
    for comp in cs.components:
        true_types = probable_types(comp, gt, 1 / 3)
        new_types = probable_types(comp, shifted, 1 / 3)
        t = true_types.pop()
        if 8 <= t <= 11:
            assert new_types == {t + 1}
        else:
            assert new_types == {t}


def test_label_shift_clamps_at_twelve():
    _, gt, _ = generate(SMALL)
    shifted = corrupt(gt, label_shift(11, 12, +3))
    assert shifted.label_set() <= set(range(1, 25))
    # types 11 and 12 both clamp to 12
    assert 11 not in {(l - 1) % 12 + 1 for l in shifted.label_set()}


def test_break_rib_adds_one_component():
    _, gt, _ = generate(SMALL)
    before = len(components_of(gt))
    broken = corrupt(gt, break_rib(5, gap_mm=10.0))
    assert len(components_of(broken)) == before + 1
    # only rib 5 lost voxels
    changed = gt.data != broken.data
    assert set(np.unique(gt.data[changed])) == {5}


def test_merge_adjacent_removes_one_component():
    _, gt, _ = generate(SMALL)
    before = len(components_of(gt))
    merged = corrupt(gt, merge_adjacent(5))
    assert len(components_of(merged)) == before - 1
    # bridge voxels only ever claim background
    overwritten = (gt.data > 0) & (merged.data != gt.data)
    assert not overwritten.any()
    with pytest.raises(ValueError):
        corrupt(gt, merge_adjacent(12))  # type 12 has no same-side successor


def test_boundary_noise_erodes_surface_only():
    _, gt, _ = generate(SMALL)
    noisy = corrupt(gt, boundary_noise(0.5), seed=3)
    assert noisy.dims == gt.dims and noisy.spacing == gt.spacing
    removed = (gt.data > 0) & (noisy.data == 0)
    assert removed.any()
    assert not ((gt.data == 0) & (noisy.data > 0)).any()
    # deterministic per seed
    again = corrupt(gt, boundary_noise(0.5), seed=3)
    assert np.array_equal(noisy.data, again.data)
    other = corrupt(gt, boundary_noise(0.5), seed=4)
    assert not np.array_equal(noisy.data, other.data)


def test_corruptions_preserve_geometry():
    _, gt, _ = generate(SMALL)
    for c in (label_shift(5, 9, -2), drop_rib(3), break_rib(7), boundary_noise(0.02)):
        out = corrupt(gt, c, seed=1)
        assert out.dims == gt.dims
        assert out.spacing == gt.spacing


def test_perfect_prediction_scores_perfectly():
    _, gt, _ = generate(SMALL)
    report = evaluate_case(gt, gt)
    assert report.label_accuracy["A"] == 100.0
    assert report.dice_avg == 1.0


def test_parse_corruption_specs():
    assert parse_corruption("shift:8-11:+1").params == {"lo": 8, "hi": 11, "delta": 1}
    assert parse_corruption("merge:5").params == {"upper_label": 5}
    assert parse_corruption("break:24:12.5").params == {"label": 24, "gap_mm": 12.5}
    assert parse_corruption("drop:24").params == {"label": 24}
    assert parse_corruption("noise:0.02").params == {"rate": 0.02}
    for bad in ("shift:8:1", "explode:1", "noise", "break:x"):
        with pytest.raises(ValueError):
            parse_corruption(bad)


def test_unknown_corruption_kind_rejected():
    _, gt, _ = generate(SMALL)
    from ribkit.phantom import Corruption

    with pytest.raises(ValueError):
        corrupt(gt, Corruption("melt", {}))
