"""Deterministic synthetic ribcage phantoms with exact ground-truth labels.

Each rib is a tube swept along an elliptical arc in the axial plane with
a vertical droop; pairs mirror across the volume's x-center and carry
the 1-12 (right) / 13-24 (left) label convention, type 1 most superior.
The spine is a vertical cylinder at the posterior center emitting
bone-range intensities but labeled background, and the matching straight
centerline is returned alongside. The twelfth (and optional thirteenth)
rib pair is short and hugs the spine, like a floating rib.

Corruptions mimic the failure modes refinement has to cope with:
type shifts, vertically merged neighbors, fractured ribs, missing ribs,
and eroded boundaries.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .refine import Centerline
from .volume import NUM_TYPES, LabelVolume, Spacing, Volume, label_to_type

BONE_HU = 700.0
SOFT_HU = 40.0
AIR_HU = -1000.0


class PhantomGeometryError(ValueError):
    """Configured geometry makes ribs collide."""


@dataclass(frozen=True)
class PhantomConfig:
    rib_pairs: int = 12
    dims: tuple[int, int, int] = (160, 160, 200)
    spacing: Spacing = Spacing(2.0, 2.0, 2.0)
    rib_radius_mm: float = 4.0
    vertical_gap_mm: float = 22.0
    droop_mm: float = 14.0
    spine_radius_mm: float = 10.0
    noise_hu: float = 15.0
    seed: int = 0

    def __post_init__(self):
        if not 1 <= self.rib_pairs <= 13:
            raise ValueError(f"rib_pairs must be in 1..13, got {self.rib_pairs}")


@dataclass(frozen=True)
class Corruption:
    kind: str
    params: dict = field(default_factory=dict)


def label_shift(lo_type: int, hi_type: int, delta: int) -> Corruption:
    return Corruption("label_shift", {"lo": lo_type, "hi": hi_type, "delta": delta})


def merge_adjacent(upper_label: int) -> Corruption:
    return Corruption("merge_adjacent", {"upper_label": upper_label})


def break_rib(label: int, gap_mm: float = 10.0) -> Corruption:
    return Corruption("break_rib", {"label": label, "gap_mm": gap_mm})


def drop_rib(label: int) -> Corruption:
    return Corruption("drop_rib", {"label": label})


def boundary_noise(rate: float) -> Corruption:
    return Corruption("boundary_noise", {"rate": rate})


def parse_corruption(spec: str) -> Corruption:
    """Parse CLI corruption specs.

    Grammar: shift:LO-HI:DELTA | merge:UPPER_LABEL | break:LABEL[:GAP_MM]
    | drop:LABEL | noise:RATE
    """
    parts = spec.split(":")
    try:
        kind = parts[0]
        if kind == "shift":
            lo, hi = parts[1].split("-")
            return label_shift(int(lo), int(hi), int(parts[2]))
        if kind == "merge":
            return merge_adjacent(int(parts[1]))
        if kind == "break":
            gap = float(parts[2]) if len(parts) > 2 else 10.0
            return break_rib(int(parts[1]), gap)
        if kind == "drop":
            return drop_rib(int(parts[1]))
        if kind == "noise":
            return boundary_noise(float(parts[1]))
    except (IndexError, ValueError):
        pass
    raise ValueError(f"bad corruption spec {spec!r} (see parse_corruption grammar)")


# ----------------------------------------------------------------------
# generation
# ----------------------------------------------------------------------

def _ball_offsets(radius_mm: float, spacing: Spacing) -> np.ndarray:
    r = [int(math.floor(radius_mm / s)) for s in spacing.as_tuple()]
    ox, oy, oz = np.mgrid[-r[0]:r[0] + 1, -r[1]:r[1] + 1, -r[2]:r[2] + 1]
    d2 = (ox * spacing.dx) ** 2 + (oy * spacing.dy) ** 2 + (oz * spacing.dz) ** 2
    keep = d2 <= radius_mm**2
    return np.stack([ox[keep], oy[keep], oz[keep]], axis=1)


def _rib_arc_params(cfg: PhantomConfig, rib_type: int):
    """Arc center (x, y), radii (a, b), theta range, droop for one type."""
    lx = cfg.dims[0] * cfg.spacing.dx
    ly = cfg.dims[1] * cfg.spacing.dy
    sx, sy = lx / 2.0, ly * 0.34375  # spine sits posterior of the body center
    if rib_type >= 12:  # short floating ribs wrap tight around the spine
        scale = 1.0 if rib_type == 12 else 0.8
        return (sx, sy + 2.0 * scale), (20.0 * scale, 18.0 * scale), \
            (math.radians(25), math.radians(85)), 6.0
    a = (45.0 + 2.5 * (rib_type - 1)) * (lx / 320.0)
    b = 70.0 * (ly / 320.0)
    cy = sy + 55.0 * (ly / 320.0)
    theta_end = math.radians(150 if rib_type <= 10 else 120)
    return (sx, cy), (a, b), (math.radians(12), theta_end), cfg.droop_mm


def spine_center_mm(cfg: PhantomConfig) -> tuple[float, float]:
    lx = cfg.dims[0] * cfg.spacing.dx
    ly = cfg.dims[1] * cfg.spacing.dy
    return lx / 2.0, ly * 0.34375


def _stamp_curve(points_mm: np.ndarray, ball: np.ndarray, dims, spacing: Spacing) -> np.ndarray:
    """Flat voxel indices of a tube: ball offsets stamped at each sample."""
    sp = np.array(spacing.as_tuple())
    centers = np.floor(points_mm / sp).astype(np.int64)  # voxel containing each sample
    vox = (centers[:, None, :] + ball[None, :, :]).reshape(-1, 3)
    ok = np.all((vox >= 0) & (vox < np.array(dims)), axis=1)
    vox = vox[ok]
    flat = np.ravel_multi_index((vox[:, 0], vox[:, 1], vox[:, 2]), dims)
    return np.unique(flat)


def _rib_samples(cfg: PhantomConfig, rib_type: int, z_center: float) -> np.ndarray:
    (cx, cy), (a, b), (t0, t1), droop = _rib_arc_params(cfg, rib_type)
    step = 1.0 / max(a, b)  # <= 1 mm between samples
    thetas = np.arange(t0, t1, step)
    if thetas[-1] < t1:
        thetas = np.append(thetas, t1)
    x = a * np.sin(thetas)  # right side; caller mirrors for left
    y = cy - b * np.cos(thetas)
    z = z_center - droop * (thetas - t0) / (t1 - t0)
    return np.stack([cx + x, y, z], axis=1)


def generate(cfg: PhantomConfig = PhantomConfig()) -> tuple[Volume, LabelVolume, Centerline]:
    """Build (intensities, labels, centerline); bit-identical per seed."""
    dims, sp = cfg.dims, cfg.spacing
    lx, ly, lz = (d * s for d, s in zip(dims, sp.as_tuple()))
    sx, sy = spine_center_mm(cfg)

    labels = np.zeros(dims, dtype=np.uint8).ravel()
    ball = _ball_offsets(cfg.rib_radius_mm, sp)
    z_top = lz * 0.825
    for t in range(1, cfg.rib_pairs + 1):
        z_center = z_top - (t - 1) * cfg.vertical_gap_mm
        pts = _rib_samples(cfg, t, z_center)
        # a 13th floating pair shares type 12: only 12 types exist
        rib_type = min(t, NUM_TYPES)
        for left in (False, True):
            p = pts.copy()
            if left:
                p[:, 0] = 2.0 * sx - p[:, 0]
            idx = _stamp_curve(p, ball, dims, sp)
            clash = labels[idx]
            if (clash != 0).any():
                other = int(clash[clash != 0][0])
                raise PhantomGeometryError(
                    f"rib type {t} ({'left' if left else 'right'}) overlaps label "
                    f"{other}; loosen the geometry config"
                )
            labels[idx] = rib_type + (NUM_TYPES if left else 0)
    labels = labels.reshape(dims)

    xs = (np.arange(dims[0]) + 0.5) * sp.dx
    ys = (np.arange(dims[1]) + 0.5) * sp.dy
    zs = (np.arange(dims[2]) + 0.5) * sp.dz
    body_r = 0.25625 * (lx + ly) / 2.0  # 82 mm at the default extent
    body = (
        ((xs[:, None] - lx / 2.0) ** 2 + (ys[None, :] - ly * 0.53125) ** 2)
        <= body_r**2
    )
    spine = (
        ((xs[:, None] - sx) ** 2 + (ys[None, :] - sy) ** 2)
        <= cfg.spine_radius_mm**2
    )
    z_spine = (zs >= lz * 0.15) & (zs <= lz * 0.9)

    intens = np.full(dims, AIR_HU, dtype=np.float32)
    intens[body] = SOFT_HU  # broadcast over z
    intens = np.where((spine[:, :, None] & z_spine[None, None, :]), BONE_HU, intens)
    intens[labels > 0] = BONE_HU
    if cfg.noise_hu > 0:
        rng = np.random.default_rng(cfg.seed)
        intens = intens + rng.normal(0.0, cfg.noise_hu, dims).astype(np.float32)

    line_z = np.linspace(lz * 0.05, lz * 0.95, 5)
    line = Centerline(np.stack([
        np.full(5, sx), np.full(5, sy), line_z
    ], axis=1))
    return Volume(intens, sp), LabelVolume(labels, sp), line


# ----------------------------------------------------------------------
# corruptions
# ----------------------------------------------------------------------

def _require_label(data: np.ndarray, label: int) -> np.ndarray:
    sel = data == label
    if not sel.any():
        raise ValueError(f"corruption target label {label} not present")
    return sel


def _apply_label_shift(data: np.ndarray, lo: int, hi: int, delta: int) -> np.ndarray:
    types = label_to_type(data)
    in_range = (types >= lo) & (types <= hi) & (data > 0)
    shifted = np.clip(types + delta, 1, NUM_TYPES)
    new = np.where(data > NUM_TYPES, shifted + NUM_TYPES, shifted)
    return np.where(in_range, new, data).astype(np.uint8)


def _apply_merge(data: np.ndarray, upper_label: int, spacing: Spacing) -> np.ndarray:
    t = int(label_to_type(np.array(upper_label)))
    if t >= NUM_TYPES:
        raise ValueError(f"label {upper_label} has no same-side rib below it")
    lower_label = upper_label + 1
    up = np.argwhere(_require_label(data, upper_label))
    lo = np.argwhere(_require_label(data, lower_label))
    sp = np.array(spacing.as_tuple())
    dist, j = cKDTree(lo * sp).query(up * sp)
    i = int(np.argmin(dist))
    p0, p1 = up[i] * sp, lo[int(j[i])] * sp
    n = max(2, int(np.ceil(np.linalg.norm(p1 - p0) / min(sp) * 2)))
    seg = p0 + (p1 - p0) * np.linspace(0, 1, n)[:, None]
    ball = _ball_offsets(1.01 * max(sp), Spacing(*sp))
    idx = _stamp_curve(seg, ball, data.shape, Spacing(*sp))
    out = data.ravel().copy()
    bridge = out[idx] == 0  # never overwrite other ribs
    out[idx[bridge]] = upper_label
    return out.reshape(data.shape)


def _apply_break(data: np.ndarray, label: int, gap_mm: float, spacing: Spacing) -> np.ndarray:
    sel = _require_label(data, label)
    vox = np.argwhere(sel)
    sp = np.array(spacing.as_tuple())
    xy = vox[:, :2] * sp[:2]
    center = xy.mean(axis=0)
    ang = np.arctan2(xy[:, 1] - center[1], xy[:, 0] - center[0])
    # rotate so the arc is contiguous: open the largest circular gap
    order = np.sort(ang)
    gaps = np.diff(np.concatenate([order, [order[0] + 2 * np.pi]]))
    cut_at = order[int(np.argmax(gaps))] + gaps.max() / 2.0
    ang = np.mod(ang - cut_at, 2 * np.pi)
    mid = np.median(ang)
    radius = np.median(np.linalg.norm(xy - center, axis=1))
    half_width = (gap_mm / 2.0) / max(radius, 1e-6)
    remove = np.abs(ang - mid) <= half_width
    out = data.copy()
    out[tuple(vox[remove].T)] = 0
    return out


def _apply_boundary_noise(data: np.ndarray, rate: float, rng: np.random.Generator) -> np.ndarray:
    from scipy import ndimage

    if not 0.0 <= rate <= 1.0:
        raise ValueError(f"boundary noise rate must be in [0, 1], got {rate}")
    fg = data > 0
    interior = ndimage.binary_erosion(fg)  # 6-connected structuring element
    surface = fg & ~interior
    flip = surface & (rng.random(data.shape) < rate)
    out = data.copy()
    out[flip] = 0
    return out


def corrupt(labels: LabelVolume, corruption: Corruption, seed: int = 0) -> LabelVolume:
    """Apply one corruption; dims/spacing never change."""
    data = labels.data
    p = corruption.params
    if corruption.kind == "label_shift":
        out = _apply_label_shift(data, p["lo"], p["hi"], p["delta"])
    elif corruption.kind == "merge_adjacent":
        out = _apply_merge(data, p["upper_label"], labels.spacing)
    elif corruption.kind == "break_rib":
        out = _apply_break(data, p["label"], p["gap_mm"], labels.spacing)
    elif corruption.kind == "drop_rib":
        out = data.copy()
        out[_require_label(data, p["label"])] = 0
    elif corruption.kind == "boundary_noise":
        out = _apply_boundary_noise(data, p["rate"], np.random.default_rng(seed))
    else:
        raise ValueError(f"unknown corruption kind {corruption.kind!r}")
    return LabelVolume(out, labels.spacing)
