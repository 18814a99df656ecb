"""Geometric mask refinement for rib label volumes.

The refinement re-derives rib types per body side from component geometry:

1. split the predicted foreground into left/right groups of connected
   components (whole components, by centroid x vs. a midline),
2. sort each group superior-first by centroid height,
3. estimate how many ribs each component may contain from its volume
   relative to the group's median component volume,
4. collect "probable" types per component (types occupying more than a
   configured fraction of the component),
5. pick the consecutive run of types that matches the most probable
   types, leaving a protected topmost run of first-rib components
   untouched.

Also provides the spine-proximity cut used for near-spine-tolerant
evaluation: all labeled voxels within a radius of the spine centerline
(measured in-plane, per axial slice) are removed.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from .components import Component, ComponentSet, _components_from_array
from .volume import (
    NUM_TYPES,
    LabelVolume,
    Spacing,
    label_to_type,
    voxel_centers_mm,
)

log = logging.getLogger(__name__)


class CapacityError(ValueError):
    """Raised when a side needs more rib types than exist (13+ ribs)."""


@dataclass(frozen=True)
class RefineConfig:
    probable_fraction: float = 1.0 / 3.0
    protected_top_types: frozenset = frozenset({1, 2, 3, 4})
    connectivity: int = 26
    min_voxels: int = 64

    def __post_init__(self):
        if not 0.0 < self.probable_fraction < 1.0:
            raise ValueError(
                f"probable_fraction must be in (0, 1), got {self.probable_fraction}"
            )


@dataclass(frozen=True)
class SideMasks:
    """Left/right split of a foreground mask (disjoint, covering)."""

    left: np.ndarray
    right: np.ndarray


@dataclass(frozen=True)
class ComponentAssignment:
    """Consecutive type blocks assigned to a sorted component sequence."""

    start_type: int
    types: tuple[tuple[int, ...], ...]
    probable_types: tuple[frozenset, ...]
    score: int
    tie_drift: int

    @property
    def capacities(self) -> tuple[int, ...]:
        return tuple(len(b) for b in self.types)


@dataclass(frozen=True)
class Centerline:
    """Ordered spine-axis polyline in millimeters, strictly increasing z."""

    points: np.ndarray  # shape (n, 3): x, y, z

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64)
        if pts.ndim != 2 or pts.shape[1] != 3:
            raise ValueError(f"centerline points must have shape (n, 3), got {pts.shape}")
        if pts.shape[0] < 2:
            raise ValueError("centerline needs at least 2 points")
        if not np.all(np.diff(pts[:, 2]) > 0):
            raise ValueError("centerline z coordinates must be strictly increasing")
        pts.flags.writeable = False
        object.__setattr__(self, "points", pts)

    def at_z(self, z) -> tuple[np.ndarray, np.ndarray]:
        """(cx, cy) interpolated at height(s) z, extrapolating end segments."""
        z = np.atleast_1d(np.asarray(z, dtype=np.float64))
        zs = self.points[:, 2]
        seg = np.clip(np.searchsorted(zs, z, side="right"), 1, len(zs) - 1)
        z0, z1 = zs[seg - 1], zs[seg]
        t = (z - z0) / (z1 - z0)
        cx = self.points[seg - 1, 0] + t * (self.points[seg, 0] - self.points[seg - 1, 0])
        cy = self.points[seg - 1, 1] + t * (self.points[seg, 1] - self.points[seg - 1, 1])
        return cx, cy

    def mean_x(self) -> float:
        return float(self.points[:, 0].mean())


@dataclass
class SideRefineReport:
    """Diagnostics for one side of a refinement run."""

    side: str
    component_count: int = 0
    dropped_small: int = 0
    protected: int = 0
    assignment: ComponentAssignment | None = None
    refused: str | None = None


def default_midline_x(dims, spacing: Spacing, line: Centerline | None = None) -> float:
    """Midline for side separation: centerline mean x, else volume x-center."""
    if line is not None:
        return line.mean_x()
    return dims[0] * spacing.dx / 2.0


def split_sides(labels: LabelVolume, midline_x: float) -> SideMasks:
    """Assign every connected component wholly to one side of the midline.

    Components whose centroid x is below the midline go left, the rest
    right; a centroid exactly on the midline goes right with a warning.
    """
    cs = _components_from_array(labels.data > 0, labels.spacing, 26)
    left = np.zeros(labels.dims, dtype=bool)
    right = np.zeros(labels.dims, dtype=bool)
    for c in cs.components:
        if c.centroid_mm[0] == midline_x:
            log.warning(
                "component %d centroid exactly on midline x=%.3f mm; assigned right",
                c.id, midline_x,
            )
        target = left if c.centroid_mm[0] < midline_x else right
        target.ravel()[c.indices] = True
    return SideMasks(left=left, right=right)


def sort_by_height(cs: ComponentSet) -> list[Component]:
    """Components ordered superior-first (centroid z descending).

    Ties: larger voxel_count first, then smaller id.
    """
    return sorted(cs.components, key=lambda c: (-c.centroid_mm[2], -c.voxel_count, c.id))


def component_capacities(cs: ComponentSet) -> dict[int, int]:
    """Ribs each component may contain: volume relative to the median.

    capacity = max(1, floor(count / median + 0.5)).
    """
    if not cs.components:
        raise ValueError("component_capacities requires a non-empty ComponentSet")
    median = float(np.median([c.voxel_count for c in cs.components]))
    return {
        c.id: max(1, int(math.floor(c.voxel_count / median + 0.5)))
        for c in cs.components
    }


def probable_types(c: Component, class_labels: LabelVolume, fraction: float) -> set[int]:
    """Types occupying strictly more than ``fraction`` of the component."""
    types = label_to_type(class_labels.data.ravel()[c.indices])
    counts = np.bincount(types, minlength=NUM_TYPES + 1)
    cutoff = fraction * c.voxel_count
    return {t for t in range(1, NUM_TYPES + 1) if counts[t] > cutoff}


def choose_sequence(
    sorted_components: list[Component],
    capacities: list[int],
    probables: list[set[int]],
) -> ComponentAssignment:
    """Best consecutive type assignment over all start types.

    Score counts (component, probable type) pairs whose probable type
    falls inside that component's assigned block. Ties prefer the
    assignment whose matched blocks start closest to the smallest
    probable type, then the smallest start type.
    """
    if not (len(sorted_components) == len(capacities) == len(probables)):
        raise ValueError("components, capacities and probables must align")
    total = sum(capacities)
    if total > NUM_TYPES:
        raise CapacityError(
            f"total capacity {total} exceeds {NUM_TYPES} rib types "
            f"({len(sorted_components)} components)"
        )
    offsets = [0]
    for cap in capacities[:-1]:
        offsets.append(offsets[-1] + cap)

    best = None
    for start in range(1, NUM_TYPES - total + 2):
        score = 0
        drift = 0
        blocks = []
        for cap, off, probs in zip(capacities, offsets, probables):
            block = tuple(range(start + off, start + off + cap))
            blocks.append(block)
            matched = len(probs & set(block))
            score += matched
            if matched:
                drift += abs(block[0] - min(probs))
        key = (-score, drift, start)
        if best is None or key < best[0]:
            best = (key, ComponentAssignment(
                start_type=start,
                types=tuple(blocks),
                probable_types=tuple(frozenset(p) for p in probables),
                score=score,
                tie_drift=drift,
            ))
    if best is None:  # no components: empty assignment starting at 1
        return ComponentAssignment(1, (), (), 0, 0)
    return best[1]


def _protected_prefix(probables, protected_types: frozenset) -> int:
    """Length of the topmost run whose (non-empty) probables are all protected."""
    n = 0
    for probs in probables:
        if probs and probs <= protected_types:
            n += 1
        else:
            break
    return n


def _relabel_component(
    out: np.ndarray,
    comp: Component,
    block: tuple[int, ...],
    prior_types: np.ndarray,
    z_idx: np.ndarray,
    left: bool,
):
    """Write a component's assigned types into ``out`` (flat view).

    Capacity 1 components take the single assigned type. For merged
    components, voxels whose prior type already lies in the block keep
    it; other voxels take the block type whose reference height is
    nearest. Reference heights come from the kept voxels when present,
    otherwise from an even vertical partition (smaller type = higher z).
    """
    offset = NUM_TYPES if left else 0
    if len(block) == 1:
        out[comp.indices] = block[0] + offset
        return
    pt = prior_types[comp.indices]
    z = z_idx[comp.indices].astype(np.float64)
    zmax, zmin = z.max(), z.min()
    span = max(zmax - zmin, 1.0)
    ref_z = np.empty(len(block))
    for i, t in enumerate(block):
        sel = pt == t
        if sel.any():
            ref_z[i] = z[sel].mean()
        else:
            ref_z[i] = zmax - (i + 0.5) * span / len(block)
    nearest = np.argmin(np.abs(z[:, None] - ref_z[None, :]), axis=1)
    new_t = np.asarray(block)[nearest]
    keep = np.isin(pt, block)
    new_t = np.where(keep, pt, new_t)
    out[comp.indices] = new_t + offset


def _refine_side(
    pred: LabelVolume,
    side_mask: np.ndarray,
    out: np.ndarray,
    cfg: RefineConfig,
    left: bool,
    prior_types: np.ndarray,
    z_idx: np.ndarray,
) -> SideRefineReport:
    report = SideRefineReport(side="left" if left else "right")
    cs = _components_from_array(side_mask, pred.spacing, cfg.connectivity)
    if not cs.components:
        return report
    kept = [c for c in cs.components if c.voxel_count >= cfg.min_voxels]
    report.dropped_small = len(cs.components) - len(kept)
    report.component_count = len(kept)
    if not kept:
        return report
    kept_set = ComponentSet(kept, cs.dims, cs.spacing)
    ordered = sort_by_height(kept_set)
    caps = component_capacities(kept_set)
    total_cap = sum(caps.values())
    if total_cap > NUM_TYPES:
        raise CapacityError(
            f"total capacity {total_cap} exceeds {NUM_TYPES} rib types "
            f"({len(kept)} components)"
        )
    probs = [probable_types(c, pred, cfg.probable_fraction) for c in ordered]

    n_prot = _protected_prefix(probs, cfg.protected_top_types)
    report.protected = n_prot
    flat_pred = pred.data.ravel()
    for c in ordered[:n_prot]:
        out[c.indices] = flat_pred[c.indices]

    rest = ordered[n_prot:]
    if not rest:
        return report
    assignment = choose_sequence(rest, [caps[c.id] for c in rest], probs[n_prot:])
    report.assignment = assignment
    for c, block in zip(rest, assignment.types):
        _relabel_component(out, c, block, prior_types, z_idx, left)
    return report


def refine_with_report(
    pred: LabelVolume,
    cfg: RefineConfig = RefineConfig(),
    midline_x: float | None = None,
) -> tuple[LabelVolume, list[SideRefineReport]]:
    """Run geometric refinement and return per-side diagnostics.

    Raises CapacityError when either side needs more than 12 rib types.
    """
    if midline_x is None:
        midline_x = default_midline_x(pred.dims, pred.spacing)
    if not pred.data.any():
        log.warning("refine called on an empty prediction; returned unchanged")
        return pred, [SideRefineReport("left"), SideRefineReport("right")]

    sides = split_sides(pred, midline_x)
    out = np.zeros(pred.dims, dtype=np.uint8).ravel()
    prior_types = label_to_type(pred.data.ravel()).astype(np.int16)
    z_idx = np.broadcast_to(
        np.arange(pred.dims[2]), pred.dims
    ).ravel()

    reports = []
    for mask, left in ((sides.left, True), (sides.right, False)):
        try:
            reports.append(
                _refine_side(pred, mask, out, cfg, left, prior_types, z_idx)
            )
        except CapacityError as e:
            side = "left" if left else "right"
            raise CapacityError(f"{side} side: {e}") from None
    refined = LabelVolume(out.reshape(pred.dims), pred.spacing)
    return refined, reports


def refine(
    pred: LabelVolume,
    cfg: RefineConfig = RefineConfig(),
    midline_x: float | None = None,
) -> LabelVolume:
    """Geometric refinement of a predicted rib label volume."""
    refined, _ = refine_with_report(pred, cfg, midline_x)
    return refined


def spine_cut(labels: LabelVolume, line: Centerline, radius_mm: float = 30.0) -> LabelVolume:
    """Remove labeled voxels within ``radius_mm`` of the spine centerline.

    Distance is measured in-plane per axial slice, against the centerline
    point linearly interpolated (or extrapolated) at the slice height.
    """
    nx, ny, nz = labels.dims
    sp = labels.spacing
    cx, cy = line.at_z(voxel_centers_mm(nz, sp.dz))
    xs = voxel_centers_mm(nx, sp.dx)
    ys = voxel_centers_mm(ny, sp.dy)
    # (nx, ny, nz) distance field via broadcasting
    dx = xs[:, None, None] - cx[None, None, :]
    dy = ys[None, :, None] - cy[None, None, :]
    inside = dx * dx + dy * dy < radius_mm * radius_mm
    out = np.where(inside, 0, labels.data).astype(np.uint8)
    return LabelVolume(out, sp)
