"""3D connected-component labeling and small-component filtration.

Components are extracted with a configurable neighborhood (6, 18, or 26)
and reported in descending voxel-count order so downstream processing is
deterministic regardless of scan order.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .volume import LabelVolume, Spacing

_STRUCTURES = {
    6: ndimage.generate_binary_structure(3, 1),
    18: ndimage.generate_binary_structure(3, 2),
    26: ndimage.generate_binary_structure(3, 3),
}


@dataclass(frozen=True)
class Component:
    """One connected component of a binary mask.

    ``indices`` are flat C-order voxel indices into the source grid;
    ``centroid_mm`` uses voxel-center physical coordinates; ``bbox`` holds
    inclusive (lo, hi) voxel index ranges per axis.
    """

    id: int
    voxel_count: int
    centroid_mm: tuple[float, float, float]
    bbox: tuple[tuple[int, int], tuple[int, int], tuple[int, int]]
    indices: np.ndarray

    def coords(self, dims) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        return np.unravel_index(self.indices, dims)


@dataclass(frozen=True)
class ComponentSet:
    """All components of one mask plus the source grid geometry."""

    components: list[Component]
    dims: tuple[int, int, int]
    spacing: Spacing

    def __len__(self) -> int:
        return len(self.components)

    def foreground_count(self) -> int:
        return sum(c.voxel_count for c in self.components)


def _components_from_array(mask: np.ndarray, spacing: Spacing, connectivity: int) -> ComponentSet:
    if connectivity not in _STRUCTURES:
        raise ValueError(f"connectivity must be one of 6, 18, 26; got {connectivity}")
    labeled, n = ndimage.label(mask, structure=_STRUCTURES[connectivity])
    dims = mask.shape
    if n == 0:
        return ComponentSet([], dims, spacing)

    flat = labeled.ravel()
    order = np.argsort(flat, kind="stable")
    counts = np.bincount(flat, minlength=n + 1)
    # stable argsort groups each raw label's voxels contiguously, ascending flat index
    offsets = np.cumsum(counts)
    raw = []
    for lab in range(1, n + 1):
        idx = order[offsets[lab - 1]:offsets[lab]]
        raw.append(idx)
    # deterministic ordering: biggest first, ties by earliest voxel
    raw.sort(key=lambda idx: (-idx.size, int(idx[0])))

    sp = spacing.as_tuple()
    comps = []
    for cid, idx in enumerate(raw, start=1):
        xs, ys, zs = np.unravel_index(idx, dims)
        centroid = tuple((float(a.mean()) + 0.5) * s for a, s in zip((xs, ys, zs), sp))
        bbox = tuple((int(a.min()), int(a.max())) for a in (xs, ys, zs))
        comps.append(Component(cid, int(idx.size), centroid, bbox, idx))
    return ComponentSet(comps, dims, spacing)


def label_components(mask: LabelVolume, connectivity: int = 26) -> ComponentSet:
    """Split a binary mask into connected components.

    The input must contain only values {0, 1}; use the refinement helpers
    to binarize multi-label volumes first.
    """
    if mask.data.max(initial=0) > 1:
        raise ValueError("label_components expects a binary mask with values in {0, 1}")
    return _components_from_array(mask.data > 0, mask.spacing, connectivity)


def filter_small(cs: ComponentSet, min_voxels: int) -> np.ndarray:
    """Boolean mask keeping only components with voxel_count >= min_voxels."""
    if min_voxels < 0:
        raise ValueError(f"min_voxels must be >= 0, got {min_voxels}")
    out = np.zeros(cs.dims, dtype=bool)
    for c in cs.components:
        if c.voxel_count >= min_voxels:
            out.ravel()[c.indices] = True
    return out
