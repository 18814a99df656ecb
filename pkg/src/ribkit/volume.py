"""Core 3D grid types, resampling, and bone-window normalization.

Conventions used throughout the package:

* Arrays are indexed ``(x, y, z)``; the third axis is the vertical
  (superior-inferior) axis, larger z = more superior.
* The physical center of voxel ``i`` along an axis with spacing ``s`` is
  ``(i + 0.5) * s`` millimeters.
* Rib labels: 0 = background, 1-12 = right ribs (type 1-12, type 1 most
  superior), 13-24 = left ribs (type + 12). "Right" means voxel center
  x >= midline, "left" means x < midline.

Instances are immutable after construction (the data buffer is frozen);
all operations return new objects, so everything here is safe to share
across threads.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage


MAX_LABEL = 24
NUM_TYPES = 12


@dataclass(frozen=True)
class Spacing:
    """Voxel edge lengths in millimeters along (x, y, z)."""

    dx: float
    dy: float
    dz: float

    def __post_init__(self):
        for name, v in (("dx", self.dx), ("dy", self.dy), ("dz", self.dz)):
            if not (math.isfinite(v) and v > 0):
                raise ValueError(f"spacing {name} must be a positive finite number, got {v!r}")

    def as_tuple(self) -> tuple[float, float, float]:
        return (self.dx, self.dy, self.dz)


def _freeze(a: np.ndarray) -> np.ndarray:
    # read-only view; never flips flags on (or copies) the caller's array
    a = np.ascontiguousarray(a).view()
    a.flags.writeable = False
    return a


@dataclass(frozen=True)
class Volume:
    """Dense 3D scalar grid (CT intensities or probabilities) with spacing.

    ``data`` is stored as float32, shape (nx, ny, nz), and is marked
    read-only; copy before mutating.
    """

    data: np.ndarray
    spacing: Spacing

    def __post_init__(self):
        if self.data.ndim != 3:
            raise ValueError(f"volume data must be 3D, got ndim={self.data.ndim}")
        if min(self.data.shape) < 1:
            raise ValueError(f"volume dims must all be >= 1, got {self.data.shape}")
        object.__setattr__(self, "data", _freeze(self.data.astype(np.float32, copy=False)))

    @property
    def dims(self) -> tuple[int, int, int]:
        return self.data.shape


@dataclass(frozen=True)
class LabelVolume:
    """Dense 3D integer grid of rib labels in {0..24} with spacing."""

    data: np.ndarray
    spacing: Spacing

    def __post_init__(self):
        if self.data.ndim != 3:
            raise ValueError(f"label data must be 3D, got ndim={self.data.ndim}")
        if min(self.data.shape) < 1:
            raise ValueError(f"label dims must all be >= 1, got {self.data.shape}")
        data = self.data
        if data.dtype != np.uint8:
            if data.size and (data.min() < 0 or data.max() > MAX_LABEL):
                raise ValueError(
                    f"labels must lie in 0..{MAX_LABEL}, got range "
                    f"[{data.min()}, {data.max()}]"
                )
            data = data.astype(np.uint8)
        elif data.size and data.max() > MAX_LABEL:
            raise ValueError(f"labels must lie in 0..{MAX_LABEL}, got max {data.max()}")
        object.__setattr__(self, "data", _freeze(data))

    @property
    def dims(self) -> tuple[int, int, int]:
        return self.data.shape

    def label_set(self) -> set[int]:
        return set(int(v) for v in np.unique(self.data) if v != 0)


@dataclass(frozen=True)
class WindowConfig:
    """Intensity window in Hounsfield units; defaults to the bone window."""

    lo: float = -450.0
    hi: float = 1050.0

    def __post_init__(self):
        if not self.lo < self.hi:
            raise ValueError(f"window requires lo < hi, got lo={self.lo}, hi={self.hi}")


def voxel_centers_mm(n: int, step: float) -> np.ndarray:
    """Physical center coordinates of ``n`` voxels with spacing ``step``."""
    return (np.arange(n, dtype=np.float64) + 0.5) * step


def label_to_type(labels: np.ndarray) -> np.ndarray:
    """Rib type 1-12 for each label 1-24 (0 stays 0)."""
    labels = np.asarray(labels)
    types = (labels.astype(np.int64) - 1) % NUM_TYPES + 1
    return np.where(labels == 0, 0, types)


def type_to_label(types, left: bool):
    """Side-encoded label for a rib type: right keeps the type, left adds 12."""
    types = np.asarray(types)
    return types + NUM_TYPES if left else types


def _output_dims(dims, spacing: Spacing, target: Spacing) -> tuple[int, int, int]:
    # round-half-up on the physical extent ratio, floored at one voxel
    out = []
    for n, s_in, s_out in zip(dims, spacing.as_tuple(), target.as_tuple()):
        out.append(max(1, int(math.floor(n * s_in / s_out + 0.5))))
    return tuple(out)


def _output_coords(out_dims, spacing: Spacing, target: Spacing) -> list[np.ndarray]:
    # output voxel centers expressed in input index space, edge-clamped later
    coords = []
    for n_out, s_in, s_out in zip(out_dims, spacing.as_tuple(), target.as_tuple()):
        coords.append(voxel_centers_mm(n_out, s_out) / s_in - 0.5)
    return coords


def resample_linear(vol: Volume, target: Spacing) -> Volume:
    """Trilinear resample onto a new isotropic/anisotropic grid.

    Output voxel centers are mapped into input index space by physical
    coordinates; samples outside the grid clamp to the nearest edge voxel.
    """
    if not isinstance(target, Spacing):
        target = Spacing(*target)
    out_dims = _output_dims(vol.dims, vol.spacing, target)
    cx, cy, cz = _output_coords(out_dims, vol.spacing, target)
    grid = np.meshgrid(cx, cy, cz, indexing="ij")
    out = ndimage.map_coordinates(
        vol.data.astype(np.float64), np.stack(grid), order=1, mode="nearest"
    )
    return Volume(out.astype(np.float32), target)


def resample_nearest(labels: LabelVolume, target: Spacing) -> LabelVolume:
    """Nearest-neighbor label resample (labels are never blended).

    Each output voxel takes the label whose input voxel center is nearest
    to the output voxel center; exact midpoints round toward the higher
    index.
    """
    if not isinstance(target, Spacing):
        target = Spacing(*target)
    out_dims = _output_dims(labels.dims, labels.spacing, target)
    coords = _output_coords(out_dims, labels.spacing, target)
    idx = [
        np.clip(np.floor(c + 0.5).astype(np.int64), 0, n - 1)
        for c, n in zip(coords, labels.dims)
    ]
    out = labels.data[np.ix_(idx[0], idx[1], idx[2])]
    return LabelVolume(out, target)


def normalize_bone_window(vol: Volume, w: WindowConfig = WindowConfig()) -> Volume:
    """Min-max normalize intensities into [0, 1] over the window [lo, hi]."""
    scaled = (vol.data.astype(np.float64) - w.lo) / (w.hi - w.lo)
    return Volume(np.clip(scaled, 0.0, 1.0).astype(np.float32), vol.spacing)
