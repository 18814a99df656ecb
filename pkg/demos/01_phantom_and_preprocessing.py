#!/usr/bin/env python3
"""Tour: build a synthetic ribcage and run the CT preprocessing chain.

The phantom is the workhorse test fixture of this package: a fully
deterministic ribcage with exact labels and a known spine centerline.
This script generates one, looks at its anatomy, and pushes the
intensity volume through resampling + bone-window normalization.
"""

import numpy as np

from ribkit import (
    PhantomConfig,
    Spacing,
    WindowConfig,
    generate_phantom,
    label_components,
    normalize_bone_window,
    resample_linear,
)
from ribkit.volume import LabelVolume

cfg = PhantomConfig(seed=42)
vol, labels, centerline = generate_phantom(cfg)

print(f"phantom dims {vol.dims} at {cfg.spacing.as_tuple()} mm")
print(f"intensity range [{vol.data.min():.0f}, {vol.data.max():.0f}] HU")
print(f"labels present: {sorted(labels.label_set())}")

binary = LabelVolume((labels.data > 0).astype(np.uint8), labels.spacing)
cs = label_components(binary, connectivity=26)
print(f"\nconnected components: {len(cs)} (one per rib)")
for c in cs.components[:3]:
    print(f"  component {c.id}: {c.voxel_count} voxels, "
          f"centroid z = {c.centroid_mm[2]:.0f} mm")

print(f"\ncenterline: {len(centerline.points)} points along "
      f"x = {centerline.points[0, 0]:.0f} mm, y = {centerline.points[0, 1]:.0f} mm")

# preprocessing: 2 mm isotropic resample, then the bone window
iso = resample_linear(vol, Spacing(4.0, 4.0, 4.0))
print(f"\nresampled to 4 mm: dims {iso.dims}")

norm = normalize_bone_window(iso, WindowConfig(lo=-450, hi=1050))
print(f"after bone window: range [{norm.data.min():.3f}, {norm.data.max():.3f}]")
frac_bone = float((norm.data > 0.6).mean())
print(f"fraction of voxels in the bony range: {frac_bone:.3%}")
