#!/usr/bin/env python3
"""Tour: the two-head loss and its finite-difference verification.

The total loss couples a binary rib/background head (dice + focal + bce)
with a 12-way type head (cross-entropy + softargmax distance), where the
type terms only see voxels that truly contain rib. Every term ships an
analytic gradient; `gradient_check` compares them against central
finite differences.
"""

import numpy as np

from ribkit import BinaryField, ClassField, LossConfig, hierarchical_loss
from ribkit.losses import (
    bce_loss,
    ce_loss,
    dice_loss,
    focal_loss,
    gradient_check,
    softargmax_loss,
)

rng = np.random.default_rng(0)
shape = (6, 6, 6)

bin_t = (rng.random(shape) < 0.3).astype(float)
bin_p = np.clip(bin_t * 0.8 + rng.uniform(0, 0.2, shape), 0.01, 0.99)
cls_t = rng.integers(1, 13, size=shape)
cls_p = rng.uniform(0.05, 1.0, size=(12, *shape))
cls_p /= cls_p.sum(axis=0, keepdims=True)

f = BinaryField(bin_p, bin_t)
c = ClassField(cls_p, cls_t)
rib = f.rib_mask

print("binary head terms on a noisy-but-decent prediction:")
print(f"  dice  = {dice_loss(f):.4f}")
print(f"  focal = {focal_loss(f, gamma=2.0):.4f}")
print(f"  bce   = {bce_loss(f):.4f}")
print("type head terms (rib voxels only):")
print(f"  ce          = {ce_loss(c, rib):.4f}  (uniform would be ln 12 = {np.log(12):.4f})")
print(f"  softargmax  = {softargmax_loss(c, rib):.4f}")
print(f"combined (alpha = 0.05): {hierarchical_loss(f, c, LossConfig()):.4f}")

print("\ngradient check vs central differences (h = 1e-4):")
for name, result in gradient_check(size=4, trials=5, seed=1).items():
    print(f"  {name:<12} max rel err {result['max_rel_err']:.2e}")
