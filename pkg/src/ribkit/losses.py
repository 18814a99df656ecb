"""Reference implementations of the combined segmentation/labeling loss.

The total loss is

    (dice + focal + bce)[binary head]  +  alpha * (ce + softargmax)[class head]

where the classification terms are evaluated only at voxels that contain
a rib in the binary target, keeping the 12 type classes balanced. Every
term comes with an analytic gradient with respect to the probabilities,
verified against central finite differences (see ``gradient_check``).

Class probability arrays are channel-first: shape (12, *spatial).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .volume import NUM_TYPES

log = logging.getLogger(__name__)

PROB_EPS = 1e-7  # clamp bound so log() never sees 0 or 1
SAM_NORM = NUM_TYPES - 1  # max distance between class indices


@dataclass(frozen=True)
class LossConfig:
    alpha: float = 0.05
    focal_gamma: float = 2.0
    dice_epsilon: float = 1e-5

    def __post_init__(self):
        if self.alpha <= 0:
            raise ValueError(f"alpha must be > 0, got {self.alpha}")
        if self.focal_gamma < 0:
            raise ValueError(f"focal_gamma must be >= 0, got {self.focal_gamma}")
        if self.dice_epsilon <= 0:
            raise ValueError(f"dice_epsilon must be > 0, got {self.dice_epsilon}")


@dataclass(frozen=True)
class BinaryField:
    """Binary-head probabilities paired with a {0,1} target."""

    probs: np.ndarray
    targets: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.probs, dtype=np.float64)
        t = np.asarray(self.targets, dtype=np.float64)
        if p.shape != t.shape:
            raise ValueError(f"probs shape {p.shape} != targets shape {t.shape}")
        if p.size and (p.min() < 0 or p.max() > 1):
            raise ValueError("binary probabilities must lie in [0, 1]")
        if not np.isin(t, (0.0, 1.0)).all():
            raise ValueError("binary targets must be 0 or 1")
        object.__setattr__(self, "probs", p)
        object.__setattr__(self, "targets", t)

    @property
    def rib_mask(self) -> np.ndarray:
        return self.targets == 1.0


@dataclass(frozen=True)
class ClassField:
    """Per-voxel 12-way probabilities (channel-first) with type targets.

    ``targets`` holds types 1..12 and is only meaningful where the paired
    binary target is 1; other voxels may carry 0.
    """

    probs: np.ndarray
    targets: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.probs, dtype=np.float64)
        t = np.asarray(self.targets, dtype=np.int64)
        if p.ndim != t.ndim + 1 or p.shape[0] != NUM_TYPES or p.shape[1:] != t.shape:
            raise ValueError(
                f"class probs must have shape (12, *spatial); got {p.shape} "
                f"against targets {t.shape}"
            )
        sums = p.sum(axis=0)
        if p.size and np.abs(sums - 1.0).max() > 1e-5:
            raise ValueError("class probabilities must sum to 1 per voxel (within 1e-5)")
        if t.size and (t.min() < 0 or t.max() > NUM_TYPES):
            raise ValueError("class targets must lie in 0..12")
        object.__setattr__(self, "probs", p)
        object.__setattr__(self, "targets", t)


def _clamp(p: np.ndarray) -> np.ndarray:
    return np.clip(p, PROB_EPS, 1.0 - PROB_EPS)


# ----------------------------------------------------------------------
# binary-head terms: value + gradient w.r.t. the probabilities
# ----------------------------------------------------------------------

def dice_value_grad(p: np.ndarray, t: np.ndarray, eps: float = 1e-5):
    p = np.asarray(p, dtype=np.float64)
    t = np.asarray(t, dtype=np.float64)
    num = 2.0 * float((p * t).sum()) + eps
    den = float(p.sum() + t.sum()) + eps
    value = 1.0 - num / den
    grad = -(2.0 * t * den - num) / den**2
    return value, grad


def focal_value_grad(p: np.ndarray, t: np.ndarray, gamma: float = 2.0):
    p = _clamp(np.asarray(p, dtype=np.float64))
    t = np.asarray(t, dtype=np.float64)
    pt = np.where(t == 1.0, p, 1.0 - p)
    value = float(np.mean(-((1.0 - pt) ** gamma) * np.log(pt)))
    # d/dpt of -(1-pt)^g log(pt), then chain through pt = p or 1-p
    dpt = gamma * (1.0 - pt) ** (gamma - 1.0) * np.log(pt) - (1.0 - pt) ** gamma / pt
    grad = np.where(t == 1.0, dpt, -dpt) / p.size
    return value, grad


def bce_value_grad(p: np.ndarray, t: np.ndarray):
    p = _clamp(np.asarray(p, dtype=np.float64))
    t = np.asarray(t, dtype=np.float64)
    value = float(np.mean(-(t * np.log(p) + (1.0 - t) * np.log(1.0 - p))))
    grad = (-(t / p) + (1.0 - t) / (1.0 - p)) / p.size
    return value, grad


# ----------------------------------------------------------------------
# classification-head terms, evaluated only over rib voxels
# ----------------------------------------------------------------------

def _masked_targets(probs, targets, rib_mask):
    probs = np.asarray(probs, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.int64)
    mask = np.asarray(rib_mask, dtype=bool)
    if mask.shape != targets.shape:
        raise ValueError(f"rib mask shape {mask.shape} != targets shape {targets.shape}")
    flat_p = probs.reshape(NUM_TYPES, -1)
    flat_t = targets.ravel()
    sel = np.flatnonzero(mask.ravel())
    return flat_p, flat_t, sel


def ce_value_grad(probs: np.ndarray, targets: np.ndarray, rib_mask: np.ndarray):
    flat_p, flat_t, sel = _masked_targets(probs, targets, rib_mask)
    grad = np.zeros_like(flat_p)
    if sel.size == 0:
        log.warning("ce_loss over an empty rib mask; defined as 0")
        return 0.0, grad.reshape(np.asarray(probs).shape)
    pt = _clamp(flat_p[flat_t[sel] - 1, sel])
    value = float(np.mean(-np.log(pt)))
    grad[flat_t[sel] - 1, sel] = -1.0 / (pt * sel.size)
    return value, grad.reshape(np.asarray(probs).shape)


def softargmax_value_grad(probs: np.ndarray, targets: np.ndarray, rib_mask: np.ndarray):
    flat_p, flat_t, sel = _masked_targets(probs, targets, rib_mask)
    grad = np.zeros_like(flat_p)
    if sel.size == 0:
        log.warning("softargmax_loss over an empty rib mask; defined as 0")
        return 0.0, grad.reshape(np.asarray(probs).shape)
    k = np.arange(1, NUM_TYPES + 1, dtype=np.float64)
    expected = k @ flat_p[:, sel]
    diff = expected - flat_t[sel].astype(np.float64)
    value = float(np.mean(np.abs(diff) / SAM_NORM))
    grad[:, sel] = np.sign(diff)[None, :] * k[:, None] / (SAM_NORM * sel.size)
    return value, grad.reshape(np.asarray(probs).shape)


# ----------------------------------------------------------------------
# public loss surface
# ----------------------------------------------------------------------

def dice_loss(f: BinaryField, eps: float = 1e-5) -> float:
    return dice_value_grad(f.probs, f.targets, eps)[0]


def focal_loss(f: BinaryField, gamma: float = 2.0) -> float:
    return focal_value_grad(f.probs, f.targets, gamma)[0]


def bce_loss(f: BinaryField) -> float:
    return bce_value_grad(f.probs, f.targets)[0]


def ce_loss(c: ClassField, rib_mask: np.ndarray) -> float:
    return ce_value_grad(c.probs, c.targets, rib_mask)[0]


def softargmax_loss(c: ClassField, rib_mask: np.ndarray) -> float:
    return softargmax_value_grad(c.probs, c.targets, rib_mask)[0]


def hierarchical_loss(f: BinaryField, c: ClassField, cfg: LossConfig = LossConfig()) -> float:
    """dice + focal + bce on the binary head plus alpha * (ce + softargmax)
    on the class head, the latter restricted to rib voxels."""
    return hierarchical_value_grads(f.probs, f.targets, c.probs, c.targets, cfg)[0]


def hierarchical_value_grads(bin_p, bin_t, cls_p, cls_t, cfg: LossConfig = LossConfig()):
    """Total loss plus gradients w.r.t. binary and class probabilities."""
    rib_mask = np.asarray(bin_t) == 1
    d, gd = dice_value_grad(bin_p, bin_t, cfg.dice_epsilon)
    fo, gf = focal_value_grad(bin_p, bin_t, cfg.focal_gamma)
    b, gb = bce_value_grad(bin_p, bin_t)
    ce, gce = ce_value_grad(cls_p, cls_t, rib_mask)
    sam, gsam = softargmax_value_grad(cls_p, cls_t, rib_mask)
    value = d + fo + b + cfg.alpha * (ce + sam)
    return value, gd + gf + gb, cfg.alpha * (gce + gsam)


# ----------------------------------------------------------------------
# finite-difference verification
# ----------------------------------------------------------------------

def finite_difference_grad(fn, x: np.ndarray, h: float = 1e-4) -> np.ndarray:
    """Central-difference gradient of scalar ``fn`` at ``x``, elementwise."""
    x = np.array(x, dtype=np.float64)  # private copy; perturbed in place
    grad = np.zeros_like(x)
    flat = x.ravel()
    gflat = grad.ravel()
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        f_hi = fn(x)
        flat[i] = orig - h
        f_lo = fn(x)
        flat[i] = orig
        gflat[i] = (f_hi - f_lo) / (2.0 * h)
    return grad


def max_relative_error(analytic: np.ndarray, numeric: np.ndarray) -> tuple[float, tuple]:
    """Worst elementwise relative error and its index."""
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-8)
    rel = np.abs(analytic - numeric) / denom
    idx = np.unravel_index(int(np.argmax(rel)), rel.shape)
    return float(rel[idx]), idx


def _random_fields(rng: np.random.Generator, shape):
    bin_p = rng.uniform(0.05, 0.95, size=shape)
    bin_t = (rng.random(shape) < 0.5).astype(np.float64)
    if not bin_t.any():  # keep at least one rib voxel so ce/sam are active
        bin_t.ravel()[0] = 1.0
    cls_p = rng.uniform(0.05, 0.95, size=(NUM_TYPES, *shape))
    cls_p /= cls_p.sum(axis=0, keepdims=True)
    cls_t = rng.integers(1, NUM_TYPES + 1, size=shape)
    # keep the softargmax |E - t| kink away from the finite-difference step:
    # where the expected index lands on the target, move the target one off
    expected = np.tensordot(np.arange(1, NUM_TYPES + 1, dtype=np.float64), cls_p, axes=1)
    near = np.abs(expected - cls_t) < 0.01
    cls_t = np.where(near, np.where(cls_t < NUM_TYPES, cls_t + 1, cls_t - 1), cls_t)
    return bin_p, bin_t, cls_p, cls_t


def gradient_check(
    size: int = 4,
    trials: int = 20,
    seed: int = 0,
    h: float = 1e-4,
    cfg: LossConfig = LossConfig(),
) -> dict[str, dict]:
    """Compare analytic and central-difference gradients for every loss.

    Returns per-loss worst relative error plus the offending trial and
    coordinates, over ``trials`` random fields of shape (size, size, size).
    """
    rng = np.random.default_rng(seed)
    shape = (size, size, size)
    results = {
        name: {"max_rel_err": 0.0, "trial": -1, "index": ()}
        for name in ("dice", "focal", "bce", "ce", "softargmax", "hierarchical")
    }

    def record(name, trial, analytic, numeric):
        err, idx = max_relative_error(analytic, numeric)
        if err > results[name]["max_rel_err"]:
            results[name].update(max_rel_err=err, trial=trial, index=idx)

    for trial in range(trials):
        bin_p, bin_t, cls_p, cls_t = _random_fields(rng, shape)
        rib = bin_t == 1

        record(
            "dice", trial, dice_value_grad(bin_p, bin_t, cfg.dice_epsilon)[1],
            finite_difference_grad(lambda p: dice_value_grad(p, bin_t, cfg.dice_epsilon)[0], bin_p, h),
        )
        record(
            "focal", trial, focal_value_grad(bin_p, bin_t, cfg.focal_gamma)[1],
            finite_difference_grad(lambda p: focal_value_grad(p, bin_t, cfg.focal_gamma)[0], bin_p, h),
        )
        record(
            "bce", trial, bce_value_grad(bin_p, bin_t)[1],
            finite_difference_grad(lambda p: bce_value_grad(p, bin_t)[0], bin_p, h),
        )
        record(
            "ce", trial, ce_value_grad(cls_p, cls_t, rib)[1],
            finite_difference_grad(lambda p: ce_value_grad(p, cls_t, rib)[0], cls_p, h),
        )
        record(
            "softargmax", trial, softargmax_value_grad(cls_p, cls_t, rib)[1],
            finite_difference_grad(lambda p: softargmax_value_grad(p, cls_t, rib)[0], cls_p, h),
        )
        _, gbin, gcls = hierarchical_value_grads(bin_p, bin_t, cls_p, cls_t, cfg)
        record(
            "hierarchical", trial, gbin,
            finite_difference_grad(
                lambda p: hierarchical_value_grads(p, bin_t, cls_p, cls_t, cfg)[0], bin_p, h
            ),
        )
        record(
            "hierarchical", trial, gcls,
            finite_difference_grad(
                lambda p: hierarchical_value_grads(bin_p, bin_t, p, cls_t, cfg)[0], cls_p, h
            ),
        )
    return results
