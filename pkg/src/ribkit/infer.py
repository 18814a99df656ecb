"""Sliding-window inference over the vertical axis with a pluggable predictor.

A predictor is any callable ``predictor(patch, z_start)`` taking a
normalized intensity patch (:class:`~ribkit.volume.Volume`) plus the
patch's vertical offset in the parent volume, and returning

* binary logits, shape ``(nx, ny, pz)``
* class logits, channel-first shape ``(12, nx, ny, pz)``

The offset lets oracle-style predictors align with the parent volume;
real models should ignore it. Patch windows of a fixed physical extent
overlap by half a patch, probabilities (after sigmoid / per-voxel
softmax) are averaged where windows overlap, and labels are decoded by
thresholding the binary probability and taking the per-voxel argmax of
the class probabilities, side-encoded across the midline.
"""

from __future__ import annotations

import struct
import subprocess
from dataclasses import dataclass

import numpy as np

from .volume import NUM_TYPES, LabelVolume, Volume, voxel_centers_mm

DEFAULT_PATCH_MM = 320.0
DEFAULT_THRESHOLD = 0.25


class PredictorProtocolError(RuntimeError):
    """A predictor returned malformed output or broke the wire protocol."""


@dataclass(frozen=True)
class PatchPlan:
    """Vertical (start, end) voxel windows covering [0, nz)."""

    windows: tuple[tuple[int, int], ...]
    patch_voxels: int

    def __iter__(self):
        return iter(self.windows)

    def __len__(self):
        return len(self.windows)


@dataclass(frozen=True)
class DecodeConfig:
    """Binary threshold and side-to-label-range convention.

    By default voxels right of the midline (x >= midline) decode to
    labels 1-12 and left voxels to 13-24; ``swap_sides`` flips that for
    datasets with the opposite convention.
    """

    binary_threshold: float = DEFAULT_THRESHOLD
    swap_sides: bool = False

    def __post_init__(self):
        if not 0.0 < self.binary_threshold < 1.0:
            raise ValueError(
                f"binary_threshold must be in (0, 1), got {self.binary_threshold}"
            )


def plan_patches(nz: int, spacing_z: float, patch_mm: float = DEFAULT_PATCH_MM) -> PatchPlan:
    """Half-overlapping windows of a fixed physical extent along z.

    The final window is shifted back (not shrunk) to end exactly at nz;
    volumes shorter than one patch get a single full-volume window.
    """
    if nz < 1:
        raise ValueError(f"nz must be >= 1, got {nz}")
    patch_voxels = max(1, int(np.floor(patch_mm / spacing_z + 0.5)))
    if nz <= patch_voxels:
        return PatchPlan(((0, nz),), min(patch_voxels, nz))
    stride = max(1, patch_voxels // 2)
    starts = []
    s = 0
    while s + patch_voxels < nz:
        starts.append(s)
        s += stride
    starts.append(nz - patch_voxels)
    return PatchPlan(tuple((s, s + patch_voxels) for s in starts), patch_voxels)


def sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x, dtype=np.float64)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    e = np.exp(x[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def softmax_channels(x: np.ndarray) -> np.ndarray:
    """Softmax over axis 0 (the channel axis)."""
    shifted = x - x.max(axis=0, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=0, keepdims=True)


def run_inference(vol: Volume, predictor, plan: PatchPlan | None = None):
    """Predict per-patch, average probabilities over overlaps.

    Returns ``(binary_prob, class_prob)`` where binary_prob is a Volume
    and class_prob a float32 array of shape (12, nx, ny, nz). Patches are
    evaluated and accumulated in plan order, so output is deterministic.
    """
    if plan is None:
        plan = plan_patches(vol.dims[2], vol.spacing.dz)
    nx, ny, nz = vol.dims
    bin_acc = np.zeros((nx, ny, nz), dtype=np.float64)
    cls_acc = np.zeros((NUM_TYPES, nx, ny, nz), dtype=np.float32)
    coverage = np.zeros(nz, dtype=np.int32)

    for i, (s, e) in enumerate(plan):
        patch = Volume(vol.data[:, :, s:e], vol.spacing)
        bin_logits, cls_logits = predictor(patch, s)
        bin_logits = np.asarray(bin_logits)
        cls_logits = np.asarray(cls_logits)
        expect = (nx, ny, e - s)
        if bin_logits.shape != expect:
            raise PredictorProtocolError(
                f"patch {i} ({s},{e}): binary logits shape {bin_logits.shape}, "
                f"expected {expect}"
            )
        if cls_logits.shape != (NUM_TYPES, *expect):
            raise PredictorProtocolError(
                f"patch {i} ({s},{e}): class logits shape {cls_logits.shape}, "
                f"expected {(NUM_TYPES, *expect)}"
            )
        bin_acc[:, :, s:e] += sigmoid(bin_logits.astype(np.float64))
        cls_acc[:, :, :, s:e] += softmax_channels(cls_logits.astype(np.float32))
        coverage[s:e] += 1

    if (coverage < 1).any():
        raise PredictorProtocolError("patch plan does not cover the volume")
    bin_prob = (bin_acc / coverage[None, None, :]).astype(np.float32)
    cls_prob = cls_acc / coverage[None, None, None, :].astype(np.float32)
    return Volume(bin_prob, vol.spacing), cls_prob


def decode(
    binary_prob: Volume,
    class_prob: np.ndarray,
    cfg: DecodeConfig = DecodeConfig(),
    midline_x: float | None = None,
) -> LabelVolume:
    """Threshold + per-voxel argmax + side encoding.

    Foreground is binary_prob strictly above the threshold; the type is
    the lowest-index maximal class channel; labels are type (right of the
    midline) or type + 12 (left).
    """
    nx = binary_prob.dims[0]
    if midline_x is None:
        midline_x = nx * binary_prob.spacing.dx / 2.0
    fg = binary_prob.data > cfg.binary_threshold
    types = (np.argmax(class_prob, axis=0) + 1).astype(np.uint8)
    right = voxel_centers_mm(nx, binary_prob.spacing.dx) >= midline_x
    if cfg.swap_sides:
        right = ~right
    labels = np.where(right[:, None, None], types, types + NUM_TYPES)
    labels = np.where(fg, labels, 0).astype(np.uint8)
    return LabelVolume(labels, binary_prob.spacing)


# ----------------------------------------------------------------------
# predictors
# ----------------------------------------------------------------------

class OracleLabelPredictor:
    """Emits logits that reproduce a reference label volume.

    Rib voxels get a large positive binary logit and a one-hot class
    logit at their type; background gets the negative binary logit and a
    uniform class row. Wrap a corrupted label volume to simulate an
    imperfect model.
    """

    def __init__(self, labels: LabelVolume, logit_scale: float = 10.0):
        self.labels = labels
        self.scale = float(logit_scale)

    def __call__(self, patch: Volume, z_start: int):
        lab = self.labels.data[:, :, z_start:z_start + patch.dims[2]]
        if lab.shape != patch.dims:
            raise PredictorProtocolError(
                f"oracle labels {self.labels.dims} do not cover patch at z={z_start}"
            )
        fg = lab > 0
        bin_logits = np.where(fg, self.scale, -self.scale).astype(np.float32)
        types = (lab.astype(np.int16) - 1) % NUM_TYPES  # 0-based; background irrelevant
        cls_logits = np.full((NUM_TYPES, *patch.dims), -self.scale, dtype=np.float32)
        chan = np.where(fg, types, 0)
        np.put_along_axis(cls_logits, chan[None], np.where(fg, self.scale, -self.scale)[None].astype(np.float32), axis=0)
        return bin_logits, cls_logits


class ConstantPredictor:
    """Constant binary probability everywhere, uniform class channels."""

    def __init__(self, binary_prob: float):
        if not 0.0 < binary_prob < 1.0:
            raise ValueError(f"binary_prob must be in (0, 1), got {binary_prob}")
        self.logit = float(np.log(binary_prob / (1.0 - binary_prob)))

    def __call__(self, patch: Volume, z_start: int):
        bin_logits = np.full(patch.dims, self.logit, dtype=np.float32)
        cls_logits = np.zeros((NUM_TYPES, *patch.dims), dtype=np.float32)
        return bin_logits, cls_logits


class GlobalFieldPredictor:
    """Serves slices of fixed whole-volume logit fields (for testing the
    averaging identity: output must reproduce the global field)."""

    def __init__(self, bin_logits: np.ndarray, cls_logits: np.ndarray):
        self.bin = np.asarray(bin_logits)
        self.cls = np.asarray(cls_logits)

    def __call__(self, patch: Volume, z_start: int):
        e = z_start + patch.dims[2]
        return self.bin[:, :, z_start:e], self.cls[:, :, :, z_start:e]


class SubprocessPredictor:
    """Drives an external model process over a length-prefixed frame pipe.

    Wire format (all little-endian): each frame is a uint32 byte length
    followed by the payload. The request payload is three uint32 patch
    dims (nx, ny, nz) followed by nx*ny*nz float32 intensities (C order).
    The process must answer with two frames: nx*ny*nz float32 binary
    logits, then 12*nx*ny*nz float32 class logits (channel-first, C
    order). The patch offset is not transmitted.
    """

    def __init__(self, cmd: list[str]):
        self.proc = subprocess.Popen(
            cmd, stdin=subprocess.PIPE, stdout=subprocess.PIPE
        )

    def _read_frame(self) -> bytes:
        head = self.proc.stdout.read(4)
        if len(head) != 4:
            raise PredictorProtocolError(
                f"predictor closed the pipe mid-frame (got {len(head)}/4 header bytes)"
            )
        (n,) = struct.unpack("<I", head)
        payload = self.proc.stdout.read(n)
        if len(payload) != n:
            raise PredictorProtocolError(
                f"short frame from predictor: got {len(payload)}/{n} bytes"
            )
        return payload

    def __call__(self, patch: Volume, z_start: int):
        nx, ny, nz = patch.dims
        payload = struct.pack("<III", nx, ny, nz) + patch.data.astype(
            "<f4"
        ).tobytes(order="C")
        try:
            self.proc.stdin.write(struct.pack("<I", len(payload)) + payload)
            self.proc.stdin.flush()
        except (BrokenPipeError, OSError) as e:
            raise PredictorProtocolError(f"predictor process is gone: {e}") from None
        n_vox = nx * ny * nz
        bin_raw = self._read_frame()
        cls_raw = self._read_frame()
        if len(bin_raw) != 4 * n_vox:
            raise PredictorProtocolError(
                f"binary payload is {len(bin_raw)} bytes, expected {4 * n_vox}"
            )
        if len(cls_raw) != 4 * NUM_TYPES * n_vox:
            raise PredictorProtocolError(
                f"class payload is {len(cls_raw)} bytes, expected {4 * NUM_TYPES * n_vox}"
            )
        bin_logits = np.frombuffer(bin_raw, dtype="<f4").reshape(nx, ny, nz)
        cls_logits = np.frombuffer(cls_raw, dtype="<f4").reshape(NUM_TYPES, nx, ny, nz)
        return bin_logits, cls_logits

    def close(self):
        if self.proc.stdin:
            self.proc.stdin.close()
        self.proc.wait(timeout=10)

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()
