"""File formats: NIfTI-1 volumes, centerline CSV, metric reports.

The NIfTI support is deliberately narrow and auditable: single-file
(.nii / .nii.gz) little-endian NIfTI-1, 3D, datatypes uint8 (2),
int16 (4) and float32 (16). Spacing magnitudes are taken from pixdim;
the affine's axis permutations/flips are NOT applied -- volumes are
assumed to share a consistent orientation. Anything else is rejected
with a descriptive error rather than silently misread.
"""

from __future__ import annotations

import csv
import gzip
import json
import struct
from dataclasses import dataclass

import numpy as np

from .metrics import MetricsReport
from .refine import Centerline
from .volume import MAX_LABEL, LabelVolume, Spacing, Volume

HEADER_SIZE = 348
VOX_OFFSET = 352
MAGIC = b"n+1\x00"
_DTYPES = {2: np.dtype("<u1"), 4: np.dtype("<i2"), 16: np.dtype("<f4")}
_BITPIX = {2: 8, 4: 16, 16: 32}

# field -> (offset, struct format), little-endian; only what we touch
_FIELDS = {
    "sizeof_hdr": (0, "<i"),
    "dim": (40, "<8h"),
    "datatype": (70, "<h"),
    "bitpix": (72, "<h"),
    "pixdim": (76, "<8f"),
    "vox_offset": (108, "<f"),
    "scl_slope": (112, "<f"),
    "scl_inter": (116, "<f"),
    "xyzt_units": (123, "<b"),
    "descrip": (148, "<80s"),
    "qform_code": (252, "<h"),
    "sform_code": (254, "<h"),
    "srow_x": (280, "<4f"),
    "srow_y": (296, "<4f"),
    "srow_z": (312, "<4f"),
    "magic": (344, "<4s"),
}


class NiftiFormatError(ValueError):
    """File is not in the supported NIfTI-1 envelope."""


class CenterlineFormatError(ValueError):
    """Centerline CSV violates the z_mm,x_mm,y_mm schema."""


@dataclass(frozen=True)
class NiftiHeader:
    dims: tuple[int, int, int]
    datatype: int
    spacing: Spacing
    scl_slope: float
    scl_inter: float
    vox_offset: int


def _unpack(buf: bytes, name: str):
    off, fmt = _FIELDS[name]
    vals = struct.unpack_from(fmt, buf, off)
    return vals[0] if len(vals) == 1 else vals


def _read_bytes(path) -> bytes:
    with open(path, "rb") as f:
        raw = f.read()
    if raw[:2] == b"\x1f\x8b":  # gzip container, regardless of extension
        raw = gzip.decompress(raw)
    return raw


def parse_header(raw: bytes) -> NiftiHeader:
    if len(raw) < HEADER_SIZE:
        raise OSError(f"file too short for a NIfTI-1 header: {len(raw)}/{HEADER_SIZE} bytes")
    size = _unpack(raw, "sizeof_hdr")
    if size != HEADER_SIZE:
        if struct.unpack(">i", raw[:4])[0] == HEADER_SIZE:
            raise NiftiFormatError("big-endian NIfTI-1 files are not supported")
        raise NiftiFormatError(f"sizeof_hdr is {size}, expected {HEADER_SIZE}")
    magic = _unpack(raw, "magic")
    if magic != MAGIC:
        raise NiftiFormatError(
            f"magic is {magic!r}; only single-file NIfTI-1 ('n+1') is supported"
        )
    dim = _unpack(raw, "dim")
    ndim = dim[0]
    if ndim < 3 or ndim > 7 or any(d not in (0, 1) for d in dim[4:ndim + 1]):
        raise NiftiFormatError(f"only 3D volumes are supported, got dim={dim}")
    dims = tuple(int(d) for d in dim[1:4])
    if min(dims) < 1:
        raise NiftiFormatError(f"non-positive dims {dims}")
    datatype = _unpack(raw, "datatype")
    if datatype not in _DTYPES:
        raise NiftiFormatError(
            f"datatype code {datatype} unsupported (supported: uint8=2, int16=4, float32=16)"
        )
    bitpix = _unpack(raw, "bitpix")
    if bitpix != _BITPIX[datatype]:
        raise NiftiFormatError(f"bitpix {bitpix} inconsistent with datatype {datatype}")
    pixdim = _unpack(raw, "pixdim")
    try:
        spacing = Spacing(float(pixdim[1]), float(pixdim[2]), float(pixdim[3]))
    except ValueError as e:
        raise NiftiFormatError(f"bad pixdim: {e}") from None
    vox_offset = int(_unpack(raw, "vox_offset"))
    if vox_offset < HEADER_SIZE:
        raise NiftiFormatError(f"vox_offset {vox_offset} points inside the header")
    return NiftiHeader(
        dims=dims,
        datatype=int(datatype),
        spacing=spacing,
        scl_slope=float(_unpack(raw, "scl_slope")),
        scl_inter=float(_unpack(raw, "scl_inter")),
        vox_offset=vox_offset,
    )


def read_nifti(path, as_labels: bool = False):
    """Load a supported NIfTI-1 file as a Volume (or LabelVolume).

    Intensity volumes apply scl_slope/scl_inter when set and come back
    float32. With ``as_labels=True`` the file must hold unscaled integers
    in 0..24.
    """
    raw = _read_bytes(path)
    hdr = parse_header(raw)
    n_vox = int(np.prod(hdr.dims))
    dtype = _DTYPES[hdr.datatype]
    need = n_vox * dtype.itemsize
    payload = raw[hdr.vox_offset:hdr.vox_offset + need]
    if len(payload) != need:
        raise OSError(
            f"{path}: truncated payload, got {len(payload)} of {need} bytes "
            f"for dims {hdr.dims}"
        )
    data = np.frombuffer(payload, dtype=dtype).reshape(hdr.dims, order="F")

    slope = hdr.scl_slope if hdr.scl_slope != 0.0 else 1.0
    scaled = (slope, hdr.scl_inter) != (1.0, 0.0)
    if as_labels:
        if hdr.datatype == 16:
            raise NiftiFormatError("label volumes must be integer-typed, got float32")
        if scaled:
            raise NiftiFormatError("label volumes must not carry scl_slope/scl_inter scaling")
        if data.size and (data.min() < 0 or data.max() > MAX_LABEL):
            raise NiftiFormatError(
                f"label values outside 0..{MAX_LABEL}: range [{data.min()}, {data.max()}]"
            )
        return LabelVolume(data.astype(np.uint8), hdr.spacing)
    out = data.astype(np.float32)
    if scaled:
        out = (out * np.float32(slope) + np.float32(hdr.scl_inter)).astype(np.float32)
    return Volume(out, hdr.spacing)


def _build_header(dims, spacing: Spacing, datatype: int) -> bytes:
    buf = bytearray(HEADER_SIZE)

    def put(name, *vals):
        off, fmt = _FIELDS[name]
        struct.pack_into(fmt, buf, off, *vals)

    put("sizeof_hdr", HEADER_SIZE)
    put("dim", 3, dims[0], dims[1], dims[2], 1, 1, 1, 1)
    put("datatype", datatype)
    put("bitpix", _BITPIX[datatype])
    put("pixdim", 1.0, spacing.dx, spacing.dy, spacing.dz, 0, 0, 0, 0)
    put("vox_offset", float(VOX_OFFSET))
    put("scl_slope", 1.0)
    put("scl_inter", 0.0)
    put("xyzt_units", 2)  # millimeters
    put("descrip", b"ribkit")
    put("qform_code", 0)
    put("sform_code", 1)
    put("srow_x", spacing.dx, 0, 0, 0)
    put("srow_y", 0, spacing.dy, 0, 0)
    put("srow_z", 0, 0, spacing.dz, 0)
    put("magic", MAGIC)
    return bytes(buf)


def write_nifti(obj, path, gzip_compress: bool | None = None):
    """Write a Volume (float32) or LabelVolume (uint8) as single-file NIfTI-1.

    ``gzip_compress=None`` infers compression from a .gz suffix. Output
    bytes are deterministic (no timestamps).
    """
    if isinstance(obj, LabelVolume):
        datatype, data = 2, obj.data.astype("<u1")
    elif isinstance(obj, Volume):
        datatype, data = 16, obj.data.astype("<f4")
    else:
        raise TypeError(f"expected Volume or LabelVolume, got {type(obj).__name__}")
    header = _build_header(obj.dims, obj.spacing, datatype)
    payload = header + b"\x00" * (VOX_OFFSET - HEADER_SIZE) + data.tobytes(order="F")
    if gzip_compress is None:
        gzip_compress = str(path).endswith(".gz")
    if gzip_compress:
        payload = gzip.compress(payload, mtime=0)
    with open(path, "wb") as f:
        f.write(payload)


def read_centerline(path) -> Centerline:
    """Parse a z_mm,x_mm,y_mm CSV into a Centerline."""
    points = []
    with open(path, newline="") as f:
        reader = csv.reader(f)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != ["z_mm", "x_mm", "y_mm"]:
            raise CenterlineFormatError(
                f"{path}: expected header 'z_mm,x_mm,y_mm', got {header}"
            )
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            try:
                z, x, y = (float(v) for v in row)
            except ValueError:
                raise CenterlineFormatError(f"{path}: non-numeric row {lineno}: {row}") from None
            if points and z <= points[-1][2]:
                raise CenterlineFormatError(
                    f"{path}: z must be strictly increasing, violated at row {lineno} "
                    f"(z={z} after z={points[-1][2]})"
                )
            points.append((x, y, z))
    if len(points) < 2:
        raise CenterlineFormatError(f"{path}: need at least 2 centerline points, got {len(points)}")
    return Centerline(np.array(points, dtype=np.float64))


def write_centerline(line: Centerline, path):
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["z_mm", "x_mm", "y_mm"])
        for x, y, z in line.points:
            w.writerow([f"{z:g}", f"{x:g}", f"{y:g}"])


# ----------------------------------------------------------------------
# metric reports: percentages with one decimal, as in the result tables
# ----------------------------------------------------------------------

def _pct(value) -> str:
    return "NA" if value is None else f"{value:.1f}"


def _pct_num(value):
    return None if value is None else round(value, 1)


def report_to_dict(report: MetricsReport) -> dict:
    return {
        "case_id": report.case_id,
        "cut_radius_mm": report.cut_radius_mm,
        "label_accuracy": {k: _pct_num(v) for k, v in report.label_accuracy.items()},
        "dice_avg_pct": _pct_num(None if report.dice_avg is None else 100 * report.dice_avg),
        "dice_min_pct": _pct_num(None if report.dice_min is None else 100 * report.dice_min),
        "hallucinated_labels": report.hallucinated_labels,
        "per_rib": [
            {
                "rib_label": s.rib_label,
                "rib_type": s.rib_type,
                "gt_present": s.gt_present,
                "recall": None if s.recall is None else round(s.recall, 6),
                "dice": None if s.dice is None else round(s.dice, 6),
                "gt_voxels": s.gt_voxels,
                "pred_voxels": s.pred_voxels,
                "intersection": s.intersection,
            }
            for s in report.per_rib
        ],
    }


CSV_COLUMNS = ["id", "A", "F", "I", "T", "dice_avg", "dice_min"]


def _csv_row(case_id: str, acc: dict, dice_avg, dice_min) -> list[str]:
    return [
        case_id,
        _pct(acc.get("A")),
        _pct(acc.get("F")),
        _pct(acc.get("I")),
        _pct(acc.get("T")),
        _pct(None if dice_avg is None else 100 * dice_avg),
        _pct(None if dice_min is None else 100 * dice_min),
    ]


def write_report(report, path, fmt: str = "json"):
    """Serialize a MetricsReport, a list of them, or an aggregate dict.

    JSON keeps per-rib detail; CSV emits one row per case (plus an
    aggregate row for multi-case input). All percentages use one decimal.
    """
    if fmt not in ("json", "csv"):
        raise ValueError(f"format must be json or csv, got {fmt!r}")
    reports = report if isinstance(report, list) else [report]
    from .metrics import aggregate_reports  # local to avoid cycle at import time

    if fmt == "json":
        payload = {
            "cases": [report_to_dict(r) for r in reports],
        }
        if len(reports) > 1:
            agg = aggregate_reports(reports)
            for mode in ("micro", "macro"):
                agg[mode]["label_accuracy"] = {
                    k: _pct_num(v) for k, v in agg[mode]["label_accuracy"].items()
                }
                for key in ("dice_avg", "dice_min"):
                    val = agg[mode].pop(key)
                    agg[mode][key + "_pct"] = _pct_num(None if val is None else 100 * val)
            payload["aggregate"] = agg
        with open(path, "w") as f:
            json.dump(payload, f, indent=2, sort_keys=False)
            f.write("\n")
        return

    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(CSV_COLUMNS)
        for r in sorted(reports, key=lambda r: r.case_id):
            w.writerow(_csv_row(r.case_id, r.label_accuracy, r.dice_avg, r.dice_min))
        if len(reports) > 1:
            agg = aggregate_reports(reports)["micro"]
            w.writerow(_csv_row(
                "aggregate", agg["label_accuracy"], agg["dice_avg"], agg["dice_min"]
            ))
