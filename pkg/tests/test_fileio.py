import json
import struct

import numpy as np
import pytest

from ribkit.fileio import (
    CenterlineFormatError,
    NiftiFormatError,
    read_centerline,
    read_nifti,
    write_centerline,
    write_nifti,
    write_report,
)
from ribkit.metrics import evaluate_case
from ribkit.refine import Centerline
from ribkit.volume import LabelVolume, Spacing, Volume


def make_nifti_bytes(data, spacing, datatype, scl_slope=0.0, scl_inter=0.0):
    """Hand-rolled NIfTI-1 file, independent of the package writer.

    Field offsets follow the public NIfTI-1 layout.
    """
    hdr = bytearray(348)
    struct.pack_into("<i", hdr, 0, 348)
    struct.pack_into("<8h", hdr, 40, 3, *data.shape, 1, 1, 1, 1)
    struct.pack_into("<h", hdr, 70, datatype)
    struct.pack_into("<h", hdr, 72, {2: 8, 4: 16, 16: 32}[datatype])
    struct.pack_into("<8f", hdr, 76, 1.0, *spacing, 0, 0, 0, 0)
    struct.pack_into("<f", hdr, 108, 352.0)
    struct.pack_into("<f", hdr, 112, scl_slope)
    struct.pack_into("<f", hdr, 116, scl_inter)
    struct.pack_into("<4s", hdr, 344, b"n+1\x00")
    return bytes(hdr) + b"\x00" * 4 + data.tobytes(order="F")


@pytest.mark.parametrize("gz", [False, True])
def test_volume_roundtrip_bit_exact(tmp_path, gz):
    rng = np.random.default_rng(0)
    vol = Volume(rng.normal(size=(5, 4, 3)).astype(np.float32), Spacing(2.0, 1.5, 0.75))
    path = tmp_path / ("v.nii.gz" if gz else "v.nii")
    write_nifti(vol, path)
    back = read_nifti(path)
    assert back.dims == vol.dims
    assert np.array_equal(back.data, vol.data)
    assert back.spacing == vol.spacing


@pytest.mark.parametrize("gz", [False, True])
def test_label_roundtrip_bit_exact(tmp_path, gz):
    rng = np.random.default_rng(1)
    labels = LabelVolume(rng.integers(0, 25, size=(3, 6, 2)).astype(np.uint8), Spacing(2, 2, 2))
    path = tmp_path / ("l.nii.gz" if gz else "l.nii")
    write_nifti(labels, path)
    back = read_nifti(path, as_labels=True)
    assert np.array_equal(back.data, labels.data)
    assert back.spacing == labels.spacing


def test_gzip_detected_by_magic_not_extension(tmp_path):
    vol = Volume(np.ones((2, 2, 2), dtype=np.float32), Spacing(1, 1, 1))
    path = tmp_path / "plain_name.nii"
    write_nifti(vol, path, gzip_compress=True)  # gz payload, no .gz suffix
    with open(path, "rb") as f:
        assert f.read(2) == b"\x1f\x8b"
    back = read_nifti(path)
    assert np.array_equal(back.data, vol.data)


def test_gzip_output_deterministic(tmp_path):
    vol = Volume(np.arange(8, dtype=np.float32).reshape(2, 2, 2), Spacing(1, 1, 1))
    p1, p2 = tmp_path / "a.nii.gz", tmp_path / "b.nii.gz"
    write_nifti(vol, p1)
    write_nifti(vol, p2)
    assert p1.read_bytes() == p2.read_bytes()


def test_int16_with_scaling(tmp_path):
    data = np.array([0, 100, 2048, -500], dtype="<i2").reshape(4, 1, 1)
    path = tmp_path / "ct.nii"
    path.write_bytes(make_nifti_bytes(data, (1.0, 1.0, 1.0), 4, scl_slope=1.0, scl_inter=-1024.0))
    vol = read_nifti(path)
    assert np.array_equal(vol.data.ravel(), data.ravel().astype(np.float32) - 1024.0)


def test_uint8_labels_from_foreign_writer(tmp_path):
    data = np.arange(24, dtype="<u1").reshape(2, 3, 4)
    path = tmp_path / "lab.nii"
    path.write_bytes(make_nifti_bytes(data, (2.0, 2.0, 2.0), 2))
    labels = read_nifti(path, as_labels=True)
    assert np.array_equal(labels.data, data)


def test_pixdim_written_to_float32_precision(tmp_path):
    spacing = Spacing(0.787, 1.25, 3.0)
    vol = Volume(np.zeros((2, 2, 2), dtype=np.float32), spacing)
    path = tmp_path / "v.nii"
    write_nifti(vol, path)
    raw = path.read_bytes()
    pixdim = struct.unpack_from("<8f", raw, 76)
    for got, want in zip(pixdim[1:4], spacing.as_tuple()):
        assert got == np.float32(want)


def test_reader_rejects_bad_files(tmp_path):
    good = make_nifti_bytes(np.zeros((2, 2, 2), dtype="<u1"), (1, 1, 1), 2)

    bad_magic = bytearray(good)
    struct.pack_into("<4s", bad_magic, 344, b"ni1\x00")
    p = tmp_path / "two_file.nii"
    p.write_bytes(bad_magic)
    with pytest.raises(NiftiFormatError, match="n\\+1"):
        read_nifti(p)

    big_endian = bytearray(good)
    struct.pack_into(">i", big_endian, 0, 348)
    struct.pack_into("<i", big_endian, 0, struct.unpack(">i", big_endian[:4])[0])
    p = tmp_path / "be.nii"
    p.write_bytes(bytes(big_endian))
    # force a byteswapped sizeof_hdr
    swapped = struct.pack(">i", 348) + good[4:]
    p.write_bytes(swapped)
    with pytest.raises(NiftiFormatError, match="big-endian"):
        read_nifti(p)

    bad_dtype = bytearray(good)
    struct.pack_into("<h", bad_dtype, 70, 8)   # int32: unsupported
    struct.pack_into("<h", bad_dtype, 72, 32)
    p = tmp_path / "dt.nii"
    p.write_bytes(bytes(bad_dtype))
    with pytest.raises(NiftiFormatError, match="datatype"):
        read_nifti(p)

    fourd = bytearray(good)
    struct.pack_into("<8h", fourd, 40, 4, 2, 2, 2, 3, 1, 1, 1)
    p = tmp_path / "t.nii"
    p.write_bytes(bytes(fourd))
    with pytest.raises(NiftiFormatError, match="3D"):
        read_nifti(p)

    p = tmp_path / "trunc.nii"
    p.write_bytes(good[:-3])
    with pytest.raises(OSError, match="byte"):
        read_nifti(p)


def test_reader_rejects_bad_label_requests(tmp_path):
    vol = Volume(np.zeros((2, 2, 2), dtype=np.float32), Spacing(1, 1, 1))
    p = tmp_path / "f.nii"
    write_nifti(vol, p)
    with pytest.raises(NiftiFormatError, match="integer"):
        read_nifti(p, as_labels=True)

    data = np.array([30], dtype="<u1").reshape(1, 1, 1)
    p2 = tmp_path / "big_label.nii"
    p2.write_bytes(make_nifti_bytes(data, (1, 1, 1), 2))
    with pytest.raises(NiftiFormatError, match="0..24"):
        read_nifti(p2, as_labels=True)

    scaled = make_nifti_bytes(np.array([1], dtype="<i2").reshape(1, 1, 1),
                              (1, 1, 1), 4, scl_slope=2.0)
    p3 = tmp_path / "scaled.nii"
    p3.write_bytes(scaled)
    with pytest.raises(NiftiFormatError, match="scl"):
        read_nifti(p3, as_labels=True)


def test_write_rejects_wrong_types(tmp_path):
    with pytest.raises(TypeError):
        write_nifti(np.zeros((2, 2, 2)), tmp_path / "x.nii")


def test_single_voxel_volume_roundtrips(tmp_path):
    vol = Volume(np.array([[[7.25]]], dtype=np.float32), Spacing(3, 3, 3))
    path = tmp_path / "one.nii.gz"
    write_nifti(vol, path)
    back = read_nifti(path)
    assert back.dims == (1, 1, 1)
    assert back.data[0, 0, 0] == np.float32(7.25)


def test_empty_dims_cannot_be_constructed():
    with pytest.raises(ValueError):
        Volume(np.zeros((0, 2, 2), dtype=np.float32), Spacing(1, 1, 1))
    with pytest.raises(ValueError):
        LabelVolume(np.zeros((2, 0, 2), dtype=np.uint8), Spacing(1, 1, 1))


def test_missing_file_raises_oserror(tmp_path):
    with pytest.raises(OSError):
        read_nifti(tmp_path / "nope.nii")


# ------------------------------------------------------------- centerline

def test_centerline_roundtrip(tmp_path):
    line = Centerline(np.array([[100.0, 110.0, 10.0], [102.0, 112.0, 200.0]]))
    path = tmp_path / "line.csv"
    write_centerline(line, path)
    back = read_centerline(path)
    assert np.allclose(back.points, line.points)


def test_centerline_interpolation_midpoint(tmp_path):
    zs = np.linspace(0, 100, 5)
    pts = np.stack([2.0 * zs, 50.0 + zs, zs], axis=1)
    path = tmp_path / "line.csv"
    write_centerline(Centerline(pts), path)
    line = read_centerline(path)
    cx, cy = line.at_z([50.0])
    assert cx[0] == pytest.approx(100.0)
    assert cy[0] == pytest.approx(100.0)


def test_centerline_errors_name_the_row(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("z_mm,x_mm,y_mm\n10,1,1\n5,2,2\n")
    with pytest.raises(CenterlineFormatError, match="row 3"):
        read_centerline(path)

    path.write_text("z,x,y\n1,2,3\n")
    with pytest.raises(CenterlineFormatError, match="header"):
        read_centerline(path)

    path.write_text("z_mm,x_mm,y_mm\n10,1,1\n")
    with pytest.raises(CenterlineFormatError, match="2 centerline points"):
        read_centerline(path)


# ------------------------------------------------------------- reports

def fixed_report(case_id="case1"):
    gt = np.zeros((24, 17, 1), dtype=np.uint8)
    pred = np.zeros_like(gt)
    for rib in range(1, 25):
        gt[rib - 1, :, 0] = rib
        pred[rib - 1, :, 0] = rib
    pred[7, 3:, 0] = 0  # rib 8 recall 3/17 -> fails
    sp = Spacing(1, 1, 1)
    return evaluate_case(LabelVolume(pred, sp), LabelVolume(gt, sp), case_id=case_id)


def test_json_report_roundtrip(tmp_path):
    report = fixed_report()
    path = tmp_path / "r.json"
    write_report(report, path, "json")
    payload = json.loads(path.read_text())
    case = payload["cases"][0]
    assert case["case_id"] == "case1"
    # 23/24 = 95.8333 -> one decimal
    assert case["label_accuracy"]["A"] == 95.8
    assert len(case["per_rib"]) == 24


def test_csv_report_schema(tmp_path):
    reports = [fixed_report("b"), fixed_report("a")]
    path = tmp_path / "r.csv"
    write_report(reports, path, "csv")
    lines = path.read_text().strip().splitlines()
    assert lines[0] == "id,A,F,I,T,dice_avg,dice_min"
    assert len(lines) == 1 + 2 + 1  # header + cases + aggregate
    assert lines[1].startswith("a,95.8,100.0,95.0,100.0,")
    assert lines[3].split(",")[0] == "aggregate"


def test_csv_one_decimal_formatting(tmp_path):
    # aggregate accuracy must land on one decimal ("99.5", not "99.479...")
    gt = np.zeros((24, 5, 1), dtype=np.uint8)
    pred = np.zeros_like(gt)
    for rib in range(1, 25):
        gt[rib - 1, :, 0] = rib
        pred[rib - 1, :, 0] = rib
    sp = Spacing(1, 1, 1)
    reports = []
    for i in range(7):
        r = evaluate_case(LabelVolume(pred, sp), LabelVolume(gt, sp), case_id=f"c{i}")
        reports.append(r)
    bad = pred.copy()
    bad[4, 1:, 0] = 0  # one failing rib in the last case
    reports.append(evaluate_case(LabelVolume(bad, sp), LabelVolume(gt, sp), case_id="c7"))
    path = tmp_path / "agg.csv"
    write_report(reports, path, "csv")
    agg_line = path.read_text().strip().splitlines()[-1]
    # micro A = 100 * 191/192 = 99.479 -> "99.5"
    assert agg_line.split(",")[1] == "99.5"


def test_write_report_rejects_unknown_format(tmp_path):
    with pytest.raises(ValueError):
        write_report(fixed_report(), tmp_path / "x.bin", "xml")
