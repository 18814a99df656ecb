"""Command-line pipelines composing the library modules.

Exit codes: 0 success, 1 I/O or data error, 2 usage error, 3 refinement
refusal (a side needs 13+ rib types), 4 predictor protocol violation,
5 loss verification failure. Logs go to stderr, data only to files, and
every run logs its resolved configuration so outputs are reproducible.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

from . import fileio, losses, metrics, phantom
from .infer import (
    ConstantPredictor,
    DecodeConfig,
    OracleLabelPredictor,
    PredictorProtocolError,
    SubprocessPredictor,
    decode,
    plan_patches,
    run_inference,
)
from .refine import CapacityError, RefineConfig, default_midline_x, refine_with_report
from .volume import Spacing, WindowConfig, normalize_bone_window, resample_linear

log = logging.getLogger("ribkit")

EXIT_OK = 0
EXIT_IO = 1
EXIT_USAGE = 2
EXIT_CAPACITY = 3
EXIT_PREDICTOR = 4
EXIT_VERIFY = 5


def _resolve_threads(n: int) -> int:
    if n == 0:
        n = int(os.environ.get("RIBKIT_THREADS", "0")) or (os.cpu_count() or 1)
    return max(1, n)


def _log_config(args: argparse.Namespace):
    resolved = {k: v for k, v in sorted(vars(args).items()) if k != "func"}
    log.info("resolved config: %s", resolved)


def _parse_window(text: str) -> WindowConfig:
    lo, hi = (float(v) for v in text.split(":"))
    return WindowConfig(lo, hi)


def cmd_preprocess(args) -> int:
    vol = fileio.read_nifti(args.infile)
    target = Spacing(args.spacing, args.spacing, args.spacing)
    vol = resample_linear(vol, target)
    vol = normalize_bone_window(vol, args.window)
    fileio.write_nifti(vol, args.out)
    log.info("wrote %s dims=%s spacing=%.3g mm", args.out, vol.dims, args.spacing)
    return EXIT_OK


def cmd_refine(args) -> int:
    pred = fileio.read_nifti(args.pred, as_labels=True)
    line = fileio.read_centerline(args.centerline) if args.centerline else None
    midline = default_midline_x(pred.dims, pred.spacing, line)
    cfg = RefineConfig(
        probable_fraction=args.probable_fraction, min_voxels=args.min_voxels
    )
    refined, reports = refine_with_report(pred, cfg, midline)
    for r in reports:
        if r.assignment is not None:
            log.info(
                "%s side: %d components (%d protected, %d dropped), "
                "sequence start=%d score=%d types=%s",
                r.side, r.component_count, r.protected, r.dropped_small,
                r.assignment.start_type, r.assignment.score, r.assignment.types,
            )
        else:
            log.info(
                "%s side: %d components (%d protected, %d dropped), no sequence chosen",
                r.side, r.component_count, r.protected, r.dropped_small,
            )
    fileio.write_nifti(refined, args.out)
    return EXIT_OK


def _eval_one(case_id: str, pred_path, gt_path, line, cut_mm) -> metrics.MetricsReport:
    pred = fileio.read_nifti(pred_path, as_labels=True)
    gt = fileio.read_nifti(gt_path, as_labels=True)
    return metrics.evaluate_case(
        pred, gt, centerline=line, cut_radius_mm=cut_mm, case_id=case_id
    )


def _batch_pairs(pred_dir: Path):
    pairs = []
    for p in sorted(pred_dir.glob("*_pred.nii*")):
        case_id = p.name.split("_pred.nii")[0]
        suffix = p.name[len(case_id) + len("_pred"):]
        gt = p.with_name(f"{case_id}_gt{suffix}")
        if gt.exists():
            pairs.append((case_id, p, gt))
        else:
            log.warning("no ground truth for %s (expected %s); skipped", p.name, gt.name)
    return pairs


def cmd_eval(args) -> int:
    line = fileio.read_centerline(args.centerline) if args.centerline else None
    pred_path = Path(args.pred)
    if pred_path.is_dir():
        pairs = _batch_pairs(pred_path)
        if not pairs:
            log.error("no <id>_pred.nii[.gz] / <id>_gt.nii[.gz] pairs in %s", pred_path)
            return EXIT_IO
        workers = _resolve_threads(args.threads)
        with ThreadPoolExecutor(max_workers=workers) as pool:
            futures = [
                pool.submit(_eval_one, cid, p, g, line, args.cut_mm)
                for cid, p, g in pairs
            ]
            reports = [f.result() for f in futures]
        reports.sort(key=lambda r: r.case_id)
    else:
        if not args.gt:
            log.error("--gt is required for single-case evaluation")
            return EXIT_USAGE
        case_id = pred_path.name.split(".nii")[0]
        reports = [_eval_one(case_id, pred_path, Path(args.gt), line, args.cut_mm)]

    for r in reports:
        acc = {k: ("NA" if v is None else f"{v:.1f}") for k, v in r.label_accuracy.items()}
        log.info(
            "case %s: A=%s F=%s I=%s T=%s dice_avg=%s%s",
            r.case_id, acc["A"], acc["F"], acc["I"], acc["T"],
            "NA" if r.dice_avg is None else f"{100 * r.dice_avg:.1f}",
            f" (spine cut {r.cut_radius_mm:g} mm)" if r.cut_radius_mm else "",
        )
    if len(reports) > 1:
        agg = metrics.aggregate_reports(reports)
        log.info("aggregate (micro): %s", agg["micro"])
    if args.report:
        fileio.write_report(reports if len(reports) > 1 else reports[0], args.report, "json")
    if args.csv:
        fileio.write_report(reports, args.csv, "csv")
    return EXIT_OK


def _make_predictor(spec: str):
    kind, _, rest = spec.partition(":")
    if kind == "oracle" and rest:
        return OracleLabelPredictor(fileio.read_nifti(rest, as_labels=True))
    if kind == "constant" and rest:
        return ConstantPredictor(float(rest))
    if kind == "subprocess" and rest:
        import shlex

        return SubprocessPredictor(shlex.split(rest))
    raise ValueError(
        f"bad predictor spec {spec!r}; expected oracle:labels.nii[.gz], "
        f"constant:PROB, or subprocess:CMD"
    )


def cmd_infer(args) -> int:
    vol = fileio.read_nifti(args.infile)
    predictor = _make_predictor(args.predictor)
    line = fileio.read_centerline(args.centerline) if args.centerline else None
    plan = plan_patches(vol.dims[2], vol.spacing.dz, args.patch_mm)
    log.info(
        "plan: %d patch(es) of %d voxels (%g mm), threshold %g",
        len(plan), plan.patch_voxels, args.patch_mm, args.threshold,
    )
    try:
        bin_prob, cls_prob = run_inference(vol, predictor, plan)
    finally:
        if hasattr(predictor, "close"):
            predictor.close()
    midline = default_midline_x(vol.dims, vol.spacing, line)
    labels = decode(bin_prob, cls_prob, DecodeConfig(binary_threshold=args.threshold), midline)
    fileio.write_nifti(labels, args.out)
    log.info("wrote %s; %d foreground voxels", args.out, int((labels.data > 0).sum()))
    return EXIT_OK


def cmd_phantom(args) -> int:
    cfg = phantom.PhantomConfig(rib_pairs=args.rib_pairs, seed=args.seed)
    vol, labels, line = phantom.generate(cfg)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    fileio.write_nifti(vol, out / "intensity.nii.gz")
    fileio.write_nifti(labels, out / "labels.nii.gz")
    fileio.write_centerline(line, out / "centerline.csv")
    log.info("phantom: %d rib pairs, dims %s, seed %d", cfg.rib_pairs, cfg.dims, cfg.seed)
    for spec in args.corrupt or []:
        corruption = phantom.parse_corruption(spec)
        variant = phantom.corrupt(labels, corruption, seed=args.seed)
        name = spec.replace(":", "_").replace("-", "to").replace("+", "p")
        path = out / f"labels_{name}.nii.gz"
        fileio.write_nifti(variant, path)
        log.info("corruption %s -> %s", spec, path.name)
    return EXIT_OK


def cmd_losscheck(args) -> int:
    results = losses.gradient_check(size=args.size, trials=args.trials, seed=args.seed)
    worst_name, worst = max(results.items(), key=lambda kv: kv[1]["max_rel_err"])
    ok = all(r["max_rel_err"] < args.tolerance for r in results.values())
    for name, r in results.items():
        log.info("%-12s max rel err %.3e", name, r["max_rel_err"])
    if not ok:
        log.error(
            "gradient check FAILED: %s rel err %.3e at trial %d index %s",
            worst_name, worst["max_rel_err"], worst["trial"], worst["index"],
        )
        return EXIT_VERIFY
    log.info("all gradients match finite differences (tolerance %.1e)", args.tolerance)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ribkit",
        description="Rib label volume toolkit: preprocessing, geometric "
        "refinement, metrics, sliding-window inference, phantoms.",
    )
    parser.add_argument("--threads", type=int, default=0,
                        help="worker threads for batch commands; 0 = auto "
                        "(or RIBKIT_THREADS)")
    parser.add_argument("--log-level", default="info",
                        choices=["debug", "info", "warning", "error"])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("preprocess", help="resample to uniform spacing and "
                       "normalize with the bone window")
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--spacing", type=float, default=2.0, help="target spacing, mm")
    p.add_argument("--window", type=_parse_window, default=WindowConfig(),
                   help="intensity window LO:HI in HU (default -450:1050)")
    p.set_defaults(func=cmd_preprocess)

    p = sub.add_parser("refine", help="geometric mask refinement of a label volume")
    p.add_argument("--pred", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--centerline", help="centerline CSV; fixes the left/right midline")
    p.add_argument("--min-voxels", type=int, default=64)
    p.add_argument("--probable-fraction", type=float, default=1.0 / 3.0)
    p.set_defaults(func=cmd_refine)

    p = sub.add_parser("eval", help="Label-Accuracy / Label-Dice evaluation")
    p.add_argument("--pred", required=True,
                   help="prediction file, or directory of <id>_pred.nii[.gz] "
                   "/ <id>_gt.nii[.gz] pairs")
    p.add_argument("--gt", help="ground-truth file (single-case mode)")
    p.add_argument("--centerline", help="apply the spine cut to both volumes")
    p.add_argument("--cut-mm", type=float, default=30.0)
    p.add_argument("--report", help="JSON report path")
    p.add_argument("--csv", help="CSV report path")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("infer", help="sliding-window inference with a pluggable predictor")
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--predictor", required=True,
                   help="oracle:labels.nii[.gz] | constant:PROB | subprocess:CMD")
    p.add_argument("--out", required=True)
    p.add_argument("--threshold", type=float, default=0.25)
    p.add_argument("--patch-mm", type=float, default=320.0)
    p.add_argument("--centerline", help="centerline CSV; fixes the decode midline")
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("phantom", help="write a synthetic ribcage phantom")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--rib-pairs", type=int, default=12)
    p.add_argument("--corrupt", action="append",
                   help="corruption spec (repeatable): shift:LO-HI:DELTA, "
                   "merge:LABEL, break:LABEL[:GAP_MM], drop:LABEL, noise:RATE")
    p.set_defaults(func=cmd_phantom)

    p = sub.add_parser("losscheck", help="finite-difference verification of the loss gradients")
    p.add_argument("--size", type=int, default=4)
    p.add_argument("--trials", type=int, default=20)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--tolerance", type=float, default=1e-3)
    p.set_defaults(func=cmd_losscheck)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:  # argparse uses 2 for usage errors
        return int(e.code or 0)
    logging.basicConfig(
        stream=sys.stderr,
        level=getattr(logging, args.log_level.upper()),
        format="%(levelname)s %(name)s: %(message)s",
        force=True,
    )
    _log_config(args)
    try:
        return args.func(args)
    except CapacityError as e:
        log.error("refinement refused: %s", e)
        return EXIT_CAPACITY
    except PredictorProtocolError as e:
        log.error("predictor protocol violation: %s", e)
        return EXIT_PREDICTOR
    except (fileio.NiftiFormatError, fileio.CenterlineFormatError,
            metrics.DimensionMismatchError) as e:
        log.error("%s", e)
        return EXIT_IO
    except OSError as e:
        log.error("%s", e)
        return EXIT_IO
    except ValueError as e:
        log.error("%s", e)
        return EXIT_USAGE


def entrypoint():
    sys.exit(main())


if __name__ == "__main__":
    entrypoint()
