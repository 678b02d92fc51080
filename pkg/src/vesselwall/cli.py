"""Command-line entry point.

Every command writes into a scratch directory next to ``--out`` and moves the
files over only on success, so a failed run leaves no partial outputs.
Exit status: 0 success, 1 input error, 2 stage failure.
"""

from __future__ import annotations

import argparse
import contextlib
import shutil
import sys
import tempfile
from pathlib import Path

import numpy as np

from . import phantom
from .config import PipelineConfig, load_config
from .io import (read_detections, read_json, read_volume, write_detections, write_json,
                 write_volume)
from .pipeline import (InputError, RunResult, StageError, evaluate_run, make_segmenter,
                       read_centerlines, run_detect, run_pipeline, run_track, segment_centerline,
                       stage, write_run, write_segmentation)
from .refine import refine_centerline
from .tracklet import (centerline_to_dict, extract_centerline, tracklet_from_dict,
                       tracklet_to_dict)

EXIT_OK, EXIT_INPUT, EXIT_STAGE = 0, 1, 2


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_INPUT, f"{self.prog}: error: {message}\n")


@contextlib.contextmanager
def staged_output(out: Path):
    """Yield a scratch directory whose contents replace ``out``'s on success."""
    out = Path(out)
    out.parent.mkdir(parents=True, exist_ok=True)
    tmp = Path(tempfile.mkdtemp(prefix=f".{out.name}.", dir=out.parent))
    try:
        yield tmp
    except BaseException:
        shutil.rmtree(tmp, ignore_errors=True)
        raise
    out.mkdir(exist_ok=True)
    for item in sorted(tmp.iterdir()):
        dst = out / item.name
        if dst.is_dir():
            shutil.rmtree(dst)
        item.replace(dst)
    tmp.rmdir()


# -- commands ----------------------------------------------------------------------------

def write_phantom(spec: phantom.PhantomSpec, out: Path):
    v, truth = phantom.generate(spec)
    out.mkdir(parents=True, exist_ok=True)
    write_json(spec.to_dict(), out / "spec.json")
    write_volume(v, out / "volume.json")
    phantom.write_truth(truth, out, v.spacing)
    return v, truth


def cmd_phantom(args, cfg: PipelineConfig, out: Path):
    with stage("phantom"):
        if args.spec:
            spec = phantom.read_spec(args.spec)
            if args.seed is not None:
                spec.seed = cfg.seed
            write_phantom(spec, out)
            print(f"wrote phantom to {args.out}")
            return
        specs = phantom.default_suite(cfg.seed, cfg.phantom_count)
        for i, spec in enumerate(specs):
            write_phantom(spec, out / f"case_{i:02d}")
        print(f"wrote {len(specs)} phantom volumes to {args.out}")


def cmd_detect(args, cfg, out):
    with stage("detect"):
        v = read_volume(args.volume)
        res = RunResult(v, cfg, detections=run_detect(v, cfg))
        write_detections(res.detections, out / "detections.json")
    print(f"{len(res.detections)} detections on {v.depth} slices")


def cmd_track(args, cfg, out):
    with stage("track"):
        dets = read_detections(args.detections)
        ts = run_track(dets, cfg)
        write_json([tracklet_to_dict(t, i) for i, t in enumerate(ts)], out / "tracklets.json")
        write_json([centerline_to_dict(extract_centerline(t), i) for i, t in enumerate(ts)],
                   out / "centerlines.json")
    for i, t in enumerate(ts):
        print(f"target {i}: slices {t.z_start}-{t.z_end}, score {t.total_score:.3f}")


def _segment_like(args, cfg, out, refine: bool):
    name = "refine" if refine else "segment"
    with stage(name):
        v = read_volume(args.volume)
        cs = read_centerlines(args.centerlines)
        seg = make_segmenter(cfg)
        res = RunResult(v, cfg, centerlines=cs)
        if refine:
            res.refined = [refine_centerline(v, c, seg, cfg.refine_threshold,
                                             cfg.refine_max_iter, cfg.workers) for c in cs]
            write_json([centerline_to_dict(r.centerline, i) for i, r in enumerate(res.refined)],
                       out / "refined_centerlines.json")
        else:
            res.segmented = [segment_centerline(v, c, seg, cfg.workers) for c in cs]
        write_segmentation(out, v, res.slice_results)
        report = res.report()
        write_json(report, out / "report.json")
    _print_flags(report)


def cmd_segment(args, cfg, out):
    _segment_like(args, cfg, out, refine=False)


def cmd_refine(args, cfg, out):
    _segment_like(args, cfg, out, refine=True)


def _print_flags(report: dict):
    flags = report["flags"]
    n = sum(len(v["slices"]) for v in report["vessels"])
    print(f"{report['n_targets']} vessel(s), {n} slice(s) segmented")
    print(f"  below Segconf floor {flags['segconf_floor']}: {len(flags['low_confidence'])}")
    print(f"  not converged: {len(flags['not_converged'])}   failed: {len(flags['failed'])}")
    for w in report.get("warnings", []):
        print(f"  warning: {w}")


def _evaluate_dirs(pred: Path, truth_dir: Path) -> dict:
    truth = phantom.read_truth(truth_dir)
    masks = read_volume(pred / "masks.json")
    boxes = []
    for i, rec in enumerate(read_json(pred / "tracklets.json")):
        boxes.extend(tracklet_from_dict(rec, f"tracklets[{i}]").boxes)
    return evaluate_run(masks.voxels.astype(np.int64), boxes, truth, masks.spacing)


def _print_eval(rows: list[tuple[str, dict]]):
    print(f"{'case':<10} {'mean IoU':>9} {'missed':>7} {'false':>6} {'mean DSC':>9} {'area r':>7}")
    for name, e in rows:
        print(f"{name:<10} {e['mean_iou']:9.4f} {e['missed']:7d} {e['false_positive']:6d} "
              f"{e['mean_dsc']:9.4f} {e['area_correlation']:7.3f}")
    if len(rows) > 1:
        print(f"{'mean':<10} {np.mean([e['mean_iou'] for _, e in rows]):9.4f} "
              f"{sum(e['missed'] for _, e in rows):7d} "
              f"{sum(e['false_positive'] for _, e in rows):6d} "
              f"{np.mean([e['mean_dsc'] for _, e in rows]):9.4f}")


def cmd_eval(args, cfg, out):
    with stage("eval"):
        e = _evaluate_dirs(Path(args.pred), Path(args.truth))
        if out is not None:
            write_json(e, out / "eval.json")
    _print_eval([(Path(args.pred).name, e)])


def cmd_pipeline(args, cfg, out):
    if args.suite:
        run_suite(cfg, out)
        return
    if not args.volume:
        raise InputError("pipeline", "either --volume or --suite is required")
    with stage("pipeline"):
        v = read_volume(args.volume)
    res = run_pipeline(v, cfg)
    with stage("pipeline"):
        write_run(res, out)
    _print_flags(res.report())
    if args.truth:
        with stage("eval"):
            e = _evaluate_dirs(out, Path(args.truth))
            write_json(e, out / "eval.json")
        _print_eval([(Path(args.out).name, e)])


def run_suite(cfg: PipelineConfig, out: Path) -> dict:
    """Generate the phantom suite, run the pipeline and score every case."""
    rows = []
    for i, spec in enumerate(phantom.default_suite(cfg.seed, cfg.phantom_count)):
        case = out / f"case_{i:02d}"
        with stage("phantom"):
            v, truth = write_phantom(spec, case / "phantom")
        res = run_pipeline(v, cfg)
        with stage("pipeline"):
            write_run(res, case / "run")
        with stage("eval"):
            e = evaluate_run(res.labels().astype(np.int64), res.target_boxes, truth, v.spacing)
            write_json(e, case / "eval.json")
        rows.append((case.name, e))
    summary = {
        "cases": [{"case": n, "mean_iou": e["mean_iou"], "missed": e["missed"],
                   "false_positive": e["false_positive"], "mean_dsc": e["mean_dsc"]}
                  for n, e in rows],
        "mean_iou": float(np.mean([e["mean_iou"] for _, e in rows])),
        "mean_dsc": float(np.mean([e["mean_dsc"] for _, e in rows])),
    }
    write_json(summary, out / "summary.json")
    _print_eval(rows)
    return summary


COMMANDS = {
    "phantom": cmd_phantom,
    "detect": cmd_detect,
    "track": cmd_track,
    "segment": cmd_segment,
    "refine": cmd_refine,
    "eval": cmd_eval,
    "pipeline": cmd_pipeline,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON config file")
    common.add_argument("--workers", type=int, help="worker threads (outputs do not depend on it)")
    common.add_argument("--out", help="output directory")
    common.add_argument("--seed", type=int, help="RNG seed (phantoms only)")

    p = _Parser(prog="vesselwall",
                description="Artery localization and polar vessel wall segmentation.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("phantom", parents=[common], help="write synthetic volumes + truth")
    s.add_argument("--spec", help="phantom spec JSON; default: the built-in suite")

    s = sub.add_parser("detect", parents=[common], help="per-slice candidate boxes")
    s.add_argument("--volume", required=True)

    s = sub.add_parser("track", parents=[common], help="tracklets, targets and centerlines")
    s.add_argument("--detections", required=True)

    for name, text in (("segment", "segment along centerlines"),
                       ("refine", "segment with centerline re-centering")):
        s = sub.add_parser(name, parents=[common], help=text)
        s.add_argument("--volume", required=True)
        s.add_argument("--centerlines", required=True)

    s = sub.add_parser("eval", parents=[common], help="score a run against phantom truth")
    s.add_argument("--pred", required=True, help="run directory (masks.json, tracklets.json)")
    s.add_argument("--truth", required=True, help="phantom directory (truth.json, ...)")

    s = sub.add_parser("pipeline", parents=[common], help="detect -> track -> segment -> refine")
    s.add_argument("--volume")
    s.add_argument("--truth", help="phantom directory to evaluate against")
    s.add_argument("--suite", action="store_true",
                   help="generate the phantom suite, run and evaluate every case")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        with stage("config"):
            cfg = load_config(args.config, workers=args.workers, seed=args.seed)
        if args.out is None and args.command != "eval":
            raise InputError(args.command, "--out is required")
        if args.out is None:
            COMMANDS[args.command](args, cfg, None)
        else:
            with staged_output(Path(args.out)) as tmp:
                COMMANDS[args.command](args, cfg, tmp)
    except InputError as exc:
        print(f"vesselwall: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except StageError as exc:
        print(f"vesselwall: {exc}", file=sys.stderr)
        return EXIT_STAGE
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
