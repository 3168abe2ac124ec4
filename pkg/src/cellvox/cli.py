"""Command-line interface.

Commands: gen, detect, fuse, segment, eval, ablate, pipeline. Every command
accepts --config / --seed / --workers / --out. Exit codes: 0 success,
1 usage or config error, 2 data or format error, 3 internal failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys

from .boxes import load_boxes3d, save_boxes3d
from .detect import load_detections, save_detections
from .errors import ConfigError, DataError
from .fusion import fuse
from .metrics import save_curve_csv, save_report
from .pipeline import (
    AblationSpec,
    PipelineConfig,
    load_config,
    make_seg_backend,
    run_ablation,
    run_detect,
    run_eval_volumes,
    run_pipeline,
)
from .boxseg import segment_volume
from .synth import gen_dataset
from .volume import IntensityVolume, LabelVolume, volume_read, volume_write

log = logging.getLogger(__name__)


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _common_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="key/value config file")
    p.add_argument("--seed", type=int, help="override gen.seed")
    p.add_argument("--workers", type=int, help="parallel volume workers")
    p.add_argument("--out", required=True, help="output path")


def _config_from_args(args, extra: dict | None = None) -> PipelineConfig:
    overrides: dict = dict(extra or {})
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.workers is not None:
        overrides["workers"] = args.workers
    return load_config(args.config, overrides)


def _read_intensity(path) -> IntensityVolume:
    vol = volume_read(path)
    if not isinstance(vol, IntensityVolume):
        raise DataError(f"{path} is a label volume, expected an intensity volume")
    return vol


def _read_labels(path) -> LabelVolume:
    vol = volume_read(path)
    if not isinstance(vol, LabelVolume):
        raise DataError(f"{path} is an intensity volume, expected labels")
    return vol


def _cmd_gen(args) -> int:
    extra = {}
    if args.count is not None:
        extra["count"] = args.count
    config = _config_from_args(args, extra)
    manifest = gen_dataset(config.gen, config.count, args.out,
                           workers=config.workers)
    print(f"wrote {manifest['count']} volumes to {args.out}")
    return 0


def _cmd_detect(args) -> int:
    extra = {}
    if args.backend:
        extra["detector.backend"] = args.backend
    if args.threshold:
        try:
            extra["detector.threshold"] = float(args.threshold)
        except ValueError:
            extra["detector.threshold"] = args.threshold
    if args.min_area is not None:
        extra["detector.min_area"] = args.min_area
    config = _config_from_args(args, extra)
    vol = _read_intensity(args.volume)
    gt = _read_labels(args.labels) if args.labels else None
    dets = run_detect(vol, config, gt)
    save_detections(dets, args.out)
    print(f"wrote {len(dets)} detections to {args.out}")
    return 0


def _cmd_fuse(args) -> int:
    extra = {}
    for flag, key in (("confidence_min", "fusion.confidence_min"),
                      ("nms2d_iou", "fusion.nms2d_iou"),
                      ("cluster_overlap", "fusion.cluster_overlap"),
                      ("nms3d_iou", "fusion.nms3d_iou"),
                      ("overlap_measure", "fusion.overlap_measure"),
                      ("proposal_mode", "fusion.proposal_mode"),
                      ("shared_axis_join", "fusion.shared_axis_join")):
        value = getattr(args, flag)
        if value is not None:
            extra[key] = value
    config = _config_from_args(args, extra)
    dets = load_detections(args.detections)
    boxes = fuse(dets, config.fusion)
    save_boxes3d(boxes, args.out)
    print(f"wrote {len(boxes)} boxes to {args.out}")
    return 0


def _cmd_segment(args) -> int:
    extra = {}
    if args.backend:
        extra["segmenter.backend"] = args.backend
    if args.masks:
        extra["segmenter.external_dir"] = args.masks
    config = _config_from_args(args, extra)
    vol = _read_intensity(args.volume)
    gt = _read_labels(args.labels) if args.labels else None
    boxes = load_boxes3d(args.boxes)
    backend = make_seg_backend(config, gt)
    pred, _ = segment_volume(vol, boxes, backend,
                             threshold=config.segmenter.assemble_threshold)
    volume_write(pred, args.out)
    print(f"wrote {len(pred.labels())} instances to {args.out}")
    return 0


def _cmd_eval(args) -> int:
    extra = {}
    if args.mode:
        extra["metrics.mode"] = args.mode
    config = _config_from_args(args, extra)
    pred = _read_labels(args.pred)
    gt = _read_labels(args.gt)
    report = run_eval_volumes([(pred, gt)], config)
    save_report(report, args.out)
    if args.csv:
        save_curve_csv(report, args.csv)
    print(f"mAP={report.map:.4f} mAR={report.mar:.4f} mAJ={report.maj:.4f}")
    return 0


def _cmd_ablate(args) -> int:
    config = _config_from_args(args)
    profiles = tuple(int(p) for p in args.profiles.split(",")) if args.profiles \
        else (1, 2, 3)
    arms = tuple(args.arms.split(",")) if args.arms else AblationSpec().arms
    spec = AblationSpec(profiles=profiles, arms=arms,
                        count=args.count if args.count is not None else 10,
                        seed=args.seed if args.seed is not None else config.gen.seed)
    result = run_ablation(spec, config, args.out)
    print(json.dumps({"rows": result["rows"], "columns": result["columns"],
                      "maj": result["maj"]}, indent=2))
    return 0


def _cmd_pipeline(args) -> int:
    extra = {}
    if args.count is not None:
        extra["count"] = args.count
    config = _config_from_args(args, extra)
    report = run_pipeline(config, args.out)
    print(f"mAP={report.map:.4f} mAR={report.mar:.4f} mAJ={report.maj:.4f}")
    return 0


def build_parser() -> _Parser:
    parser = _Parser(prog="cellvox",
                     description="Synthetic cell volumes, 2D-to-3D box fusion, "
                                 "per-box segmentation, and evaluation.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", parents=[], help="generate a synthetic dataset")
    _common_flags(p)
    p.add_argument("--count", type=int, help="number of volumes")
    p.set_defaults(func=_cmd_gen)

    p = sub.add_parser("detect", help="run a 2D detector over a volume")
    _common_flags(p)
    p.add_argument("--volume", required=True, help="intensity volume (base path)")
    p.add_argument("--labels", help="ground-truth labels (oracle2d backend)")
    p.add_argument("--backend", choices=["blob", "oracle2d"])
    p.add_argument("--threshold", help="blob threshold: otsu or a value in (0,1)")
    p.add_argument("--min-area", dest="min_area", type=int)
    p.set_defaults(func=_cmd_detect)

    p = sub.add_parser("fuse", help="fuse 2D detections into 3D boxes")
    _common_flags(p)
    p.add_argument("--detections", required=True, help="JSON-lines detections file")
    p.add_argument("--confidence-min", dest="confidence_min", type=float)
    p.add_argument("--nms2d-iou", dest="nms2d_iou", type=float)
    p.add_argument("--cluster-overlap", dest="cluster_overlap", type=float)
    p.add_argument("--nms3d-iou", dest="nms3d_iou", type=float)
    p.add_argument("--overlap-measure", dest="overlap_measure",
                   choices=["iou", "intersection_over_min"])
    p.add_argument("--proposal-mode", dest="proposal_mode",
                   choices=["stacked", "pairwise"])
    p.add_argument("--shared-axis-join", dest="shared_axis_join",
                   choices=["intersection", "union"])
    p.set_defaults(func=_cmd_fuse)

    p = sub.add_parser("segment", help="segment the primary cell in each box")
    _common_flags(p)
    p.add_argument("--volume", required=True, help="intensity volume (base path)")
    p.add_argument("--boxes", required=True, help="3D boxes JSON file")
    p.add_argument("--labels", help="ground-truth labels (oracle backend)")
    p.add_argument("--backend", choices=["classical", "oracle", "external"])
    p.add_argument("--masks", help="external masks directory")
    p.set_defaults(func=_cmd_segment)

    p = sub.add_parser("eval", help="score a prediction against ground truth")
    _common_flags(p)
    p.add_argument("--pred", required=True, help="predicted labels (base path)")
    p.add_argument("--gt", required=True, help="ground-truth labels (base path)")
    p.add_argument("--csv", help="also write a per-threshold CSV")
    p.add_argument("--mode", choices=["instance", "voxel"])
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("ablate", help="run the baseline-vs-full ablation study")
    _common_flags(p)
    p.add_argument("--profiles", help="comma list, e.g. 1,2,3")
    p.add_argument("--arms", help=f"comma list from {', '.join(AblationSpec().arms)}")
    p.add_argument("--count", type=int, help="volumes per profile")
    p.set_defaults(func=_cmd_ablate)

    p = sub.add_parser("pipeline", help="gen + detect + fuse + segment + eval")
    _common_flags(p)
    p.add_argument("--count", type=int, help="number of volumes")
    p.set_defaults(func=_cmd_pipeline)

    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # pragma: no cover - defensive
        log.exception("internal failure")
        print(f"internal failure: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
