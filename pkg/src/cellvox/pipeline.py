"""Pipeline configuration and orchestration.

A run is configured by a key/value text file with dotted section paths::

    gen.cell_count = 64
    gen.contact.cell_cell = 10.0
    fusion.confidence_min = 0.5
    detector.backend = "blob"
    count = 5

Every key has a default; unknown keys are rejected. Values are JSON
literals (bare words count as strings). CLI flags override file values.

Stage handoffs go through the documented file formats, so a full pipeline
run is identical to running the five stages by hand.
"""

from __future__ import annotations

import dataclasses
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

from .boxes import Box3D, load_boxes3d, save_boxes3d
from .boxseg import (
    ClassicalSegBackend,
    ExternalSegBackend,
    OracleSegBackend,
    segment_volume,
)
from .detect import (
    DetectionSet,
    blob_detections,
    load_detections,
    oracle_boxes_2d,
    oracle_boxes_3d,
    save_detections,
)
from .errors import ConfigError
from .fusion import FusionConfig, fuse
from .ioutil import atomic_write_text
from .metrics import MetricsReport, match_instances, save_curve_csv, save_report
from .synth import GenConfig, gen_dataset
from .synth.dataset import config_to_dict
from .volume import IntensityVolume, LabelVolume, volume_read, volume_write

log = logging.getLogger(__name__)

ARM_BASELINE1 = "baseline1_3dgtbbs"
ARM_BASELINE2 = "baseline2_2dgtbbs"
ARM_FULL = "full"
ALL_ARMS = (ARM_BASELINE1, ARM_BASELINE2, ARM_FULL)


def _check_threshold(value, where: str) -> None:
    if value == "otsu":
        return
    if isinstance(value, (int, float)) and 0.0 < float(value) < 1.0:
        return
    raise ConfigError(f"{where} must be 'otsu' or a value in (0, 1), got {value!r}")


@dataclass(frozen=True)
class DetectorConfig:
    backend: str = "blob"  # blob | oracle2d
    threshold: float | str = "otsu"
    min_area: int = 2

    def __post_init__(self):
        if self.backend not in ("blob", "oracle2d"):
            raise ConfigError(f"unknown detector backend {self.backend!r}")
        _check_threshold(self.threshold, "detector.threshold")
        if self.min_area < 1:
            raise ConfigError("min_area must be >= 1")


@dataclass(frozen=True)
class SegmenterConfig:
    backend: str = "classical"  # classical | oracle | external
    threshold: float | str = "otsu"
    core_side: int = 16
    external_dir: str = ""
    assemble_threshold: float = 0.5

    def __post_init__(self):
        if self.backend not in ("classical", "oracle", "external"):
            raise ConfigError(f"unknown segmenter backend {self.backend!r}")
        _check_threshold(self.threshold, "segmenter.threshold")
        if not 0.0 <= self.assemble_threshold <= 1.0:
            raise ConfigError("assemble_threshold must lie in [0, 1]")


@dataclass(frozen=True)
class MetricsConfig:
    grid_start: float = 0.5
    grid_stop: float = 0.95
    grid_step: float = 0.05
    mode: str = "instance"

    def __post_init__(self):
        if self.mode not in ("instance", "voxel"):
            raise ConfigError(f"unknown counting mode {self.mode!r}")
        if not (0.0 <= self.grid_start <= self.grid_stop <= 1.0):
            raise ConfigError("bad threshold grid bounds")
        if self.grid_step <= 0:
            raise ConfigError("grid_step must be positive")

    def grid(self) -> tuple[float, ...]:
        out = []
        k = 0
        while self.grid_start + k * self.grid_step <= self.grid_stop + 1e-9:
            out.append(round(self.grid_start + k * self.grid_step, 10))
            k += 1
        return tuple(out)


@dataclass(frozen=True)
class PipelineConfig:
    gen: GenConfig = field(default_factory=GenConfig)
    fusion: FusionConfig = field(default_factory=FusionConfig)
    detector: DetectorConfig = field(default_factory=DetectorConfig)
    segmenter: SegmenterConfig = field(default_factory=SegmenterConfig)
    metrics: MetricsConfig = field(default_factory=MetricsConfig)
    count: int = 1
    workers: int = 1

    def __post_init__(self):
        if self.count < 1:
            raise ConfigError("count must be >= 1")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")


@dataclass(frozen=True)
class AblationSpec:
    profiles: tuple[int, ...] = (1, 2, 3)
    arms: tuple[str, ...] = ALL_ARMS
    count: int = 10
    seed: int = 0

    def __post_init__(self):
        if not self.arms:
            raise ConfigError("ablation needs at least one arm")
        for arm in self.arms:
            if arm not in ALL_ARMS:
                raise ConfigError(f"unknown arm {arm!r}; choose from {ALL_ARMS}")
        if not self.profiles:
            raise ConfigError("ablation needs at least one profile")
        for p in self.profiles:
            if p not in (1, 2, 3):
                raise ConfigError(f"unknown profile {p}")
        if self.count < 1:
            raise ConfigError("count must be >= 1")


# -- config file parsing ------------------------------------------------------------

def parse_config_text(text: str) -> dict:
    """Parse ``a.b.c = value`` lines into a nested dict."""
    tree: dict = {}
    for lineno, raw_line in enumerate(text.splitlines(), start=1):
        line = raw_line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"config line {lineno}: expected 'key = value'")
        key, _, raw = line.partition("=")
        key = key.strip()
        raw = raw.strip()
        if not key or not raw:
            raise ConfigError(f"config line {lineno}: empty key or value")
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw  # bare word is a string
        node = tree
        parts = key.split(".")
        for part in parts[:-1]:
            node = node.setdefault(part, {})
            if not isinstance(node, dict):
                raise ConfigError(f"config line {lineno}: {key!r} conflicts "
                                  f"with an earlier scalar")
        node[parts[-1]] = value
    return tree


def _coerce(default, value, path: str):
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"{path}: expected a boolean")
        return value
    if isinstance(default, float) and isinstance(value, (int, float)) \
            and not isinstance(value, bool):
        return float(value)
    if isinstance(default, tuple):
        if not isinstance(value, (list, tuple)):
            raise ConfigError(f"{path}: expected a list")
        return tuple(value)
    return value


def _build_dataclass(dc_type, data: dict, path: str = ""):
    defaults = dc_type()
    names = {f.name for f in dataclasses.fields(dc_type)}
    kwargs = {}
    for key, value in data.items():
        where = f"{path}{key}"
        if key not in names:
            raise ConfigError(f"unknown config key {where!r}")
        default = getattr(defaults, key)
        if dataclasses.is_dataclass(default):
            if not isinstance(value, dict):
                raise ConfigError(f"{where}: expected nested keys")
            kwargs[key] = _build_dataclass(type(default), value, f"{where}.")
        else:
            kwargs[key] = _coerce(default, value, where)
    return dc_type(**kwargs)


def load_config(path=None, overrides: dict | None = None) -> PipelineConfig:
    """Build a PipelineConfig from an optional file plus flat overrides.

    Override keys use the same dotted paths as the file (``seed`` is a
    shorthand for ``gen.seed``).
    """
    tree: dict = {}
    if path is not None:
        try:
            tree = parse_config_text(Path(path).read_text())
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
    for key, value in (overrides or {}).items():
        if value is None:
            continue
        if key == "seed":
            key = "gen.seed"
        node = tree
        parts = key.split(".")
        for part in parts[:-1]:
            node = node.setdefault(part, {})
        node[parts[-1]] = value
    try:
        return _build_dataclass(PipelineConfig, tree)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc


def config_echo(config: PipelineConfig) -> dict:
    d = dataclasses.asdict(config)
    d["gen"] = config_to_dict(config.gen)
    return d


# -- stage runners --------------------------------------------------------------------

def run_detect(vol: IntensityVolume, config: PipelineConfig,
               gt: LabelVolume | None = None) -> DetectionSet:
    det = config.detector
    if det.backend == "blob":
        return blob_detections(vol, threshold=det.threshold, min_area=det.min_area)
    if gt is None:
        raise ConfigError("the oracle2d detector needs ground-truth labels")
    return oracle_boxes_2d(gt)


def make_seg_backend(config: PipelineConfig, gt: LabelVolume | None = None):
    seg = config.segmenter
    if seg.backend == "classical":
        return ClassicalSegBackend(threshold=seg.threshold, core_side=seg.core_side)
    if seg.backend == "oracle":
        if gt is None:
            raise ConfigError("the oracle segmenter needs ground-truth labels")
        return OracleSegBackend(gt)
    if not seg.external_dir:
        raise ConfigError("the external segmenter needs segmenter.external_dir")
    return ExternalSegBackend(seg.external_dir)


def boxes_for_arm(arm: str, img: IntensityVolume, gt: LabelVolume,
                  config: PipelineConfig) -> list[Box3D]:
    if arm == ARM_BASELINE1:
        by_id = oracle_boxes_3d(gt)
        return [by_id[k] for k in sorted(by_id)]
    if arm == ARM_BASELINE2:
        return fuse(oracle_boxes_2d(gt), config.fusion)
    return fuse(run_detect(img, config, gt), config.fusion)


def run_pipeline(config: PipelineConfig, out_dir) -> MetricsReport:
    """gen -> detect -> fuse -> segment -> eval, through the file formats."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    manifest = gen_dataset(config.gen, config.count, out / "data",
                           workers=config.workers)
    for sub in ("detections", "boxes", "pred"):
        (out / sub).mkdir(exist_ok=True)

    matches = []
    for entry in manifest["volumes"]:
        stem = f"vol_{entry['index']:03d}"
        img = volume_read(out / "data" / entry["image"])
        gt = volume_read(out / "data" / entry["labels"])

        dets = run_detect(img, config, gt)
        save_detections(dets, out / "detections" / f"{stem}.jsonl")
        dets = load_detections(out / "detections" / f"{stem}.jsonl", dims=img.dims)

        boxes = fuse(dets, config.fusion)
        save_boxes3d(boxes, out / "boxes" / f"{stem}.json")
        boxes = load_boxes3d(out / "boxes" / f"{stem}.json")

        backend = make_seg_backend(config, gt)
        pred, _ = segment_volume(img, boxes, backend,
                                 threshold=config.segmenter.assemble_threshold)
        volume_write(pred, out / "pred" / f"{stem}_labels")
        pred = volume_read(out / "pred" / f"{stem}_labels")

        matches.append(match_instances(pred, gt))

    report = MetricsReport.from_matches(
        matches, grid=config.metrics.grid(), mode=config.metrics.mode,
        config=config_echo(config))
    save_report(report, out / "metrics.json")
    save_curve_csv(report, out / "metrics.csv")
    return report


def run_eval_volumes(pairs, config: PipelineConfig) -> MetricsReport:
    """Evaluate (pred, gt) label-volume pairs under the configured metrics."""
    matches = [match_instances(pred, gt) for pred, gt in pairs]
    return MetricsReport.from_matches(
        matches, grid=config.metrics.grid(), mode=config.metrics.mode,
        config=config_echo(config))


def run_ablation(spec: AblationSpec, config: PipelineConfig, out_dir) -> dict:
    """Per profile x arm: boxes from the arm's source, shared segmentation.

    Every arm of one profile sees the same generated volumes. Failed arms
    are recorded, not fatal. Returns the report table (also written to
    ``ablation.json`` plus per-arm reports and a curve CSV).
    """
    out = Path(out_dir)
    (out / "reports").mkdir(parents=True, exist_ok=True)

    maj_table: list[list[float | None]] = []
    errors: dict[str, str] = {}
    csv_lines = ["profile,arm,th,AP,AR,AJ"]

    for profile in spec.profiles:
        gen_cfg = dataclasses.replace(config.gen, profile=profile, seed=spec.seed)
        data_dir = out / "data" / f"profile{profile}"
        manifest = gen_dataset(gen_cfg, spec.count, data_dir,
                               workers=config.workers)
        volumes = []
        for entry in manifest["volumes"]:
            img = volume_read(data_dir / entry["image"])
            gt = volume_read(data_dir / entry["labels"])
            volumes.append((img, gt))

        row: list[float | None] = []
        for arm in spec.arms:
            key = f"profile{profile}/{arm}"
            try:
                matches = []
                for img, gt in volumes:
                    boxes = boxes_for_arm(arm, img, gt, config)
                    backend = make_seg_backend(config, gt)
                    pred, _ = segment_volume(
                        img, boxes, backend,
                        threshold=config.segmenter.assemble_threshold)
                    matches.append(match_instances(pred, gt))
                report = MetricsReport.from_matches(
                    matches, grid=config.metrics.grid(),
                    mode=config.metrics.mode, config=config_echo(config))
                save_report(report, out / "reports" / f"profile{profile}_{arm}.json")
                for k, th in enumerate(report.curve.grid):
                    csv_lines.append(
                        f"{profile},{arm},{th:.6g},{report.curve.ap[k]:.10g},"
                        f"{report.curve.ar[k]:.10g},{report.curve.aj[k]:.10g}")
                row.append(report.maj)
            except Exception as exc:  # a failed arm must not sink the study
                log.exception("ablation arm %s failed", key)
                errors[key] = f"{type(exc).__name__}: {exc}"
                row.append(None)
        maj_table.append(row)

    result = {
        "rows": [f"profile{p}" for p in spec.profiles],
        "columns": list(spec.arms),
        "maj": maj_table,
        "errors": errors,
        "count": spec.count,
        "seed": spec.seed,
        "config": config_echo(config),
    }
    atomic_write_text(out / "ablation.json",
                      json.dumps(result, sort_keys=True, indent=2) + "\n")
    atomic_write_text(out / "curves.csv", "\n".join(csv_lines) + "\n")
    return result
