"""Dataset-scale generation: volume pairs, ground-truth boxes, manifest."""

from __future__ import annotations

import dataclasses
import json
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from ..detect import oracle_boxes_2d, oracle_boxes_3d, save_detections
from ..boxes import save_boxes3d
from ..ioutil import atomic_write_text
from ..volume import IntensityVolume, LabelVolume, volume_write
from .config import GenConfig
from .cpm import cpm_relax, crop_lattice, seed_cells
from .render import render_volume


def config_to_dict(config: GenConfig) -> dict:
    d = dataclasses.asdict(config)
    d["lattice_dims"] = list(config.lattice_dims)
    d["crop_dims"] = list(config.crop_dims)
    return d


def generate_volume(config: GenConfig, index: int = 0
                    ) -> tuple[IntensityVolume, LabelVolume]:
    """Generate one volume pair; the per-volume seed is ``config.seed + index``."""
    rng = np.random.default_rng(config.seed + index)
    lat = seed_cells(config, rng)
    lat = cpm_relax(lat, config, rng)
    lat = crop_lattice(lat, config.crop_dims)
    return render_volume(lat, config, rng)


def _emit_volume(config: GenConfig, index: int, out_dir: str) -> dict:
    out = Path(out_dir)
    img, lab = generate_volume(config, index)
    stem = f"vol_{index:03d}"
    volume_write(img, out / f"{stem}_image")
    volume_write(lab, out / f"{stem}_labels")
    boxes3d = oracle_boxes_3d(lab)
    save_boxes3d([boxes3d[k] for k in sorted(boxes3d)], out / f"{stem}_boxes3d.json")
    save_detections(oracle_boxes_2d(lab), out / f"{stem}_boxes2d.jsonl")
    return {
        "index": index,
        "seed": config.seed + index,
        "image": f"{stem}_image",
        "labels": f"{stem}_labels",
        "boxes3d": f"{stem}_boxes3d.json",
        "boxes2d": f"{stem}_boxes2d.jsonl",
    }


def gen_dataset(config: GenConfig, count: int, out_dir, workers: int = 1) -> dict:
    """Emit ``count`` volume pairs with ground-truth boxes and a manifest.

    Regeneration with the same config is byte-identical. Volumes are
    independent; ``workers > 1`` distributes them over processes.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if workers > 1 and count > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            futures = [pool.submit(_emit_volume, config, i, str(out))
                       for i in range(count)]
            entries = [f.result() for f in futures]
    else:
        entries = [_emit_volume(config, i, str(out)) for i in range(count)]
    entries.sort(key=lambda e: e["index"])
    manifest = {"config": config_to_dict(config), "count": count, "volumes": entries}
    atomic_write_text(out / "manifest.json",
                      json.dumps(manifest, sort_keys=True, indent=2) + "\n")
    return manifest


def load_manifest(path) -> dict:
    p = Path(path)
    if p.is_dir():
        p = p / "manifest.json"
    return json.loads(p.read_text())
