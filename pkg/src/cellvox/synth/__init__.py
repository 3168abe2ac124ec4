"""Synthetic cell-volume generation."""

from .config import ContactEnergies, GenConfig
from .cpm import (
    KIND_EU,
    KIND_HET,
    KIND_MEDIUM,
    CpmLattice,
    cell_contact_area,
    cpm_relax,
    crop_lattice,
    proposal_delta,
    seed_cells,
)
from .dataset import gen_dataset, generate_volume, load_manifest
from .render import gaussian_blur, render_volume

__all__ = [
    "ContactEnergies",
    "GenConfig",
    "CpmLattice",
    "KIND_EU",
    "KIND_HET",
    "KIND_MEDIUM",
    "cell_contact_area",
    "cpm_relax",
    "crop_lattice",
    "proposal_delta",
    "seed_cells",
    "gen_dataset",
    "generate_volume",
    "load_manifest",
    "gaussian_blur",
    "render_volume",
]
