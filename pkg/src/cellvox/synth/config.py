"""Configuration for synthetic cell-volume generation."""

from __future__ import annotations

from dataclasses import dataclass, field

from ..errors import ConfigError


@dataclass(frozen=True)
class ContactEnergies:
    """Contact energy per neighbor-site pair across a compartment boundary.

    ``cell_cell`` is the cell-cell surface-tension knob: contact between two
    cells is favored over separation by medium when it is below twice
    ``cell_medium``. The remaining terms act between compartments of the
    same cell.
    """

    cell_medium: float = 8.0
    cell_cell: float = 14.0
    eu_eu: float = 2.0
    eu_het: float = 1.0
    het_het: float = 4.0


@dataclass(frozen=True)
class GenConfig:
    """All knobs of the generator; the full pipeline is a pure function of it."""

    cell_count: int = 128
    lattice_dims: tuple[int, int, int] = (84, 84, 84)
    crop_dims: tuple[int, int, int] = (64, 64, 64)
    upscale_factor: int = 2

    mc_sweeps: int = 200
    temperature: float = 10.0
    volume_stiffness: float = 2.0
    contact: ContactEnergies = field(default_factory=ContactEnergies)

    cell_target_volume: float = 1800.0
    het_fraction: float = 0.15
    het_compartments_min: int = 5
    het_compartments_max: int = 9
    seed_sphere_radius: int = 4
    placement_attempts: int = 10000

    mask_smooth_sigma: float = 1.0
    intensity_eu: float = 0.45
    intensity_het: float = 0.85
    blur_sigma_iso: float = 1.5   # profile 2
    blur_sigma_xy: float = 1.0    # profile 3
    blur_sigma_z: float = 2.5     # profile 3
    noise_sigma: float = 0.05

    profile: int = 1
    seed: int = 0

    def __post_init__(self):
        if self.cell_count < 1:
            raise ConfigError("cell_count must be >= 1")
        if len(self.lattice_dims) != 3 or len(self.crop_dims) != 3:
            raise ConfigError("lattice_dims and crop_dims must be 3-tuples")
        if any(c > l for c, l in zip(self.crop_dims, self.lattice_dims)):
            raise ConfigError(f"crop {self.crop_dims} exceeds lattice {self.lattice_dims}")
        if any(d < 1 for d in self.lattice_dims):
            raise ConfigError("lattice dims must be positive")
        if self.upscale_factor < 1:
            raise ConfigError("upscale_factor must be >= 1")
        if self.temperature <= 0:
            raise ConfigError("temperature must be positive")
        if not 0.0 < self.het_fraction < 1.0:
            raise ConfigError("het_fraction must be in (0, 1)")
        if not 1 <= self.het_compartments_min <= self.het_compartments_max:
            raise ConfigError("bad heterochromatin compartment range")
        if self.seed_sphere_radius < 1:
            raise ConfigError("seed_sphere_radius must be >= 1")
        for name in ("mask_smooth_sigma", "blur_sigma_iso", "blur_sigma_xy",
                     "blur_sigma_z", "noise_sigma"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be >= 0")
        if self.profile not in (1, 2, 3):
            raise ConfigError(f"profile {self.profile} not in {{1, 2, 3}}")
        if not 0.0 <= self.intensity_eu <= 1.0 or not 0.0 <= self.intensity_het <= 1.0:
            raise ConfigError("intensity levels must lie in [0, 1]")

    @property
    def output_dims(self) -> tuple[int, int, int]:
        f = self.upscale_factor
        return tuple(d * f for d in self.crop_dims)  # type: ignore[return-value]
