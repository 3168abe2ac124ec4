"""Three-compartment cellular lattice with Metropolis relaxation.

Each virtual cell owns two euchromatin compartments and 5-9 heterochromatin
compartments with fixed target volumes (85% / 15% of the cell). Sites copy
compartment identity from a random face neighbor; moves are accepted with
probability min(1, exp(-dH / T)) under

    H = sum_{neighbor pairs} E(comp_i, comp_j) + lambda * sum_c (V_c - V_target_c)^2

where E is 0 inside a compartment, the medium contact energy against the
medium, the cell-cell contact energy across cells, and a kind-pair energy
between compartments of one cell. Pairs with a site outside the lattice
contribute nothing (fixed, non-periodic boundary; downstream cropping
removes boundary artifacts).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from ..errors import CropTooLargeError, PlacementOverflowError
from .config import GenConfig

log = logging.getLogger(__name__)

try:
    from numba import njit
except ImportError:  # pragma: no cover - numba is a declared dependency
    def njit(*args, **kwargs):
        if args and callable(args[0]):
            return args[0]

        def wrap(f):
            return f
        return wrap

KIND_MEDIUM = 0
KIND_EU = 1
KIND_HET = 2


@dataclass
class CpmLattice:
    """Site-to-compartment map plus per-compartment bookkeeping tables.

    ``comp`` has shape (nx, ny, nz); entry 0 is the medium. Tables are
    indexed by compartment id (index 0 = medium).
    """

    comp: np.ndarray
    comp_cell: np.ndarray    # compartment id -> owning cell id (0 = medium)
    comp_kind: np.ndarray    # compartment id -> KIND_*
    comp_target: np.ndarray  # compartment id -> target volume (0 for medium)
    comp_volume: np.ndarray  # compartment id -> realized volume
    extinct: list[int] = field(default_factory=list)

    @property
    def dims(self) -> tuple[int, int, int]:
        return self.comp.shape  # type: ignore[return-value]

    def cell_map(self) -> np.ndarray:
        return self.comp_cell[self.comp]

    def kind_map(self) -> np.ndarray:
        return self.comp_kind[self.comp]

    def cells(self) -> list[int]:
        """Cell ids with at least one site present."""
        present = np.unique(self.comp)
        ids = np.unique(self.comp_cell[present])
        return [int(c) for c in ids if c > 0]

    def cell_target(self, cell_id: int) -> float:
        return float(self.comp_target[self.comp_cell == cell_id].sum())

    def recount_volumes(self) -> None:
        self.comp_volume = np.bincount(
            self.comp.ravel(), minlength=len(self.comp_cell)).astype(np.int64)

    def copy(self) -> "CpmLattice":
        return CpmLattice(self.comp.copy(), self.comp_cell.copy(),
                          self.comp_kind.copy(), self.comp_target.copy(),
                          self.comp_volume.copy(), list(self.extinct))


def _sphere_offsets(radius: int) -> np.ndarray:
    r = int(radius)
    g = np.mgrid[-r:r + 1, -r:r + 1, -r:r + 1].reshape(3, -1).T
    return g[(g ** 2).sum(axis=1) <= r * r]


def seed_cells(config: GenConfig, rng: np.random.Generator) -> CpmLattice:
    """Place non-overlapping seed spheres and carve their compartments.

    Each sphere is partitioned by nearest-attractor assignment into 2
    euchromatin and k heterochromatin compartments (k drawn per cell);
    target volumes split the cell target 85/15 across the kinds.
    """
    dims = config.lattice_dims
    r = config.seed_sphere_radius
    if any(d < 2 * r + 1 for d in dims):
        raise PlacementOverflowError(f"radius-{r} spheres cannot fit in {dims}")
    offsets = _sphere_offsets(r)

    comp = np.zeros(dims, dtype=np.int32)
    comp_cell = [0]
    comp_kind = [KIND_MEDIUM]
    comp_target = [0.0]

    centers: list[np.ndarray] = []
    min_sq = (2 * r) ** 2
    for cell in range(1, config.cell_count + 1):
        placed = False
        for _ in range(config.placement_attempts):
            c = np.array([int(rng.integers(r, d - r)) for d in dims])
            if all(((c - prev) ** 2).sum() > min_sq for prev in centers):
                placed = True
                break
        if not placed:
            raise PlacementOverflowError(
                f"could not place cell {cell} of {config.cell_count} "
                f"after {config.placement_attempts} attempts")
        centers.append(c)

        k = int(rng.integers(config.het_compartments_min,
                             config.het_compartments_max + 1))
        n_comp = 2 + k
        attractor_idx = rng.choice(len(offsets), size=n_comp, replace=False)
        attractors = offsets[attractor_idx]

        first_id = len(comp_cell)
        comp_cell.extend([cell] * n_comp)
        comp_kind.extend([KIND_EU] * 2 + [KIND_HET] * k)
        eu_each = (1.0 - config.het_fraction) * config.cell_target_volume / 2.0
        het_each = config.het_fraction * config.cell_target_volume / k
        comp_target.extend([eu_each] * 2 + [het_each] * k)

        d2 = ((offsets[:, None, :] - attractors[None, :, :]) ** 2).sum(axis=2)
        nearest = np.argmin(d2, axis=1)  # ties: lowest attractor index
        vox = c[None, :] + offsets
        comp[vox[:, 0], vox[:, 1], vox[:, 2]] = first_id + nearest

    lat = CpmLattice(
        comp=comp,
        comp_cell=np.array(comp_cell, dtype=np.int32),
        comp_kind=np.array(comp_kind, dtype=np.int32),
        comp_target=np.array(comp_target, dtype=np.float64),
        comp_volume=np.zeros(len(comp_cell), dtype=np.int64),
    )
    lat.recount_volumes()
    return lat


@njit(cache=True)
def _pair_energy(c1, c2, comp_cell, comp_kind, j_cm, j_cc, j_internal):
    if c1 == c2:
        return 0.0
    cell1 = comp_cell[c1]
    cell2 = comp_cell[c2]
    if cell1 == 0 or cell2 == 0:
        return j_cm
    if cell1 != cell2:
        return j_cc
    return j_internal[comp_kind[c1], comp_kind[c2]]


@njit(cache=True)
def _proposal_delta(flat, nx, ny, nz, comp_cell, comp_kind, comp_volume,
                    comp_target, lam, j_cm, j_cc, j_internal, s, src):
    """Incremental dH for copying compartment ``src`` into flat site ``s``."""
    old = flat[s]
    if old == src:
        return 0.0
    z = s % nz
    rem = s // nz
    y = rem % ny
    x = rem // ny
    d = 0.0
    if x > 0:
        n = flat[s - ny * nz]
        d += _pair_energy(src, n, comp_cell, comp_kind, j_cm, j_cc, j_internal) \
            - _pair_energy(old, n, comp_cell, comp_kind, j_cm, j_cc, j_internal)
    if x < nx - 1:
        n = flat[s + ny * nz]
        d += _pair_energy(src, n, comp_cell, comp_kind, j_cm, j_cc, j_internal) \
            - _pair_energy(old, n, comp_cell, comp_kind, j_cm, j_cc, j_internal)
    if y > 0:
        n = flat[s - nz]
        d += _pair_energy(src, n, comp_cell, comp_kind, j_cm, j_cc, j_internal) \
            - _pair_energy(old, n, comp_cell, comp_kind, j_cm, j_cc, j_internal)
    if y < ny - 1:
        n = flat[s + nz]
        d += _pair_energy(src, n, comp_cell, comp_kind, j_cm, j_cc, j_internal) \
            - _pair_energy(old, n, comp_cell, comp_kind, j_cm, j_cc, j_internal)
    if z > 0:
        n = flat[s - 1]
        d += _pair_energy(src, n, comp_cell, comp_kind, j_cm, j_cc, j_internal) \
            - _pair_energy(old, n, comp_cell, comp_kind, j_cm, j_cc, j_internal)
    if z < nz - 1:
        n = flat[s + 1]
        d += _pair_energy(src, n, comp_cell, comp_kind, j_cm, j_cc, j_internal) \
            - _pair_energy(old, n, comp_cell, comp_kind, j_cm, j_cc, j_internal)
    if old != 0:
        v = comp_volume[old]
        t = comp_target[old]
        d += lam * ((v - 1.0 - t) ** 2 - (v - t) ** 2)
    if src != 0:
        v = comp_volume[src]
        t = comp_target[src]
        d += lam * ((v + 1.0 - t) ** 2 - (v - t) ** 2)
    return d


@njit(cache=True)
def _run_sweep(flat, nx, ny, nz, comp_cell, comp_kind, comp_volume, comp_target,
               lam, temp, j_cm, j_cc, j_internal, sites, dirs, us, extinct):
    for i in range(sites.shape[0]):
        s = sites[i]
        z = s % nz
        rem = s // nz
        y = rem % ny
        x = rem // ny
        d = dirs[i]
        if d == 0:
            if x == 0:
                continue
            t = s - ny * nz
        elif d == 1:
            if x == nx - 1:
                continue
            t = s + ny * nz
        elif d == 2:
            if y == 0:
                continue
            t = s - nz
        elif d == 3:
            if y == ny - 1:
                continue
            t = s + nz
        elif d == 4:
            if z == 0:
                continue
            t = s - 1
        else:
            if z == nz - 1:
                continue
            t = s + 1
        src = flat[t]
        old = flat[s]
        if old == src:
            continue
        dh = _proposal_delta(flat, nx, ny, nz, comp_cell, comp_kind, comp_volume,
                             comp_target, lam, j_cm, j_cc, j_internal, s, src)
        if dh <= 0.0 or us[i] < np.exp(-dh / temp):
            flat[s] = src
            comp_volume[old] -= 1
            comp_volume[src] += 1
            if old != 0 and comp_volume[old] == 0:
                extinct[old] = 1


def _internal_matrix(config: GenConfig) -> np.ndarray:
    j = np.zeros((3, 3), dtype=np.float64)
    j[KIND_EU, KIND_EU] = config.contact.eu_eu
    j[KIND_EU, KIND_HET] = j[KIND_HET, KIND_EU] = config.contact.eu_het
    j[KIND_HET, KIND_HET] = config.contact.het_het
    return j


def proposal_delta(lattice: CpmLattice, config: GenConfig,
                   site: tuple[int, int, int], src_comp: int) -> float:
    """dH for one site-copy proposal; the same arithmetic the sweeps use."""
    nx, ny, nz = lattice.dims
    x, y, z = site
    flat = np.ascontiguousarray(lattice.comp).ravel()
    s = (x * ny + y) * nz + z
    return float(_proposal_delta(
        flat, nx, ny, nz, lattice.comp_cell, lattice.comp_kind,
        lattice.comp_volume, lattice.comp_target,
        config.volume_stiffness, config.contact.cell_medium,
        config.contact.cell_cell, _internal_matrix(config), s, src_comp))


def cpm_relax(lattice: CpmLattice, config: GenConfig,
              rng: np.random.Generator) -> CpmLattice:
    """Run ``mc_sweeps`` Metropolis sweeps; one proposal per site per sweep.

    Returns a new lattice; the input is never mutated. Compartments may go
    extinct (volume 0); the event is logged and recorded, not fatal.
    """
    lat = lattice.copy()
    if config.mc_sweeps == 0:
        return lat
    nx, ny, nz = lat.dims
    n = nx * ny * nz
    lat.comp = np.ascontiguousarray(lat.comp)
    flat = lat.comp.ravel()
    extinct = np.zeros(len(lat.comp_cell), dtype=np.int8)
    j_internal = _internal_matrix(config)
    for _ in range(config.mc_sweeps):
        sites = rng.integers(0, n, size=n, dtype=np.int64)
        dirs = rng.integers(0, 6, size=n, dtype=np.int64)
        us = rng.random(n)
        _run_sweep(flat, nx, ny, nz, lat.comp_cell, lat.comp_kind,
                   lat.comp_volume, lat.comp_target,
                   config.volume_stiffness, config.temperature,
                   config.contact.cell_medium, config.contact.cell_cell,
                   j_internal, sites, dirs, us, extinct)
    gone = [int(c) for c in np.flatnonzero(extinct)]
    for c in gone:
        if c not in lat.extinct:
            lat.extinct.append(c)
            log.warning("compartment %d (cell %d) went extinct",
                        c, int(lat.comp_cell[c]))
    return lat


def crop_lattice(lattice: CpmLattice, crop_dims: tuple[int, int, int]) -> CpmLattice:
    """Centered crop; cells entirely outside vanish from the inventory."""
    dims = lattice.dims
    if any(c > d for c, d in zip(crop_dims, dims)):
        raise CropTooLargeError(f"crop {crop_dims} exceeds lattice {dims}")
    starts = [(d - c) // 2 for d, c in zip(dims, crop_dims)]
    sl = tuple(slice(s, s + c) for s, c in zip(starts, crop_dims))
    out = lattice.copy()
    out.comp = np.ascontiguousarray(lattice.comp[sl])
    out.recount_volumes()
    return out


def cell_contact_area(lattice: CpmLattice) -> int:
    """Number of face-adjacent site pairs whose owners are two distinct cells."""
    cells = lattice.cell_map()
    total = 0
    for ax in range(3):
        a = np.moveaxis(cells, ax, 0)[:-1]
        b = np.moveaxis(cells, ax, 0)[1:]
        total += int(np.count_nonzero((a != b) & (a > 0) & (b > 0)))
    return total
