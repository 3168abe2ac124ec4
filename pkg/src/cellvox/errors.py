"""Exception types shared across the package.

The CLI maps these onto exit codes: ConfigError -> 1 (usage/config),
DataError -> 2 (data/format), anything else -> 3 (internal).
"""


class CellvoxError(Exception):
    """Base class for all package errors."""


class ConfigError(CellvoxError):
    """Invalid configuration or infeasible run parameters."""


class DataError(CellvoxError):
    """Malformed or inconsistent data on an external interface."""


# -- geometry / contract violations -----------------------------------------

class ViewMismatchError(CellvoxError):
    """In-plane operation applied to boxes from different views."""


class DimsMismatchError(DataError):
    """Operands come from volumes of different dimensions."""


class EmptyOperandsError(CellvoxError):
    """Both voxel sets of a set operation are empty."""


class SliceOutOfRangeError(CellvoxError):
    """Slice index outside the volume extent along the view normal."""


class BoxOutsideVolumeError(CellvoxError):
    """Box does not intersect the volume at all."""


class CropTooLargeError(ConfigError):
    """Requested crop exceeds the lattice dimensions."""


class PlacementOverflowError(ConfigError):
    """Cell seeding exceeded its attempt cap; the lattice is too crowded."""


class EmptyClusterError(CellvoxError):
    """Median box requested for a cluster with no members."""


class EmptyInputError(CellvoxError):
    """Aggregation over zero volumes."""


# -- file formats ------------------------------------------------------------

class IoFailureError(DataError):
    """Underlying filesystem write/read failed."""


class HeaderMalformedError(DataError):
    """Volume sidecar header is not valid or violates the format contract."""


class PayloadSizeMismatchError(DataError):
    """Raw payload byte count does not match dims and dtype."""


class UnknownDtypeError(DataError):
    """Dtype tag outside the supported set (u8, u16, f32)."""


class ParseError(DataError):
    """A line of a detections file could not be parsed."""


class InvariantViolationError(DataError):
    """Parsed data violates a documented invariant."""


class MissingMaskFileError(DataError):
    """External segmentation backend is missing a per-box mask file."""
