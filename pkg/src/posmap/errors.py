"""Exception hierarchy shared across the toolkit.

The three error families map onto the CLI's exit codes: configuration
problems (bad flags, missing files) exit 2, data problems (malformed or
inconsistent input files) exit 3, numeric problems (geometry or solver
failures) exit 4.
"""

from __future__ import annotations


class PosmapError(Exception):
    """Base class for all toolkit errors."""


class ConfigError(PosmapError):
    """Invalid run configuration: unknown options, missing files, bad values."""

    exit_code = 2


class DataError(PosmapError):
    """Malformed or internally inconsistent input data."""

    exit_code = 3


class NumericError(PosmapError):
    """Geometry or optimization failure."""

    exit_code = 4


class GeometryError(NumericError):
    """A geometric operation has no valid result for the given input."""


class BehindCameraError(GeometryError):
    """Point at or behind the camera plane cannot be projected."""


class NoGroundIntersectionError(GeometryError):
    """Viewing ray does not hit the ground plane in front of the camera."""


class DegenerateGeometryError(GeometryError):
    """Input configuration is degenerate (collinear points, parallel planes, ...)."""


class SolverError(NumericError):
    """Least-squares solver failed (non-finite residuals, singular system)."""
