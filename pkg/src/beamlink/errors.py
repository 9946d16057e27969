"""Exception types shared across the toolkit.

Every recoverable failure raises a subclass of :class:`BeamlinkError` so
callers (and the CLI) can map failures onto exit codes without string
matching.
"""

from __future__ import annotations


class BeamlinkError(Exception):
    """Base class for all toolkit errors."""


# --- geometry ---------------------------------------------------------------


class ParallelRaysError(BeamlinkError):
    """Back-projected rays are parallel; no unique mutual perpendicular."""


class OutOfBoundsError(BeamlinkError):
    """A pixel coordinate lies outside the image of its camera."""


class UnderdeterminedError(BeamlinkError):
    """Too few (or too degenerate) samples for the requested fit."""


class NoIntersectionError(BeamlinkError):
    """Two surfaces do not intersect inside the search region."""


class IllConditionedError(BeamlinkError):
    """A fit succeeded numerically but its residual exceeds the trust bound."""


class DegenerateInputError(BeamlinkError):
    """Input is degenerate (e.g. a plane normal parallel to the axis)."""


class ParallelBundleError(BeamlinkError):
    """A line bundle has no unique least-squares intersection point."""


# --- calibration ------------------------------------------------------------


class NonOrthogonalAxesError(BeamlinkError):
    """Recovered device axes deviate too far from orthogonality."""


class TooFewGroupsError(BeamlinkError):
    """Not enough same-drive point groups to intersect virtual beams."""


class RankDeficientError(BeamlinkError):
    """The mapping design matrix does not have full column rank."""


class BehindDeviceError(BeamlinkError):
    """Target lies behind the steering device (non-positive z component)."""


class DriveOutOfRangeError(BeamlinkError):
    """A drive command falls outside the unit drive square."""


# --- fsk channel ------------------------------------------------------------


class BadDurationError(BeamlinkError):
    """Symbol duration is not an integer number of modulation periods."""


class UnknownSymbolError(BeamlinkError):
    """Symbol is not part of the configured alphabet."""


class NyquistViolationError(BeamlinkError):
    """ADC rate cannot represent the fastest alphabet frequency."""


class BelowMinimumRateError(BeamlinkError):
    """Sampling rate is below the decoder's minimum operating rate."""


# --- tracking ---------------------------------------------------------------


class DegenerateHistogramError(BeamlinkError):
    """Histogram has all its mass in a single bin; no threshold exists."""


class NoBlobsError(BeamlinkError):
    """No connected component survived thresholding and area filtering."""


class TrackingLostError(BeamlinkError):
    """Tracker lost the target (recoverable; runtime keeps last command)."""


# --- optics / runtime -------------------------------------------------------


class BeamMissesBoardError(BeamlinkError):
    """The steered beam does not hit the scan board."""


class UnreachablePointError(BeamlinkError):
    """Target cannot be reached within steering range or mapped drive."""
