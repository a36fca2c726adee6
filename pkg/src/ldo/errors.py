"""Exception types shared across the package.

Validation errors (bad schemas, broken invariants, malformed headers) are
kept distinct from I/O failures so the CLI can map them to different exit
codes.
"""


class LdoError(Exception):
    """Base class for all package-specific errors."""


class MalformedManifest(LdoError):
    """Scene manifest violates the documented schema."""


class BadMagic(LdoError):
    """Binary file does not start with the expected magic bytes."""


class BadVersion(LdoError):
    """Binary file carries an unsupported format version."""


class TruncatedFile(LdoError):
    """Binary payload length disagrees with the declared record count."""


class InvariantViolation(LdoError):
    """A domain-type invariant does not hold for the given data."""


class IoFailure(LdoError):
    """Reading or writing a file failed at the OS level."""


class EmptyInterval(LdoError):
    """No feature slice falls inside the requested height interval."""


class ShapeMismatch(LdoError):
    """Array arguments have inconsistent shapes."""


class IndivisibleChannels(LdoError):
    """Channel count is not an exact multiple of the height resolution."""


class NotNormalized(LdoError):
    """Per-voxel class probabilities do not sum to one."""


class DimMismatch(LdoError):
    """Two grids that must share dimensions do not."""


class LabelOutOfRange(LdoError):
    """A semantic label exceeds the configured class count."""


class ConfigError(LdoError):
    """Pipeline configuration file is invalid."""
