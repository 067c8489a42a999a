"""Exception types raised across the simulator."""


class KrakenSimError(Exception):
    """Base class for every error the simulator raises on purpose."""


class FieldOverflow(KrakenSimError, ValueError):
    """An event field does not fit its binary field width."""


class ReservedBitsSet(KrakenSimError, ValueError):
    """A zero-mandated bit of an encoded event word is nonzero."""


class InvalidActivity(KrakenSimError, ValueError):
    """Sensor activity fraction outside [0, 1]."""


class FileFormatError(KrakenSimError, ValueError):
    """Malformed binary artifact file."""


class BadMagic(FileFormatError):
    """File does not start with the expected magic bytes."""


class VersionMismatch(FileFormatError):
    """File carries an unsupported format version."""


class TruncatedRecord(FileFormatError):
    """File ends in the middle of a record or is shorter than its header."""


class NonMonotoneTimestamp(FileFormatError):
    """Frame timestamps in a stream are not strictly increasing."""


class TimeRegression(KrakenSimError, ValueError):
    """A neuron update was requested for a time before its last update."""


class GeometryMismatch(KrakenSimError, ValueError):
    """Event coordinates fall outside the layer's input geometry."""


class ShapeMismatch(KrakenSimError, ValueError):
    """Tensor shapes or layer-chain geometries are inconsistent."""


class TooManyChannels(KrakenSimError, ValueError):
    """A layer needs more channels than the engine has compute units."""


class InvalidPackedByte(KrakenSimError, ValueError):
    """A packed-trit byte is outside the valid base-3 range [0, 242]."""


class DimsMismatch(KrakenSimError, ValueError):
    """Declared dims do not match the payload size."""


class DegenerateFit(KrakenSimError, ValueError):
    """Calibration points do not determine the model parameters."""
