"""Exception hierarchy shared across the package."""


class HaloError(Exception):
    """Base class for all package errors."""


class ConfigurationError(HaloError):
    """Invalid geometry, parameters, or run configuration."""


class AddressError(HaloError):
    """Block or page index outside the chip geometry."""


class FlashStateError(HaloError):
    """Command issued against the wrong cell state (e.g. program-over-program)."""


class CalibrationError(HaloError):
    """No interrupt duration on the tick grid reaches the target bit ratios."""


class EnrollmentError(HaloError):
    """Page rejected during enrollment (insufficient stable bytes)."""


class MapExhaustedError(HaloError):
    """Not enough unconsumed byte locations left in a page map."""


class ProtocolError(HaloError):
    """Authentication protocol violation (bad lengths, bad locations, bad state)."""


class FrameError(ProtocolError):
    """Base class for wire-format decode failures."""


class FrameMagicError(FrameError):
    """Frame does not start with the expected magic bytes."""


class FrameVersionError(FrameError):
    """Unsupported wire format version."""


class FrameLengthError(FrameError):
    """Frame truncated or payload length out of bounds."""


class FrameCrcError(FrameError):
    """CRC32 mismatch over header and payload."""


class SnapshotError(HaloError):
    """Chip snapshot file is malformed or has an unsupported version."""
