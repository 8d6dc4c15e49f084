"""Exception hierarchy.

Every error raised on bad input derives from :class:`VitalwireError` so the CLI
can map it to exit status 1. Subclasses also derive from ``ValueError`` (or
``OSError`` for filesystem failures) so callers can catch them generically.
"""


class VitalwireError(Exception):
    """Base class for all data errors raised by this package."""


# wire protocol
class WireError(VitalwireError, ValueError):
    pass


class BadSync(WireError):
    pass


class Truncated(WireError):
    pass


class UnknownBlockId(WireError):
    pass


class BadFormatCode(WireError):
    pass


class Overflow(WireError):
    pass


# ATS files
class AtsError(VitalwireError, ValueError):
    pass


class BadMagic(AtsError):
    pass


class BadHeader(AtsError):
    pass


class BadChannelType(AtsError):
    pass


class TruncatedBlock(AtsError):
    pass


class InvalidDate(AtsError):
    pass


class BlockSizeMismatch(AtsError):
    pass


class BadChannelIndex(AtsError, IndexError):
    pass


# telemetry
class TelemetryError(VitalwireError, ValueError):
    pass


class OutOfRange(TelemetryError):
    pass


class BadSampleRate(TelemetryError):
    pass


class IncompleteTriplet(TelemetryError):
    pass


# ECG identification
class EcgIdError(VitalwireError, ValueError):
    pass


class TooShort(EcgIdError):
    pass


class NoBeatsFound(EcgIdError):
    pass


class MissingFiducial(EcgIdError):
    pass


class TooFewBeats(EcgIdError):
    pass


class DuplicateId(EcgIdError):
    pass


class DimensionMismatch(EcgIdError):
    pass


class EmptyStore(EcgIdError):
    pass


class UnknownId(EcgIdError, KeyError):
    pass


# badges
class BadgeError(VitalwireError, ValueError):
    pass


class InvalidFormat(BadgeError):
    pass


class LengthMismatch(BadgeError):
    pass


class ParityError(BadgeError):
    pass


class FieldOverflow(BadgeError):
    pass


# RC4 and Structure archives
class ArchiveError(VitalwireError):
    pass


class EmptyKey(ArchiveError, ValueError):
    pass


class ArchiveIOError(ArchiveError, OSError):
    pass


class MissingStructureFile(ArchiveError, FileNotFoundError):
    pass


class CorruptHeader(ArchiveError, ValueError):
    pass


class SizeMismatch(ArchiveError, ValueError):
    pass


# gateway and access control
class GatewayError(VitalwireError):
    pass


class BindError(GatewayError, OSError):
    pass


class DownstreamUnreachable(GatewayError, OSError):
    pass


class MidStreamDisconnect(GatewayError, OSError):
    def __init__(self, message, stats=None):
        super().__init__(message)
        self.stats = stats


class OutOfOrder(VitalwireError, RuntimeError):
    pass
