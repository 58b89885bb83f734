"""Exception hierarchy shared by every stage of the toolkit."""

from __future__ import annotations


class OdmForgeError(Exception):
    """Base class; ``stage`` names the pipeline stage that raised."""

    stage = "odmforge"


# -- ingest -----------------------------------------------------------------

class MissingField(OdmForgeError, ValueError):
    stage = "ingest"


class InvalidRange(OdmForgeError, ValueError):
    stage = "ingest"


class UnknownZoning(OdmForgeError, ValueError):
    stage = "ingest"


class MalformedRow(OdmForgeError, ValueError):
    stage = "ingest"

    def __init__(self, row: int, reason: str):
        self.row = row
        super().__init__(f"row {row}: {reason}")


class NegativeCount(MalformedRow):
    pass


class WindowMisaligned(MalformedRow):
    pass


class ThresholdViolation(MalformedRow):
    """The provider emitted a cell below its own declared threshold."""


class MixedProviders(OdmForgeError, ValueError):
    stage = "ingest"


# -- harmonise --------------------------------------------------------------

class UnmappedZone(OdmForgeError, KeyError):
    stage = "harmonise"

    def __init__(self, codes):
        self.codes = sorted(codes)
        shown = ", ".join(self.codes[:20])
        more = f" (+{len(self.codes) - 20} more)" if len(self.codes) > 20 else ""
        super().__init__(f"zones without crosswalk entry: {shown}{more}")

    def __str__(self):
        return self.args[0]


class BadWeights(OdmForgeError, ValueError):
    stage = "harmonise"


class NonDivisibleWindow(OdmForgeError, ValueError):
    stage = "harmonise"


class AlreadyExtrapolated(OdmForgeError, ValueError):
    stage = "harmonise"


# -- products ---------------------------------------------------------------

class LevelUnavailable(OdmForgeError, ValueError):
    stage = "products"


class InsufficientBaseline(OdmForgeError, ValueError):
    stage = "products"


# -- mfa --------------------------------------------------------------------

class EmptyDay(OdmForgeError, ValueError):
    stage = "mfa"


class AlphaOutOfRange(OdmForgeError, ValueError):
    stage = "mfa"


class MissingGeometry(OdmForgeError, KeyError):
    stage = "mfa"

    def __init__(self, codes):
        self.codes = sorted(codes)
        super().__init__("zones without geometry: " + ", ".join(self.codes))

    def __str__(self):
        return self.args[0]


# -- privacy / synth --------------------------------------------------------

class StorageUnavailable(OdmForgeError, OSError):
    stage = "sweep"


class InvalidSpec(OdmForgeError, ValueError):
    stage = "synth"
