"""Typed errors shared across the package."""


class Gf2Error(Exception):
    """Base class for all package errors."""


class ShapeMismatch(Gf2Error):
    pass


class NonScalarLoss(Gf2Error):
    pass


class BrokenTape(Gf2Error):
    pass


class NonFiniteValue(Gf2Error):
    pass


class EmptySegmentList(Gf2Error):
    pass


class BadResolution(Gf2Error):
    pass


class EmptyScene(Gf2Error):
    pass


class CountMismatch(Gf2Error):
    pass


class AllSegmentsSkipped(Gf2Error):
    pass


class EmptyDataset(Gf2Error):
    pass


class Unsupported(Gf2Error):
    pass


class MissingCheckpoint(Gf2Error):
    pass


class BadMagic(Gf2Error):
    pass


class VersionMismatch(Gf2Error):
    pass


class CorruptEntry(Gf2Error):
    pass


class BadConfig(Gf2Error):
    pass


class TooFewProbes(Gf2Error):
    pass
