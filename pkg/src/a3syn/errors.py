"""Exception types shared across the package."""


class A3SynError(Exception):
    """Base class for errors raised by this package."""


class RigError(A3SynError):
    """Invalid rig data: bad hierarchy, weights, or bind matrices."""


class IngestError(A3SynError):
    """Asset file could not be parsed or fails rig checks."""


class NotVisibleError(A3SynError):
    """No candidate camera sees the object."""


class ProviderError(A3SynError):
    """The generative backend replied with an error payload."""


class TransportError(A3SynError):
    """The generative backend could not be reached or timed out."""


class NoValidViewError(A3SynError):
    """Every refinement view failed the consistency threshold."""
