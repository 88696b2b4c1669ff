"""Exception types shared across the toolkit."""


class SeloError(Exception):
    """Base class for all toolkit errors."""


class ManifestError(SeloError):
    """A manifest file could not be loaded or validated."""


class SchemaError(ManifestError):
    """Manifest JSON does not match the documented schema.

    The message names the offending field and its location in the document.
    """


class DegeneratePolygonError(ManifestError):
    """Polygon has fewer than 3 vertices, repeated consecutive vertices,
    or zero enclosed area."""


class VertexOutOfBoundsError(ManifestError):
    """A polygon vertex lies outside its image's bounds."""


class EmptyMaskError(SeloError):
    """A polygon rasterized to zero pixels (thinner than one pixel)."""


class EmptyGtError(SeloError):
    """The ground-truth mask union is empty; indicators are undefined."""


class NoApplicableScaleError(SeloError):
    """Image is smaller than every configured tile scale."""


class UncoveredPixelError(SeloError):
    """At least one pixel is covered by no tile; stacking is undefined there."""


class ScorerError(SeloError):
    """Base class for scorer failures."""


class ScorerUnavailableError(ScorerError):
    """The scorer could not be constructed or spawned."""


class ProtocolError(ScorerError):
    """The external scorer violated the wire protocol or died mid-session."""


class HandshakeError(ProtocolError):
    """External scorer announced a protocol we do not speak."""


class ScorerTimeoutError(ScorerError):
    """The external scorer did not answer within the configured timeout."""


class DimMismatchError(SeloError):
    """Array dimensions disagree with the manifest or companion file."""


class MissingMapError(SeloError):
    """No stored SeLo map found for a test case."""
