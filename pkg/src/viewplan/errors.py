"""Exception types shared across the toolkit."""


class ViewPlanError(Exception):
    """Base class for all toolkit errors."""


class InvariantViolation(ViewPlanError):
    """A domain type was constructed with invalid field values."""


class ParallelPlanes(ViewPlanError):
    """Two planes are parallel (or coincident) and define no intersection line."""


class LineNotInPlane(ViewPlanError):
    """A 3D line was projected into a slice it does not lie in."""


class EmptyIntersection(ViewPlanError):
    """An intersection line misses the image rectangle entirely."""


class MissingView(ViewPlanError):
    """A dependency or request references a view that is not present."""


class ShapeMismatch(ViewPlanError):
    """Two label sets or rasters disagree in extent or channel structure."""


class SearchSpaceTooLarge(ViewPlanError):
    """An exhaustive search was requested over more candidates than the cap allows."""


class DegenerateGeometry(ViewPlanError):
    """Random exam generation could not produce a usable geometry."""


class EmptyGroup(ViewPlanError):
    """Aggregation was requested over an empty collection of cases."""


class SchemaError(ViewPlanError):
    """Structured input text does not match the documented schema."""


class HeatmapFormatError(ViewPlanError):
    """Base class for heatmap file format errors."""


class BadMagic(HeatmapFormatError):
    """File does not start with the expected magic/version header."""


class TruncatedPayload(HeatmapFormatError):
    """File payload length does not match the header."""


class NonFiniteValue(HeatmapFormatError):
    """A raster contains NaN or infinite values."""


class CliError(ViewPlanError):
    """Command-line usage error (bad flag combination, unknown target, ...)."""
