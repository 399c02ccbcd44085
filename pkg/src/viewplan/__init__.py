"""viewplan: imaging-plane prescription from intersecting-line heatmaps.

The package covers the geometric and optimization core of automatic
cardiac-MR view planning: slice-pose algebra, self-supervision heatmap
labels along view intersection lines, multi-view aggregation with a
coarse-to-fine grid search, evaluation metrics, a synthetic phantom
oracle, and file formats plus a small CLI wiring it all together.
"""

from .errors import (
    BadMagic,
    CliError,
    DegenerateGeometry,
    EmptyGroup,
    EmptyIntersection,
    HeatmapFormatError,
    InvariantViolation,
    LineNotInPlane,
    MissingView,
    NonFiniteValue,
    ParallelPlanes,
    SchemaError,
    SearchSpaceTooLarge,
    ShapeMismatch,
    TruncatedPayload,
    ViewPlanError,
)
from .geom import (
    Line2D,
    Line3D,
    Plane3D,
    Segment2D,
    SlicePose,
    SphericalAngles,
    angles_from_normal,
    clip_line,
    image_to_patient,
    intersect_planes,
    line3d_to_line2d,
    normal_from_angles,
    patient_to_image,
    pose_to_plane,
)
from .exam import ExamManifest, ViewRecord
from .heatmap import (
    DependencyMap,
    Heatmap,
    KernelConfig,
    LabelSet,
    default_dependency_map,
    gen_labels,
    l2_loss,
    render_heatmap,
    sigma_for_target,
)
from .metrics import PlaneMetrics, Report, Stats, aggregate, normal_deviation, point_to_plane
from .prescribe import (
    AnchorSegment,
    CandidatePlane,
    PrescriptionResult,
    SearchConfig,
    SourceView,
    build_anchor,
    exhaustive_search,
    instantiate,
    line_search_degenerate,
    pyramid_search,
    sample_segment,
    score_candidate,
    score_plane,
    sources_for_target,
)
from .phantom import (
    NoiseConfig,
    PhantomConfig,
    PhantomExam,
    ViewGeometry,
    corrupt,
    generate,
    tiny_config,
)

__version__ = "0.1.0"
