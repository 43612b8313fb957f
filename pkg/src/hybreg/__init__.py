"""Training-free rigid registration of partial point clouds.

A hybrid axis-angle / bounded-translation parameterization is optimized from
many starts against a trimmed plus plane-projected Chamfer objective.
"""

from .errors import (
    CloudParseError,
    DegenerateAxisError,
    DegenerateDirectionError,
    DegenerateFrameError,
    GenerationFailedError,
    HybregError,
    InvalidArgumentError,
    RegistrationFailedError,
    UnsupportedFormatError,
)
from .geometry import (
    AltRotationParams,
    AltTransformParams,
    Mapping,
    Plane,
    PointCloud,
    RigidTransform,
    RotationKind,
    TransformParams,
    apply_transform,
    realize_alt_rotation,
    realize_transform,
    realize_translation,
    rodrigues,
    skew,
)
from .metrics import aggregate, evaluate_pair, fscore, mse_error, rotation_error, translation_error
from .nn_index import SpatialIndex, build_index
from .objective import LossBreakdown, ObjectiveConfig, chamfer, gradient, local_chamfer, projected_chamfer, total_loss
from .solver import RegistrationResult, SolverConfig, init_grid, optimize_start, register, solve_starts

__version__ = "0.1.0"
