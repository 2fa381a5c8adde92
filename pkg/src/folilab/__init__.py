"""folilab: a numerical laboratory for Riemannian foliations.

Chart-based model geometries, O'Neill tensors, holonomy and dual holonomy
transport, the groupoid of infinitesimal holonomy transformations, and a small
experiment harness that turns curvature identities into residual reports.
"""

from .errors import *  # noqa: F401,F403
from .experiments import EXPERIMENT_KINDS, ExperimentConfig, ExperimentReport, emit_report, run_experiment
from .foliation import (
    FatnessForm,
    FoliatedModel,
    Projectors,
    a_star,
    a_tensor,
    fat_point_margin,
    fatness_form,
    kernel_direction,
    projectors,
    s_tensor,
    warp_metric,
)
from .geometry import (
    ChartPoint,
    GeodesicSegment,
    MetricModel,
    TangentVector,
    christoffels,
    inner,
    integrate_geodesic,
    metric_eval,
    norm,
    riemann,
    unreduced_sectional,
)
from .holonomy import (
    HolonomyTransformation,
    HorizontalPath,
    SpanAccumulator,
    TransportedField,
    compose,
    concatenate,
    dual_leaf_span,
    dual_orthogonality_check,
    holonomy_bound_estimate,
    holonomy_transformation,
    horizontal_geodesic,
    identity_transformation,
    invariant_metric_average,
    invert,
    random_horizontal_path,
    reparametrize,
    reverse_path,
    rho,
    thm_max_search,
    transport_dual,
    transport_holonomy,
    zeta,
    zeta_bar,
)
from .models import MODEL_NAMES, ModelSpec, make_model

__version__ = "0.1.0"
