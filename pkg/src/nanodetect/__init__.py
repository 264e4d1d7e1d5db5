"""Target-detection probabilities for clustered mobile nanomachine networks.

Analytical detection probabilities (exact, bounds, approximations, static)
for Matern/Thomas cluster deployments, evaluated by deterministic adaptive
quadrature, together with a particle-based Brownian Monte Carlo engine that
cross-validates every formula, and a scenario CLI that emits the validation
figure data as CSV.
"""

from .analytic import (
    DetectionQuery,
    DetectionResult,
    cluster_swept_volume_V,
    detect_prob_bounds,
    detect_prob_from_volume,
    detect_prob_pcp,
    detect_prob_pcp_approx,
    detect_prob_ppp,
    detect_prob_single_cluster,
    detect_prob_single_cluster_approx,
    detect_prob_static,
    hit_prob_point,
    lens_volume_A,
    mean_detecting_clusters,
    swept_volume_W,
)
from .model import (
    ClusterModel,
    DeploymentModel,
    Estimate,
    Matern,
    Pcp,
    Point3,
    Ppp,
    QuadratureSpec,
    SimSpec,
    SingleCluster,
    SystemParams,
    Thomas,
    effective_radius,
    validate,
    wilson_interval,
)
from .quadrature import (
    Interval,
    NonConvergence,
    QuadResult,
    erfc,
    integrate_1d,
    integrate_2d_tensor,
    integrate_semi_infinite_radial,
)
from .simulate import (
    ConfigError,
    DetectionCurve,
    Realization,
    brownian_first_hit,
    first_hit_times,
    realization_stream,
    run_detection_experiment,
    sample_daughters,
    sample_parents,
    simulate_realization,
    static_detection_experiment,
)

__version__ = "0.1.0"
