"""Analytical detection probabilities for clustered nanomachine deployments.

Everything reduces to the single-NM hitting kernel: a Brownian sphere of
effective radius a starting at distance g from the target touches it within
time t with probability (a/g) * erfc((g - a) / sqrt(4 D t)) (certain when
g <= a).  Cluster-level quantities average this kernel over the daughter
displacement density, and network-level probabilities follow from Poisson
void probabilities of the parent process.

The per-NM kernel exceeds 1 when g < a if evaluated literally; since it is a
probability it is clamped to min(1, .) by default.  At t = 0 the kernel is
the indicator of contact, which makes the dynamic formulas agree with the
dedicated static ones by construction.  All returned probabilities are
clamped to [0, 1]; any excursion due to quadrature noise is folded into the
reported error estimate.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import erfc as _erfc

from .model import (
    ClusterModel,
    DeploymentModel,
    Matern,
    Pcp,
    Ppp,
    QuadratureSpec,
    SingleCluster,
    SystemParams,
    Thomas,
    effective_radius,
)
from .quadrature import Interval, QuadResult, integrate_1d, integrate_2d_tensor, integrate_semi_infinite_radial

_SQRT_2PI = math.sqrt(2.0 * math.pi)


@dataclass(frozen=True)
class DetectionQuery:
    """One evaluation request: physical parameters, deployment, time horizon."""

    params: SystemParams
    deploy: DeploymentModel
    t: float
    quad: QuadratureSpec = field(default_factory=QuadratureSpec)
    clamp_kernel: bool = True


@dataclass(frozen=True)
class DetectionResult:
    p: float
    est_error: float
    method: str


def hit_prob_point(d: float, a_eff: float, D: float, t: float) -> float:
    """Probability that one Brownian NM starting at distance d touches the
    target within time t; 1 on contact (d <= a_eff), indicator at t = 0."""
    if d <= a_eff:
        return 1.0
    if t <= 0.0:
        return 0.0
    return (a_eff / d) * math.erfc((d - a_eff) / math.sqrt(4.0 * D * t))


def swept_volume_W(a_eff: float, D: float, t: float) -> float:
    """Mean volume swept by one Brownian sphere of radius a_eff within time t."""
    return (4.0 * math.pi * a_eff**3) / 3.0 + 4.0 * math.pi * D * a_eff * t \
        + 8.0 * a_eff**2 * math.sqrt(math.pi * D * t)


def _kernel(gamma: np.ndarray, a_eff: float, D: float, t: float, clamp: bool) -> np.ndarray:
    """Vectorized hitting kernel over NM-target distances gamma.

    At t = 0 the erfc argument is taken in the limit, giving the contact
    indicator regardless of the clamp flag.
    """
    gamma = np.asarray(gamma, dtype=float)
    if t <= 0.0:
        return (gamma <= a_eff).astype(float)
    s = math.sqrt(4.0 * D * t)
    with np.errstate(divide="ignore"):
        k = np.where(gamma > 0.0, a_eff / np.where(gamma > 0.0, gamma, 1.0), np.inf)
    k = k * _erfc((gamma - a_eff) / s)
    if clamp:
        k = np.minimum(k, 1.0)
    return k


def _u_measure(x: float, y: np.ndarray, a_eff: float) -> np.ndarray:
    """Closed-form inner angular integral of the t = 0 contact indicator:
    the measure of u = cos(theta) in [-1, 1] with x^2 + y^2 + 2xyu <= a^2."""
    y = np.asarray(y, dtype=float)
    xy = x * y
    out = np.empty_like(y)
    deg = xy <= 0.0  # x or y zero: distance is constant in u
    out[deg] = np.where(x * x + y[deg] * y[deg] <= a_eff * a_eff, 2.0, 0.0)
    nd = ~deg
    u_star = (a_eff * a_eff - x * x - y[nd] * y[nd]) / (2.0 * xy[nd])
    out[nd] = np.clip(u_star, -1.0, 1.0) + 1.0
    return out


_INV_SQRT_PI = 1.0 / math.sqrt(math.pi)


def _erfc_antideriv(z: np.ndarray) -> np.ndarray:
    """Antiderivative of erfc shifted so the z -> +inf limit is 0:
    z erfc(z) - exp(-z^2)/sqrt(pi).  Differences of this give exact erfc
    integrals without cancellation of a large constant."""
    z = np.asarray(z, dtype=float)
    return z * _erfc(z) - np.exp(-z * z) * _INV_SQRT_PI


def _u_integral(x: float, y: np.ndarray, a_eff: float, D: float, t: float, clamp: bool) -> np.ndarray:
    """Exact angular integral Int_{-1}^{1} kern(gamma(x, y, u)) du.

    With u = cos(theta) the NM-target distance gamma = sqrt(x^2+y^2+2xyu) is
    monotone in u, so substituting gamma gives du = gamma dgamma/(xy) and the
    kernel integrates in closed form: the clamped kernel is identically 1 up
    to gamma = a_eff (erfc(0) = 1 makes the clamp boundary exactly the
    contact radius) and a erfc((gamma-a)/s) gamma^-1 * gamma beyond it.
    """
    y = np.asarray(y, dtype=float)
    if t <= 0.0:
        return _u_measure(x, y, a_eff)
    s = math.sqrt(4.0 * D * t)
    glo = np.abs(x - y)
    ghi = x + y
    xy = x * y
    deg = xy <= 0.0  # gamma constant in u: 2 * kern at that distance
    out = np.empty_like(y)
    if deg.any():
        out[deg] = 2.0 * _kernel(np.hypot(x, y[deg]), a_eff, D, t, clamp)
    nd_ = ~deg
    glo_n, ghi_n, xy_n = glo[nd_], ghi[nd_], xy[nd_]
    if clamp:
        cap = np.minimum(ghi_n, a_eff)
        flat = np.where(glo_n < a_eff, (cap * cap - glo_n * glo_n) / (2.0 * xy_n), 0.0)
        lo2 = np.maximum(glo_n, a_eff)
        tail = np.where(
            ghi_n > a_eff,
            (a_eff * s / xy_n) * (_erfc_antideriv((ghi_n - a_eff) / s)
                                  - _erfc_antideriv((lo2 - a_eff) / s)),
            0.0,
        )
        out[nd_] = flat + tail
    else:
        out[nd_] = (a_eff * s / xy_n) * (_erfc_antideriv((ghi_n - a_eff) / s)
                                         - _erfc_antideriv((glo_n - a_eff) / s))
    return out


def _cluster_weight(cluster: ClusterModel, quad: QuadratureSpec):
    """(normalization, y interval, radial weight or None) of the daughter density."""
    spread = cluster.spread
    if isinstance(spread, Matern):
        r = spread.radius
        return 3.0 / (2.0 * r**3), Interval(0.0, r), None
    sig = spread.sigma
    return (1.0 / (_SQRT_2PI * sig**3), Interval(0.0, quad.tail_sigma_count * sig),
            lambda y: np.exp(-(y * y) / (2.0 * sig * sig)))


def _mean_kernel(x: float, cluster: ClusterModel, a_eff: float, D: float, t: float,
                 quad: QuadratureSpec, clamp: bool) -> float:
    """Daughter-averaged hitting kernel: the probability that one NM of a
    cluster whose parent sits at distance x detects the target within t.

    The angular part is integrated in closed form (_u_integral); only the
    radial daughter coordinate needs adaptive quadrature.
    """
    norm, y_iv, weight = _cluster_weight(cluster, quad)

    def radial(y: np.ndarray) -> np.ndarray:
        m = _u_integral(x, y, a_eff, D, t, clamp) * y * y
        return m if weight is None else m * weight(y)

    return norm * integrate_1d(radial, y_iv, quad).value


def _mean_kernel_2d(x: float, cluster: ClusterModel, a_eff: float, D: float, t: float,
                    quad: QuadratureSpec, clamp: bool) -> float:
    """Reference evaluation of the daughter-averaged kernel by fully nested
    adaptive quadrature over (y, u).  Slower than _mean_kernel by a large
    factor; kept as an independent cross-check of the closed-form angular
    reduction."""
    norm, y_iv, weight = _cluster_weight(cluster, quad)

    if t <= 0.0:
        def radial(y):
            m = _u_measure(x, y, a_eff) * y * y
            return m if weight is None else m * weight(y)
        return norm * integrate_1d(radial, y_iv, quad).value

    def f(y, u):
        gamma = np.sqrt(x * x + y * y + 2.0 * x * y * u)
        k = _kernel(gamma, a_eff, D, t, clamp) * y * y
        return k if weight is None else k * weight(y)

    return norm * integrate_2d_tensor(f, y_iv, Interval(-1.0, 1.0), quad).value


def _spread_scale(cluster: ClusterModel, quad: QuadratureSpec) -> float:
    spread = cluster.spread
    return spread.radius if isinstance(spread, Matern) else quad.tail_sigma_count * spread.sigma


def _require(deploy, kind, op: str):
    if not isinstance(deploy, kind):
        raise ValueError(f"{op} requires a {kind.__name__} deployment, got {type(deploy).__name__}")


def _clamp01(raw: float, err: float) -> tuple[float, float]:
    p = min(max(raw, 0.0), 1.0)
    return p, err + abs(raw - p)


def _cluster_coverage_volume(q: DetectionQuery, cluster: ClusterModel) -> QuadResult:
    """V(t): mean volume of the union of regions swept by the NMs of one
    typical cluster, V = 4 pi Int_0^inf (1 - exp(-m * kbar(x))) x^2 dx."""
    p = q.params
    a_eff = effective_radius(p)
    m = cluster.mean_daughters
    if m == 0.0:
        return QuadResult(0.0, 0.0, 0)
    L = a_eff + _spread_scale(cluster, q.quad) + math.sqrt(4.0 * p.diffusion * q.t)

    def f(xs: np.ndarray) -> np.ndarray:
        out = np.empty_like(xs)
        for i, x in enumerate(xs):
            kbar = _mean_kernel(x, cluster, a_eff, p.diffusion, q.t, q.quad, q.clamp_kernel)
            out[i] = -math.expm1(-m * kbar) * x * x
        return out

    res = integrate_semi_infinite_radial(f, L, q.quad)
    return QuadResult(4.0 * math.pi * res.value, 4.0 * math.pi * res.est_error, res.evaluations)


def cluster_swept_volume_V(q: DetectionQuery) -> float:
    """Mean covered volume of the typical cluster within time t (um^3)."""
    _require(q.deploy, Pcp, "cluster_swept_volume_V")
    return _cluster_coverage_volume(q, q.deploy.cluster).value


def detect_prob_from_volume(parent_density: float, volume: float) -> float:
    """Void-probability identity: detection prob = 1 - exp(-lambda_p * V)."""
    return -math.expm1(-parent_density * volume)


def mean_detecting_clusters(q: DetectionQuery) -> float:
    """Mean of the Poisson number of clusters that detect the target by t."""
    _require(q.deploy, Pcp, "mean_detecting_clusters")
    return q.deploy.parent_density * cluster_swept_volume_V(q)


def detect_prob_pcp(q: DetectionQuery) -> DetectionResult:
    """Exact detection probability for PCP-deployed NMs (Matern or Thomas)."""
    _require(q.deploy, Pcp, "detect_prob_pcp")
    lam = q.deploy.parent_density
    vol = _cluster_coverage_volume(q, q.deploy.cluster)
    raw = -math.expm1(-lam * vol.value)
    err = lam * math.exp(-lam * vol.value) * vol.est_error
    p, err = _clamp01(raw, err)
    return DetectionResult(p, err, "exact")


def detect_prob_bounds(q: DetectionQuery) -> tuple[float, float]:
    """Closed-form (lower, upper) bounds from the covered-volume sandwich:
    (1 - e^-m) W(t) <= V(t) <= m W(t)."""
    _require(q.deploy, Pcp, "detect_prob_bounds")
    lam = q.deploy.parent_density
    m = q.deploy.cluster.mean_daughters
    W = swept_volume_W(effective_radius(q.params), q.params.diffusion, q.t)
    lower = -math.expm1(-lam * (-math.expm1(-m)) * W)
    upper = -math.expm1(-lam * m * W)
    return lower, upper


def detect_prob_pcp_approx(q: DetectionQuery) -> DetectionResult:
    """Cluster-collapse approximation: all NMs of a cluster start at the
    parent point, so the inner average degenerates to the kernel itself.
    Independent of the cluster spread; exact in the r, sigma -> 0 limit."""
    _require(q.deploy, Pcp, "detect_prob_pcp_approx")
    p = q.params
    a_eff = effective_radius(p)
    lam = q.deploy.parent_density
    m = q.deploy.cluster.mean_daughters
    if lam == 0.0 or m == 0.0:
        return DetectionResult(0.0, 0.0, "approx")
    L = a_eff + math.sqrt(4.0 * p.diffusion * q.t)

    def f(xs: np.ndarray) -> np.ndarray:
        k = _kernel(xs, a_eff, p.diffusion, q.t, q.clamp_kernel)
        return -np.expm1(-m * k) * xs * xs

    res = integrate_semi_infinite_radial(f, L, q.quad)
    raw = -math.expm1(-lam * 4.0 * math.pi * res.value)
    err = lam * 4.0 * math.pi * res.est_error * math.exp(-lam * 4.0 * math.pi * res.value)
    pv, err = _clamp01(raw, err)
    return DetectionResult(pv, err, "approx")


def detect_prob_ppp(density: float, params: SystemParams, t: float) -> float:
    """Detection probability for unclustered (PPP) NMs of the given density."""
    if density < 0:
        raise ValueError("density must be >= 0")
    W = swept_volume_W(effective_radius(params), params.diffusion, t)
    return -math.expm1(-density * W)


def lens_volume_A(a_eff: float, r: float, x: float) -> float:
    """Volume of intersection of balls B(0, a_eff) and B(x, r).

    Piecewise: full containment of the smaller ball when x <= |a - r|
    (including x = 0), the standard lens formula in between, and 0 for
    disjoint balls x >= a + r.
    """
    if a_eff <= 0.0 or r <= 0.0:
        return 0.0
    if x >= a_eff + r:
        return 0.0
    if x <= abs(a_eff - r):
        return (4.0 / 3.0) * math.pi * min(a_eff, r) ** 3
    return (math.pi * (a_eff + r - x) ** 2
            * (x * x + 2.0 * x * (a_eff + r) - 3.0 * (r - a_eff) ** 2)) / (12.0 * x)


def _gauss_ball_mass(x: float, a_eff: float, sigma: float, quad: QuadratureSpec) -> float:
    """Mass of an isotropic Gaussian (per-axis std sigma) centered at distance
    x from the target inside the contact ball of radius a_eff.

    Integrand is the noncentral-chi radial density written in the
    cancellation-free form (y/(x sigma sqrt(2 pi))) e^{-(y-x)^2/(2 sigma^2)}
    (1 - e^{-2xy/sigma^2}); the sinh form overflows for small sigma.
    """
    s2 = sigma * sigma

    def f(y: np.ndarray) -> np.ndarray:
        y = np.asarray(y, dtype=float)
        base = np.exp(-((y - x) ** 2) / (2.0 * s2)) / (sigma * _SQRT_2PI)
        if x < 1e-12 * sigma:
            return base * (2.0 * y * y / s2)
        return base * (y / x) * (-np.expm1(-2.0 * x * y / s2))

    return integrate_1d(f, Interval(0.0, a_eff), quad).value


def detect_prob_static(q: DetectionQuery) -> DetectionResult:
    """Detection probability of stationary NMs (deployment instant, t = 0).

    Matern clusters use the closed-form ball-intersection volume; Thomas
    clusters use the Gaussian-mass radial integral.  Both agree with the
    t -> 0 limit of the dynamic formulas.
    """
    _require(q.deploy, Pcp, "detect_prob_static")
    p = q.params
    a_eff = effective_radius(p)
    lam = q.deploy.parent_density
    cluster = q.deploy.cluster
    m = cluster.mean_daughters
    if lam == 0.0 or m == 0.0:
        return DetectionResult(0.0, 0.0, "static")
    spread = cluster.spread
    if isinstance(spread, Matern):
        r = spread.radius
        ball = (4.0 / 3.0) * math.pi * r**3

        def inner(x: float) -> float:
            return m * lens_volume_A(a_eff, r, x) / ball
    else:
        sig = spread.sigma

        def inner(x: float) -> float:
            return m * _gauss_ball_mass(x, a_eff, sig, q.quad)

    L = a_eff + _spread_scale(cluster, q.quad)

    def f(xs: np.ndarray) -> np.ndarray:
        out = np.empty_like(xs)
        for i, x in enumerate(xs):
            out[i] = -math.expm1(-inner(x)) * x * x
        return out

    res = integrate_semi_infinite_radial(f, L, q.quad)
    raw = -math.expm1(-lam * 4.0 * math.pi * res.value)
    err = lam * 4.0 * math.pi * res.est_error * math.exp(-lam * 4.0 * math.pi * res.value)
    pv, err = _clamp01(raw, err)
    return DetectionResult(pv, err, "static")


def detect_prob_single_cluster(q: DetectionQuery) -> DetectionResult:
    """Detection probability for a single cluster whose center is uniform in
    a ball of radius R around the target."""
    _require(q.deploy, SingleCluster, "detect_prob_single_cluster")
    p = q.params
    a_eff = effective_radius(p)
    R = q.deploy.center_region_radius
    cluster = q.deploy.cluster
    m = cluster.mean_daughters
    if m == 0.0:
        return DetectionResult(0.0, 0.0, "exact")

    def f(xs: np.ndarray) -> np.ndarray:
        out = np.empty_like(xs)
        for i, x in enumerate(xs):
            kbar = _mean_kernel(x, cluster, a_eff, p.diffusion, q.t, q.quad, q.clamp_kernel)
            out[i] = math.exp(-m * kbar) * x * x
        return out

    res = integrate_1d(f, Interval(0.0, R), q.quad)
    raw = 1.0 - 3.0 / R**3 * res.value
    pv, err = _clamp01(raw, 3.0 / R**3 * res.est_error)
    return DetectionResult(pv, err, "exact")


def detect_prob_single_cluster_approx(q: DetectionQuery) -> float:
    """Single-cluster analogue of the cluster-collapse approximation: NMs
    start at the cluster center itself."""
    _require(q.deploy, SingleCluster, "detect_prob_single_cluster_approx")
    p = q.params
    a_eff = effective_radius(p)
    R = q.deploy.center_region_radius
    m = q.deploy.cluster.mean_daughters
    if m == 0.0:
        return 0.0

    def f(rho: np.ndarray) -> np.ndarray:
        k = _kernel(rho, a_eff, p.diffusion, q.t, q.clamp_kernel)
        return np.exp(-m * k) * rho * rho

    res = integrate_1d(f, Interval(0.0, R), q.quad)
    raw = 1.0 - 3.0 / R**3 * res.value
    return min(max(raw, 0.0), 1.0)
