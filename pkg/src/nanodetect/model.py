"""Domain types and parameter validation for nanomachine target-detection scenarios.

Units are fixed project-wide: lengths in micrometers, times in seconds,
diffusion in um^2/s, densities in points per um^3.  All numerical code
consumes raw magnitudes; any unit conversion happens at the CLI boundary.

Every type here is an immutable value object (frozen dataclass) and is safe
to share between threads / processes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Union


@dataclass(frozen=True)
class Point3:
    """A position in 3D space, coordinates in micrometers."""

    x: float
    y: float
    z: float

    def norm(self) -> float:
        return math.sqrt(self.x * self.x + self.y * self.y + self.z * self.z)


@dataclass(frozen=True)
class SystemParams:
    """Physical parameters shared by every deployment.

    nm_radius:     radius of one spherical nanomachine (um), > 0
    diffusion:     diffusion coefficient of NM motion (um^2/s), > 0
    target_radius: radius of the spherical target (um); 0 means a point
                   target.  All detection math uses the effective radius
                   nm_radius + target_radius, so a spherical target is
                   exactly equivalent to a point target seen by fatter NMs.
    """

    nm_radius: float
    diffusion: float
    target_radius: float = 0.0


def effective_radius(params: SystemParams) -> float:
    """Contact radius for the point-target reduction: nm_radius + target_radius."""
    return params.nm_radius + params.target_radius


@dataclass(frozen=True)
class Matern:
    """Daughters uniform in a ball of `radius` around the parent."""

    radius: float


@dataclass(frozen=True)
class Thomas:
    """Daughters isotropic Gaussian around the parent, per-axis std `sigma`."""

    sigma: float


ClusterSpread = Union[Matern, Thomas]


@dataclass(frozen=True)
class ClusterModel:
    """One cluster: Poisson(mean_daughters) NMs spread around the parent point."""

    mean_daughters: float
    spread: ClusterSpread


@dataclass(frozen=True)
class Pcp:
    """Poisson cluster process: parents are a PPP of density parent_density
    (clusters/um^3), each carrying an independent daughter cloud."""

    parent_density: float
    cluster: ClusterModel


@dataclass(frozen=True)
class SingleCluster:
    """One cluster whose center is uniform in a ball of radius
    center_region_radius around the target."""

    center_region_radius: float
    cluster: ClusterModel


@dataclass(frozen=True)
class Ppp:
    """Unclustered deployment: NM centers are a PPP of density `density` (NMs/um^3)."""

    density: float


DeploymentModel = Union[Pcp, SingleCluster, Ppp]


def nm_density(deploy: DeploymentModel) -> float:
    """Mean number of NMs per um^3 implied by the deployment."""
    if isinstance(deploy, Pcp):
        return deploy.parent_density * deploy.cluster.mean_daughters
    if isinstance(deploy, Ppp):
        return deploy.density
    raise ValueError("single-cluster deployments have no stationary NM density")


@dataclass(frozen=True)
class QuadratureSpec:
    """Tolerances and truncation policy for the nested radial/angular integrals.

    tail_sigma_count:    Thomas inner integrals are truncated at this many
                         sigmas (Gaussian mass beyond 8 sigma in the radial
                         measure is below 1e-14).
    outer_tail_constant: the semi-infinite outer integral starts at
                         outer_tail_constant * decay_scale and keeps doubling
                         until the last panel is negligible.
    """

    rel_tol: float = 1e-7
    abs_tol: float = 1e-10
    max_depth: int = 48
    tail_sigma_count: float = 8.0
    outer_tail_constant: float = 4.0


@dataclass(frozen=True)
class SimSpec:
    """Particle-simulation protocol parameters.

    Defaults mirror the validation protocol: parents sampled in a bounded
    ball of radius 250 um, time step 1 ms, 10^4 realizations.  The optional
    Brownian-bridge correction accepts inter-step crossings and removes most
    of the time-discretization bias; it is off by default so that simulated
    curves carry exactly the discrete-sampling semantics.
    """

    dt: float = 1e-3
    t_max: float = 10.0
    region_radius: float = 250.0
    n_realizations: int = 10_000
    seed: int = 0
    bridge_correction: bool = False


@dataclass(frozen=True)
class Estimate:
    """Monte Carlo probability estimate with a 95% Wilson interval."""

    p_hat: float
    ci_low: float
    ci_high: float
    n: int
    hits: int


_Z95 = 1.959963984540054


def wilson_interval(hits: int, n: int, z: float = _Z95) -> tuple[float, float]:
    """95% Wilson score interval for a binomial proportion."""
    if n <= 0:
        return (0.0, 1.0)
    p = hits / n
    denom = 1.0 + z * z / n
    center = (p + z * z / (2.0 * n)) / denom
    hw = z * math.sqrt(p * (1.0 - p) / n + z * z / (4.0 * n * n)) / denom
    lo = 0.0 if hits == 0 else max(0.0, center - hw)
    hi = 1.0 if hits == n else min(1.0, center + hw)
    return (lo, hi)


def make_estimate(hits: int, n: int) -> Estimate:
    lo, hi = wilson_interval(hits, n)
    return Estimate(p_hat=hits / n if n > 0 else 0.0, ci_low=lo, ci_high=hi, n=n, hits=hits)


def _finite(v) -> bool:
    return isinstance(v, (int, float)) and not isinstance(v, bool) and math.isfinite(v)


def _check_cluster(cluster, errors: list[str], prefix: str = "cluster") -> None:
    if not isinstance(cluster, ClusterModel):
        errors.append(f"{prefix} must be a ClusterModel")
        return
    if not _finite(cluster.mean_daughters) or cluster.mean_daughters < 0:
        errors.append(f"{prefix}.mean_daughters must be finite and >= 0")
    spread = cluster.spread
    if isinstance(spread, Matern):
        if not _finite(spread.radius) or spread.radius <= 0:
            errors.append(f"{prefix}.radius must be positive for a Matern spread")
    elif isinstance(spread, Thomas):
        if not _finite(spread.sigma) or spread.sigma <= 0:
            errors.append(f"{prefix}.sigma must be positive for a Thomas spread")
    else:
        errors.append(f"{prefix}.spread must be Matern or Thomas")


def validate(params: SystemParams, deploy: DeploymentModel) -> list[str]:
    """Return every violated invariant as a message; empty list means valid.

    Total: never raises, regardless of input.  Degenerate-but-legal inputs
    (zero densities, zero mean daughters) validate cleanly and yield
    detection probability 0 downstream, so parameter sweeps may include the
    origin.
    """
    errors: list[str] = []
    try:
        if not isinstance(params, SystemParams):
            errors.append("params must be a SystemParams")
        else:
            if not _finite(params.nm_radius) or params.nm_radius <= 0:
                errors.append("nm_radius must be positive")
            if not _finite(params.target_radius) or params.target_radius < 0:
                errors.append("target_radius must be >= 0")
            if not _finite(params.diffusion) or params.diffusion <= 0:
                errors.append("diffusion must be positive")

        if isinstance(deploy, Pcp):
            if not _finite(deploy.parent_density) or deploy.parent_density < 0:
                errors.append("parent_density must be finite and >= 0")
            _check_cluster(deploy.cluster, errors)
        elif isinstance(deploy, SingleCluster):
            if not _finite(deploy.center_region_radius) or deploy.center_region_radius <= 0:
                errors.append("center_region_radius must be positive")
            _check_cluster(deploy.cluster, errors)
        elif isinstance(deploy, Ppp):
            if not _finite(deploy.density) or deploy.density < 0:
                errors.append("density must be finite and >= 0")
        else:
            errors.append("deploy must be one of Pcp, SingleCluster, Ppp")
    except Exception as exc:  # pragma: no cover - totality guard
        errors.append(f"validation failed on malformed input: {exc!r}")
    return errors
