"""Particle-based Monte Carlo validation of the detection formulas.

Protocol: NMs are deployed at t = 0 (cluster parents from a homogeneous PPP
restricted to a bounded ball; daughters are never clipped), then every NM
performs discrete-time Brownian motion with per-axis step std sqrt(2 D dt).
The target counts as detected at the first sample time (including t = 0) at
which any NM center is within the effective radius of the origin.  An
optional Brownian-bridge correction additionally accepts an inter-step
crossing with probability exp(-(d0-a)(d1-a)/(D dt)); it is off by default so
simulated curves keep the plain discrete-sampling semantics.

Determinism: realization k draws only from its own counter-based Philox
stream keyed by (seed, k), and per-realization draw order is fixed
(deployment first, then per 256-step chunk one block of normal variates, one
of exponentials, plus one of uniforms when the bridge is on, for the NMs
still live in that chunk).  Results are therefore bit-identical regardless
of batching, process count, or scheduling.

Propagation is radial: detection depends only on the NM-target distance, and
the norm of per-axis Gaussian stepping is itself Markov with transition
r' = sqrt((r + s Z)^2 + s^2 X), Z ~ N(0,1), X ~ chi^2_2.  The engine steps
that recursion directly (one normal + one exponential per step instead of
three normals); the hit-time law is exactly that of full 3D stepping.

NMs that can no longer reach the target are frozen at chunk boundaries: at
distance d with remaining time tau the hit probability is bounded by
(a/d) erfc((d - a)/sqrt(4 D tau)), so the margin below leaves under 1e-6 per
NM behind, orders of magnitude beneath Monte Carlo noise.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numba
import numpy as np

from .model import (
    ClusterModel,
    DeploymentModel,
    Estimate,
    Matern,
    Pcp,
    Ppp,
    SimSpec,
    SingleCluster,
    SystemParams,
    Thomas,
    effective_radius,
    make_estimate,
    validate,
)

_FREEZE_MARGIN = 3.5
_CHUNK_STEPS = 256
_BLOCK = 250
_TAIL_SIGMA = 8.0  # Thomas spread extent used for the edge-effect check
_NO_HIT = np.iinfo(np.int64).max


class ConfigError(ValueError):
    """Simulation setup cannot faithfully validate the analytic model."""


def realization_stream(seed: int, index: int) -> np.random.Generator:
    """Counter-based stream for one realization: Philox keyed by (seed, index).

    Streams for distinct indices are statistically independent, and the
    stream for a given (seed, index) never depends on how many other
    realizations run or in which order.
    """
    key = np.array([seed % (1 << 64), index % (1 << 64)], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


def _uniform_ball(n: int, radius: float, rng: np.random.Generator) -> np.ndarray:
    """n points uniform in a ball: cube-root radial inversion, uniform direction."""
    u = rng.random((n, 3))
    rad = radius * np.cbrt(u[:, 0])
    cos_t = 2.0 * u[:, 1] - 1.0
    sin_t = np.sqrt(np.maximum(0.0, 1.0 - cos_t * cos_t))
    phi = 2.0 * math.pi * u[:, 2]
    return np.column_stack((rad * sin_t * np.cos(phi), rad * sin_t * np.sin(phi), rad * cos_t))


def sample_parents(parent_density: float, region_radius: float, rng: np.random.Generator) -> np.ndarray:
    """Cluster centers: homogeneous PPP restricted to a ball, as an (n, 3) array."""
    if parent_density < 0:
        raise ValueError("parent_density must be >= 0")
    mean = parent_density * (4.0 / 3.0) * math.pi * region_radius**3
    n = int(rng.poisson(mean)) if mean > 0 else 0
    return _uniform_ball(n, region_radius, rng)


def sample_daughters(cluster: ClusterModel, center: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Poisson(mean_daughters) NM centers spread around one cluster center."""
    n = int(rng.poisson(cluster.mean_daughters)) if cluster.mean_daughters > 0 else 0
    offsets = _cluster_offsets(cluster, n, rng)
    return np.asarray(center, dtype=float).reshape(1, 3) + offsets


def _cluster_offsets(cluster: ClusterModel, n: int, rng: np.random.Generator) -> np.ndarray:
    spread = cluster.spread
    if isinstance(spread, Matern):
        return _uniform_ball(n, spread.radius, rng)
    return spread.sigma * rng.standard_normal((n, 3))


def _sample_deployment(deploy: DeploymentModel, region_radius: float, rng: np.random.Generator):
    """Returns (parents, starts, cluster_of, n_clusters); daughters outside the
    bounded parent region are kept (the region bounds parents only)."""
    if isinstance(deploy, Pcp):
        parents = sample_parents(deploy.parent_density, region_radius, rng)
        n_p = parents.shape[0]
        counts = rng.poisson(deploy.cluster.mean_daughters, n_p).astype(np.int64) \
            if n_p > 0 and deploy.cluster.mean_daughters > 0 else np.zeros(n_p, dtype=np.int64)
        offsets = _cluster_offsets(deploy.cluster, int(counts.sum()), rng)
        starts = np.repeat(parents, counts, axis=0) + offsets
        cluster_of = np.repeat(np.arange(n_p, dtype=np.int64), counts)
        return parents, starts, cluster_of, n_p
    if isinstance(deploy, SingleCluster):
        center = _uniform_ball(1, deploy.center_region_radius, rng)
        n = int(rng.poisson(deploy.cluster.mean_daughters)) if deploy.cluster.mean_daughters > 0 else 0
        starts = center + _cluster_offsets(deploy.cluster, n, rng)
        return center, starts, np.zeros(n, dtype=np.int64), 1
    if isinstance(deploy, Ppp):
        mean = deploy.density * (4.0 / 3.0) * math.pi * region_radius**3
        n = int(rng.poisson(mean)) if mean > 0 else 0
        starts = _uniform_ball(n, region_radius, rng)
        return starts, starts, np.arange(n, dtype=np.int64), n
    raise ValueError(f"unsupported deployment {type(deploy).__name__}")


@numba.njit(cache=True, fastmath=True)
def _chunk_kernel(r, s, z, e, u, use_bridge, a2, a_eff, inv_ddt, hit_out, base):
    """Step the radial recursion for one chunk; records absolute hit steps."""
    n, L = z.shape
    for i in range(n):
        ri = r[i]
        hit = np.int64(-1)
        for k in range(L):
            zz = ri + s * z[i, k]
            r2 = zz * zz + 2.0 * s * s * e[i, k]
            rn = math.sqrt(r2)
            if r2 <= a2:
                ri = rn
                hit = base + k + 1
                break
            if use_bridge:
                pc = math.exp(-(ri - a_eff) * (rn - a_eff) * inv_ddt)
                if u[i, k] < pc:
                    ri = rn
                    hit = base + k + 1
                    break
            ri = rn
        r[i] = ri
        hit_out[i] = hit


def _propagate(radii: np.ndarray, cluster_of: np.ndarray, n_clusters: int,
               a_eff: float, D: float, sim: SimSpec, n_steps: int,
               rng: np.random.Generator, cluster_exit: bool):
    """Propagate all NMs of one realization; returns (nm_hit_step, cluster_first).

    nm_hit_step[i] is the first sample step at which NM i is in contact
    (_NO_HIT if never); cluster_first[c] the per-cluster minimum.  With
    cluster_exit, NMs of already-detecting clusters are dropped at chunk
    boundaries; otherwise the whole realization stops at its first hit.
    """
    n = radii.shape[0]
    nm_hit = np.where(radii <= a_eff, 0, _NO_HIT).astype(np.int64)
    cluster_first = np.full(n_clusters, _NO_HIT, dtype=np.int64)
    if n:
        np.minimum.at(cluster_first, cluster_of, nm_hit)
    active = nm_hit == _NO_HIT
    if not cluster_exit and nm_hit.min(initial=_NO_HIT) == 0:
        return nm_hit, cluster_first
    if cluster_exit and n:
        active &= cluster_first[cluster_of] == _NO_HIT

    r = radii.astype(np.float64).copy()
    s = math.sqrt(2.0 * D * sim.dt)
    a2 = a_eff * a_eff
    inv_ddt = 1.0 / (D * sim.dt)
    dummy_u = np.zeros((1, 1), dtype=np.float32)
    base = 0
    while base < n_steps and active.any():
        t_rem = (n_steps - base) * sim.dt
        reach = a_eff + _FREEZE_MARGIN * math.sqrt(4.0 * D * t_rem)
        active &= r <= reach
        idx = np.flatnonzero(active)
        if idx.size == 0:
            break
        L = min(_CHUNK_STEPS, n_steps - base)
        z = rng.standard_normal((idx.size, L), dtype=np.float32)
        e = rng.standard_exponential((idx.size, L), dtype=np.float32)
        u = rng.random((idx.size, L), dtype=np.float32) if sim.bridge_correction else dummy_u
        r_sub = r[idx]
        hit_local = np.empty(idx.size, dtype=np.int64)
        _chunk_kernel(r_sub, s, z, e, u, sim.bridge_correction, a2, a_eff, inv_ddt,
                      hit_local, np.int64(base))
        r[idx] = r_sub
        newly = hit_local >= 0
        if newly.any():
            hit_idx = idx[newly]
            nm_hit[hit_idx] = hit_local[newly]
            active[hit_idx] = False
            np.minimum.at(cluster_first, cluster_of[hit_idx], hit_local[newly])
            if cluster_exit:
                active &= cluster_first[cluster_of] == _NO_HIT
            else:
                break
        base += L
    return nm_hit, cluster_first


@dataclass(frozen=True)
class Realization:
    """One sampled network with its propagation outcome.

    parents / daughters are (n, 3) position arrays; daughter_clusters maps
    each NM to its cluster index.  detecting_clusters is nonempty exactly
    when detected.
    """

    parents: np.ndarray
    daughter_clusters: np.ndarray
    daughters: np.ndarray
    detected: bool
    first_hit_time: float | None
    detecting_clusters: frozenset


def simulate_realization(params: SystemParams, deploy: DeploymentModel, sim: SimSpec,
                         index: int = 0) -> Realization:
    """Run realization `index` alone; identical to its slice of an experiment."""
    a_eff = effective_radius(params)
    n_steps = _step_count(sim)
    rng = realization_stream(sim.seed, index)
    parents, starts, cluster_of, n_clusters = _sample_deployment(deploy, sim.region_radius, rng)
    radii = np.linalg.norm(starts, axis=1) if starts.size else np.zeros(0)
    nm_hit, cluster_first = _propagate(radii, cluster_of, n_clusters, a_eff,
                                       params.diffusion, sim, n_steps, rng, cluster_exit=True)
    detecting = frozenset(int(c) for c in np.flatnonzero(cluster_first < _NO_HIT))
    first = int(cluster_first.min()) if n_clusters and cluster_first.min() < _NO_HIT else None
    return Realization(
        parents=parents,
        daughter_clusters=cluster_of,
        daughters=starts,
        detected=first is not None,
        first_hit_time=None if first is None else first * sim.dt,
        detecting_clusters=detecting,
    )


def brownian_first_hit(start, a_eff: float, D: float, sim: SimSpec,
                       rng: np.random.Generator) -> float | None:
    """First sample time at which a single NM starting at `start` touches the
    target, or None if it never does by t_max.  Literal per-axis stepping."""
    pos = np.array([start.x, start.y, start.z], dtype=float) if hasattr(start, "x") \
        else np.asarray(start, dtype=float)
    d0 = float(np.linalg.norm(pos))
    if d0 <= a_eff:
        return 0.0
    n_steps = _step_count(sim)
    s = math.sqrt(2.0 * D * sim.dt)
    base = 0
    while base < n_steps:
        L = min(1024, n_steps - base)
        path = pos + np.cumsum(s * rng.standard_normal((L, 3)), axis=0)
        d = np.linalg.norm(path, axis=1)
        event = d <= a_eff
        if sim.bridge_correction:
            u = rng.random(L)
            prev = np.concatenate(([d0], d[:-1]))
            pc = np.exp(-np.maximum(prev - a_eff, 0.0) * np.maximum(d - a_eff, 0.0) / (D * sim.dt))
            event |= u < pc
        if event.any():
            return (base + int(np.argmax(event)) + 1) * sim.dt
        pos = path[-1]
        d0 = float(d[-1])
        base += L
    return None


def first_hit_times(starts, a_eff: float, D: float, sim: SimSpec,
                    rng: np.random.Generator) -> np.ndarray:
    """Vectorized first-hit times for a batch of independent NMs (nan = no hit).

    `starts` may be an (n, 3) array of positions or an (n,) array of radii.
    """
    starts = np.asarray(starts, dtype=float)
    radii = np.linalg.norm(starts, axis=1) if starts.ndim == 2 else starts
    n = radii.shape[0]
    n_steps = _step_count(sim)
    nm_hit, _ = _propagate(radii, np.arange(n, dtype=np.int64), n, a_eff, D, sim,
                           n_steps, rng, cluster_exit=True)
    times = nm_hit.astype(float) * sim.dt
    times[nm_hit == _NO_HIT] = np.nan
    return times


@dataclass(frozen=True)
class DetectionCurve:
    """Per-grid-time detection estimates for one experiment."""

    times: tuple
    estimates: list
    mean_detecting_clusters: np.ndarray | None
    cluster_counts: np.ndarray | None
    n_realizations: int

    @property
    def final(self) -> Estimate:
        return self.estimates[-1]


def _step_count(sim: SimSpec) -> int:
    if not (0.0 < sim.dt <= sim.t_max):
        raise ValueError("SimSpec requires 0 < dt <= t_max")
    n = int(round(sim.t_max / sim.dt))
    return max(n, 1)


def _grid_to_steps(t_grid, sim: SimSpec, n_steps: int) -> np.ndarray:
    steps = []
    for tg in t_grid:
        if tg < 0 or tg > sim.t_max * (1 + 1e-9):
            raise ValueError(f"grid time {tg} outside [0, t_max]")
        steps.append(min(int(round(tg / sim.dt)), n_steps))
    return np.asarray(steps, dtype=np.int64)


def _run_block(payload):
    (params, deploy, sim, grid_steps, count_clusters, k0, k1) = payload
    a_eff = effective_radius(params)
    n_steps = _step_count(sim)
    grid_steps = np.asarray(grid_steps, dtype=np.int64)
    G = grid_steps.shape[0]
    hits = np.zeros(G, dtype=np.int64)
    counts = np.zeros((k1 - k0, G), dtype=np.int32) if count_clusters else None
    for j, k in enumerate(range(k0, k1)):
        rng = realization_stream(sim.seed, k)
        _, starts, cluster_of, n_clusters = _sample_deployment(deploy, sim.region_radius, rng)
        radii = np.linalg.norm(starts, axis=1) if starts.size else np.zeros(0)
        _, cluster_first = _propagate(radii, cluster_of, n_clusters, a_eff,
                                      params.diffusion, sim, n_steps, rng,
                                      cluster_exit=count_clusters)
        detect_step = cluster_first.min() if n_clusters else _NO_HIT
        hits += detect_step <= grid_steps
        if count_clusters and n_clusters:
            counts[j] = (cluster_first[:, None] <= grid_steps[None, :]).sum(axis=0)
    return hits, counts


def _edge_check(params: SystemParams, deploy: DeploymentModel, sim: SimSpec) -> None:
    """Escalate edge effects: the analytic outer integrals treat parents as
    unbounded, so their decay scale must fit inside the sampled region."""
    if isinstance(deploy, SingleCluster):
        return
    a_eff = effective_radius(params)
    spread = 0.0
    if isinstance(deploy, Pcp):
        sp = deploy.cluster.spread
        spread = sp.radius if isinstance(sp, Matern) else _TAIL_SIGMA * sp.sigma
    L = a_eff + spread + math.sqrt(4.0 * params.diffusion * sim.t_max)
    if L > sim.region_radius:
        raise ConfigError(
            f"analytic truncation radius {L:.1f} um exceeds region_radius "
            f"{sim.region_radius:.1f} um; increase the region or shorten t_max"
        )


def run_detection_experiment(params: SystemParams, deploy: DeploymentModel, sim: SimSpec,
                             t_grid=None, count_clusters: bool = True,
                             threads: int | None = None) -> DetectionCurve:
    """Estimate detection probability at each grid time over sim.n_realizations.

    With count_clusters (default) the full set of detecting clusters is
    recorded per realization, at the cost of simulating past the first hit;
    without it each realization stops at its first detection and only the
    detection curve is returned.  Deterministic for a fixed seed regardless
    of `threads`.
    """
    errors = validate(params, deploy)
    if errors:
        raise ValueError("invalid inputs: " + "; ".join(errors))
    _edge_check(params, deploy, sim)
    n_steps = _step_count(sim)
    if t_grid is None:
        t_grid = (sim.t_max,)
    t_grid = tuple(float(t) for t in t_grid)
    grid_steps = _grid_to_steps(t_grid, sim, n_steps)

    n = sim.n_realizations
    payloads = [
        (params, deploy, sim, tuple(int(g) for g in grid_steps), count_clusters,
         k0, min(k0 + _BLOCK, n))
        for k0 in range(0, n, _BLOCK)
    ]
    if threads is None:
        threads = os.cpu_count() or 1
    if threads > 1 and len(payloads) > 1:
        _warm_kernel()
        try:
            import multiprocessing

            ctx = multiprocessing.get_context("fork")
        except ValueError:  # pragma: no cover - non-forking platforms
            ctx = None
        with ProcessPoolExecutor(max_workers=threads, mp_context=ctx) as pool:
            results = list(pool.map(_run_block, payloads))
    else:
        results = [_run_block(p) for p in payloads]

    hits = np.zeros(len(grid_steps), dtype=np.int64)
    counts_blocks = []
    for h, c in results:
        hits += h
        if c is not None:
            counts_blocks.append(c)
    counts = np.concatenate(counts_blocks, axis=0) if counts_blocks else None
    estimates = [make_estimate(int(h), n) for h in hits]
    return DetectionCurve(
        times=t_grid,
        estimates=estimates,
        mean_detecting_clusters=None if counts is None else counts.mean(axis=0),
        cluster_counts=counts,
        n_realizations=n,
    )


def static_detection_experiment(params: SystemParams, deploy: DeploymentModel,
                                n: int, seed: int, region_radius: float = 250.0) -> Estimate:
    """Fraction of realizations with any initial NM center within a_eff of the
    target: the deployment-instant (t = 0) detection probability."""
    errors = validate(params, deploy)
    if errors:
        raise ValueError("invalid inputs: " + "; ".join(errors))
    a_eff = effective_radius(params)
    a2 = a_eff * a_eff
    hits = 0
    for k in range(n):
        rng = realization_stream(seed, k)
        _, starts, _, _ = _sample_deployment(deploy, region_radius, rng)
        if starts.size and (np.einsum("ij,ij->i", starts, starts) <= a2).any():
            hits += 1
    return make_estimate(hits, n)


def _warm_kernel() -> None:
    """Compile the numba kernel in the parent so forked workers inherit it."""
    r = np.array([10.0])
    hit = np.empty(1, dtype=np.int64)
    z = np.zeros((1, 1), dtype=np.float32)
    _chunk_kernel(r, 0.1, z, z.copy(), z.copy(), False, 1.0, 1.0, 1.0, hit, np.int64(0))
