"""Scenario-driven experiment runner.

Scenario files are flat UTF-8 key-value documents (`section.key = value`,
`#` comments, lists comma-separated, time grids either explicit lists or
`start:step:stop`), chosen over a nested format for diff-friendliness.  The
runner evaluates any subset of the analytic methods next to the particle
simulation and emits CSV with fixed columns

    scenario,method,t_seconds,value,err_low,err_high,n_samples,wall_ms

at 9 significant digits.  Output is deterministic for a fixed seed: rows are
emitted in canonical (method, t) order regardless of completion order, and
the wall_ms column stays empty unless --timing is passed.

Exit codes: 0 success, 2 parse error, 3 numerical failure, 4 unknown preset.
"""

from __future__ import annotations

import argparse
import dataclasses
import math
import os
import sys
import time
from dataclasses import dataclass, field

from . import analytic
from .model import (
    ClusterModel,
    DeploymentModel,
    Matern,
    Pcp,
    Ppp,
    QuadratureSpec,
    SimSpec,
    SingleCluster,
    SystemParams,
    Thomas,
    validate,
)
from .quadrature import NonConvergence
from .simulate import ConfigError, run_detection_experiment, static_detection_experiment

SEED_ENV_VAR = "NANODETECT_SEED"

METHODS = ("exact", "approx", "upper_bound", "lower_bound",
           "ppp_equiv", "ppp_nonempty", "static", "simulation")

CSV_COLUMNS = ("scenario", "method", "t_seconds", "value",
               "err_low", "err_high", "n_samples", "wall_ms")


class ScenarioParseError(Exception):
    """Carries every parse problem as (line, field, message) triples."""

    def __init__(self, errors):
        self.errors = list(errors)
        super().__init__("\n".join(self.format_errors()))

    def format_errors(self):
        return [f"line {ln}: {fieldname}: {msg}" if ln else f"{fieldname}: {msg}"
                for ln, fieldname, msg in self.errors]


class UnknownPreset(Exception):
    pass


@dataclass(frozen=True)
class Scenario:
    name: str
    params: SystemParams
    deploy: DeploymentModel
    methods: tuple
    t_grid: tuple
    quad: QuadratureSpec = field(default_factory=QuadratureSpec)
    sim: SimSpec = field(default_factory=SimSpec)


@dataclass(frozen=True)
class Row:
    scenario: str
    method: str
    t: float
    value: float | None
    err_low: float | None = None
    err_high: float | None = None
    n_samples: int | None = None
    wall_ms: float | None = None
    error: str | None = None


# --------------------------------------------------------------------------
# parsing

def _parse_lines(text: str):
    """First stage: text -> {key: (line, raw_value)} plus syntax errors."""
    kv: dict[str, tuple[int, str]] = {}
    errors = []
    for ln, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            errors.append((ln, line, "expected 'key = value'"))
            continue
        key, val = (part.strip() for part in line.split("=", 1))
        if not key:
            errors.append((ln, line, "empty key"))
            continue
        if key in kv:
            errors.append((ln, key, "duplicate key"))
            continue
        kv[key] = (ln, val)
    return kv, errors


def _parse_t_grid(raw: str):
    if ":" in raw:
        parts = raw.split(":")
        if len(parts) != 3:
            raise ValueError("time ranges are start:step:stop")
        start, step, stop = (float(p) for p in parts)
        if step <= 0:
            raise ValueError("range step must be positive")
        ts = []
        k = 0
        while True:
            t = start + k * step
            if t > stop * (1 + 1e-12) + 1e-15:
                break
            ts.append(t)
            k += 1
        return tuple(ts)
    return tuple(float(p) for p in raw.split(","))


def parse_scenario(text: str, name: str | None = None) -> Scenario:
    """Parse a scenario document; raises ScenarioParseError listing every
    problem (unknown keys, bad values, violated invariants) with line info."""
    kv, errors = _parse_lines(text)
    lines = {k: ln for k, (ln, _) in kv.items()}
    vals = {k: v for k, (_, v) in kv.items()}
    taken = set()

    def take(key, conv, default=None, required=False):
        taken.add(key)
        if key not in vals:
            if required:
                errors.append((0, key, "missing required field: " + key))
            return default
        try:
            return conv(vals[key])
        except ValueError as exc:
            errors.append((lines[key], key, str(exc)))
            return default

    def fbool(raw):
        low = raw.strip().lower()
        if low in ("true", "1", "yes", "on"):
            return True
        if low in ("false", "0", "no", "off"):
            return False
        raise ValueError(f"expected a boolean, got {raw!r}")

    scen_name = take("scenario.name", str, default=name or "scenario")

    nm_radius = take("params.nm_radius", float, required=True)
    target_radius = take("params.target_radius", float, default=0.0)
    diffusion = take("params.diffusion", float, required=True)

    kind = take("deploy.kind", str, required=True)
    deploy = None
    cluster = None
    if kind in ("pcp", "single_cluster"):
        mean = take("cluster.mean_daughters", float, required=True)
        spread_kind = take("cluster.spread_kind", str, required=True)
        spread = None
        if spread_kind == "matern":
            r = take("cluster.radius", float, required=True)
            spread = Matern(r if r is not None else 1.0)
        elif spread_kind == "thomas":
            sg = take("cluster.sigma", float, required=True)
            spread = Thomas(sg if sg is not None else 1.0)
        elif spread_kind is not None:
            errors.append((lines.get("cluster.spread_kind", 0), "cluster.spread_kind",
                           f"unknown spread kind {spread_kind!r} (matern or thomas)"))
        if spread is not None and mean is not None:
            cluster = ClusterModel(mean_daughters=mean, spread=spread)
    if kind == "pcp":
        lam = take("deploy.parent_density", float, required=True)
        if cluster is not None and lam is not None:
            deploy = Pcp(parent_density=lam, cluster=cluster)
    elif kind == "single_cluster":
        R = take("deploy.center_region_radius", float, required=True)
        if cluster is not None and R is not None:
            deploy = SingleCluster(center_region_radius=R, cluster=cluster)
    elif kind == "ppp":
        dens = take("deploy.density", float, required=True)
        if dens is not None:
            deploy = Ppp(density=dens)
    elif kind is not None:
        errors.append((lines.get("deploy.kind", 0), "deploy.kind",
                       f"unknown deployment kind {kind!r} (pcp, single_cluster, ppp)"))

    methods_raw = take("methods", str, default="exact")
    methods = tuple(m.strip() for m in methods_raw.split(",") if m.strip()) if methods_raw else ()
    for m in methods:
        if m not in METHODS:
            errors.append((lines.get("methods", 0), "methods", f"unknown method {m!r}"))
    if not methods:
        errors.append((lines.get("methods", 0), "methods", "methods must be nonempty"))

    t_grid = take("t", _parse_t_grid, required=True)
    if t_grid is not None:
        if len(t_grid) == 0:
            errors.append((lines.get("t", 0), "t", "time grid must be nonempty"))
        elif any(b <= a for a, b in zip(t_grid, t_grid[1:])):
            errors.append((lines.get("t", 0), "t", "time grid must be strictly increasing"))

    quad = QuadratureSpec(
        rel_tol=take("quad.rel_tol", float, default=QuadratureSpec.rel_tol),
        abs_tol=take("quad.abs_tol", float, default=QuadratureSpec.abs_tol),
        max_depth=take("quad.max_depth", int, default=QuadratureSpec.max_depth),
        tail_sigma_count=take("quad.tail_sigma_count", float, default=QuadratureSpec.tail_sigma_count),
        outer_tail_constant=take("quad.outer_tail_constant", float, default=QuadratureSpec.outer_tail_constant),
    )
    if quad.rel_tol <= 0 or quad.abs_tol <= 0:
        errors.append((0, "quad", "tolerances must be positive"))
    if quad.max_depth < 1:
        errors.append((lines.get("quad.max_depth", 0), "quad.max_depth", "max_depth must be >= 1"))
    if quad.tail_sigma_count < 4:
        errors.append((lines.get("quad.tail_sigma_count", 0), "quad.tail_sigma_count", "must be >= 4"))
    if quad.outer_tail_constant < 4:
        errors.append((lines.get("quad.outer_tail_constant", 0), "quad.outer_tail_constant", "must be >= 4"))

    default_tmax = max(t_grid) if t_grid else SimSpec.t_max
    env_seed = os.environ.get(SEED_ENV_VAR)
    default_seed = int(env_seed) if env_seed and env_seed.lstrip("+-").isdigit() else 0
    sim = SimSpec(
        dt=take("sim.dt", float, default=SimSpec.dt),
        t_max=take("sim.t_max", float, default=max(default_tmax, SimSpec.dt)),
        region_radius=take("sim.region_radius", float, default=SimSpec.region_radius),
        n_realizations=take("sim.n_realizations", int, default=SimSpec.n_realizations),
        seed=take("sim.seed", int, default=default_seed),
        bridge_correction=take("sim.bridge_correction", fbool, default=SimSpec.bridge_correction),
    )
    if not (0 < sim.dt <= sim.t_max):
        errors.append((0, "sim", "requires 0 < dt <= t_max"))
    if sim.region_radius <= 0:
        errors.append((lines.get("sim.region_radius", 0), "sim.region_radius", "must be positive"))
    if sim.n_realizations < 1:
        errors.append((lines.get("sim.n_realizations", 0), "sim.n_realizations", "must be >= 1"))

    for key in vals:
        if key not in taken:
            errors.append((lines[key], key, "unknown key"))

    if params_ok := (nm_radius is not None and diffusion is not None):
        params = SystemParams(nm_radius=nm_radius, diffusion=diffusion,
                              target_radius=target_radius if target_radius is not None else 0.0)
        if deploy is not None:
            for msg in validate(params, deploy):
                errors.append((0, "invariants", msg))

    if errors:
        raise ScenarioParseError(sorted(errors))
    return Scenario(name=scen_name, params=params, deploy=deploy, methods=methods,
                    t_grid=t_grid, quad=quad, sim=sim)


def format_scenario(s: Scenario) -> str:
    """Serialize a Scenario to the flat document; floats use repr so the
    round-trip through parse_scenario is bit-exact."""
    out = [f"scenario.name = {s.name}"]
    out.append(f"params.nm_radius = {s.params.nm_radius!r}")
    out.append(f"params.target_radius = {s.params.target_radius!r}")
    out.append(f"params.diffusion = {s.params.diffusion!r}")
    d = s.deploy
    if isinstance(d, Pcp):
        out.append("deploy.kind = pcp")
        out.append(f"deploy.parent_density = {d.parent_density!r}")
        cluster = d.cluster
    elif isinstance(d, SingleCluster):
        out.append("deploy.kind = single_cluster")
        out.append(f"deploy.center_region_radius = {d.center_region_radius!r}")
        cluster = d.cluster
    else:
        out.append("deploy.kind = ppp")
        out.append(f"deploy.density = {d.density!r}")
        cluster = None
    if cluster is not None:
        out.append(f"cluster.mean_daughters = {cluster.mean_daughters!r}")
        if isinstance(cluster.spread, Matern):
            out.append("cluster.spread_kind = matern")
            out.append(f"cluster.radius = {cluster.spread.radius!r}")
        else:
            out.append("cluster.spread_kind = thomas")
            out.append(f"cluster.sigma = {cluster.spread.sigma!r}")
    out.append("methods = " + ", ".join(s.methods))
    out.append("t = " + ", ".join(repr(t) for t in s.t_grid))
    q = s.quad
    out.append(f"quad.rel_tol = {q.rel_tol!r}")
    out.append(f"quad.abs_tol = {q.abs_tol!r}")
    out.append(f"quad.max_depth = {q.max_depth}")
    out.append(f"quad.tail_sigma_count = {q.tail_sigma_count!r}")
    out.append(f"quad.outer_tail_constant = {q.outer_tail_constant!r}")
    out.append(f"sim.dt = {s.sim.dt!r}")
    out.append(f"sim.t_max = {s.sim.t_max!r}")
    out.append(f"sim.region_radius = {s.sim.region_radius!r}")
    out.append(f"sim.n_realizations = {s.sim.n_realizations}")
    out.append(f"sim.seed = {s.sim.seed}")
    out.append(f"sim.bridge_correction = {'true' if s.sim.bridge_correction else 'false'}")
    return "\n".join(out) + "\n"


# --------------------------------------------------------------------------
# running

def _analytic_value(method: str, s: Scenario, t: float):
    """Returns (value, err_low, err_high) or raises for unsupported combos."""
    q = analytic.DetectionQuery(params=s.params, deploy=s.deploy, t=t, quad=s.quad)
    d = s.deploy
    if method == "exact":
        if isinstance(d, Pcp):
            res = analytic.detect_prob_pcp(q)
        elif isinstance(d, SingleCluster):
            res = analytic.detect_prob_single_cluster(q)
        else:
            p = analytic.detect_prob_ppp(d.density, s.params, t)
            return p, p, p
        return res.p, max(0.0, res.p - res.est_error), min(1.0, res.p + res.est_error)
    if method == "approx":
        if isinstance(d, Pcp):
            res = analytic.detect_prob_pcp_approx(q)
            return res.p, max(0.0, res.p - res.est_error), min(1.0, res.p + res.est_error)
        if isinstance(d, SingleCluster):
            p = analytic.detect_prob_single_cluster_approx(q)
            return p, p, p
        raise ValueError("approx requires a clustered deployment")
    if method in ("upper_bound", "lower_bound"):
        lo, hi = analytic.detect_prob_bounds(q)
        p = hi if method == "upper_bound" else lo
        return p, p, p
    if method == "ppp_equiv":
        if isinstance(d, Pcp):
            p = analytic.detect_prob_ppp(d.parent_density * d.cluster.mean_daughters, s.params, t)
        elif isinstance(d, Ppp):
            p = analytic.detect_prob_ppp(d.density, s.params, t)
        else:
            raise ValueError("ppp_equiv requires a stationary deployment")
        return p, p, p
    if method == "ppp_nonempty":
        if not isinstance(d, Pcp):
            raise ValueError("ppp_nonempty requires a PCP deployment")
        dens = d.parent_density * (-math.expm1(-d.cluster.mean_daughters))
        p = analytic.detect_prob_ppp(dens, s.params, t)
        return p, p, p
    if method == "static":
        if isinstance(d, Pcp):
            res = analytic.detect_prob_static(q)
            return res.p, max(0.0, res.p - res.est_error), min(1.0, res.p + res.est_error)
        if isinstance(d, SingleCluster):
            res = analytic.detect_prob_single_cluster(dataclasses.replace(q, t=0.0))
            return res.p, max(0.0, res.p - res.est_error), min(1.0, res.p + res.est_error)
        p = analytic.detect_prob_ppp(d.density, s.params, 0.0)
        return p, p, p
    raise ValueError(f"unknown method {method!r}")


def _simulation_rows(s: Scenario, threads, timing: bool):
    t0 = time.perf_counter()
    if max(s.t_grid) <= 0.0:
        est = static_detection_experiment(s.params, s.deploy, s.sim.n_realizations,
                                          s.sim.seed, region_radius=s.sim.region_radius)
        estimates = [est for _ in s.t_grid]
    else:
        sim = dataclasses.replace(s.sim, t_max=max(s.t_grid))
        curve = run_detection_experiment(s.params, s.deploy, sim, t_grid=s.t_grid,
                                         count_clusters=False, threads=threads)
        estimates = curve.estimates
    wall = (time.perf_counter() - t0) * 1e3 if timing else None
    return [
        Row(s.name, "simulation", t, est.p_hat, est.ci_low, est.ci_high, est.n, wall)
        for t, est in zip(s.t_grid, estimates)
    ]


def run_scenario(s: Scenario, threads: int | None = None, timing: bool = False):
    """Evaluate every requested (method, t) pair; returns (rows, n_failures).

    Per-row failures (unsupported combinations, non-converged quadrature) are
    recorded with empty value fields and the run continues.
    """
    rows: list[Row] = []
    failures = 0
    for method in (m for m in METHODS if m in s.methods):
        if method == "simulation":
            try:
                rows.extend(_simulation_rows(s, threads, timing))
            except (ConfigError, ValueError) as exc:
                failures += len(s.t_grid)
                rows.extend(Row(s.name, method, t, None, error=str(exc)) for t in s.t_grid)
            continue
        for t in s.t_grid:
            t0 = time.perf_counter()
            try:
                value, lo, hi = _analytic_value(method, s, t)
                wall = (time.perf_counter() - t0) * 1e3 if timing else None
                rows.append(Row(s.name, method, t, value, lo, hi, None, wall))
            except (ValueError, NonConvergence) as exc:
                failures += 1
                rows.append(Row(s.name, method, t, None, error=str(exc)))
    return rows, failures


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, int):
        return str(v)
    return f"{v:.9g}"


def rows_to_csv(rows) -> str:
    out = [",".join(CSV_COLUMNS)]
    for r in rows:
        out.append(",".join((
            r.scenario, r.method, _fmt(r.t), _fmt(r.value),
            _fmt(r.err_low), _fmt(r.err_high), _fmt(r.n_samples), _fmt(r.wall_ms),
        )))
    return "\n".join(out) + "\n"


def parse_result_csv(text: str):
    """Re-parse an emitted CSV into its table of string fields."""
    lines = text.strip().splitlines()
    header = tuple(lines[0].split(","))
    if header != CSV_COLUMNS:
        raise ValueError(f"unexpected CSV header {header}")
    return [tuple(line.split(",")) for line in lines[1:]]


# --------------------------------------------------------------------------
# presets: canonical validation-figure parameter sets.  Each figure pins
# a, r/sigma, lambda_p and D; sweep lists the figure leaves open are
# documented reconstructions, exposed so one verb regenerates the data.

_FIG_T = "0.5:0.5:10"


def _preset_text(fig: str) -> tuple[str, dict]:
    pcp_common = (
        "params.nm_radius = 3\nparams.diffusion = 100\ndeploy.kind = pcp\n"
        "deploy.parent_density = 1e-6\ncluster.mean_daughters = 5\n"
    )
    if fig in ("fig2a", "fig3a"):
        spread = "cluster.spread_kind = matern\ncluster.radius = 10\n"
    else:
        spread = "cluster.spread_kind = thomas\ncluster.sigma = 10\n"
    if fig in ("fig2a", "fig2b"):
        return (
            pcp_common + spread +
            f"methods = exact, approx, simulation\nt = {_FIG_T}\n",
            {"sweep": ("cluster.mean_daughters", (1.0, 5.0, 15.0))},
        )
    if fig in ("fig3a", "fig3b"):
        return (
            pcp_common + spread +
            f"methods = exact, approx, upper_bound, lower_bound, simulation\nt = {_FIG_T}\n",
            {"sweep": ("deploy.parent_density", (2e-7, 1e-6, 5e-6))},
        )
    if fig in ("fig4a", "fig4b"):
        kindline = ("cluster.spread_kind = matern\ncluster.radius = 10\n" if fig == "fig4a"
                    else "cluster.spread_kind = thomas\ncluster.sigma = 10\n")
        key = "cluster.radius" if fig == "fig4a" else "cluster.sigma"
        return (
            "params.nm_radius = 4\nparams.diffusion = 100\ndeploy.kind = pcp\n"
            "deploy.parent_density = 5e-7\ncluster.mean_daughters = 5\n" + kindline +
            "methods = exact, approx\nt = 5\n",
            {"sweep": (key, (0.1, 1.0, 5.0, 10.0))},
        )
    if fig == "fig5":
        return (
            "params.nm_radius = 3\nparams.diffusion = 100\ndeploy.kind = pcp\n"
            "deploy.parent_density = 1e-6\ncluster.mean_daughters = 5\n"
            "cluster.spread_kind = thomas\ncluster.sigma = 10\n"
            f"methods = exact\nt = {_FIG_T}\n",
            {"sweep": ("cluster.sigma", (5.0, 10.0, 20.0, 40.0))},
        )
    if fig == "fig6":
        return (
            "params.nm_radius = 3\nparams.diffusion = 100\ndeploy.kind = pcp\n"
            "deploy.parent_density = 1e-6\ncluster.mean_daughters = 5\n"
            "cluster.spread_kind = matern\ncluster.radius = 10\n"
            "methods = static\nt = 0\nsim.t_max = 1\n",
            {"sweep": ("params.nm_radius", (1.0, 2.0, 3.0, 4.0, 5.0, 6.0))},
        )
    if fig == "fig7":
        return (
            "params.nm_radius = 3\nparams.diffusion = 100\ndeploy.kind = single_cluster\n"
            "deploy.center_region_radius = 200\ncluster.mean_daughters = 5\n"
            "cluster.spread_kind = matern\ncluster.radius = 10\n"
            "methods = exact, approx, simulation\nt = 1:1:10\n",
            {"sweep": ("cluster.mean_daughters", (5.0, 15.0)),
             "companions": ("fig7_tcp",)},
        )
    if fig == "fig7_tcp":
        return (
            "params.nm_radius = 3\nparams.diffusion = 100\ndeploy.kind = single_cluster\n"
            "deploy.center_region_radius = 200\ncluster.mean_daughters = 5\n"
            "cluster.spread_kind = thomas\ncluster.sigma = 10\n"
            "methods = exact, approx, simulation\nt = 1:1:10\n",
            {"sweep": ("cluster.mean_daughters", (5.0, 15.0))},
        )
    if fig == "fig8":
        return (
            "params.nm_radius = 3\nparams.diffusion = 100\ndeploy.kind = pcp\n"
            "deploy.parent_density = 1e-5\ncluster.mean_daughters = 5\n"
            "cluster.spread_kind = matern\ncluster.radius = 10\n"
            f"methods = exact, approx, ppp_equiv, ppp_nonempty, simulation\nt = {_FIG_T}\n",
            {"companions": ("fig8_tcp", "fig8_single")},
        )
    if fig == "fig8_tcp":
        return (
            "params.nm_radius = 3\nparams.diffusion = 100\ndeploy.kind = pcp\n"
            "deploy.parent_density = 1e-5\ncluster.mean_daughters = 5\n"
            "cluster.spread_kind = thomas\ncluster.sigma = 10\n"
            f"methods = exact, simulation\nt = {_FIG_T}\n",
            {},
        )
    if fig == "fig8_single":
        return (
            "params.nm_radius = 3\nparams.diffusion = 100\ndeploy.kind = single_cluster\n"
            "deploy.center_region_radius = 200\ncluster.mean_daughters = 5\n"
            "cluster.spread_kind = matern\ncluster.radius = 10\n"
            f"methods = exact, simulation\nt = {_FIG_T}\n",
            {},
        )
    raise UnknownPreset(fig)


PRESET_IDS = ("fig2a", "fig2b", "fig3a", "fig3b", "fig4a", "fig4b",
              "fig5", "fig6", "fig7", "fig8")


def preset(fig: str) -> Scenario:
    """Base scenario for one validation figure; raises UnknownPreset."""
    text, _ = _preset_text(fig)
    return parse_scenario(f"scenario.name = {fig}\n" + text, name=fig)


def _set_key(s: Scenario, key: str, value: float, name: str) -> Scenario:
    kv, _ = _parse_lines(format_scenario(s))
    text = "\n".join(f"{k} = {v}" for k, (_, v) in kv.items()
                     if k not in (key, "scenario.name"))
    text += f"\n{key} = {value!r}\nscenario.name = {name}\n"
    return parse_scenario(text, name=name)


def preset_scenarios(fig: str) -> list[Scenario]:
    """Full expansion of a figure preset: swept values plus companion panels."""
    text, meta = _preset_text(fig)
    base = preset(fig) if fig in PRESET_IDS else parse_scenario(f"scenario.name = {fig}\n" + text, name=fig)
    out = []
    sweep = meta.get("sweep")
    if sweep:
        key, values = sweep
        short = key.rsplit(".", 1)[-1]
        out.extend(_set_key(base, key, v, f"{fig}[{short}={v:g}]") for v in values)
    else:
        out.append(base)
    for comp in meta.get("companions", ()):
        out.extend(preset_scenarios(comp))
    return out


# --------------------------------------------------------------------------
# entry point

def _apply_overrides(s: Scenario, args) -> Scenario:
    sim = s.sim
    if args.seed is not None:
        sim = dataclasses.replace(sim, seed=args.seed)
    if args.realizations is not None:
        sim = dataclasses.replace(sim, n_realizations=args.realizations)
    quad = s.quad
    if args.rel_tol is not None:
        quad = dataclasses.replace(quad, rel_tol=args.rel_tol)
    return dataclasses.replace(s, sim=sim, quad=quad)


def _emit(csv_text: str, out_path: str | None) -> None:
    if out_path:
        with open(out_path, "w", encoding="utf-8") as fh:
            fh.write(csv_text)
    else:
        sys.stdout.write(csv_text)


def _run_many(scenarios, args) -> int:
    rows, failures = [], 0
    for s in scenarios:
        s = _apply_overrides(s, args)
        r, f = run_scenario(s, threads=args.threads, timing=args.timing)
        rows.extend(r)
        failures += f
    _emit(rows_to_csv(rows), args.out)
    for r in rows:
        if r.error:
            print(f"nanodetect: {r.scenario}/{r.method}@t={r.t:g}: {r.error}", file=sys.stderr)
    return 3 if failures else 0


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--out", help="write CSV here instead of stdout")
    p.add_argument("--seed", type=int, default=None, help="override the simulation seed")
    p.add_argument("--realizations", type=int, default=None, help="override realization count")
    p.add_argument("--rel-tol", type=float, default=None, help="override quadrature rel_tol")
    p.add_argument("--threads", type=int, default=None,
                   help="worker processes for the simulation (affects speed only, never results)")
    p.add_argument("--format", choices=("csv",), default="csv")
    p.add_argument("--timing", action="store_true", help="fill the wall_ms column")


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="nanodetect",
        description="Target-detection probabilities for clustered nanomachine networks",
    )
    sub = parser.add_subparsers(dest="verb", required=True)
    p_run = sub.add_parser("run", help="run a scenario file")
    p_run.add_argument("scenario_file")
    _add_common(p_run)
    p_pre = sub.add_parser("preset", help="run a built-in figure preset")
    p_pre.add_argument("fig", help="one of " + ", ".join(PRESET_IDS))
    _add_common(p_pre)
    p_sweep = sub.add_parser("sweep", help="run a scenario file over a swept key")
    p_sweep.add_argument("scenario_file")
    p_sweep.add_argument("--vary", required=True, metavar="KEY=V1,V2,...")
    _add_common(p_sweep)
    p_val = sub.add_parser("validate", help="parse and validate a scenario file")
    p_val.add_argument("scenario_file")
    args = parser.parse_args(argv)

    try:
        if args.verb == "run":
            with open(args.scenario_file, encoding="utf-8") as fh:
                s = parse_scenario(fh.read(), name=os.path.basename(args.scenario_file))
            return _run_many([s], args)
        if args.verb == "preset":
            try:
                scenarios = preset_scenarios(args.fig)
            except UnknownPreset:
                print(f"nanodetect: unknown preset {args.fig!r}", file=sys.stderr)
                return 4
            return _run_many(scenarios, args)
        if args.verb == "sweep":
            with open(args.scenario_file, encoding="utf-8") as fh:
                base = parse_scenario(fh.read(), name=os.path.basename(args.scenario_file))
            key, _, raw_vals = args.vary.partition("=")
            if not raw_vals:
                print("nanodetect: --vary expects KEY=V1,V2,...", file=sys.stderr)
                return 2
            short = key.rsplit(".", 1)[-1]
            scenarios = [
                _set_key(base, key.strip(), float(v), f"{base.name}[{short}={float(v):g}]")
                for v in raw_vals.split(",")
            ]
            return _run_many(scenarios, args)
        if args.verb == "validate":
            with open(args.scenario_file, encoding="utf-8") as fh:
                s = parse_scenario(fh.read(), name=os.path.basename(args.scenario_file))
            print(f"ok: scenario {s.name!r} valid "
                  f"({len(s.methods)} methods, {len(s.t_grid)} grid times)")
            return 0
    except ScenarioParseError as exc:
        for line in exc.format_errors():
            print(f"nanodetect: {line}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"nanodetect: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
