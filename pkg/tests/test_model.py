"""Domain type and validation tests."""

import dataclasses
import math

import pytest

from nanodetect.model import (
    ClusterModel,
    Matern,
    Pcp,
    Point3,
    Ppp,
    SingleCluster,
    SystemParams,
    Thomas,
    effective_radius,
    make_estimate,
    nm_density,
    validate,
    wilson_interval,
)


def test_effective_radius():
    assert effective_radius(SystemParams(nm_radius=3, diffusion=100)) == 3.0
    assert effective_radius(SystemParams(nm_radius=3, diffusion=100, target_radius=2)) == 5.0
    assert effective_radius(SystemParams(nm_radius=0.5, diffusion=1, target_radius=0.5)) == 1.0


def test_validate_figure_parameters_ok():
    params = SystemParams(nm_radius=3, diffusion=100)
    deploy = Pcp(parent_density=1e-6, cluster=ClusterModel(5, Matern(10)))
    assert validate(params, deploy) == []


def test_validate_negative_radius():
    params = SystemParams(nm_radius=-1, diffusion=100)
    deploy = Ppp(density=1e-5)
    errors = validate(params, deploy)
    assert any("nm_radius must be positive" in e for e in errors)


def test_validate_degenerate_densities_legal():
    params = SystemParams(nm_radius=3, diffusion=100)
    assert validate(params, Pcp(0.0, ClusterModel(5, Matern(10)))) == []
    assert validate(params, Pcp(1e-6, ClusterModel(0.0, Thomas(10)))) == []
    assert validate(params, Ppp(0.0)) == []


def test_validate_collects_every_violation():
    params = SystemParams(nm_radius=-1, diffusion=0, target_radius=-2)
    deploy = Pcp(parent_density=-1, cluster=ClusterModel(-3, Matern(0)))
    errors = validate(params, deploy)
    assert len(errors) == 6


def test_validate_is_total():
    # no input may crash it
    for params in (None, "junk", SystemParams(math.nan, math.inf, -math.inf)):
        for deploy in (None, 42, Pcp(math.nan, ClusterModel(math.nan, Thomas(math.nan)))):
            errors = validate(params, deploy)
            assert isinstance(errors, list) and errors


def test_validate_single_cluster():
    params = SystemParams(nm_radius=3, diffusion=100)
    assert validate(params, SingleCluster(200.0, ClusterModel(5, Thomas(10)))) == []
    errs = validate(params, SingleCluster(0.0, ClusterModel(5, Matern(10))))
    assert any("center_region_radius" in e for e in errs)


def test_nm_density():
    assert nm_density(Pcp(1e-6, ClusterModel(5, Matern(10)))) == pytest.approx(5e-6)
    assert nm_density(Ppp(3e-6)) == 3e-6
    with pytest.raises(ValueError):
        nm_density(SingleCluster(200.0, ClusterModel(5, Matern(10))))


def test_types_are_immutable():
    p = SystemParams(nm_radius=3, diffusion=100)
    with pytest.raises(dataclasses.FrozenInstanceError):
        p.nm_radius = 4
    pt = Point3(1, 2, 3)
    with pytest.raises(dataclasses.FrozenInstanceError):
        pt.x = 0


def test_point3_norm():
    assert Point3(3, 4, 0).norm() == 5.0


def test_wilson_interval_invariants():
    import numpy as np

    rng = np.random.default_rng(7)
    for _ in range(200):
        n = int(rng.integers(1, 10_000))
        hits = int(rng.integers(0, n + 1))
        est = make_estimate(hits, n)
        assert 0.0 <= est.ci_low <= est.p_hat <= est.ci_high <= 1.0
        assert est.hits == hits and est.n == n
        assert est.p_hat == hits / n


def test_wilson_boundary_cases():
    assert wilson_interval(0, 100)[0] == 0.0
    assert wilson_interval(100, 100)[1] == 1.0
    lo, hi = wilson_interval(0, 0)
    assert (lo, hi) == (0.0, 1.0)
