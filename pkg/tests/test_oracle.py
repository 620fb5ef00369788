import numpy as np
import pytest

import mimoregion as mr
from mimoregion.boundary import BoundaryPoint, FairnessProfile
from mimoregion.oracle import OracleConfig, check_dominance, random_cloud

from conftest import orthogonal_two_user_scenario, single_user_scenario, total_power_two_user


def test_config_validation():
    with pytest.raises(ValueError):
        OracleConfig(num_samples=0)
    with pytest.raises(ValueError):
        OracleConfig(power_grid=0)
    with pytest.raises(ValueError):
        OracleConfig(mode="sobol")


def test_single_user_cloud_reaches_closed_form():
    scen = single_user_scenario()
    cloud = random_cloud(scen, OracleConfig(num_samples=5000, seed=0))
    best = cloud.values.max()
    # closed-form optimum: log2(1 + q ||h||^2 / sigma^2) = log2(3)
    assert best <= np.log2(3.0) + 1e-9
    assert best >= np.log2(3.0) * 0.999


def test_axis_candidates_always_present():
    scen = total_power_two_user(seed=5)
    cloud = random_cloud(scen, OracleConfig(num_samples=500, seed=0, power_grid=2))
    # the last two rows are the forced single-user matched-filter candidates
    assert cloud.values[-2:, 0].max() > 0
    assert cloud.values[-2, 1] == 0.0
    assert cloud.values[-1, 0] == 0.0


def test_cloud_seed_determinism():
    scen = total_power_two_user(seed=5)
    a = random_cloud(scen, OracleConfig(num_samples=10_000, seed=3))
    b = random_cloud(scen, OracleConfig(num_samples=10_000, seed=3))
    c = random_cloud(scen, OracleConfig(num_samples=10_000, seed=4))
    assert np.array_equal(a.values, b.values)
    assert not np.array_equal(a.values, c.values)


def test_cloud_candidates_on_feasibility_boundary():
    scen = total_power_two_user(seed=5)
    cloud = random_cloud(scen, OracleConfig(num_samples=2000, seed=1))
    assert np.all(cloud.usage.max(axis=1) <= 1.0 + 1e-9)
    assert cloud.usage.max(axis=1) == pytest.approx(np.ones(len(cloud)), abs=1e-9)


def test_orthogonal_symmetric_point_reached(ortho_two):
    cloud = random_cloud(ortho_two, OracleConfig(num_samples=30_000, seed=2))
    sym = cloud.values.min(axis=1).max()
    assert sym >= 1.0 - 0.01
    assert sym <= 1.0 + 1e-9


def test_angle_grid_mode(ortho_two):
    cloud = random_cloud(ortho_two, OracleConfig(num_samples=20_000, seed=0, mode="angle-grid"))
    sym = cloud.values.min(axis=1).max()
    assert sym >= 1.0 - 0.01
    scen3 = mr.generate_scenario("miso-ic", num_cells=3, antennas_per_cell=2, seed=0)
    with pytest.raises(ValueError, match="two users"):
        random_cloud(scen3, OracleConfig(num_samples=100, mode="angle-grid"))


def test_check_dominance_clean_and_negative_control():
    scen = total_power_two_user(seed=5)
    pts = mr.trace_boundary(scen, mr.profile_grid(2, 20), tol=1e-5)
    cloud = random_cloud(scen, OracleConfig(num_samples=40_000, seed=1))
    rep = check_dominance(cloud, pts, tol=1e-3)
    assert rep.ok(1e-3)
    assert rep.worst_violation == 0.0

    # negative control: inject a fabricated super-boundary point
    fake = cloud.values.copy()
    mid = np.array([p.point for p in pts if np.all(p.profile.alpha > 0)])
    fake = np.vstack([fake, mid[len(mid) // 2] * 1.05])
    forged = mr.RegionSample(values=fake, tags=list(cloud.tags) + ["oracle"], fingerprint=cloud.fingerprint)
    rep2 = check_dominance(forged, pts, tol=1e-3)
    assert not rep2.ok(1e-3)
    assert rep2.worst_violation >= 0.04


def test_check_dominance_tolerance_propagation():
    # a boundary computed at loose tolerance may be exceeded by at most ~tol
    scen = total_power_two_user(seed=9)
    loose = mr.trace_boundary(scen, mr.profile_grid(2, 10), tol=1e-2)
    cloud = random_cloud(scen, OracleConfig(num_samples=40_000, seed=1))
    rep = check_dominance(cloud, loose, tol=1e-3)
    # relative exceedance bounded by the absolute bisection slack / g_sum
    bound = max(1e-2 / p.g_sum for p in loose if p.g_sum > 0)
    assert rep.worst_violation <= bound + 1e-9


def test_check_dominance_fingerprint_guard():
    scen = total_power_two_user(seed=5)
    pts = mr.trace_boundary(scen, mr.profile_grid(2, 4), tol=1e-4)
    cloud = random_cloud(scen, OracleConfig(num_samples=1000, seed=1))
    with pytest.raises(mr.FingerprintMismatchError):
        check_dominance(cloud, pts, boundary_fingerprint="nope")
    rep = check_dominance(cloud, pts, boundary_fingerprint=cloud.fingerprint)
    assert rep.num_points == len(cloud)


def test_check_dominance_requires_boundary():
    scen = total_power_two_user(seed=5)
    cloud = random_cloud(scen, OracleConfig(num_samples=100, seed=1))
    with pytest.raises(ValueError):
        check_dominance(cloud, [])
