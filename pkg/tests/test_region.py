import numpy as np
import pytest

import mimoregion as mr
from mimoregion.region import (
    RegionSample,
    boundary_gap,
    load_sample,
    pareto_filter,
    pareto_mask,
    ray_coverage,
    read_boundary_csv,
    write_boundary_csv,
    write_sweep_csv,
)

from conftest import total_power_two_user


def sorted_rows(a):
    a = np.asarray(a)
    return a[np.lexsort(a.T)]


# -- dominance filtering --------------------------------------------------------


def test_pareto_example():
    pts = np.array([[1.0, 1.0], [2.0, 0.5], [0.5, 0.5]])
    kept = pareto_filter(pts)
    assert sorted_rows(kept).tolist() == sorted_rows([[1.0, 1.0], [2.0, 0.5]]).tolist()


def test_pareto_identical_points_retained():
    pts = np.array([[1.0, 1.0]] * 4)
    assert pareto_filter(pts).shape == (4, 2)


def test_pareto_strictly_decreasing_curve_kept():
    x = np.linspace(0.1, 2.0, 25)
    pts = np.stack([x, 1.0 / x], axis=1)
    assert pareto_filter(pts).shape == pts.shape


def test_pareto_weak_vs_outer_views():
    pts = np.array([[1.0, 1.0], [1.0, 0.5]])
    # weakly dominated in the second component only
    assert pareto_filter(pts, view="pareto").shape == (1, 2)
    assert pareto_filter(pts, view="outer").shape == (2, 2)


def test_pareto_idempotent_and_permutation_invariant():
    rng = np.random.default_rng(0)
    pts = rng.uniform(0, 1, size=(400, 2))
    kept = pareto_filter(pts)
    again = pareto_filter(kept)
    assert sorted_rows(again).tolist() == sorted_rows(kept).tolist()
    perm = rng.permutation(400)
    kept_p = pareto_filter(pts[perm])
    assert sorted_rows(kept_p).tolist() == sorted_rows(kept).tolist()


@pytest.mark.parametrize("view", ["pareto", "outer"])
def test_pareto_fast_path_matches_pairwise(view):
    from mimoregion.region import _mask_2d, _mask_pairwise

    rng = np.random.default_rng(1)
    for trial in range(6):
        pts = rng.uniform(0, 1, size=(120, 2))
        if trial % 2:
            pts = np.round(pts, 1)  # force ties
        fast = _mask_2d(pts, view, 1e-9)
        slow = _mask_pairwise(pts, view, 1e-9)
        assert np.array_equal(fast, slow)


def test_pareto_three_dims():
    rng = np.random.default_rng(2)
    pts = rng.uniform(0, 1, size=(200, 3))
    kept = pareto_filter(pts)
    mask = pareto_mask(pts)
    assert kept.shape[0] == mask.sum()
    again = pareto_filter(kept)
    assert sorted_rows(again).tolist() == sorted_rows(kept).tolist()
    # brute-force cross-check
    for i, p in enumerate(pts):
        dominated = any(
            np.all(q >= p - 1e-9) and np.any(q > p + 1e-9)
            for j, q in enumerate(pts)
            if j != i
        )
        assert mask[i] == (not dominated)


def test_pareto_input_validation():
    with pytest.raises(ValueError):
        pareto_filter(np.empty((0, 2)))
    with pytest.raises(ValueError):
        pareto_filter(np.zeros((3, 2)), view="weird")


# -- region sample ----------------------------------------------------------------


def test_region_sample_validation():
    with pytest.raises(ValueError):
        RegionSample(values=np.array([[1.0, -0.2]]), tags=["x"], fingerprint="f")
    with pytest.raises(ValueError):
        RegionSample(values=np.ones((2, 2)), tags=["x"], fingerprint="f")


def test_merge_requires_same_fingerprint():
    a = RegionSample(values=np.ones((1, 2)), tags=["a"], fingerprint="f1")
    b = RegionSample(values=np.ones((1, 2)), tags=["b"], fingerprint="f2")
    with pytest.raises(mr.FingerprintMismatchError):
        mr.merge_samples(a, b)
    c = mr.merge_samples(a, RegionSample(values=np.zeros((1, 2)), tags=["b"], fingerprint="f1"))
    assert len(c) == 2


# -- ray coverage / boundary gap ----------------------------------------------------


def test_ray_coverage_basics():
    pts = np.array([[2.0, 1.0]])
    alphas = np.array([[0.5, 0.5], [1.0, 0.0]])
    cov = ray_coverage(pts, alphas)
    assert cov[0] == pytest.approx(2.0)  # min(2/.5, 1/.5) = 2
    assert cov[1] == pytest.approx(2.0)  # only the positive entry counts


def make_boundary(scen, n=11, tol=1e-5):
    return mr.trace_boundary(scen, mr.profile_grid(2, n - 1), tol=tol)


def test_gap_zero_for_traced_points_themselves():
    scen = total_power_two_user(seed=4)
    pts = make_boundary(scen)
    sample = RegionSample(
        values=np.array([p.point for p in pts]),
        tags=["implicit-trace"] * len(pts),
        fingerprint=mr.fingerprint(scen),
    )
    rep = boundary_gap(sample, pts, traced_fingerprint=mr.fingerprint(scen))
    assert rep.max_shortfall <= 2e-4


def test_gap_missing_ray_reports_full_shortfall():
    scen = total_power_two_user(seed=4)
    pts = make_boundary(scen, n=5)
    # sample living only on the axis of user 1: ray for user 2 uncovered
    sample = RegionSample(
        values=np.array([[3.0, 0.0]]), tags=["oracle"], fingerprint=mr.fingerprint(scen)
    )
    rep = boundary_gap(sample, pts)
    assert rep.shortfall[0] == pytest.approx(1.0)  # alpha = (0, 1) ray untouched
    assert rep.coverage[0] == 0.0


def test_gap_fingerprint_mismatch():
    scen = total_power_two_user(seed=4)
    pts = make_boundary(scen, n=3)
    sample = RegionSample(values=np.ones((1, 2)), tags=["oracle"], fingerprint="zzz")
    with pytest.raises(mr.FingerprintMismatchError):
        boundary_gap(sample, pts, traced_fingerprint=mr.fingerprint(scen))


def test_traced_points_survive_filter_with_sweep():
    scen = total_power_two_user(seed=4)
    pts = make_boundary(scen)
    sweep = mr.sweep_explicit(scen, 0.05)
    combined = np.vstack([sweep.points, [p.point for p in pts]])
    mask = pareto_mask(combined, slack=1e-4)
    assert mask[len(sweep.points):].all()


# -- export -----------------------------------------------------------------------


def sample_with_everything():
    return RegionSample(
        values=np.array([[1.0, 2.0], [2.0, 1.0]]),
        tags=["oracle", "implicit-trace"],
        fingerprint="fp",
        sinrs=np.array([[1.0, 3.0], [3.0, 1.0]]),
        c=np.array([1.0, 1.0]),
        usage=np.array([[1.0], [0.5]]),
        alpha=np.array([[0.5, 0.5], [0.7, 0.3]]),
    )


def test_export_csv(tmp_path):
    s = sample_with_everything()
    path = tmp_path / "out.csv"
    mr.export(s, "csv", path)
    text = path.read_text().splitlines()
    assert text[0].startswith("# mimoregion sample")
    assert "fingerprint=fp" in text[0]
    assert text[1] == "tag,alpha_1,alpha_2,g_1,g_2,sinr_1,sinr_2,c,usage_1"
    assert len(text) == 4


def test_export_empty_sample_header_only(tmp_path):
    s = RegionSample(values=np.empty((0, 2)), tags=[], fingerprint="fp")
    path = tmp_path / "empty.csv"
    mr.export(s, "csv", path)
    lines = path.read_text().splitlines()
    assert len(lines) == 2  # comment + header


def test_export_json_round_trip(tmp_path):
    s = sample_with_everything()
    path = tmp_path / "out.json"
    mr.export(s, "json", path)
    back = load_sample(path)
    assert np.array_equal(back.values, s.values)
    assert np.array_equal(back.sinrs, s.sinrs)
    assert np.array_equal(back.alpha, s.alpha)
    assert back.tags == s.tags
    assert back.fingerprint == s.fingerprint


def test_export_bad_format(tmp_path):
    with pytest.raises(ValueError):
        mr.export(sample_with_everything(), "xml", tmp_path / "x")


# -- pipeline CSV writers -----------------------------------------------------------


def test_sweep_csv(tmp_path, ortho_two):
    sweep = mr.sweep_explicit(ortho_two, 0.5)
    path = tmp_path / "sweep.csv"
    write_sweep_csv(sweep, path)
    lines = path.read_text().splitlines()
    assert lines[1] == "mu_1,mu_2,lambda_1,status,g_1,g_2,c,usage_1"
    assert len(lines) == 2 + len(sweep)
    assert all("valid" in ln for ln in lines[2:])


def test_boundary_csv_round_trip(tmp_path):
    scen = total_power_two_user(seed=4)
    pts = make_boundary(scen, n=5)
    path = tmp_path / "boundary.csv"
    write_boundary_csv(pts, mr.fingerprint(scen), path)
    data = read_boundary_csv(path)
    assert data["fingerprint"] == mr.fingerprint(scen)
    assert data["alpha"].shape == (5, 2)
    assert data["g"].shape == (5, 2)
    assert data["g"][2] == pytest.approx(pts[2].point)
    assert data["g_sum"] == pytest.approx([p.g_sum for p in pts])
    assert data["mu"].shape == (5, 2)
    assert np.array_equal(data["iterations"], [p.iterations for p in pts])


def test_boundary_csv_error_measure_columns(tmp_path):
    base = total_power_two_user(seed=4)
    scen = mr.Scenario(
        num_transmitters=1,
        antennas_per_transmitter=(2,),
        channels=base.channels,
        data_clusters=base.data_clusters,
        coord_clusters=base.coord_clusters,
        noise_powers=base.noise_powers,
        power_constraints=base.power_constraints,
        evm=base.evm,
        metrics=(mr.PerformanceMetric("ser4qam"),) * 2,
    )
    pts = mr.trace_boundary(scen, mr.profile_grid(2, 2), tol=1e-4)
    path = tmp_path / "ser.csv"
    write_boundary_csv(pts, mr.fingerprint(scen), path, metrics=scen.metrics)
    header = path.read_text().splitlines()[1].split(",")
    assert "err_1" in header and "err_2" in header
    import csv as _csv

    with open(path) as f:
        f.readline()
        rows = list(_csv.DictReader(f))
    # raw error complements the maximized value: g = 0.75 - err
    for row, p in zip(rows, pts):
        for k in range(2):
            if row[f"err_{k + 1}"]:
                err = float(row[f"err_{k + 1}"])
                assert err == pytest.approx(0.75 - p.point[k], abs=1e-12)
