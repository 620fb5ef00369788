"""Brute-force region sampling for desk-scale cross-checks.

Rank-one strategies are scaled onto the feasibility boundary (tightest
constraint met with equality) and evaluated; the resulting cloud must stay
inside a traced boundary and, at sufficient sample counts, reach close to it.

Direction sampling mixes isotropic draws with stratified samples of the arc
between each user's matched-filter and zero-forcing directions: two-user
boundary beams provably live on that arc, so covering it densely is what
lets a 1e5-sample cloud certify a boundary to a few percent instead of ~10%.
The arcs come from the channel vectors alone, never from the solver outputs
they are used to check.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .explicit import simplex_grid
from .region import FingerprintMismatchError, RegionSample, ray_coverage
from .scenario import Scenario, fingerprint, sinr_batch, usage_batch

_EVAL_CHUNK = 16384

#: smallest power fraction in the two-user ratio grid
_RATIO_MIN = 0.003

#: fraction of each direction list drawn from the matched-filter/zero-forcing arc
_ARC_FRACTION = 0.8


@dataclass(frozen=True)
class OracleConfig:
    """Sampling plan for the brute-force cloud.

    power_grid controls the density of the power-split grid (for two users,
    a symmetric geometric ratio list with 3 * power_grid points per side;
    for more users, a uniform simplex grid with power_grid divisions).
    mode 'angle-grid' replaces the random direction lists with deterministic
    arc grids (two-user scenarios only).
    """

    num_samples: int = 100_000
    seed: int = 0
    power_grid: int = 8
    mode: str = "random-directions"

    def __post_init__(self):
        if self.num_samples < 1:
            raise ValueError("num_samples must be >= 1")
        if self.power_grid < 1:
            raise ValueError("power_grid must be >= 1")
        if self.mode not in ("random-directions", "angle-grid"):
            raise ValueError(f"unknown oracle mode {self.mode!r}")


def _power_splits(k_r: int, power_grid: int) -> np.ndarray:
    """Power-direction grid on the simplex (scaled onto c = 1 later)."""
    if k_r == 2:
        u = np.geomspace(_RATIO_MIN, 1.0, 3 * power_grid)
        r = u / (1.0 + u)
        ratios = np.unique(np.concatenate([r, 1.0 - r]))
        return np.stack([ratios, 1.0 - ratios], axis=1)
    return simplex_grid(k_r, power_grid)


def _arc_basis(scenario: Scenario, k: int):
    """Matched-filter direction and the in-plane unit vector toward zero forcing."""
    sup = scenario.support(k)
    hk = scenario.channels[k][sup]
    norm = np.linalg.norm(hk)
    if sup.size == 0 or norm == 0:
        return sup, None, None
    u_mrt = hk / norm
    others = [
        (scenario.channels[j] * scenario.selection.coord_mask[j])[sup]
        for j in range(scenario.num_users)
        if j != k
    ]
    others = [o for o in others if np.linalg.norm(o) > 0]
    if others:
        basis, _ = np.linalg.qr(np.stack(others, axis=1))
        zf = hk - basis @ (basis.conj().T @ hk)
    else:
        zf = hk
    if np.linalg.norm(zf) < 1e-12 * norm:
        return sup, u_mrt, None
    u_zf = zf / np.linalg.norm(zf)
    perp = u_zf - np.vdot(u_mrt, u_zf) * u_mrt
    pn = np.linalg.norm(perp)
    return sup, u_mrt, (perp / pn if pn > 1e-12 else None)


def _direction_list(scenario: Scenario, k: int, count: int, rng) -> np.ndarray:
    """Mixed arc/isotropic unit beams on user k's serving antennas.

    The exact matched-filter direction is always entry 0 (and the exact arc
    far end is included when it exists), so classical corner strategies are
    never lost to stratification offsets.
    """
    n = scenario.num_antennas
    sup, u_mrt, perp = _arc_basis(scenario, k)
    out = np.zeros((count, n), dtype=complex)
    if sup.size == 0:
        out[:, 0] = 1.0
        return out
    if u_mrt is None:
        out[:, sup[0]] = 1.0
        return out

    beams = [u_mrt[None, :]]
    if perp is not None and count > 1:
        beams.append(perp[None, :])
        n_arc = int(count * _ARC_FRACTION) if rng is not None else count
        n_arc = min(max(n_arc - 2, 0), count - 2)
        if n_arc:
            offs = rng.random(n_arc) if rng is not None else np.full(n_arc, 0.5)
            psi = (np.arange(n_arc) + offs) * (np.pi / 2) / n_arc
            beams.append(
                np.cos(psi)[:, None] * u_mrt[None, :] + np.sin(psi)[:, None] * perp[None, :]
            )
    n_iso = count - sum(b.shape[0] for b in beams)
    if n_iso > 0:
        if rng is None:
            beams.append(np.repeat(u_mrt[None, :], n_iso, axis=0))
        else:
            iso = rng.standard_normal((n_iso, sup.size)) + 1j * rng.standard_normal(
                (n_iso, sup.size)
            )
            iso /= np.linalg.norm(iso, axis=1, keepdims=True)
            beams.append(iso)
    restricted = np.concatenate(beams)[:count]
    out[:, sup] = restricted
    return out


def _mrt_directions(scenario: Scenario) -> np.ndarray:
    w = np.zeros((scenario.num_users, scenario.num_antennas), dtype=complex)
    for k in range(scenario.num_users):
        sup = scenario.support(k)
        hk = scenario.masked_channel(k)
        norm = np.linalg.norm(hk)
        if norm > 0:
            w[k] = hk / norm
        elif sup.size:
            w[k, sup[0]] = 1.0
        else:
            w[k, 0] = 1.0
    return w


def _candidate_streams(scenario: Scenario, config: OracleConfig):
    """Yield (directions, powers) blocks covering the whole candidate plan."""
    k_r = scenario.num_users
    splits = _power_splits(k_r, config.power_grid)
    n_splits = splits.shape[0]
    rng = None if config.mode == "angle-grid" else np.random.default_rng(config.seed)
    if config.mode == "angle-grid" and k_r != 2:
        raise ValueError("angle-grid mode supports exactly two users")

    if k_r == 2:
        n_b = max(1, int(np.sqrt(config.num_samples / n_splits)))
        lists = [_direction_list(scenario, k, n_b, rng) for k in range(2)]
        ii, jj = np.meshgrid(np.arange(n_b), np.arange(n_b), indexing="ij")
        pairs = np.stack([lists[0][ii.ravel()], lists[1][jj.ravel()]], axis=1)
        step = max(1, _EVAL_CHUNK // n_splits)
        for i0 in range(0, pairs.shape[0], step):
            blk = pairs[i0 : i0 + step]
            yield (
                blk.repeat(n_splits, axis=0),
                np.tile(splits, (blk.shape[0], 1)),
            )
    else:
        n_tuples = max(1, config.num_samples // n_splits)
        step = max(1, _EVAL_CHUNK // n_splits)
        for i0 in range(0, n_tuples, step):
            cnt = min(step, n_tuples - i0)
            dirs = np.stack(
                [_direction_list(scenario, k, cnt, rng) for k in range(k_r)], axis=1
            )
            yield (
                dirs.repeat(n_splits, axis=0),
                np.tile(splits, (cnt, 1)),
            )

    # axis candidates: single-user matched filter at full budget
    mrt = _mrt_directions(scenario)
    yield (
        np.repeat(mrt[None, :, :], k_r, axis=0),
        np.eye(k_r),
    )


def random_cloud(scenario: Scenario, config: OracleConfig) -> RegionSample:
    """Sample rank-one strategies, scale each onto the feasibility boundary.

    Every candidate is divided by its tightest constraint-usage ratio so it
    lands on c = 1; single-user matched-filter candidates are always
    injected so the axis points are covered. Deterministic in config.seed.
    """
    values = []
    sinrs = []
    usages = []
    for w, p in _candidate_streams(scenario, config):
        u = usage_batch(scenario, w, p)
        c = u.max(axis=1)
        keep = c > 0
        w, p, u, c = w[keep], p[keep], u[keep], c[keep]
        p = p / c[:, None]
        s = sinr_batch(scenario, w, p)
        v = np.empty_like(s)
        for k, metric in enumerate(scenario.metrics):
            v[:, k] = metric.value(np.maximum(s[:, k], 0.0))
        values.append(v)
        sinrs.append(s)
        usages.append(u / c[:, None])

    values = np.concatenate(values)
    n_rows = values.shape[0]
    return RegionSample(
        values=values,
        tags=["oracle"] * n_rows,
        fingerprint=fingerprint(scenario),
        sinrs=np.concatenate(sinrs),
        c=np.ones(n_rows),
        usage=np.concatenate(usages),
    )


@dataclass(frozen=True)
class DominanceReport:
    """Ray-wise comparison between an oracle cloud and a traced boundary."""

    worst_violation: float  # how far the cloud sticks out beyond the boundary
    max_shortfall: float  # how far the cloud front falls short of the boundary
    per_ray_coverage: np.ndarray
    per_ray_g_sum: np.ndarray
    num_points: int

    def ok(self, tol: float) -> bool:
        return self.worst_violation <= tol


def check_dominance(
    cloud: RegionSample,
    boundary,
    tol: float = 1e-3,
    *,
    boundary_fingerprint: str | None = None,
) -> DominanceReport:
    """Verify no cloud point beats the traced boundary along any traced ray.

    Violations are certified only on rays with all-positive profiles (a point
    beyond such a ray strictly dominates the traced point in every
    component). Also reports how closely the cloud front tracks the boundary.
    """
    boundary = list(boundary)
    if not boundary:
        raise ValueError("need at least one boundary point")
    if boundary_fingerprint is not None and boundary_fingerprint != cloud.fingerprint:
        raise FingerprintMismatchError("cloud and boundary come from different scenarios")
    alphas = np.array([p.profile.alpha for p in boundary])
    g_sums = np.array([p.g_sum for p in boundary])
    coverage = ray_coverage(cloud.values, alphas)
    ok = g_sums > 0
    full = np.all(alphas > 0, axis=1) & ok
    violation = 0.0
    if np.any(full):
        violation = float(np.maximum(coverage[full] / g_sums[full] - 1.0, 0.0).max())
    shortfall = 0.0
    if np.any(ok):
        shortfall = float(np.maximum(1.0 - coverage[ok] / g_sums[ok], 0.0).max())
    return DominanceReport(
        worst_violation=violation,
        max_shortfall=shortfall,
        per_ray_coverage=coverage,
        per_ray_g_sum=g_sums,
        num_points=len(cloud),
    )
