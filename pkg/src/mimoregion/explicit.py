"""Closed-form parametrized transmit strategies and the parameter-grid sweep.

The parametrization maps a per-user priority vector mu and a per-constraint
weight vector lam to beamforming directions, attainable SINR levels gamma, a
power-coupling matrix and the matching power allocation. A feasibility
rescaling turns any suggested strategy into a feasible one.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from itertools import combinations

import numpy as np

from .scenario import (
    BeamformingStrategy,
    Scenario,
    constraint_usage,
    sinr_all,
    zero_strategy,
)

#: singular values below this (relative to the largest) are treated as zero
PINV_RTOL = 1e-10

#: powers in [-NEG_POWER_TOL, 0) are clamped to zero; below that the point is invalid
NEG_POWER_TOL = 1e-9

#: relative residual of the power coupling system above this flags singular coupling
COUPLING_RESIDUAL_TOL = 1e-6

STATUS_VALID = 0
STATUS_INVALID_POWERS = 1
STATUS_SINGULAR_COUPLING = 2
STATUS_NAMES = ("valid", "invalid-powers", "singular-coupling")


class InvalidStrategyError(RuntimeError):
    """The parameter point does not define a usable strategy."""


class GridTooLargeError(ValueError):
    """The requested sweep grid exceeds the configured point cap."""


@dataclass(frozen=True)
class ExplicitParams:
    """Parameter point (mu, lam) of the closed-form strategy.

    Entries must be nonnegative with at least one positive lam entry. Each
    vector is normalized to unit sum on entry (an all-zero mu is kept as the
    degenerate everyone-inactive edge).
    """

    mu: np.ndarray
    lam: np.ndarray

    def __post_init__(self):
        mu = np.asarray(self.mu, dtype=float).copy()
        lam = np.asarray(self.lam, dtype=float).copy()
        if mu.ndim != 1 or lam.ndim != 1:
            raise ValueError("mu and lam must be vectors")
        if np.any(mu < 0) or np.any(lam < 0):
            raise ValueError("parameters must be nonnegative")
        if lam.sum() <= 0:
            raise ValueError("at least one lam entry must be positive")
        if mu.sum() > 0:
            mu /= mu.sum()
        lam /= lam.sum()
        mu.setflags(write=False)
        lam.setflags(write=False)
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "lam", lam)


@dataclass(frozen=True)
class ClosedFormResult:
    """Outcome of the closed-form construction at one parameter point.

    strategy is None unless status == 'valid'. gammas holds the attainable
    SINR levels, coupling the K_r x K_r power coupling matrix (beam index i,
    equation index j).
    """

    strategy: BeamformingStrategy | None
    gammas: np.ndarray
    coupling: np.ndarray
    status: str
    powers_raw: np.ndarray

    @property
    def valid(self) -> bool:
        return self.status == "valid"


# -- per-scenario precomputation ----------------------------------------------


class _Blocks:
    """Support-restricted building blocks reused across parameter points."""

    def __init__(self, scenario: Scenario):
        sel = scenario.selection
        ch = scenario.channels
        k_r, n = ch.shape
        kap2 = scenario.evm**2
        self.k_r = k_r
        self.n = n
        self.sigma2 = scenario.noise_powers
        self.supports = [scenario.support(k) for k in range(k_r)]
        self.hhat = [ch[k][self.supports[k]] for k in range(k_r)]

        # interference profile of source kb seen anywhere: g g^H + diag(kappa^2 |g|^2)
        full = np.empty((k_r, n, n), dtype=complex)
        for kb in range(k_r):
            gk = ch[kb] * sel.coord_mask[kb]
            full[kb] = np.outer(gk, gk.conj()) + np.diag(kap2 * np.abs(gk) ** 2)
        # restricted to each target user's support, divided by the source noise
        self.rank1 = [
            np.ascontiguousarray(full[:, s[:, None], s[None, :]]) / self.sigma2[:, None, None]
            for s in self.supports
        ]
        # power constraint blocks, pre-divided by their limits
        self.qblocks = [
            np.stack([con.mats[k][s[:, None], s[None, :]] / con.q for con in scenario.power_constraints])
            for k, s in enumerate(self.supports)
        ]
        # coupling rows: receiver j observing the support of beam i
        recv = ch.conj() * sel.coord_mask
        dist = (np.abs(ch) ** 2) * sel.coord_mask * kap2[None, :]
        self.amp_rows = [[recv[j][self.supports[i]] for i in range(k_r)] for j in range(k_r)]
        self.dist_rows = [[dist[j][self.supports[i]] for i in range(k_r)] for j in range(k_r)]


_BLOCK_CACHE: dict[int, tuple] = {}


def _blocks(scenario: Scenario) -> _Blocks:
    key = id(scenario)
    hit = _BLOCK_CACHE.get(key)
    if hit is not None and hit[0] is scenario:
        return hit[1]
    blocks = _Blocks(scenario)
    _BLOCK_CACHE.clear()
    _BLOCK_CACHE[key] = (scenario, blocks)
    return blocks


def classify_power_solution(powers: np.ndarray, rhs: np.ndarray, resid: np.ndarray):
    """Status codes and clamped powers for a batch of coupling-system solves.

    Tiny negative powers (down to -NEG_POWER_TOL) are rounding noise and are
    clamped to zero; anything below marks the point invalid-powers. A large
    relative residual of the linear system marks singular-coupling.
    """
    scale = np.maximum(np.abs(rhs).max(axis=1), 1e-300)
    status = np.zeros(powers.shape[0], dtype=np.int8)
    status[resid > COUPLING_RESIDUAL_TOL * scale] = STATUS_SINGULAR_COUPLING
    neg = powers.min(axis=1) < -NEG_POWER_TOL
    status[neg & (status == 0)] = STATUS_INVALID_POWERS
    clamped = np.where((powers < 0) & (powers >= -NEG_POWER_TOL), 0.0, powers)
    return status, clamped


# -- batched kernel -----------------------------------------------------------


def _closed_form_batch(scenario: Scenario, mu: np.ndarray, lam: np.ndarray):
    """Evaluate the closed-form construction at G parameter points at once.

    mu is (G, K_r), lam is (G, L); both raw (no normalization applied here).
    Returns a dict with per-user direction arrays plus gamma, coupling,
    powers and status per point.
    """
    bl = _blocks(scenario)
    gsz, k_r = mu.shape
    coef = mu / bl.sigma2[None, :]

    dirs = []
    gammas = np.zeros((gsz, k_r))
    active = np.zeros((gsz, k_r), dtype=bool)
    for k in range(k_r):
        hk = bl.hhat[k]
        m = hk.size
        if m == 0 or np.linalg.norm(hk) == 0:
            dirs.append(np.zeros((gsz, m), dtype=complex))
            continue
        psi = np.einsum("gj,jab->gab", coef, bl.rank1[k], optimize=True)
        psi += np.einsum("gl,lab->gab", lam, bl.qblocks[k], optimize=True)
        w_raw = np.linalg.pinv(psi, rtol=PINV_RTOL, hermitian=True) @ hk
        norms = np.linalg.norm(w_raw, axis=1)
        ok = (coef[:, k] > 0) & (norms > 1e-12)
        w = np.where(ok[:, None], w_raw / np.where(norms > 1e-12, norms, 1.0)[:, None],
                     (hk / np.linalg.norm(hk))[None, :])
        dirs.append(w)
        b = psi - coef[:, k, None, None] * np.outer(hk, hk.conj())[None, :, :]
        binv_h = np.linalg.pinv(b, rtol=PINV_RTOL, hermitian=True) @ hk
        gam = coef[:, k] * (hk.conj() @ binv_h.T).real
        gammas[:, k] = np.where(ok, gam, 0.0)
        active[:, k] = ok

    # power coupling system, one equation per active user
    coupling = np.zeros((gsz, k_r, k_r))
    for i in range(k_r):
        wi = dirs[i]
        wi2 = np.abs(wi) ** 2
        for j in range(k_r):
            amp2 = np.abs(wi @ bl.amp_rows[j][i]) ** 2 if bl.amp_rows[j][i].size else np.zeros(gsz)
            dis = wi2 @ bl.dist_rows[j][i] if bl.dist_rows[j][i].size else np.zeros(gsz)
            if i == j:
                coupling[:, i, j] = amp2 - gammas[:, i] * dis
            else:
                coupling[:, i, j] = -gammas[:, j] * (amp2 + dis)

    msys = coupling.copy()
    rhs = gammas * bl.sigma2[None, :]
    for k in range(k_r):
        off = ~active[:, k]
        msys[off, k, :] = 0.0
        msys[off, :, k] = 0.0
        msys[off, k, k] = 1.0
        rhs[off, k] = 0.0

    powers = np.einsum("gj,gji->gi", rhs, np.linalg.pinv(msys))
    resid = np.abs(np.einsum("gi,gij->gj", powers, msys) - rhs).max(axis=1)
    status, powers_clamped = classify_power_solution(powers, rhs, resid)
    powers_clamped[~active] = 0.0

    return {
        "dirs": dirs,
        "gammas": gammas,
        "coupling": coupling,
        "powers": powers_clamped,
        "status": status,
        "active": active,
        "supports": bl.supports,
    }


def _expand_dirs(batch, k_r: int, n: int, g_idx: int) -> np.ndarray:
    w = np.zeros((k_r, n), dtype=complex)
    for k in range(k_r):
        sup = batch["supports"][k]
        if sup.size:
            w[k, sup] = batch["dirs"][k][g_idx]
        else:
            w[k, 0] = 1.0
    return w


def _gamma_batch(scenario: Scenario, mu: np.ndarray, lam: np.ndarray) -> np.ndarray:
    """Attainable SINR levels only (used by the derivative sign checks)."""
    bl = _blocks(scenario)
    gsz, k_r = mu.shape
    coef = mu / bl.sigma2[None, :]
    gammas = np.zeros((gsz, k_r))
    for k in range(k_r):
        hk = bl.hhat[k]
        if hk.size == 0 or np.linalg.norm(hk) == 0:
            continue
        psi = np.einsum("gj,jab->gab", coef, bl.rank1[k], optimize=True)
        psi += np.einsum("gl,lab->gab", lam, bl.qblocks[k], optimize=True)
        b = psi - coef[:, k, None, None] * np.outer(hk, hk.conj())[None, :, :]
        binv_h = np.linalg.pinv(b, rtol=PINV_RTOL, hermitian=True) @ hk
        gammas[:, k] = np.where(coef[:, k] > 0, coef[:, k] * (hk.conj() @ binv_h.T).real, 0.0)
    return gammas


# -- public operations ---------------------------------------------------------


def psi_matrix(scenario: Scenario, params: ExplicitParams, k: int) -> np.ndarray:
    """Direction-shaping matrix of user k, restricted to its serving antennas."""
    bl = _blocks(scenario)
    coef = params.mu / bl.sigma2
    psi = np.einsum("j,jab->ab", coef, bl.rank1[k])
    psi += np.einsum("l,lab->ab", params.lam, bl.qblocks[k])
    return psi


def closed_form_strategy(scenario: Scenario, params: ExplicitParams) -> ClosedFormResult:
    """Closed-form strategy suggestion at one parameter point.

    Users with mu_k = 0 (or a channel orthogonal to their serving subspace)
    come out inactive: gamma_k = 0, p_k = 0, and they are dropped from the
    power coupling system. The result's strategy is None unless the power
    system produced nonnegative powers with a small residual.
    """
    mu = params.mu[None, :]
    lam = params.lam[None, :]
    batch = _closed_form_batch(scenario, mu, lam)
    status = STATUS_NAMES[batch["status"][0]]
    strategy = None
    if status == "valid":
        w = _expand_dirs(batch, scenario.num_users, scenario.num_antennas, 0)
        strategy = BeamformingStrategy(w, batch["powers"][0])
    return ClosedFormResult(
        strategy=strategy,
        gammas=batch["gammas"][0],
        coupling=batch["coupling"][0],
        status=status,
        powers_raw=batch["powers"][0],
    )


def feasible_strategy(scenario: Scenario, params: ExplicitParams) -> BeamformingStrategy:
    """Feasibility-rescaled strategy: powers divided by c when c > 1.

    c is the largest constraint usage ratio of the suggested strategy. The
    strategy is never scaled up (c < 1 inputs are legitimate interior
    points); a zero strategy passes through unchanged.
    """
    res = closed_form_strategy(scenario, params)
    if not res.valid:
        raise InvalidStrategyError(f"parameter point is {res.status}")
    _, c = constraint_usage(scenario, res.strategy)
    if c > 1.0:
        return res.strategy.scaled(1.0 / c)
    return res.strategy


@dataclass(frozen=True)
class CorollarySignReport:
    """Finite-difference partials of gamma and their sign classification."""

    dgamma_dmu: np.ndarray  # (K_r, K_r), entry [k, kb] = d gamma_k / d mu_kb
    dgamma_dlam: np.ndarray  # (K_r, L)
    gammas: np.ndarray
    tol: np.ndarray
    own_ok: np.ndarray
    cross_ok: np.ndarray
    lam_ok: np.ndarray

    @property
    def all_ok(self) -> bool:
        return bool(self.own_ok.all() and self.cross_ok.all() and self.lam_ok.all())


def derivative_sign_check(
    scenario: Scenario, params: ExplicitParams, step: float = 1e-5
) -> CorollarySignReport:
    """Check the priority/constraint derivative signs at a parameter point.

    Partials are taken without simplex renormalization (raw coordinates).
    Central differences with a relative step; one-sided at zero entries.
    """
    k_r = scenario.num_users
    n_l = scenario.num_constraints
    theta = np.concatenate([params.mu, params.lam])
    if step <= 0:
        raise ValueError("step must be positive")
    deltas = np.where(theta > 0, step * theta, step)
    if np.any(deltas < 1e-12 * max(theta.max(), 1.0)):
        raise ValueError("finite-difference step too small relative to machine precision")

    rows = []
    one_sided = []
    for j, d in enumerate(deltas):
        hi = theta.copy()
        hi[j] += d
        lo = theta.copy()
        lo[j] -= d
        if lo[j] < 0:
            lo = theta.copy()
            one_sided.append(True)
        else:
            one_sided.append(False)
        rows.append(hi)
        rows.append(lo)
    grid = np.asarray(rows)
    gam = _gamma_batch(scenario, grid[:, :k_r], grid[:, k_r:])

    derivs = np.empty((k_r + n_l, k_r))
    for j, d in enumerate(deltas):
        denom = d if one_sided[j] else 2.0 * d
        derivs[j] = (gam[2 * j] - gam[2 * j + 1]) / denom

    base = _gamma_batch(scenario, params.mu[None, :], params.lam[None, :])[0]
    tol = 1e-6 * np.abs(base)
    dmu = derivs[:k_r].T  # [k, kb]
    dlam = derivs[k_r:].T  # [k, l]
    claim = base > 0  # inactive users make no sign claim
    own = np.diag(dmu) >= -tol
    cross = np.ones((k_r, k_r), dtype=bool)
    for k in range(k_r):
        for kb in range(k_r):
            if k != kb and claim[k]:
                cross[k, kb] = dmu[k, kb] <= tol[k]
    lam_ok = np.ones((k_r, n_l), dtype=bool)
    for k in range(k_r):
        if claim[k]:
            lam_ok[k] = dlam[k] <= tol[k]
    return CorollarySignReport(
        dgamma_dmu=dmu,
        dgamma_dlam=dlam,
        gammas=base,
        tol=tol,
        own_ok=own | ~claim,
        cross_ok=cross,
        lam_ok=lam_ok,
    )


# -- parameter grid sweep -------------------------------------------------------


def simplex_grid(parts: int, steps: int) -> np.ndarray:
    """All compositions of `steps` into `parts` nonnegative integers, as unit-sum rows."""
    if parts == 1:
        return np.ones((1, 1))
    out = []
    # stars and bars: choose distinct bar slots among steps + parts - 1
    for dividers in combinations(range(steps + parts - 1), parts - 1):
        prev = -1
        row = []
        for d in dividers:
            row.append(d - prev - 1)
            prev = d
        row.append(steps + parts - 2 - prev)
        out.append(row)
    return np.asarray(out, dtype=float) / steps


def _grid_sizes(parts: int, steps: int) -> int:
    return math.comb(steps + parts - 1, parts - 1)


@dataclass
class ExplicitSweep:
    """Columnar result of a parameter-grid sweep (one row per grid point)."""

    mu: np.ndarray
    lam: np.ndarray
    status: np.ndarray
    values: np.ndarray
    sinrs: np.ndarray
    c: np.ndarray
    usage: np.ndarray
    powers: np.ndarray
    grid_step: float
    scenario_fingerprint: str
    _scenario: Scenario

    def __len__(self) -> int:
        return self.status.shape[0]

    @property
    def valid_mask(self) -> np.ndarray:
        return self.status == STATUS_VALID

    @property
    def num_invalid(self) -> int:
        return int((~self.valid_mask).sum())

    @property
    def points(self) -> np.ndarray:
        """Performance vectors of the valid grid points."""
        return self.values[self.valid_mask]

    def __iter__(self):
        """Yield (params, point, strategy) per valid grid point.

        Strategies are recomputed on demand; large sweeps only store the
        columnar summary.
        """
        for i in np.flatnonzero(self.valid_mask):
            params = ExplicitParams(self.mu[i], self.lam[i])
            strategy = feasible_strategy(self._scenario, params)
            yield params, self.values[i], strategy

    def write_csv(self, path):
        from .region import write_sweep_csv

        write_sweep_csv(self, path)


def sweep_explicit(
    scenario: Scenario,
    grid_step: float,
    *,
    point_cap: int = 2_000_000,
    chunk: int = 65536,
) -> ExplicitSweep:
    """Evaluate the feasibility-rescaled closed-form strategy on a simplex grid.

    The grid is the product of the mu simplex and the lam simplex sampled at
    compositions of ceil(1/grid_step), guaranteeing exact unit sums. Invalid
    parameter points are kept as rows (status column) with NaN performance.
    """
    if not 0 < grid_step <= 1:
        raise ValueError("grid_step must be in (0, 1]")
    k_r = scenario.num_users
    n_l = scenario.num_constraints
    steps = math.ceil(round(1.0 / grid_step, 9))
    n_mu = _grid_sizes(k_r, steps)
    n_lam = _grid_sizes(n_l, steps)
    total = n_mu * n_lam
    if total > point_cap:
        raise GridTooLargeError(
            f"grid of {total} points exceeds cap {point_cap}; "
            "increase point_cap or coarsen grid_step"
        )
    mu_grid = simplex_grid(k_r, steps)
    lam_grid = simplex_grid(n_l, steps)

    from .scenario import fingerprint

    cols = {
        "mu": np.empty((total, k_r)),
        "lam": np.empty((total, n_l)),
        "status": np.empty(total, dtype=np.int8),
        "values": np.full((total, k_r), np.nan),
        "sinrs": np.full((total, k_r), np.nan),
        "c": np.full(total, np.nan),
        "usage": np.full((total, n_l), np.nan),
        "powers": np.full((total, k_r), np.nan),
    }

    for start in range(0, total, chunk):
        idx = np.arange(start, min(start + chunk, total))
        mu = mu_grid[idx // n_lam]
        lam = lam_grid[idx % n_lam]
        batch = _closed_form_batch(scenario, mu, lam)
        res = _evaluate_batch(scenario, batch)
        cols["mu"][idx] = mu
        cols["lam"][idx] = lam
        cols["status"][idx] = batch["status"]
        for name in ("values", "sinrs", "c", "usage", "powers"):
            cols[name][idx] = res[name]

    return ExplicitSweep(
        grid_step=grid_step,
        scenario_fingerprint=fingerprint(scenario),
        _scenario=scenario,
        **cols,
    )


def _evaluate_batch(scenario: Scenario, batch) -> dict:
    """Feasibility-rescale and evaluate a strategy batch (NaN for invalid rows)."""
    from .scenario import sinr_batch, usage_batch

    gsz = batch["status"].shape[0]
    k_r, n = scenario.channels.shape
    valid = batch["status"] == STATUS_VALID

    w = np.zeros((gsz, k_r, n), dtype=complex)
    for k in range(k_r):
        sup = batch["supports"][k]
        if sup.size:
            w[:, k, sup] = batch["dirs"][k]
    p = batch["powers"]

    usage = usage_batch(scenario, w, p)
    c = usage.max(axis=1)
    scale = 1.0 / np.maximum(c, 1.0)
    p_feas = p * scale[:, None]
    usage_feas = usage * scale[:, None]

    sinr = sinr_batch(scenario, w, p_feas)
    values = np.empty((gsz, k_r))
    for k, metric in enumerate(scenario.metrics):
        values[:, k] = metric.value(np.maximum(sinr[:, k], 0.0))

    return {
        "values": np.where(valid[:, None], values, np.nan),
        "sinrs": np.where(valid[:, None], sinr, np.nan),
        "c": np.where(valid, c, np.nan),
        "usage": np.where(valid[:, None], usage_feas, np.nan),
        "powers": np.where(valid[:, None], p_feas, np.nan),
    }
