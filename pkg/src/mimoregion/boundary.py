"""Fairness-profile boundary search by bisection over convex feasibility checks.

A fairness profile alpha fixes the ray from the origin along which the outer
boundary of the performance region is searched. Each candidate sum value is
checked by one second-order cone feasibility solve; the bracket halves until
it is narrower than the requested tolerance.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace

import numpy as np

from .conic import SocpAssembler, solve
from .explicit import ExplicitParams, simplex_grid
from .metrics import MetricRangeError
from .scenario import (
    BeamformingStrategy,
    Scenario,
    constraint_usage,
    evaluate_point,
    sinr_all,
    zero_strategy,
)

#: profile entries below this are treated as exactly zero (user excluded)
ALPHA_ACTIVE_TOL = 1e-9

#: eigenvalues above this (relative) count as strictly positive in the bound
_EIG_POS_TOL = 1e-9

#: bisection safety cap
MAX_BISECTION_ITERATIONS = 60


class DualExtractionError(RuntimeError):
    """Solver duals do not form a usable parameter certificate."""


@dataclass(frozen=True)
class FairnessProfile:
    """Simplex vector alpha: target portions of the sum performance."""

    alpha: np.ndarray

    def __post_init__(self):
        a = np.asarray(self.alpha, dtype=float).copy()
        if a.ndim != 1 or a.size < 1:
            raise ValueError("alpha must be a vector")
        if np.any(a < 0):
            raise ValueError("alpha entries must be nonnegative")
        if abs(a.sum() - 1.0) > 1e-12:
            raise ValueError("alpha must have unit L1 norm")
        a.setflags(write=False)
        object.__setattr__(self, "alpha", a)

    @property
    def active(self) -> np.ndarray:
        return self.alpha >= ALPHA_ACTIVE_TOL


def profile_grid(num_users: int, divisions: int) -> list:
    """Uniform simplex grid of fairness profiles (divisions+1 per edge)."""
    return [FairnessProfile(row) for row in simplex_grid(num_users, divisions)]


@dataclass(frozen=True)
class DualCertificate:
    """Normalizable dual variables attached to a boundary point."""

    mu: np.ndarray
    lam: np.ndarray


@dataclass(frozen=True)
class BoundaryPoint:
    """One traced outer-boundary point and its attaining strategy."""

    profile: FairnessProfile
    point: np.ndarray
    g_sum: float
    strategy: BeamformingStrategy
    duals: DualCertificate | None
    iterations: int
    bracket_width: float
    sinrs: np.ndarray
    targets: np.ndarray
    usage: np.ndarray
    dominated: bool = False
    warnings: tuple = ()


def g_max_bound(scenario: Scenario, profile: FairnessProfile) -> float:
    """Upper bound on the attainable sum value along any profile.

    Sums each user's performance at the power-bound SINR, where the per-user
    power bound comes from the smallest strictly positive eigenvalue of the
    support-restricted constraint matrices (largest such value over the
    constraints, which is the tightest of the valid single-constraint
    bounds).
    """
    if profile.alpha.size != scenario.num_users:
        raise ValueError("profile size does not match the scenario")
    total = 0.0
    for k in range(scenario.num_users):
        sup = scenario.support(k)
        hk = scenario.channels[k][sup]
        h2 = float(np.vdot(hk, hk).real)
        if sup.size == 0 or h2 == 0.0:
            continue
        m = sup.size
        nu = 0.0
        for con in scenario.power_constraints:
            block = con.mats[k][sup[:, None], sup[None, :]]
            vals = np.linalg.eigvalsh(block)
            pos = vals[vals > _EIG_POS_TOL * max(vals.max(initial=0.0), 1e-300)]
            if pos.size:
                nu = max(nu, float(pos.min()) / (con.q * m))
        if nu <= 0.0:
            raise RuntimeError(f"no constraint bounds the power of user {k}")
        total += scenario.metrics[k].value(h2 / (nu * scenario.noise_powers[k]))
    return float(total)


def _strategy_from_beamformers(scenario: Scenario, v: np.ndarray) -> BeamformingStrategy:
    base = zero_strategy(scenario)
    w = np.array(base.directions)
    p = np.zeros(scenario.num_users)
    for k in range(scenario.num_users):
        norm = np.linalg.norm(v[k])
        if norm > 0:
            w[k] = v[k] / norm
            p[k] = norm**2
    return BeamformingStrategy(w, p)


def _power_refit(scenario: Scenario, strategy: BeamformingStrategy, targets: np.ndarray):
    """Re-solve powers for the achieved directions so SINR equalities hold exactly."""
    sel = scenario.selection
    ch = scenario.channels
    k_r = scenario.num_users
    active = targets > 0
    w = strategy.directions * sel.data_mask
    recv = ch.conj() * sel.coord_mask
    kap2 = scenario.evm**2
    m = np.zeros((k_r, k_r))
    for i in range(k_r):
        for j in range(k_r):
            amp2 = abs(np.dot(recv[j], w[i])) ** 2
            dis = float((np.abs(ch[j]) ** 2 * sel.coord_mask[j] * kap2) @ (np.abs(w[i]) ** 2))
            if i == j:
                m[i, j] = amp2 - targets[i] * dis
            else:
                m[i, j] = -targets[j] * (amp2 + dis)
    rhs = targets * scenario.noise_powers
    for k in np.flatnonzero(~active):
        m[k, :] = 0.0
        m[:, k] = 0.0
        m[k, k] = 1.0
        rhs[k] = 0.0
    p = rhs @ np.linalg.pinv(m)
    if p.min(initial=0.0) < -1e-9:
        return None
    p = np.clip(p, 0.0, None)
    cand = BeamformingStrategy(strategy.directions, p)
    _, c = constraint_usage(scenario, cand)
    if c > 1.0 + 1e-7:
        return None
    if c > 1.0:  # shave off solve roundoff; moves the SINRs by O(c - 1)
        cand = cand.scaled(1.0 / c)
    return cand


#: the final certificate is polished until its power margin is this close to 1
POLISH_MARGIN_TOL = 1e-6


def _targets_for(scenario: Scenario, profile: FairnessProfile, g_value: float):
    """Per-user SINR targets for one candidate sum value (None if unattainable)."""
    targets = np.zeros(scenario.num_users)
    for k in np.flatnonzero(profile.active):
        try:
            targets[k] = scenario.metrics[k].inverse(profile.alpha[k] * g_value)
        except MetricRangeError:
            return None
    return targets


def _polish_certificate(scenario, assembler, backend, profile, lo, hi, best, best_targets):
    """Move the certificate solve to power margin 1 inside the final bracket.

    Bisection converges in performance units; for saturating metrics a tiny
    performance bracket can still span a wide SINR range, leaving the last
    feasible solve well inside the power budget (margin < 1) where the dual
    normalization identities do not apply. The margin is monotone in the
    candidate sum value (and blows up where a target saturates its metric),
    so secant steps with a bisection fallback land a feasible solve with
    margin within POLISH_MARGIN_TOL of 1.
    """
    g_lo, t_lo = lo, best.margin
    g_up = hi  # invariant: the margin-1 crossing lies in [g_lo, g_up)
    t_up = None  # margin at g_up when known and finite
    for _ in range(16):
        if abs(t_lo - 1.0) <= POLISH_MARGIN_TOL:
            break
        if t_up is not None and t_up > max(t_lo, 1.0):
            g_new = g_lo + (g_up - g_lo) * (1.0 - t_lo) / (t_up - t_lo)
            span = g_up - g_lo
            g_new = min(max(g_new, g_lo + 0.02 * span), g_up - 0.02 * span)
        else:
            g_new = 0.5 * (g_lo + g_up)
        targets_new = _targets_for(scenario, profile, g_new)
        if targets_new is None:
            g_up, t_up = g_new, None  # candidate saturates a metric
            continue
        try:
            res = solve(assembler.problem(targets_new), backend=backend)
        except ValueError:
            break
        if res.feasible and res.margin is not None and res.margin <= 1.0:
            g_lo, t_lo, best, best_targets = g_new, res.margin, res, targets_new
        elif res.margin is not None and res.status != "solver-failure":
            g_up, t_up = g_new, res.margin
        else:
            break
    return g_lo, best, best_targets


def trace_point(
    scenario: Scenario,
    profile: FairnessProfile,
    tol: float = 1e-5,
    *,
    assembler: SocpAssembler | None = None,
    backend=None,
    max_iterations: int = MAX_BISECTION_ITERATIONS,
    refine_powers: bool = False,
) -> BoundaryPoint:
    """Bisect along the profile ray until the bracket is narrower than tol.

    Returns the strategy of the last feasible midpoint (the bracket's lower
    end), so the certificate is always a feasible strategy within tol of the
    outer boundary. Solver failures shrink the bracket conservatively and are
    recorded as warnings.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    alpha = profile.alpha
    if alpha.size != scenario.num_users:
        raise ValueError("profile size does not match the scenario")
    assembler = assembler or SocpAssembler(scenario)
    notes: list[str] = []

    gmax = g_max_bound(scenario, profile)
    lo, hi = 0.0, gmax
    best = None
    best_targets = np.zeros(scenario.num_users)
    iterations = 0
    while hi - lo > tol and iterations < max_iterations:
        mid = 0.5 * (lo + hi)
        targets = _targets_for(scenario, profile, mid)
        if targets is not None:
            try:
                problem = assembler.problem(targets)
            except ValueError:
                # a positive share was requested for an unservable user
                problem = None
            if problem is None:
                feasible = False
            else:
                res = solve(problem, backend=backend)
                if res.status == "solver-failure":
                    notes.append(
                        f"solver failure at candidate {mid:.6g} treated as infeasible"
                    )
                    feasible = False
                else:
                    feasible = res.feasible
        else:
            feasible = False
        if feasible:
            lo = mid
            best = res
            best_targets = targets
        else:
            hi = mid
        iterations += 1

    if best is not None and best.margin is not None and abs(best.margin - 1.0) > POLISH_MARGIN_TOL:
        lo, best, best_targets = _polish_certificate(
            scenario, assembler, backend, profile, lo, hi, best, best_targets
        )

    if best is not None:
        strategy = _strategy_from_beamformers(scenario, best.beamformers)
        duals = None
        if best.mu is not None and best.lam is not None:
            duals = DualCertificate(mu=best.mu.copy(), lam=best.lam.copy())
        # On flat boundary segments the margin solve leaves some SINR cone
        # slack (the ray point is outer but not Pareto); the returned point
        # must still sit on the profile ray, so re-solve the powers for the
        # achieved directions whenever the targets are overshot.
        achieved = sinr_all(scenario, strategy)
        overshoot = np.any(
            achieved[best_targets > 0] > best_targets[best_targets > 0] * (1.0 + 1e-7)
        )
        if refine_powers or overshoot:
            refit = _power_refit(scenario, strategy, best_targets)
            if refit is not None:
                strategy = refit
            else:
                notes.append("power refit rejected (kept solver powers)")
    else:
        strategy = zero_strategy(scenario)
        duals = None

    point = evaluate_point(scenario, strategy)
    usage, _ = constraint_usage(scenario, strategy)
    return BoundaryPoint(
        profile=profile,
        point=point,
        g_sum=lo,
        strategy=strategy,
        duals=duals,
        iterations=iterations,
        bracket_width=hi - lo,
        sinrs=sinr_all(scenario, strategy),
        targets=best_targets,
        usage=usage,
        warnings=tuple(notes),
    )


def trace_boundary(
    scenario: Scenario,
    profiles,
    tol: float = 1e-5,
    *,
    threads: int | None = None,
    backend=None,
    refine_powers: bool = False,
) -> list:
    """Trace one boundary point per profile (thread-parallel, ordered output)."""
    profiles = list(profiles)
    assembler = SocpAssembler(scenario)
    workers = threads or os.cpu_count() or 1

    def run(profile):
        return trace_point(
            scenario,
            profile,
            tol,
            assembler=assembler,
            backend=backend,
            refine_powers=refine_powers,
        )

    if workers > 1 and len(profiles) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            points = list(pool.map(run, profiles))
    else:
        points = [run(p) for p in profiles]

    # flag points weakly dominated by another traced point (flat boundary parts)
    vals = np.array([p.point for p in points])
    for i, p in enumerate(points):
        others = np.delete(vals, i, axis=0)
        if others.size and np.any(
            np.all(others >= vals[i] - tol, axis=1)
            & np.any(others > vals[i] + tol, axis=1)
        ):
            points[i] = replace(p, dominated=True)
    return points


def duals_to_explicit(duals: DualCertificate) -> ExplicitParams:
    """Rescale solver duals to the canonical parameter normalization.

    After the joint rescale to sum(mu) + sum(lam) = 2, both sums must land
    within 1e-3 of 1; larger deviations indicate a broken dual extraction and
    raise DualExtractionError.
    """
    mu = np.asarray(duals.mu, dtype=float)
    lam = np.asarray(duals.lam, dtype=float)
    total = mu.sum() + lam.sum()
    if total <= 0:
        raise DualExtractionError("dual certificate is identically zero")
    scale = 2.0 / total
    mu_s = mu * scale
    lam_s = lam * scale
    if abs(mu_s.sum() - 1.0) > 1e-3 or abs(lam_s.sum() - 1.0) > 1e-3:
        raise DualExtractionError(
            f"dual normalization off: sum mu = {mu_s.sum():.6f}, sum lam = {lam_s.sum():.6f}"
        )
    return ExplicitParams(mu=mu_s, lam=lam_s)


def expected_iterations(g_max: float, tol: float) -> int:
    """Bisection iteration count for a bracket of width g_max at tolerance tol."""
    if g_max <= tol:
        return 0
    return min(MAX_BISECTION_ITERATIONS, math.ceil(math.log2(g_max / tol)))
