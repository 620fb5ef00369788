"""Multicell downlink problem instances and transmit-strategy evaluation.

A Scenario bundles the channels, dynamic cooperation clusters, linear power
constraints, noise powers and per-antenna EVM coefficients of one problem
instance. All evaluation helpers (SINR, performance point, constraint usage)
are pure functions of (scenario, strategy).
"""

from __future__ import annotations

import hashlib
import json
import warnings
from dataclasses import dataclass

import numpy as np

from .metrics import PerformanceMetric, metric_from_dict, metric_to_dict

SCHEMA_VERSION = 1

#: relative eigenvalue floor for Hermitian PSD / positive definite checks
PSD_TOL = 1e-9

#: EVM above this is flagged as outside the practical hardware range
EVM_WARN_LEVEL = 0.15

_UNIT_TOL = 1e-12


def _freeze(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a)
    a.setflags(write=False)
    return a


def _as_complex_matrix(x, shape) -> np.ndarray:
    a = np.asarray(x, dtype=complex)
    if a.shape != shape:
        raise ValueError(f"expected shape {shape}, got {a.shape}")
    return a


@dataclass(frozen=True)
class PowerConstraint:
    """One linear power constraint sum_k tr(Q_k S_k) <= q.

    mats holds the per-user weighting matrices Q_k stacked as (K_r, N, N).
    """

    q: float
    mats: np.ndarray

    def __post_init__(self):
        if self.q <= 0:
            raise ValueError("power limit q must be positive")
        object.__setattr__(self, "mats", _freeze(np.asarray(self.mats, dtype=complex)))


def total_power_constraint(num_users: int, n_total: int, q: float) -> PowerConstraint:
    """L=1 constraint: sum of all transmit powers bounded by q."""
    mats = np.broadcast_to(np.eye(n_total, dtype=complex), (num_users, n_total, n_total))
    return PowerConstraint(q=float(q), mats=mats.copy())


def per_antenna_constraints(num_users: int, n_total: int, q) -> list[PowerConstraint]:
    """L=N constraints: antenna n's power bounded by q (scalar or per-antenna list)."""
    qs = np.broadcast_to(np.asarray(q, dtype=float), (n_total,))
    out = []
    for n in range(n_total):
        m = np.zeros((n_total, n_total), dtype=complex)
        m[n, n] = 1.0
        out.append(PowerConstraint(q=float(qs[n]), mats=np.tile(m, (num_users, 1, 1))))
    return out


def per_bs_constraints(num_users: int, antennas_per_transmitter, q) -> list[PowerConstraint]:
    """L=K_t constraints: transmitter j's total power bounded by q_j."""
    nj = [int(x) for x in antennas_per_transmitter]
    n_total = sum(nj)
    qs = np.broadcast_to(np.asarray(q, dtype=float), (len(nj),))
    out = []
    start = 0
    for j, n in enumerate(nj):
        m = np.zeros((n_total, n_total), dtype=complex)
        m[start : start + n, start : start + n] = np.eye(n)
        start += n
        out.append(PowerConstraint(q=float(qs[j]), mats=np.tile(m, (num_users, 1, 1))))
    return out


@dataclass(frozen=True)
class SelectionMatrices:
    """Antenna selection masks D_k (data) and C_k (coordination), one row per user."""

    data_mask: np.ndarray
    coord_mask: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "data_mask", _freeze(np.asarray(self.data_mask, bool)))
        object.__setattr__(self, "coord_mask", _freeze(np.asarray(self.coord_mask, bool)))
        if np.any(self.data_mask & ~self.coord_mask):
            raise ValueError("data mask must lie inside coordination mask")

    def support(self, k: int) -> np.ndarray:
        """Antenna indices serving user k (the support of D_k)."""
        return np.flatnonzero(self.data_mask[k])

    def data_matrix(self, k: int) -> np.ndarray:
        """D_k materialized as an N x N 0/1 diagonal matrix."""
        return np.diag(self.data_mask[k].astype(float))

    def coord_matrix(self, k: int) -> np.ndarray:
        """C_k materialized as an N x N 0/1 diagonal matrix."""
        return np.diag(self.coord_mask[k].astype(float))


@dataclass(frozen=True)
class Scenario:
    """Immutable problem instance; see module docstring.

    channels rows are the stacked per-transmitter channels h_k of length
    N = sum(antennas_per_transmitter). Cluster sets use 0-based user indices.
    """

    num_transmitters: int
    antennas_per_transmitter: tuple
    channels: np.ndarray
    data_clusters: tuple
    coord_clusters: tuple
    noise_powers: np.ndarray
    power_constraints: tuple
    evm: np.ndarray
    metrics: tuple

    def __post_init__(self):
        kt = int(self.num_transmitters)
        nj = tuple(int(x) for x in self.antennas_per_transmitter)
        if kt <= 0 or len(nj) != kt or any(n <= 0 for n in nj):
            raise ValueError("inconsistent transmitter/antenna sizes")
        n_total = sum(nj)
        ch = np.asarray(self.channels, dtype=complex)
        if ch.ndim != 2 or ch.shape[1] != n_total:
            raise ValueError(f"channels must be (K_r, {n_total})")
        k_r = ch.shape[0]
        if k_r < 1:
            raise ValueError("need at least one user")

        dsets = tuple(frozenset(int(u) for u in s) for s in self.data_clusters)
        csets = tuple(frozenset(int(u) for u in s) for s in self.coord_clusters)
        if len(dsets) != kt or len(csets) != kt:
            raise ValueError("cluster lists must have one entry per transmitter")
        for j, (d, c) in enumerate(zip(dsets, csets)):
            if not d <= c:
                raise ValueError(f"data cluster of transmitter {j} not inside coordination cluster")
            if d and (min(d) < 0 or max(d) >= k_r):
                raise ValueError("cluster user index out of range")
            if c and (min(c) < 0 or max(c) >= k_r):
                raise ValueError("cluster user index out of range")

        noise = np.asarray(self.noise_powers, dtype=float)
        if noise.shape != (k_r,) or np.any(noise <= 0):
            raise ValueError("noise powers must be positive, one per user")

        evm = np.asarray(self.evm, dtype=float)
        if evm.shape != (n_total,) or np.any(evm < 0):
            raise ValueError("EVM coefficients must be nonnegative, one per antenna")
        if np.any(evm > EVM_WARN_LEVEL):
            warnings.warn(
                f"EVM above {EVM_WARN_LEVEL} is outside the practical hardware range",
                stacklevel=2,
            )

        cons = tuple(self.power_constraints)
        if not cons:
            raise ValueError("need at least one power constraint")

        metrics = tuple(self.metrics)
        if len(metrics) != k_r or not all(isinstance(m, PerformanceMetric) for m in metrics):
            raise ValueError("need one PerformanceMetric per user")

        object.__setattr__(self, "num_transmitters", kt)
        object.__setattr__(self, "antennas_per_transmitter", nj)
        object.__setattr__(self, "channels", _freeze(ch))
        object.__setattr__(self, "data_clusters", dsets)
        object.__setattr__(self, "coord_clusters", csets)
        object.__setattr__(self, "noise_powers", _freeze(noise))
        object.__setattr__(self, "power_constraints", cons)
        object.__setattr__(self, "evm", _freeze(evm))
        object.__setattr__(self, "metrics", metrics)
        object.__setattr__(self, "_selection", build_selection(self))
        self._validate_constraints()

    # -- derived sizes -------------------------------------------------------

    @property
    def num_users(self) -> int:
        return self.channels.shape[0]

    @property
    def num_antennas(self) -> int:
        return self.channels.shape[1]

    @property
    def num_constraints(self) -> int:
        return len(self.power_constraints)

    @property
    def selection(self) -> SelectionMatrices:
        return self._selection

    def _validate_constraints(self):
        k_r, n = self.channels.shape
        dmask = self.selection.data_mask
        total = np.zeros((k_r, n, n), dtype=complex)
        for li, con in enumerate(self.power_constraints):
            if con.mats.shape != (k_r, n, n):
                raise ValueError(f"constraint {li}: mats must be (K_r, N, N)")
            for k in range(k_r):
                qm = con.mats[k]
                scale = float(np.linalg.norm(qm, 2)) or 1.0
                if np.linalg.norm(qm - qm.conj().T, 2) > PSD_TOL * scale:
                    raise ValueError(f"constraint {li}: Q for user {k} is not Hermitian")
                if np.linalg.eigvalsh(qm).min() < -PSD_TOL * scale:
                    raise ValueError(f"constraint {li}: Q for user {k} is not PSD")
                # condition (a): Q - D^H Q D must be diagonal
                outside = ~(dmask[k][:, None] & dmask[k][None, :])
                off = outside & ~np.eye(n, dtype=bool)
                if np.abs(qm[off]).max(initial=0.0) > PSD_TOL * scale:
                    raise ValueError(
                        f"constraint {li}: Q for user {k} couples served and unserved antennas"
                    )
            total += con.mats
        for k in range(k_r):
            scale = float(np.linalg.norm(total[k], 2)) or 1.0
            if np.linalg.eigvalsh(total[k]).min() <= PSD_TOL * scale:
                raise ValueError(
                    f"summed constraint matrices are not positive definite for user {k}"
                )

    # -- convenience ---------------------------------------------------------

    def support(self, k: int) -> np.ndarray:
        return self.selection.support(k)

    def masked_channel(self, k: int, which: str = "data") -> np.ndarray:
        """Channel of user k masked by its D (``data``) or C (``coord``) selection."""
        mask = self.selection.data_mask if which == "data" else self.selection.coord_mask
        return self.channels[k] * mask[k]


def build_selection(scenario) -> SelectionMatrices:
    """Construct the D/C antenna masks from the cooperation clusters."""
    if isinstance(scenario, Scenario):
        kt = scenario.num_transmitters
        nj = scenario.antennas_per_transmitter
        k_r = np.asarray(scenario.channels).shape[0]
        dsets, csets = scenario.data_clusters, scenario.coord_clusters
    else:  # pragma: no cover - duck-typed use
        kt, nj = scenario.num_transmitters, scenario.antennas_per_transmitter
        k_r, dsets, csets = scenario.num_users, scenario.data_clusters, scenario.coord_clusters
    n_total = sum(nj)
    dmask = np.zeros((k_r, n_total), dtype=bool)
    cmask = np.zeros((k_r, n_total), dtype=bool)
    start = 0
    for j in range(kt):
        stop = start + nj[j]
        for k in dsets[j]:
            dmask[k, start:stop] = True
        for k in csets[j]:
            cmask[k, start:stop] = True
        start = stop
    return SelectionMatrices(data_mask=dmask, coord_mask=cmask)


@dataclass(frozen=True)
class BeamformingStrategy:
    """Rank-one transmit strategy: unit direction w_k and power p_k per user.

    Inactive users carry p_k = 0; their direction is arbitrary but unit-norm.
    """

    directions: np.ndarray
    powers: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.directions, dtype=complex)
        p = np.asarray(self.powers, dtype=float)
        if w.ndim != 2 or p.shape != (w.shape[0],):
            raise ValueError("directions must be (K_r, N) with one power per user")
        if np.any(p < 0):
            raise ValueError("powers must be nonnegative")
        norms = np.linalg.norm(w, axis=1)
        if np.any(np.abs(norms[p > 0] - 1.0) > _UNIT_TOL):
            raise ValueError("active beamforming directions must be unit norm")
        object.__setattr__(self, "directions", _freeze(w))
        object.__setattr__(self, "powers", _freeze(p))

    @property
    def num_users(self) -> int:
        return self.powers.shape[0]

    def correlation_matrix(self, k: int) -> np.ndarray:
        """S_k = p_k w_k w_k^H."""
        w = self.directions[k]
        return self.powers[k] * np.outer(w, w.conj())

    def scaled(self, factor: float) -> "BeamformingStrategy":
        """Same directions with all powers multiplied by `factor`."""
        return BeamformingStrategy(self.directions, self.powers * float(factor))


def validate_strategy(scenario: Scenario, strategy: BeamformingStrategy, tol: float = 1e-12):
    """Raise if an active beam leaks outside its user's serving antennas."""
    if strategy.num_users != scenario.num_users:
        raise ValueError("strategy and scenario disagree on the number of users")
    dmask = scenario.selection.data_mask
    leak = np.abs(strategy.directions) * ~dmask
    bad = np.flatnonzero((strategy.powers > 0) & (leak.max(axis=1) > tol))
    if bad.size:
        raise ValueError(f"beam of user {bad[0]} uses antennas outside its data cluster")


def zero_strategy(scenario: Scenario) -> BeamformingStrategy:
    """All-off strategy (every user inactive), with valid placeholder directions."""
    k_r, n = scenario.channels.shape
    w = np.zeros((k_r, n), dtype=complex)
    for k in range(k_r):
        sup = scenario.support(k)
        hk = scenario.masked_channel(k)
        if sup.size == 0:
            w[k, 0] = 1.0
        elif np.linalg.norm(hk) > 0:
            w[k] = hk / np.linalg.norm(hk)
        else:
            w[k, sup[0]] = 1.0
    return BeamformingStrategy(w, np.zeros(k_r))


def mrt_strategy(scenario: Scenario, powers) -> BeamformingStrategy:
    """Maximum ratio transmission along each user's masked channel."""
    base = zero_strategy(scenario)
    return BeamformingStrategy(base.directions, np.asarray(powers, dtype=float))


# -- evaluation ---------------------------------------------------------------


def _distortion_diag(scenario: Scenario, strategy: BeamformingStrategy) -> np.ndarray:
    """Diagonal of the distortion covariance: kappa_n^2 * total power on antenna n."""
    load = strategy.powers[:, None] * np.abs(strategy.directions) ** 2
    return scenario.evm**2 * load.sum(axis=0)


def distortion_covariance(scenario: Scenario, strategy: BeamformingStrategy) -> np.ndarray:
    """The N x N (diagonal, PSD) transmit-distortion covariance."""
    return np.diag(_distortion_diag(scenario, strategy))


def sinr_all(scenario: Scenario, strategy: BeamformingStrategy) -> np.ndarray:
    """SINR of every user under `strategy`; own-signal distortion included."""
    sel = scenario.selection
    ch = scenario.channels
    w = strategy.directions * sel.data_mask  # beams never leave the data support
    p = strategy.powers

    sig_amp = np.einsum("kn,kn->k", ch.conj() * sel.data_mask, w)
    signal = p * np.abs(sig_amp) ** 2

    # cross interference: |h_k^H C_k D_i w_i|^2, i != k
    recv = ch.conj() * sel.coord_mask
    amp = recv @ w.T  # (k receiver, i beam)
    cross = (np.abs(amp) ** 2 * p[None, :]).copy()
    np.fill_diagonal(cross, 0.0)

    xi = _distortion_diag(scenario, strategy)
    dist = (np.abs(ch) ** 2 * sel.coord_mask) @ xi

    den = scenario.noise_powers + cross.sum(axis=1) + dist
    return signal / den


def sinr(scenario: Scenario, strategy: BeamformingStrategy, k: int) -> float:
    """SINR of user k under `strategy`."""
    return float(sinr_all(scenario, strategy)[k])


def evaluate_point(scenario: Scenario, strategy: BeamformingStrategy) -> np.ndarray:
    """Per-user performance vector (g_k applied to each user's SINR)."""
    s = sinr_all(scenario, strategy)
    return np.array([m.value(si) for m, si in zip(scenario.metrics, s)])


def constraint_usage(scenario: Scenario, strategy: BeamformingStrategy):
    """Per-constraint usage ratios u_l and their maximum c.

    The strategy is feasible iff c <= 1; c is the scaling denominator used by
    the feasibility rescaling of suggested strategies.
    """
    w = strategy.directions
    p = strategy.powers
    u = np.empty(scenario.num_constraints)
    for li, con in enumerate(scenario.power_constraints):
        quad = np.einsum("kn,knm,km->k", w.conj(), con.mats, w).real
        u[li] = float(p @ quad) / con.q
    return u, float(u.max(initial=0.0))


def sinr_batch(scenario: Scenario, w: np.ndarray, p: np.ndarray) -> np.ndarray:
    """SINRs of G stacked strategies: w is (G, K_r, N) unit beams, p is (G, K_r)."""
    sel = scenario.selection
    ch = scenario.channels
    k_r = scenario.num_users
    sig_amp = np.einsum("kn,gkn->gk", ch.conj() * sel.data_mask, w, optimize=True)
    signal = p * np.abs(sig_amp) ** 2
    recv = ch.conj() * sel.coord_mask
    amp = np.einsum("jn,gin->gji", recv, w, optimize=True)
    cross = np.abs(amp) ** 2 * p[:, None, :]
    cross[:, np.arange(k_r), np.arange(k_r)] = 0.0
    load = (p[:, :, None] * np.abs(w) ** 2).sum(axis=1)
    dist = np.einsum(
        "jn,gn->gj", (np.abs(ch) ** 2) * sel.coord_mask * scenario.evm**2, load
    )
    return signal / (scenario.noise_powers[None, :] + cross.sum(axis=2) + dist)


def usage_batch(scenario: Scenario, w: np.ndarray, p: np.ndarray) -> np.ndarray:
    """Constraint usage ratios of G stacked strategies, shape (G, L)."""
    usage = np.empty((w.shape[0], scenario.num_constraints))
    for li, con in enumerate(scenario.power_constraints):
        quad = np.einsum("gkn,knm,gkm->gk", w.conj(), con.mats, w, optimize=True).real
        usage[:, li] = (p * quad).sum(axis=1) / con.q
    return usage


# -- generators ---------------------------------------------------------------


def generate_scenario(
    kind: str,
    *,
    num_cells: int = 2,
    antennas_per_cell: int = 2,
    num_antennas: int = 3,
    num_users: int = 2,
    snr_db: float = 10.0,
    evm: float = 0.0,
    seed: int = 0,
    metric: str = "rate",
) -> Scenario:
    """Random Rayleigh-fading scenario of one of the two named families.

    'miso-ic': K_t = K_r = num_cells interference channel, antennas_per_cell
    antennas each, per-base-station power constraints. 'network-mimo': one
    pooled transmitter with num_antennas antennas serving num_users users
    under identical per-antenna constraints.

    Channel entries are i.i.d. CN(0, 1). Noise powers are 1 and budgets are
    scaled so a full-budget single-user MRT transmission has average SNR
    equal to 10^(snr_db/10) (the conventional normalization; see README).
    """
    rng = np.random.default_rng(seed)
    snr_lin = 10.0 ** (snr_db / 10.0)

    if kind == "miso-ic":
        kt = k_r = int(num_cells)
        nj = (int(antennas_per_cell),) * kt
        n_total = sum(nj)
        data = tuple(frozenset({j}) for j in range(kt))
        coord = tuple(frozenset(range(k_r)) for _ in range(kt))
        cons = per_bs_constraints(k_r, nj, [snr_lin / n for n in nj])
    elif kind == "network-mimo":
        kt = 1
        n_total = int(num_antennas)
        nj = (n_total,)
        k_r = int(num_users)
        data = (frozenset(range(k_r)),)
        coord = (frozenset(range(k_r)),)
        cons = per_antenna_constraints(k_r, n_total, snr_lin / n_total**2)
    else:
        raise ValueError(f"unknown scenario kind {kind!r}")

    if k_r < 1 or n_total < 1:
        raise ValueError("invalid sizes")

    h = (rng.standard_normal((k_r, n_total)) + 1j * rng.standard_normal((k_r, n_total))) / np.sqrt(2.0)
    return Scenario(
        num_transmitters=kt,
        antennas_per_transmitter=nj,
        channels=h,
        data_clusters=data,
        coord_clusters=coord,
        noise_powers=np.ones(k_r),
        power_constraints=tuple(cons),
        evm=np.full(n_total, float(evm)),
        metrics=(PerformanceMetric(metric),) * k_r,
    )


# -- serialization ------------------------------------------------------------


def _cplx_out(a: np.ndarray):
    return [[float(x.real), float(x.imag)] for x in np.asarray(a, complex).ravel()]


def scenario_to_dict(scenario: Scenario) -> dict:
    k_r, n = scenario.channels.shape
    return {
        "schema_version": SCHEMA_VERSION,
        "num_transmitters": scenario.num_transmitters,
        "antennas_per_transmitter": list(scenario.antennas_per_transmitter),
        "num_users": k_r,
        "channels": [_cplx_out(row) for row in scenario.channels],
        "data_clusters": [sorted(s) for s in scenario.data_clusters],
        "coord_clusters": [sorted(s) for s in scenario.coord_clusters],
        "noise_powers": [float(x) for x in scenario.noise_powers],
        "power_constraints": [
            {
                "type": "matrix",
                "q": float(con.q),
                "Q": [_cplx_out(con.mats[k]) for k in range(k_r)],
            }
            for con in scenario.power_constraints
        ],
        "evm": [float(x) for x in scenario.evm],
        "metrics": [metric_to_dict(m) for m in scenario.metrics],
    }


def _cplx_in(pairs, shape) -> np.ndarray:
    a = np.asarray(pairs, dtype=float).reshape(-1, 2)
    return (a[:, 0] + 1j * a[:, 1]).reshape(shape)


def _expand_constraint(entry: dict, k_r: int, nj) -> list[PowerConstraint]:
    n_total = sum(nj)
    kind = entry.get("type", "matrix")
    if kind == "matrix":
        mats = np.stack([_cplx_in(entry["Q"][k], (n_total, n_total)) for k in range(k_r)])
        return [PowerConstraint(q=float(entry["q"]), mats=mats)]
    if kind == "total":
        return [total_power_constraint(k_r, n_total, entry["q"])]
    if kind == "per_antenna":
        return per_antenna_constraints(k_r, n_total, entry["q"])
    if kind == "per_bs":
        return per_bs_constraints(k_r, nj, entry["q"])
    raise ValueError(f"unknown power constraint type {kind!r}")


def scenario_from_dict(data: dict) -> Scenario:
    if data.get("schema_version") != SCHEMA_VERSION:
        raise ValueError("scenario file missing or unsupported schema_version")
    nj = tuple(int(x) for x in data["antennas_per_transmitter"])
    n_total = sum(nj)
    k_r = int(data["num_users"])
    channels = np.stack([_cplx_in(row, (n_total,)) for row in data["channels"]])
    if channels.shape[0] != k_r:
        raise ValueError("num_users does not match the channel table")
    cons: list[PowerConstraint] = []
    for entry in data["power_constraints"]:
        cons.extend(_expand_constraint(entry, k_r, nj))
    return Scenario(
        num_transmitters=int(data["num_transmitters"]),
        antennas_per_transmitter=nj,
        channels=channels,
        data_clusters=tuple(frozenset(s) for s in data["data_clusters"]),
        coord_clusters=tuple(frozenset(s) for s in data["coord_clusters"]),
        noise_powers=np.asarray(data["noise_powers"], dtype=float),
        power_constraints=tuple(cons),
        evm=np.asarray(data["evm"], dtype=float),
        metrics=tuple(metric_from_dict(m) for m in data["metrics"]),
    )


def save_scenario(scenario: Scenario, path):
    with open(path, "w") as f:
        json.dump(scenario_to_dict(scenario), f, indent=1, sort_keys=True)
        f.write("\n")


def load_scenario(path) -> Scenario:
    with open(path) as f:
        return scenario_from_dict(json.load(f))


def fingerprint(scenario: Scenario) -> str:
    """Stable hash of the canonical scenario JSON (16 hex chars)."""
    blob = json.dumps(scenario_to_dict(scenario), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()[:16]
