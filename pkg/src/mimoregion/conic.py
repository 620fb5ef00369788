"""Second-order cone feasibility of SINR targets, with dual extraction.

Targets gamma_k are checked by a power-margin program: minimize t subject to
sum_k v_k^H Q_lk v_k <= t q_l and the per-user SINR cones of the target
vector. Targets are feasible iff the optimal margin satisfies t* <= 1, and
the KKT multipliers of the margin program map directly onto the per-user
priorities mu_k and per-constraint weights lam_l (sum lam = 1 by stationarity
in t; sum mu = t* by strong duality).

The cone assembly is precomputed per scenario: only the target-dependent
1/sqrt(gamma_k) scalings change between solves, so bisection iterations cost
one sparse-data copy plus the solve itself.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .scenario import Scenario

#: margins below 1 + this count as feasible
FEAS_MARGIN_TOL = 1e-8

#: relative eigenvalue cutoff when factoring constraint matrices
_SQRT_EIG_TOL = 1e-12


@dataclass
class ConeData:
    """Solver-agnostic conic program: min c.x s.t. b - A.x in K."""

    c: np.ndarray
    a_indptr: np.ndarray
    a_indices: np.ndarray
    a_data: np.ndarray
    b: np.ndarray
    cones: tuple  # ("zero"|"soc", dim) in row order
    ncols: int

    def matrix(self) -> sp.csc_matrix:
        return sp.csc_matrix(
            (self.a_data, self.a_indices, self.a_indptr),
            shape=(self.b.size, self.ncols),
        )


@dataclass
class RawSolution:
    status: str  # optimal | infeasible | failure
    x: np.ndarray | None
    z: np.ndarray | None
    s: np.ndarray | None
    obj: float
    iterations: int
    solve_time: float
    solver_status: str
    almost: bool = False


class ClarabelBackend:
    """Default interior-point conic backend."""

    name = "clarabel"

    def __init__(self, tol: float = 1e-8, max_iter: int = 200, verbose: bool = False):
        self.tol = tol
        self.max_iter = max_iter
        self.verbose = verbose

    def _settings(self, tighten: bool):
        import clarabel

        st = clarabel.DefaultSettings()
        tol = self.tol * (1e-2 if tighten else 1.0)
        st.tol_gap_abs = tol
        st.tol_gap_rel = tol
        st.tol_feas = tol
        st.max_iter = self.max_iter * (3 if tighten else 1)
        st.verbose = self.verbose
        return st

    def solve_cone(self, prog: ConeData, tighten: bool = False) -> RawSolution:
        import clarabel

        cones = []
        for kind, dim in prog.cones:
            if kind == "zero":
                cones.append(clarabel.ZeroConeT(dim))
            elif kind == "soc":
                cones.append(clarabel.SecondOrderConeT(dim))
            else:  # pragma: no cover
                raise ValueError(f"unsupported cone kind {kind}")
        p_mat = sp.csc_matrix((prog.ncols, prog.ncols))
        solver = clarabel.DefaultSolver(
            p_mat, prog.c, prog.matrix(), prog.b, cones, self._settings(tighten)
        )
        sol = solver.solve()
        name = str(sol.status)
        if name in ("Solved", "AlmostSolved"):
            status = "optimal"
        elif name in ("PrimalInfeasible", "AlmostPrimalInfeasible"):
            status = "infeasible"
        else:
            status = "failure"
        # keep the final iterate even on soft failures: the caller validates
        # it against the actual constraints before using it
        x = np.asarray(sol.x)
        usable_x = status != "infeasible" and x.size and np.all(np.isfinite(x))
        z = np.asarray(sol.z)
        s = np.asarray(sol.s)
        return RawSolution(
            status=status,
            x=x if usable_x else None,
            z=z if usable_x and np.all(np.isfinite(z)) else None,
            s=s if usable_x and np.all(np.isfinite(s)) else None,
            obj=float(sol.obj_val) if sol.obj_val is not None else float("nan"),
            iterations=int(sol.iterations),
            solve_time=float(sol.solve_time),
            solver_status=name,
            almost=(name != "Solved"),
        )


_DEFAULT_BACKEND = ClarabelBackend()


def _lift_rows(row: np.ndarray):
    """Real lift of the complex functional row.v: (Re part row, Im part row)."""
    return (
        np.concatenate([row.real, -row.imag]),
        np.concatenate([row.imag, row.real]),
    )


@dataclass
class _Template:
    """Assembled cone program for one active-user set, gamma left unscaled."""

    active: tuple
    ncols: int
    c: np.ndarray
    b: np.ndarray
    cones: tuple
    indptr: np.ndarray
    indices: np.ndarray
    base_data: np.ndarray
    gamma_positions: dict  # user -> indices into base_data holding top-row entries
    var_offsets: dict  # user -> column offset of its Re block (Im block follows)
    var_sizes: dict
    power_cone_meta: tuple  # (constraint index, z offset, dim)
    sinr_cone_meta: tuple  # (user, z offset, dim)

    def cone_data(self, gammas: np.ndarray) -> ConeData:
        data = self.base_data.copy()
        for k, pos in self.gamma_positions.items():
            data[pos] /= np.sqrt(gammas[k])
        return ConeData(
            c=self.c,
            a_indptr=self.indptr,
            a_indices=self.indices,
            a_data=data,
            b=self.b,
            cones=self.cones,
            ncols=self.ncols,
        )


class SocpAssembler:
    """Per-scenario cone assembly with cached active-set templates."""

    def __init__(self, scenario: Scenario):
        self.scenario = scenario
        self._templates: dict = {}
        import threading

        self._lock = threading.Lock()
        sel = scenario.selection
        ch = scenario.channels
        k_r = scenario.num_users
        self._supports = [scenario.support(k) for k in range(k_r)]
        self._hhat = [ch[k][self._supports[k]] for k in range(k_r)]
        # constraint square roots restricted to each user's support
        self._sqrts = []
        for con in scenario.power_constraints:
            per_user = []
            for k in range(k_r):
                s = self._supports[k]
                block = con.mats[k][s[:, None], s[None, :]]
                if s.size == 0 or np.abs(block).max(initial=0.0) == 0.0:
                    per_user.append(np.zeros((0, s.size), dtype=complex))
                    continue
                vals, vecs = np.linalg.eigh(block)
                keep = vals > _SQRT_EIG_TOL * vals.max()
                per_user.append(np.sqrt(vals[keep])[:, None] * vecs[:, keep].conj().T)
            self._sqrts.append(per_user)
        # receiver-side rows
        self._recv = ch.conj() * sel.coord_mask
        self._kappa = scenario.evm

    def _build_template(self, active: tuple) -> _Template:
        scen = self.scenario
        k_r = scen.num_users
        var_offsets = {}
        var_sizes = {}
        ncols = 0
        for k in active:
            m = self._supports[k].size
            var_offsets[k] = ncols
            var_sizes[k] = m
            ncols += 2 * m
        tcol = ncols
        ncols += 1

        rows = []  # (row, col, value, gamma_user or -1)
        bvals = []
        cones = []
        r = 0

        def emit(col_vals, bval=0.0, tag=-1):
            """One row of s = b - A x; col_vals are the A entries."""
            nonlocal r
            for col, val in col_vals:
                if val != 0.0:
                    rows.append((r, col, val, tag))
            bvals.append(bval)
            r += 1

        # zero cone: Im(h_k^H v_k) = 0 per active user
        for k in active:
            a = np.conj(self._hhat[k])
            _, im_row = _lift_rows(a)
            emit([(var_offsets[k] + i, -im_row[i]) for i in range(im_row.size)])
        cones.append(("zero", len(active)))

        # power cones (rotated lift): || (2 y_l; t q_l - 1) || <= t q_l + 1
        power_meta = []
        z_off = len(active)
        for li, con in enumerate(scen.power_constraints):
            blocks = []
            for k in active:
                rk = self._sqrts[li][k]
                if rk.shape[0]:
                    blocks.append((k, rk))
            if not blocks:
                continue
            start = r
            emit([(tcol, -con.q)], bval=1.0)
            for k, rk in blocks:
                off = var_offsets[k]
                ssz = var_sizes[k]
                for row in rk:
                    for lifted in _lift_rows(row):
                        emit([(off + i, -2.0 * lifted[i]) for i in range(2 * ssz)])
            emit([(tcol, -con.q)], bval=-1.0)
            dim = r - start
            cones.append(("soc", dim))
            power_meta.append((li, z_off, dim))
            z_off += dim

        # SINR cones: (1/sqrt(g_k)) Re(h_k^H v_k) >= ||(sigma_k; cross; distortion)||
        sinr_meta = []
        for k in active:
            start = r
            a = np.conj(self._hhat[k])
            re_row, _ = _lift_rows(a)
            off = var_offsets[k]
            emit([(off + i, -re_row[i]) for i in range(re_row.size)], tag=k)
            emit([], bval=float(np.sqrt(scen.noise_powers[k])))
            # cross interference from other active beams
            for kb in active:
                if kb == k:
                    continue
                arow = self._recv[k][self._supports[kb]]
                if arow.size == 0 or np.abs(arow).max(initial=0.0) == 0.0:
                    continue
                offb = var_offsets[kb]
                for lifted in _lift_rows(arow):
                    emit([(offb + i, -lifted[i]) for i in range(lifted.size)])
            # transmit distortion from every active beam (own included)
            for kb in active:
                sup = self._supports[kb]
                coeffs = self._recv[k][sup] * self._kappa[sup]
                nz = np.flatnonzero(np.abs(coeffs) > 0)
                offb = var_offsets[kb]
                msz = var_sizes[kb]
                for n_idx in nz:
                    w = coeffs[n_idx]
                    emit([(offb + n_idx, -w.real), (offb + msz + n_idx, w.imag)])
                    emit([(offb + n_idx, -w.imag), (offb + msz + n_idx, -w.real)])
            dim = r - start
            cones.append(("soc", dim))
            sinr_meta.append((k, z_off, dim))
            z_off += dim

        entries = np.asarray([(e[0], e[1]) for e in rows], dtype=np.int64)
        vals = np.asarray([e[2] for e in rows], dtype=float)
        tags = np.asarray([e[3] for e in rows], dtype=np.int64)
        order = np.lexsort((entries[:, 0], entries[:, 1]))
        sorted_cols = entries[order, 1]
        indices = entries[order, 0].astype(np.int64)
        data = vals[order]
        tags = tags[order]
        indptr = np.zeros(ncols + 1, dtype=np.int64)
        np.add.at(indptr, sorted_cols + 1, 1)
        indptr = np.cumsum(indptr)

        gamma_positions = {
            k: np.flatnonzero(tags == k) for k in active if np.any(tags == k)
        }

        c = np.zeros(ncols)
        c[tcol] = 1.0
        return _Template(
            active=active,
            ncols=ncols,
            c=c,
            b=np.asarray(bvals),
            cones=tuple(cones),
            indptr=indptr,
            indices=indices,
            base_data=data,
            gamma_positions=gamma_positions,
            var_offsets=var_offsets,
            var_sizes=var_sizes,
            power_cone_meta=tuple(power_meta),
            sinr_cone_meta=tuple(sinr_meta),
        )

    def template(self, active: tuple) -> _Template:
        with self._lock:
            tmpl = self._templates.get(active)
            if tmpl is None:
                tmpl = self._build_template(active)
                self._templates[active] = tmpl
            return tmpl

    def problem(self, targets) -> "FeasibilityProblem":
        targets = np.asarray(targets, dtype=float)
        if targets.shape != (self.scenario.num_users,) or np.any(targets < 0):
            raise ValueError("targets must be a nonnegative vector, one per user")
        if not np.any(targets > 0):
            raise ValueError("at least one target must be positive")
        active = tuple(int(k) for k in np.flatnonzero(targets > 0))
        for k in active:
            if self._supports[k].size == 0 or np.linalg.norm(self._hhat[k]) == 0.0:
                raise ValueError(
                    f"user {k} has a positive target but no usable serving channel"
                )
        return FeasibilityProblem(
            scenario=self.scenario,
            targets=targets,
            active=active,
            _template=self.template(active),
        )


@dataclass
class FeasibilityProblem:
    """Assembled cone program for one target vector (zero targets excluded)."""

    scenario: Scenario
    targets: np.ndarray
    active: tuple
    _template: _Template

    def cone_data(self) -> ConeData:
        return self._template.cone_data(self.targets)

    def dump_text(self) -> str:
        """Plain-text dump of the assembled cone program (for external checks)."""
        prog = self.cone_data()
        lines = [
            "mimoregion cone program dump",
            f"variables: {prog.ncols} (last column = power margin t)",
        ]
        for k in self.active:
            off = self._template.var_offsets[k]
            m = self._template.var_sizes[k]
            sup = " ".join(str(i) for i in np.flatnonzero(self.scenario.selection.data_mask[k]))
            lines.append(
                f"user {k}: re cols [{off},{off + m}) im cols [{off + m},{off + 2 * m}) antennas {sup}"
            )
        row0 = 0
        for kind, dim in prog.cones:
            lines.append(f"cone {kind} rows [{row0},{row0 + dim})")
            row0 += dim
        mat = prog.matrix().tocoo()
        per_row: dict = {}
        for i, j, v in zip(mat.row, mat.col, mat.data):
            per_row.setdefault(int(i), []).append((int(j), float(v)))
        for i in range(prog.b.size):
            ent = " ".join(f"{j}:{v:.12g}" for j, v in sorted(per_row.get(i, [])))
            lines.append(f"row {i}: b={prog.b[i]:.12g} {ent}")
        return "\n".join(lines) + "\n"


@dataclass
class FeasibilityResult:
    """Outcome of one feasibility check.

    status 'feasible' carries beamformers (stacked complex v_k, zero rows for
    excluded users), the achieved power margin and the dual variables
    (mu per user, lam per constraint). 'solver-failure' must be treated as
    indeterminate by callers, never as infeasible evidence.
    """

    status: str
    margin: float | None = None
    beamformers: np.ndarray | None = None
    mu: np.ndarray | None = None
    lam: np.ndarray | None = None
    achieved_sinr: np.ndarray | None = None
    iterations: int = 0
    solve_time: float = 0.0
    solver_status: str = ""
    retried: bool = False

    @property
    def feasible(self) -> bool:
        return self.status == "feasible"


def build_problem(scenario: Scenario, targets) -> FeasibilityProblem:
    """One-shot problem assembly; reuse a SocpAssembler for repeated solves."""
    return SocpAssembler(scenario).problem(targets)


#: direct primal validation tolerances (relative)
PRIMAL_POWER_TOL = 1e-7
PRIMAL_SINR_TOL = 1e-7


def _extract_beamformers(problem: FeasibilityProblem, x: np.ndarray) -> np.ndarray:
    tmpl = problem._template
    scen = problem.scenario
    v = np.zeros((scen.num_users, scen.num_antennas), dtype=complex)
    for k in problem.active:
        off = tmpl.var_offsets[k]
        m = tmpl.var_sizes[k]
        sup = np.flatnonzero(scen.selection.data_mask[k])
        v[k, sup] = x[off : off + m] + 1j * x[off + m : off + 2 * m]
    return v


def _validate_primal(problem: FeasibilityProblem, v: np.ndarray):
    """Check the iterate against the actual constraints (not the solver's view).

    Returns (ok, achieved_sinr, max_usage).
    """
    from .scenario import sinr_batch, usage_batch

    scen = problem.scenario
    norms = np.linalg.norm(v, axis=1)
    p = norms**2
    w = np.where(norms[:, None] > 0, v / np.where(norms > 0, norms, 1.0)[:, None], 0)
    # give inactive rows a harmless unit direction for the batched evaluators
    for k in range(scen.num_users):
        if norms[k] == 0:
            w[k, scen.support(k)[0] if scen.support(k).size else 0] = 1.0
    usage = usage_batch(scen, w[None, :, :], p[None, :])[0]
    sinr = sinr_batch(scen, w[None, :, :], p[None, :])[0]
    ok = usage.max(initial=0.0) <= 1.0 + PRIMAL_POWER_TOL
    for k in problem.active:
        if sinr[k] < problem.targets[k] * (1.0 - PRIMAL_SINR_TOL):
            ok = False
            break
    return ok, sinr, float(usage.max(initial=0.0))


def _extract_duals(problem: FeasibilityProblem, z: np.ndarray):
    tmpl = problem._template
    scen = problem.scenario
    mu = np.zeros(scen.num_users)
    for k, zoff, _dim in tmpl.sinr_cone_meta:
        mu[k] = max(0.0, -np.sqrt(scen.noise_powers[k]) * z[zoff + 1] / 2.0)
    lam = np.zeros(scen.num_constraints)
    for li, zoff, dim in tmpl.power_cone_meta:
        lam[li] = max(
            0.0, scen.power_constraints[li].q * (z[zoff] + z[zoff + dim - 1])
        )
    return mu, lam


def solve(
    problem: FeasibilityProblem,
    backend=None,
    *,
    feas_margin_tol: float = FEAS_MARGIN_TOL,
) -> FeasibilityResult:
    """Solve the margin program and classify the target vector.

    The decision prefers direct evidence: a returned iterate that satisfies
    the actual power and SINR constraints certifies feasibility even when the
    solver's status is a soft failure. A clean optimal with margin above 1
    certifies infeasibility, as does a solver infeasibility certificate.
    Remaining soft failures are retried once with tightened tolerances and
    then reported as 'solver-failure' (indeterminate).
    """
    backend = backend or _DEFAULT_BACKEND
    raw = backend.solve_cone(problem.cone_data())
    retried = False

    for attempt in range(2):
        if raw.status == "infeasible":
            return FeasibilityResult(
                status="infeasible",
                iterations=raw.iterations,
                solve_time=raw.solve_time,
                solver_status=raw.solver_status,
                retried=retried,
            )
        if raw.x is not None:
            v = _extract_beamformers(problem, raw.x)
            ok, sinr, max_usage = _validate_primal(problem, v)
            if ok:
                mu, lam = (
                    _extract_duals(problem, raw.z) if raw.z is not None else (None, None)
                )
                margin = raw.obj if np.isfinite(raw.obj) else max_usage
                return FeasibilityResult(
                    status="feasible",
                    margin=margin,
                    beamformers=v,
                    mu=mu,
                    lam=lam,
                    achieved_sinr=sinr,
                    iterations=raw.iterations,
                    solve_time=raw.solve_time,
                    solver_status=raw.solver_status,
                    retried=retried,
                )
            if raw.status == "optimal" and raw.obj > 1.0 + feas_margin_tol:
                return FeasibilityResult(
                    status="infeasible",
                    margin=raw.obj,
                    iterations=raw.iterations,
                    solve_time=raw.solve_time,
                    solver_status=raw.solver_status,
                    retried=retried,
                )
        if attempt == 0:
            retried = True
            raw = backend.solve_cone(problem.cone_data(), tighten=True)

    return FeasibilityResult(
        status="solver-failure",
        margin=raw.obj if np.isfinite(raw.obj) else None,
        iterations=raw.iterations,
        solve_time=raw.solve_time,
        solver_status=raw.solver_status,
        retried=retried,
    )
