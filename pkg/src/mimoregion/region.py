"""Region bookkeeping: dominance filtering, boundary gap metrics, file export.

Samples are stored columnar (one row per evaluated strategy) together with
the fingerprint of the scenario they came from, so cross-checks can refuse
mismatched inputs.
"""

from __future__ import annotations

import csv
import json
import os
from dataclasses import dataclass

import numpy as np

SAMPLE_SCHEMA_VERSION = 1

#: absolute dominance slack; differences inside it never decide dominance
DOMINANCE_SLACK = 1e-9


class FingerprintMismatchError(ValueError):
    """Inputs come from different scenarios."""


def _tool_version() -> str:
    from . import __version__

    return __version__


@dataclass
class RegionSample:
    """Columnar set of performance points with provenance.

    values is (n, K_r); tags holds one provenance label per row
    ('explicit-sweep', 'implicit-trace' or 'oracle'). Optional columns carry
    the per-row SINRs, constraint usage, tightest usage ratio c, and the
    parameters that generated the row (alpha, or mu and lam).
    """

    values: np.ndarray
    tags: list
    fingerprint: str
    sinrs: np.ndarray | None = None
    c: np.ndarray | None = None
    usage: np.ndarray | None = None
    alpha: np.ndarray | None = None
    mu: np.ndarray | None = None
    lam: np.ndarray | None = None

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.ndim != 2:
            raise ValueError("values must be (n, K_r)")
        if np.any(self.values < 0):
            raise ValueError("performance values must be nonnegative")
        if len(self.tags) != self.values.shape[0]:
            raise ValueError("one tag per row required")

    def __len__(self) -> int:
        return self.values.shape[0]

    @property
    def num_users(self) -> int:
        return self.values.shape[1]


def merge_samples(a: RegionSample, b: RegionSample) -> RegionSample:
    """Concatenate two samples of the same scenario (common columns only)."""
    if a.fingerprint != b.fingerprint:
        raise FingerprintMismatchError("samples come from different scenarios")

    def cat(x, y):
        return np.concatenate([x, y]) if x is not None and y is not None else None

    return RegionSample(
        values=np.concatenate([a.values, b.values]),
        tags=list(a.tags) + list(b.tags),
        fingerprint=a.fingerprint,
        sinrs=cat(a.sinrs, b.sinrs),
        c=cat(a.c, b.c),
        usage=cat(a.usage, b.usage),
    )


# -- dominance filtering --------------------------------------------------------


def pareto_mask(points, view: str = "pareto", slack: float = DOMINANCE_SLACK) -> np.ndarray:
    """Mask of rows kept by the dominance filter.

    view 'pareto' removes weakly dominated rows (the Pareto boundary); view
    'outer' removes only strictly dominated rows (the outer boundary). Ties
    within the slack are retained. The result is independent of row order.

    Two-user inputs use an O(n log n) sort-based scan; other dimensions use
    the exact pairwise check (desk scale).
    """
    pts = np.asarray(points, dtype=float)
    if pts.ndim != 2 or pts.shape[0] == 0:
        raise ValueError("points must be a nonempty (n, K) array")
    if view not in ("pareto", "outer"):
        raise ValueError("view must be 'pareto' or 'outer'")
    if pts.shape[1] == 2:
        return _mask_2d(pts, view, slack)
    return _mask_pairwise(pts, view, slack)


def _mask_pairwise(pts: np.ndarray, view: str, slack: float, block: int = 512) -> np.ndarray:
    n = pts.shape[0]
    dominated = np.zeros(n, dtype=bool)
    for i0 in range(0, n, block):
        cand = pts[i0 : i0 + block][:, None, :]
        dom = np.zeros(cand.shape[0], dtype=bool)
        for j0 in range(0, n, block):
            other = pts[j0 : j0 + block][None, :, :]
            if view == "pareto":
                hit = np.all(other >= cand - slack, axis=2) & np.any(
                    other > cand + slack, axis=2
                )
            else:
                hit = np.all(other > cand + slack, axis=2)
            dom |= hit.any(axis=1)
        dominated[i0 : i0 + block] = dom
    return ~dominated


def _mask_2d(pts: np.ndarray, view: str, slack: float) -> np.ndarray:
    """Exact O(n log n) dominance filter for two users."""
    n = pts.shape[0]
    order = np.lexsort((-pts[:, 1], -pts[:, 0]))
    x = pts[order, 0]
    y = pts[order, 1]
    dominated = np.zeros(n, dtype=bool)

    # weak view: dominated iff (a) some j with x_j > x_i + slack and
    # y_j >= y_i - slack, or (b) some j with x_j >= x_i - slack and
    # y_j > y_i + slack. strict view: x_j > x_i + slack and y_j > y_i + slack.
    best_y_strict = -np.inf  # max y among points with x_j > x_i + slack
    best_y_weak = -np.inf  # max y among points with x_j >= x_i - slack
    ptr_strict = 0
    ptr_weak = 0
    for i in range(n):
        while ptr_strict < n and x[ptr_strict] > x[i] + slack:
            best_y_strict = max(best_y_strict, y[ptr_strict])
            ptr_strict += 1
        if view == "pareto":
            while ptr_weak < n and x[ptr_weak] >= x[i] - slack:
                best_y_weak = max(best_y_weak, y[ptr_weak])
                ptr_weak += 1
            if best_y_strict >= y[i] - slack or best_y_weak > y[i] + slack:
                dominated[order[i]] = True
        else:
            if best_y_strict > y[i] + slack:
                dominated[order[i]] = True
    return ~dominated


def pareto_filter(points, view: str = "pareto", slack: float = DOMINANCE_SLACK) -> np.ndarray:
    """Non-dominated subset of `points` (rows kept in their input order)."""
    pts = np.asarray(points, dtype=float)
    return pts[pareto_mask(pts, view=view, slack=slack)]


# -- boundary gap ---------------------------------------------------------------


@dataclass(frozen=True)
class GapReport:
    """Ray-wise comparison of a point cloud against a traced boundary."""

    shortfall: np.ndarray  # per traced ray, relative shortfall of the cloud front
    excess: np.ndarray  # per traced ray, relative overshoot of the cloud
    coverage: np.ndarray  # best cloud reach per ray, in sum-value units
    g_sums: np.ndarray

    @property
    def max_shortfall(self) -> float:
        return float(self.shortfall.max(initial=0.0))

    @property
    def mean_shortfall(self) -> float:
        return float(self.shortfall.mean()) if self.shortfall.size else 0.0

    @property
    def worst_excess(self) -> float:
        return float(self.excess.max(initial=0.0))


def ray_coverage(points: np.ndarray, alphas: np.ndarray) -> np.ndarray:
    """Largest multiple of each profile ray dominated by some point.

    For ray alpha, every point x covers the ray up to t = min over the
    positive entries of x_k / alpha_k; the coverage is the max over points.
    """
    pts = np.asarray(points, dtype=float)
    out = np.zeros(alphas.shape[0])
    if pts.shape[0] == 0:
        return out
    for i, alpha in enumerate(alphas):
        mask = alpha > 0
        ratios = pts[:, mask] / alpha[mask]
        out[i] = float(ratios.min(axis=1).max())
    return out


def boundary_gap(sample: RegionSample, traced, *, traced_fingerprint: str | None = None) -> GapReport:
    """Ray-wise shortfall of `sample` against traced boundary points.

    `traced` is a sequence of BoundaryPoint. Rays whose traced sum value is
    zero are skipped. Raises FingerprintMismatchError when provenance
    disagrees.
    """
    traced = list(traced)
    if not traced or len(sample) == 0:
        raise ValueError("need a nonempty sample and a nonempty traced boundary")
    if traced_fingerprint is not None and traced_fingerprint != sample.fingerprint:
        raise FingerprintMismatchError("sweep and boundary come from different scenarios")
    alphas = np.array([p.profile.alpha for p in traced])
    g_sums = np.array([p.g_sum for p in traced])
    coverage = ray_coverage(sample.values, alphas)
    ok = g_sums > 0
    shortfall = np.zeros_like(g_sums)
    excess = np.zeros_like(g_sums)
    shortfall[ok] = np.maximum(0.0, 1.0 - coverage[ok] / g_sums[ok])
    full = np.all(alphas > 0, axis=1) & ok
    excess[full] = np.maximum(0.0, coverage[full] / g_sums[full] - 1.0)
    return GapReport(shortfall=shortfall, excess=excess, coverage=coverage, g_sums=g_sums)


# -- export ----------------------------------------------------------------------


def _fmt(x: float) -> str:
    if np.isnan(x):
        return ""
    return f"{float(x):.17g}"


def _atomic_write(path, writer):
    tmp = f"{path}.tmp"
    with open(tmp, "w", newline="") as f:
        writer(f)
    os.replace(tmp, path)


def sample_columns(sample: RegionSample) -> list:
    k = sample.num_users
    cols = ["tag"]
    if sample.alpha is not None:
        cols += [f"alpha_{i + 1}" for i in range(k)]
    if sample.mu is not None:
        cols += [f"mu_{i + 1}" for i in range(k)]
    if sample.lam is not None:
        cols += [f"lambda_{i + 1}" for i in range(sample.lam.shape[1])]
    cols += [f"g_{i + 1}" for i in range(k)]
    if sample.sinrs is not None:
        cols += [f"sinr_{i + 1}" for i in range(k)]
    if sample.c is not None:
        cols += ["c"]
    if sample.usage is not None:
        cols += [f"usage_{i + 1}" for i in range(sample.usage.shape[1])]
    return cols


def _sample_rows(sample: RegionSample):
    for i in range(len(sample)):
        row = [str(sample.tags[i])]
        for block in (sample.alpha, sample.mu, sample.lam):
            if block is not None:
                row += [_fmt(v) for v in block[i]]
        row += [_fmt(v) for v in sample.values[i]]
        if sample.sinrs is not None:
            row += [_fmt(v) for v in sample.sinrs[i]]
        if sample.c is not None:
            row += [_fmt(sample.c[i])]
        if sample.usage is not None:
            row += [_fmt(v) for v in sample.usage[i]]
        yield row


def export(sample: RegionSample, fmt: str, path) -> None:
    """Write a sample to disk as 'csv' or 'json' (atomic, deterministic order)."""
    if fmt == "csv":

        def write(f):
            f.write(f"# mimoregion sample schema_version={SAMPLE_SCHEMA_VERSION} ")
            f.write(f"fingerprint={sample.fingerprint} tool_version={_tool_version()}\n")
            w = csv.writer(f)
            w.writerow(sample_columns(sample))
            for row in _sample_rows(sample):
                w.writerow(row)

        _atomic_write(path, write)
    elif fmt == "json":
        payload = {
            "schema_version": SAMPLE_SCHEMA_VERSION,
            "fingerprint": sample.fingerprint,
            "tool_version": _tool_version(),
            "tags": [str(t) for t in sample.tags],
            "values": sample.values.tolist(),
        }
        for name in ("sinrs", "c", "usage", "alpha", "mu", "lam"):
            arr = getattr(sample, name)
            if arr is not None:
                payload[name] = np.asarray(arr).tolist()

        def write(f):
            json.dump(payload, f, indent=1, sort_keys=True)
            f.write("\n")

        _atomic_write(path, write)
    else:
        raise ValueError("format must be 'csv' or 'json'")


def load_sample(path) -> RegionSample:
    """Read back a JSON sample written by export()."""
    with open(path) as f:
        data = json.load(f)
    if data.get("schema_version") != SAMPLE_SCHEMA_VERSION:
        raise ValueError("unsupported sample schema_version")
    kwargs = {}
    for name in ("sinrs", "c", "usage", "alpha", "mu", "lam"):
        if name in data:
            kwargs[name] = np.asarray(data[name], dtype=float)
    return RegionSample(
        values=np.asarray(data["values"], dtype=float),
        tags=list(data["tags"]),
        fingerprint=str(data["fingerprint"]),
        **kwargs,
    )


# -- CSV writers for the two pipelines -------------------------------------------


def write_sweep_csv(sweep, path) -> None:
    """One row per grid point: parameters, status, point, c, usage."""
    from .explicit import STATUS_NAMES

    k = sweep.mu.shape[1]
    n_l = sweep.lam.shape[1]
    cols = (
        [f"mu_{i + 1}" for i in range(k)]
        + [f"lambda_{i + 1}" for i in range(n_l)]
        + ["status"]
        + [f"g_{i + 1}" for i in range(k)]
        + ["c"]
        + [f"usage_{i + 1}" for i in range(n_l)]
    )

    def write(f):
        f.write(f"# mimoregion sweep fingerprint={sweep.scenario_fingerprint} ")
        f.write(f"grid_step={sweep.grid_step:g} tool_version={_tool_version()}\n")
        w = csv.writer(f)
        w.writerow(cols)
        for i in range(len(sweep)):
            row = [_fmt(v) for v in sweep.mu[i]]
            row += [_fmt(v) for v in sweep.lam[i]]
            row += [STATUS_NAMES[sweep.status[i]]]
            row += [_fmt(v) for v in sweep.values[i]]
            row += [_fmt(sweep.c[i])]
            row += [_fmt(v) for v in sweep.usage[i]]
            w.writerow(row)

    _atomic_write(path, write)


def write_boundary_csv(points, fingerprint: str, path, metrics=None) -> None:
    """One row per traced point: profile, sums, SINRs, duals, diagnostics.

    When `metrics` is given and any user runs an error-type measure, extra
    err_k columns report the raw error value (what error-rate figures plot)
    alongside the internally maximized g_k.
    """
    if not points:
        raise ValueError("no boundary points to write")
    k = points[0].profile.alpha.size
    n_l = points[0].usage.size
    err_metrics = None
    if metrics is not None and any(m.error_measure(0.0) is not None for m in metrics):
        err_metrics = metrics
    cols = (
        [f"alpha_{i + 1}" for i in range(k)]
        + ["g_sum"]
        + [f"g_{i + 1}" for i in range(k)]
        + ([f"err_{i + 1}" for i in range(k)] if err_metrics else [])
        + [f"sinr_{i + 1}" for i in range(k)]
        + ["iterations", "bracket_width", "dominated"]
        + [f"mu_{i + 1}" for i in range(k)]
        + [f"lambda_{i + 1}" for i in range(n_l)]
        + [f"usage_{i + 1}" for i in range(n_l)]
    )

    def write(f):
        f.write(f"# mimoregion boundary fingerprint={fingerprint} ")
        f.write(f"tool_version={_tool_version()}\n")
        w = csv.writer(f)
        w.writerow(cols)
        for p in points:
            row = [_fmt(v) for v in p.profile.alpha]
            row += [_fmt(p.g_sum)]
            row += [_fmt(v) for v in p.point]
            if err_metrics:
                for m, s in zip(err_metrics, p.sinrs):
                    err = m.error_measure(max(s, 0.0))
                    row += [_fmt(err) if err is not None else ""]
            row += [_fmt(v) for v in p.sinrs]
            row += [str(p.iterations), _fmt(p.bracket_width), str(int(p.dominated))]
            if p.duals is not None:
                row += [_fmt(v) for v in p.duals.mu]
                row += [_fmt(v) for v in p.duals.lam]
            else:
                row += [""] * (k + n_l)
            row += [_fmt(v) for v in p.usage]
            w.writerow(row)

    _atomic_write(path, write)


def read_boundary_csv(path):
    """Read back a boundary CSV into a dict of arrays plus the fingerprint."""
    with open(path) as f:
        header = f.readline()
        if not header.startswith("# mimoregion boundary"):
            raise ValueError("not a mimoregion boundary file")
        fingerprint = ""
        for tok in header.split():
            if tok.startswith("fingerprint="):
                fingerprint = tok.split("=", 1)[1]
        reader = csv.reader(f)
        cols = next(reader)
        rows = [r for r in reader if r]
    data = {c: [] for c in cols}
    for r in rows:
        if len(r) != len(cols):
            raise ValueError("malformed boundary file row")
        for c, v in zip(cols, r):
            data[c].append(v)

    import re

    def arr(prefix):
        names = [c for c in cols if re.fullmatch(re.escape(prefix) + r"\d+", c)]
        if not names:
            return None
        return np.array(
            [[float(v) if v else np.nan for v in data[n]] for n in names]
        ).T

    return {
        "fingerprint": fingerprint,
        "alpha": arr("alpha_"),
        "g_sum": np.array([float(v) for v in data["g_sum"]]),
        "g": arr("g_"),
        "sinr": arr("sinr_"),
        "iterations": np.array([int(v) for v in data["iterations"]]),
        "dominated": np.array([v == "1" for v in data["dominated"]]),
        "mu": arr("mu_"),
        "lam": arr("lambda_"),
        "usage": arr("usage_"),
    }
