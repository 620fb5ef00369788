"""Command-line front end for reproducible region experiments.

Every command writes its outputs plus a manifest.json (resolved options,
input fingerprints, tool version) into the output directory. Files are
written to a temporary name and renamed on success. Exit codes: 0 success,
2 validation error, 3 solver failure, 4 verification failure.
"""

from __future__ import annotations

import argparse
import datetime
import json
import os
import sys

import numpy as np

from . import __version__
from .boundary import FairnessProfile, profile_grid, trace_boundary
from .explicit import GridTooLargeError, sweep_explicit
from .metrics import METRIC_KINDS
from .oracle import OracleConfig, check_dominance, random_cloud
from .region import (
    RegionSample,
    boundary_gap,
    export,
    pareto_mask,
    read_boundary_csv,
    write_boundary_csv,
    write_sweep_csv,
)
from .scenario import fingerprint, generate_scenario, load_scenario, save_scenario

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_SOLVER = 3
EXIT_VERIFICATION = 4


class CliError(Exception):
    def __init__(self, message: str, code: int = EXIT_VALIDATION):
        super().__init__(message)
        self.code = code


def _write_json(path, payload):
    tmp = f"{path}.tmp"
    with open(tmp, "w") as f:
        json.dump(payload, f, indent=1, sort_keys=True)
        f.write("\n")
    os.replace(tmp, path)


def _manifest(outdir, command, config, inputs):
    payload = {
        "schema_version": 1,
        "command": command,
        "config": config,
        "inputs": inputs,
        "tool_version": __version__,
        "created": datetime.datetime.now(datetime.timezone.utc).isoformat(),
    }
    _write_json(os.path.join(outdir, "manifest.json"), payload)


def _outdir(args) -> str:
    out = args.out
    os.makedirs(out, exist_ok=True)
    return out


def _load_config_file(path) -> dict:
    if not path:
        return {}
    with open(path) as f:
        data = json.load(f)
    if not isinstance(data, dict):
        raise CliError("config file must hold a JSON object")
    return data


def _resolve(args, parser, command: str) -> dict:
    """Config precedence: CLI flags > config file > parser defaults."""
    file_cfg = _load_config_file(getattr(args, "config", None))
    sub = getattr(args, "_subparser", parser)
    resolved = {}
    for key, value in sorted(vars(args).items()):
        if key in ("func", "config", "_subparser", "command"):
            continue
        default = sub.get_default(key)
        if value == default and key in file_cfg:
            resolved[key] = file_cfg[key]
        else:
            resolved[key] = value
    for key in file_cfg:
        if key not in resolved:
            raise CliError(f"unknown config file entry {key!r}")
    return resolved


def _profiles_arg(spec: str, num_users: int):
    """--profiles accepts an integer grid size or a JSON file with alpha rows."""
    if spec.isdigit():
        count = int(spec)
        if count < 2:
            raise CliError("profile grid needs at least 2 points")
        return profile_grid(num_users, count - 1)
    with open(spec) as f:
        rows = json.load(f)
    return [FairnessProfile(np.asarray(row, dtype=float)) for row in rows]


# -- commands -------------------------------------------------------------------


def cmd_scenario(args, parser):
    cfg = _resolve(args, parser, "scenario")
    try:
        scen = generate_scenario(
            cfg["kind"],
            num_cells=cfg["kt"],
            antennas_per_cell=cfg["n"],
            num_antennas=cfg["n"],
            num_users=cfg["users"],
            snr_db=cfg["snr"],
            evm=cfg["evm"],
            seed=cfg["seed"],
            metric=cfg["metric"],
        )
    except ValueError as e:
        raise CliError(str(e)) from e
    out = _outdir(args)
    path = os.path.join(out, "scenario.json")
    tmp = f"{path}.tmp"
    save_scenario(scen, tmp)
    os.replace(tmp, path)
    _manifest(out, "scenario", cfg, {"scenario": fingerprint(scen)})
    print(f"wrote {path} (fingerprint {fingerprint(scen)})")
    return EXIT_OK


def cmd_explicit(args, parser):
    cfg = _resolve(args, parser, "explicit")
    scen = load_scenario(args.scenario)
    try:
        sweep = sweep_explicit(scen, cfg["step"], point_cap=cfg["cap"])
    except GridTooLargeError as e:
        raise CliError(str(e)) from e
    out = _outdir(args)
    path = os.path.join(out, "sweep.csv")
    write_sweep_csv(sweep, path)
    _manifest(out, "explicit", cfg, {"scenario": fingerprint(scen)})
    print(
        f"wrote {path}: {len(sweep)} grid points, {sweep.num_invalid} invalid"
    )
    return EXIT_OK


def cmd_trace(args, parser):
    cfg = _resolve(args, parser, "trace")
    scen = load_scenario(args.scenario)
    profiles = _profiles_arg(cfg["profiles"], scen.num_users)
    points = trace_boundary(
        scen, profiles, tol=cfg["tol"], threads=cfg["threads"] or None
    )
    failures = [w for p in points for w in p.warnings if "solver failure" in w]
    out = _outdir(args)
    path = os.path.join(out, "boundary.csv")
    write_boundary_csv(points, fingerprint(scen), path, metrics=scen.metrics)
    _manifest(out, "trace", cfg, {"scenario": fingerprint(scen)})
    print(f"wrote {path}: {len(points)} boundary points")
    if failures:
        print(f"warning: {len(failures)} conservative solver fallbacks", file=sys.stderr)
        return EXIT_SOLVER
    return EXIT_OK


def cmd_verify(args, parser):
    cfg = _resolve(args, parser, "verify")
    scen = load_scenario(args.scenario)
    fp = fingerprint(scen)
    out = _outdir(args)
    lines = []
    failed = False

    profiles = _profiles_arg(cfg["profiles"], scen.num_users)
    points = trace_boundary(scen, profiles, tol=cfg["tol"])

    if cfg["boundary"]:
        data = read_boundary_csv(cfg["boundary"])
        if data["fingerprint"] != fp:
            raise CliError("boundary file fingerprint does not match the scenario")
        ref = dict(zip(map(tuple, np.round(data["alpha"], 12)), data["g_sum"]))
        worst = 0.0
        for p in points:
            key = tuple(np.round(p.profile.alpha, 12))
            if key in ref and ref[key] > 0:
                worst = max(worst, abs(ref[key] - p.g_sum) / ref[key])
        ok = worst <= max(10 * cfg["tol"], 1e-6)
        failed |= not ok
        lines.append(f"{'PASS' if ok else 'FAIL'} boundary-file-consistency "
                     f"(max relative deviation {worst:.2e})")

    cloud = random_cloud(
        scen,
        OracleConfig(
            num_samples=cfg["samples"], seed=cfg["seed"], power_grid=cfg["power_grid"]
        ),
    )
    rep = check_dominance(cloud, points, tol=1e-3, boundary_fingerprint=fp)
    ok = rep.ok(1e-3)
    failed |= not ok
    lines.append(
        f"{'PASS' if ok else 'FAIL'} oracle-dominance "
        f"(worst violation {rep.worst_violation:.2e}, cloud {rep.num_points} points)"
    )
    lines.append(
        f"INFO oracle front reaches within {rep.max_shortfall * 100:.2f}% of the boundary"
    )

    # duality round trip on the traced points that carry duals
    from .boundary import DualExtractionError, duals_to_explicit
    from .explicit import closed_form_strategy
    from .scenario import evaluate_point

    worst_rt = 0.0
    checked = 0
    for p in points:
        if p.duals is None or p.g_sum <= 0 or p.dominated:
            continue
        mu_share = p.duals.mu / max(p.duals.mu.sum(), 1e-300)
        if mu_share[p.profile.active].min(initial=1.0) < 1e-6:
            continue  # flat boundary segment: not covered by the parametrization
        try:
            params = duals_to_explicit(p.duals)
        except DualExtractionError:
            worst_rt = np.inf
            break
        res = closed_form_strategy(scen, params)
        if not res.valid:
            continue
        point = evaluate_point(scen, res.strategy)
        scale = np.maximum(np.abs(p.point), 1e-9)
        worst_rt = max(worst_rt, float(np.max(np.abs(point - p.point) / scale)))
        checked += 1
    ok = np.isfinite(worst_rt) and (checked == 0 or worst_rt <= 5e-3)
    failed |= not ok
    lines.append(
        f"{'PASS' if ok else 'FAIL'} duality-round-trip "
        f"({checked} points, worst component deviation {worst_rt:.2e})"
    )

    report = "\n".join(lines) + "\n"
    tmp = os.path.join(out, "verify.txt.tmp")
    with open(tmp, "w") as f:
        f.write(report)
    os.replace(tmp, os.path.join(out, "verify.txt"))
    _manifest(out, "verify", cfg, {"scenario": fp})
    print(report, end="")
    return EXIT_VERIFICATION if failed else EXIT_OK


_PLOT_TEMPLATE = '''"""Self-contained plot script; run with: python plot.py"""
import csv
import json
import os

import matplotlib.pyplot as plt

HERE = os.path.dirname(os.path.abspath(__file__))
with open(os.path.join(HERE, "plot_data.json")) as f:
    DATA = json.load(f)

fig = plt.figure(figsize=(7, 6))
if DATA["kind"] == "region2d":
    ax = fig.add_subplot(111)
    for name, pts in DATA["scatter"].items():
        xs = [p[0] for p in pts]
        ys = [p[1] for p in pts]
        ax.scatter(xs, ys, s=2, alpha=0.4, label=name)
    for name, pts in DATA["lines"].items():
        xs = [p[0] for p in pts]
        ys = [p[1] for p in pts]
        ax.plot(xs, ys, lw=1.8, label=name)
    ax.set_xlabel(DATA["labels"][0])
    ax.set_ylabel(DATA["labels"][1])
    ax.legend()
else:
    ax = fig.add_subplot(111, projection="3d")
    pts = DATA["points3d"]
    ss = [sum(p) for p in pts]
    sc = ax.scatter(
        [p[0] for p in pts], [p[1] for p in pts], [p[2] for p in pts],
        c=ss, s=2, cmap="viridis",
    )
    fig.colorbar(sc, label="sum performance")
    ax.set_xlabel(DATA["labels"][0])
    ax.set_ylabel(DATA["labels"][1])
    ax.set_zlabel(DATA["labels"][2])
ax.set_title(DATA["title"])
fig.tight_layout()
fig.savefig(os.path.join(HERE, "region.png"), dpi=150)
print("wrote", os.path.join(HERE, "region.png"))
'''


def _read_sweep_points(path):
    with open(path) as f:
        header = f.readline()
        if not header.startswith("# mimoregion sweep"):
            raise CliError("not a mimoregion sweep file")
        import csv as _csv

        reader = _csv.reader(f)
        cols = next(reader)
        gcols = [i for i, c in enumerate(cols) if c.startswith("g_")]
        status_i = cols.index("status")
        pts = []
        for row in reader:
            if not row or row[status_i] != "valid":
                continue
            pts.append([float(row[i]) for i in gcols])
    return np.asarray(pts)


def cmd_plot(args, parser):
    cfg = _resolve(args, parser, "plot")
    out = _outdir(args)
    lines = {}
    scatter = {}
    dims = None
    for path in args.boundary or []:
        data = read_boundary_csv(path)
        pts = data["g"]
        dims = pts.shape[1]
        name = os.path.splitext(os.path.basename(path))[0]
        order = np.argsort(data["alpha"][:, 0]) if dims == 2 else slice(None)
        lines[name] = pts[order].tolist()
    for path in args.sweep or []:
        pts = _read_sweep_points(path)
        if pts.size == 0:
            raise CliError(f"no valid points in {path}")
        dims = pts.shape[1]
        name = os.path.splitext(os.path.basename(path))[0]
        if cfg["strict_pareto"]:
            pts = pts[pareto_mask(pts, view="pareto")]
        scatter[name] = pts.tolist()
    if dims is None:
        raise CliError("need at least one --boundary or --sweep input")

    if dims == 2:
        payload = {
            "kind": "region2d",
            "labels": ["g_1", "g_2"],
            "title": "performance region",
            "scatter": scatter,
            "lines": lines,
        }
    elif dims == 3:
        allpts = []
        for pts in scatter.values():
            allpts.extend(pts)
        for pts in lines.values():
            allpts.extend(pts)
        payload = {
            "kind": "scatter3d",
            "labels": ["g_1", "g_2", "g_3"],
            "title": "performance region (colour = sum)",
            "points3d": allpts,
        }
    else:
        raise CliError("plotting supports 2- or 3-user regions")

    _write_json(os.path.join(out, "plot_data.json"), payload)
    tmp = os.path.join(out, "plot.py.tmp")
    with open(tmp, "w") as f:
        f.write(_PLOT_TEMPLATE)
    os.replace(tmp, os.path.join(out, "plot.py"))
    _manifest(out, "plot", cfg, {})
    print(f"wrote {os.path.join(out, 'plot_data.json')} and plot.py")
    return EXIT_OK


# -- parser ---------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mimoregion",
        description="Pareto boundaries of multicell MIMO performance regions",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("scenario", help="generate a random scenario file")
    p.add_argument("--kind", choices=("miso-ic", "network-mimo"), required=True)
    p.add_argument("--kt", type=int, default=2, help="cells (miso-ic)")
    p.add_argument("--n", type=int, default=3, help="antennas per cell / total")
    p.add_argument("--users", type=int, default=2, help="users (network-mimo)")
    p.add_argument("--snr", type=float, default=10.0, help="average MRT SNR in dB")
    p.add_argument("--evm", type=float, default=0.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--metric", choices=METRIC_KINDS[:3], default="rate")
    p.add_argument("--config", help="JSON file with defaults")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_scenario, _subparser=p)

    p = sub.add_parser("explicit", help="closed-form parameter grid sweep")
    p.add_argument("--scenario", required=True)
    p.add_argument("--step", type=float, default=0.02)
    p.add_argument("--cap", type=int, default=2_000_000)
    p.add_argument("--config", help="JSON file with defaults")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_explicit, _subparser=p)

    p = sub.add_parser("trace", help="fairness-profile boundary trace")
    p.add_argument("--scenario", required=True)
    p.add_argument("--profiles", default="101", help="grid size or JSON file")
    p.add_argument("--tol", type=float, default=1e-5)
    p.add_argument("--threads", type=int, default=0, help="0 = all cores")
    p.add_argument("--config", help="JSON file with defaults")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_trace, _subparser=p)

    p = sub.add_parser("verify", help="oracle and duality cross-checks")
    p.add_argument("--scenario", required=True)
    p.add_argument("--boundary", help="boundary CSV to validate")
    p.add_argument("--profiles", default="21", help="grid size or JSON file")
    p.add_argument("--samples", type=int, default=100_000)
    p.add_argument("--power-grid", dest="power_grid", type=int, default=8)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--tol", type=float, default=1e-5)
    p.add_argument("--config", help="JSON file with defaults")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_verify, _subparser=p)

    p = sub.add_parser("plot", help="emit plot data plus a plot script")
    p.add_argument("--boundary", nargs="*", help="boundary CSV file(s)")
    p.add_argument("--sweep", nargs="*", help="sweep CSV file(s)")
    p.add_argument("--strict-pareto", dest="strict_pareto", action="store_true",
                   help="filter sweeps to the strict Pareto boundary")
    p.add_argument("--config", help="JSON file with defaults")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_plot, _subparser=p)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args, parser)
    except CliError as e:
        print(f"error: {e}", file=sys.stderr)
        return e.code
    except FileNotFoundError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_VALIDATION
    except (ValueError, KeyError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
