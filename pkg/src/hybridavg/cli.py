"""Command-line front end: simulate | average | certify | recur | sweep | fig1.

Every command reads one config document, writes CSV (and SVG) outputs plus a
JSON run manifest into --out, and is deterministic for a fixed config digest
and seed.  Exit codes: 0 success/pass, 1 usage or config error, 2 analysis
verdict fail.  Floats are written with shortest round-trip formatting.
"""

from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .averaging import build_average_system, check_jacobian_average, estimate_average_map, estimate_gamma
from .certificates import CertGrid, foster_certificate
from .config import ConfigDocument, ConfigError
from .core import StateVec
from .expressions import (
    AverageField,
    ExpressionError,
    ScalarField,
    allowed_names,
    compile_expressions,
)
from .solver import Horizon, IntegratorConfig, simulate_ensemble, simulate_path
from .stats import SweepParams, epsilon_sweep, recurrence_estimate
from .svgplot import Curve, Panel, render_panels
from .systems import JamParams, jammed_es, load_system
from .core import JumpNoise


def _f(v) -> str:
    return repr(float(v))


def _vec(v) -> str:
    return ";".join(_f(c) for c in np.atleast_1d(v))


def _write_csv(path: Path, header, rows):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(row) + "\n")


def _write_manifest(outdir: Path, command: str, digest: str, seed: int,
                    outputs, started: float):
    manifest = {
        "command": command,
        "config_digest": digest,
        "seed_base": int(seed),
        "toolkit_version": __version__,
        "duration_seconds": round(time.time() - started, 3),
        "outputs": sorted(str(o) for o in outputs),
    }
    path = outdir / f"{command}_manifest.json"
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path


def _parse_inits(doc: ConfigDocument, spec, sections) -> list:
    """Initial conditions: x0 as ';'-separated vectors (or scalars), shared r0/tau0."""
    def lookup(key, default=None):
        for sec in sections:
            if doc.has(sec, key):
                return doc.get_str(sec, key)
        return default

    raw_x0 = lookup("x0", "1")
    if ";" in raw_x0:
        x0s = [[float(t) for t in chunk.split()] for chunk in raw_x0.split(";") if chunk.strip()]
    else:
        x0s = [[float(t)] for t in raw_x0.split()]
    raw_r0 = lookup("r0", "0")
    r0 = [float(t) for t in raw_r0.split()]
    tau0 = float(lookup("tau0", "0"))
    inits = []
    for x0 in x0s:
        if len(x0) != spec.n or len(r0) != spec.p:
            raise ConfigError(
                f"initial condition dims (x:{len(x0)}, r:{len(r0)}) do not match "
                f"system (n={spec.n}, p={spec.p})")
        inits.append(StateVec(np.array(x0), np.array(r0), tau0))
    return inits


def _sim_numbers(doc: ConfigDocument, args, sections):
    def lookup_float(key, default):
        for sec in sections:
            if doc.has(sec, key):
                return doc.get_float(sec, key)
        return default

    def lookup_int(key, default):
        for sec in sections:
            if doc.has(sec, key):
                return doc.get_int(sec, key)
        return default

    t_max = getattr(args, "t_max", None)
    t_max = lookup_float("t_max", 10.0) if t_max is None else t_max
    j_max = lookup_int("j_max", 10_000)
    n_paths = getattr(args, "paths", None)
    n_paths = lookup_int("n_paths", 100) if n_paths is None else n_paths
    cfg = IntegratorConfig(lookup_float("base_step", 0.01),
                           lookup_float("substep_per_epsilon", 0.1))
    return n_paths, Horizon(t_max, j_max), cfg


def _arc_rows(arc, path_id: int, stride: int = 1, kind: str = None):
    """CSV rows for one arc: flow samples (strided), jump post-states, terminal."""
    prefix = [str(path_id)] + ([kind] if kind is not None else [])
    last_row = None
    for si, seg in enumerate(arc.segments):
        count = seg.t.shape[0]
        for k in range(count):
            event = "jump" if (si > 0 and k == 0) else "flow"
            if event == "flow" and stride > 1 and k % stride and k != count - 1:
                continue
            row = prefix + [_f(seg.t[k]), str(int(seg.j)),
                            *(_f(c) for c in seg.x[k]), *(_f(c) for c in seg.r[k]),
                            _f(seg.tau[k]), event]
            yield row
            last_row = row
    if last_row is not None:
        yield last_row[:-1] + ["terminal"]


def cmd_simulate(args) -> int:
    started = time.time()
    doc = ConfigDocument.load(args.config)
    spec = load_system(doc)
    n_paths, horizon, cfg = _sim_numbers(doc, args, ["simulate"])
    if n_paths < 1:
        raise ConfigError("n_paths must be >= 1")
    inits = _parse_inits(doc, spec, ["simulate"])
    seed = args.seed if args.seed is not None else doc.get_int("simulate", "seed", 0)
    ensemble = simulate_ensemble(spec, inits, n_paths, seed, horizon, cfg)

    outdir = Path(args.out)
    outdir.mkdir(parents=True, exist_ok=True)
    header = (["path_id", "t", "j"] + [f"x_{i+1}" for i in range(spec.n)]
              + [f"r_{i+1}" for i in range(spec.p)] + ["tau", "event"])
    rows = (row for pid, arc in enumerate(ensemble) for row in _arc_rows(arc, pid))
    csv_path = outdir / "simulate.csv"
    _write_csv(csv_path, header, rows)
    _write_manifest(outdir, "simulate", doc.digest(), seed, [csv_path.name], started)
    return 0


def _favg_from_config(doc: ConfigDocument, spec):
    raw = doc.get_str("average", "favg")
    if raw is None:
        return None
    try:
        exprs = compile_expressions([p for p in raw.split(";") if p.strip()],
                                    allowed_names(n=spec.n, p=spec.p))
    except ExpressionError as exc:
        raise ConfigError(f"[average] favg: {exc}") from exc
    if len(exprs) != spec.n:
        raise ConfigError(f"[average] favg needs {spec.n} expression(s)")
    return AverageField(exprs, spec.n)


def _average_grids(doc: ConfigDocument, spec):
    x_raw = doc.get_str("average", "x_values", "-3 -2 -1 1 2 3")
    if ";" in x_raw:
        x_axes = [np.array([float(t) for t in chunk.split()])
                  for chunk in x_raw.split(";") if chunk.strip()]
    else:
        x_axes = [np.array([float(t) for t in x_raw.split()])]
    if len(x_axes) != spec.n:
        raise ConfigError(f"[average] x_values needs {spec.n} axis/axes")
    r_points = doc.get_int("average", "r_points", 3)
    lo, hi = spec.flow_or_jump_set.bounding_box()
    r_axes = [np.linspace(lo[d], hi[d], r_points) if lo[d] < hi[d]
              else np.array([lo[d]]) for d in range(spec.p)]
    period = doc.get_float("average", "tau_period", 2.0 * np.pi)
    tau_points = doc.get_int("average", "tau_points", 256)
    tau_grid = np.linspace(0.0, period, tau_points, endpoint=False)
    if doc.has("average", "T_values"):
        T_grid = np.array(doc.get_float_list("average", "T_values"))
    else:
        T_min = doc.get_float("average", "T_min", 0.5)
        T_max = doc.get_float("average", "T_max", 4.0 * np.pi)
        T_points = doc.get_int("average", "T_points", 20)
        T_grid = np.linspace(T_min, T_max, T_points)
    T_long = doc.get_float("average", "T_long_periods", 20.0) * period
    return x_axes, r_axes, tau_grid, T_grid, T_long


def cmd_average(args) -> int:
    started = time.time()
    doc = ConfigDocument.load(args.config)
    spec = load_system(doc)
    x_axes, r_axes, tau_grid, T_grid, T_long = _average_grids(doc, spec)
    favg = _favg_from_config(doc, spec)
    avg = estimate_average_map(spec, x_axes, r_axes, T_long, f_ave=favg)

    mesh = np.meshgrid(*x_axes, *r_axes, indexing="ij")
    nodes = np.stack([m.ravel() for m in mesh], axis=-1)
    keep = np.linalg.norm(nodes[:, : spec.n], axis=-1) > 0.0
    x_pts = nodes[keep][:, : spec.n]
    r_pts = np.stack(np.meshgrid(*r_axes, indexing="ij"),
                     axis=-1).reshape(-1, spec.p)
    gamma = estimate_gamma(spec, avg.f_ave, x_pts, r_pts, tau_grid, T_grid)
    jac = check_jacobian_average(spec, avg.f_ave, x_pts, r_pts, tau_grid, T_grid,
                                 state_gamma=gamma)

    outdir = Path(args.out)
    outdir.mkdir(parents=True, exist_ok=True)
    rows = []
    for k, T in enumerate(gamma.windows):
        wit = gamma.witnesses[k]
        rows.append([_f(T), _f(gamma.values[k]), _f(gamma.envelope[k]),
                     _f(jac.values[k]), _vec(wit[0]), _vec(wit[1]), _f(wit[2])])
    gamma_path = outdir / "average_gamma.csv"
    _write_csv(gamma_path, ["T", "gamma_raw", "gamma_envelope", "jac_gamma_raw",
                            "witness_x", "witness_r", "witness_tau"], rows)

    table_path = outdir / "average_favg.csv"
    table_rows = []
    tab = avg.table
    grid_nodes = np.stack([m.ravel() for m in np.meshgrid(*tab.axes, indexing="ij")],
                          axis=-1)
    flat_table = tab.table.reshape(-1, spec.n)
    for k in range(grid_nodes.shape[0]):
        table_rows.append([_vec(grid_nodes[k, : spec.n]), _vec(grid_nodes[k, spec.n:]),
                           _vec(flat_table[k])])
    _write_csv(table_path, ["x", "r", "favg"], table_rows)

    report_path = outdir / "average_report.txt"
    with open(report_path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(f"window length for the tabulated average: T_long = {_f(T_long)}\n")
        fh.write(f"registered closed form: {'yes' if favg is not None else 'no'}\n")
        fh.write(f"max nodal deviation from closed form: {_f(avg.nodal_residual)}\n")
        if gamma.envelope[0] > 0.0:
            trend = gamma.envelope[-1] / gamma.envelope[0]
            fh.write(f"gamma trend envelope(T_last)/envelope(T_first) = {_f(trend)} "
                     f"(diagnostic: <= 0.1 indicates a well-averaged field)\n")
        fh.write("jacobian residual exceeds state gamma envelope at T values: ")
        if jac.exceeds_state_envelope and any(jac.exceeds_state_envelope):
            flagged = [str(float(T)) for T, bad
                       in zip(jac.windows, jac.exceeds_state_envelope) if bad]
            fh.write(", ".join(flagged) + "\n")
        else:
            fh.write("none\n")
        fh.write("results are grid-certified suprema, not proofs\n")
    seed = args.seed if args.seed is not None else 0
    _write_manifest(outdir, "average", doc.digest(), seed,
                    [gamma_path.name, table_path.name, report_path.name], started)
    return 0


def cmd_certify(args) -> int:
    started = time.time()
    doc = ConfigDocument.load(args.config)
    spec = load_system(doc)
    raw_v = doc.get_str("certify", "V")
    if raw_v is None:
        raise ConfigError("missing [certify] V (certificate candidate expression)")
    try:
        v_expr = compile_expressions([raw_v], allowed_names(n=spec.n, p=spec.p))[0]
    except ExpressionError as exc:
        raise ConfigError(f"[certify] V: {exc}") from exc
    V = ScalarField(v_expr)
    favg = _favg_from_config(doc, spec)
    if favg is None:
        raise ConfigError("certification needs [average] favg (registered average map)")
    avg = build_average_system(spec, favg)
    grid = CertGrid(
        radius_min=doc.get_float("certify", "radius_min", 1e-3),
        radius_max=doc.get_float("certify", "radius_max", 10.0),
        radial_points=doc.get_int("certify", "radial_points", 25),
        r_points=doc.get_int("certify", "r_points", 5),
    )
    margin = args.safety_margin if args.safety_margin is not None \
        else doc.get_float("certify", "safety_margin", 0.0)
    cert = foster_certificate(V, avg, grid,
                              mc_samples=doc.get_int("certify", "mc_samples", 100_000),
                              safety_margin=margin)
    report = str(cert)
    print(report)
    outdir = Path(args.out)
    outdir.mkdir(parents=True, exist_ok=True)
    report_path = outdir / "certify_report.txt"
    with open(report_path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(report + "\n")
    seed = args.seed if args.seed is not None else 0
    _write_manifest(outdir, "certify", doc.digest(), seed, [report_path.name], started)
    return 0 if cert.verdict else 2


def cmd_recur(args) -> int:
    started = time.time()
    doc = ConfigDocument.load(args.config)
    spec = load_system(doc)
    sections = ["recur", "simulate"]
    n_paths, horizon, cfg = _sim_numbers(doc, args, sections)
    inits = _parse_inits(doc, spec, sections)
    radius = args.radius if args.radius is not None \
        else doc.get_float("recur", "radius", 0.1)
    rho = args.rho if args.rho is not None else doc.get_float("recur", "rho", 0.05)
    bound = args.bound if args.bound is not None else doc.get_float("recur", "R", 5.0)
    seed = args.seed if args.seed is not None else doc.get_int("recur", "seed", 0)

    ensemble = simulate_ensemble(spec, inits, n_paths, seed, horizon, cfg)
    rep = recurrence_estimate(ensemble, radius, rho, bound, spec)

    outdir = Path(args.out)
    outdir.mkdir(parents=True, exist_ok=True)
    rows = []
    for pid, (arc, ht) in enumerate(zip(ensemble, rep.hitting_times)):
        end = arc.end_time
        rows.append([
            str(pid), str(arc.seed), "1" if ht is not None else "0",
            _f(ht.t) if ht is not None else "", str(ht.j) if ht is not None else "",
            _f(ht.t + ht.j) if ht is not None else "",
            _f(end.t), str(end.j), arc.terminal_reason,
        ])
    paths_path = outdir / "recur_paths.csv"
    _write_csv(paths_path, ["path_id", "seed", "hit", "hit_t", "hit_j", "hit_sum",
                            "end_t", "end_j", "terminal_reason"], rows)
    summary_path = outdir / "recur_summary.csv"
    _write_csv(summary_path,
               ["radius", "rho", "R", "n_paths", "hit_fraction", "wilson_low",
                "wilson_high", "tau_hat", "stopped_before_budget"],
               [[_f(rep.target_radius), _f(rep.rho), _f(rep.R), str(rep.n_paths),
                 _f(rep.hit_fraction), _f(rep.wilson_low), _f(rep.wilson_high),
                 _f(rep.tau_hat) if rep.tau_hat is not None else "",
                 str(rep.stopped_before_budget)]])
    _write_manifest(outdir, "recur", doc.digest(), seed,
                    [paths_path.name, summary_path.name], started)
    return 0


def cmd_sweep(args) -> int:
    started = time.time()
    doc = ConfigDocument.load(args.config)
    spec = load_system(doc)
    sections = ["sweep", "recur", "simulate"]
    if args.eps:
        eps_list = [float(e) for e in args.eps]
    else:
        eps_list = doc.get_float_list("sweep", "eps_values")
    n_paths, horizon, cfg = _sim_numbers(doc, args, sections)
    inits = _parse_inits(doc, spec, sections)
    seed = args.seed if args.seed is not None else doc.get_int("sweep", "seed", 0)
    params = SweepParams(
        radius_max=doc.get_float("sweep", "radius_max", 2.0),
        rho=doc.get_float("sweep", "rho", 0.05),
        R=doc.get_float("sweep", "R", 5.0),
        n_paths=n_paths,
        horizon=horizon,
        cfg=cfg,
    )

    def family(eps: float):
        return dataclasses.replace(spec, epsilon=eps)

    result = epsilon_sweep(family, eps_list, inits, seed, params)

    outdir = Path(args.out)
    outdir.mkdir(parents=True, exist_ok=True)
    rows = []
    for ent in result.entries:
        rows.append([_f(ent.epsilon),
                     _f(ent.certified_radius) if ent.certified_radius is not None else "",
                     _f(ent.hit_fraction), str(ent.n_paths), ent.note])
    sweep_path = outdir / "sweep.csv"
    _write_csv(sweep_path, ["epsilon", "certified_radius", "hit_fraction",
                            "n_paths", "note"], rows)
    summary_path = outdir / "sweep_summary.txt"
    with open(summary_path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(f"radii nonincreasing as epsilon decreases: "
                 f"{'yes' if result.monotone else 'NO'}\n")
        for a, b in result.violations:
            fh.write(f"  violation between epsilon={a} and epsilon={b}\n")
    _write_manifest(outdir, "sweep", doc.digest(), seed,
                    [sweep_path.name, summary_path.name], started)
    return 0


FIG1_DEFAULTS = dict(T=1.0, p=0.1, epsilon=0.01, delta=0.1, t_max=10.0,
                     j_max=10_000, n_paths=100, stride=25)


def cmd_fig1(args) -> int:
    started = time.time()
    p = dict(FIG1_DEFAULTS)
    if args.paths is not None:
        p["n_paths"] = args.paths
    seed = args.seed if args.seed is not None else 0
    digest_src = "fig1:" + ",".join(f"{k}={v}" for k, v in sorted(p.items()))
    digest = hashlib.sha256(digest_src.encode()).hexdigest()

    spec = jammed_es(JamParams(p["T"], p["p"], p["epsilon"]), p["delta"])
    inits = [StateVec(np.array([-2.0]), np.array([0.0]), 0.0),
             StateVec(np.array([2.0]), np.array([0.0]), 0.0)]
    horizon = Horizon(p["t_max"], p["j_max"])
    cfg = IntegratorConfig()
    ensemble = simulate_ensemble(spec, inits, p["n_paths"], seed, horizon, cfg)
    # nominal run: same dynamics, jamming disabled by a unit-gain point mass
    nominal_spec = dataclasses.replace(spec, noise=JumpNoise.finite([[0.25]], [1.0]))
    nominal = simulate_path(nominal_spec, inits[1], seed, horizon, cfg)

    outdir = Path(args.out)
    outdir.mkdir(parents=True, exist_ok=True)
    header = ["path_id", "kind", "t", "j", "x_1", "r_1", "tau", "event"]
    stride = p["stride"]

    def all_rows():
        for pid, arc in enumerate(ensemble):
            yield from _arc_rows(arc, pid, stride=stride, kind="jammed")
        yield from _arc_rows(nominal, len(ensemble), stride=stride, kind="nominal")

    csv_path = outdir / "fig1.csv"
    _write_csv(csv_path, header, all_rows())

    def strided(seg_attr, arc):
        ts, ys = [], []
        for seg in arc.segments:
            ts.extend(seg.t[::stride])
            ys.extend(getattr(seg, seg_attr)[::stride, 0])
            ts.append(seg.t[-1])
            ys.append(getattr(seg, seg_attr)[-1, 0])
        return ts, ys

    main_panel = Panel("sample paths under periodic random jamming", "t", "x")
    for arc in ensemble:
        ts, ys = strided("x", arc)
        main_panel.curves.append(Curve(ts, ys, "#999999", 0.6, 0.45))
    ts, ys = strided("x", nominal)
    main_panel.curves.append(Curve(ts, ys, "#1f4fbf", 1.4, 1.0))
    clock_panel = Panel("resetting clock (jump instants)", "t", "r")
    ts, ys = strided("r", nominal)
    clock_panel.curves.append(Curve(ts, ys, "#1f4fbf", 0.9, 1.0))
    svg_path = outdir / "fig1.svg"
    with open(svg_path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(render_panels([main_panel, clock_panel]))
    _write_manifest(outdir, "fig1", digest, seed, [csv_path.name, svg_path.name],
                    started)
    return 0


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="hybridavg",
        description="Simulate stochastic hybrid systems and verify averaging-based "
                    "stability certificates.")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(sp, config_required=True):
        if config_required:
            sp.add_argument("--config", required=True, help="path to the run config")
        sp.add_argument("--seed", type=int, default=None, help="base RNG seed")
        sp.add_argument("--out", default="out", help="output directory")

    sp = sub.add_parser("simulate", help="run an ensemble and dump trajectories")
    common(sp)
    sp.add_argument("--paths", type=int, default=None)
    sp.add_argument("--t-max", dest="t_max", type=float, default=None)
    sp.set_defaults(fn=cmd_simulate)

    sp = sub.add_parser("average", help="estimate the average map and gamma curve")
    common(sp)
    sp.set_defaults(fn=cmd_average)

    sp = sub.add_parser("certify", help="check the stability certificate (exit 2 on fail)")
    common(sp)
    sp.add_argument("--safety-margin", dest="safety_margin", type=float, default=None)
    sp.set_defaults(fn=cmd_certify)

    sp = sub.add_parser("recur", help="estimate recurrence of an inflated target ball")
    common(sp)
    sp.add_argument("--paths", type=int, default=None)
    sp.add_argument("--t-max", dest="t_max", type=float, default=None)
    sp.add_argument("--radius", type=float, default=None)
    sp.add_argument("--rho", type=float, default=None)
    sp.add_argument("--bound", type=float, default=None, help="initial-condition bound R")
    sp.set_defaults(fn=cmd_recur)

    sp = sub.add_parser("sweep", help="certified recurrence radius per epsilon")
    common(sp)
    sp.add_argument("--paths", type=int, default=None)
    sp.add_argument("--t-max", dest="t_max", type=float, default=None)
    sp.add_argument("--eps", nargs="+", default=None, help="epsilon values (decreasing)")
    sp.set_defaults(fn=cmd_sweep)

    sp = sub.add_parser("fig1", help="reproduce the jammed-optimizer ensemble figure")
    common(sp, config_required=False)
    sp.add_argument("--paths", type=int, default=None)
    sp.set_defaults(fn=cmd_fig1)
    return parser


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse exits 2 on usage errors; exit code 2 is reserved for
        # analysis verdict failures, so usage problems map to 1
        return 0 if exc.code in (0, None) else 1
    try:
        return args.fn(args)
    except (ConfigError, ExpressionError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
