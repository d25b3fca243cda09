"""Execution of random hybrid solutions.

Flows are integrated with a fixed-step classical 4th-order scheme while r is
in C; entry of the (affine) auxiliary state into D is located exactly and the
step is clipped to land on the boundary; jumps then fire with jump priority
and a noise draw keyed by (seed, jump index).  The clock tau is never
integrated numerically: within each flow segment it is reconstructed as
tau_anchor + (t - t_anchor)/epsilon, which is exact up to a few ulps.

Ensembles of paths that share the same initial (r, tau) are advanced in
lockstep as one batched state array, which is bit-identical to running each
path alone because every map operation is elementwise across the batch.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from .core import (
    FlowSegment,
    HybridArc,
    HybridTime,
    JumpRecord,
    StateVec,
    SystemSpec,
    TERMINAL_HORIZON_J,
    TERMINAL_HORIZON_T,
    TERMINAL_LEFT_SETS,
)

#: environment variable controlling ensemble worker count (0 = auto)
WORKERS_ENV = "HYBRIDAVG_WORKERS"


@dataclass(frozen=True)
class Horizon:
    """Truncation of the (unbounded) hybrid time domain: stop at t_max or j_max.

    t_max = 0 is allowed and records only the initial sample, which lets
    recurrence counts degenerate to paths that start inside the target ball.
    """

    t_max: float
    j_max: int

    def __post_init__(self):
        if not (self.t_max >= 0.0 and math.isfinite(self.t_max)):
            raise ValueError("t_max must be finite and >= 0")
        if self.j_max < 1:
            raise ValueError("j_max must be a positive integer")


@dataclass(frozen=True)
class IntegratorConfig:
    """Fixed-step integrator parameters.

    The effective step is min(base_step, epsilon * substep_per_epsilon): the
    flow oscillates at rate 1/epsilon, and the default ratio 0.1 resolves one
    2*pi period of the fast clock with ~63 steps.
    """

    base_step: float = 0.01
    substep_per_epsilon: float = 0.1

    def __post_init__(self):
        if self.base_step <= 0.0 or self.substep_per_epsilon <= 0.0:
            raise ValueError("step parameters must be positive")

    def effective_step(self, epsilon: float) -> float:
        return min(self.base_step, epsilon * self.substep_per_epsilon)


class MapEvaluationError(RuntimeError):
    """A registered map produced a non-finite value during integration."""


def _check_finite(arr: np.ndarray, map_name: str, context: str):
    if not np.all(np.isfinite(arr)):
        bad = np.where(~np.all(np.isfinite(np.atleast_2d(arr)), axis=-1))[0]
        idx = int(bad[0]) if bad.size else 0
        raise MapEvaluationError(
            f"map '{map_name}' returned a non-finite value ({context}, batch element {idx})"
        )


def _rk4(spec: SystemSpec, x, r, tau: float, dt: float):
    """One classical 4th-order step of (f, w); tau handled analytically."""
    f, w, eps = spec.f, spec.w, spec.epsilon
    half = 0.5 * dt
    tau_h = tau + half / eps
    tau_f = tau + dt / eps
    k1x = np.asarray(f(x, r, tau, eps), dtype=float)
    k1r = np.asarray(w(r), dtype=float)
    k2x = np.asarray(f(x + half * k1x, r + half * k1r, tau_h, eps), dtype=float)
    k2r = np.asarray(w(r + half * k1r), dtype=float)
    k3x = np.asarray(f(x + half * k2x, r + half * k2r, tau_h, eps), dtype=float)
    k3r = np.asarray(w(r + half * k2r), dtype=float)
    k4x = np.asarray(f(x + dt * k3x, r + dt * k3r, tau_f, eps), dtype=float)
    k4r = np.asarray(w(r + dt * k3r), dtype=float)
    x2 = x + (dt / 6.0) * (k1x + 2.0 * (k2x + k3x) + k4x)
    r2 = r + (dt / 6.0) * (k1r + 2.0 * (k2r + k3r) + k4r)
    return x2, r2


def _probe_nonfinite(spec: SystemSpec, x, r, tau: float):
    """Name the map responsible for a non-finite step result (best effort)."""
    fx = np.asarray(spec.f(x, r, tau, spec.epsilon), dtype=float)
    if not np.all(np.isfinite(fx)):
        return "f"
    wr = np.asarray(spec.w(r), dtype=float)
    if not np.all(np.isfinite(wr)):
        return "w"
    return "f"  # overflowed mid-stage


def flow_step(s: StateVec, spec: SystemSpec, dt: float,
              cfg: IntegratorConfig | None = None) -> StateVec:
    """Advance a single state by one integrator step of length dt while r in C."""
    cfg = cfg or IntegratorConfig()
    if dt <= 0.0:
        raise ValueError("dt must be positive")
    if dt > cfg.effective_step(spec.epsilon) * (1.0 + 1e-12):
        raise ValueError("dt exceeds the effective integrator step")
    if not spec.C.contains(s.r):
        raise ValueError("flow_step requires r in C")
    x2, r2 = _rk4(spec, s.x[None, :], s.r[None, :], s.tau, dt)
    if not (np.all(np.isfinite(x2)) and np.all(np.isfinite(r2))):
        name = _probe_nonfinite(spec, s.x[None, :], s.r[None, :], s.tau)
        raise MapEvaluationError(f"map '{name}' returned a non-finite value in flow_step")
    return StateVec(x2[0], r2[0], s.tau + dt / spec.epsilon)


def _entry_interval(r: np.ndarray, w: np.ndarray, lo, hi):
    """Time interval [a, b] during which r + s*w stays inside one box.

    Returns None when the affine path never visits the box.
    """
    a, b = -np.inf, np.inf
    for rd, wd, lod, hid in zip(r, w, lo, hi):
        if wd == 0.0:
            if rd < lod or rd > hid:
                return None
            continue
        s1 = (lod - rd) / wd
        s2 = (hid - rd) / wd
        if s1 > s2:
            s1, s2 = s2, s1
        a = max(a, s1)
        b = min(b, s2)
        if a > b:
            return None
    return a, b


def detect_timer_crossing(s: StateVec, spec: SystemSpec, dt: float):
    """Exact sub-step time at which r enters D, assuming w constant on the step.

    Returns the crossing time in [0, dt], or None if the boundary is not
    reached.  Exact for affine auxiliary dynamics (timers).
    """
    if spec.D.contains(s.r):
        return 0.0
    w = np.asarray(spec.w(s.r[None, :]), dtype=float).ravel()
    hit = _entry_time(s.r, w, spec.D, dt)
    return None if hit is None else float(hit[0])


def _entry_time(r: np.ndarray, w: np.ndarray, target, dt: float):
    best = None
    for lo, hi in zip(target.lows, target.highs):
        iv = _entry_interval(r, w, lo, hi)
        if iv is None:
            continue
        a, b = iv
        if b < 0.0 or a > dt:
            continue
        cand = max(a, 0.0)
        if best is None or cand < best[0]:
            best = (cand, lo, hi)
    return best


def _exit_time(r: np.ndarray, w: np.ndarray, region) -> tuple:
    """Time at which r + s*w leaves the union region, with the last box hit.

    The union exit is the right end of the merged membership interval
    containing s = 0; abutting boxes chain exactly because shared faces
    produce bitwise-equal interval endpoints.
    """
    intervals = []
    for lo, hi in zip(region.lows, region.highs):
        iv = _entry_interval(r, w, lo, hi)
        if iv is not None:
            intervals.append((iv[0], iv[1], lo, hi))
    intervals.sort(key=lambda q: (q[0], q[1]))
    end = None
    box = None
    for a, b, lo, hi in intervals:
        if a <= 0.0 and end is None:
            end, box = b, (lo, hi)
        elif end is not None and a <= end and b > end:
            end, box = b, (lo, hi)
    return end, box


def _snap_into_box(rows: np.ndarray, lo, hi) -> np.ndarray:
    return np.clip(rows, np.asarray(lo), np.asarray(hi))


class _LockstepDiverged(Exception):
    """Auxiliary states stopped being identical across the batch after a jump."""


def _run_batch(spec: SystemSpec, x0: np.ndarray, r0: np.ndarray, tau0: float,
               seeds, horizon: Horizon, cfg: IntegratorConfig):
    """Advance a batch of paths sharing one auxiliary trajectory in lockstep.

    x0: (B, n); r0: (p,) shared by every path; seeds: length-B ints.
    Returns a list of B HybridArcs.  Raises _LockstepDiverged if a jump makes
    the auxiliary rows differ across the batch (caller falls back to per-path
    runs; with B = 1 divergence is impossible, so the batch-of-one run is the
    fully general solver).
    """
    B = x0.shape[0]
    cu = spec.flow_or_jump_set
    rrow = np.array(r0, dtype=float)
    if not cu.contains(rrow):
        raise ValueError("dead initial condition: r(0) lies in neither C nor D")
    X = np.array(x0, dtype=float)
    R = np.tile(rrow, (B, 1))
    t = 0.0
    j = 0
    inv_eps = 1.0 / spec.epsilon
    dt_eff = cfg.effective_step(spec.epsilon)
    t_anchor, tau_anchor = 0.0, float(tau0)
    tau_now = float(tau0)

    segments = []  # finished (j, t list, X list, R list, tau list)
    cur_t, cur_x, cur_r, cur_tau = [t], [X], [R], [tau_now]
    jumps = []  # (HybridTime, Xpre, Rpre, tau, V, Xpost, Rpost)
    terminal = None

    while True:
        if j >= horizon.j_max:
            terminal = TERMINAL_HORIZON_J
            break

        # jump priority first: jumps consume no flow time, so one firing at
        # exactly t = t_max still belongs to the truncated domain
        if spec.D.contains(rrow):
            # jump priority: fire immediately, draw keyed by jump index
            k = j + 1
            V = np.stack([spec.noise.draw(int(s), k) for s in seeds])
            Xp = np.asarray(spec.g(X, R, V), dtype=float)
            Rp = np.asarray(spec.h(R, V), dtype=float)
            Xp = np.broadcast_to(Xp, (B, spec.n)).astype(float, copy=True)
            Rp = np.broadcast_to(Rp, (B, spec.p)).astype(float, copy=True)
            _check_finite(Xp, "g", f"jump {k} at t={t}")
            _check_finite(Rp, "h", f"jump {k} at t={t}")
            if B > 1 and not np.all(Rp == Rp[0]):
                raise _LockstepDiverged()
            jumps.append((HybridTime(t, j), X, R, tau_now, V, Xp, Rp))
            segments.append((j, cur_t, cur_x, cur_r, cur_tau))
            j += 1
            X, R, rrow = Xp, Rp, Rp[0].copy()
            cur_t, cur_x, cur_r, cur_tau = [t], [X], [R], [tau_now]
            t_anchor, tau_anchor = t, tau_now
            if not cu.contains(rrow):
                terminal = TERMINAL_LEFT_SETS
                break
            continue

        if t >= horizon.t_max:
            terminal = TERMINAL_HORIZON_T
            break

        if not spec.C.contains(rrow):
            terminal = TERMINAL_LEFT_SETS
            break

        # flow: clip the step to the horizon, to entry into D, and to exit from C u D
        remain = horizon.t_max - t
        dt = min(dt_eff, remain)
        wrow = np.asarray(spec.w(rrow[None, :]), dtype=float).ravel()
        _check_finite(wrow, "w", f"t={t}")
        snap_box = None
        entry = _entry_time(rrow, wrow, spec.D, dt)
        exit_end, exit_box = _exit_time(rrow, wrow, cu)
        if exit_end is not None and exit_end <= 0.0:
            # on the boundary of C u D and moving out, with no jump available
            terminal = TERMINAL_LEFT_SETS
            break
        if exit_end is not None and exit_end < dt:
            dt = exit_end
            snap_box = exit_box
        if entry is not None and entry[0] <= dt:
            dt = entry[0]
            snap_box = (entry[1], entry[2])
        if dt <= 0.0:
            # r is bitwise on the D boundary without exact membership; snap it on
            if snap_box is not None:
                R = _snap_into_box(R, snap_box[0], snap_box[1])
                rrow = R[0].copy()
                continue
            terminal = TERMINAL_LEFT_SETS
            break

        X2, R2 = _rk4(spec, X, R, tau_now, dt)
        if not np.all(np.isfinite(X2)):
            name = _probe_nonfinite(spec, X, R, tau_now)
            bad = np.where(~np.all(np.isfinite(X2), axis=-1))[0]
            idx = int(bad[0]) if bad.size else 0
            raise MapEvaluationError(
                f"map '{name}' produced a non-finite value at t={t} (path seed {seeds[idx]})"
            )
        if snap_box is not None:
            R2 = _snap_into_box(R2, snap_box[0], snap_box[1])
        t = horizon.t_max if dt == remain else t + dt
        tau_now = tau_anchor + (t - t_anchor) * inv_eps
        X, R, rrow = X2, R2, R2[0].copy()
        cur_t.append(t)
        cur_x.append(X)
        cur_r.append(R)
        cur_tau.append(tau_now)

    segments.append((j, cur_t, cur_x, cur_r, cur_tau))
    return _assemble_arcs(segments, jumps, seeds, terminal, B)


def _assemble_arcs(segments, jumps, seeds, terminal, B):
    seg_parts = []
    for jj, ts, xs, rs, taus in segments:
        t_arr = np.asarray(ts, dtype=float)
        tau_arr = np.asarray(taus, dtype=float)
        x_arr = np.stack(xs, axis=0)  # (k, B, n)
        r_arr = np.stack(rs, axis=0)  # (k, B, p)
        for a in (t_arr, tau_arr, x_arr, r_arr):
            a.flags.writeable = False
        seg_parts.append((jj, t_arr, x_arr, r_arr, tau_arr))
    arcs = []
    for i in range(B):
        segs = tuple(
            FlowSegment(jj, t_arr, x_arr[:, i, :], r_arr[:, i, :], tau_arr)
            for jj, t_arr, x_arr, r_arr, tau_arr in seg_parts
        )
        jmps = tuple(
            JumpRecord(ht, xpre[i].copy(), rpre[i].copy(), tau, v[i].copy(),
                       xpost[i].copy(), rpost[i].copy())
            for ht, xpre, rpre, tau, v, xpost, rpost in jumps
        )
        arcs.append(HybridArc(segs, jmps, int(seeds[i]), terminal))
    return arcs


def simulate_path(spec: SystemSpec, init: StateVec, seed: int, horizon: Horizon,
                  cfg: IntegratorConfig | None = None) -> HybridArc:
    """Simulate one random solution from init under the given seed."""
    cfg = cfg or IntegratorConfig()
    if init.n != spec.n or init.p != spec.p:
        raise ValueError("initial state dimensions do not match the system")
    return _run_batch(spec, init.x[None, :], init.r, init.tau, [seed], horizon, cfg)[0]


def _worker_count() -> int:
    raw = os.environ.get(WORKERS_ENV, "1")
    try:
        k = int(raw)
    except ValueError:
        return 1
    if k == 0:
        return os.cpu_count() or 1
    return max(1, k)


def _one_path(args):
    spec, x0, r0, tau0, seed, horizon, cfg = args
    return _run_batch(spec, x0[None, :], r0, tau0, [seed], horizon, cfg)[0]


def simulate_ensemble(spec: SystemSpec, inits, n_paths: int, seed_base: int,
                      horizon: Horizon, cfg: IntegratorConfig | None = None):
    """Simulate n_paths solutions with seeds seed_base .. seed_base + n_paths - 1.

    Initial conditions are cycled from ``inits``.  Paths sharing one initial
    (r, tau) run in lockstep as a single batch; otherwise (or if a jump makes
    the auxiliary states diverge) each path runs on its own, optionally across
    processes controlled by the HYBRIDAVG_WORKERS environment variable.
    Either way path i is bit-identical to simulate_path run alone.
    """
    cfg = cfg or IntegratorConfig()
    if n_paths < 1:
        raise ValueError("n_paths must be >= 1")
    inits = list(inits)
    if not inits:
        raise ValueError("need at least one initial condition")
    chosen = [inits[i % len(inits)] for i in range(n_paths)]
    seeds = [int(seed_base) + i for i in range(n_paths)]
    for s in chosen:
        if s.n != spec.n or s.p != spec.p:
            raise ValueError("initial state dimensions do not match the system")

    r0 = chosen[0].r
    tau0 = chosen[0].tau
    lockstep = all(
        np.array_equal(s.r, r0) and s.tau == tau0 for s in chosen
    )
    if lockstep:
        x0 = np.stack([s.x for s in chosen])
        try:
            return _run_batch(spec, x0, r0, tau0, seeds, horizon, cfg)
        except _LockstepDiverged:
            pass  # auxiliary states split at a jump; rerun paths individually

    workers = _worker_count()
    jobs = [(spec, chosen[i].x, chosen[i].r, chosen[i].tau, seeds[i], horizon, cfg)
            for i in range(n_paths)]
    if workers > 1:
        try:
            with ProcessPoolExecutor(max_workers=workers) as pool:
                return list(pool.map(_one_path, jobs, chunksize=max(1, n_paths // (4 * workers))))
        except Exception:
            pass  # unpicklable maps or pool failure: run serially below
    out = []
    for i, job in enumerate(jobs):
        try:
            out.append(_one_path(job))
        except Exception as exc:
            raise type(exc)(f"path {i} (seed {seeds[i]}): {exc}") from exc
    return out
