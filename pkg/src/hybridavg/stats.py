"""Ensemble statistics: hitting times, recurrence certification, mean-envelope fits.

These operations post-process immutable ensembles of arcs.  The recurrence
budget tau_hat is the (1 - rho) order-statistic of hitting t + j sums; the
exponential-in-the-mean fit anchors the envelope at the initial distance and
finds the largest rate that keeps the weighted means below it at every
evaluation time (a necessary-condition check on a deterministic grid, not a
bound over all stopping times).
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from .core import (
    HybridArc,
    HybridTime,
    SystemSpec,
    TERMINAL_LEFT_SETS,
    distances_to_target,
    hybrid_time_sum,
)
from .solver import Horizon, IntegratorConfig, simulate_ensemble

_WILSON_Z = 1.96  # 95% binomial interval


def _segment_distances(arc: HybridArc, spec: SystemSpec):
    for seg in arc.segments:
        yield seg, distances_to_target(seg.x, seg.r, spec)


def hitting_time(arc: HybridArc, radius: float, spec: SystemSpec) -> Optional[HybridTime]:
    """First hybrid time at which the distance to the target set drops below radius.

    Scans flow samples and jump post-states in hybrid-time order; the ball is
    open (strict inequality).  Returns None when the arc never enters it.
    """
    if radius <= 0.0:
        raise ValueError("radius must be positive")
    for seg, dists in _segment_distances(arc, spec):
        hits = np.where(dists < radius)[0]
        if hits.size:
            k = int(hits[0])
            return HybridTime(float(seg.t[k]), int(seg.j))
    return None


def wilson_interval(successes: int, trials: int, z: float = _WILSON_Z):
    """Wilson score interval for a binomial proportion (small-sample-safe)."""
    if trials == 0:
        return 0.0, 1.0
    phat = successes / trials
    denom = 1.0 + z * z / trials
    center = (phat + z * z / (2 * trials)) / denom
    half = z * math.sqrt(phat * (1 - phat) / trials + z * z / (4 * trials * trials)) / denom
    return max(0.0, center - half), min(1.0, center + half)


@dataclass(frozen=True)
class RecurrenceReport:
    """Empirical recurrence certificate for one inflated target ball."""

    target_radius: float
    rho: float
    R: float
    tau_hat: Optional[float]
    hit_fraction: float
    wilson_low: float
    wilson_high: float
    hitting_times: tuple  # per path: HybridTime or None
    stopped_before_budget: int
    n_paths: int

    @property
    def certified(self) -> bool:
        return self.hit_fraction >= 1.0 - self.rho


def recurrence_estimate(ensemble: Sequence[HybridArc], radius: float, rho: float,
                        R: float, spec: SystemSpec) -> RecurrenceReport:
    """Certify recurrence of the open radius-ball around the target set.

    A path counts as a success when it hits the ball within its simulated
    domain, or when it stops (leaves the flow and jump sets) before the
    certified budget tau_hat.  tau_hat is the (1 - rho) order statistic of
    hitting t + j values among hitting paths and is only reported when the
    success fraction reaches 1 - rho.
    """
    arcs = list(ensemble)
    if len(arcs) < 30:
        raise ValueError(f"ensemble too small for recurrence estimation ({len(arcs)} < 30)")
    if not (0.0 < rho < 1.0):
        raise ValueError("rho must lie in (0, 1)")
    for arc in arcs:
        s0 = arc.initial_state()
        z0 = math.sqrt(float(np.sum(s0.x * s0.x) + np.sum(s0.r * s0.r)))
        if z0 > R * (1.0 + 1e-12):
            raise ValueError(f"initial condition with |z(0,0)| = {z0} lies outside R = {R}")

    hits = [hitting_time(arc, radius, spec) for arc in arcs]
    hit_sums = sorted(hybrid_time_sum(ht) for ht in hits if ht is not None)
    tau_hat = None
    if hit_sums:
        k = max(0, math.ceil((1.0 - rho) * len(hit_sums)) - 1)
        tau_hat = float(hit_sums[min(k, len(hit_sums) - 1)])

    stopped = 0
    successes = 0
    for arc, ht in zip(arcs, hits):
        if ht is not None:
            successes += 1
        elif (arc.terminal_reason == TERMINAL_LEFT_SETS and tau_hat is not None
              and hybrid_time_sum(arc.end_time) < tau_hat):
            stopped += 1
            successes += 1
    frac = successes / len(arcs)
    lo, hi = wilson_interval(successes, len(arcs))
    if frac < 1.0 - rho:
        tau_hat = None
    return RecurrenceReport(radius, rho, R, tau_hat, frac, lo, hi,
                            tuple(hits), stopped, len(arcs))


@dataclass(frozen=True)
class EnvelopeFit:
    """Exponential-in-the-mean envelope: mean[d * e^(k2*(t+j))] <= k1 * d0."""

    k1: float
    k2: float
    eval_times: np.ndarray
    empirical_means: np.ndarray
    weighted_means: np.ndarray  # at the fitted k2
    std_errors: np.ndarray
    initial_distance: float
    n_paths: int

    def envelope_satisfied(self, slack_sigmas: float = 0.0) -> bool:
        bound = self.k1 * self.initial_distance + slack_sigmas * self.std_errors
        return bool(np.all(self.weighted_means <= bound + 1e-12))


def _samples_at(arc: HybridArc, t_eval: float, spec: SystemSpec):
    """Distance, sample time, and jump count at the last sample with t <= t_eval."""
    best = None
    for seg, dists in _segment_distances(arc, spec):
        idx = np.searchsorted(seg.t, t_eval, side="right") - 1
        if idx >= 0:
            best = (float(dists[idx]), float(seg.t[idx]), int(seg.j))
        if seg.t[0] > t_eval:
            break
    if best is None:
        seg0 = arc.segments[0]
        d0 = distances_to_target(seg0.x[:1], seg0.r[:1], spec)[0]
        best = (float(d0), float(seg0.t[0]), int(seg0.j))
    return best


def uges_m_fit(ensemble: Sequence[HybridArc], eval_times, spec: SystemSpec,
               k2_cap: float = 50.0, tol: float = 1e-9) -> EnvelopeFit:
    """Fit the largest decay rate k2 keeping the weighted means anchored at t = 0.

    For each evaluation time the statistic is mean_i[d_i * e^(k2*(t+j_i))];
    the fitted k2 is the largest rate for which the maximum over the grid is
    still attained at the first evaluation point, so k1 comes out ~1.  Paths
    with zero initial distance are excluded with a warning.
    """
    arcs = list(ensemble)
    t_eval = np.asarray(eval_times, dtype=float).ravel()
    if t_eval.size == 0:
        raise ValueError("need at least one evaluation time")
    t_eval = np.sort(t_eval)

    d0s = []
    kept = []
    for arc in arcs:
        s0 = arc.initial_state()
        seg0 = arc.segments[0]
        d0 = float(distances_to_target(seg0.x[:1], seg0.r[:1], spec)[0])
        if d0 == 0.0:
            warnings.warn("excluding path with zero initial distance from envelope fit")
            continue
        d0s.append(d0)
        kept.append(arc)
    if not kept:
        raise ValueError("all paths start on the target set; nothing to fit")
    d0 = d0s[0]
    if any(abs(d - d0) > 1e-9 * max(1.0, d0) for d in d0s):
        raise ValueError("all paths must share one initial distance to the target set")

    dist = np.zeros((len(kept), t_eval.size))
    sums = np.zeros((len(kept), t_eval.size))  # per-path hybrid time t + j
    for i, arc in enumerate(kept):
        for k, te in enumerate(t_eval):
            d, ts, j = _samples_at(arc, float(te), spec)
            dist[i, k] = d
            sums[i, k] = ts + j

    base = sums[:, :1]  # anchor at the first evaluation point
    with np.errstate(divide="ignore"):
        log_dist = np.log(dist)  # -inf where a path sits on the target set

    def weighted(k2: float) -> np.ndarray:
        expo = np.minimum(log_dist + k2 * (sums - base), 700.0)
        return np.mean(np.exp(expo), axis=0)

    means = np.mean(dist, axis=0)
    anchor = means[0]

    def excess(k2: float) -> float:
        w = weighted(k2)
        return float(np.max(w[1:]) - anchor) if w.size > 1 else -1.0

    if t_eval.size == 1:
        k2 = k2_cap
    elif excess(0.0) > 0.0:
        lo, hi = -k2_cap, 0.0
        if excess(lo) > 0.0:
            k2 = lo
        else:
            while hi - lo > tol:
                mid = 0.5 * (lo + hi)
                if excess(mid) > 0.0:
                    hi = mid
                else:
                    lo = mid
            k2 = lo
    else:
        lo, hi = 0.0, k2_cap
        if excess(hi) <= 0.0:
            k2 = hi
        else:
            while hi - lo > tol:
                mid = 0.5 * (lo + hi)
                if excess(mid) > 0.0:
                    hi = mid
                else:
                    lo = mid
            k2 = lo

    wm = weighted(k2)
    k1 = float(np.max(wm) / d0)
    with np.errstate(over="ignore"):
        contrib = np.exp(np.minimum(log_dist + k2 * (sums - base), 700.0))
    ses = np.std(contrib, axis=0, ddof=1) / math.sqrt(len(kept)) \
        if len(kept) > 1 else np.zeros_like(wm)
    return EnvelopeFit(k1, float(k2), t_eval, means, wm, ses, d0, len(kept))


@dataclass(frozen=True)
class SweepEntry:
    epsilon: float
    certified_radius: Optional[float]
    hit_fraction: float
    n_paths: int
    bisection_slack: float
    note: str = ""


@dataclass(frozen=True)
class SweepResult:
    entries: tuple
    monotone: bool
    violations: tuple


@dataclass(frozen=True)
class SweepParams:
    radius_max: float
    rho: float = 0.05
    R: float = 5.0
    n_paths: int = 200
    horizon: Horizon = Horizon(10.0, 10_000)
    cfg: IntegratorConfig = IntegratorConfig()
    radius_rel_tol: float = 0.01
    radius_abs_tol: float = 1e-4


def epsilon_sweep(spec_family: Callable[[float], SystemSpec], eps_list,
                  inits, seed_base: int, params: SweepParams) -> SweepResult:
    """Smallest grid-certified recurrent radius per epsilon, by bisection.

    One ensemble is simulated per epsilon and reused across radii (hitting
    times are pure post-processing).  Radii should be nondecreasing in
    epsilon; violations beyond one bisection step of slack are flagged.
    """
    eps_arr = [float(e) for e in eps_list]
    if len(eps_arr) == 0:
        raise ValueError("need at least one epsilon")
    if any(b >= a for a, b in zip(eps_arr, eps_arr[1:])):
        raise ValueError("eps_list must be strictly decreasing")

    entries = []
    for eps in eps_arr:
        spec = spec_family(eps)
        ensemble = simulate_ensemble(spec, inits, params.n_paths, seed_base,
                                     params.horizon, params.cfg)

        def certified(radius: float):
            return recurrence_estimate(ensemble, radius, params.rho, params.R, spec)

        hi = params.radius_max
        rep_hi = certified(hi)
        if not rep_hi.certified:
            entries.append(SweepEntry(eps, None, rep_hi.hit_fraction,
                                      params.n_paths, math.inf,
                                      "not certified at horizon"))
            continue
        lo = 0.0
        while hi - lo > max(params.radius_abs_tol, params.radius_rel_tol * hi):
            mid = 0.5 * (lo + hi)
            rep = certified(mid)
            if rep.certified:
                hi = mid
                rep_hi = rep
            else:
                lo = mid
        entries.append(SweepEntry(eps, hi, rep_hi.hit_fraction, params.n_paths,
                                  hi - lo))

    violations = []
    prev = None
    for ent in entries:
        if ent.certified_radius is None:
            prev = None
            continue
        if prev is not None:
            slack = max(prev.bisection_slack, ent.bisection_slack)
            if ent.certified_radius > prev.certified_radius + slack:
                violations.append((prev.epsilon, ent.epsilon))
        prev = ent
    return SweepResult(tuple(entries), not violations, tuple(violations))
