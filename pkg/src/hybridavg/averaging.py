"""Numerical construction and verification of the averaged dynamics.

The central object is the sliding-window mean of the oscillating flow map at
epsilon = 0,

    avg(x, r, tau0, T) = (1/T) * integral_{tau0}^{tau0+T} f(x, r, s, 0) ds,

computed by composite Simpson quadrature.  From it we estimate the average
map f_ave on a grid, the convergence-rate curve gamma(T) bounding
|avg - f_ave| / |x|, the matching curve for the Jacobian of the residual,
and sampled lower bounds on the Lipschitz constants the theory requires.
All suprema are grid suprema: results are grid-certified, not proofs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .core import JumpNoise, SetDescriptor, SystemSpec

#: default Simpson panel density: panels per 2*pi of the fast clock
PANELS_PER_PERIOD = 40


def _simpson_weights(panels: int) -> np.ndarray:
    n_sub = 2 * panels
    w = np.ones(n_sub + 1)
    w[1:-1:2] = 4.0
    w[2:-1:2] = 2.0
    return w


def _panels_for(T: float, quad_points: Optional[int]) -> int:
    if quad_points is not None:
        return max(2, int(quad_points))
    return max(2, int(math.ceil(PANELS_PER_PERIOD * T / (2.0 * math.pi))))


def window_average(spec: SystemSpec, x, r, tau0: float, T: float,
                   quad_points: Optional[int] = None) -> np.ndarray:
    """Window mean of f(x, r, ., 0) over [tau0, tau0 + T] (Simpson, quad_points panels)."""
    if T <= 0.0:
        raise ValueError("window length T must be positive")
    panels = _panels_for(T, quad_points)
    if panels < 2:
        raise ValueError("need at least 2 quadrature panels")
    x = np.atleast_1d(np.asarray(x, dtype=float))
    r = np.atleast_1d(np.asarray(r, dtype=float))
    s = tau0 + np.arange(2 * panels + 1) * (T / (2 * panels))
    xt = np.broadcast_to(x, (s.shape[0], x.shape[0]))
    rt = np.broadcast_to(r, (s.shape[0], r.shape[0]))
    vals = np.asarray(spec.f(xt, rt, s, 0.0), dtype=float)
    if not np.all(np.isfinite(vals)):
        raise ValueError("flow map returned a non-finite value inside the window")
    h = T / (2 * panels)
    integral = (h / 3.0) * (_simpson_weights(panels) @ vals)
    return integral / T


def _window_means_batch(spec: SystemSpec, x, r, tau0s: np.ndarray, T: float,
                        panels: int) -> np.ndarray:
    """Window means for one (x, r) and many window starts; shape (len(tau0s), n)."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    r = np.atleast_1d(np.asarray(r, dtype=float))
    h = T / (2 * panels)
    offs = np.arange(2 * panels + 1) * h
    s = (tau0s[:, None] + offs[None, :]).ravel()
    xt = np.broadcast_to(x, (s.shape[0], x.shape[0]))
    rt = np.broadcast_to(r, (s.shape[0], r.shape[0]))
    vals = np.asarray(spec.f(xt, rt, s, 0.0), dtype=float)
    if not np.all(np.isfinite(vals)):
        raise ValueError("flow map returned a non-finite value inside the window")
    vals = vals.reshape(tau0s.shape[0], offs.shape[0], -1)
    w = _simpson_weights(panels)
    return (h / 3.0) * np.einsum("q,tqn->tn", w, vals) / T


class TabulatedMap:
    """Multilinear interpolant of a tabulated vector field over a product grid.

    Queries outside the grid are clamped to its hull.  Instances are plain
    data and safe to share or pickle.
    """

    def __init__(self, axes: Sequence[np.ndarray], table: np.ndarray):
        self.axes = [np.asarray(a, dtype=float) for a in axes]
        self.table = np.asarray(table, dtype=float)
        expect = tuple(len(a) for a in self.axes)
        if self.table.shape[:-1] != expect:
            raise ValueError(f"table shape {self.table.shape} does not match axes {expect}")

    def __call__(self, pts: np.ndarray) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        B, d = pts.shape
        if d != len(self.axes):
            raise ValueError("query dimension does not match the table axes")
        idx, frac = [], []
        for k, ax in enumerate(self.axes):
            if len(ax) == 1:
                idx.append(np.zeros(B, dtype=int))
                frac.append(np.zeros(B))
                continue
            q = np.clip(pts[:, k], ax[0], ax[-1])
            i = np.clip(np.searchsorted(ax, q, side="right") - 1, 0, len(ax) - 2)
            idx.append(i)
            frac.append((q - ax[i]) / (ax[i + 1] - ax[i]))
        out = np.zeros((B, self.table.shape[-1]))
        for corner in range(1 << d):
            wgt = np.ones(B)
            sel = []
            for k in range(d):
                hi = (corner >> k) & 1
                if len(self.axes[k]) == 1:
                    sel.append(idx[k])
                    if hi:
                        wgt = wgt * 0.0
                    continue
                sel.append(idx[k] + hi)
                wgt = wgt * (frac[k] if hi else (1.0 - frac[k]))
            out += wgt[:, None] * self.table[tuple(sel)]
        return out


@dataclass(frozen=True)
class AverageSpec:
    """The averaged system: flow (f_ave(x, r), w(r)), jumps reused verbatim.

    There is no fast clock and no epsilon dependence.  ``f_ave`` follows the
    batched convention f_ave(x, r) -> (B, n).
    """

    n: int
    p: int
    f_ave: Callable
    w: Callable
    g: Callable
    h: Callable
    C: SetDescriptor
    D: SetDescriptor
    noise: JumpNoise
    table: Optional[TabulatedMap] = None
    nodal_residual: float = 0.0

    def flow(self, x, r) -> np.ndarray:
        """Combined average vector field (f_ave(x, r), w(r)), batched."""
        fx = np.asarray(self.f_ave(x, r), dtype=float)
        wr = np.asarray(self.w(r), dtype=float)
        wr = np.broadcast_to(wr, (fx.shape[0], self.p))
        return np.concatenate([fx, wr], axis=-1)

    def to_system(self, epsilon: float = 1.0) -> SystemSpec:
        """Wrap as a SystemSpec (the clock becomes inert) so the solver can run it."""
        return SystemSpec(self.n, self.p, self.noise.m, _AveFlowAdapter(self.f_ave),
                          self.w, self.g, self.h, self.C, self.D, self.noise, epsilon)


class _AveFlowAdapter:
    """Presents a clock-free average map under the (x, r, tau, eps) signature."""

    def __init__(self, f_ave: Callable):
        self.f_ave = f_ave

    def __call__(self, x, r, tau, eps):
        return self.f_ave(x, r)


class _TableFlow:
    """Adapter turning a TabulatedMap over (x, r) into an f_ave(x, r) callable."""

    def __init__(self, table: TabulatedMap, n: int, p: int):
        self.table = table
        self.n = n
        self.p = p

    def __call__(self, x, r):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        r = np.broadcast_to(np.atleast_2d(np.asarray(r, dtype=float)), (x.shape[0], self.p))
        return self.table(np.concatenate([x, r], axis=-1))


def _as_axes(grid, what: str):
    if isinstance(grid, np.ndarray) and grid.ndim == 1:
        return [np.asarray(grid, dtype=float)]
    axes = [np.asarray(a, dtype=float).ravel() for a in grid]
    if not axes:
        raise ValueError(f"{what} must contain at least one axis")
    return axes


def estimate_average_map(spec: SystemSpec, x_grid, r_grid, T_long: float,
                         quad_points: Optional[int] = None,
                         f_ave: Optional[Callable] = None) -> AverageSpec:
    """Tabulate the long-window mean of the flow map and package the average system.

    ``x_grid`` / ``r_grid`` are per-dimension 1-D axes (a single array is one
    axis).  With a registered closed-form ``f_ave`` the table is verified
    against it and the returned AverageSpec wraps the closed form; otherwise
    the AverageSpec interpolates the table multilinearly, and an error is
    raised when midpoint interpolation residuals betray a too-coarse grid.
    """
    x_axes = _as_axes(x_grid, "x_grid")
    r_axes = _as_axes(r_grid, "r_grid")
    if len(x_axes) != spec.n or len(r_axes) != spec.p:
        raise ValueError("grid axes do not match system dimensions")
    panels = _panels_for(T_long, quad_points)
    axes = x_axes + r_axes
    shape = tuple(len(a) for a in axes)
    table = np.zeros(shape + (spec.n,))
    mesh = np.meshgrid(*axes, indexing="ij")
    flat = np.stack([m.ravel() for m in mesh], axis=-1)
    for row in range(flat.shape[0]):
        pt = flat[row]
        val = window_average(spec, pt[: spec.n], pt[spec.n:], 0.0, T_long, panels)
        table[np.unravel_index(row, shape)] = val

    tab = TabulatedMap(axes, table.reshape(shape + (spec.n,)))
    nodal = 0.0
    if f_ave is not None:
        closed = np.asarray(f_ave(flat[:, : spec.n], flat[:, spec.n:]), dtype=float)
        nodal = float(np.max(np.sqrt(np.sum((closed - table.reshape(-1, spec.n)) ** 2,
                                            axis=-1)))) if flat.shape[0] else 0.0
        return AverageSpec(spec.n, spec.p, f_ave, spec.w, spec.g, spec.h,
                           spec.C, spec.D, spec.noise, table=tab, nodal_residual=nodal)

    # tabulated fallback: check cell midpoints against fresh window means
    mids = []
    for k, ax in enumerate(axes):
        if len(ax) < 2:
            continue
        centers = 0.5 * (ax[:-1] + ax[1:])
        for c in centers[: min(len(centers), 5)]:
            for row in flat[:: max(1, flat.shape[0] // 4)]:
                q = row.copy()
                q[k] = c
                mids.append(q)
    floor = 1e-8 * max(1.0, float(np.max(np.abs(table))) if table.size else 1.0)
    worst_mid = 0.0
    for q in mids:
        direct = window_average(spec, q[: spec.n], q[spec.n:], 0.0, T_long, panels)
        interp = tab(q[None, :])[0]
        worst_mid = max(worst_mid, float(np.linalg.norm(direct - interp)))
    if worst_mid > 10.0 * max(nodal, floor):
        raise ValueError(
            f"average-map grid too coarse: midpoint interpolation residual {worst_mid:g} "
            f"exceeds 10x the nodal residual; refine the x/r grid"
        )
    return AverageSpec(spec.n, spec.p, _TableFlow(tab, spec.n, spec.p), spec.w,
                       spec.g, spec.h, spec.C, spec.D, spec.noise, table=tab,
                       nodal_residual=nodal)


@dataclass(frozen=True)
class GammaCurve:
    """Convergence-function estimate over a grid of window lengths.

    ``values`` are raw grid suprema; ``envelope`` is the least nonincreasing
    majorant (running max from the right), matching the required monotone
    convergence-function shape.  ``witnesses`` holds the (x, r, tau0) sample
    achieving each supremum.
    """

    windows: np.ndarray
    values: np.ndarray
    envelope: np.ndarray
    witnesses: tuple
    kind: str = "state"
    values_normalized: Optional[np.ndarray] = None
    exceeds_state_envelope: Optional[tuple] = None


def _envelope(values: np.ndarray) -> np.ndarray:
    return np.maximum.accumulate(values[::-1])[::-1]


def estimate_gamma(spec: SystemSpec, f_ave: Callable, x_grid, r_grid,
                   tau_grid, T_grid, quad_points: Optional[int] = None) -> GammaCurve:
    """Grid supremum of |window mean - f_ave| / |x| per window length T.

    Every x in the grid must be nonzero (the bound is normalized by |x|).
    The result is a Definition-style certificate at grid resolution: at every
    grid point the window residual is <= gamma(T) * |x| by construction.
    """
    x_pts = np.atleast_2d(np.asarray(x_grid, dtype=float))
    if x_pts.shape[1] != spec.n:
        x_pts = x_pts.reshape(-1, spec.n)
    r_pts = np.atleast_2d(np.asarray(r_grid, dtype=float))
    if r_pts.shape[1] != spec.p:
        r_pts = r_pts.reshape(-1, spec.p)
    tau0s = np.asarray(tau_grid, dtype=float).ravel()
    Ts = np.asarray(T_grid, dtype=float).ravel()
    norms = np.sqrt(np.sum(x_pts * x_pts, axis=-1))
    if np.any(norms == 0.0):
        raise ValueError("x grid must exclude 0 (residuals are normalized by |x|)")

    values = np.zeros(Ts.shape[0])
    witnesses = []
    for ti, T in enumerate(Ts):
        panels = _panels_for(float(T), quad_points)
        best = -1.0
        wit = None
        for xi in range(x_pts.shape[0]):
            for ri in range(r_pts.shape[0]):
                means = _window_means_batch(spec, x_pts[xi], r_pts[ri], tau0s,
                                            float(T), panels)
                ref = np.asarray(f_ave(x_pts[xi][None, :], r_pts[ri][None, :]),
                                 dtype=float)[0]
                resid = np.sqrt(np.sum((means - ref) ** 2, axis=-1)) / norms[xi]
                k = int(np.argmax(resid))
                if resid[k] > best:
                    best = float(resid[k])
                    wit = (x_pts[xi].copy(), r_pts[ri].copy(), float(tau0s[k]))
        values[ti] = best
        witnesses.append(wit)
    return GammaCurve(Ts, values, _envelope(values), tuple(witnesses))


def fd_step_for(x: np.ndarray, scale: float = 1e-5) -> float:
    """Central-difference step: scale * max(1, |x|)."""
    return scale * max(1.0, float(np.linalg.norm(x)))


def check_jacobian_average(spec: SystemSpec, f_ave: Callable, x_grid, r_grid,
                           tau_grid, T_grid, fd_step: Optional[float] = None,
                           quad_points: Optional[int] = None,
                           state_gamma: Optional[GammaCurve] = None) -> GammaCurve:
    """Window-averaged Jacobian of the residual d = f(., 0) - f_ave, per T.

    The Jacobian over (x, r) is taken by central differences; because
    quadrature is linear, differencing the window means equals window-
    averaging the Jacobian.  Values are raw Frobenius magnitudes (the
    theoretical bound carries no |x| factor); the |x|-normalized variant is
    reported alongside, and T values whose raw magnitude exceeds a provided
    state-residual envelope are flagged.
    """
    x_pts = np.atleast_2d(np.asarray(x_grid, dtype=float)).reshape(-1, spec.n)
    r_pts = np.atleast_2d(np.asarray(r_grid, dtype=float)).reshape(-1, spec.p)
    tau0s = np.asarray(tau_grid, dtype=float).ravel()
    Ts = np.asarray(T_grid, dtype=float).ravel()

    values = np.zeros(Ts.shape[0])
    values_norm = np.zeros(Ts.shape[0])
    witnesses = []
    for ti, T in enumerate(Ts):
        panels = _panels_for(float(T), quad_points)
        best, best_norm = -1.0, -1.0
        wit = None
        for xi in range(x_pts.shape[0]):
            x0 = x_pts[xi]
            xnorm = float(np.linalg.norm(x0))
            for ri in range(r_pts.shape[0]):
                r0 = r_pts[ri]
                h = fd_step if fd_step is not None else fd_step_for(np.concatenate([x0, r0]))
                cols = []
                z0 = np.concatenate([x0, r0])
                for d in range(spec.n + spec.p):
                    zp = z0.copy()
                    zm = z0.copy()
                    zp[d] += h
                    zm[d] -= h
                    mp = _window_means_batch(spec, zp[: spec.n], zp[spec.n:], tau0s,
                                             float(T), panels)
                    mm = _window_means_batch(spec, zm[: spec.n], zm[spec.n:], tau0s,
                                             float(T), panels)
                    fp = np.asarray(f_ave(zp[None, : spec.n], zp[None, spec.n:]),
                                    dtype=float)[0]
                    fm = np.asarray(f_ave(zm[None, : spec.n], zm[None, spec.n:]),
                                    dtype=float)[0]
                    cols.append(((mp - mm) - (fp - fm)[None, :]) / (2.0 * h))
                jac = np.stack(cols, axis=-1)  # (ntau, n, n+p)
                frob = np.sqrt(np.sum(jac * jac, axis=(1, 2)))
                k = int(np.argmax(frob))
                if frob[k] > best:
                    best = float(frob[k])
                    wit = (x0.copy(), r0.copy(), float(tau0s[k]))
                if xnorm > 0.0:
                    kn = int(np.argmax(frob / xnorm))
                    best_norm = max(best_norm, float(frob[kn] / xnorm))
        values[ti] = best
        values_norm[ti] = best_norm
        witnesses.append(wit)

    flags = None
    if state_gamma is not None:
        env = np.interp(Ts, state_gamma.windows, state_gamma.envelope)
        # slack absorbs finite-difference noise when the curves coincide
        flags = tuple(bool(v > e * (1.0 + 1e-6) + 1e-9) for v, e in zip(values, env))
    return GammaCurve(Ts, values, _envelope(values), tuple(witnesses),
                      kind="jacobian", values_normalized=values_norm,
                      exceeds_state_envelope=flags)


@dataclass(frozen=True)
class LipschitzEstimates:
    """Sampled max difference quotients: lower bounds on the true constants."""

    L_x: float
    L_eps: float
    L_g: float
    L_ave: float
    n_samples: int
    witnesses: dict = field(default_factory=dict)


def _pairs(k: int):
    for i in range(k - 1):
        yield i, i + 1
    for i in range(2, k):
        yield 0, i


def estimate_lipschitz(spec: SystemSpec, f_ave: Optional[Callable], x_grid,
                       r_grid, tau_grid, eps_grid=None) -> LipschitzEstimates:
    """Max difference quotients of f in x, f in eps (|x|-normalized), g in x, f_ave in x."""
    x_pts = np.atleast_2d(np.asarray(x_grid, dtype=float)).reshape(-1, spec.n)
    r_pts = np.atleast_2d(np.asarray(r_grid, dtype=float)).reshape(-1, spec.p)
    taus = np.asarray(tau_grid, dtype=float).ravel()
    if x_pts.shape[0] < 2:
        raise ValueError("need at least 2 distinct x grid points")
    if eps_grid is None:
        eps_grid = np.array([0.0, 0.5 * spec.epsilon, spec.epsilon])
    eps_grid = np.asarray(eps_grid, dtype=float).ravel()

    pair_idx = [(i, j) for i, j in _pairs(x_pts.shape[0])
                if not np.array_equal(x_pts[i], x_pts[j])]
    A = np.stack([x_pts[i] for i, _ in pair_idx])
    Bm = np.stack([x_pts[j] for _, j in pair_idx])
    gaps = np.sqrt(np.sum((A - Bm) ** 2, axis=-1))

    witnesses = {}

    L_x = 0.0
    for rr in r_pts:
        r_tile = np.broadcast_to(rr, (A.shape[0], spec.p))
        for eps in eps_grid:
            for tau in taus:
                fa = np.asarray(spec.f(A, r_tile, float(tau), float(eps)), dtype=float)
                fb = np.asarray(spec.f(Bm, r_tile, float(tau), float(eps)), dtype=float)
                q = np.sqrt(np.sum((fa - fb) ** 2, axis=-1)) / gaps
                k = int(np.argmax(q))
                if q[k] > L_x:
                    L_x = float(q[k])
                    witnesses["L_x"] = (tuple(A[k]), tuple(Bm[k]), tuple(rr),
                                        float(tau), float(eps))

    L_eps = 0.0
    xnorms = np.sqrt(np.sum(x_pts * x_pts, axis=-1))
    for ei in range(len(eps_grid) - 1):
        for ej in range(ei + 1, len(eps_grid)):
            de = abs(float(eps_grid[ej] - eps_grid[ei]))
            if de == 0.0:
                continue
            for rr in r_pts:
                r_tile = np.broadcast_to(rr, (x_pts.shape[0], spec.p))
                for tau in taus:
                    fa = np.asarray(spec.f(x_pts, r_tile, float(tau),
                                           float(eps_grid[ei])), dtype=float)
                    fb = np.asarray(spec.f(x_pts, r_tile, float(tau),
                                           float(eps_grid[ej])), dtype=float)
                    diff = np.sqrt(np.sum((fa - fb) ** 2, axis=-1))
                    mask = xnorms > 0.0
                    if not np.any(mask):
                        continue
                    q = diff[mask] / (xnorms[mask] * de)
                    k = int(np.argmax(q))
                    if q[k] > L_eps:
                        L_eps = float(q[k])
                        witnesses["L_eps"] = (tuple(x_pts[mask][k]), tuple(rr),
                                              float(tau), float(eps_grid[ei]),
                                              float(eps_grid[ej]))

    v_samp = spec.noise.values if spec.noise.kind == "finite-support" else \
        np.stack([spec.noise.draw(0, k + 1) for k in range(8)])
    d_pts = spec.D.grid(3)
    L_g = 0.0
    for rr in d_pts:
        r_tile = np.broadcast_to(rr, (A.shape[0], spec.p))
        for v in v_samp:
            v_tile = np.broadcast_to(v, (A.shape[0], spec.m))
            ga = np.asarray(spec.g(A, r_tile, v_tile), dtype=float)
            gb = np.asarray(spec.g(Bm, r_tile, v_tile), dtype=float)
            q = np.sqrt(np.sum((ga - gb) ** 2, axis=-1)) / gaps
            k = int(np.argmax(q))
            if q[k] > L_g:
                L_g = float(q[k])
                witnesses["L_g"] = (tuple(A[k]), tuple(Bm[k]), tuple(rr), tuple(v))

    L_ave = 0.0
    if f_ave is not None:
        for rr in r_pts:
            r_tile = np.broadcast_to(rr, (A.shape[0], spec.p))
            fa = np.asarray(f_ave(A, r_tile), dtype=float)
            fb = np.asarray(f_ave(Bm, r_tile), dtype=float)
            q = np.sqrt(np.sum((fa - fb) ** 2, axis=-1)) / gaps
            k = int(np.argmax(q))
            if q[k] > L_ave:
                L_ave = float(q[k])
                witnesses["L_ave"] = (tuple(A[k]), tuple(Bm[k]), tuple(rr))

    n_samples = len(pair_idx) * r_pts.shape[0] * len(taus) * len(eps_grid)
    return LipschitzEstimates(L_x, L_eps, L_g, L_ave, n_samples, witnesses)


def build_average_system(spec: SystemSpec, f_ave: Callable) -> AverageSpec:
    """Assemble the average system: flow (f_ave, w), jump maps and sets reused verbatim."""
    return AverageSpec(spec.n, spec.p, f_ave, spec.w, spec.g, spec.h,
                       spec.C, spec.D, spec.noise)
