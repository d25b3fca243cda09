"""Built-in example systems and the config-driven system loader.

Both built-ins share one skeleton: a scalar plant whose state is jammed every
T seconds through ``x+ = (0.75 + v) x`` with v = +0.75 (gain 1.5) with
probability p and v = -0.75 (reset to 0) otherwise, driven by a unit-rate
timer r in [0, T] that resets at T.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import partial

import numpy as np

from . import config as cfgmod
from .core import JumpNoise, SetDescriptor, SystemSpec
from .expressions import (
    AuxField,
    ExpressionError,
    FlowField,
    JumpFieldR,
    JumpFieldX,
    allowed_names,
    compile_expressions,
)


@dataclass(frozen=True)
class JamParams:
    """Reset period T (seconds), gain-1.5 probability p, time-scale epsilon."""

    T: float
    p: float
    epsilon: float

    def __post_init__(self):
        if not (self.T > 0.0 and math.isfinite(self.T)):
            raise ValueError("reset period T must be positive")
        if not 0.0 <= self.p <= 1.0:
            raise ValueError("jam probability p must lie in [0, 1]")
        if self.epsilon <= 0.0:
            raise ValueError("epsilon must be positive")


def _actuator_flow(u, x, r, tau, eps):
    xc = x[..., 0]
    out = -(xc * (1.0 + np.sin(tau)))
    if u != 0.0:
        out = out + u
    return out[..., None]


def _unit_rate(r):
    return np.ones_like(np.asarray(r, dtype=float))


def _jam_gain(x, r, v):
    return ((0.75 + v[..., 0]) * x[..., 0])[..., None]


def _reset_timer(r, v):
    return np.zeros_like(np.asarray(r, dtype=float))


def _jam_noise(p: float) -> JumpNoise:
    return JumpNoise.finite([[0.75], [-0.75]], [p, 1.0 - p])


def _timer_sets(T: float):
    return SetDescriptor.box([0.0], [T]), SetDescriptor.point([T])


def jammed_actuator(params: JamParams, u: float = 0.0) -> SystemSpec:
    """Scalar actuator xdot = -x(1 + sin tau) + u under periodic random jamming.

    The certificate pipeline assumes u = 0 (the default); a nonzero constant
    input is available for simulation experiments only.
    """
    C, D = _timer_sets(params.T)
    return SystemSpec(
        n=1, p=1, m=1,
        f=partial(_actuator_flow, float(u)),
        w=_unit_rate,
        g=_jam_gain,
        h=_reset_timer,
        C=C, D=D,
        noise=_jam_noise(params.p),
        epsilon=params.epsilon,
    )


def _es_flow(delta, x, r, tau, eps):
    # gradient-seeking field with quadratic cost and dither amplitude
    # a(x) = max(delta, |x|): outside the delta-ball the normalized form,
    # inside the raw field with a = delta (locally Lipschitz, origin not
    # invariant there).
    xc = x[..., 0]
    s = np.sin(tau)
    outer = -(xc * s) - 2.0 * xc * (s * s) - np.abs(xc) * (s * s * s)
    inner = -((xc + delta * s) * (xc + delta * s)) * s / delta
    out = np.where(np.abs(xc) >= delta, outer, inner)
    return out[..., None]


def jammed_es(params: JamParams, delta: float) -> SystemSpec:
    """Dither-based optimizer of a quadratic cost under periodic random jamming.

    ``delta`` is the regularization radius: the field satisfies the global
    regularity conditions outside the delta-ball, so only recurrence to a
    delta-neighborhood of the target set is expected.
    """
    if delta <= 0.0:
        raise ValueError("delta must be positive")
    C, D = _timer_sets(params.T)
    return SystemSpec(
        n=1, p=1, m=1,
        f=partial(_es_flow, float(delta)),
        w=_unit_rate,
        g=_jam_gain,
        h=_reset_timer,
        C=C, D=D,
        noise=_jam_noise(params.p),
        epsilon=params.epsilon,
    )


def average_flow_linear(x, r):
    """The shared average flow of both built-ins: f_ave(x) = -x."""
    return -np.atleast_2d(np.asarray(x, dtype=float))


def load_system(source) -> SystemSpec:
    """Build a SystemSpec from a config document (path, text, or ConfigDocument).

    ``[system] kind`` selects a built-in (``jammed-actuator``, ``jammed-es``)
    or ``custom``, in which case the maps are compiled from expressions and
    the noise from the ``[noise]`` section.  Raises ConfigError with a
    location for parse errors, unknown symbols, and dimension mismatches.
    """
    doc = cfgmod.as_document(source)
    sec = doc.section("system")
    kind = sec.get("kind")
    if kind is None:
        raise cfgmod.ConfigError("[system] section needs a 'kind'")

    if kind in ("jammed-actuator", "jammed-es"):
        params = JamParams(
            T=doc.get_float("system", "period", 1.0),
            p=doc.get_float("system", "jam_prob", 0.1),
            epsilon=doc.get_float("system", "epsilon", 0.01),
        )
        if kind == "jammed-actuator":
            return jammed_actuator(params, u=doc.get_float("system", "u", 0.0))
        return jammed_es(params, delta=doc.get_float("system", "delta", 0.1))

    if kind != "custom":
        raise cfgmod.ConfigError(f"unknown system kind {kind!r}")

    n = doc.get_int("system", "state_dim")
    p = doc.get_int("system", "aux_dim")
    m = doc.get_int("system", "noise_dim")
    epsilon = doc.get_float("system", "epsilon")

    def compile_field(key: str, count: int, allowed: set):
        texts = doc.get_expr_list("system", key)
        if len(texts) != count:
            raise cfgmod.ConfigError(
                f"[system] {key}: expected {count} expression(s) separated by ';', "
                f"got {len(texts)}")
        try:
            return compile_expressions(texts, allowed)
        except ExpressionError as exc:
            raise cfgmod.ConfigError(f"[system] {key}: {exc}") from exc

    f_exprs = compile_field("flow_x", n, allowed_names(n=n, p=p, tau=True, eps=True))
    w_exprs = compile_field("flow_r", p, allowed_names(p=p))
    g_exprs = compile_field("jump_x", n, allowed_names(n=n, p=p, m=m))
    h_exprs = compile_field("jump_r", p, allowed_names(p=p, m=m))

    C = doc.get_set("system", "flow_set", p)
    D = doc.get_set("system", "jump_set", p)

    noise_sec = doc.section("noise")
    nkind = noise_sec.get("kind", "finite")
    if nkind != "finite":
        raise cfgmod.ConfigError(
            "config noise must be kind = finite; samplers are registered in code")
    atoms = doc.get_expr_list("noise", "values")
    values = []
    for atom in atoms:
        row = [float(tok) for tok in atom.split()]
        if len(row) != m:
            raise cfgmod.ConfigError(
                f"[noise] values: atom {atom!r} has {len(row)} component(s), expected {m}")
        values.append(row)
    probs = doc.get_float_list("noise", "probs")
    if len(probs) != len(values):
        raise cfgmod.ConfigError(
            f"[noise] probs: {len(probs)} probabilities for {len(values)} atoms")
    try:
        noise = JumpNoise.finite(values, probs)
    except ValueError as exc:
        raise cfgmod.ConfigError(str(exc)) from exc

    return SystemSpec(
        n=n, p=p, m=m,
        f=FlowField(f_exprs, n, p),
        w=AuxField(w_exprs, p),
        g=JumpFieldX(g_exprs, n),
        h=JumpFieldR(h_exprs, p),
        C=C, D=D,
        noise=noise,
        epsilon=epsilon,
    )
