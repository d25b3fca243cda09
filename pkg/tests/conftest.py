import numpy as np
import pytest

import hybridavg as ha
from hybridavg.systems import average_flow_linear


def V_quad(x, r):
    return np.asarray(x, dtype=float)[..., 0] ** 2


@pytest.fixture(scope="session")
def actuator():
    return ha.jammed_actuator(ha.JamParams(T=1.0, p=0.1, epsilon=0.01))


@pytest.fixture(scope="session")
def es_system():
    return ha.jammed_es(ha.JamParams(T=1.0, p=0.1, epsilon=0.01), delta=0.1)


@pytest.fixture(scope="session")
def favg():
    return average_flow_linear


@pytest.fixture(scope="session")
def average_system(actuator, favg):
    return ha.build_average_system(actuator, favg)


def state(x, r=0.0, tau=0.0):
    return ha.StateVec(np.atleast_1d(np.asarray(x, dtype=float)),
                       np.atleast_1d(np.asarray(r, dtype=float)), tau)


def arcs_equal(a, b) -> bool:
    """Bitwise equality of two arcs (values, jump draws, and bookkeeping)."""
    if len(a.segments) != len(b.segments) or len(a.jumps) != len(b.jumps):
        return False
    for sa, sb in zip(a.segments, b.segments):
        if sa.j != sb.j:
            return False
        for fa, fb in ((sa.t, sb.t), (sa.x, sb.x), (sa.r, sb.r), (sa.tau, sb.tau)):
            if not (np.array_equal(fa, fb) and np.array_equal(np.signbit(fa), np.signbit(fb))):
                return False
    for ja, jb in zip(a.jumps, b.jumps):
        if ja.time != jb.time or not np.array_equal(ja.v, jb.v):
            return False
        if not (np.array_equal(ja.x_post, jb.x_post) and np.array_equal(ja.r_post, jb.r_post)):
            return False
    return a.terminal_reason == b.terminal_reason
