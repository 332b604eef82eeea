import math

import pytest

from ybtweezer import gate

RABI = 2 * math.pi * 15e6


@pytest.fixture(scope="session")
def optimized_gates():
    """Default optimizer runs at tau = 40 us, 80 us and infinity (about a minute)."""
    out = {}
    for tau in (40e-6, 80e-6, math.inf):
        model = gate.GateModel(RABI, tau)
        out[tau] = (model, gate.optimize_pulse(model))
    return out
