import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ybtweezer import gate

RABI = 2 * math.pi * 15e6


def flat(omega_t, n=16, model=None):
    model = model or gate.GateModel(RABI)
    return gate.PulseWaveform(omega_t / model.rabi, np.zeros(n))


def random_pulse(rng, n=16):
    return gate.PulseWaveform(rng.uniform(6, 9) / RABI, rng.uniform(-np.pi, np.pi, n))


def test_model_and_pulse_validation():
    with pytest.raises(ValueError):
        gate.GateModel(0.0)
    with pytest.raises(ValueError):
        gate.GateModel(RABI, lifetime=0.0)
    with pytest.raises(ValueError):
        gate.PulseWaveform(0.0, np.zeros(8))
    with pytest.raises(ValueError):
        gate.PulseWaveform(1e-6, [0.0, np.nan])
    with pytest.raises(ValueError):
        gate.optimize_pulse(gate.GateModel(RABI), n_segments=4)


def test_single_atom_full_rabi_cycle_flips_sign():
    a1, _ = gate.gate_amplitudes(gate.GateModel(RABI), flat(2 * math.pi))
    assert a1 == pytest.approx(-1.0, abs=1e-12)


def test_pair_block_is_sqrt2_enhanced():
    # a 2pi cycle of the enhanced pair coupling
    _, a2 = gate.gate_amplitudes(gate.GateModel(RABI), flat(2 * math.pi / math.sqrt(2)))
    assert a2 == pytest.approx(-1.0, abs=1e-12)


def test_parked_rydberg_decays():
    tau = 10e-6
    model = gate.GateModel(1e-3, lifetime=tau)  # coupling negligible over the window
    t = 5e-6
    out = gate.evolve(model, gate.PulseWaveform(t, np.zeros(8)), {"0r": 1.0})
    assert abs(out["0r"]) == pytest.approx(math.exp(-t / (2 * tau)), rel=1e-9)
    assert out["00"] == 0


def test_exact_cz_has_unit_fidelity():
    assert gate.cz_map_fidelity() == 1.0
    f, _ = gate.fidelity_from_amplitudes(1j, 1.0)  # CZ up to a Z rotation
    assert f == pytest.approx(1.0, abs=1e-12)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**31), st.sampled_from([math.inf, 40e-6, 5e-6]), st.sampled_from([None, 2 * math.pi * 100e6]))
def test_norm_never_increases(seed, tau, blockade):
    rng = np.random.default_rng(seed)
    model = gate.GateModel(RABI, tau, blockade)
    for u in gate.segment_propagators(model, random_pulse(rng, 8)):
        sv = np.linalg.svd(u, compute_uv=False)
        assert sv.max() <= 1 + 1e-10
        if math.isinf(tau):
            np.testing.assert_allclose(sv, 1.0, atol=1e-10)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**31), st.floats(-np.pi, np.pi))
def test_global_phase_offset_invariance(seed, offset):
    rng = np.random.default_rng(seed)
    model = gate.GateModel(RABI, 40e-6)
    p = random_pulse(rng)
    q = gate.PulseWaveform(p.duration, p.phases + offset)
    a = gate.bell_fidelity(model, p).fidelity
    b = gate.bell_fidelity(model, q).fidelity
    assert b == pytest.approx(a, abs=1e-10)


def test_gradient_matches_finite_differences():
    rng = np.random.default_rng(7)
    model = gate.GateModel(RABI, 40e-6)
    for _ in range(10):
        p = random_pulse(rng, 10)
        f, grad = gate.fidelity_and_gradient(model, p)
        assert f == pytest.approx(gate.bell_fidelity(model, p).fidelity, abs=1e-12)
        x = np.append(p.phases, p.duration)
        num = np.empty_like(x)
        for k in range(x.size):
            h = 1e-6 if k < p.n_segments else 1e-6 * p.duration
            xp, xm = x.copy(), x.copy()
            xp[k] += h
            xm[k] -= h
            fp = gate.bell_fidelity(model, gate.PulseWaveform(xp[-1], xp[:-1])).fidelity
            fm = gate.bell_fidelity(model, gate.PulseWaveform(xm[-1], xm[:-1])).fidelity
            num[k] = (fp - fm) / (2 * h)
        scale = np.abs(num).max()
        np.testing.assert_allclose(grad, num, rtol=1e-5, atol=1e-5 * scale)


def test_time_reversed_pulse_same_fidelity(optimized_gates):
    model, opt = optimized_gates[40e-6]
    p = opt.pulse
    f = gate.bell_fidelity(model, p).fidelity
    for phases in (p.phases[::-1], -p.phases[::-1]):
        assert gate.bell_fidelity(model, gate.PulseWaveform(p.duration, phases)).fidelity == pytest.approx(f, abs=1e-6)


def test_error_budget_components(optimized_gates):
    model, opt = optimized_gates[math.inf]
    b = gate.error_budget(model, opt.pulse)
    assert b["decay"] == 0.0 and b["leakage"] == 0.0

    model, opt = optimized_gates[40e-6]
    b = gate.error_budget(model, opt.pulse)
    assert b["leakage"] == 0.0
    assert b["decay"] >= 0.8 * b["infidelity"]
    assert b["decay"] + b["leakage"] + b["residual"] == pytest.approx(b["infidelity"], abs=1e-15)


def test_finite_blockade_adds_leakage(optimized_gates):
    model, opt = optimized_gates[math.inf]
    weak = gate.GateModel(RABI, blockade=2 * math.pi * 30e6)
    b = gate.error_budget(weak, opt.pulse)
    assert b["leakage"] > 1e-4
    assert b["decay"] == 0.0


def test_rydberg_time_scales_decay_error(optimized_gates):
    # to first order the decay error is the Rydberg dwell time over tau
    model, opt = optimized_gates[40e-6]
    res = gate.bell_fidelity(model, opt.pulse)
    b = gate.error_budget(model, opt.pulse)
    assert b["decay"] == pytest.approx(res.rydberg_time / model.lifetime, rel=0.1)


def test_waveform_times():
    p = gate.PulseWaveform(1.0, np.zeros(4))
    np.testing.assert_allclose(p.times(), [0, 0.25, 0.5, 0.75])
