"""Acceptance suite: one PASS/FAIL line per criterion.

The shipped recipes are run through the command line twice in separate
working directories; the first pass feeds criteria 3-8 and the second is
compared byte for byte for criterion 9. Run with ``pytest -v`` to see the
verdict lines in the log.
"""

import json
import math
import os
from dataclasses import replace
from pathlib import Path

import numpy as np
import pytest
from scipy import optimize

from ybtweezer import collision, gate, hologram, imaging
from ybtweezer import loading as ld
from ybtweezer.cli import main
from ybtweezer.species import YB174, TrapConfig

RECIPES = Path(__file__).resolve().parent.parent / "docs" / "recipes"

# (subcommand, recipe, output dir); order matters, load-sim reads pic maps
PLAN = [
    ("pic-sweep", "global_repulsive", "out/global"),
    ("pic-sweep", "partial_repulsive", "out/partial"),
    ("pic-sweep", "sigma_minus_high_field", "out/sigma_minus"),
    ("load-sim", "global_repulsive", "out/global"),
    ("load-sim", "partial_repulsive", "out/partial"),
    ("load-sim", "mot_and_array_size", "out/mot"),
    ("holo", "hologram", "out/holo"),
    ("img-sim", "imaging", "out/img"),
    ("img-analyze", "imaging", "out/img"),
    ("gate-opt", "gate", "out/gate"),
]


def verdict(capsys, n, ok, detail):
    with capsys.disabled():
        print(f"\n{'PASS' if ok else 'FAIL'} criterion {n}: {detail}")
    assert ok, detail


def _run_plan(root: Path):
    root.mkdir(parents=True, exist_ok=True)
    old = os.getcwd()
    os.chdir(root)
    try:
        codes = [main([cmd, "--config", str(RECIPES / f"{recipe}.yaml"), "--out", out]) for cmd, recipe, out in PLAN]
    finally:
        os.chdir(old)
    return codes


@pytest.fixture(scope="module")
def runs(tmp_path_factory):
    a = tmp_path_factory.mktemp("accept_a")
    b = tmp_path_factory.mktemp("accept_b")
    codes_a = _run_plan(a)
    return {"a": a / "out", "b": b, "codes_a": codes_a, "plan_b": lambda: _run_plan(b)}


def load(runs, rel):
    return json.loads((runs["a"] / rel).read_text())


# ---------------------------------------------------------------------------


def test_criterion_1_two_channel_supremum(capsys):
    res = optimize.minimize(
        lambda p: -collision.two_channel_integrand(p[0], p[1]), [0.3, 0.6], method="Nelder-Mead",
        options={"xatol": 1e-10, "fatol": 1e-14},
    )
    p1, p2 = res.x
    val = -res.fun
    ok = abs(val - 2 / 3) < 1e-4 and abs(p1 - 0.5) < 1e-4 and abs(p2 - 1 / 3) < 1e-4
    verdict(capsys, 1, ok, f"max {val:.8f} at ({p1:.6f}, {p2:.6f}); expected 2/3 at (1/2, 1/3) within 1e-4")


def test_criterion_2_single_channel_bound(runs, capsys):
    assert runs["codes_a"][1] == 0
    doc = load(runs, "partial/pic_map.json")
    pic = np.array(doc["pic"], dtype=float)
    bounded = pic.shape == (20, 20) and np.all(np.isfinite(pic)) and pic.max() <= 0.5
    # independent node-doubling check on every cell with the adaptivity switched off
    drive = collision.DriveConfig(
        saturation=1.0, detuning=1.0, polarization=(0, 1, 0), magnetic_field=9.0, tensor_light_shift=2 * math.pi * 1e6
    )
    trap = TrapConfig()
    worst = 0.0
    for x in doc["delta_over_ftrap"]:
        cache = {}
        for s in doc["saturation"]:
            d = replace(drive, saturation=s, detuning=collision.detuning_from_ratio(x, trap))
            base = collision.inelastic_probability(d, YB174, trap, 64, 32, max_theta=64, _cache=cache).pic
            fine = collision.inelastic_probability(d, YB174, trap, 128, 64, max_theta=128, _cache=cache).pic
            worst = max(worst, abs(fine - base))
    ok = bounded and worst < 1e-3
    verdict(capsys, 2, ok, f"max P_ic {pic.max():.4f} <= 1/2 on {pic.shape[0]}x{pic.shape[1]}; node doubling changes cells by <= {worst:.2e} (< 1e-3)")


def test_criterion_3_map_shapes(runs, capsys):
    g = load(runs, "global/pic_map.json")["argmax"]
    fs, fx = g["saturation"] / 100.0, g["delta_over_ftrap"] / 1.5
    near = all(0.5 <= r <= 2.0 for r in (fs, fx))
    prof = load(runs, "partial/pic_map.json")["profile"]
    th, f = np.array(prof["theta_deg"]), np.array(prof["f"])
    peak_deg = th[int(np.argmax(f))]
    vanishes = abs(f[0]) < 1e-12 and f.max() > 0
    centred = abs(peak_deg - 90) <= 20
    verdict(
        capsys, 3, near and vanishes and centred,
        f"global argmax (s={g['saturation']:g}, x={g['delta_over_ftrap']:g}) factors ({fs:.3f}, {fx:.3f}) within [1/2, 2]: {near}; "
        f"partial f(0)={f[0]:.1e}: {vanishes}; peak at {peak_deg:g} deg within 20 deg of 90: {centred} "
        f"(f(90)={f[len(f) // 2]:.3f}, max {f.max():.3f})",
    )


def test_criterion_4_loading(runs, capsys):
    assert runs["codes_a"][3:6] == [0, 0, 0]
    g = load(runs, "global/loading.json")
    p = load(runs, "partial/loading.json")
    eg = g["efficiency_map"]["monte_carlo_at_argmax"]["efficiency"]
    ep = p["efficiency_map"]["monte_carlo_at_argmax"]["efficiency"]
    base = g["red_only_baseline"]
    checks = [0.78 <= eg <= 0.84, 0.71 <= ep <= 0.78, abs(base - 0.60) <= 0.02]

    lam = 2.0
    z = []
    for kw, oracle in (
        (dict(red_pa_prob=0.0), 1 - math.exp(-lam)),
        (dict(red_pa_prob=0.3, parity_readout=False), (1 - math.exp(-2 * lam)) / 2),
    ):
        params = ld.LoadingParams(lam, initial_distribution="poisson", enhancement_duration=1e4, trials=100_000, **kw)
        pic = 1.0 if kw["red_pa_prob"] == 0.0 else 0.0
        est = ld.loading_efficiency(params, pic)
        z.append(abs(est.p_single - oracle) / math.sqrt(oracle * (1 - oracle) / est.trials))
    checks.append(max(z) <= 3)

    sizes = load(runs, "mot/loading.json")["array_sizes"]
    per_site = {s["exact_per_site"] for s in sizes}
    checks.append(len(per_site) == 1)
    verdict(
        capsys, 4, all(checks),
        f"global {eg:.4f} in [0.78, 0.84], partial {ep:.4f} in [0.71, 0.78], baseline {base:.4f} (0.60 +- 0.02), "
        f"oracle z-scores {z[0]:.2f}/{z[1]:.2f} (<= 3), per-site efficiency identical across {len(sizes)} array sizes",
    )


def test_criterion_5_sigma_minus(runs, capsys):
    assert runs["codes_a"][2] == 0
    sm = np.array(load(runs, "sigma_minus/pic_map.json")["pic"], dtype=float)
    gl = np.array(load(runs, "global/pic_map.json")["pic"], dtype=float)
    ratio = np.nanmax(sm) / np.nanmax(gl)
    verdict(capsys, 5, ratio < 0.2, f"sigma- max P_ic {np.nanmax(sm):.4f} is {ratio:.1%} of the global optimum {np.nanmax(gl):.4f} (< 20%)")


def test_criterion_6_wgs(runs, capsys):
    assert runs["codes_a"][6] == 0
    rep = load(runs, "holo/holo_report.json")
    # Parseval on every iteration of an independent run
    state = hologram.initial_state(hologram.target_grid(10, 10, 10, 512), 512, seed=0)
    for _ in range(rep["iterations"]):
        hologram.wgs_iterate(state)
    worst = max(max(state.power_error), rep["max_power_error"])
    ok = rep["uniformity"] >= 0.98 and rep["iterations"] <= 100 and worst < 1e-9
    verdict(capsys, 6, ok, f"uniformity {rep['uniformity']:.4f} after {rep['iterations']} iterations at 512^2; max Parseval error {worst:.1e}")


def test_criterion_7_imaging(runs, capsys):
    assert runs["codes_a"][7:9] == [0, 0]
    rep = load(runs, "img/fidelity.json")
    acc = rep["accuracy_vs_truth"]

    const = imaging.filter_frame(np.full((160, 160), 123.0))
    zero = bool(np.all(const == 0.0))

    inj = {"false_positive": 0.01, "false_negative": 0.02, "loss_per_image": 0.03}
    trip = imaging.simulate_triples(100_000, 0.6, inj["false_positive"], inj["false_negative"], inj["loss_per_image"], np.random.default_rng(0))
    est = imaging.estimate_fidelity(trip)
    rel = {k: abs(getattr(est, k) / v - 1) for k, v in inj.items()}

    tau = rep["lifetime_s"]
    ok = acc >= 0.99 and zero and max(rel.values()) <= 0.2 and abs(tau / 35.1 - 1) <= 0.05
    verdict(
        capsys, 7, ok,
        f"accuracy {acc:.4f} at 10x background; constant frame -> zero: {zero}; "
        f"triple estimator max relative error {max(rel.values()):.3f}; lifetime {tau:.2f} s vs 35.1 s",
    )


def test_criterion_8_gate(runs, optimized_gates, capsys):
    assert runs["codes_a"][9] == 0
    m40, o40 = optimized_gates[40e-6]
    m80, o80 = optimized_gates[80e-6]
    minf, oinf = optimized_gates[math.inf]
    f40 = o40.result.fidelity
    finf = oinf.result.fidelity
    wt = oinf.pulse.duration * minf.rabi
    d40 = gate.error_budget(m40, o40.pulse)["decay"]
    d80 = gate.error_budget(m80, o80.pulse)["decay"]
    ratio = d40 / d80
    cli = load(runs, "gate/gate_result.json")["bell_fidelity"]
    ok = abs(f40 - 0.9991) <= 0.0005 and finf >= 0.9999 and abs(wt - 7.6) <= 0.2 and abs(ratio / 2 - 1) <= 0.15 and cli == f40
    verdict(capsys, 8, ok, f"F(40 us) {f40:.5f} (0.9991 +- 0.0005); F(inf) {finf:.7f} at Omega*T {wt:.3f}; decay error ratio 40/80 us {ratio:.3f}")


def test_criterion_9_determinism(runs, capsys):
    codes_b = runs["plan_b"]()
    a, b = runs["a"], runs["b"] / "out"
    fa = sorted(p.relative_to(a).as_posix() for p in a.rglob("*") if p.is_file())
    fb = sorted(p.relative_to(b).as_posix() for p in b.rglob("*") if p.is_file())
    differ = [f for f in fa if f not in fb or (a / f).read_bytes() != (b / f).read_bytes()]
    ok = runs["codes_a"] == codes_b == [0] * len(PLAN) and fa == fb and not differ
    verdict(capsys, 9, ok, f"{len(PLAN)} subcommand runs repeated; {len(fa)} artifacts compared, {len(differ)} differ")
