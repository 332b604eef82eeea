"""Per-site atom-number dynamics during loading.

A tweezer starts with a random number of atoms. Pair events then happen at
rate ``beta * n (n - 1) / 2``. Each event is one of three kinds:

* a red-detuned pair loss with probability ``p20`` (two atoms lost);
* otherwise, with probability ``P_ic``, an inelastic blue-detuned collision,
  where the released energy decides whether one or two atoms escape;
* otherwise an elastic encounter that leaves the site unchanged.

The enhancement stage ends after a fixed duration, or as soon as at most one
atom is left. Imaging then applies a saturated pair loss, so the final count
is the parity of what remains.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import linalg, optimize, stats

CHUNK = 10_000


@dataclass(frozen=True)
class LoadingParams:
    # fitted so that red-only loading gives 0.60 and the two collision-map
    # optima give 0.811 (globally repulsive) and 0.742 (partially repulsive)
    mean_initial_occupancy: float = 3.52196
    pair_event_rate: float = 11.9524  # 1/s per unordered pair
    enhancement_duration: float = 0.5  # s
    red_pa_prob: float = 0.0885890
    detuning_energy_over_trap: float = 1.5
    single_atom_loss_rate: float = 0.0  # 1/s, only while n >= 2
    trials: int = 100_000
    rng_seed: int = 0
    initial_distribution: str = "truncated"  # or "poisson"
    max_initial: int = 3
    parity_readout: bool = True

    def __post_init__(self):
        if self.mean_initial_occupancy < 0:
            raise ValueError("mean initial occupancy must be non-negative")
        if not 0.0 <= self.red_pa_prob <= 1.0:
            raise ValueError("red_pa_prob must lie in [0, 1]")
        if self.enhancement_duration < 0:
            raise ValueError("enhancement duration must be non-negative")
        if self.pair_event_rate < 0 or self.single_atom_loss_rate < 0:
            raise ValueError("rates must be non-negative")
        if self.initial_distribution not in ("poisson", "truncated"):
            raise ValueError(f"unknown initial distribution {self.initial_distribution!r}")
        if self.max_initial < 1:
            raise ValueError("max_initial must be at least 1")


@dataclass
class SiteOccupancyTrace:
    times: list = field(default_factory=list)
    counts: list = field(default_factory=list)

    @property
    def final(self) -> int:
        return self.counts[-1]


@dataclass(frozen=True)
class EfficiencyEstimate:
    p_single: float
    low: float
    high: float
    trials: int
    successes: int


def wilson_interval(successes: int, trials: int, confidence: float = 0.95) -> tuple[float, float]:
    if trials <= 0:
        raise ValueError("need at least one trial")
    z = stats.norm.ppf(0.5 + confidence / 2.0)
    p = successes / trials
    den = 1.0 + z * z / trials
    mid = (p + z * z / (2 * trials)) / den
    half = z * math.sqrt(p * (1 - p) / trials + z * z / (4 * trials * trials)) / den
    # the exact bounds at 0 and n successes are 0 and 1; keep rounding out
    lo = 0.0 if successes == 0 else min(p, mid - half)
    hi = 1.0 if successes == trials else max(p, mid + half)
    return float(max(0.0, lo)), float(min(1.0, hi))


def blue_loss_count(detuning_energy_over_trap: float) -> int:
    """Atoms ejected by one inelastic blue-detuned collision."""
    x = detuning_energy_over_trap
    if x < 1.0:
        return 0
    return 1 if x < 2.0 else 2


def initial_distribution(params: LoadingParams, n_cut: int | None = None) -> np.ndarray:
    """Probability of n = 0..n_cut initial atoms."""
    lam = params.mean_initial_occupancy
    if params.initial_distribution == "truncated":
        n = np.arange(params.max_initial + 1)
        p = stats.poisson.pmf(n, lam) if lam > 0 else (n == 0).astype(float)
        return p / p.sum()
    n_cut = n_cut or int(lam + 12 * math.sqrt(lam + 1) + 12)
    n = np.arange(n_cut + 1)
    p = stats.poisson.pmf(n, lam) if lam > 0 else (n == 0).astype(float)
    p[-1] += max(0.0, 1.0 - p.sum())
    return p


def sample_initial_occupancy(lam: float, rng: np.random.Generator, size=None, max_initial: int | None = None):
    """Poisson(lam) counts, optionally conditioned on n <= max_initial."""
    if lam < 0:
        raise ValueError("mean occupancy must be non-negative")
    if max_initial is None:
        return rng.poisson(lam, size)
    p = initial_distribution(LoadingParams(lam, max_initial=max_initial, initial_distribution="truncated"))
    return rng.choice(len(p), size=size, p=p)


def simulate_red_pa(n0, duration: float, beta: float, rng: np.random.Generator):
    """Pair loss at rate beta * C(n, 2); vectorized over ``n0``."""
    n = np.array(n0, dtype=np.int64, copy=True)
    scalar = n.ndim == 0
    n = np.atleast_1d(n)
    if np.any(n < 0):
        raise ValueError("occupancy must be non-negative")
    t = np.zeros(n.shape)
    act = np.nonzero(n >= 2)[0] if beta > 0 else np.zeros(0, dtype=int)
    while act.size:
        t[act] += rng.exponential(1.0 / (beta * n[act] * (n[act] - 1) / 2.0))
        act = act[t[act] <= duration]
        n[act] -= 2
        act = act[n[act] >= 2]
    return int(n[0]) if scalar else n


def _pair_outcome(u: np.ndarray, n: np.ndarray, pic: float, params: LoadingParams, bg_share: np.ndarray):
    """Atoms removed by one event given a uniform draw ``u``."""
    k = blue_loss_count(params.detuning_energy_over_trap)
    p20 = params.red_pa_prob
    loss = np.zeros(n.shape, dtype=np.int64)
    bg = u < bg_share
    # rescale the draw into the pair-event branch
    v = np.where(bg, 0.0, (u - bg_share) / np.maximum(1.0 - bg_share, 1e-300))
    loss[bg] = 1
    pair = ~bg
    loss[pair & (v < p20)] = 2
    blue = pair & (v >= p20) & (v < p20 + (1.0 - p20) * pic)
    loss[blue] = k
    return np.minimum(loss, n)


def simulate_enhanced(n0: int, pic: float, params: LoadingParams, rng: np.random.Generator) -> SiteOccupancyTrace:
    """One trajectory of the enhancement stage as a list of (time, n)."""
    if not 0.0 <= pic <= 1.0:
        raise ValueError("P_ic must lie in [0, 1]")
    if n0 < 0:
        raise ValueError("occupancy must be non-negative")
    trace = SiteOccupancyTrace([0.0], [int(n0)])
    n, t = int(n0), 0.0
    beta, gamma = params.pair_event_rate, params.single_atom_loss_rate
    while n >= 2:
        rate = beta * n * (n - 1) / 2.0 + gamma * n
        if rate <= 0:
            break
        t += rng.exponential(1.0 / rate)
        if t > params.enhancement_duration:
            break
        share = np.array([gamma * n / rate])
        loss = int(_pair_outcome(np.array([rng.random()]), np.array([n]), pic, params, share)[0])
        if loss:
            n -= loss
            trace.times.append(t)
            trace.counts.append(n)
    return trace


def _enhance_batch(n: np.ndarray, pic: float, params: LoadingParams, rng: np.random.Generator) -> np.ndarray:
    n = n.astype(np.int64, copy=True)
    t = np.zeros(n.shape)
    beta, gamma, dur = params.pair_event_rate, params.single_atom_loss_rate, params.enhancement_duration
    act = np.nonzero(n >= 2)[0]
    while act.size:
        nn = n[act]
        rate = beta * nn * (nn - 1) / 2.0 + gamma * nn
        live = rate > 0
        act, nn, rate = act[live], nn[live], rate[live]
        if act.size == 0:
            break
        t[act] += rng.exponential(1.0 / rate)
        u = rng.random(act.size)
        ok = t[act] <= dur
        loss = _pair_outcome(u, nn, pic, params, gamma * nn / rate)
        n[act[ok]] -= loss[ok]
        act = act[ok]
        act = act[n[act] >= 2]
    return n


def _chunk_rng(seed: int, index: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(seed), int(index)]))


def _readout(n: np.ndarray, parity: bool) -> np.ndarray:
    return (n % 2 == 1) if parity else (n == 1)


def _initial_batch(params: LoadingParams, size: int, rng: np.random.Generator) -> np.ndarray:
    if params.initial_distribution == "poisson":
        return rng.poisson(params.mean_initial_occupancy, size)
    return sample_initial_occupancy(params.mean_initial_occupancy, rng, size, params.max_initial)


def final_occupancy(params: LoadingParams, pic: float) -> np.ndarray:
    """Atom counts after enhancement for every trial (before readout).

    Trials are split in fixed chunks seeded by (seed, chunk index), so the
    result does not depend on how the work is scheduled.
    """
    if not 0.0 <= pic <= 1.0:
        raise ValueError("P_ic must lie in [0, 1]")
    out = []
    for c, start in enumerate(range(0, params.trials, CHUNK)):
        rng = _chunk_rng(params.rng_seed, c)
        size = min(CHUNK, params.trials - start)
        out.append(_enhance_batch(_initial_batch(params, size, rng), pic, params, rng))
    return np.concatenate(out) if out else np.zeros(0, dtype=np.int64)


def loading_efficiency(params: LoadingParams, pic: float) -> EfficiencyEstimate:
    """Monte Carlo probability of ending with exactly one atom."""
    if params.trials < 100:
        raise ValueError("need at least 100 trials")
    ones = int(_readout(final_occupancy(params, pic), params.parity_readout).sum())
    lo, hi = wilson_interval(ones, params.trials)
    return EfficiencyEstimate(ones / params.trials, lo, hi, params.trials, ones)


def generator_matrix(params: LoadingParams, pic: float, n_max: int) -> np.ndarray:
    """Rate matrix Q[i, j] (i -> j) of the enhancement stage on 0..n_max."""
    q = np.zeros((n_max + 1, n_max + 1))
    beta, gamma = params.pair_event_rate, params.single_atom_loss_rate
    k = blue_loss_count(params.detuning_energy_over_trap)
    p20 = params.red_pa_prob
    blue = (1.0 - p20) * pic
    for n in range(2, n_max + 1):
        pair = beta * n * (n - 1) / 2.0
        q[n, max(n - 2, 0)] += pair * p20
        if k:
            q[n, max(n - k, 0)] += pair * blue
        q[n, n - 1] += gamma * n
        q[n, n] = 0.0
        q[n, n] = -q[n].sum()
    return q


def exact_final_distribution(params: LoadingParams, pic: float) -> np.ndarray:
    p0 = initial_distribution(params)
    if params.enhancement_duration == 0:
        return p0
    q = generator_matrix(params, pic, len(p0) - 1)
    return p0 @ linalg.expm(q * params.enhancement_duration)


def exact_efficiency(params: LoadingParams, pic: float) -> float:
    """Closed-form counterpart of :func:`loading_efficiency`."""
    p = exact_final_distribution(params, pic)
    n = np.arange(len(p))
    return float(p[_readout(n, params.parity_readout)].sum())


def sweep_loading(pic_grid, params: LoadingParams, delta_over_ftrap=None, method: str = "exact"):
    """Efficiency for every cell of a P_ic map.

    Columns are labelled by detuning / trap depth, which sets how many atoms
    an inelastic collision ejects. ``method="monte_carlo"`` returns an
    (efficiency, low, high) triple of arrays; ``"exact"`` returns one array.
    """
    pic_grid = np.asarray(pic_grid, dtype=float)
    if pic_grid.ndim == 1:
        pic_grid = pic_grid[:, None]
    if delta_over_ftrap is None:
        ratios = np.full(pic_grid.shape[1], params.detuning_energy_over_trap)
    else:
        ratios = np.broadcast_to(np.asarray(delta_over_ftrap, dtype=float), (pic_grid.shape[1],))
    eff = np.full(pic_grid.shape, np.nan)
    lo, hi = eff.copy(), eff.copy()
    for j, x in enumerate(ratios):
        p = replace(params, detuning_energy_over_trap=float(x))
        for i, pic in enumerate(pic_grid[:, j]):
            if np.isnan(pic):
                continue
            pic = float(np.clip(pic, 0.0, 1.0))
            if method == "exact":
                eff[i, j] = exact_efficiency(p, pic)
            elif method == "monte_carlo":
                est = loading_efficiency(p, pic)
                eff[i, j], lo[i, j], hi[i, j] = est.p_single, est.low, est.high
            else:
                raise ValueError(f"unknown method {method!r}")
    return eff if method == "exact" else (eff, lo, hi)


def red_only_baseline(params: LoadingParams) -> float:
    """Single-atom probability with red-detuned loss alone (saturated)."""
    p0 = initial_distribution(params)
    n = np.arange(len(p0))
    return float(p0[n % 2 == 1].sum())


def solve_initial_occupancy(target_baseline: float, max_initial: int = 3) -> float:
    """Mean occupancy whose truncated distribution gives the wanted baseline."""

    def gap(lam):
        return red_only_baseline(LoadingParams(lam, max_initial=max_initial)) - target_baseline

    return float(optimize.brentq(gap, 1e-6, 50.0, xtol=1e-12))


def calibrate(
    pic_high: float,
    eff_high: float,
    pic_low: float,
    eff_low: float,
    base: LoadingParams,
) -> LoadingParams:
    """Fit pair-event rate and red pair-loss probability to two optima.

    Each (P_ic, efficiency) pair is matched exactly by the Markov chain.
    """

    def resid(x):
        p = replace(base, pair_event_rate=float(np.exp(x[0])), red_pa_prob=float(1.0 / (1.0 + np.exp(-x[1]))))
        return [exact_efficiency(p, pic_high) - eff_high, exact_efficiency(p, pic_low) - eff_low]

    x0 = [math.log(max(base.pair_event_rate, 1e-3)), math.log(max(base.red_pa_prob, 1e-6) / max(1 - base.red_pa_prob, 1e-6))]
    sol = optimize.root(resid, x0, method="hybr", options={"xtol": 1e-13})
    if not sol.success or max(abs(r) for r in resid(sol.x)) > 1e-9:
        raise RuntimeError(f"calibration did not converge: {sol.message}")
    return replace(base, pair_event_rate=float(np.exp(sol.x[0])), red_pa_prob=float(1.0 / (1.0 + np.exp(-sol.x[1]))))


def mot_overlap_profile(
    sites,
    mode: str,
    mot_radius: float,
    rotation_radius: float = 0.0,
    peak: float = 1.0,
    center=(0.0, 0.0),
    n_angles: int = 720,
) -> np.ndarray:
    """Mean initial occupancy per site from the MOT density overlap.

    The cloud is a Gaussian with 1/e^2 radius ``mot_radius``. In rotating
    mode its centre circles ``center`` at ``rotation_radius`` and the density
    is time-averaged; both modes share the normalization of the fixed cloud,
    whose peak gives ``peak``.
    """
    if mot_radius <= 0 or rotation_radius < 0:
        raise ValueError("radii must be positive")
    if mode not in ("fixed", "rotating"):
        raise ValueError(f"unknown MOT mode {mode!r}")
    xy = np.asarray(sites, dtype=float).reshape(-1, 2) - np.asarray(center, dtype=float)
    if mode == "fixed" or rotation_radius == 0:
        d2 = np.sum(xy**2, axis=1)
        return peak * np.exp(-2.0 * d2 / mot_radius**2)
    a = 2.0 * np.pi * np.arange(n_angles) / n_angles
    cx, cy = rotation_radius * np.cos(a), rotation_radius * np.sin(a)
    d2 = (xy[:, 0:1] - cx) ** 2 + (xy[:, 1:2] - cy) ** 2
    return peak * np.exp(-2.0 * d2 / mot_radius**2).mean(axis=1)


def grid_sites(rows: int, cols: int, spacing: float = 1.0) -> np.ndarray:
    """Centred rectangular lattice of site coordinates, row-major."""
    y = (np.arange(rows) - (rows - 1) / 2.0) * spacing
    x = (np.arange(cols) - (cols - 1) / 2.0) * spacing
    yy, xx = np.meshgrid(y, x, indexing="ij")
    return np.column_stack([xx.ravel(), yy.ravel()])


def coefficient_of_variation(values) -> float:
    v = np.asarray(values, dtype=float)
    return float(v.std() / v.mean())
