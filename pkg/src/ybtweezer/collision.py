"""Blue-detuned light-assisted collisions between two ground-state atoms.

Pair states are written in the symmetric basis ``(|g e_-1>, |g e_0>, |g e_+1>)``.
The excited-manifold Hamiltonian (single-atom shifts plus the resonant
dipole-dipole coupling) is diagonalized as a function of the interatomic
distance; every eigen-channel that rises through the dressed ground level
``hbar * detuning`` gives a Landau-Zener crossing, and the per-angle loss
probabilities are averaged over the sphere.

Energies are in joules, frequencies in rad/s, lengths in metres.
"""

from __future__ import annotations

import itertools
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .species import HBAR, KB, MU_B, TWOPI, AtomicSpecies, TrapConfig

M_J = np.array([-1, 0, 1])

POL_SIGMA_MINUS = (1.0, 0.0, 0.0)
POL_PI = (0.0, 1.0, 0.0)
POL_SIGMA_PLUS = (0.0, 0.0, 1.0)
POL_MIXED = tuple(np.full(3, 1.0 / np.sqrt(3.0)))

# |<g g| H |g e_j>_sym| = sqrt(2) * hbar * Omega_j / 2
COUPLING_FACTOR = 1.0 / np.sqrt(2.0)

_PERMS = np.array(list(itertools.permutations(range(3))))


class CrossingError(RuntimeError):
    """The distance grid does not bracket a crossing that must exist."""


@dataclass(frozen=True)
class DriveConfig:
    """Collision-laser parameters.

    ``polarization`` holds the amplitudes on (sigma-, pi, sigma+), i.e. on
    the excited sublevels m_J = -1, 0, +1.
    """

    saturation: float
    detuning: float  # rad/s, blue > 0
    polarization: tuple = POL_PI
    magnetic_field: float = 0.0  # gauss
    tensor_light_shift: float = 0.0  # rad/s, applied to m_J = +-1

    def __post_init__(self):
        pol = np.asarray(self.polarization, dtype=complex)
        if pol.shape != (3,):
            raise ValueError("polarization must be a 3-vector")
        if abs(np.linalg.norm(pol) - 1.0) > 1e-12:
            raise ValueError("polarization must have unit norm")
        if self.saturation < 0:
            raise ValueError("saturation parameter must be non-negative")
        object.__setattr__(self, "polarization", tuple(complex(p) for p in pol))

    @property
    def pol(self) -> np.ndarray:
        return np.array(self.polarization, dtype=complex)

    def rabi_components(self, species: AtomicSpecies) -> np.ndarray:
        """Single-atom Rabi frequencies Omega_j = Gamma sqrt(s/2) p_j."""
        return species.transition_linewidth * np.sqrt(self.saturation / 2.0) * self.pol


@dataclass(frozen=True)
class PairHamiltonian:
    """H_shift + V_dd at fixed orientation; callable on distances."""

    shifts: tuple  # rad/s, m_J = -1, 0, +1
    c3: float
    theta: float
    phi: float = 0.0

    def __call__(self, r) -> np.ndarray:
        return np.diag(HBAR * np.asarray(self.shifts, dtype=float)) + dipole_dipole_matrix(
            r, self.theta, self.phi, self.c3
        )


@dataclass
class MolecularChannel:
    index: int
    r: np.ndarray
    energy: np.ndarray
    vectors: np.ndarray  # (len(r), 3)
    asymptote: float
    monotonicity: str
    system: PairHamiltonian


@dataclass
class CrossingInfo:
    r_c: float
    channel: int
    s_plus: float  # -dE/dr at r_c, positive for a repulsive curve
    vector: np.ndarray
    theta: float
    phi: float
    omega_eff: float | None = None


@dataclass
class PicResult:
    pic: float
    cos_theta: np.ndarray
    phi: np.ndarray
    p_tunnel: np.ndarray  # (n_theta, n_phi, 2): outer, inner; nan if absent
    integrand: np.ndarray  # (n_theta, n_phi)
    metadata: dict = field(default_factory=dict)


@dataclass
class SweepResult:
    saturation: np.ndarray
    detuning_over_ftrap: np.ndarray
    pic: np.ndarray  # (n_s, n_delta)
    argmax: tuple
    errors: dict = field(default_factory=dict)
    metadata: dict = field(default_factory=dict)


def single_atom_shifts(drive: DriveConfig, species: AtomicSpecies) -> np.ndarray:
    """Tensor light shift plus linear Zeeman shift of m_J = -1, 0, +1 (rad/s)."""
    zeeman = species.excited_gJ * MU_B * (drive.magnetic_field * 1e-4) / HBAR
    return drive.tensor_light_shift * (M_J != 0) + zeeman * M_J


def dipole_dipole_matrix(r, theta: float, phi: float, c3: float) -> np.ndarray:
    """Resonant dipole-dipole coupling in the symmetric |g e_j> basis.

    Accepts scalar or array ``r``; the matrix axes are the trailing two.
    """
    r = np.asarray(r, dtype=float)
    if np.any(r <= 0):
        raise ValueError("interatomic distance must be positive")
    ct, st = math.cos(theta), math.sin(theta)
    s2t = math.sin(2.0 * theta)
    diag_pm = (3.0 * ct**2 - 1.0) / 2.0
    off1 = -3.0 * s2t / (2.0 * math.sqrt(2.0))
    off2 = -1.5 * st**2
    e1 = np.exp(-1j * phi)
    e2 = np.exp(-2j * phi)
    m = np.array(
        [
            [diag_pm, off1 * e1, off2 * e2],
            [off1 * np.conj(e1), 1.0 - 3.0 * ct**2, off1 * e1],
            [off2 * np.conj(e2), off1 * np.conj(e1), diag_pm],
        ],
        dtype=complex,
    )
    return (c3 / r**3)[..., None, None] * m


def _track(hams: np.ndarray):
    """Diagonalize a (B, N, 3, 3) stack and follow eigenvectors along N.

    Successive eigenvectors are matched by maximal total overlap; exact ties
    keep the previous ordering. Channel k is the k-th lowest at index 0.
    """
    w, v = np.linalg.eigh(hams)
    nb, nr = w.shape[:2]
    ew = np.empty_like(w)
    ev = np.empty_like(v)
    ew[:, 0], ev[:, 0] = w[:, 0], v[:, 0]
    prev = v[:, 0]
    rows = np.arange(3)
    for i in range(1, nr):
        ov = np.abs(np.einsum("bja,bjc->bac", prev.conj(), v[:, i])) ** 2
        scores = ov[:, rows, _PERMS].sum(axis=-1)  # (B, 6)
        sel = _PERMS[np.argmax(scores, axis=1)]
        ew[:, i] = np.take_along_axis(w[:, i], sel, axis=1)
        nv = np.take_along_axis(v[:, i], sel[:, None, :], axis=2)
        ph = np.einsum("bja,bja->ba", prev.conj(), nv)
        nv = nv * np.where(np.abs(ph) > 0, np.conj(ph) / np.maximum(np.abs(ph), 1e-300), 1.0)[:, None, :]
        ev[:, i] = nv
        prev = nv
    return ew, ev


def default_r_grid(shifts, c3: float, detuning: float, n: int = 240) -> np.ndarray:
    """Log-spaced distances covering every possible crossing with hbar*detuning.

    Inner edge: C3/r^3 exceeds ten times the largest relevant energy.
    Outer edge: C3/r^3 is 1e-3 of the smallest gap between hbar*detuning and
    an asymptote lying below it.
    """
    shifts = np.asarray(shifts, dtype=float)
    scale = abs(detuning) + np.max(np.abs(shifts))
    r_lo = (c3 / (10.0 * HBAR * scale)) ** (1.0 / 3.0)
    gaps = detuning - shifts[shifts < detuning]
    gap = max(np.min(gaps) if gaps.size else abs(detuning), 1e-3 * abs(detuning))
    spacings = np.diff(np.unique(shifts))
    spacings = spacings[spacings > 1e-9 * scale]
    if spacings.size:
        gap = min(gap, np.min(spacings))
    r_hi = (c3 / (1e-3 * HBAR * gap)) ** (1.0 / 3.0)
    return np.geomspace(r_lo, max(r_hi, 2.0 * r_lo), n)


def _monotonicity(energy_inward: np.ndarray) -> str:
    d = np.diff(energy_inward)
    tol = 1e-12 * np.max(np.abs(energy_inward))
    if np.all(d >= -tol):
        return "repulsive"
    if np.all(d <= tol):
        return "attractive"
    return "mixed"


def molecular_channels(shifts, c3: float, theta: float, phi: float, r_grid) -> list[MolecularChannel]:
    """Continuity-tracked eigen-channels of H_shift + V_dd on ``r_grid``."""
    r_grid = np.asarray(r_grid, dtype=float)
    if r_grid.ndim != 1 or np.any(r_grid <= 0) or np.any(np.diff(r_grid) <= 0):
        raise ValueError("r_grid must be positive and strictly increasing")
    system = PairHamiltonian(tuple(float(s) for s in shifts), c3, theta, phi)
    inward = r_grid[::-1]
    ew, ev = _track(system(inward)[None])
    asym = np.sort(HBAR * np.asarray(system.shifts))
    chans = []
    for k in range(3):
        chans.append(
            MolecularChannel(
                index=k,
                r=r_grid,
                energy=ew[0, ::-1, k].copy(),
                vectors=ev[0, ::-1, :, k].copy(),
                asymptote=float(asym[k]),
                monotonicity=_monotonicity(ew[0, :, k]),
                system=system,
            )
        )
    return chans


def _bisect(thetas, phis, shifts, c3, r_out, r_in, ref, level, rtol=1e-10):
    """Batched bisection for E(r) = level between r_out (below) and r_in (above).

    The tracked eigenvalue is the one overlapping most with ``ref`` (K, 3),
    which follows the outer bracket end as it moves.
    """
    k = len(r_out)
    r_out, r_in, ref = r_out.copy(), r_in.copy(), ref.copy()
    hs = np.diag(HBAR * np.asarray(shifts, dtype=float))
    mats = np.stack([dipole_dipole_matrix(1.0, t, p, c3) for t, p in zip(thetas, phis)]) if k else np.zeros((0, 3, 3))
    n_iter = int(np.ceil(np.log2(max(np.max((r_out - r_in) / r_in), 1e-16) / rtol))) + 1 if k else 0
    for _ in range(n_iter):
        mid = 0.5 * (r_out + r_in)
        w, v = np.linalg.eigh(hs + mats / mid[:, None, None] ** 3)
        idx = np.argmax(np.abs(np.einsum("kj,kjc->kc", ref.conj(), v)), axis=1)
        e = w[np.arange(k), idx]
        vec = v[np.arange(k), :, idx]
        above = e >= level
        r_in = np.where(above, mid, r_in)
        r_out = np.where(above, r_out, mid)
        ref = np.where(above[:, None], ref, vec)
    r_c = 0.5 * (r_out + r_in)
    w, v = np.linalg.eigh(hs + mats / r_c[:, None, None] ** 3) if k else (np.zeros((0, 3)), np.zeros((0, 3, 3)))
    idx = np.argmax(np.abs(np.einsum("kj,kjc->kc", ref.conj(), v)), axis=1) if k else np.zeros(0, int)
    vec = v[np.arange(k), :, idx]
    energy = w[np.arange(k), idx]
    # Hellmann-Feynman: dE/dr = <c| dV/dr |c> = -3/r <c|V|c>
    vdd = np.einsum("kj,kjl,kl->k", vec.conj(), mats, vec).real / r_c**3
    s_plus = 3.0 * vdd / r_c
    return r_c, s_plus, vec, energy


def _brackets(energy_inward, asym, level):
    """Outermost upward crossing per channel on an inward grid.

    energy_inward: (B, N, 3). Returns (b, k, i) with E[i-1] < level <= E[i].
    """
    below = energy_inward < level
    found = []
    nb = energy_inward.shape[0]
    for k in range(3):
        if not asym[k] < level:
            continue
        start_ok = below[:, 0, k]
        if not np.all(start_ok):
            bad = int(np.argmin(start_ok))
            raise CrossingError(
                f"channel {k} already above the dressed ground level at the outer grid edge (batch {bad})"
            )
        above = ~below[:, :, k]
        has = above.any(axis=1)
        first = np.argmax(above, axis=1)
        for b in np.nonzero(has)[0]:
            found.append((b, k, int(first[b])))
    return found


def find_crossings(channels: list[MolecularChannel], detuning: float) -> list[CrossingInfo]:
    """Outermost crossing of each channel rising through hbar*detuning.

    Sorted by descending r_c, so the first entry is the outer channel.
    """
    if not detuning > 0:
        raise ValueError("detuning must be positive (blue)")
    level = HBAR * detuning
    system = channels[0].system
    r = channels[0].r
    inward = np.stack([c.energy[::-1] for c in channels], axis=-1)[None]
    vecs_in = np.stack([c.vectors[::-1] for c in channels], axis=-1)
    asym = [c.asymptote for c in channels]
    hits = _brackets(inward, asym, level)
    if not hits:
        return []
    r_in_grid = r[::-1]
    ks = [h[1] for h in hits]
    idx = np.array([h[2] for h in hits])
    r_out = r_in_grid[idx - 1]
    r_inn = r_in_grid[idx]
    ref = np.stack([vecs_in[i - 1, :, k] for k, i in zip(ks, idx)])
    n = len(hits)
    r_c, s_plus, vec, _ = _bisect(
        [system.theta] * n, [system.phi] * n, system.shifts, system.c3, r_out, r_inn, ref, level
    )
    out = [
        CrossingInfo(float(r_c[j]), ks[j], float(s_plus[j]), vec[j], system.theta, system.phi)
        for j in range(n)
    ]
    return sorted(out, key=lambda c: -c.r_c)


def effective_coupling(drive: DriveConfig, species: AtomicSpecies, eigenvector) -> float:
    """Off-diagonal coupling (rad/s) between |g g> and a pair eigenstate.

    Omega_eff = |sum_j c_j^* Omega_j| / sqrt(2); the two-atom symmetric state
    enhances the single-atom element hbar*Omega_j/2 by sqrt(2).
    """
    c = np.asarray(eigenvector, dtype=complex)
    return float(COUPLING_FACTOR * abs(np.vdot(c, drive.rabi_components(species))))


def landau_zener_p(omega_eff, v, s_plus):
    """Adiabatic-passage probability 1 - exp(-2 pi hbar Omega^2 / (v |s+|)).

    With Omega the off-diagonal element in rad/s, hbar*Omega^2 and v*|s+|
    are both in J/s, so the exponent is dimensionless as written.
    """
    if np.any(np.asarray(v) <= 0):
        raise ValueError("collision velocity must be positive")
    x = 2.0 * np.pi * HBAR * np.square(omega_eff) / (np.asarray(v) * np.abs(s_plus))
    return -np.expm1(-x)


def collision_velocity(species: AtomicSpecies, trap: TrapConfig) -> float:
    """Mean Maxwell-Boltzmann relative speed sqrt(16 kT / (pi m))."""
    return float(np.sqrt(16.0 * KB * trap.temperature / (np.pi * species.mass)))


def single_channel_integrand(p):
    return 2.0 * p * (1.0 - p)


def two_channel_integrand(p_inner, p_outer):
    """Loss probability when the outer (P2) and inner (P1) crossings are passed in turn."""
    p1, p2 = p_inner, p_outer
    return (
        p2 * (1.0 - p2)
        + 2.0 * (1.0 - p2) * p1 * (1.0 - p1)
        + p2 * (1.0 - p2) * (p1**2 + (1.0 - p1) ** 2)
    )


@dataclass
class AngularCrossings:
    """Crossing data at phi = 0 for each polar node, independent of intensity.

    Slots are sorted outer-first and nan-padded; ``channel`` is the index of
    the channel owning each slot (-1 when empty), and ``asymptotes`` the
    separated-atom energy (J) of every channel.
    """

    cos_theta: np.ndarray
    weights: np.ndarray
    r_c: np.ndarray  # (n_theta, 3)
    s_plus: np.ndarray
    vectors: np.ndarray  # (n_theta, 3, 3) [node, slot, component]
    channel: np.ndarray
    asymptotes: np.ndarray


def angular_crossings(drive: DriveConfig, species: AtomicSpecies, cos_theta, weights=None, n_r: int = 240):
    if not drive.detuning > 0:
        raise ValueError("detuning must be positive (blue)")
    cos_theta = np.asarray(cos_theta, dtype=float)
    shifts = single_atom_shifts(drive, species)
    c3 = species.c3
    level = HBAR * drive.detuning
    inward = default_r_grid(shifts, c3, drive.detuning, n_r)[::-1]
    thetas = np.arccos(np.clip(cos_theta, -1.0, 1.0))
    mats = np.stack([dipole_dipole_matrix(1.0, t, 0.0, c3) for t in thetas])
    hams = np.diag(HBAR * shifts)[None, None] + mats[:, None] / inward[None, :, None, None] ** 3
    ew, ev = _track(hams)
    hits = _brackets(ew, np.sort(HBAR * shifts), level)
    nt = len(thetas)
    r_c = np.full((nt, 3), np.nan)
    s_plus = np.full((nt, 3), np.nan)
    vecs = np.zeros((nt, 3, 3), dtype=complex)
    chan = np.full((nt, 3), -1)
    if hits:
        b, k, i = (np.array(a) for a in zip(*hits))
        rc, sp, vec, _ = _bisect(thetas[b], np.zeros(len(b)), shifts, c3, inward[i - 1], inward[i], ev[b, i - 1, :, k], level)
        r_c[b, k] = rc
        s_plus[b, k] = sp
        vecs[b, k] = vec
        chan[b, k] = k
        order = np.argsort(-np.nan_to_num(r_c, nan=-1.0), axis=1)
        r_c = np.take_along_axis(r_c, order, axis=1)
        s_plus = np.take_along_axis(s_plus, order, axis=1)
        vecs = np.take_along_axis(vecs, order[:, :, None], axis=1)
        chan = np.take_along_axis(chan, order, axis=1)
    w = np.full(nt, np.nan) if weights is None else np.asarray(weights, dtype=float)
    return AngularCrossings(cos_theta, w, r_c, s_plus, vecs, chan, np.sort(HBAR * shifts))


def addressed_channels(drive: DriveConfig, species: AtomicSpecies, tol: float = 1e-12) -> np.ndarray:
    """Which channels (ordered by asymptote) connect to a level the light drives.

    A channel belongs to the single-atom level sharing its asymptotic energy;
    degenerate sublevels form one level, so the test does not depend on the
    arbitrary basis inside a degenerate manifold.
    """
    shifts = single_atom_shifts(drive, species)
    weight = np.abs(drive.pol) ** 2
    scale = max(np.max(np.abs(shifts)), abs(drive.detuning), 1.0)
    out = np.empty(3, dtype=bool)
    for k, e in enumerate(np.sort(shifts)):
        level = np.abs(shifts - e) <= 1e-9 * scale
        out[k] = weight[level].sum() > tol
    return out


def _integrand(drive, species, v, data: AngularCrossings, phis, channel_rule="asymptotic"):
    """f(theta, phi) plus the outer/inner tunnelling probabilities.

    Eigenvectors at phi follow from phi = 0 by c_j -> exp(i j phi) c_j,
    since V_dd(theta, phi) = D V_dd(theta, 0) D^dagger with D = diag(e^{i j phi}).
    """
    if channel_rule not in ("asymptotic", "local"):
        raise ValueError(f"unknown channel rule {channel_rule!r}")
    rabi = drive.rabi_components(species)
    rot = np.exp(1j * np.outer(phis, M_J)).conj()  # (n_phi, 3)
    nt, npf = len(data.cos_theta), len(phis)
    amp = np.einsum("tsj,pj,j->tps", data.vectors.conj(), rot, rabi) * COUPLING_FACTOR
    omega = np.abs(amp)
    present = np.broadcast_to(~np.isnan(data.r_c)[:, None, :], (nt, npf, 3))
    if channel_rule == "asymptotic":
        ok = np.append(addressed_channels(drive, species), False)
        present = present & ok[data.channel][:, None, :]
    r_c = np.broadcast_to(data.r_c[:, None, :], (nt, npf, 3))
    s_plus = np.broadcast_to(data.s_plus[:, None, :], (nt, npf, 3))
    order = np.argsort(np.where(present, -np.nan_to_num(r_c, nan=0.0), np.inf), axis=2, kind="stable")
    present = np.take_along_axis(present, order, axis=2)
    r_c = np.take_along_axis(r_c, order, axis=2)
    s_plus = np.take_along_axis(s_plus, order, axis=2)
    omega = np.take_along_axis(omega, order, axis=2)
    n_cross = present.sum(axis=2)
    rc0 = np.where(present[..., 0], r_c[..., 0], 1.0)
    rc1 = np.where(present[..., 1], r_c[..., 1], np.inf)
    # an exactly degenerate pair is rotated to its bright/dark combination
    degen = (n_cross >= 2) & (np.abs(rc0 - rc1) <= 1e-9 * rc0)
    if np.any(degen):
        omega[degen, 0] = np.hypot(omega[degen, 0], omega[degen, 1])
        omega[degen, 1] = 0.0
    p = landau_zener_p(omega, v, np.where(present, s_plus, 1.0))
    p = np.where(present, p, np.nan)
    f = np.zeros((nt, npf))
    one = n_cross == 1
    two = n_cross >= 2
    f[one] = single_channel_integrand(p[..., 0][one])
    f[two] = two_channel_integrand(p[..., 1][two], p[..., 0][two])
    near = two & (np.abs(rc0 - rc1) < 0.01 * rc0)
    flags = {"near_degenerate_nodes": int(near.sum()), "three_crossing_nodes": int((n_cross > 2).sum())}
    return f, p[..., :2], flags


def _pic_fixed(drive, species, v, data, n_phi, channel_rule):
    phis = TWOPI * np.arange(n_phi) / n_phi
    f, p, flags = _integrand(drive, species, v, data, phis, channel_rule)
    pic = 0.5 * float(np.dot(data.weights, f.mean(axis=1)))
    return pic, phis, p, f, flags


def _gauss_data(drive, species, n_theta, cache=None):
    if cache is not None and n_theta in cache:
        return cache[n_theta]
    x, w = np.polynomial.legendre.leggauss(n_theta)
    data = angular_crossings(drive, species, x, w)
    if cache is not None:
        cache[n_theta] = data
    return data


def inelastic_probability(
    drive: DriveConfig,
    species: AtomicSpecies,
    trap: TrapConfig,
    n_theta: int = 64,
    n_phi: int = 32,
    tol: float = 1e-4,
    max_theta: int = 1024,
    channel_rule: str = "asymptotic",
    _cache: dict | None = None,
) -> PicResult:
    """Sphere-averaged inelastic collision probability.

    Gauss-Legendre in cos(theta) times the periodic trapezoid rule in phi;
    both node counts double until successive estimates differ by < ``tol``.

    ``channel_rule="asymptotic"`` only admits channels whose separated-atom
    state is addressed by the drive polarization; ``"local"`` admits every
    channel rising through the dressed ground level.
    """
    if not drive.detuning > 0:
        raise ValueError("detuning must be positive (blue)")
    v = collision_velocity(species, trap)
    # phi only enters through interference between polarization components
    single_pol = int(np.count_nonzero(np.abs(drive.pol) > 0)) <= 1
    if single_pol:
        n_phi = 1
    data = _gauss_data(drive, species, n_theta, _cache)
    prev = _pic_fixed(drive, species, v, data, n_phi, channel_rule)
    err = float("inf")
    converged = drive.saturation == 0
    while not converged and n_theta < max_theta:
        n_theta *= 2
        n_phi = 1 if single_pol else 2 * n_phi
        data = _gauss_data(drive, species, n_theta, _cache)
        cur = _pic_fixed(drive, species, v, data, n_phi, channel_rule)
        err = abs(cur[0] - prev[0])
        prev = cur
        converged = err < tol
    pic, phis, p, f, flags = prev
    meta = {
        "n_theta": n_theta,
        "n_phi": n_phi,
        "error_estimate": 0.0 if drive.saturation == 0 else err,
        "converged": bool(converged),
        "coupling_factor": COUPLING_FACTOR,
        "channel_rule": channel_rule,
        "velocity": v,
        **flags,
    }
    return PicResult(pic=pic, cos_theta=data.cos_theta, phi=phis, p_tunnel=p, integrand=f, metadata=meta)


def angular_profile(
    drive: DriveConfig,
    species: AtomicSpecies,
    trap: TrapConfig,
    thetas,
    phi: float = 0.0,
    channel_rule: str = "asymptotic",
):
    """Integrand f(theta) at fixed phi before the sphere average."""
    thetas = np.asarray(thetas, dtype=float)
    v = collision_velocity(species, trap)
    data = angular_crossings(drive, species, np.cos(thetas))
    f, _, _ = _integrand(drive, species, v, data, np.array([phi]), channel_rule)
    return thetas, f[:, 0]


def detuning_from_ratio(ratio: float, trap: TrapConfig) -> float:
    """Angular detuning for a given detuning / trap depth ratio (both in Hz)."""
    return TWOPI * ratio * trap.depth_hz


def pic_sweep(
    drive: DriveConfig,
    s_values,
    delta_over_ftrap,
    species: AtomicSpecies,
    trap: TrapConfig,
    n_theta: int = 64,
    n_phi: int = 32,
    tol: float = 1e-4,
    channel_rule: str = "asymptotic",
    threads: int = 1,
) -> SweepResult:
    """P_ic on the (I/I_sat, Delta/f_trap) grid; failing cells become nan.

    Crossing geometry depends only on the detuning, so it is computed once
    per column and shared by every intensity in that column.
    """
    s_values = np.asarray(s_values, dtype=float)
    delta_over_ftrap = np.asarray(delta_over_ftrap, dtype=float)
    if s_values.size == 0 or delta_over_ftrap.size == 0:
        raise ValueError("sweep grids must be non-empty")

    def column(j):
        cache = {}
        out = []
        for i in range(s_values.size):
            d = replace(drive, saturation=float(s_values[i]), detuning=detuning_from_ratio(delta_over_ftrap[j], trap))
            try:
                res = inelastic_probability(d, species, trap, n_theta, n_phi, tol, channel_rule=channel_rule, _cache=cache)
                out.append(((i, j), res.pic, None, res.metadata))
            except (CrossingError, ValueError, np.linalg.LinAlgError) as exc:
                out.append(((i, j), np.nan, f"{type(exc).__name__}: {exc}", None))
        return out

    cols = range(delta_over_ftrap.size)
    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            results = [r for col in pool.map(column, cols) for r in col]
    else:
        results = [r for j in cols for r in column(j)]
    pic = np.full((s_values.size, delta_over_ftrap.size), np.nan)
    errors = {}
    max_err = 0.0
    unconverged = 0
    for (i, j), val, err, meta in results:
        pic[i, j] = val
        if err is not None:
            errors[(i, j)] = err
        else:
            max_err = max(max_err, meta["error_estimate"])
            unconverged += not meta["converged"]
    if np.all(np.isnan(pic)):
        argmax = None
    else:
        argmax = tuple(int(a) for a in np.unravel_index(np.nanargmax(pic), pic.shape))
    meta = {
        "max_error_estimate": max_err,
        "unconverged_cells": unconverged,
        "coupling_factor": COUPLING_FACTOR,
        "channel_rule": channel_rule,
        "n_theta": n_theta,
        "n_phi": n_phi,
        "tol": tol,
    }
    return SweepResult(s_values, delta_over_ftrap, pic, argmax, errors, meta)
