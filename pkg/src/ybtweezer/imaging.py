"""Fluorescence images of a tweezer array: synthesis, background removal, readout.

Site centres are given in (row, col) pixels. A read-out window is the 10x10
block ``[c - 5, c + 5)`` around each centre.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage, optimize, special

ROI_SIZE = 10


class UnimodalError(ValueError):
    """The brightness histogram does not separate into two populations."""


class InsufficientStatistics(ValueError):
    pass


class LifetimeFitError(RuntimeError):
    pass


@dataclass
class ImageFrame:
    pixels: np.ndarray
    exposure: float = 0.03

    def __post_init__(self):
        self.pixels = np.asarray(self.pixels, dtype=float)
        if not np.all(np.isfinite(self.pixels)):
            raise ValueError("frame contains non-finite pixels")


@dataclass(frozen=True)
class FilterParams:
    sharp: float = 2.4
    wide1: float = 16.8
    wide2: float = 91.9
    truncate: float = 4.0

    def __post_init__(self):
        if not 0 < self.sharp < self.wide1 < self.wide2:
            raise ValueError("filter widths must satisfy 0 < sharp < wide1 < wide2")


@dataclass
class SiteROI:
    center: tuple
    weights: np.ndarray  # (10, 10), non-negative, unit sum

    @property
    def window(self) -> tuple[slice, slice]:
        return roi_window(self.center)


@dataclass
class Blob:
    """Defocused fluorescence from an out-of-plane trap (peak counts per pixel)."""

    center: tuple
    sigma: float
    amplitude: float


@dataclass
class BackgroundModel:
    blobs: list = field(default_factory=list)
    offset: float = 0.0
    read_noise: float = 0.0

    def scaled(self, factor: float) -> "BackgroundModel":
        return BackgroundModel([Blob(b.center, b.sigma, b.amplitude * factor) for b in self.blobs], self.offset, self.read_noise)


@dataclass
class MixtureFit:
    weights: np.ndarray
    means: np.ndarray
    sigmas: np.ndarray
    log_likelihood: float
    iterations: int


@dataclass
class FidelityEstimate:
    false_positive: float
    false_negative: float
    loss_per_image: float
    fidelity: float
    lifetime: float | None = None
    counts: dict = field(default_factory=dict)


def roi_window(center) -> tuple[slice, slice]:
    r, c = (int(round(x)) for x in center)
    h = ROI_SIZE // 2
    return slice(r - h, r + h), slice(c - h, c + h)


def _pixel_integrated_psf(shape, center, sigma):
    """Gaussian PSF integrated over each pixel, unit total on an infinite grid."""
    out = []
    for n, c in zip(shape, center):
        edges = np.arange(n + 1) - 0.5 - c
        cdf = 0.5 * special.erf(edges / (np.sqrt(2.0) * sigma))
        out.append(np.diff(cdf))
    return np.outer(out[0], out[1])


def expected_counts(shape, centers, occupancy, psf_sigma: float, photons_per_atom: float, background: BackgroundModel | None = None):
    """Mean photon counts per pixel before noise and offset."""
    centers = np.asarray(centers, dtype=float).reshape(-1, 2)
    occupancy = np.asarray(occupancy, dtype=bool).ravel()
    if len(occupancy) != len(centers):
        raise ValueError("occupancy does not match the number of sites")
    img = np.zeros(shape)
    for c in centers[occupancy]:
        img += photons_per_atom * _pixel_integrated_psf(shape, c, psf_sigma)
    if background is not None:
        yy, xx = np.indices(shape)
        for b in background.blobs:
            img += b.amplitude * np.exp(-((yy - b.center[0]) ** 2 + (xx - b.center[1]) ** 2) / (2.0 * b.sigma**2))
    return img


def synthesize_frame(
    shape,
    centers,
    occupancy,
    psf_sigma: float = 1.6,
    photons_per_atom: float = 150.0,
    background: BackgroundModel | None = None,
    rng: np.random.Generator | None = None,
    exposure: float = 0.03,
) -> ImageFrame:
    """Atoms plus out-of-plane blobs with shot noise, offset and read noise.

    Without ``rng`` the frame is the noiseless expectation.
    """
    mean = expected_counts(shape, centers, occupancy, psf_sigma, photons_per_atom, background)
    offset = background.offset if background else 0.0
    read = background.read_noise if background else 0.0
    if rng is None:
        return ImageFrame(mean + offset, exposure)
    img = rng.poisson(mean).astype(float) + offset
    if read > 0:
        img += rng.normal(0.0, read, shape)
    return ImageFrame(np.clip(img, 0.0, None), exposure)


def _blur(img, sigma, truncate):
    return ndimage.gaussian_filter(img, sigma, mode="reflect", truncate=truncate)


def filter_stages(raw, params: FilterParams = FilterParams()) -> tuple[np.ndarray, np.ndarray]:
    """Both stages of the three-kernel filter, clamped at zero.

    sub1 = max(raw*G(sharp) - raw*G(wide1), 0)
    final = max(sub1 - raw*G(wide2), 0)
    """
    raw = np.asarray(getattr(raw, "pixels", raw), dtype=float)
    sub1 = np.maximum(_blur(raw, params.sharp, params.truncate) - _blur(raw, params.wide1, params.truncate), 0.0)
    return sub1, np.maximum(sub1 - _blur(raw, params.wide2, params.truncate), 0.0)


def filter_frame(raw, params: FilterParams = FilterParams()) -> np.ndarray:
    return filter_stages(raw, params)[1]


def _check_windows(shape, centers):
    for c in centers:
        rs, cs = roi_window(c)
        if rs.start < 0 or cs.start < 0 or rs.stop > shape[0] or cs.stop > shape[1]:
            raise ValueError(f"read-out window around ({c[0]:g}, {c[1]:g}) leaves the frame")


def calibrate_weights(filtered_frames, centers) -> list[SiteROI]:
    """Per-site weight = mean filtered window over frames, clipped and normalized."""
    frames = [np.asarray(getattr(f, "pixels", f), dtype=float) for f in filtered_frames]
    if not frames:
        raise ValueError("need at least one frame")
    centers = np.asarray(centers).reshape(-1, 2)
    _check_windows(frames[0].shape, centers)
    mean = np.mean(frames, axis=0)
    rois = []
    for c in centers:
        w = np.clip(mean[roi_window(c)], 0.0, None)
        total = w.sum()
        if not total > 0:
            raise ValueError(f"no signal in the read-out window around ({c[0]:g}, {c[1]:g})")
        rois.append(SiteROI(tuple(c), w / total))
    return rois


def site_brightness(frame, roi: SiteROI) -> float:
    frame = np.asarray(getattr(frame, "pixels", frame), dtype=float)
    return float(np.sum(frame[roi.window] * roi.weights))


def brightness_matrix(filtered_frames, rois: list[SiteROI]) -> np.ndarray:
    """(n_frames, n_sites) weighted brightness."""
    return np.array([[site_brightness(f, r) for r in rois] for f in filtered_frames])


def _em(x, mu, sd, pi, max_iter=1000, tol=1e-10):
    """EM for a batch of two-Gaussian starts; arrays are (R, 2).

    Each start stops on its own once the log-likelihood gain per sample
    drops below ``tol`` or a component empties.
    """
    floor = 1e-6 * np.std(x)
    mu, sd, pi = (np.array(a, dtype=float) for a in (mu, sd, pi))
    r = len(mu)
    ll = np.full(r, -np.inf)
    iters = np.zeros(r, dtype=int)
    active = np.ones(r, dtype=bool)
    for it in range(1, max_iter + 1):
        idx = np.nonzero(active)[0]
        if idx.size == 0:
            break
        m, s, w = mu[idx, None, :], sd[idx, None, :], pi[idx, None, :]
        logp = np.log(w) - np.log(s) - 0.5 * ((x[None, :, None] - m) / s) ** 2 - 0.5 * np.log(2 * np.pi)
        each = np.logaddexp(logp[..., 0], logp[..., 1])
        cur = each.sum(axis=1)
        resp = np.exp(logp - each[..., None])
        nk = resp.sum(axis=1)
        empty = np.any(nk < 1e-9 * len(x), axis=1)
        done = empty | (np.abs(cur - ll[idx]) < tol * len(x))
        iters[idx] = it
        ll[idx] = cur
        upd = idx[~empty]
        if upd.size:
            rk, nkk = resp[~empty], nk[~empty]
            mu[upd] = np.einsum("rnk,n->rk", rk, x) / nkk
            var = np.einsum("rnk,rnk->rk", rk, (x[None, :, None] - mu[upd, None, :]) ** 2) / nkk
            sd[upd] = np.maximum(np.sqrt(var), floor)
            pi[upd] = nkk / len(x)
        active[idx[done]] = False
    return mu, sd, pi, ll, iters


def fit_mixture(samples, restarts: int = 100) -> MixtureFit:
    """Two-component Gaussian mixture by EM from deterministic quantile seeds."""
    x = np.asarray(samples, dtype=float).ravel()
    if x.size < 200:
        raise ValueError("need at least 200 samples")
    spread = np.std(x)
    if spread == 0:
        raise UnimodalError("all samples are identical")
    lows = np.linspace(0.05, 0.45, 10)
    seeds = [(a, b) for a in lows for b in 1.0 - lows][:restarts]
    starts = []
    for qa, qb in seeds:
        lo, hi = np.quantile(x, [qa, qb])
        if hi <= lo:
            continue
        split = x <= 0.5 * (lo + hi)
        sd0 = np.array([x[split].std() if split.sum() > 1 else spread, x[~split].std() if (~split).sum() > 1 else spread])
        starts.append((lo, hi, *np.maximum(sd0, 1e-3 * spread)))
    if not starts:
        raise UnimodalError("could not seed two components")
    s = np.array(starts)
    # short runs from every start, then only the five most promising are
    # iterated to convergence; batches keep the work arrays near 16 MB
    step = max(1, 1_000_000 // x.size)

    def batched(mu0, sd0, pi0, max_iter):
        parts = [_em(x, mu0[i : i + step], sd0[i : i + step], pi0[i : i + step], max_iter) for i in range(0, len(mu0), step)]
        return tuple(np.concatenate(a) for a in zip(*parts))

    mu, sd, pi, ll, _ = batched(s[:, :2], s[:, 2:], np.full((len(s), 2), 0.5), 25)
    keep = np.sort(np.argsort(-ll, kind="stable")[:5])
    mu, sd, pi, ll, iters = batched(mu[keep], sd[keep], pi[keep], 1000)
    # first start wins ties, so the choice does not depend on float noise
    best = 0
    for i in range(1, len(ll)):
        if ll[i] > ll[best] + 1e-9 * abs(ll[best]):
            best = i
    order = np.argsort(mu[best])
    return MixtureFit(pi[best][order], mu[best][order], sd[best][order], float(ll[best]), int(iters[best]))


def _log_density(x, fit: MixtureFit):
    return np.log(fit.weights) - np.log(fit.sigmas) - 0.5 * ((x[..., None] - fit.means) / fit.sigmas) ** 2


def equal_posterior_point(fit: MixtureFit) -> float | None:
    """Root of pi1 N1(x) = pi2 N2(x) between the means, if any."""
    (w1, w2), (m1, m2), (s1, s2) = fit.weights, fit.means, fit.sigmas
    # quadratic a x^2 + b x + c = 0 from equating the log densities
    a = 0.5 / s2**2 - 0.5 / s1**2
    b = m1 / s1**2 - m2 / s2**2
    c = 0.5 * m2**2 / s2**2 - 0.5 * m1**2 / s1**2 + np.log(w1 / s1) - np.log(w2 / s2)
    roots = np.roots([a, b, c])  # drops a vanishing leading term
    roots = roots[np.isreal(roots)].real
    inside = [r for r in roots if m1 <= r <= m2]
    return float(min(inside, key=lambda r: abs(r - 0.5 * (m1 + m2)))) if inside else None


def _is_bimodal(fit: MixtureFit) -> bool:
    xs = np.linspace(fit.means[0], fit.means[1], 513)
    dens = np.exp(_log_density(xs, fit)).sum(axis=-1)
    return bool(dens[1:-1].min() < min(dens[0], dens[-1]) * (1 - 1e-9))


def fit_threshold(samples, restarts: int = 100) -> tuple[float, MixtureFit]:
    """Occupancy threshold at the equal-posterior point of a two-Gaussian fit.

    Raises :class:`UnimodalError` when the means are closer than the pooled
    width, or when the fitted mixture has no dip between them.
    """
    fit = fit_mixture(samples, restarts)
    pooled = float(np.sqrt(np.sum(fit.weights * fit.sigmas**2)))
    if fit.means[1] - fit.means[0] < pooled or not _is_bimodal(fit):
        raise UnimodalError(
            f"brightness distribution is unimodal (means {fit.means[0]:.4g}, {fit.means[1]:.4g}; pooled sigma {pooled:.4g})"
        )
    t = equal_posterior_point(fit)
    if t is None:
        t = float(0.5 * (fit.means[0] + fit.means[1]))
    return t, fit


def classify(brightness, threshold: float) -> np.ndarray:
    return np.asarray(brightness) > threshold


PATTERNS = [(a, b, c) for a in (0, 1) for b in (0, 1) for c in (0, 1)]


def pattern_counts(triples) -> dict:
    t = np.asarray(triples, dtype=bool).reshape(-1, 3)
    code = t[:, 0] * 4 + t[:, 1] * 2 + t[:, 2]
    n = np.bincount(code, minlength=8)
    return {p: int(n[4 * p[0] + 2 * p[1] + p[2]]) for p in PATTERNS}


def _ratio(num, den, what):
    if den == 0:
        raise InsufficientStatistics(f"no triples to estimate the {what}")
    return num / den


def estimate_from_counts(n: dict) -> FidelityEstimate:
    """Triple-image estimators; works on counts or on pattern probabilities."""
    fn = _ratio(n[(1, 0, 1)], n[(1, 0, 1)] + n[(1, 1, 1)], "false-negative rate")
    fp = _ratio(n[(0, 1, 0)], n[(0, 0, 0)] + n[(0, 1, 0)], "false-positive rate")
    eps = max(_ratio(n[(1, 1, 0)], n[(1, 1, 0)] + n[(1, 1, 1)], "loss rate") - fn, 0.0)
    total = sum(n.values())
    p_occ = sum(v for k, v in n.items() if k[0] == 1) / total
    fid = 1.0 - (fp * (1.0 - p_occ) + fn * p_occ)
    return FidelityEstimate(fp, fn, eps, fid, counts={"".join(map(str, k)): v for k, v in n.items()})


def estimate_fidelity(triples) -> FidelityEstimate:
    """Detection errors and loss from three consecutive images of each site."""
    t = np.asarray(triples, dtype=bool).reshape(-1, 3)
    if len(t) < 1000:
        raise InsufficientStatistics("need at least 1000 site triples")
    return estimate_from_counts(pattern_counts(t))


def triple_pattern_probabilities(p_load: float, fp: float, fn: float, loss: float) -> dict:
    """Exact probabilities of the eight observed patterns.

    A site is loaded with probability ``p_load``; an atom survives each
    image-to-image interval with probability ``1 - loss``; every image
    independently misreads an atom with ``fn`` and an empty site with ``fp``.
    """
    probs = dict.fromkeys(PATTERNS, 0.0)
    truths = {(0, 0, 0): 1.0 - p_load, (1, 1, 1): p_load * (1 - loss) ** 2, (1, 1, 0): p_load * (1 - loss) * loss, (1, 0, 0): p_load * loss}
    for truth, pt in truths.items():
        for obs in PATTERNS:
            p = pt
            for s, o in zip(truth, obs):
                p *= ((1 - fn) if o else fn) if s else (fp if o else (1 - fp))
            probs[obs] += p
    return probs


def simulate_triples(n: int, p_load: float, fp: float, fn: float, loss: float, rng: np.random.Generator) -> np.ndarray:
    occ = rng.random(n) < p_load
    truth = np.empty((n, 3), dtype=bool)
    truth[:, 0] = occ
    truth[:, 1] = truth[:, 0] & (rng.random(n) >= loss)
    truth[:, 2] = truth[:, 1] & (rng.random(n) >= loss)
    u = rng.random((n, 3))
    return np.where(truth, u >= fn, u < fp)


def imaging_lifetime(times, survival) -> tuple[float, float]:
    """Least-squares fit of S(t) = exp(-t / tau); returns (tau, rms residual)."""
    t = np.asarray(times, dtype=float)
    s = np.asarray(survival, dtype=float)
    if t.size < 5 or t.size != s.size:
        raise ValueError("need at least 5 (time, survival) points")
    good = s > 0
    slope = np.polyfit(t[good], np.log(s[good]), 1)[0] if good.sum() >= 2 else 0.0
    if not slope < 0:
        raise LifetimeFitError("survival does not decay")
    tau0 = -1.0 / slope
    (tau,), _ = optimize.curve_fit(lambda x, tau: np.exp(-x / tau), t, s, p0=[tau0], xtol=1e-14, ftol=1e-14, gtol=1e-14)
    if not np.isfinite(tau) or tau <= 0 or tau > 1e3 * (t.max() - t.min()):
        raise LifetimeFitError(f"fit returned an unphysical lifetime {tau}")
    resid = float(np.sqrt(np.mean((s - np.exp(-t / tau)) ** 2)))
    return float(tau), resid


def grid_centers(rows: int, cols: int, spacing: float, origin) -> np.ndarray:
    r = origin[0] + spacing * np.arange(rows)
    c = origin[1] + spacing * np.arange(cols)
    rr, cc = np.meshgrid(r, c, indexing="ij")
    return np.column_stack([rr.ravel(), cc.ravel()])
