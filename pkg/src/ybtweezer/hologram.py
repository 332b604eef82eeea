"""Phase-only holograms for rectangular tweezer arrays (weighted Gerchberg-Saxton).

Spot coordinates are integer pixel offsets from the centre of the Fourier
plane; offset ``(dy, dx)`` lives at index ``(dy mod H, dx mod W)`` of the
unshifted FFT. Transforms use the unitary normalization so that far-field
power equals incident power.
"""

from __future__ import annotations

import io
from dataclasses import dataclass, field

import numpy as np
from PIL import Image, PngImagePlugin

TWO_PI = 2.0 * np.pi


@dataclass
class UniformityReport:
    intensities: np.ndarray
    uniformity: float
    efficiency: float
    total_power: float


@dataclass
class HologramState:
    phase: np.ndarray
    spots: np.ndarray  # (N, 2) integer offsets (dy, dx)
    target: np.ndarray  # (N,) amplitudes
    weights: np.ndarray
    incident: np.ndarray
    iteration: int = 0
    history: list = field(default_factory=list)  # uniformity per evaluated mask
    power_error: list = field(default_factory=list)  # Parseval relative error per iteration
    soft: bool = True


@dataclass
class WgsResult:
    phase: np.ndarray
    report: UniformityReport
    converged: bool
    iterations: int
    history: list
    power_error: list


def target_grid(rows: int, cols: int, spacing_px: int, resolution) -> np.ndarray:
    """Centred rows x cols lattice of spot offsets (dy, dx)."""
    h, w = _shape(resolution)
    if rows < 1 or cols < 1 or spacing_px < 1:
        raise ValueError("rows, cols and spacing must be positive")
    oy = (np.arange(rows) - (rows - 1) / 2.0) * spacing_px
    ox = (np.arange(cols) - (cols - 1) / 2.0) * spacing_px
    if np.any(oy != np.round(oy)) or np.any(ox != np.round(ox)):
        raise ValueError("spot offsets must fall on whole pixels (use an even spacing for even counts)")
    if oy[-1] - oy[0] >= h or ox[-1] - ox[0] >= w or oy.min() < -(h // 2) or ox.min() < -(w // 2) or oy.max() >= h - h // 2 or ox.max() >= w - w // 2:
        raise ValueError(f"{rows}x{cols} grid with spacing {spacing_px} does not fit in {h}x{w}")
    yy, xx = np.meshgrid(oy, ox, indexing="ij")
    return np.column_stack([yy.ravel(), xx.ravel()]).astype(int)


def _shape(resolution) -> tuple[int, int]:
    if np.isscalar(resolution):
        resolution = (resolution, resolution)
    h, w = (int(x) for x in resolution)
    if h < 1 or w < 1:
        raise ValueError("resolution must be positive")
    return h, w


def gaussian_incident(resolution, waist_fraction: float = 0.45) -> np.ndarray:
    """Gaussian amplitude whose intensity falls to 1/e^2 at waist_fraction * min(H, W)."""
    h, w = _shape(resolution)
    waist = waist_fraction * min(h, w)
    y = np.arange(h) - (h - 1) / 2.0
    x = np.arange(w) - (w - 1) / 2.0
    return np.exp(-(y[:, None] ** 2 + x[None, :] ** 2) / waist**2)


def _spot_index(spots: np.ndarray, shape) -> tuple[np.ndarray, np.ndarray]:
    return np.mod(spots[:, 0], shape[0]), np.mod(spots[:, 1], shape[1])


def uniformity(intensities) -> float:
    i = np.asarray(intensities, dtype=float)
    hi, lo = i.max(), i.min()
    return 1.0 if hi + lo == 0 else float(1.0 - (hi - lo) / (hi + lo))


def _far_field(phase, incident):
    return np.fft.fft2(incident * np.exp(1j * phase), norm="ortho")


def _report(far: np.ndarray, spots: np.ndarray, total: float) -> UniformityReport:
    inten = np.abs(far[_spot_index(spots, far.shape)]) ** 2
    return UniformityReport(inten, uniformity(inten), float(inten.sum() / total), total)


def evaluate_mask(phase, incident, spots) -> UniformityReport:
    """Spot intensities, uniformity and diffraction efficiency of a mask."""
    phase = np.asarray(phase, dtype=float)
    incident = np.asarray(incident, dtype=float)
    if phase.shape != incident.shape:
        raise ValueError("phase and incident profile must have the same shape")
    spots = np.asarray(spots, dtype=int).reshape(-1, 2)
    return _report(_far_field(phase, incident), spots, float(np.sum(incident**2)))


def initial_state(spots, resolution, incident=None, seed: int = 0, target=None, soft: bool = True) -> HologramState:
    h, w = _shape(resolution)
    spots = np.asarray(spots, dtype=int).reshape(-1, 2)
    if np.any(spots[:, 0] < -(h // 2)) or np.any(spots[:, 0] >= h - h // 2) or np.any(spots[:, 1] < -(w // 2)) or np.any(spots[:, 1] >= w - w // 2):
        raise ValueError("spot outside the Fourier grid")
    incident = gaussian_incident((h, w)) if incident is None else np.asarray(incident, dtype=float)
    target = np.ones(len(spots)) if target is None else np.asarray(target, dtype=float)
    phase = np.random.default_rng(seed).uniform(0.0, TWO_PI, (h, w))
    return HologramState(phase, spots, target, np.ones(len(spots)), incident, soft=soft)


def _wrap(phase: np.ndarray) -> np.ndarray:
    out = np.mod(phase, TWO_PI)
    out[out >= TWO_PI] = 0.0
    return out


def wgs_iterate(state: HologramState) -> HologramState:
    """One weighted Gerchberg-Saxton cycle, updating ``state`` in place."""
    far = _far_field(state.phase, state.incident)
    total = float(np.sum(state.incident**2))
    state.power_error.append(abs(float(np.sum(np.abs(far) ** 2)) - total) / total)
    idx = _spot_index(state.spots, far.shape)
    a = np.abs(far[idx])
    state.history.append(_report(far, state.spots, total).uniformity)
    if state.iteration > 0:
        # the random starting far field carries no information about the mask
        w = state.weights * np.mean(a) / np.maximum(a, 1e-300)
        state.weights = w / np.mean(w)
    amp = state.weights * state.target
    # ask for the full incident power in the spots
    amp *= np.sqrt(total / np.sum(amp**2))
    spot_phase = np.angle(far[idx])
    if not state.soft:
        far = np.zeros_like(far)
    far[idx] = amp * np.exp(1j * spot_phase)
    near = np.fft.ifft2(far, norm="ortho")
    state.phase = _wrap(np.angle(near))
    state.iteration += 1
    return state


def run_wgs(
    spots,
    resolution,
    max_iter: int = 100,
    u_goal: float = 0.98,
    incident=None,
    seed: int = 0,
    soft: bool = True,
) -> WgsResult:
    """Iterate until the uniformity reaches ``u_goal``; return the best mask seen."""
    if max_iter < 1:
        raise ValueError("max_iter must be at least 1")
    state = initial_state(spots, resolution, incident, seed, soft=soft)
    best_phase = state.phase.copy()
    best = evaluate_mask(best_phase, state.incident, state.spots)
    history = [best.uniformity]
    converged = best.uniformity >= u_goal
    while not converged and state.iteration < max_iter:
        wgs_iterate(state)
        rep = evaluate_mask(state.phase, state.incident, state.spots)
        history.append(rep.uniformity)
        if rep.uniformity > best.uniformity:
            best, best_phase = rep, state.phase.copy()
        converged = rep.uniformity >= u_goal
    return WgsResult(best_phase, best, converged, state.iteration, history, state.power_error)


def phase_to_levels(phase) -> np.ndarray:
    """Quantize [0, 2 pi) to 16-bit gray levels."""
    return np.round(np.asarray(phase) / TWO_PI * 65535.0).astype(np.uint16)


def levels_to_phase(levels) -> np.ndarray:
    return np.asarray(levels, dtype=float) / 65535.0 * TWO_PI


def phase_png_bytes(phase, text: dict | None = None) -> bytes:
    """16-bit grayscale PNG of a phase mask, with optional text chunks."""
    img = Image.fromarray(phase_to_levels(phase))
    info = PngImagePlugin.PngInfo()
    for k, v in sorted((text or {}).items()):
        info.add_text(str(k), str(v))
    buf = io.BytesIO()
    img.save(buf, format="PNG", pnginfo=info)
    return buf.getvalue()


def load_phase_png(path) -> np.ndarray:
    with Image.open(path) as img:
        return levels_to_phase(np.array(img, dtype=np.uint16))
