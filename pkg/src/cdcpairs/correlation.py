"""Time-domain view of a biphoton spectrum.

Delay convention: ``tau = t_idler - t_signal``. Positive delays decay with the
idler linewidth and negative delays with the signal linewidth; pass
``swap=True`` to :func:`biphoton_wavepacket` for the mirrored convention.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Optional, Union

import numpy as np
from scipy.constants import c as C_LIGHT
from scipy.integrate import cumulative_trapezoid, trapezoid
from scipy.ndimage import gaussian_filter1d

from .spectral import BiphotonSpectrum

__all__ = [
    "C_LIGHT",
    "FWHM_TO_SIGMA",
    "CorrelationProfile",
    "BinnedHistogram",
    "tau_grid",
    "centered_bin_edges",
    "spectral_amplitude",
    "biphoton_wavepacket",
    "g2_profile",
    "pair_jitter",
    "convolve_jitter",
    "bin_histogram",
    "comb_modulation_depth",
    "michelson_coherence",
    "michelson_visibility",
    "write_profile_csv",
    "write_histogram_csv",
]

FWHM_TO_SIGMA = 1.0 / (2.0 * math.sqrt(2.0 * math.log(2.0)))


def tau_grid(span: float = 400e-9, step: float = 16e-12) -> np.ndarray:
    """Symmetric uniform delay grid ``[-span, span]`` that contains zero."""
    n = int(round(span / step))
    return np.arange(-n, n + 1) * step


def _grid_step(tau) -> float:
    tau = np.asarray(tau, dtype=float)
    if tau.ndim != 1 or tau.size < 3:
        raise ValueError("tau grid must be 1-D with at least 3 points")
    d = np.diff(tau)
    h = float(d.mean())
    if h <= 0 or np.max(np.abs(d - h)) > 1e-6 * h:
        raise ValueError("tau grid must be strictly increasing and uniform")
    return h


def centered_bin_edges(bin_width: float, span: float) -> np.ndarray:
    """Bin edges with one bin centred on zero delay, covering ``+-span``."""
    if not bin_width > 0:
        raise ValueError("bin_width must be positive")
    k = int(math.floor(span / bin_width - 0.5 + 1e-9))
    if k < 0:
        raise ValueError("span smaller than half a bin")
    return (np.arange(-k, k + 2) - 0.5) * bin_width


def _line_params(spectrum: BiphotonSpectrum, swap: bool):
    a = np.pi * spectrum.idler_width
    b = np.pi * spectrum.signal_width
    if swap:
        a, b = b, a
    norm = np.sqrt(2.0 * a * b / (a + b))
    return spectrum.center_detuning, a, b, norm * spectrum.amplitude_weight


def spectral_amplitude(spectrum: BiphotonSpectrum, nu, swap: bool = False) -> np.ndarray:
    """Joint spectral amplitude whose inverse transform is the wavepacket."""
    nu = np.asarray(nu, dtype=float)
    out = np.zeros(nu.shape, dtype=complex)
    for c, a, b, w in zip(*_line_params(spectrum, swap)):
        x = 2j * np.pi * (nu - c)
        out += w * (1.0 / (a - x) + 1.0 / (b + x))
    return out


def _check_grid(spectrum: BiphotonSpectrum, tau, h):
    dmax = spectrum.max_detuning()
    if dmax > 0 and h > 1.0 / (10.0 * dmax):
        raise ValueError(
            f"grid too coarse: step {h:.3g} s > 1/(10*{dmax:.3g} Hz)")
    tc = 1.0 / (2.0 * np.pi * min(spectrum.signal_width.min(), spectrum.idler_width.min()))
    if tau[0] > -5 * tc or tau[-1] < 5 * tc:
        raise ValueError(f"tau grid must span at least +-5 coherence times ({5 * tc:.3g} s)")


def _wavepacket_analytic(spectrum, tau, swap):
    psi = np.zeros(tau.shape, dtype=complex)
    pos = tau >= 0
    for c, a, b, w in zip(*_line_params(spectrum, swap)):
        env = np.where(pos, np.exp(-a * np.where(pos, tau, 0.0)), np.exp(b * np.where(pos, 0.0, tau)))
        psi += w * env * np.exp(-2j * np.pi * c * tau)
    return psi


def _wavepacket_dft(spectrum, tau, h, swap):
    # wrap-around period must hold the grid plus ~1e-5 amplitude tails
    wmin = min(spectrum.signal_width.min(), spectrum.idler_width.min())
    period = (tau[-1] - tau[0]) + 2 * 12.0 / (np.pi * wmin)
    n = 1 << int(math.ceil(math.log2(max(period / h, 4 * tau.size))))
    nu = np.fft.fftfreq(n, h)
    phi = spectral_amplitude(spectrum, nu, swap) * np.exp(-2j * np.pi * nu * tau[0])
    return (np.fft.fft(phi) / (n * h))[: tau.size]


def biphoton_wavepacket(spectrum: BiphotonSpectrum, tau, backend: str = "analytic",
                        swap: bool = False) -> np.ndarray:
    """Complex two-photon amplitude on a uniform delay grid.

    Parameters
    ----------
    spectrum : BiphotonSpectrum
    tau : array_like
        Uniform delay grid in seconds, covering at least five coherence times
        on each side.
    backend : {"analytic", "dft"}
        ``analytic`` sums closed-form two-sided exponentials line by line;
        ``dft`` samples the spectral amplitude densely and inverse
        transforms it. The two must agree; the second is the check on the
        first.
    swap : bool
        Exchange which side of zero decays with which linewidth.
    """
    tau = np.asarray(tau, dtype=float)
    h = _grid_step(tau)
    _check_grid(spectrum, tau, h)
    if backend == "analytic":
        return _wavepacket_analytic(spectrum, tau, swap)
    if backend == "dft":
        return _wavepacket_dft(spectrum, tau, h, swap)
    raise ValueError(f"unknown backend {backend!r}")


@dataclass(frozen=True)
class CorrelationProfile:
    """Delay probability density (per second) on a uniform grid."""

    tau: np.ndarray
    density: np.ndarray
    normalization: float = 1.0

    @property
    def step(self) -> float:
        return float(self.tau[1] - self.tau[0])

    def integral(self) -> float:
        return float(trapezoid(self.density, self.tau))

    def cdf(self) -> np.ndarray:
        return cumulative_trapezoid(self.density, self.tau, initial=0.0)

    def at(self, t) -> np.ndarray:
        return np.interp(t, self.tau, self.density)


def g2_profile(tau, psi) -> CorrelationProfile:
    """Normalised ``|psi|^2``; the accidental floor is handled by the rate model."""
    tau = np.asarray(tau, dtype=float)
    _grid_step(tau)
    dens = np.abs(np.asarray(psi)) ** 2
    if not np.all(np.isfinite(dens)):
        raise ValueError("wavepacket is not finite")
    area = trapezoid(dens, tau)
    if not area > 0:
        raise ValueError("zero-energy wavepacket")
    return CorrelationProfile(tau, dens / area, float(area))


def pair_jitter(per_detector_fwhm: float) -> float:
    """Combined timing jitter (FWHM) of two independent Gaussian detectors."""
    return math.sqrt(2.0) * per_detector_fwhm


def convolve_jitter(profile: CorrelationProfile, jitter_fwhm: float) -> CorrelationProfile:
    """Gaussian timing-jitter convolution of a profile (mass preserving)."""
    if jitter_fwhm < 0:
        raise ValueError("jitter_fwhm must be non-negative")
    if jitter_fwhm == 0:
        return profile
    sigma = jitter_fwhm * FWHM_TO_SIGMA / profile.step
    dens = gaussian_filter1d(profile.density, sigma, mode="constant", truncate=8.0)
    return CorrelationProfile(profile.tau, dens, profile.normalization)


@dataclass(frozen=True)
class BinnedHistogram:
    bin_width: float
    bin_centers: np.ndarray
    counts: np.ndarray
    total_pairs: float

    @property
    def edges(self) -> np.ndarray:
        return np.append(self.bin_centers - self.bin_width / 2, self.bin_centers[-1] + self.bin_width / 2)


def bin_histogram(profile: CorrelationProfile, bin_width: float, total_pairs: float,
                  span: Optional[float] = None) -> BinnedHistogram:
    """Expected coincidence counts per delay bin (bins centred on zero)."""
    if not bin_width > 0:
        raise ValueError("bin_width must be positive")
    if span is None:
        span = min(-profile.tau[0], profile.tau[-1])
    edges = centered_bin_edges(bin_width, span)
    cdf = np.interp(edges, profile.tau, profile.cdf())
    counts = total_pairs * np.diff(cdf)
    centers = 0.5 * (edges[:-1] + edges[1:])
    return BinnedHistogram(bin_width, centers, counts, total_pairs)


def _curve(obj):
    if isinstance(obj, CorrelationProfile):
        return obj.tau, obj.density
    if isinstance(obj, BinnedHistogram):
        return obj.bin_centers, np.asarray(obj.counts, dtype=float)
    tau, y = obj
    return np.asarray(tau, dtype=float), np.asarray(y, dtype=float)


def comb_modulation_depth(curve: Union[CorrelationProfile, BinnedHistogram, tuple],
                          window: tuple[float, float], period: float = 1.25e-9) -> float:
    """Mean ``(max-min)/(max+min)`` over successive local extremum pairs.

    A curve without interior extrema in the window (a pure exponential)
    has depth zero.
    """
    lo, hi = window
    if hi - lo < 2 * period:
        raise ValueError("window shorter than two comb periods")
    tau, y = _curve(curve)
    sel = (tau >= lo) & (tau <= hi)
    y = y[sel]
    if y.size < 3:
        raise ValueError("window contains fewer than 3 samples")
    d = np.sign(np.diff(y))
    # carry flat runs forward so plateaus do not register as extrema
    for i in range(1, d.size):
        if d[i] == 0:
            d[i] = d[i - 1]
    turn = np.nonzero(d[1:] != d[:-1])[0] + 1
    kinds = d[turn - 1] > 0  # True: local max
    depths = []
    for j in range(len(turn) - 1):
        if kinds[j] and not kinds[j + 1]:
            ymax, ymin = y[turn[j]], y[turn[j + 1]]
            if ymax + ymin > 0:
                depths.append((ymax - ymin) / (ymax + ymin))
    return float(np.mean(depths)) if depths else 0.0


def michelson_coherence(spectrum: BiphotonSpectrum, path_difference, arm: str = "idler") -> np.ndarray:
    """Complex first-order coherence of one arm versus optical path difference."""
    dl = np.asarray(path_difference, dtype=float)
    if np.any(dl < 0):
        raise ValueError("path_difference must be non-negative")
    widths = spectrum.idler_width if arm == "idler" else spectrum.signal_width
    tau = dl / C_LIGHT
    g = np.zeros(dl.shape, dtype=complex)
    for w, width, c in zip(spectrum.intensity_weights, widths, spectrum.center_detuning):
        g += w * np.exp(-np.pi * width * tau) * np.exp(-2j * np.pi * c * tau)
    return g


def michelson_visibility(spectrum: BiphotonSpectrum, path_difference, arm: str = "idler"):
    v = np.abs(michelson_coherence(spectrum, path_difference, arm))
    return float(v) if v.ndim == 0 else v


def write_profile_csv(profile: CorrelationProfile, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["tau_ns", "density_per_s"])
        for t, d in zip(profile.tau, profile.density):
            w.writerow([f"{t * 1e9:.6f}", f"{d:.9g}"])


def write_histogram_csv(hist: BinnedHistogram, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["tau_ns", "counts"])
        for t, n in zip(hist.bin_centers, hist.counts):
            w.writerow([f"{t * 1e9:.6f}", f"{n:.9g}"])
