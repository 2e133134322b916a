"""Frequency-domain model of the doubly filtered down-conversion output.

All frequencies are detunings in Hz. The pump is monochromatic, so the pair
lives on a single detuning axis: a signal photon at ``+d`` is partnered by an
idler photon at ``-d`` relative to the locked idler frequency.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import NamedTuple, Optional, Sequence

import numpy as np
from scipy.optimize import brentq

__all__ = [
    "CavityParams",
    "EtalonParams",
    "EnvelopeShape",
    "PhaseMatchEnvelope",
    "ModePair",
    "SpectralLine",
    "BiphotonSpectrum",
    "MAX_DETUNING_CAP",
    "SINC2_HALF_POINT",
    "airy_transmission",
    "mirror_factor",
    "cavity_transmission",
    "etalon_transmission",
    "lorentzian",
    "phase_matching_envelope",
    "wrap_detuning",
    "enumerate_mode_pairs",
    "build_spectrum",
    "single_line_spectrum",
    "line_overlap_matrix",
]

MAX_DETUNING_CAP = 200e9

# sinc^2(x) = 1/2, sinc(x) = sin(x)/x
SINC2_HALF_POINT = brentq(lambda x: (math.sin(x) / x) ** 2 - 0.5, 1.0, 2.0, xtol=1e-15)


def _check_comb(fsr, fwhm):
    if not fsr > 0:
        raise ValueError(f"fsr must be positive, got {fsr}")
    if not 0 < fwhm < fsr:
        raise ValueError(f"fwhm must satisfy 0 < fwhm < fsr (fwhm={fwhm}, fsr={fsr})")


@dataclass(frozen=True)
class CavityParams:
    """Longitudinal mode comb of one cavity of the conjoined pair."""

    fsr: float
    fwhm: float
    peak_transmission: float = 1.0
    comb_offset: float = 0.0

    def __post_init__(self):
        _check_comb(self.fsr, self.fwhm)
        if not 0 < self.peak_transmission <= 1:
            raise ValueError("peak_transmission must be in (0, 1]")

    @property
    def finesse(self) -> float:
        return self.fsr / self.fwhm

    @property
    def round_trip_time(self) -> float:
        return 1.0 / self.fsr


@dataclass(frozen=True)
class EtalonParams:
    fsr: float
    fwhm: float
    center_offset: float = 0.0
    peak_transmission: float = 1.0

    def __post_init__(self):
        _check_comb(self.fsr, self.fwhm)
        if not 0 < self.peak_transmission <= 1:
            raise ValueError("peak_transmission must be in (0, 1]")

    @property
    def finesse(self) -> float:
        return self.fsr / self.fwhm


class EnvelopeShape(str, Enum):
    SINC_SQUARED = "sinc_squared"
    GAUSSIAN = "gaussian"


@dataclass(frozen=True)
class PhaseMatchEnvelope:
    fwhm: float
    shape: EnvelopeShape = EnvelopeShape.SINC_SQUARED

    def __post_init__(self):
        if not self.fwhm > 0:
            raise ValueError("envelope fwhm must be positive")
        object.__setattr__(self, "shape", EnvelopeShape(self.shape))


def mirror_factor(finesse: float) -> float:
    """Effective mirror amplitude factor ``r`` with ``pi*sqrt(r)/(1-r) = finesse``."""
    if finesse <= 0:
        raise ValueError("finesse must be positive")
    # quadratic in s = sqrt(r): F s^2 + pi s - F = 0
    s = (-math.pi + math.sqrt(math.pi ** 2 + 4.0 * finesse ** 2)) / (2.0 * finesse)
    return s * s


def airy_transmission(fsr, fwhm, peak, detuning):
    """Periodic Airy intensity transmission with finesse ``fsr/fwhm``."""
    _check_comb(fsr, fwhm)
    coeff = (2.0 * (fsr / fwhm) / math.pi) ** 2
    s = np.sin(np.pi * np.asarray(detuning, dtype=float) / fsr)
    return peak / (1.0 + coeff * s * s)


def cavity_transmission(params: CavityParams, detuning):
    return airy_transmission(
        params.fsr, params.fwhm, params.peak_transmission,
        np.asarray(detuning, dtype=float) - params.comb_offset,
    )


def etalon_transmission(params: EtalonParams, detuning):
    return airy_transmission(
        params.fsr, params.fwhm, params.peak_transmission,
        np.asarray(detuning, dtype=float) - params.center_offset,
    )


def lorentzian(detuning, fwhm):
    """Unit-peak Lorentzian intensity response."""
    x = 2.0 * np.asarray(detuning, dtype=float) / fwhm
    return 1.0 / (1.0 + x * x)


def phase_matching_envelope(env: PhaseMatchEnvelope, detuning):
    """Unit-peak phase-matching intensity envelope, 1/2 at +-fwhm/2."""
    d = np.asarray(detuning, dtype=float)
    if env.shape is EnvelopeShape.GAUSSIAN:
        return np.exp(-4.0 * math.log(2.0) * (d / env.fwhm) ** 2)
    x = 2.0 * SINC2_HALF_POINT * d / env.fwhm
    # np.sinc is sin(pi x)/(pi x)
    return np.sinc(x / np.pi) ** 2


def wrap_detuning(x, period):
    """Wrap into the half-open interval ``(-period/2, period/2]``."""
    x = np.asarray(x, dtype=float)
    return x - period * np.ceil(x / period - 0.5)


class ModePair(NamedTuple):
    index: int
    signal_detuning: float
    idler_mismatch: float
    joint_weight: float


def enumerate_mode_pairs(
    signal: CavityParams,
    idler: CavityParams,
    env: PhaseMatchEnvelope,
    max_detuning: float,
    cap: float = MAX_DETUNING_CAP,
) -> list[ModePair]:
    """List signal modes within ``max_detuning`` and their idler partners.

    Each signal resonance ``m`` sits at ``comb_offset + m*FSR_s``; its
    energy-conserving partner lands at the negated detuning on the idler
    side, and ``idler_mismatch`` is that partner's distance to the nearest
    idler resonance. The joint weight combines the phase-matching envelope,
    the idler Lorentzian at the mismatch, and both peak transmissions.
    """
    if max_detuning < 0:
        raise ValueError("max_detuning must be non-negative")
    if max_detuning > cap:
        raise ValueError(f"max_detuning {max_detuning:g} Hz exceeds cap {cap:g} Hz")
    m_max = int(math.floor(max_detuning / signal.fsr * (1 + 1e-12)))
    m = np.arange(-m_max, m_max + 1)
    sig = signal.comb_offset + m * signal.fsr
    mismatch = wrap_detuning(-sig - idler.comb_offset, idler.fsr)
    weight = (
        phase_matching_envelope(env, sig)
        * lorentzian(mismatch, idler.fwhm)
        * signal.peak_transmission
        * idler.peak_transmission
    )
    return [
        ModePair(int(k), float(s), float(d), float(w))
        for k, s, d, w in zip(m, sig, mismatch, weight)
    ]


class SpectralLine(NamedTuple):
    center_detuning: float
    signal_width: float
    idler_width: float
    amplitude_weight: float


def line_overlap_matrix(centers, signal_widths, idler_widths):
    """Gram matrix of unit-norm line wavepackets, ``<psi_j|psi_k>``.

    Each line is a two-sided exponential decaying at ``pi*idler_width`` for
    positive delay and ``pi*signal_width`` for negative delay, carrying the
    phase ``exp(-2i pi center tau)``.
    """
    c = np.asarray(centers, dtype=float)
    a = np.pi * np.asarray(idler_widths, dtype=float)
    b = np.pi * np.asarray(signal_widths, dtype=float)
    n = np.sqrt(2.0 * a * b / (a + b))
    w = 2.0 * np.pi * (c[:, None] - c[None, :])
    g = 1.0 / (a[:, None] + a[None, :] + 1j * w) + 1.0 / (b[:, None] + b[None, :] - 1j * w)
    return n[:, None] * n[None, :] * g


@dataclass(frozen=True)
class BiphotonSpectrum:
    """Weighted Lorentzian lines on the signal detuning axis.

    ``amplitude_weight`` is normalised so that the implied delay density
    (inter-line interference included) integrates to one. ``total_norm``
    keeps the pre-normalisation sum of per-line integrated densities.
    """

    center_detuning: np.ndarray
    signal_width: np.ndarray
    idler_width: np.ndarray
    amplitude_weight: np.ndarray
    total_norm: float = field(default=1.0)

    def __post_init__(self):
        arrays = [np.atleast_1d(np.asarray(getattr(self, k), dtype=float)) for k in
                  ("center_detuning", "signal_width", "idler_width", "amplitude_weight")]
        if len({len(a) for a in arrays}) != 1 or len(arrays[0]) == 0:
            raise ValueError("line arrays must be nonempty and of equal length")
        if np.any(arrays[3] < 0):
            raise ValueError("amplitude weights must be non-negative")
        if np.any(arrays[1] <= 0) or np.any(arrays[2] <= 0):
            raise ValueError("line widths must be positive")
        for k, a in zip(("center_detuning", "signal_width", "idler_width", "amplitude_weight"), arrays):
            a.setflags(write=False)
            object.__setattr__(self, k, a)

    @classmethod
    def from_lines(cls, centers, signal_widths, idler_widths, weights) -> "BiphotonSpectrum":
        """Normalise raw amplitude weights into a spectrum."""
        c, ws, wi, a = (np.atleast_1d(np.asarray(v, dtype=float))
                        for v in (centers, signal_widths, idler_widths, weights))
        ws = np.broadcast_to(ws, c.shape)
        wi = np.broadcast_to(wi, c.shape)
        gram = line_overlap_matrix(c, ws, wi)
        energy = float(np.real(a @ gram @ a))
        if not energy > 0:
            raise ValueError("empty spectrum")
        return cls(c, ws.copy(), wi.copy(), a / math.sqrt(energy), total_norm=float(np.sum(a * a)))

    def __len__(self):
        return len(self.center_detuning)

    @property
    def lines(self) -> list[SpectralLine]:
        return [SpectralLine(*map(float, row)) for row in zip(
            self.center_detuning, self.signal_width, self.idler_width, self.amplitude_weight)]

    @property
    def intensity_weights(self) -> np.ndarray:
        """Per-line spectral power fractions (sum to one)."""
        p = self.amplitude_weight ** 2
        return p / p.sum()

    def norm(self) -> float:
        """Integrated delay density implied by the stored weights."""
        gram = line_overlap_matrix(self.center_detuning, self.signal_width, self.idler_width)
        a = self.amplitude_weight
        return float(np.real(a @ gram @ a))

    def max_detuning(self) -> float:
        return float(np.max(np.abs(self.center_detuning)))


def build_spectrum(
    pairs: Sequence[ModePair],
    signal: CavityParams,
    idler: CavityParams,
    etalon: Optional[EtalonParams] = None,
    prune: float = 1e-6,
) -> BiphotonSpectrum:
    """Assemble the filtered biphoton spectrum, one line per mode pair.

    With an etalon in the idler arm each line is scaled by the etalon
    transmission at its idler-side frequency. Lines whose weight falls below
    ``prune`` times the strongest are dropped.
    """
    if len(pairs) == 0:
        raise ValueError("no mode pairs given")
    det = np.array([p.signal_detuning for p in pairs], dtype=float)
    w = np.array([p.joint_weight for p in pairs], dtype=float)
    if etalon is not None:
        w = w * etalon_transmission(etalon, -det)
    wmax = w.max() if w.size else 0.0
    if not wmax > 0:
        raise ValueError("empty spectrum")
    keep = w >= prune * wmax
    return BiphotonSpectrum.from_lines(det[keep], signal.fwhm, idler.fwhm, w[keep])


def single_line_spectrum(signal_width: float, idler_width: float) -> BiphotonSpectrum:
    return BiphotonSpectrum.from_lines([0.0], signal_width, idler_width, [1.0])
