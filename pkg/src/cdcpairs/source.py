"""The modeled source assembled from a :class:`~cdcpairs.config.SourceConfig`.

``filtered=True`` everywhere means the etalon sits in the idler arm.
"""
from __future__ import annotations

from functools import cached_property, lru_cache
from typing import Optional

import numpy as np

from .config import SourceConfig, load_config
from .correlation import (
    CorrelationProfile,
    biphoton_wavepacket,
    convolve_jitter,
    g2_profile,
    michelson_coherence,
    pair_jitter,
    tau_grid,
)
from .rates import CountingConfig, SourceRateModel, calibrate_pair_rate, calibrate_single_mode_fraction
from .spectral import (
    MAX_DETUNING_CAP,
    BiphotonSpectrum,
    CavityParams,
    EtalonParams,
    PhaseMatchEnvelope,
    build_spectrum,
    enumerate_mode_pairs,
    single_line_spectrum,
)
from .timetags import SimConfig

__all__ = ["Source", "default_source", "fringe_scans"]


class Source:
    def __init__(self, config: Optional[SourceConfig] = None):
        self.config = config if config is not None else load_config()

    def _sec(self, name):
        return self.config.section(name)

    @cached_property
    def signal_cavity(self) -> CavityParams:
        return CavityParams(**self._sec("signal_cavity"))

    @cached_property
    def idler_cavity(self) -> CavityParams:
        return CavityParams(**self._sec("idler_cavity"))

    @cached_property
    def envelope(self) -> PhaseMatchEnvelope:
        return PhaseMatchEnvelope(**self._sec("envelope"))

    @cached_property
    def etalon(self) -> EtalonParams:
        return EtalonParams(**self._sec("etalon"))

    @property
    def pair_jitter_fwhm(self) -> float:
        return pair_jitter(self.config["detector.jitter_fwhm"])

    @cached_property
    def counting(self) -> CountingConfig:
        c = self.config
        return CountingConfig(c["counting.bin_width"],
                              (c["counting.accidental_min"], c["counting.accidental_max"]),
                              c["counting.integration_time"], c["grid.tau_span"])

    @cached_property
    def tau(self) -> np.ndarray:
        return tau_grid(self.config["grid.tau_span"], self.config["grid.tau_step"])

    def spectrum(self, filtered: bool = False, max_detuning: Optional[float] = None) -> BiphotonSpectrum:
        """Biphoton spectrum; the default detuning range suits the delay grid."""
        if max_detuning is None:
            max_detuning = self.config["grid.max_detuning"]
        return self._spectrum(bool(filtered), float(max_detuning))

    @lru_cache(maxsize=8)
    def _spectrum(self, filtered, max_detuning):
        pairs = enumerate_mode_pairs(self.signal_cavity, self.idler_cavity, self.envelope, max_detuning)
        return build_spectrum(pairs, self.signal_cavity, self.idler_cavity,
                              self.etalon if filtered else None)

    def wide_spectrum(self, filtered: bool = False) -> BiphotonSpectrum:
        """Spectrum over twice the phase-matching width, for frequency-domain work."""
        return self.spectrum(filtered, min(2 * self.envelope.fwhm, MAX_DETUNING_CAP))

    @lru_cache(maxsize=8)
    def profile(self, filtered: bool = False, jitter: bool = True) -> CorrelationProfile:
        """Delay density of true pairs, optionally with the two-detector jitter."""
        p = g2_profile(self.tau, biphoton_wavepacket(self.spectrum(filtered), self.tau))
        return convolve_jitter(p, self.pair_jitter_fwhm) if jitter else p

    @cached_property
    def rate_model(self) -> SourceRateModel:
        """Rate model with ``auto`` entries calibrated against the anchors."""
        r = self._sec("rates")
        model = SourceRateModel(
            pair_rate_per_mw=r["pair_rate_per_mw"] or 1.0,
            eta_signal=r["eta_signal"], eta_idler=r["eta_idler"],
            dark_signal=r["dark_signal"], dark_idler=r["dark_idler"],
            duty_cycle=r["duty_cycle"], single_mode_fraction=r["single_mode_fraction"] or 1.0)
        if r["pair_rate_per_mw"] is None:
            model = calibrate_pair_rate(model, self.profile(False), self.counting,
                                        r["calibration_g2"], r["calibration_pump"])
        if r["single_mode_fraction"] is None:
            model = calibrate_single_mode_fraction(model, self.profile(True), self.counting,
                                                   r["single_mode_rate"], r["single_mode_pump"])
        return model

    def rates_for(self, filtered: bool = False) -> SourceRateModel:
        return self.rate_model.through_etalon() if filtered else self.rate_model

    def sim_config(self, duration: float, pump_mw: float, seed: int = 0,
                   filtered: bool = False, **overrides) -> SimConfig:
        c = self.config
        kw = dict(
            duration=duration, pump_mw=pump_mw, rate_model=self.rates_for(filtered),
            profile=self.profile(filtered, jitter=False),
            jitter_fwhm_per_detector=c["detector.jitter_fwhm"],
            chopper_frequency=c["chopper.frequency"], open_fraction=c["chopper.open_fraction"],
            rng_seed=seed, dead_time=c["detector.dead_time"])
        kw.update(overrides)
        return SimConfig(**kw)

    def michelson_spectrum(self, case: str) -> BiphotonSpectrum:
        """Idler-arm spectrum for ``filtered``, ``unfiltered`` or ``classical`` light."""
        if case == "classical":
            lw = self.config["michelson.classical_linewidth"]
            return single_line_spectrum(lw, lw)
        if case not in ("filtered", "unfiltered"):
            raise ValueError(f"unknown Michelson case {case!r}")
        return self.wide_spectrum(case == "filtered")


def default_source() -> Source:
    return Source()


def fringe_scans(spectrum: BiphotonSpectrum, centers, wavelength: float = 880e-9,
                 mean_counts: float = 1e4, points: int = 41, fringes: float = 2.0,
                 rng: Optional[np.random.Generator] = None):
    """Local Michelson scans around each path difference in ``centers``.

    Counts follow ``N (1 + Re[g1(d) exp(2 pi i d / wavelength)])`` with the
    coherence ``g1`` of the idler arm; ``rng`` adds Poisson noise.
    """
    scans = []
    for d0 in np.atleast_1d(np.asarray(centers, dtype=float)):
        u = np.linspace(-0.5, 0.5, points) * fringes * wavelength
        d = d0 + u
        d = d - min(d[0], 0.0)  # scans near zero start at zero
        g = michelson_coherence(spectrum, d)
        carrier = np.exp(2j * np.pi * d / wavelength)
        counts = mean_counts * (1.0 + np.real(g * carrier))
        if rng is not None:
            counts = rng.poisson(counts).astype(float)
        scans.append((d, counts))
    return scans
