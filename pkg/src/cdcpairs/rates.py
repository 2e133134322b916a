"""Counting statistics of the chopped pair source.

Rates stored on :class:`SourceRateModel` are instantaneous (chopper open).
Everything detected, dark counts included, arrives inside the open windows,
so time-averaged singles carry a ``duty_cycle`` factor while accidental
coincidences carry ``1/duty_cycle``. The duty cycle therefore cancels from
g2(0), as it does for real gated data.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from .correlation import CorrelationProfile, bin_histogram

__all__ = [
    "SourceRateModel",
    "CountingConfig",
    "singles_rates",
    "true_pair_rate",
    "peak_bin_mass",
    "accidentals_per_bin",
    "g2_zero",
    "expected_g2_estimate",
    "g2_power_sweep",
    "power_law_slope",
    "coincidence_rate",
    "spectral_brightness",
    "calibrate_pair_rate",
    "calibrate_single_mode_fraction",
]


@dataclass(frozen=True)
class SourceRateModel:
    pair_rate_per_mw: float = 1.56e5
    eta_signal: float = 0.06
    eta_idler: float = 0.06
    dark_signal: float = 200.0
    dark_idler: float = 200.0
    duty_cycle: float = 1.0 / 3.0
    single_mode_fraction: float = 1.0

    def __post_init__(self):
        for k in ("pair_rate_per_mw", "dark_signal", "dark_idler"):
            if getattr(self, k) < 0:
                raise ValueError(f"{k} must be non-negative")
        for k in ("eta_signal", "eta_idler", "duty_cycle", "single_mode_fraction"):
            v = getattr(self, k)
            if not 0 < v <= 1:
                raise ValueError(f"{k} must be in (0, 1], got {v}")

    def through_etalon(self) -> "SourceRateModel":
        """Model of the idler arm behind the etalon.

        Only ``single_mode_fraction`` of the idler photons (mode selection and
        insertion loss together) survive, which acts as an extra idler
        efficiency.
        """
        return replace(self, eta_idler=self.eta_idler * self.single_mode_fraction,
                       single_mode_fraction=1.0)

    def without_darks(self) -> "SourceRateModel":
        return replace(self, dark_signal=0.0, dark_idler=0.0)


@dataclass(frozen=True)
class CountingConfig:
    bin_width: float = 4e-9
    accidental_window: tuple[float, float] = (200e-9, 250e-9)
    integration_time: float = 1200.0
    span: float = 400e-9

    def __post_init__(self):
        if not self.bin_width > 0 or not self.integration_time > 0:
            raise ValueError("bin_width and integration_time must be positive")
        lo, hi = self.accidental_window
        if not 0 <= lo < hi <= self.span:
            raise ValueError("accidental window must lie inside the histogram span")


def singles_rates(model: SourceRateModel, pump_mw: float) -> tuple[float, float]:
    """Time-averaged detected singles rates (signal, idler) in counts/s."""
    if pump_mw < 0:
        raise ValueError("pump power must be non-negative")
    r = model.pair_rate_per_mw * pump_mw
    return (model.duty_cycle * (model.eta_signal * r + model.dark_signal),
            model.duty_cycle * (model.eta_idler * r + model.dark_idler))


def true_pair_rate(model: SourceRateModel, pump_mw: float) -> float:
    """Time-averaged rate of pairs with both photons detected."""
    return model.duty_cycle * model.eta_signal * model.eta_idler * model.pair_rate_per_mw * pump_mw


def peak_bin_mass(profile: CorrelationProfile, bin_width: float) -> float:
    """Probability mass of the delay bin centred on zero."""
    edges = np.array([-bin_width / 2, bin_width / 2])
    cdf = np.interp(edges, profile.tau, profile.cdf())
    return float(cdf[1] - cdf[0])


def accidentals_per_bin(model: SourceRateModel, pump_mw: float, cfg: CountingConfig) -> float:
    rs, ri = singles_rates(model, pump_mw)
    return rs * ri * cfg.bin_width * cfg.integration_time / model.duty_cycle


def _check_window(profile, cfg):
    # accidental region must sit beyond five 1/e times of the slower side
    tail = profile.tau > 0
    p = profile.density[tail]
    t = profile.tau[tail]
    peak = profile.density.max()
    below = np.nonzero(p < peak * math.exp(-5.0))[0]
    if below.size == 0 or cfg.accidental_window[0] < t[below[0]]:
        raise ValueError("accidental window is not beyond five coherence times")


def g2_zero(model: SourceRateModel, profile: CorrelationProfile, cfg: CountingConfig,
            pump_mw: float) -> float:
    """Normalised cross-correlation at zero delay, peak bin over accidentals.

    ``1 + true/acc`` with the true counts taken from the bin-averaged profile
    peak. Efficiencies cancel when dark counts are zero.
    """
    _check_window(profile, cfg)
    acc = accidentals_per_bin(model, pump_mw, cfg)
    if acc <= 0:
        raise ValueError("undefined g2: no accidental coincidences")
    true = true_pair_rate(model, pump_mw) * cfg.integration_time * peak_bin_mass(profile, cfg.bin_width)
    return 1.0 + true / acc


def expected_g2_estimate(model: SourceRateModel, profile: CorrelationProfile,
                         cfg: CountingConfig, pump_mw: float) -> float:
    """Expectation of the peak/accidental-mean estimator applied to data.

    Unlike :func:`g2_zero` this keeps the correlated tail that still leaks
    into the accidental region, which the raw estimator does not remove.
    """
    acc = accidentals_per_bin(model, pump_mw, cfg)
    if acc <= 0:
        raise ValueError("undefined g2: no accidental coincidences")
    n_true = true_pair_rate(model, pump_mw) * cfg.integration_time
    hist = bin_histogram(profile, cfg.bin_width, n_true, span=cfg.span)
    c = hist.bin_centers
    lo, hi = cfg.accidental_window
    region = (c >= lo) & (c <= hi)
    peak = hist.counts[np.argmin(np.abs(c))] + acc
    floor = acc + hist.counts[region].mean()
    return float(peak / floor)


def g2_power_sweep(model, profile, cfg, powers: Sequence[float]) -> list[tuple[float, float]]:
    powers = list(powers)
    if not powers:
        raise ValueError("empty power list")
    if any(p <= 0 for p in powers):
        raise ValueError("powers must be positive")
    return [(float(p), g2_zero(model, profile, cfg, p)) for p in powers]


def power_law_slope(sweep: Sequence[tuple[float, float]]) -> float:
    """Least-squares slope of ``log(g2 - 1)`` against ``log(P)``."""
    if len({p for p, _ in sweep}) < 2:
        raise ValueError("power-law fit needs at least two distinct powers")
    p = np.array([s[0] for s in sweep])
    g = np.array([s[1] for s in sweep])
    slope, _ = np.polyfit(np.log(p), np.log(g - 1.0), 1)
    return float(slope)


def coincidence_rate(model: SourceRateModel, profile: CorrelationProfile, cfg: CountingConfig,
                     pump_mw: float) -> float:
    """Background-subtracted coincidences per second summed over the span."""
    edges = np.array([-cfg.span, cfg.span])
    cdf = np.interp(edges, profile.tau, profile.cdf())
    return true_pair_rate(model, pump_mw) * float(cdf[1] - cdf[0])


def spectral_brightness(rate: float, pump_mw: float, bandwidth_mhz: float) -> float:
    """Detected pair rate per MHz of bandwidth per mW of pump."""
    if rate < 0 or not pump_mw > 0 or not bandwidth_mhz > 0:
        raise ValueError("rate must be >= 0, pump and bandwidth > 0")
    return rate / (pump_mw * bandwidth_mhz)


def calibrate_pair_rate(model: SourceRateModel, profile: CorrelationProfile, cfg: CountingConfig,
                        g2_target: float = 88.0, pump_mw: float = 1.0) -> SourceRateModel:
    """Choose ``pair_rate_per_mw`` so that :func:`g2_zero` hits ``g2_target``.

    With dark counts g2 is not monotone in the pair rate; the high-rate root,
    where g2 falls as 1/P, is returned.
    """
    if g2_target <= 1:
        raise ValueError("g2 target must exceed 1")
    m = peak_bin_mass(profile, cfg.bin_width)
    k = (g2_target - 1.0) * cfg.bin_width
    es, ei, ds, di = model.eta_signal, model.eta_idler, model.dark_signal, model.dark_idler
    # k (es x + ds)(ei x + di) = es ei m x, x = R * P
    a = k * es * ei
    b = k * (es * di + ei * ds) - es * ei * m
    c = k * ds * di
    disc = b * b - 4 * a * c
    if disc < 0:
        raise ValueError(f"g2 = {g2_target} unreachable with these dark counts")
    x = (-b + math.sqrt(disc)) / (2 * a)
    return replace(model, pair_rate_per_mw=x / pump_mw)


def calibrate_single_mode_fraction(model: SourceRateModel, profile: CorrelationProfile,
                                   cfg: CountingConfig, rate_target: float = 20.0,
                                   pump_mw: float = 0.9) -> SourceRateModel:
    """Choose ``single_mode_fraction`` so the filtered coincidence rate hits ``rate_target``."""
    base = coincidence_rate(replace(model, single_mode_fraction=1.0), profile, cfg, pump_mw)
    f = rate_target / base
    if not 0 < f <= 1:
        raise ValueError(f"rate {rate_target}/s needs single-mode fraction {f:.3g} outside (0, 1]")
    return replace(model, single_mode_fraction=f)
