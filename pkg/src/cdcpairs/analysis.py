"""Estimators on detector time tags: correlograms, fits, g2(0), comb period.

Delays are ``t_idler - t_signal``. Positive-delay quantities belong to the
idler, negative-delay quantities to the signal.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import NamedTuple, Optional, Sequence

import numba
import numpy as np
from numba import njit, prange
from scipy.optimize import OptimizeWarning, curve_fit

from .correlation import centered_bin_edges

__all__ = [
    "ACCIDENTAL_WINDOW",
    "Correlogram",
    "BandwidthFit",
    "CombNotDetected",
    "FringePoint",
    "BootstrapResult",
    "RunSummary",
    "cross_correlogram",
    "centered_range",
    "fit_bandwidths",
    "g2_zero_estimate",
    "comb_period",
    "coincidence_rate_metric",
    "fringe_visibility",
    "bootstrap",
    "analyze",
]

ACCIDENTAL_WINDOW = (200e-9, 250e-9)


@dataclass(frozen=True)
class Correlogram:
    bin_width: float
    range: tuple[float, float]
    counts: np.ndarray
    n_signal: int
    n_idler: int
    wall_time: float
    slice_counts: Optional[np.ndarray] = field(default=None, repr=False)

    @property
    def bin_centers(self) -> np.ndarray:
        return self.range[0] + (np.arange(self.counts.size) + 0.5) * self.bin_width

    def with_counts(self, counts) -> "Correlogram":
        return Correlogram(self.bin_width, self.range, np.asarray(counts), self.n_signal,
                           self.n_idler, self.wall_time)


@njit(cache=True)
def _accumulate(ts, ti, lo, bw, nbins, slice_of, out):
    n_i = ti.size
    hi = lo + bw * nbins
    j0 = 0
    if ts.size:
        # first idler that can pair with the first signal tag
        j0 = np.searchsorted(ti, ts[0] + lo)
    for k in range(ts.size):
        t = ts[k]
        while j0 < n_i and ti[j0] - t < lo:
            j0 += 1
        s = slice_of[k]
        j = j0
        while j < n_i:
            d = ti[j] - t
            if d >= hi:
                break
            out[s, (d - lo) // bw] += 1
            j += 1


@njit(cache=True, parallel=True)
def _accumulate_sharded(ts, ti, lo, bw, nbins, slice_of, n_slices, n_shards):
    parts = np.zeros((n_shards, n_slices, nbins), dtype=np.int64)
    bounds = np.linspace(0, ts.size, n_shards + 1).astype(np.int64)
    for p in prange(n_shards):
        a, b = bounds[p], bounds[p + 1]
        _accumulate(ts[a:b], ti, lo, bw, nbins, slice_of[a:b], parts[p])
    return parts.sum(axis=0)


def centered_range(bin_width: float, span: float = 400e-9) -> tuple[float, float]:
    """Histogram range with one bin centred on zero delay."""
    edges = centered_bin_edges(bin_width, span)
    return float(edges[0]), float(edges[-1])


def _check_sorted(x, name):
    if x.size > 1 and np.any(np.diff(x) < 0):
        raise ValueError(f"{name} timestamps are not sorted")


def cross_correlogram(signal_tags, idler_tags, bin_width: float,
                      range: Optional[tuple[float, float]] = None, n_slices: int = 1,
                      wall_time: Optional[float] = None, shards: Optional[int] = None) -> Correlogram:
    """Histogram of ``t_idler - t_signal`` over all tag pairs inside ``range``.

    Two-pointer sweep over the sorted streams, linear in the number of tags
    plus the number of pairs found. With ``n_slices > 1`` a per-time-slice
    histogram (by signal tag time) is kept for bootstrap resampling.
    Timestamps are integer picoseconds; ``bin_width`` and ``range`` are
    seconds and must be whole picoseconds.
    """
    ts = np.ascontiguousarray(signal_tags, dtype=np.int64)
    ti = np.ascontiguousarray(idler_tags, dtype=np.int64)
    _check_sorted(ts, "signal")
    _check_sorted(ti, "idler")
    if range is None:
        range = centered_range(bin_width)
    bw = int(round(bin_width * 1e12))
    lo = int(round(range[0] * 1e12))
    hi = int(round(range[1] * 1e12))
    if bw <= 0 or hi <= lo:
        raise ValueError("bin width and range must be positive")
    if (hi - lo) % bw:
        raise ValueError("range must be a whole number of bins")
    nbins = (hi - lo) // bw

    if wall_time is None:
        first = min(ts[0] if ts.size else 0, ti[0] if ti.size else 0)
        last = max(ts[-1] if ts.size else 0, ti[-1] if ti.size else 0)
        wall_time = (last - first) * 1e-12
    if n_slices > 1 and ts.size:
        t0, t1 = ts[0], ts[-1] + 1
        slice_of = ((ts - t0).astype(np.float64) * n_slices / (t1 - t0)).astype(np.int64)
        np.clip(slice_of, 0, n_slices - 1, out=slice_of)
    else:
        n_slices = max(n_slices, 1)
        slice_of = np.zeros(ts.size, np.int64)

    if shards is None:
        shards = numba.get_num_threads()
    if shards > 1 and ts.size > 100_000:
        per = _accumulate_sharded(ts, ti, lo, bw, nbins, slice_of, n_slices, shards)
    else:
        per = np.zeros((n_slices, nbins), dtype=np.int64)
        _accumulate(ts, ti, lo, bw, nbins, slice_of, per)
    return Correlogram(bw * 1e-12, (lo * 1e-12, hi * 1e-12), per.sum(axis=0), int(ts.size),
                       int(ti.size), float(wall_time), per if n_slices > 1 else None)


def _region(corr: Correlogram, window):
    c = corr.bin_centers
    lo, hi = window
    sel = (c >= lo) & (c <= hi)
    if not np.any(sel):
        raise ValueError("empty accidental region")
    return sel


def _floor(corr, window):
    sel = _region(corr, window)
    return float(np.mean(corr.counts[sel])), int(sel.sum())


class BandwidthFit(NamedTuple):
    delta_nu_left: float
    delta_nu_right: float
    fit_window_left: tuple[float, float]
    fit_window_right: tuple[float, float]
    residual_rms: float


def _fit_side(tau_abs, counts, floor, var_floor, t_min, t_max):
    """Weighted log-linear fit of ``counts - floor`` against ``|tau|``."""
    sel = (tau_abs >= t_min) & (tau_abs <= t_max)
    x = tau_abs[sel]
    n = counts[sel]
    order = np.argsort(x)
    x, n = x[order], n[order]
    y = n - floor
    bad = np.nonzero(y <= 0)[0]
    if bad.size:
        x, n, y = x[: bad[0]], n[: bad[0]], y[: bad[0]]
    if x.size < 5:
        raise ValueError("fewer than 5 usable bins in fit window")
    w = y * y / (np.maximum(n, 1.0) + var_floor)
    sw = np.sqrt(w)
    A = np.column_stack([np.ones_like(x), x]) * sw[:, None]
    coef, *_ = np.linalg.lstsq(A, np.log(y) * sw, rcond=None)
    resid = (np.log(y) - coef[0] - coef[1] * x) * sw
    rate = -coef[1]
    if not rate > 0:
        raise ValueError("fitted decay is not positive")
    return (rate / (2 * np.pi), (float(x[0]), float(x[-1])),
            float(np.sqrt(np.mean(resid ** 2))), float(coef[0]))


def fit_bandwidths(corr: Correlogram, jitter_fwhm: float = 495e-12,
                   accidental_window=ACCIDENTAL_WINDOW, coherence_times: float = 4.0,
                   min_snr: float = 10.0, tail_iterations: int = 3) -> BandwidthFit:
    """Fit ``exp(-2 pi dnu |tau|)`` separately to each side of the correlogram.

    The floor starts as the mean of the accidental region. That region still
    holds a little of the correlated tail, so the floor is lowered by the
    fitted idler-side exponential averaged over the region and the fit is
    repeated ``tail_iterations`` times. Each side is fitted from three jitter
    widths out to ``coherence_times`` coherence times.
    """
    c = corr.bin_centers
    counts = np.asarray(corr.counts, dtype=float)
    raw_floor, n_floor = _floor(corr, accidental_window)
    region = c[_region(corr, accidental_window)]
    var_floor = max(raw_floor, 1.0) / n_floor
    peak = counts.max() - raw_floor
    if peak / math.sqrt(max(raw_floor, 1.0)) < min_snr:
        raise ValueError("peak SNR below threshold")
    t_min = max(3.0 * jitter_fwhm, corr.bin_width)
    floor = raw_floor
    for _ in range(1 + max(tail_iterations, 0)):
        out = []
        for side in (c < 0, c > 0):
            x, n = np.abs(c[side]), counts[side]
            # first pass: until the excess drops below peak * e^-coherence_times
            below = np.nonzero((x > t_min) & (n - floor < peak * math.exp(-coherence_times)))[0]
            t_max = x[below].min() if below.size else x.max()
            dnu = _fit_side(x, n, floor, var_floor, t_min, t_max)[0]
            t_max = min(coherence_times / (2 * np.pi * dnu), accidental_window[0])
            out.append(_fit_side(x, n, floor, var_floor, t_min, t_max))
        dnu_r, icpt_r = out[1][0], out[1][3]
        tail = float(np.mean(np.exp(icpt_r - 2 * np.pi * dnu_r * region)))
        floor = raw_floor - tail
    (dl, wl, rl, _), (dr, wr, rr, _) = out
    return BandwidthFit(dl, dr, wl, wr, math.hypot(rl, rr) / math.sqrt(2))


def g2_zero_estimate(corr: Correlogram, accidental_window=ACCIDENTAL_WINDOW,
                     average_peak: bool = False, peak_window: float = 4e-9) -> float:
    """Peak bin over the mean accidental bin, without background subtraction.

    The peak is the largest bin with ``|tau| <= peak_window``, which keeps
    the maximum of the flat background far from zero delay out of play.
    ``average_peak`` uses the mean of that bin and its two neighbours.
    """
    floor, _ = _floor(corr, accidental_window)
    if floor <= 0:
        raise ValueError("empty accidental region")
    near = np.nonzero(np.abs(corr.bin_centers) <= max(peak_window, corr.bin_width / 2))[0]
    k = int(near[np.argmax(corr.counts[near])])
    peak = corr.counts[max(k - 1, 0): k + 2].mean() if average_peak else corr.counts[k]
    return float(peak / floor)


class CombNotDetected(ValueError):
    pass


def comb_period(corr: Correlogram, jitter_fwhm: float = 495e-12, max_period: float = 10e-9,
                accidental_window=ACCIDENTAL_WINDOW, threshold: float = 5.0,
                window_coherence_times: float = 3.0) -> float:
    """Period of the comb riding on the correlation peak.

    The correlogram minus its accidental floor is divided by a fitted
    two-sided exponential envelope; the residual, weighted by the expected
    Poisson SNR, is Fourier analysed on each side and the strongest line with
    period between four bins and ``max_period`` is returned. A peak below
    ``threshold`` times the median spectral amplitude raises
    :class:`CombNotDetected`, as does a bin too coarse for that band.
    """
    if 4 * corr.bin_width > max_period:
        raise CombNotDetected("no comb detected: bins too coarse for periods below "
                              f"{max_period:.3g} s")
    c = corr.bin_centers
    counts = np.asarray(corr.counts, dtype=float)
    floor, n_floor = _floor(corr, accidental_window)
    var_floor = max(floor, 1.0) / n_floor
    t_min = max(3.0 * jitter_fwhm, corr.bin_width)
    power = None
    for side in (c < 0, c > 0):
        x, n = np.abs(c[side]), counts[side]
        order = np.argsort(x)
        x, n = x[order], n[order]
        try:
            dnu = _fit_side(x, n, floor, var_floor, t_min, accidental_window[0])[0]
            t_max = window_coherence_times / (2 * np.pi * dnu)
            sel = (x >= t_min) & (x <= t_max)
            xs, ys = x[sel], n[sel] - floor
            coef = np.polyfit(xs, np.log(np.clip(ys, 1e-300, None)), 1,
                              w=np.sqrt(np.clip(ys, 0, None)))
        except (ValueError, np.linalg.LinAlgError):
            continue
        env = np.exp(np.polyval(coef, xs))
        r = (ys - env) / np.sqrt(env + floor + 1e-12)
        if r.size < 16:
            continue
        r = (r - r.mean()) * np.hanning(r.size)
        nfft = 16 * (1 << int(math.ceil(math.log2(r.size))))
        p = np.abs(np.fft.rfft(r, nfft)) ** 2
        power = p if power is None else power + p
    if power is None:
        raise CombNotDetected("no comb detected: no usable correlation peak")
    freq = np.fft.rfftfreq(nfft, corr.bin_width)
    amp = np.sqrt(power)
    band = (freq >= 1.0 / max_period) & (freq <= 1.0 / (4 * corr.bin_width))
    noise = np.median(amp[freq >= 1.0 / max_period])
    idx = np.nonzero(band)[0]
    k = idx[np.argmax(amp[idx])]
    if not amp[k] > threshold * noise:
        raise CombNotDetected(f"no comb detected: peak {amp[k]:.3g} vs noise floor {noise:.3g}")
    # parabolic refinement on log amplitude
    if 0 < k < amp.size - 1:
        a, b, g = np.log(amp[k - 1: k + 2])
        den = a - 2 * b + g
        shift = 0.5 * (a - g) / den if den != 0 else 0.0
    else:
        shift = 0.0
    f = freq[k] + shift * (freq[1] - freq[0])
    return float(1.0 / f)


def coincidence_rate_metric(corr: Correlogram, accidental_window=ACCIDENTAL_WINDOW) -> float:
    """Background-subtracted coincidences per second over the whole histogram."""
    floor, _ = _floor(corr, accidental_window)
    return float((corr.counts.sum() - floor * corr.counts.size) / corr.wall_time)


class FringePoint(NamedTuple):
    path_difference: float
    visibility: float
    ok: bool


def _sinusoid(x, a, b, c, k):
    return a + b * np.cos(k * x) + c * np.sin(k * x)


def fringe_visibility(scans: Sequence[tuple[np.ndarray, np.ndarray]],
                      wavelength: float = 880e-9) -> list[FringePoint]:
    """Fringe contrast of each local Michelson scan from a sinusoid fit.

    Each scan is ``(path_difference, counts)`` over at least one fringe.
    Points whose fit fails come back with ``ok=False`` and a NaN visibility.
    """
    out = []
    for x, y in scans:
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        centre = float(x.mean())
        if x.size < 5 or np.ptp(x) < wavelength:
            out.append(FringePoint(centre, math.nan, False))
            continue
        k0 = 2 * np.pi / wavelength
        u = x - centre
        try:
            A = np.column_stack([np.ones_like(u), np.cos(k0 * u), np.sin(k0 * u)])
            p0, *_ = np.linalg.lstsq(A, y, rcond=None)
            with warnings.catch_warnings():
                # degenerate scans are caught by the checks below
                warnings.simplefilter("ignore", OptimizeWarning)
                p, _ = curve_fit(_sinusoid, u, y, p0=[*p0, k0], maxfev=2000)
        except (RuntimeError, ValueError, np.linalg.LinAlgError):
            out.append(FringePoint(centre, math.nan, False))
            continue
        a, b, c, _ = p
        if not a > 0 or not np.all(np.isfinite(p)):
            out.append(FringePoint(centre, math.nan, False))
            continue
        out.append(FringePoint(centre, float(math.hypot(b, c) / a), True))
    return out


class BootstrapResult(NamedTuple):
    estimates: dict
    std: dict
    samples: dict


def _estimates(corr, jitter_fwhm, accidental_window):
    fit = fit_bandwidths(corr, jitter_fwhm, accidental_window)
    return {
        "delta_nu_left": fit.delta_nu_left,
        "delta_nu_right": fit.delta_nu_right,
        "g2_zero": g2_zero_estimate(corr, accidental_window),
    }


def bootstrap(corr: Correlogram, n_resamples: int = 200, seed: int = 0,
              jitter_fwhm: float = 495e-12, accidental_window=ACCIDENTAL_WINDOW) -> BootstrapResult:
    """Resample time slices with replacement and re-run the estimators."""
    if corr.slice_counts is None:
        raise ValueError("correlogram has no time slices; build it with n_slices > 1")
    rng = np.random.default_rng(seed)
    sl = corr.slice_counts
    base = _estimates(corr, jitter_fwhm, accidental_window)
    samples = {k: [] for k in base}
    for _ in range(n_resamples):
        pick = np.bincount(rng.integers(0, sl.shape[0], sl.shape[0]), minlength=sl.shape[0])
        try:
            est = _estimates(corr.with_counts(pick @ sl), jitter_fwhm, accidental_window)
        except ValueError:
            continue
        for k, v in est.items():
            samples[k].append(v)
    samples = {k: np.array(v) for k, v in samples.items()}
    std = {k: float(np.std(v, ddof=1)) for k, v in samples.items()}
    return BootstrapResult(base, std, samples)


@dataclass
class RunSummary:
    g2_zero: float
    delta_nu_left_hz: float
    delta_nu_right_hz: float
    comb_period_ps: float
    coincidence_rate_hz: float

    def to_text(self) -> str:
        return "".join(f"{k}={v:.6g}\n" for k, v in self.__dict__.items())


def analyze(signal_tags, idler_tags, bin_width: float = 4e-9, span: float = 400e-9,
            jitter_fwhm: float = 495e-12, wall_time: Optional[float] = None,
            comb_bin_width: float = 256e-12,
            accidental_window=ACCIDENTAL_WINDOW) -> RunSummary:
    """Run every estimator on one stream; failed estimators report NaN.

    The comb period comes from a second, finer correlogram with
    ``comb_bin_width`` bins, since the main bins usually wash the comb out.
    """
    corr = cross_correlogram(signal_tags, idler_tags, bin_width, centered_range(bin_width, span),
                             wall_time=wall_time)
    nan = math.nan
    try:
        fit = fit_bandwidths(corr, jitter_fwhm, accidental_window)
        dl, dr = fit.delta_nu_left, fit.delta_nu_right
    except ValueError:
        dl = dr = nan
    try:
        fine = cross_correlogram(signal_tags, idler_tags, comb_bin_width,
                                 centered_range(comb_bin_width, span), wall_time=wall_time)
        period = comb_period(fine, jitter_fwhm, accidental_window=accidental_window) * 1e12
    except ValueError:
        period = nan
    try:
        g2 = g2_zero_estimate(corr, accidental_window)
    except ValueError:
        g2 = nan
    return RunSummary(g2, dl, dr, period, coincidence_rate_metric(corr, accidental_window))
