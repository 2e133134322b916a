"""Monte Carlo detector time tags and their on-disk formats.

Timestamps are integer picoseconds since the start of the run. Channel 0 is
the signal detector, channel 1 the idler detector.

Binary ``TTG1`` layout (little endian)::

    header  magic b"TTG1" | version u16 | channel count u16 | 8 reserved bytes
    record  timestamp u64 (ps) | channel u8          -- 9 bytes, time ordered
"""
from __future__ import annotations

import csv
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Optional

import numpy as np
from numba import njit

from .correlation import FWHM_TO_SIGMA, CorrelationProfile
from .rates import SourceRateModel

__all__ = [
    "SIGNAL",
    "IDLER",
    "MAGIC",
    "FORMAT_VERSION",
    "HEADER_SIZE",
    "RECORD_DTYPE",
    "TagFileError",
    "TimeTagStream",
    "SimConfig",
    "simulate",
    "simulate_to_file",
    "expected_tag_count",
    "write_tags",
    "read_tags",
    "write_tags_csv",
    "read_tags_csv",
]

SIGNAL = 0
IDLER = 1
MAGIC = b"TTG1"
FORMAT_VERSION = 1
HEADER_SIZE = 16
RECORD_DTYPE = np.dtype([("timestamp", "<u8"), ("channel", "u1")])
assert RECORD_DTYPE.itemsize == 9


class TagFileError(ValueError):
    """Malformed tag file; ``reason`` is one of the class constants."""

    BAD_MAGIC = "bad magic"
    BAD_VERSION = "unsupported version"
    TRUNCATED = "truncated record"
    UNSORTED = "unsorted data"
    BAD_CHANNEL = "bad channel"

    def __init__(self, reason: str, detail: str = ""):
        super().__init__(f"{reason}: {detail}" if detail else reason)
        self.reason = reason


@dataclass
class TimeTagStream:
    timestamps: np.ndarray
    channels: np.ndarray
    duration: float = 0.0
    n_channels: int = 2
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.timestamps = np.asarray(self.timestamps, dtype=np.int64)
        self.channels = np.asarray(self.channels, dtype=np.uint8)
        if self.timestamps.shape != self.channels.shape:
            raise ValueError("timestamps and channels differ in length")

    def __len__(self):
        return self.timestamps.size

    def channel(self, ch: int) -> np.ndarray:
        return self.timestamps[self.channels == ch]

    @property
    def signal(self) -> np.ndarray:
        return self.channel(SIGNAL)

    @property
    def idler(self) -> np.ndarray:
        return self.channel(IDLER)

    def is_sorted(self) -> bool:
        return bool(np.all(np.diff(self.timestamps) >= 0))

    def __eq__(self, other):
        if not isinstance(other, TimeTagStream):
            return NotImplemented
        return (np.array_equal(self.timestamps, other.timestamps)
                and np.array_equal(self.channels, other.channels))


@dataclass(frozen=True)
class SimConfig:
    """Parameters of one simulated acquisition.

    ``profile`` is the delay density of true pairs *before* detector jitter;
    ``None`` means zero delay. ``open_fraction`` defaults to the rate model's
    duty cycle. Randomness is drawn per fixed-length block of
    ``block_duration`` seconds from ``(rng_seed, block_index)``, so output
    does not depend on how blocks are spread over workers.
    """

    duration: float
    pump_mw: float
    rate_model: SourceRateModel
    profile: Optional[CorrelationProfile] = None
    jitter_fwhm_per_detector: float = 350e-12
    chopper_frequency: float = 1e3
    open_fraction: Optional[float] = None
    rng_seed: int = 0
    dead_time: float = 0.0
    block_duration: float = 1.0
    max_tags: float = 1e9

    def __post_init__(self):
        if not self.duration > 0:
            raise ValueError("duration must be positive")
        if self.pump_mw < 0:
            raise ValueError("pump power must be non-negative")
        if not 0 < self.duty <= 1:
            raise ValueError("open_fraction must be in (0, 1]")
        if not self.chopper_frequency > 0 or not self.block_duration > 0:
            raise ValueError("chopper frequency and block duration must be positive")
        if self.jitter_fwhm_per_detector < 0 or self.dead_time < 0:
            raise ValueError("jitter and dead time must be non-negative")

    @property
    def duty(self) -> float:
        return self.rate_model.duty_cycle if self.open_fraction is None else self.open_fraction


def expected_tag_count(cfg: SimConfig) -> float:
    m = cfg.rate_model
    r = m.pair_rate_per_mw * cfg.pump_mw
    per_s = cfg.duty * (r * (m.eta_signal + m.eta_idler) + m.dark_signal + m.dark_idler)
    return per_s * cfg.duration


class _DelaySampler:
    """Inverse-CDF sampler on the profile grid (linear interpolation)."""

    def __init__(self, profile: Optional[CorrelationProfile]):
        self.zero = profile is None
        if self.zero:
            self.reach = 0.0
            return
        cdf = profile.cdf()
        if not np.all(np.diff(cdf) >= 0):
            raise ValueError("delay CDF table is not monotone")
        self.cdf = cdf / cdf[-1]
        self.tau_ps = profile.tau * 1e12
        self.reach = float(np.max(np.abs(self.tau_ps)))

    def __call__(self, rng, n):
        if self.zero:
            return np.zeros(n)
        return np.interp(rng.random(n), self.cdf, self.tau_ps)


def _block_bounds(cfg: SimConfig):
    period = 1.0 / cfg.chopper_frequency
    periods_per_block = max(1, int(round(cfg.block_duration / period)))
    block = periods_per_block * period
    n_blocks = int(math.ceil(cfg.duration / block - 1e-12))
    return period, block, n_blocks


def _open_mask(t_ps, period_ps, open_ps):
    if open_ps >= period_ps:
        return np.ones(t_ps.shape, dtype=bool)
    return np.mod(t_ps, period_ps) < open_ps


def _generate_block(cfg: SimConfig, sampler: _DelaySampler, k: int):
    """Unsorted tags (ps, channel) from pairs and darks emitted in block ``k``."""
    rng = np.random.default_rng([cfg.rng_seed, k])
    period, block, _ = _block_bounds(cfg)
    period_ps = period * 1e12
    open_ps = cfg.duty * period_ps
    start_ps = k * block * 1e12
    t_open = cfg.duty * block

    m = cfg.rate_model
    r = m.pair_rate_per_mw * cfg.pump_mw
    es, ei = m.eta_signal, m.eta_idler
    # Poisson thinning: detection patterns of pairs are independent processes
    n_both = rng.poisson(r * es * ei * t_open)
    n_sig = rng.poisson(r * es * (1 - ei) * t_open)
    n_idl = rng.poisson(r * (1 - es) * ei * t_open)
    n_ds = rng.poisson(m.dark_signal * t_open)
    n_di = rng.poisson(m.dark_idler * t_open)

    def emit(n):
        u = rng.random(n) * (t_open * 1e12)
        return start_ps + np.floor(u / open_ps) * period_ps + np.mod(u, open_ps)

    sigma_ps = cfg.jitter_fwhm_per_detector * FWHM_TO_SIGMA * 1e12
    t_both = emit(n_both)
    d_both = sampler(rng, n_both)
    t_sig = emit(n_sig)
    t_idl = emit(n_idl) + sampler(rng, n_idl)
    sig = np.concatenate([t_both, t_sig])
    idl = np.concatenate([t_both + d_both, t_idl])
    if sigma_ps > 0:
        sig = sig + rng.normal(0.0, sigma_ps, sig.size)
        idl = idl + rng.normal(0.0, sigma_ps, idl.size)
    sig = np.concatenate([sig, emit(n_ds)])
    idl = np.concatenate([idl, emit(n_di)])

    t = np.rint(np.concatenate([sig, idl]))
    ch = np.concatenate([np.zeros(sig.size, np.uint8), np.ones(idl.size, np.uint8)])
    keep = (t >= 0) & (t < cfg.duration * 1e12) & _open_mask(t, period_ps, open_ps)
    return t[keep].astype(np.int64), ch[keep]


@njit(cache=True)
def _dead_time_mask(t, ch, dead_ps, last):
    # ``last`` holds the latest kept timestamp per channel and persists across chunks
    keep = np.ones(t.size, dtype=np.bool_)
    for k in range(t.size):
        c = ch[k]
        if t[k] - last[c] < dead_ps:
            keep[k] = False
        else:
            last[c] = t[k]
    return keep


def _sorted(t, ch):
    order = np.lexsort((ch, t))
    return t[order], ch[order]


def _iter_chunks(cfg: SimConfig, workers: int = 1) -> Iterator[tuple[np.ndarray, np.ndarray]]:
    """Yield globally time-ordered chunks of the stream."""
    sampler = _DelaySampler(cfg.profile)
    _, block, n_blocks = _block_bounds(cfg)
    sigma_ps = cfg.jitter_fwhm_per_detector * FWHM_TO_SIGMA * 1e12
    margin = sampler.reach + 40 * sigma_ps + 1000
    carry_t = np.empty(0, np.int64)
    carry_c = np.empty(0, np.uint8)
    dead_ps = int(round(cfg.dead_time * 1e12))
    dead_last = np.full(256, -(1 << 62), dtype=np.int64)

    def blocks():
        if workers > 1:
            with ThreadPoolExecutor(workers) as ex:
                yield from ex.map(lambda k: _generate_block(cfg, sampler, k), range(n_blocks))
        else:
            for k in range(n_blocks):
                yield _generate_block(cfg, sampler, k)

    for k, (t, c) in enumerate(blocks()):
        t, c = _sorted(np.concatenate([carry_t, t]), np.concatenate([carry_c, c]))
        cut = np.searchsorted(t, (k + 1) * block * 1e12 - margin)
        if k == n_blocks - 1:
            cut = t.size
        out_t, out_c = t[:cut], c[:cut]
        carry_t, carry_c = t[cut:], c[cut:]
        if dead_ps > 0:
            keep = _dead_time_mask(out_t, out_c, dead_ps, dead_last)
            out_t, out_c = out_t[keep], out_c[keep]
        yield out_t, out_c


def simulate(cfg: SimConfig, workers: int = 1) -> TimeTagStream:
    """Generate a sorted, merged two-channel time-tag stream."""
    if expected_tag_count(cfg) > cfg.max_tags:
        raise ValueError(f"stream too large: ~{expected_tag_count(cfg):.3g} tags expected "
                         f"(limit {cfg.max_tags:.3g}); write chunked output instead")
    parts = list(_iter_chunks(cfg, workers))
    t = np.concatenate([p[0] for p in parts]) if parts else np.empty(0, np.int64)
    c = np.concatenate([p[1] for p in parts]) if parts else np.empty(0, np.uint8)
    return TimeTagStream(t, c, cfg.duration, meta={"seed": cfg.rng_seed, "pump_mw": cfg.pump_mw})


def simulate_to_file(cfg: SimConfig, path, chunked: bool = False, workers: int = 1) -> int:
    """Simulate straight to a TTG1 file; returns the number of records."""
    if not chunked:
        stream = simulate(cfg, workers)
        write_tags(stream, path)
        return len(stream)
    n = 0
    with open(path, "wb") as fh:
        fh.write(_header())
        for t, c in _iter_chunks(cfg, workers):
            rec = np.empty(t.size, RECORD_DTYPE)
            rec["timestamp"] = t
            rec["channel"] = c
            fh.write(rec.tobytes())
            n += t.size
    return n


def _header(n_channels: int = 2) -> bytes:
    return MAGIC + np.array([FORMAT_VERSION, n_channels], "<u2").tobytes() + bytes(8)


def write_tags(stream: TimeTagStream, path) -> None:
    if not stream.is_sorted():
        raise TagFileError(TagFileError.UNSORTED)
    if np.any(stream.timestamps < 0):
        raise ValueError("negative timestamps cannot be stored")
    rec = np.empty(len(stream), RECORD_DTYPE)
    rec["timestamp"] = stream.timestamps
    rec["channel"] = stream.channels
    with open(path, "wb") as fh:
        fh.write(_header(stream.n_channels))
        fh.write(rec.tobytes())


def read_tags(path) -> TimeTagStream:
    raw = Path(path).read_bytes()
    if len(raw) < HEADER_SIZE:
        raise TagFileError(TagFileError.TRUNCATED, "file shorter than header")
    if raw[:4] != MAGIC:
        raise TagFileError(TagFileError.BAD_MAGIC, repr(raw[:4]))
    version, n_channels = np.frombuffer(raw[4:8], "<u2")
    if version != FORMAT_VERSION:
        raise TagFileError(TagFileError.BAD_VERSION, str(int(version)))
    body = raw[HEADER_SIZE:]
    if len(body) % RECORD_DTYPE.itemsize:
        raise TagFileError(TagFileError.TRUNCATED, f"{len(body)} payload bytes")
    rec = np.frombuffer(body, RECORD_DTYPE)
    t = rec["timestamp"].astype(np.int64)
    c = rec["channel"].copy()
    if np.any(np.diff(t) < 0):
        raise TagFileError(TagFileError.UNSORTED)
    if c.size and c.max() >= n_channels:
        raise TagFileError(TagFileError.BAD_CHANNEL, str(int(c.max())))
    duration = float(t[-1]) * 1e-12 if t.size else 0.0
    return TimeTagStream(t, c, duration, int(n_channels))


def write_tags_csv(stream: TimeTagStream, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["timestamp_ps", "channel"])
        w.writerows(zip(stream.timestamps.tolist(), stream.channels.tolist()))


def read_tags_csv(path) -> TimeTagStream:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0] != ["timestamp_ps", "channel"]:
        raise TagFileError(TagFileError.BAD_MAGIC, "missing CSV header")
    try:
        data = np.array(rows[1:], dtype=np.int64).reshape(-1, 2)
    except ValueError as exc:
        raise TagFileError(TagFileError.TRUNCATED, str(exc)) from None
    if np.any(np.diff(data[:, 0]) < 0):
        raise TagFileError(TagFileError.UNSORTED)
    if data.size and (data[:, 1].min() < 0 or data[:, 1].max() > 1):
        raise TagFileError(TagFileError.BAD_CHANNEL, str(int(data[:, 1].max())))
    t = data[:, 0]
    return TimeTagStream(t, data[:, 1].astype(np.uint8), float(t[-1]) * 1e-12 if t.size else 0.0)
