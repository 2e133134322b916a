import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cdcpairs.analysis import (
    CombNotDetected,
    Correlogram,
    RunSummary,
    analyze,
    bootstrap,
    centered_range,
    coincidence_rate_metric,
    comb_period,
    cross_correlogram,
    fit_bandwidths,
    fringe_visibility,
    g2_zero_estimate,
)
from cdcpairs.correlation import bin_histogram, biphoton_wavepacket, convolve_jitter, g2_profile, tau_grid
from cdcpairs.rates import accidentals_per_bin, expected_g2_estimate, true_pair_rate
from cdcpairs.spectral import single_line_spectrum
from cdcpairs.timetags import simulate


def brute_force(ts, ti, lo_ps, bw_ps, nbins):
    """Histogram of every pair difference, chunked to bound memory."""
    out = np.zeros(nbins, np.int64)
    for a in range(0, ts.size, 1000):
        d = ti[None, :] - ts[a:a + 1000, None]
        d = d[(d >= lo_ps) & (d < lo_ps + bw_ps * nbins)]
        out += np.bincount((d - lo_ps) // bw_ps, minlength=nbins)
    return out


def model_corr(profile, bin_width, pairs, floor, span=400e-9):
    h = bin_histogram(profile, bin_width, pairs, span=span)
    return Correlogram(bin_width, centered_range(bin_width, span), h.counts + floor, 0, 0, 1200.0)


@pytest.fixture(scope="module")
def single_line():
    tau = tau_grid()
    return convolve_jitter(g2_profile(tau, biphoton_wavepacket(single_line_spectrum(4e6, 5e6), tau)), 495e-12)


class TestCorrelogram:
    def test_single_pair(self):
        c = cross_correlogram(np.array([1000]), np.array([1000]), 4e-9, (-8e-9, 8e-9))
        assert c.counts.tolist() == [0, 0, 1, 0]
        # with a zero-centred range the pair lands in the centre bin
        c = cross_correlogram(np.array([1000]), np.array([1000]), 4e-9, centered_range(4e-9, 8e-9))
        assert c.counts[np.argmin(np.abs(c.bin_centers))] == 1 and c.counts.sum() == 1

    def test_matches_brute_force_10k(self, rng):
        ts = np.sort(rng.integers(0, 10**8, 5000))
        ti = np.sort(rng.integers(0, 10**8, 5000))
        c = cross_correlogram(ts, ti, 1e-9, (-400e-9, 400e-9))
        assert np.array_equal(c.counts, brute_force(ts, ti, -400000, 1000, 800))

    @settings(max_examples=60, deadline=None)
    @given(st.lists(st.integers(0, 5000), max_size=300), st.lists(st.integers(0, 5000), max_size=300),
           st.integers(1, 50), st.integers(-300, 300), st.integers(1, 40))
    def test_matches_brute_force_property(self, s, i, bw, lo, nbins):
        ts, ti = np.sort(np.array(s, np.int64)), np.sort(np.array(i, np.int64))
        c = cross_correlogram(ts, ti, bw * 1e-12, (lo * 1e-12, (lo + bw * nbins) * 1e-12))
        assert np.array_equal(c.counts, brute_force(ts, ti, lo, bw, nbins))

    def test_sharded_equals_serial(self, rng):
        ts = np.sort(rng.integers(0, 10**10, 300_000))
        ti = np.sort(rng.integers(0, 10**10, 300_000))
        a = cross_correlogram(ts, ti, 4e-9, centered_range(4e-9), shards=1)
        b = cross_correlogram(ts, ti, 4e-9, centered_range(4e-9), shards=4)
        assert np.array_equal(a.counts, b.counts)

    def test_slices_sum_to_total(self, rng):
        ts = np.sort(rng.integers(0, 10**9, 20000))
        ti = np.sort(rng.integers(0, 10**9, 20000))
        c = cross_correlogram(ts, ti, 4e-9, centered_range(4e-9), n_slices=7)
        assert c.slice_counts.shape[0] == 7
        assert np.array_equal(c.slice_counts.sum(axis=0), c.counts)

    def test_unsorted_rejected(self):
        with pytest.raises(ValueError, match="sorted"):
            cross_correlogram(np.array([5, 1]), np.array([1, 2]), 1e-9, (-1e-8, 1e-8))

    def test_bad_range(self):
        with pytest.raises(ValueError):
            cross_correlogram(np.array([1]), np.array([1]), 3e-12, (0, 10e-12))
        with pytest.raises(ValueError):
            cross_correlogram(np.array([1]), np.array([1]), 1e-9, (1e-8, -1e-8))

    def test_shift_invariance(self, source):
        s = simulate(source.sim_config(20.0, 0.8, seed=4))
        a = analyze(s.signal, s.idler, wall_time=20.0)
        shift = 123_456_789
        b = analyze(s.signal + shift, s.idler + shift, wall_time=20.0)
        assert a == b

    def test_counts_bound(self, rng):
        ts = np.sort(rng.integers(0, 10**6, 500))
        ti = np.sort(rng.integers(0, 10**6, 500))
        c = cross_correlogram(ts, ti, 1e-9, centered_range(1e-9, 400e-9))
        assert 0 <= c.counts.sum() <= ts.size * ti.size


class TestBandwidthFit:
    def test_single_line_noise_free(self, single_line):
        c = model_corr(single_line, 4e-9, 2e5, 30.0)
        fit = fit_bandwidths(c)
        assert fit.delta_nu_left == pytest.approx(4e6, rel=0.005)
        assert fit.delta_nu_right == pytest.approx(5e6, rel=0.005)
        assert fit.fit_window_left[0] >= 3 * 495e-12
        assert fit.fit_window_right[0] >= 3 * 495e-12

    def test_filtered_source_noise_free(self, source):
        c = model_corr(source.profile(True), 4e-9, 1e5, 50.0)
        fit = fit_bandwidths(c)
        assert fit.delta_nu_left == pytest.approx(4e6, rel=0.005)
        assert fit.delta_nu_right == pytest.approx(5e6, rel=0.005)

    def test_tail_correction_removes_floor_bias(self, single_line):
        c = model_corr(single_line, 4e-9, 2e5, 30.0)
        biased = fit_bandwidths(c, tail_iterations=0)
        fixed = fit_bandwidths(c)
        assert abs(fixed.delta_nu_right - 5e6) < abs(biased.delta_nu_right - 5e6)

    def test_symmetric_input(self):
        tau = tau_grid()
        p = convolve_jitter(g2_profile(tau, biphoton_wavepacket(single_line_spectrum(5e6, 5e6), tau)), 495e-12)
        fit = fit_bandwidths(model_corr(p, 4e-9, 2e5, 30.0))
        assert fit.delta_nu_left == pytest.approx(fit.delta_nu_right, rel=1e-6)

    def test_low_snr_rejected(self, single_line):
        with pytest.raises(ValueError, match="SNR"):
            fit_bandwidths(model_corr(single_line, 4e-9, 10.0, 1000.0))

    def test_too_few_bins(self, single_line):
        with pytest.raises(ValueError, match="5 usable"):
            fit_bandwidths(model_corr(single_line, 40e-9, 2e5, 30.0))

    def test_monte_carlo(self, source):
        cfg = source.sim_config(1200.0, 0.8, seed=31, filtered=True)
        s = simulate(cfg)
        c = cross_correlogram(s.signal, s.idler, 4e-9, centered_range(4e-9), wall_time=1200.0)
        fit = fit_bandwidths(c)
        assert fit.delta_nu_left == pytest.approx(4e6, abs=0.2e6)
        assert fit.delta_nu_right == pytest.approx(5e6, abs=0.25e6)


class TestG2Estimate:
    def test_uncorrelated(self, rng):
        n = 400_000
        ts = np.sort(rng.integers(0, 10**12, n))
        ti = np.sort(rng.integers(0, 10**12, n))
        c = cross_correlogram(ts, ti, 4e-9, centered_range(4e-9), wall_time=1.0)
        floor = n * n / 1e12 * 4000
        n_floor = 13
        # max of the three bins near zero sits about one sigma high
        sigma = math.sqrt(1 / floor + 1 / (floor * n_floor))
        assert abs(g2_zero_estimate(c) - 1) < 3 * sigma
        nb = c.counts.size
        sigma_rate = math.sqrt(nb * floor + nb * nb * floor / n_floor) / c.wall_time
        assert abs(coincidence_rate_metric(c)) < 3 * sigma_rate

    def test_empty_accidentals(self):
        c = Correlogram(4e-9, centered_range(4e-9), np.zeros(199), 0, 0, 1.0)
        with pytest.raises(ValueError):
            g2_zero_estimate(c)
        with pytest.raises(ValueError, match="accidental region"):
            g2_zero_estimate(c.with_counts(np.ones(199)), accidental_window=(500e-9, 600e-9))

    def test_average_peak(self, single_line):
        c = model_corr(single_line, 4e-9, 1e5, 10.0)
        assert g2_zero_estimate(c, average_peak=True) < g2_zero_estimate(c)

    def test_low_power_high_g2(self, source):
        s = simulate(source.sim_config(1200.0, 0.08, seed=9))
        c = cross_correlogram(s.signal, s.idler, 4e-9, centered_range(4e-9), wall_time=1200.0)
        assert g2_zero_estimate(c) >= 400

    def test_monte_carlo_expectation(self, source):
        s = simulate(source.sim_config(600.0, 1.0, seed=5))
        c = cross_correlogram(s.signal, s.idler, 4e-9, centered_range(4e-9), wall_time=600.0)
        cfg = source.counting.__class__(4e-9, source.counting.accidental_window, 600.0)
        expected = expected_g2_estimate(source.rate_model, source.profile(False), cfg, 1.0)
        assert g2_zero_estimate(c) == pytest.approx(expected, rel=0.1)


class TestCombPeriod:
    def _cosine_exp(self, period, bw):
        t = centered_range(bw)
        centers = t[0] + (np.arange(int(round((t[1] - t[0]) / bw))) + 0.5) * bw
        env = 1e5 * np.exp(-2 * np.pi * 5e6 * np.abs(centers))
        counts = env * (1 + 0.5 * np.cos(2 * np.pi * centers / period)) + 50
        return Correlogram(bw, t, counts, 0, 0, 1.0)

    def test_synthetic_cosine(self):
        c = self._cosine_exp(2e-9, 256e-12)
        assert comb_period(c) == pytest.approx(2e-9, abs=256e-12)

    def test_coarse_bins(self):
        with pytest.raises(CombNotDetected, match="no comb detected"):
            comb_period(self._cosine_exp(2e-9, 4e-9))

    def test_model_unfiltered(self, source):
        c = model_corr(source.profile(False), 256e-12, 1e6, 100.0)
        assert comb_period(c) == pytest.approx(1.25e-9, abs=256e-12)

    def test_smooth_peak_not_detected(self, single_line, rng):
        c = model_corr(single_line, 256e-12, 1e5, 100.0)
        noisy = c.with_counts(rng.poisson(c.counts))
        with pytest.raises(CombNotDetected):
            comb_period(noisy)

    def test_filtered_simulation(self, source):
        s = simulate(source.sim_config(1200.0, 0.8, seed=12, filtered=True))
        c = cross_correlogram(s.signal, s.idler, 256e-12, centered_range(256e-12), wall_time=1200.0)
        with pytest.raises(CombNotDetected):
            comb_period(c)


class TestRateMetric:
    def test_doubling_pump(self, source):
        def metric(p):
            s = simulate(source.sim_config(300.0, p, seed=2, filtered=True))
            c = cross_correlogram(s.signal, s.idler, 4e-9, centered_range(4e-9), wall_time=300.0)
            return coincidence_rate_metric(c)
        assert metric(1.6) / metric(0.8) == pytest.approx(2.0, rel=0.15)

    def test_model_value(self, source):
        model = source.rates_for(True)
        pairs = true_pair_rate(model, 0.9) * 1200
        acc = accidentals_per_bin(model, 0.9, source.counting)
        c = model_corr(source.profile(True), 4e-9, pairs, acc)
        assert coincidence_rate_metric(c) == pytest.approx(20.0, rel=0.02)


class TestFringes:
    def test_noiseless_full_contrast(self):
        x = np.linspace(0, 3 * 880e-9, 60)
        y = 100 * (1 + np.cos(2 * np.pi * x / 880e-9 + 0.3))
        (pt,) = fringe_visibility([(x, y)])
        assert pt.ok and pt.visibility == pytest.approx(1.0, abs=1e-6)

    def test_partial_contrast_with_noise(self, rng):
        x = np.linspace(0, 2 * 880e-9, 81)
        y = rng.poisson(1e5 * (1 + 0.6 * np.cos(2 * np.pi * x / 880e-9)))
        (pt,) = fringe_visibility([(x, y)])
        assert pt.visibility == pytest.approx(0.6, abs=0.01)

    def test_failure_flagged(self):
        pts = fringe_visibility([(np.linspace(0, 100e-9, 10), np.ones(10)),
                                 (np.linspace(0, 2e-6, 50), np.zeros(50))])
        assert [p.ok for p in pts] == [False, False]
        assert all(math.isnan(p.visibility) for p in pts)

    def test_filtered_model_scans(self, source):
        from cdcpairs.source import fringe_scans
        d = np.linspace(0, 0.5, 26)
        pts = fringe_visibility(fringe_scans(source.michelson_spectrum("filtered"), d,
                                             rng=np.random.default_rng(1)))
        assert np.mean([p.visibility for p in pts]) >= 0.92


class TestBootstrapAndSummary:
    def test_bootstrap(self, source):
        s = simulate(source.sim_config(300.0, 0.8, seed=3))
        c = cross_correlogram(s.signal, s.idler, 4e-9, centered_range(4e-9), n_slices=30, wall_time=300.0)
        b = bootstrap(c, n_resamples=50, seed=1)
        assert set(b.std) == {"delta_nu_left", "delta_nu_right", "g2_zero"}
        assert all(v > 0 for v in b.std.values())
        assert b.std == bootstrap(c, n_resamples=50, seed=1).std

    def test_bootstrap_needs_slices(self, single_line):
        with pytest.raises(ValueError, match="slices"):
            bootstrap(model_corr(single_line, 4e-9, 1e5, 10.0))

    def test_summary_text(self):
        text = RunSummary(88.0, 4e6, 5e6, 1250.0, 20.0).to_text()
        keys = [line.split("=")[0] for line in text.splitlines()]
        assert keys == ["g2_zero", "delta_nu_left_hz", "delta_nu_right_hz", "comb_period_ps",
                        "coincidence_rate_hz"]

    def test_analyze_nan_on_failure(self, rng):
        ts = np.sort(rng.integers(0, 10**10, 2000))
        ti = np.sort(rng.integers(0, 10**10, 2000))
        r = analyze(ts, ti)
        assert math.isnan(r.delta_nu_left_hz) and math.isnan(r.comb_period_ps)
