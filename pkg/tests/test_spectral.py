import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.optimize import brentq

from cdcpairs.spectral import (
    SINC2_HALF_POINT,
    BiphotonSpectrum,
    CavityParams,
    EnvelopeShape,
    EtalonParams,
    PhaseMatchEnvelope,
    airy_transmission,
    build_spectrum,
    cavity_transmission,
    enumerate_mode_pairs,
    etalon_transmission,
    line_overlap_matrix,
    lorentzian,
    mirror_factor,
    phase_matching_envelope,
    single_line_spectrum,
    wrap_detuning,
)

SIG = CavityParams(800e6, 4e6)
IDL = CavityParams(802e6, 5e6)
ENV = PhaseMatchEnvelope(120e9)
ETA = EtalonParams(8.4e9, 120e6)


class TestParams:
    @pytest.mark.parametrize("fsr,fwhm", [(0, 1), (-1, 0.5), (1e9, 0), (1e9, 1e9), (1e9, 2e9)])
    def test_invalid_comb_rejected(self, fsr, fwhm):
        with pytest.raises(ValueError):
            CavityParams(fsr, fwhm)
        with pytest.raises(ValueError):
            EtalonParams(fsr, fwhm)

    @pytest.mark.parametrize("t", [0.0, -0.1, 1.5])
    def test_peak_transmission_range(self, t):
        with pytest.raises(ValueError):
            CavityParams(800e6, 4e6, peak_transmission=t)

    def test_derived(self):
        assert SIG.finesse == pytest.approx(200)
        assert SIG.round_trip_time == pytest.approx(1.25e-9)


class TestAiry:
    @pytest.mark.parametrize("finesse", [1.5, 10, 70, 200, 5000])
    def test_mirror_factor_root(self, finesse):
        # root of pi*sqrt(r)/(1-r) = F found numerically
        r = brentq(lambda r: math.pi * math.sqrt(r) / (1 - r) - finesse, 1e-12, 1 - 1e-15)
        assert mirror_factor(finesse) == pytest.approx(r, rel=1e-10)

    @pytest.mark.parametrize("fsr,fwhm", [(800e6, 4e6), (802e6, 5e6), (8.4e9, 120e6)])
    def test_half_maximum_at_half_width(self, fsr, fwhm):
        x = brentq(lambda d: airy_transmission(fsr, fwhm, 1.0, d) - 0.5, 0, fsr / 2)
        assert 2 * x == pytest.approx(fwhm, rel=1e-3)

    def test_periodic_with_unit_peaks(self):
        d = np.arange(-5, 6) * SIG.fsr
        assert np.allclose(cavity_transmission(SIG, d), 1.0)
        t = cavity_transmission(CavityParams(800e6, 4e6, 0.7, comb_offset=10e6), 10e6 + d)
        assert np.allclose(t, 0.7)

    def test_etalon_neighbour_suppression(self):
        # direct evaluation of the Airy function at one cavity FSR from the etalon peak
        coeff = (2 * 70 / math.pi) ** 2
        expected = 1 / (1 + coeff * math.sin(math.pi * 800 / 8400) ** 2)
        t = float(etalon_transmission(ETA, 800e6))
        assert t == pytest.approx(expected, rel=1e-12)
        assert t == pytest.approx(0.00576, abs=5e-5)

    def test_lorentzian(self):
        assert lorentzian(0, 5e6) == 1
        assert lorentzian(2.5e6, 5e6) == pytest.approx(0.5)


class TestEnvelope:
    def test_sinc_half_point(self):
        assert math.sin(SINC2_HALF_POINT) ** 2 / SINC2_HALF_POINT ** 2 == pytest.approx(0.5, abs=1e-14)

    @pytest.mark.parametrize("shape", list(EnvelopeShape))
    def test_half_maximum(self, shape):
        env = PhaseMatchEnvelope(120e9, shape)
        assert phase_matching_envelope(env, 0.0) == pytest.approx(1.0)
        assert phase_matching_envelope(env, [-60e9, 60e9]) == pytest.approx([0.5, 0.5], abs=1e-12)

    def test_shape_from_string(self):
        assert PhaseMatchEnvelope(1e9, "gaussian").shape is EnvelopeShape.GAUSSIAN


@given(st.floats(-1e12, 1e12), st.floats(1e6, 1e10))
def test_wrap_detuning_range(x, p):
    w = float(wrap_detuning(x, p))
    assert -p / 2 - 1e-6 * p < w <= p / 2 + 1e-6 * p
    k = (x - w) / p
    assert abs(k - round(k)) < 1e-6


class TestModePairs:
    def test_central_pair(self):
        pairs = enumerate_mode_pairs(SIG, IDL, ENV, 0)
        assert len(pairs) == 1
        assert pairs[0].joint_weight == pytest.approx(1.0)
        assert pairs[0].idler_mismatch == 0

    def test_first_neighbour_mismatch(self):
        p = {q.index: q for q in enumerate_mode_pairs(SIG, IDL, ENV, 800e6)}
        assert p[1].idler_mismatch == pytest.approx(2e6)
        assert p[-1].idler_mismatch == pytest.approx(-2e6)
        assert p[1].joint_weight == pytest.approx(
            lorentzian(2e6, 5e6) * phase_matching_envelope(ENV, 800e6))

    def test_mismatch_against_brute_force(self):
        sig = CavityParams(800e6, 4e6, comb_offset=1.3e6)
        idl = CavityParams(802.7e6, 5e6, comb_offset=-0.4e6)
        pairs = enumerate_mode_pairs(sig, idl, ENV, 60e9)
        for p in pairs:
            target = -p.signal_detuning
            n = np.arange(-200, 201)
            res = idl.comb_offset + n * idl.fsr
            nearest = res[np.argmin(np.abs(target - res))]
            assert abs(abs(p.idler_mismatch) - abs(target - nearest)) < 1.0

    def test_count_and_cap(self):
        assert len(enumerate_mode_pairs(SIG, IDL, ENV, 6e9)) == 15
        with pytest.raises(ValueError, match="cap"):
            enumerate_mode_pairs(SIG, IDL, ENV, 300e9)
        with pytest.raises(ValueError):
            enumerate_mode_pairs(SIG, IDL, ENV, -1)

    def test_vernier_clusters(self):
        pairs = enumerate_mode_pairs(SIG, IDL, ENV, 200e9)
        w = np.array([p.joint_weight for p in pairs])
        m = np.array([p.index for p in pairs])
        # partners realign every FSR_i / (FSR_i - FSR_s) = 401 modes
        revival = w[np.abs(m) == 401]
        assert np.all(revival > 0.1)
        assert w[np.abs(m) == 200].max() < 1e-3


class TestSpectrum:
    def test_normalised(self):
        sp = build_spectrum(enumerate_mode_pairs(SIG, IDL, ENV, 6e9), SIG, IDL)
        assert sp.norm() == pytest.approx(1.0, abs=1e-12)
        assert sp.intensity_weights.sum() == pytest.approx(1.0)
        raw = np.array([p.joint_weight for p in enumerate_mode_pairs(SIG, IDL, ENV, 6e9)])
        assert sp.total_norm == pytest.approx(np.sum(raw ** 2))

    def test_etalon_suppresses_neighbours(self):
        pairs = enumerate_mode_pairs(SIG, IDL, ENV, 2e9)
        bare = build_spectrum(pairs, SIG, IDL)
        filt = build_spectrum(pairs, SIG, IDL, ETA)
        rel_bare = bare.amplitude_weight / bare.amplitude_weight.max()
        rel_filt = filt.amplitude_weight / filt.amplitude_weight.max()
        i1 = np.argmin(np.abs(bare.center_detuning - 800e6))
        assert rel_filt[i1] / rel_bare[i1] == pytest.approx(float(etalon_transmission(ETA, -800e6)))

    def test_pruning(self):
        pairs = enumerate_mode_pairs(SIG, IDL, ENV, 200e9)
        sp = build_spectrum(pairs, SIG, IDL, prune=1e-3)
        raw = np.array([p.joint_weight for p in pairs])
        assert len(sp) == np.sum(raw >= 1e-3 * raw.max())

    def test_errors(self):
        with pytest.raises(ValueError):
            build_spectrum([], SIG, IDL)
        with pytest.raises(ValueError, match="empty spectrum"):
            BiphotonSpectrum.from_lines([0.0], 4e6, 5e6, [0.0])
        with pytest.raises(ValueError):
            BiphotonSpectrum([0.0, 1.0], [4e6], [5e6], [1.0])

    def test_immutable(self):
        sp = single_line_spectrum(4e6, 5e6)
        with pytest.raises(ValueError):
            sp.amplitude_weight[0] = 2

    def test_overlap_matrix_hermitian_unit_diagonal(self):
        c = [0.0, 800e6, -1.6e9]
        g = line_overlap_matrix(c, [4e6] * 3, [5e6] * 3)
        assert np.allclose(np.diag(g), 1.0)
        assert np.allclose(g, g.conj().T)

    def test_overlap_matrix_against_quadrature(self):
        from scipy.integrate import quad
        a, b = np.pi * 5e6, np.pi * 4e6
        n2 = 2 * a * b / (a + b)
        dc = 3e6

        def f(t, part):
            e = np.exp(-a * t) if t >= 0 else np.exp(b * t)
            v = n2 * e * e * np.exp(2j * np.pi * dc * t)
            return v.real if part == 0 else v.imag

        val = complex(quad(f, -2e-6, 0, args=(0,), limit=400)[0] + quad(f, 0, 2e-6, args=(0,), limit=400)[0],
                      quad(f, -2e-6, 0, args=(1,), limit=400)[0] + quad(f, 0, 2e-6, args=(1,), limit=400)[0])
        g = line_overlap_matrix([0.0, dc], [4e6, 4e6], [5e6, 5e6])
        # <psi_0|psi_1> with psi_k ~ exp(-2i pi c_k tau)
        assert g[0, 1] == pytest.approx(val, rel=1e-6)

    @settings(max_examples=30, deadline=None)
    @given(st.lists(st.floats(0.01, 1.0), min_size=1, max_size=6))
    def test_scaling_invariance(self, w):
        c = np.arange(len(w)) * 800e6
        a = BiphotonSpectrum.from_lines(c, 4e6, 5e6, w)
        b = BiphotonSpectrum.from_lines(c, 4e6, 5e6, np.array(w) * 17.0)
        assert np.allclose(a.amplitude_weight, b.amplitude_weight)
