from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from numpy.testing import assert_allclose

from zakofdm.channel import (ChannelPath, PathSet, apply_channel, draw_tdl_realization, effective_dd_channel,
                             load_tdl_profile)
from zakofdm.constellation import get_constellation
from zakofdm.estimation import (FrameLayout, IoMatrix, LayoutError, build_io_matrix, build_layout,
                                compose_frame, crystallization_margin, demap_and_score, estimate_channel,
                                mmse_equalize, restrict_taps, taps_nmse_db)
from zakofdm.ofdm import OfdmConfig
from zakofdm.transforms import DDFrame, DDTap, twisted_convolve
from zakofdm.zak import FilterSpec, UnconstrainedChain, UnconstrainedConfig, ZakConfig, ZakOfdmChain

from . import _oracles as oracle


def open_layout(m, n, symbol_energy=1.0):
    """Every carrier holds data and the pilot is silent."""
    full = np.ones((m, n), dtype=bool)
    none = np.zeros((m, n), dtype=bool)
    return FrameLayout(m, n, (0, 0), 0, none, none, none, full, 0.0, symbol_energy)


def random_taps(rng, count, span=3):
    keys = {(int(rng.integers(-span, span + 1)), int(rng.integers(-span, span + 1))) for _ in range(count)}
    return [DDTap(k, l, complex(rng.standard_normal(), rng.standard_normal())) for k, l in sorted(keys)]


class TestConstellations:
    @pytest.mark.parametrize("name,bits", [("QPSK", 2), ("16QAM", 4), ("64qam", 6)])
    def test_unit_energy_gray(self, name, bits):
        c = get_constellation(name)
        assert c.bits_per_symbol == bits
        assert np.mean(np.abs(c.points) ** 2) == pytest.approx(1.0, rel=1e-12)
        assert sorted(c.labels) == list(range(2 ** bits))
        d_min = min(abs(a - b) for i, a in enumerate(c.points) for b in c.points[i + 1:])
        for i, a in enumerate(c.points):
            for j, b in enumerate(c.points):
                if i != j and abs(a - b) < d_min * 1.01:
                    assert bin(int(c.labels[i]) ^ int(c.labels[j])).count("1") == 1

    def test_hard_decision_recovers_points(self):
        c = get_constellation("16QAM")
        assert_allclose(c.hard_decision(c.points * 1.05), np.arange(16))

    def test_unknown(self):
        with pytest.raises(ValueError):
            get_constellation("8PSK")


class TestLayout:
    def test_single_doppler_bin_overhead(self):
        lay = build_layout(48, 1, 720e3, 2.6e-6)
        assert lay.delay_bins == 2
        assert lay.overhead_count == 7
        assert lay.overhead_fraction == pytest.approx(7 / 48)

    def test_two_doppler_bins_overhead(self):
        lay = build_layout(24, 2, 720e3, 2.6e-6)
        assert lay.overhead_count / (24 * 2) == pytest.approx(14 / 48)
        assert lay.overhead_fraction == pytest.approx(14 / 48)

    def test_zero_delay_spread(self):
        lay = build_layout(10, 3, 1e6, 0.0)
        kp, lp = lay.pilot_pos
        assert (kp, lp) == (5, 2)
        assert lay.overhead_fraction == pytest.approx(3 / 10)
        rows = np.flatnonzero(lay.pilot[:, 0])
        assert list(rows) == [kp - 1, kp]
        assert not lay.guard1.any()
        assert list(np.flatnonzero(lay.guard2[:, 0])) == [kp + 1]

    def test_region_placement(self):
        lay = build_layout(16, 2, 1e6, 2.5e-6)
        kp = lay.pilot_pos[0]
        assert list(np.flatnonzero(lay.pilot[:, 0])) == list(range(kp - 1, kp + 4))
        assert list(np.flatnonzero(lay.guard1[:, 0])) == list(range(kp - 4, kp - 1))
        assert list(np.flatnonzero(lay.guard2[:, 0])) == [kp + 4]

    def test_pilot_energy_equals_data_energy(self):
        lay = build_layout(48, 1, 720e3, 2.6e-6, symbol_energy=2.0)
        assert lay.pilot_amplitude ** 2 == pytest.approx(lay.num_data * 2.0)
        half = build_layout(48, 1, 720e3, 2.6e-6, pilot_energy_policy=0.5)
        assert half.pilot_amplitude ** 2 == pytest.approx(0.5 * half.num_data)

    def test_too_short_delay_period(self):
        with pytest.raises(LayoutError, match="M > 2\\*ceil\\(B\\*tau_max\\)\\+3 = 7"):
            build_layout(7, 4, 720e3, 2.6e-6)

    @settings(max_examples=60, deadline=None)
    @given(st.integers(4, 40), st.integers(1, 8), st.floats(0, 20e-6))
    def test_partition(self, m, n, tau):
        b = math.ceil(1e6 * tau - 1e-9)
        if m <= 2 * b + 3:
            with pytest.raises(LayoutError):
                build_layout(m, n, 1e6, tau)
            return
        lay = build_layout(m, n, 1e6, tau)
        masks = [lay.pilot, lay.guard1, lay.guard2, lay.data]
        assert np.array_equal(np.sum(masks, axis=0), np.ones((m, n)))
        assert lay.overhead_count == n * (2 * b + 3)

    def test_compose_frame(self):
        lay = build_layout(8, 2, 1e6, 1e-6)
        data = np.arange(lay.num_data) + 1.0
        f = compose_frame(lay, data)
        assert f.data[lay.pilot_pos] == lay.pilot_amplitude
        assert_allclose(f.data[lay.data], data)
        assert np.count_nonzero(f.data[lay.pilot | lay.guard1 | lay.guard2]) == 1

    def test_crystallization_margin(self):
        assert crystallization_margin(1, 1 / 15e3, 1250.0) == pytest.approx(1 - 2 * 1250 / 15e3)
        assert crystallization_margin(1, 1 / 15e3, 8e3) < 0


class TestEstimator:
    def chain(self, m=12, n=4, cp=3):
        return ZakOfdmChain(ZakConfig(m, n, OfdmConfig(m * n, 15e3, cp)))

    def test_identity_channel(self):
        c = self.chain()
        lay = build_layout(12, 4, c.cfg.rate_hz, 2 / c.cfg.rate_hz)
        y = c.receive(apply_channel(c.transmit(lay.pilot_frame()), PathSet.single()))
        taps = {(t.k, t.l): t.value for t in estimate_channel(y, lay)}
        assert taps.pop((0, 0)) == pytest.approx(1.0, abs=1e-10)
        assert max(abs(v) for v in taps.values()) < 1e-10

    def test_window_shape(self):
        lay = build_layout(12, 4, 1e6, 2e-6)
        ks, ls = lay.hypothesis_window()
        assert list(ks) == [-1, 0, 1, 2, 3]
        assert list(ls) == [-2, -1, 0, 1]
        assert len(estimate_channel(DDFrame.zeros(12, 4), lay)) == 20

    def test_matches_direct_cross_ambiguity(self):
        rng = np.random.default_rng(0)
        m, n = 10, 3
        lay = build_layout(m, n, 1e6, 2e-6)
        y = rng.standard_normal((m, n)) + 1j * rng.standard_normal((m, n))
        kp, lp = lay.pilot_pos
        pilot = lay.pilot_frame().data
        ks, ls = lay.hypothesis_window()
        for t in estimate_channel(DDFrame(y), lay):
            total = 0j
            for dk in ks:
                for dl in ls:
                    k1, l1 = kp + dk, lp + dl
                    total += (oracle.qp(y, k1, l1) * np.conj(oracle.qp(pilot, k1 - t.k, l1 - t.l))
                              * np.exp(-2j * np.pi * t.l * (k1 - t.k) / (m * n)))
            assert t.value == pytest.approx(total / lay.pilot_amplitude ** 2, abs=1e-12)

    @pytest.mark.parametrize("d", [1, 2])
    def test_integer_delay_matches_probe(self, d):
        c = self.chain()
        ps = PathSet.single(0.8 + 0.6j, d / c.cfg.rate_hz, c.cfg.ofdm.scs_hz)
        lay = build_layout(12, 4, c.cfg.rate_hz, 2 / c.cfg.rate_hz)
        y = c.receive(apply_channel(c.transmit(lay.pilot_frame()), ps))
        est = estimate_channel(y, lay, prune_db=-60)
        assert [(t.k, t.l) for t in est] == [(d, 1)]
        ref = effective_dd_channel(ps, c)
        assert taps_nmse_db(est, ref) < -40

    def test_pruning(self):
        lay = build_layout(12, 4, 1e6, 2e-6)
        y = lay.pilot_frame().data.copy()
        y[lay.pilot_pos[0] + 1, lay.pilot_pos[1]] = 1e-3 * lay.pilot_amplitude
        est = estimate_channel(DDFrame(y), lay, prune_db=-40)
        assert len(est) == 1

    def test_nmse_helpers(self):
        ref = [DDTap(0, 0, 1.0), DDTap(1, 0, 1.0)]
        assert taps_nmse_db([DDTap(0, 0, 1.0)], ref) == pytest.approx(10 * np.log10(0.5))
        kept = restrict_taps(ref + [DDTap(5, 0, 1.0)], np.arange(0, 2), np.arange(0, 1))
        assert len(kept) == 2


class TestIoMatrix:
    def test_identity(self):
        assert_allclose(build_io_matrix([DDTap(0, 0, 1.0)], 3, 4).matrix, np.eye(12))

    def test_delay_wrap_permutation(self):
        assert_allclose(build_io_matrix([DDTap(1, 0, 1.0)], 2, 1).matrix, [[0, 1], [1, 0]])

    def test_columns_are_unit_responses(self):
        rng = np.random.default_rng(1)
        m, n = 4, 3
        taps = random_taps(rng, 5, span=6)
        h = build_io_matrix(taps, m, n).matrix
        for q in range(m * n):
            unit = DDFrame.point(m, n, q // n, q % n)
            assert_allclose(h[:, q], twisted_convolve(taps, unit).data.reshape(-1), atol=1e-12)

    @settings(max_examples=30, deadline=None)
    @given(st.integers(1, 6), st.integers(1, 6), st.integers(0, 2**32 - 1))
    def test_random_frames(self, m, n, seed):
        rng = np.random.default_rng(seed)
        taps = random_taps(rng, 4)
        f = DDFrame(rng.standard_normal((m, n)) + 1j * rng.standard_normal((m, n)))
        got = build_io_matrix(taps, m, n).apply(f).data
        assert_allclose(got, twisted_convolve(taps, f).data, atol=1e-12 * max(1, np.abs(got).max()))


class TestMmse:
    def test_noiseless_identity_cancels_pilot(self):
        rng = np.random.default_rng(2)
        lay = build_layout(12, 2, 1e6, 2e-6)
        data = rng.standard_normal(lay.num_data) + 1j * rng.standard_normal(lay.num_data)
        y = compose_frame(lay, data)
        eq = mmse_equalize(y, build_io_matrix([DDTap(0, 0, 1.0)], 12, 2), 0.0, 1.0, lay)
        assert_allclose(eq.soft, data, atol=1e-12)
        assert not eq.regularized
        assert np.all(np.isinf(eq.sinr))

    def test_large_noise_shrinks_to_zero(self):
        lay = build_layout(12, 2, 1e6, 2e-6)
        y = compose_frame(lay, np.ones(lay.num_data))
        eq = mmse_equalize(y, build_io_matrix([DDTap(0, 0, 1.0)], 12, 2), 1e12, 1.0, lay)
        assert np.abs(eq.soft).max() < 1e-11

    def test_rank_deficient_noiseless_is_regularized(self):
        lay = open_layout(4, 2)
        h = IoMatrix(np.zeros((8, 8), dtype=complex), 4, 2)
        eq = mmse_equalize(DDFrame.zeros(4, 2), h, 0.0, 1.0, lay)
        assert eq.regularized
        assert np.all(np.isfinite(eq.soft))

    def test_monte_carlo_mse_matches_closed_form(self):
        rng = np.random.default_rng(3)
        m, n, es, var = 4, 2, 1.0, 0.5
        h = (rng.standard_normal((8, 8)) + 1j * rng.standard_normal((8, 8))) / 4
        lay = open_layout(m, n, es)
        io = IoMatrix(h, m, n)
        const = get_constellation("QPSK")
        err = 0.0
        trials = 10 ** 4
        for _ in range(trials):
            x = const.points[const.random_indices(rng, 8)]
            noise = np.sqrt(var / 2) * (rng.standard_normal(8) + 1j * rng.standard_normal(8))
            y = DDFrame((h @ x + noise).reshape(m, n))
            err += np.mean(np.abs(mmse_equalize(y, io, var, es, lay).soft - x) ** 2)
        assert err / trials == pytest.approx(oracle.mmse_mse(h, es, var), rel=0.03)

    def test_predicted_sinr_matches_closed_form(self):
        rng = np.random.default_rng(4)
        h = (rng.standard_normal((8, 8)) + 1j * rng.standard_normal((8, 8))) / 4
        eq = mmse_equalize(DDFrame.zeros(4, 2), IoMatrix(h, 4, 2), 0.3, 1.0, open_layout(4, 2))
        mse = 1 / (1 + eq.sinr)
        assert np.mean(mse) == pytest.approx(oracle.mmse_mse(h, 1.0, 0.3), rel=1e-10)

    @settings(max_examples=25, deadline=None)
    @given(st.integers(0, 2**32 - 1))
    def test_sinr_nonincreasing_in_noise(self, seed):
        rng = np.random.default_rng(seed)
        h = IoMatrix(rng.standard_normal((8, 8)) + 1j * rng.standard_normal((8, 8)), 4, 2)
        lay = open_layout(4, 2)
        sinrs = [mmse_equalize(DDFrame.zeros(4, 2), h, v, 1.0, lay).sinr for v in np.logspace(-3, 2, 8)]
        for a, b in zip(sinrs, sinrs[1:]):
            assert np.all(b <= a * (1 + 1e-9))

    def test_negative_noise_rejected(self):
        with pytest.raises(ValueError):
            mmse_equalize(DDFrame.zeros(4, 2), IoMatrix(np.eye(8), 4, 2), -1.0, 1.0, open_layout(4, 2))


class TestScoring:
    def test_perfect_and_inverted(self):
        c = get_constellation("QPSK")
        idx = np.arange(4).repeat(5)
        assert demap_and_score(c.points[idx], idx)["ser"] == 0.0
        flipped = demap_and_score(-c.points[idx], idx)
        assert flipped["ser"] == 1.0
        assert flipped["ber"] == 1.0

    def test_evm_and_sinr(self):
        c = get_constellation("QPSK")
        idx = np.zeros(4, dtype=int)
        out = demap_and_score(c.points[idx] * 1.1, idx, sinr=np.array([1.0, 3.0]))
        assert out["evm"] == pytest.approx(0.1)
        assert out["mean_sinr"] == pytest.approx(2.0)

    def test_qpsk_awgn_ber(self):
        rng = np.random.default_rng(5)
        c = get_constellation("QPSK")
        es_n0 = 10 ** (10 / 10)
        idx = c.random_indices(rng, 400_000)
        noise = np.sqrt(1 / es_n0 / 2) * (rng.standard_normal(idx.size) + 1j * rng.standard_normal(idx.size))
        ber = demap_and_score(c.points[idx] + noise, idx)["ber"]
        expected = oracle.qfunc(math.sqrt(es_n0))
        assert abs(ber - expected) / expected < 0.1


def _prediction_nmse_db(chain, ps_list, lay, rng):
    const = get_constellation("QPSK")
    err = power = 0.0
    for ps in ps_list:
        frame = compose_frame(lay, const.points[const.random_indices(rng, lay.num_data)])
        y = chain.receive(apply_channel(chain.transmit(frame), ps))
        h = build_io_matrix(estimate_channel(y, lay), lay.m, lay.n)
        d = lay.data
        err += np.sum(np.abs(y.data[d] - h.apply(frame).data[d]) ** 2)
        power += np.sum(np.abs(y.data[d]) ** 2)
    return 10 * np.log10(err / power)


class TestPredictability:
    """Pilot response predicts the data response (noiseless, crystallized)."""

    def test_integer_grid_channel(self):
        c = ZakOfdmChain(ZakConfig(12, 4, OfdmConfig(48, 15e3, 3)))
        b, t = c.cfg.rate_hz, 1 / 15e3
        ps = PathSet((ChannelPath(0.9, 0.0, 0.0), ChannelPath(0.4j, 1 / b, 1 / t), ChannelPath(-0.2, 2 / b, -1 / t)))
        lay = build_layout(12, 4, b, 2 / b)
        assert _prediction_nmse_db(c, [ps], lay, np.random.default_rng(6)) < -25

    def test_tdl_c_constrained_chain(self):
        rng = np.random.default_rng(7)
        prof = load_tdl_profile("TDL-C", 302e-9)
        c = ZakOfdmChain(ZakConfig(48, 1, OfdmConfig(48, 15e3, 3)))
        lay = build_layout(48, 1, 720e3, prof.max_delay_s)
        channels = [draw_tdl_realization(prof, 1250.0, rng) for _ in range(20)]
        assert _prediction_nmse_db(c, channels, lay, rng) < -25

    def test_tdl_c_unconstrained_chain(self):
        rng = np.random.default_rng(8)
        prof = load_tdl_profile("TDL-C", 302e-9)
        filt = FilterSpec("gaussian_sinc", 0.1, "gaussian_sinc", 0.047)
        c = UnconstrainedChain(UnconstrainedConfig(48, 15, 720e3, 3, 2), filt)
        lay = build_layout(48, 15, 720e3, prof.max_delay_s)
        channels = [draw_tdl_realization(prof, 1250.0, rng) for _ in range(8)]
        assert _prediction_nmse_db(c, channels, lay, rng) < -25
