from __future__ import annotations

import numpy as np
import pytest
from numpy.testing import assert_allclose

from zakofdm.channel import PathSet, apply_channel, effective_dd_channel
from zakofdm.ofdm import OfdmConfig, ofdm_demodulate, ofdm_modulate
from zakofdm.transforms import DDFrame, DDTap, DimensionError, FreqSymbols, TimeSamples, idzt, twisted_convolve
from zakofdm.zak import (FilterError, FilterSpec, UnconstrainedChain, UnconstrainedConfig, ZakConfig,
                         assemble_subframe, delay_kernel, split_subframe, time_window, unconstrained_zak_rx,
                         unconstrained_zak_tx, zak_ofdm_rx, zak_ofdm_tx)

from . import _oracles as oracle
from .conftest import cascade_isi


def random_frame(rng, m, n):
    return DDFrame(rng.standard_normal((m, n)) + 1j * rng.standard_normal((m, n)))


def rel(a, b):
    return np.linalg.norm(a - b) / np.linalg.norm(b)


class TestZakConfig:
    def test_product_must_match(self):
        with pytest.raises(ValueError, match="M\\*N"):
            ZakConfig(4, 4, OfdmConfig(12, 1.0))

    def test_periods(self):
        cfg = ZakConfig(48, 1, OfdmConfig(48, 15e3, 3))
        assert cfg.delay_period_s == pytest.approx(48 / 720e3)
        assert cfg.doppler_period_hz == pytest.approx(15e3)


class TestPrecodedOfdm:
    @pytest.mark.parametrize("m,n", [(1, 12), (2, 6), (3, 4), (12, 1)])
    def test_tx_against_direct_precoder(self, m, n):
        rng = np.random.default_rng(m)
        cfg = ZakConfig(m, n, OfdmConfig(12, 1.0, 2))
        f = random_frame(rng, m, n)
        direct = ofdm_modulate(FreqSymbols(oracle.idfzt(f.data)), cfg.ofdm).data
        assert rel(zak_ofdm_tx(f, cfg).data, direct) < 1e-12

    @pytest.mark.parametrize("m,n", [(1, 12), (2, 6), (3, 4), (12, 1)])
    def test_rx_against_direct_post_processor(self, m, n):
        rng = np.random.default_rng(m + 20)
        cfg = ZakConfig(m, n, OfdmConfig(12, 1.0, 2))
        r = TimeSamples(rng.standard_normal(14) + 1j * rng.standard_normal(14), -2)
        expected = oracle.dfzt(ofdm_demodulate(r, cfg.ofdm).data, m, n)
        assert rel(zak_ofdm_rx(r, cfg).data, expected) < 1e-12

    def test_single_delay_bin_is_plain_ofdm(self):
        rng = np.random.default_rng(2)
        cfg = ZakConfig(1, 16, OfdmConfig(16, 1.0, 4))
        s = rng.standard_normal(16) + 1j * rng.standard_normal(16)
        x = zak_ofdm_tx(DDFrame(s[None, :]), cfg)
        assert_allclose(x.data, ofdm_modulate(FreqSymbols(s), cfg.ofdm).data, atol=1e-13)
        assert_allclose(zak_ofdm_rx(x, cfg).data[0], s, atol=1e-13)

    def test_point_frame_body_is_impulse_train(self):
        m, n, k0, l0 = 4, 3, 1, 2
        cfg = ZakConfig(m, n, OfdmConfig(12, 1.0, 0))
        body = zak_ofdm_tx(DDFrame.point(m, n, k0, l0), cfg).data
        expected = np.zeros(12, dtype=complex)
        for q in range(n):
            expected[k0 + q * m] = np.exp(2j * np.pi * q * l0 / n) / np.sqrt(n)
        assert_allclose(body, expected, atol=1e-14)
        assert_allclose(body, idzt(DDFrame.point(m, n, k0, l0)).data, atol=1e-14)

    def test_round_trip_and_energy(self):
        rng = np.random.default_rng(3)
        cfg = ZakConfig(6, 8, OfdmConfig(48, 15e3, 3))
        f = random_frame(rng, 6, 8)
        x = zak_ofdm_tx(f, cfg)
        assert np.linalg.norm(x.data[3:]) ** 2 == pytest.approx(f.energy(), rel=1e-12)
        assert_allclose(zak_ofdm_rx(x, cfg).data, f.data, atol=1e-12)

    @pytest.mark.parametrize("d", [0, 1, 3])
    def test_integer_delay_is_twisted_shift(self, d):
        rng = np.random.default_rng(d)
        cfg = ZakConfig(6, 8, OfdmConfig(48, 15e3, 3))
        f = random_frame(rng, 6, 8)
        r = apply_channel(zak_ofdm_tx(f, cfg), PathSet.single(1.0, d / cfg.rate_hz))
        expected = twisted_convolve([DDTap(d, 0, 1.0)], f).data
        assert_allclose(zak_ofdm_rx(r, cfg).data, expected, atol=1e-12)

    def test_frame_size_checked(self):
        with pytest.raises(DimensionError):
            zak_ofdm_tx(DDFrame.zeros(3, 3), ZakConfig(2, 6, OfdmConfig(12, 1.0)))


class TestSubframe:
    def cfg(self, symbols):
        return ZakConfig(4, 3, OfdmConfig(12, 1.0, 2), symbols)

    def test_single_packet_equals_tx(self):
        f = random_frame(np.random.default_rng(4), 4, 3)
        cfg = self.cfg(1)
        assert_allclose(assemble_subframe([f], cfg).data, zak_ofdm_tx(f, cfg).data)

    def test_length_and_split(self):
        rng = np.random.default_rng(5)
        cfg = self.cfg(5)
        frames = [random_frame(rng, 4, 3) for _ in range(5)]
        x = assemble_subframe(frames, cfg)
        assert len(x) == 5 * 14
        for f, block in zip(frames, split_subframe(x, cfg)):
            assert_allclose(block.data, zak_ofdm_tx(f, cfg).data)
            assert_allclose(zak_ofdm_rx(block, cfg).data, f.data, atol=1e-12)

    def test_wrong_count(self):
        with pytest.raises(DimensionError):
            assemble_subframe([DDFrame.zeros(4, 3)], self.cfg(2))


class TestFilters:
    def test_unknown_prototype(self):
        with pytest.raises(FilterError):
            FilterSpec("hann")

    def test_rrc_needs_oversampling(self):
        with pytest.raises(FilterError):
            delay_kernel(FilterSpec("rrc", 0.3), oversample=1)

    @pytest.mark.parametrize("spec", [FilterSpec("gaussian_sinc", 0.1), FilterSpec("rrc", 0.2), FilterSpec()])
    def test_kernel_unit_cascade_gain(self, spec):
        g = delay_kernel(spec, 2, 64)
        assert np.sum(np.abs(g) ** 2) / 2 == pytest.approx(1.0, rel=1e-12)

    def test_sinc_truncation_error_shrinks(self):
        assert cascade_isi(FilterSpec(), 2, 64) < cascade_isi(FilterSpec(), 2, 16)
        assert cascade_isi(FilterSpec("rrc", 0.2), 2, 64) < 1e-3

    def test_time_windows(self):
        t = np.linspace(-1, 2, 301)
        rect = time_window(FilterSpec(), t, 1.0)
        assert_allclose(rect, ((t >= 0) & (t < 1)).astype(float))
        smooth = time_window(FilterSpec(doppler_proto="gaussian_sinc", doppler_param=0.05), t, 1.0)
        assert smooth[150] == pytest.approx(1.0, abs=1e-6)
        assert smooth[100] == pytest.approx(0.5, abs=1e-12)


class TestUnconstrained:
    def test_sinc_rect_is_zak_round_trip(self):
        rng = np.random.default_rng(6)
        cfg = UnconstrainedConfig(12, 8, 96e3)
        f = random_frame(rng, 12, 8)
        x = unconstrained_zak_tx(f, FilterSpec(), cfg)
        assert_allclose(x.data, idzt(f).data, atol=1e-12)
        assert_allclose(unconstrained_zak_rx(x, FilterSpec(), cfg).data, f.data, atol=1e-12)

    def test_identity_channel_scales_by_filter_gain(self):
        rng = np.random.default_rng(7)
        spec = FilterSpec("rrc", 0.2)
        cfg = UnconstrainedConfig(12, 8, 96e3, guard_samples=0, oversample=2, half_width=64,
                                  rx_extension=64, rx_lead=64)
        chain = UnconstrainedChain(cfg, spec)
        alpha = chain.receive(chain.transmit(DDFrame.point(12, 8, 0, 0))).data[0, 0]
        f = random_frame(rng, 12, 8)
        got = chain.receive(chain.transmit(f)).data
        assert abs(alpha - 1) < 1e-3
        assert rel(got, alpha * f.data) < 1e-3

    def test_point_through_integer_delay(self):
        spec = FilterSpec("rrc", 0.2)
        cfg = UnconstrainedConfig(12, 8, 96e3, guard_samples=4, oversample=2, half_width=64, rx_lead=64)
        chain = UnconstrainedChain(cfg, spec)
        taps = effective_dd_channel(PathSet.single(1.0, 3 / 96e3), chain, prune_db=None)
        energy = {(t.k, t.l): abs(t.value) ** 2 for t in taps}
        total = sum(energy.values())
        assert energy[(3, 0)] / total > 0.999

    def test_guard_precedes_packet(self):
        cfg = UnconstrainedConfig(4, 2, 8.0, guard_samples=3)
        x = unconstrained_zak_tx(DDFrame.point(4, 2, 0, 0), FilterSpec(), cfg)
        assert x.offset == -3
        assert_allclose(x.data[:3], 0)
        assert len(x) == 3 + 8
