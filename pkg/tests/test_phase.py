import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from phasehpss import (
    ComplexSpectrogram,
    InvalidArgumentError,
    MagSpectrogram,
    Setting,
    StftConfig,
    Waveform,
    magnitude,
    make_setting,
    stft,
)
from phasehpss.phase_recovery import (
    AssignRule,
    FrequencyField,
    PuHpssConfig,
    estimate_frequencies,
    find_peaks,
    mixture_phase_reconstruct,
    pu_hpss,
    qifft_offset,
    unwrap_phase_step,
    wiener_gains,
)
from phasehpss.spectral import wrap_phase

CFG = StftConfig(window_length=64, hop_length=16, fft_length=64)  # 33 bins


def random_fixture(seed, n_bins=33, n_frames=12, cfg=CFG):
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((n_bins, n_frames)) + 1j * rng.standard_normal((n_bins, n_frames))
    V1 = rng.random((n_bins, n_frames)) * 2
    V2 = rng.random((n_bins, n_frames)) * 2
    V1[rng.random(V1.shape) < 0.1] = 0.0
    return (ComplexSpectrogram(X, cfg, 8000), MagSpectrogram(V1, cfg, 8000),
            MagSpectrogram(V2, cfg, 8000))


class TestMixturePhase:
    def test_single_active_source(self):
        X, _, _ = random_fixture(0)
        zero = MagSpectrogram(np.zeros(X.shape), CFG, 8000)
        S1, S2 = mixture_phase_reconstruct(magnitude(X), zero, X)
        np.testing.assert_allclose(S1.bins, X.bins, rtol=1e-14)
        assert np.all(S2.bins == 0)

    def test_phase_and_magnitude(self):
        X, V1, V2 = random_fixture(1)
        S1, S2 = mixture_phase_reconstruct(V1, V2, X)
        for S, V in ((S1, V1), (S2, V2)):
            np.testing.assert_allclose(np.abs(S.bins), V.bins, rtol=1e-14)
            on = V.bins > 0
            d = wrap_phase(np.angle(S.bins) - np.angle(X.bins))
            assert np.max(np.abs(d[on])) < 1e-12

    def test_shape_mismatch(self):
        X, V1, _ = random_fixture(2)
        short = MagSpectrogram(np.ones((33, 3)), CFG, 8000)
        with pytest.raises(InvalidArgumentError):
            mixture_phase_reconstruct(V1, short, X)


class TestWienerGains:
    def test_values(self):
        g = wiener_gains(np.array([[3.0, 2.0, 5.0, 0.0]]), np.array([[4.0, 2.0, 0.0, 0.0]]))
        np.testing.assert_allclose(g.percussive, [[9 / 25, 0.5, 1.0, 0.5]])
        np.testing.assert_allclose(g.harmonic, [[16 / 25, 0.5, 0.0, 0.5]])

    @settings(max_examples=50, deadline=None)
    @given(st.integers(0, 10_000))
    def test_partition_of_unity(self, seed):
        _, V1, V2 = random_fixture(seed)
        g = wiener_gains(V1, V2)
        np.testing.assert_allclose(g.percussive + g.harmonic, 1.0, rtol=1e-15)
        assert g.percussive.min() >= 0 and g.percussive.max() <= 1


class TestFrequencies:
    def test_find_peaks(self):
        frame = np.array([0.0, 1.0, 3.0, 1.0, 3.5, 5.0, 4.0, 0.0])
        np.testing.assert_array_equal(find_peaks(frame, 1), [2, 5])
        np.testing.assert_array_equal(find_peaks(frame, 2), [5])
        assert find_peaks(np.zeros(8)).size == 0

    def test_qifft_offset(self):
        # parabola with vertex at +0.25: y = -(x - 0.25)^2
        y = [-(x - 0.25) ** 2 for x in (-1, 0, 1)]
        assert qifft_offset(*y) == pytest.approx(0.25)
        assert qifft_offset(1.0, 0.0, 1.0) == 0.0  # convex: degenerate curvature
        assert qifft_offset(0.0, 1.0, 1.9) == 0.5  # vertex far outside the bin: clamped

    def _tone(self, cycles_per_sample, cfg, n=8000):
        x = np.cos(2 * np.pi * cycles_per_sample * np.arange(n) + 0.3)
        return magnitude(stft(Waveform(x, 8000), cfg))

    def test_bin_centred_tone(self):
        cfg = make_setting(Setting.SETTING2, 8000, window_rule="pow2")
        k = 56
        V = self._tone(k / cfg.fft_length, cfg)
        nu = estimate_frequencies(V).nu
        interior = nu[k, 6:-6] * cfg.fft_length
        assert np.max(np.abs(interior - k)) < 1e-6

    @pytest.mark.parametrize("offset", [0.3, -0.3, 0.45])
    def test_off_bin_tone_within_two_hundredths(self, offset):
        cfg = make_setting(Setting.SETTING2, 8000, window_rule="pow2")
        k = 56 + offset
        V = self._tone(k / cfg.fft_length, cfg)
        nu = estimate_frequencies(V).nu
        err_bins = np.abs(nu[56, 6:-6] * cfg.fft_length - k)
        assert err_bins.max() < 0.02

    def test_zero_frame_fallback(self):
        V = MagSpectrogram(np.zeros((33, 3)), CFG, 8000)
        ff = estimate_frequencies(V)
        np.testing.assert_array_equal(ff.nu, np.repeat((np.arange(33) / 64)[:, None], 3, axis=1))
        assert np.all(ff.n_peaks == 0)

    def test_assignment_rules(self):
        col = np.zeros(33)
        col[[4, 5, 6]] = [1.0, 3.0, 1.0]
        col[[20, 21, 22]] = [1.0, 2.0, 1.0]
        col[7:20] = 0.5
        col[16] = 0.1  # lobe boundary away from the midpoint
        V = MagSpectrogram(col[:, None], CFG, 8000)
        near = estimate_frequencies(V, PuHpssConfig(assign_rule=AssignRule.NEAREST_PEAK)).nu[:, 0]
        lobe = estimate_frequencies(V, PuHpssConfig(assign_rule=AssignRule.LOBE_SPLIT)).nu[:, 0]
        # two distinct frequencies only; channel 14 is nearer peak 21 but left of the minimum
        assert len(np.unique(near)) == 2 and len(np.unique(lobe)) == 2
        assert near[14] == near[21] and lobe[14] == lobe[5]
        assert near[13] == near[5] and lobe[17] == lobe[21]

    def test_range(self):
        _, _, V2 = random_fixture(7)
        nu = estimate_frequencies(V2).nu
        assert nu.min() >= 0 and nu.max() <= 0.5


class TestUnwrap:
    def test_zero_frequency(self):
        assert unwrap_phase_step(1.234, 100, 0.0) == pytest.approx(1.234)

    def test_hand_value(self):
        assert unwrap_phase_step(0.0, 4, 0.1) == pytest.approx(0.8 * np.pi)

    def test_wraps(self):
        assert unwrap_phase_step(3.0, 1, 0.25) == pytest.approx(3.0 + np.pi / 2 - 2 * np.pi)

    def test_trajectory_matches_stft_phase(self):
        cfg = make_setting(Setting.SETTING2, 8000, window_rule="pow2")
        k = 56  # 437.5 Hz, the bin centre nearest 440 Hz
        nu = k / cfg.fft_length
        x = np.cos(2 * np.pi * nu * np.arange(8000) + 0.3)
        measured = np.angle(stft(Waveform(x, 8000), cfg).bins[k])
        first = 6
        predicted = [measured[first]]
        for _ in range(first + 1, len(measured) - 6):
            predicted.append(unwrap_phase_step(predicted[-1], cfg.hop_length, nu))
        d = wrap_phase(np.array(predicted) - measured[first:len(measured) - 6])
        assert np.max(np.abs(d)) < 1e-6


class TestPuHpss:
    def test_zero_iterations_is_initialisation(self):
        X, V1, V2 = random_fixture(3)
        res = pu_hpss(X, V1, V2, PuHpssConfig(max_iter=0))
        S1m, S2m = mixture_phase_reconstruct(V1, V2, X)
        np.testing.assert_allclose(res.percussive.bins, S1m.bins, rtol=1e-14)
        # harmonic: frame 0 is mixture phase, later frames follow the recursion
        np.testing.assert_allclose(res.harmonic.bins[:, 0], S2m.bins[:, 0], rtol=1e-14)
        nu = res.frequencies.nu
        phi = np.angle(np.exp(1j * np.angle(X.bins[:, 0])))
        for t in range(1, X.n_frames):
            phi = unwrap_phase_step(phi, CFG.hop_length, nu[:, t])
            np.testing.assert_allclose(res.harmonic.bins[:, t], V2.bins[:, t] * np.exp(1j * phi),
                                       rtol=1e-12, atol=1e-12)

    @pytest.mark.parametrize("iters", [1, 5, 50])
    def test_single_source_fixed_point(self, iters):
        X, _, _ = random_fixture(4)
        zero = MagSpectrogram(np.zeros(X.shape), CFG, 8000)
        res = pu_hpss(X, magnitude(X), zero, PuHpssConfig(max_iter=iters))
        np.testing.assert_allclose(res.percussive.bins, X.bins, rtol=1e-12)
        assert np.all(res.harmonic.bins == 0)

    def test_disjoint_support_recovers_sources(self):
        rng = np.random.default_rng(5)
        shape = (33, 20)
        support = rng.random(shape) < 0.5
        S1 = np.where(support, rng.standard_normal(shape) + 1j * rng.standard_normal(shape), 0)
        S2 = np.where(~support, rng.standard_normal(shape) + 1j * rng.standard_normal(shape), 0)
        X = ComplexSpectrogram(S1 + S2, CFG, 8000)
        res = pu_hpss(X, MagSpectrogram(np.abs(S1), CFG, 8000),
                      MagSpectrogram(np.abs(S2), CFG, 8000), PuHpssConfig(max_iter=50))
        total = np.sum(np.abs(X.bins) ** 2)
        assert np.all(res.mixing_error[:, -1] < 1e-6 * total)
        for est, ref in ((res.percussive.bins, S1), (res.harmonic.bins, S2)):
            assert np.linalg.norm(est - ref) / np.linalg.norm(ref) < 1e-3

    @settings(max_examples=20, deadline=None)
    @given(st.integers(0, 2**31 - 1))
    def test_magnitude_constraint_and_monotone_error(self, seed):
        X, V1, V2 = random_fixture(seed)
        res = pu_hpss(X, V1, V2, PuHpssConfig(max_iter=50))
        for S, V in ((res.percussive, V1), (res.harmonic, V2)):
            on = V.bins > 0
            rel = np.abs(np.abs(S.bins[on]) - V.bins[on]) / V.bins[on]
            assert rel.max() < 1e-12
            assert np.all(S.bins[~on] == 0)
        assert np.all(np.diff(res.mixing_error, axis=1) <= 1e-9)

    def test_reduces_error_relative_to_initialisation(self):
        X, V1, V2 = random_fixture(8)
        res = pu_hpss(X, V1, V2)
        assert np.all(res.mixing_error[1:, -1] <= res.mixing_error[1:, 0])

    @pytest.mark.parametrize("case", ["zero_harmonic", "zero_mixture", "single_frame"])
    def test_degenerate_inputs_terminate(self, case):
        X, V1, V2 = random_fixture(9)
        if case == "zero_harmonic":
            V2 = MagSpectrogram(np.zeros(X.shape), CFG, 8000)
        elif case == "zero_mixture":
            X = ComplexSpectrogram(np.zeros(X.shape), CFG, 8000)
        else:
            X = ComplexSpectrogram(X.bins[:, :1], CFG, 8000)
            V1 = MagSpectrogram(V1.bins[:, :1], CFG, 8000)
            V2 = MagSpectrogram(V2.bins[:, :1], CFG, 8000)
        res = pu_hpss(X, V1, V2)
        assert np.all(np.isfinite(res.percussive.bins)) and np.all(np.isfinite(res.harmonic.bins))
        assert np.all(np.isfinite(res.mixing_error))

    def test_frequency_field_shape_checked(self):
        X, V1, V2 = random_fixture(10)
        bad = FrequencyField(np.zeros((33, 2)), np.zeros(2, dtype=int))
        with pytest.raises(InvalidArgumentError):
            pu_hpss(X, V1, V2, frequencies=bad)
