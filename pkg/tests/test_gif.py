import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from retinasim.dynamics import SpikeRaster
from retinasim.errors import AccuracyError, ConfigurationError, EstimationError, ExcitationError
from retinasim.gif import (
    GifNetwork,
    PairProduct,
    SpikeIndicator,
    alpha_kernel,
    alpha_trace,
    comoving_rate_profile,
    delta_average,
    estimate_response_kernel,
    memory_depth,
    relative_prediction_error,
    ring_moving_bar,
    ring_network,
    simulate_gif,
    spontaneous_run,
)

RING = dict(g_exc=0.006, g_inh=0.02, e_exc=4.0, e_inh=-2.0, tau_syn_ms=10.0, sigma_b=0.35, bin_ms=1.0)


@pytest.fixture(scope="module")
def ring10():
    return ring_network(10, **RING)


@pytest.fixture(scope="module")
def ring10_spontaneous(ring10):
    return spontaneous_run(ring10, 20000, 3, n_trials=50)


# -- alpha kernels ----------------------------------------------------------


def test_empty_history_gives_zero():
    assert alpha_trace(np.zeros(50), 10.0, 0, 1.0, 40) == 0.0


@pytest.mark.parametrize("degree", [0, 1])
@pytest.mark.parametrize("lag", [0, 1, 7, 40])
def test_single_spike_returns_kernel_at_its_lag(degree, lag):
    h = np.zeros(60)
    h[-1 - lag] = 1.0
    assert alpha_trace(h, 10.0, degree, 0.5, 50) == alpha_kernel(lag, 10.0, degree, 0.5)


def test_periodic_spiking_converges_to_geometric_series():
    tau, d, period = 8.0, 0.5, 6
    depth = memory_depth(tau, 0, d, 1e-12)
    h = np.zeros(depth + 1 + period)
    h[-1 - period::-period] = 1.0  # most recent spike at lag `period`
    r = math.exp(-period * d / tau)
    assert alpha_trace(h, tau, 0, d, depth) == pytest.approx(r / (1.0 - r), rel=1e-10)


def test_short_window_raises_unless_declared_complete():
    with pytest.raises(ConfigurationError, match="shorter than the memory depth"):
        alpha_trace(np.ones(5), 10.0, 0, 1.0, 10)
    assert alpha_trace(np.ones(5), 10.0, 0, 1.0, 10, complete=True) == pytest.approx(
        sum(math.exp(-k / 10.0) for k in range(5)))


@settings(max_examples=40, deadline=None)
@given(st.floats(1.0, 50.0), st.sampled_from([0, 1]), st.floats(0.05, 1.0), st.sampled_from([1e-3, 1e-6, 1e-9]))
def test_memory_depth_is_the_smallest_sound_truncation(tau, degree, d, eps):
    depth = memory_depth(tau, degree, d, eps)
    lags = np.arange(1, int(80 * tau / d) + depth)
    k = alpha_kernel(lags, tau, degree, d)
    total = k.sum()
    tail = lambda D: k[D:].sum()  # mass at lags > D
    assert tail(depth) <= eps * total * (1 + 1e-9)
    if depth > 1:
        assert tail(depth - 1) > eps * total


# -- network tables ---------------------------------------------------------


def test_effective_weights_carry_the_reversal_sign(ring10):
    w = ring10.weights
    assert w[0, 1] > 0 and w[0, 9] > 0
    assert w[0, 2] < 0 and w[0, 8] < 0
    assert w[0, 3] == 0 and w[0, 0] == 0


def test_negative_conductance_is_named():
    g = np.zeros((3, 3))
    g[2, 0] = -0.1
    with pytest.raises(ConfigurationError, match=r"conductance\[3, 1\] < 0"):
        GifNetwork.build(3, conductance=g)


def test_bin_wider_than_a_tenth_of_the_synaptic_time_is_rejected():
    with pytest.raises(ConfigurationError, match="bin width"):
        GifNetwork.build(2, conductance=0.01, tau_syn_ms=5.0, bin_ms=1.0)


def test_unknown_kernel_degree_is_rejected():
    with pytest.raises(ConfigurationError, match="degree"):
        GifNetwork.build(2, degree=2)


# -- simulation -------------------------------------------------------------


def test_uncoupled_neuron_relaxes_to_leak_reversal_without_spiking():
    net = GifNetwork.build(1, e_leak=-0.5, threshold=1.0)
    res = simulate_gif(net, None, 400, 1, 0, v0=[0.9], record_voltage=True)
    v = res.voltages[0, :, 0]
    assert not res.raster.spikes.any()
    np.testing.assert_allclose(v, -0.5 + 1.4 * np.exp(-0.1 * np.arange(1, 401)), rtol=1e-12)


@pytest.mark.parametrize("current", [0.11, 0.15, 0.4])
def test_constant_current_gives_lif_period(current):
    net = GifNetwork.build(1, capacitance=1.0, g_leak=0.1, e_leak=0.0, threshold=1.0, reset=0.0, bin_ms=0.5)
    n_bins = 4000
    res = simulate_gif(net, np.full((n_bins, 1), current), n_bins, 1, 0, v0=[0.0])
    times = np.flatnonzero(res.raster.spikes[0, 0]) * net.bin_ms
    isi = np.diff(times)
    v_inf = current / 0.1
    period = 10.0 * math.log(v_inf / (v_inf - 1.0))
    assert len(isi) > 5 and np.ptp(isi) == 0.0
    assert abs(isi[0] - period) <= net.bin_ms


def test_nonfinite_input_is_reported():
    net = GifNetwork.build(2)
    stim = np.zeros((10, 2))
    stim[4, 1] = np.inf
    with pytest.raises(AccuracyError, match="bin 4"):
        simulate_gif(net, stim, 10)


def test_stimulus_shape_is_checked():
    with pytest.raises(ConfigurationError, match="shape"):
        simulate_gif(GifNetwork.build(2), np.zeros((10, 3)), 10)


def test_runs_are_bit_identical_and_trials_are_addressable(ring10):
    a = simulate_gif(ring10, None, 300, 4, 11, burn_in_bins=50)
    b = simulate_gif(ring10, None, 300, 4, 11, burn_in_bins=50)
    assert np.array_equal(a.raster.spikes, b.raster.spikes)
    third = simulate_gif(ring10, None, 300, 1, 11, first_trial=2, burn_in_bins=50)
    assert np.array_equal(third.raster.spikes[0], a.raster.spikes[2])
    other = simulate_gif(ring10, None, 300, 4, 12, burn_in_bins=50)
    assert not np.array_equal(other.raster.spikes, a.raster.spikes)


@pytest.mark.parametrize("degree", [0, 1])
def test_doubling_memory_depth_leaves_rates_unchanged(degree):
    net = ring_network(10, **{**RING, "tau_syn_ms": 12.0}, degree=degree, eps_mem=1e-5)
    deep = net.with_depth_factor(2)
    assert deep.memory_depth >= 2 * net.memory_depth
    a = simulate_gif(net, None, 10000, 4, 1, burn_in_bins=200).raster.spikes
    b = simulate_gif(deep, None, 10000, 4, 1, burn_in_bins=200).raster.spikes
    # the dropped tail changes conductances by at most eps_mem of their size,
    # so with shared noise a threshold crossing almost never flips
    rate_a, rate_b = a.mean(axis=(0, 2)), b.mean(axis=(0, 2))
    assert np.max(np.abs(rate_a - rate_b)) <= 1e-3 * rate_a.mean()


def test_degree_one_kernel_is_realised_by_the_recursion():
    # One spike from neuron 1 at bin 0; neuron 0 sees G * a(t - n) on later bins.
    g = np.zeros((2, 2))
    g[0, 1] = 0.05
    net = GifNetwork.build(2, conductance=g, reversal=np.full((2, 2), 3.0), tau_syn_ms=6.0, degree=1,
                           bin_ms=0.5, threshold=[100.0, 0.5], g_leak=0.1, e_leak=0.0)
    stim = np.zeros((120, 2))
    stim[0, 1] = 10.0
    res = simulate_gif(net, stim, 120, 1, 0, v0=[0.0, 0.0], record_voltage=True)
    assert res.raster.spikes[0, 1].tolist()[:3] == [1, 0, 0]
    v = 0.0
    expected = []
    for t in range(120):
        a = alpha_kernel(t, 6.0, 1, 0.5) if t >= 1 else 0.0
        gt = 0.1 + 0.05 * a
        vinf = 0.05 * a * 3.0 / gt
        v = vinf + (v - vinf) * math.exp(-gt * 0.5)
        expected.append(v)
    np.testing.assert_allclose(res.voltages[0, :, 0], expected, rtol=1e-12, atol=1e-15)


def test_ring_bar_gives_band_with_flanking_suppression():
    n, n_bins, speed = 20, 2000, 0.01
    net = ring_network(n, **RING)
    spont = spontaneous_run(net, 20000, 3, n_trials=10)
    base = spont.raster.spikes.mean()
    base_se = spont.raster.spikes.mean(axis=(1, 2)).std(ddof=1) / math.sqrt(10)
    bar = ring_moving_bar(n, n_bins, 0.15, speed=speed, width=0.5)
    res = simulate_gif(net, bar, n_bins, 100, 5, burn_in_bins=100)
    prof = comoving_rate_profile(res.raster, speed * np.arange(n_bins), 3)
    rate = dict(zip(prof.offsets, prof.rate))
    se = dict(zip(prof.offsets, np.hypot(prof.se, base_se)))
    assert rate[0] - base >= 3 * se[0]
    assert base - rate[2] >= 3 * se[2] and base - rate[-2] >= 3 * se[-2]


# -- observables and delta averages -----------------------------------------


def test_pair_product_values_by_hand():
    spikes = np.zeros((1, 2, 5), np.uint8)
    spikes[0, 0] = [1, 0, 1, 1, 0]
    spikes[0, 1] = [0, 1, 1, 0, 1]
    vals = PairProduct(0, 1, 1, 0.5, 0.25).values(SpikeRaster(spikes, 1.0))[0]
    a = np.array([1, 0, 1, 1, 0]) - 0.5
    b = np.array([0, 1, 1, 0, 1]) - 0.25
    assert np.isnan(vals[0])
    np.testing.assert_allclose(vals[1:], a[1:] * b[:-1])


def test_null_stimulus_gives_zero_delta_average(ring10, ring10_spontaneous):
    res = simulate_gif(ring10, None, 200, 3000, 4, burn_in_bins=100)
    da = delta_average(SpikeIndicator(0), res.raster, ring10_spontaneous.raster)
    z = da.delta_mu / da.se
    # 200 bins: the per-bin 3 SE band is exceeded at the nominal 0.27 % rate
    assert np.mean(np.abs(z) > 3) <= 0.02
    assert np.max(np.abs(z)) < 4.0
    assert da.n_trials == 3000


def test_localised_drive_raises_the_rate_of_its_neuron(ring10, ring10_spontaneous):
    stim = np.zeros((60, 10))
    stim[20:40, 0] = 0.3
    res = simulate_gif(ring10, stim, 60, 400, 9, burn_in_bins=100)
    da = delta_average(SpikeIndicator(0), res.raster, ring10_spontaneous.raster)
    assert np.all(da.delta_mu[21:40] > 3 * da.se[21:40])


def test_moving_bar_modulates_lagged_pair_correlations(ring10, ring10_spontaneous):
    spikes = ring10_spontaneous.raster.spikes
    pair = PairProduct(1, 0, 2, float(spikes[:, 1].mean()), float(spikes[:, 0].mean()))
    bar = ring_moving_bar(10, 300, 0.4, speed=0.02, width=0.7, start=0.0, onset_bin=50)
    res = simulate_gif(ring10, bar, 300, 2000, 17, burn_in_bins=100)
    dp = delta_average(pair, res.raster, ring10_spontaneous.raster)
    window = pair.values(res.raster)[:, 50:150].sum(axis=1)
    window_se = window.std(ddof=1) / math.sqrt(len(window))
    total = dp.delta_mu[50:150].sum()
    assert total > 10 * window_se
    # regression value from the first validated run
    assert total == pytest.approx(2.20555547759281, rel=1e-9)


def test_single_stimulated_trial_is_rejected(ring10, ring10_spontaneous):
    res = simulate_gif(ring10, None, 50, 1, 0)
    with pytest.raises(EstimationError, match="two"):
        delta_average(SpikeIndicator(0), res.raster, ring10_spontaneous.raster)


def test_short_spontaneous_run_is_rejected(ring10):
    res = simulate_gif(ring10, None, 50, 4000, 0, burn_in_bins=100)
    short = spontaneous_run(ring10, 400, 1)
    with pytest.raises(EstimationError, match="longer spontaneous run"):
        delta_average(SpikeIndicator(0), res.raster, short.raster)


# -- kernel estimation ------------------------------------------------------


def _synthetic(n_bins=3000, n_lags=20, channels=3, seed=0):
    rng = np.random.default_rng(seed)
    lags = np.arange(n_lags)
    kernel = np.stack([np.exp(-lags / 4.0) * np.sin(lags / 3.0 + c) for c in range(channels)], axis=1)
    stim = rng.standard_normal((n_bins, channels))
    y = np.zeros(n_bins)
    for c in range(channels):
        y += np.convolve(stim[:, c], kernel[:, c])[:n_bins]
    return kernel, stim, y, rng


def test_noiseless_synthetic_kernel_is_recovered():
    kernel, stim, y, _ = _synthetic()
    est = estimate_response_kernel(y, stim, 20, ridge=1e-12)
    assert np.linalg.norm(est.kernel - kernel) / np.linalg.norm(kernel) < 1e-8
    assert est.residual < 1e-8


def test_noisy_synthetic_kernel_is_recovered_within_two_percent():
    kernel, stim, y, rng = _synthetic(n_bins=20000)
    noisy = y + 0.1 * rng.standard_normal(len(y))
    est = estimate_response_kernel(noisy, stim, 20)
    assert np.linalg.norm(est.kernel - kernel) / np.linalg.norm(kernel) < 0.02
    assert est.ridge > 0


def test_kernel_error_bars_match_the_spread_over_noise_draws():
    kernel, stim, y, rng = _synthetic(n_bins=2000, channels=1)
    fits = []
    for _ in range(300):
        est = estimate_response_kernel(y + 0.5 * rng.standard_normal(len(y)), stim, 20, ridge=0.0,
                                       se=np.full(len(y), 0.5))
        fits.append(est.kernel[:, 0])
    spread = np.std(fits, axis=0, ddof=1)
    np.testing.assert_allclose(spread, est.kernel_se[:, 0], rtol=0.15)


@settings(max_examples=20, deadline=None)
@given(st.integers(5, 290), st.integers(0, 10**6))
def test_fitted_kernel_predicts_causally(t_cut, seed):
    kernel, stim, y, _ = _synthetic(n_bins=300, channels=2)
    est = estimate_response_kernel(y, stim, 20, ridge=1e-9)
    other = stim.copy()
    other[t_cut:] = np.random.default_rng(seed).standard_normal(other[t_cut:].shape)
    np.testing.assert_array_equal(est.predict(stim)[:t_cut], est.predict(other)[:t_cut])


def test_silent_probe_channel_raises_excitation_error():
    _, stim, y, _ = _synthetic()
    stim[:, 1] = 0.0
    with pytest.raises(ExcitationError, match="richer"):
        estimate_response_kernel(y, stim, 20)


def test_too_few_bins_for_the_kernel_are_rejected():
    with pytest.raises(EstimationError, match="fewer valid bins"):
        estimate_response_kernel(np.zeros(30), np.ones((30, 2)), 20)


def test_prediction_error_of_exact_kernel_is_zero():
    kernel, stim, y, _ = _synthetic()
    est = estimate_response_kernel(y, stim, 20, ridge=0.0)
    assert relative_prediction_error(est, stim, y) < 1e-10


# -- ring helpers -----------------------------------------------------------


def test_ring_bar_profile_is_centred_on_its_position():
    bar = ring_moving_bar(12, 40, 0.5, speed=0.25, width=1.0, start=3.0, onset_bin=8)
    assert not bar[:8].any()
    assert bar[8].argmax() == 3 and bar[8, 3] == 0.5
    assert bar[16].argmax() == 5
    np.testing.assert_allclose(bar[8, 2], 0.5 * math.exp(-0.5))


def test_comoving_profile_of_a_synthetic_raster():
    n, n_bins = 8, 40
    centre = np.full(n_bins, 2.0)
    spikes = np.zeros((2, n, n_bins), np.uint8)
    spikes[:, 2, ::2] = 1  # rate 0.5 at offset 0
    spikes[0, 4, :] = 1  # rate 1 at offset +2 in trial 0 only
    prof = comoving_rate_profile(SpikeRaster(spikes, 1.0), centre, 2)
    rate = dict(zip(prof.offsets, prof.rate))
    assert rate[0] == 0.5 and rate[2] == 0.5 and rate[-1] == 0.0
    assert prof.se[list(prof.offsets).index(2)] == pytest.approx(0.5)
