import math

import numpy as np
import pytest
from scipy import stats
from scipy.special import ndtr

from retinasim.core import assemble_transport, classify_domain, rectification_guards
from retinasim.dynamics import (
    ConstantForcing,
    FunctionForcing,
    IntegratorConfig,
    SampledForcing,
    SpikeRaster,
    detect_crossing,
    generate_lnp_spikes,
    integrate_dense_euler,
    integrate_piecewise,
    integrate_sde,
    propagate_in_domain,
    propagator_chain,
    reconstruct_exit_states,
)
from retinasim.errors import ChatteringError, ConfigurationError, StepSizeError

from conftest import make_network


def single_cell(tau=5.0, theta=-1e6):
    return make_network({}, 1, 0, 0, tau_b_ms=tau, tau_a_ms=1.0, tau_g_ms=1.0, theta_b_mv=theta)


@pytest.fixture
def gate_network():
    """B drives A drives G; A rests 1 mV above its threshold and B never rectifies."""
    return make_network(
        {"a_to_b": [[-0.05]], "b_to_a": [[0.5]], "b_to_g": [[1.0]], "a_to_g": [[-0.5]]},
        1, 1, 1, tau_b_ms=5.0, tau_a_ms=8.0, tau_g_ms=10.0, theta_b_mv=-3.0, theta_a_mv=10.0,
    )


def inhibit_amacrine(amount, t_on, t_off=math.inf):
    return FunctionForcing(lambda t: np.array([0.0, -amount if t_on <= t < t_off else 0.0, 0.0]), 3)


# -- in-domain propagation --------------------------------------------------


@pytest.mark.parametrize("x0,force", [(0.0, 0.3), (2.0, -0.1), (-1.0, 0.0)])
def test_scalar_relaxation_matches_closed_form(x0, force):
    tau = 4.0
    net = single_cell(tau)
    op = assemble_transport(net, net.rest_label())
    sol = propagate_in_domain([x0], op, ConstantForcing([force]), 0.0, 20.0, dt=0.25)
    t = sol.times
    exact = tau * force * (1 - np.exp(-t / tau)) + x0 * np.exp(-t / tau)
    np.testing.assert_allclose(sol.states[:, 0], exact, rtol=0, atol=1e-10)


def test_complex_pair_rotates_and_decays(pair_network):
    op = assemble_transport(pair_network, pair_network.rest_label())
    x0 = np.array([0.7, -0.2])
    sol = propagate_in_domain(x0, op, None, 0.0, 6.0, dt=0.5)
    for t, x in zip(sol.times, sol.states):
        rot = np.array([[math.cos(t), -math.sin(t)], [math.sin(t), math.cos(t)]])
        np.testing.assert_allclose(x, math.exp(-t) * rot @ x0, rtol=0, atol=1e-13)


def test_sinusoidal_steady_state_amplitude():
    tau, w = 5.0, 0.4
    net = single_cell(tau)
    op = assemble_transport(net, net.rest_label())
    sol = propagate_in_domain([0.0], op, FunctionForcing(lambda t: [math.sin(w * t)], 1), 0.0, 200.0, dt=0.05)
    late = sol.times > 100.0
    t, x = sol.times[late], sol.states[late, 0]
    design = np.column_stack([np.sin(w * t), np.cos(w * t)])
    coef, *_ = np.linalg.lstsq(design, x, rcond=None)
    assert np.hypot(*coef) == pytest.approx(1 / math.sqrt(1 / tau ** 2 + w ** 2), rel=1e-8)


def test_sampled_forcing_interpolates_and_vanishes_outside():
    f = SampledForcing([0.0, 1.0, 2.0], [[0.0], [2.0], [4.0]])
    np.testing.assert_allclose(f(np.array([0.5, 1.75, 2.5, -0.1]))[:, 0], [1.0, 3.5, 0.0, 0.0])


# -- crossings --------------------------------------------------------------


def test_relaxation_crosses_threshold_at_log_time():
    tau, x0, theta = 4.0, 3.0, 1.2
    net = single_cell(tau, theta)
    label = classify_domain(np.array([x0]), net)
    c = detect_crossing(lambda t: np.array([x0 * math.exp(-t / tau)]), label, net, 0.0, 20.0, dt=0.1)
    assert c.cells == (0,)
    # |dV/dt| near the crossing is theta/tau, so eps_event mV maps to eps*tau/theta ms
    assert c.time == pytest.approx(tau * math.log(x0 / theta), abs=1e-9 * tau / theta + 1e-12)


def test_no_sign_change_returns_none():
    net = single_cell(4.0, 0.5)
    label = classify_domain(np.array([3.0]), net)
    assert detect_crossing(lambda t: np.array([3.0]), label, net, 0.0, 10.0) is None


def test_symmetric_cells_cross_together():
    blocks = {"a_to_b": [[-0.02], [-0.02]], "b_to_a": [[0.3, 0.3]]}
    net = make_network(blocks, 2, 1, 0, tau_b_ms=5.0, tau_a_ms=7.0, tau_g_ms=1.0, theta_b_mv=-1.0, theta_a_mv=-5.0)
    x0 = net.check_rest_state().state
    f = FunctionForcing(lambda t: np.array([-1.0, -1.0, 0.0]) if t >= 2.0 else np.zeros(3), 3)
    traj = integrate_piecewise(net, x0, f, 30.0)
    assert traj.visits[0].crossing_cells == (0, 1)
    assert traj.domains[1] == 0b11


# -- piecewise integration --------------------------------------------------


def test_subthreshold_run_is_single_visit_and_matches_closed_form(linear_network):
    fp = linear_network.check_rest_state()
    traj = integrate_piecewise(linear_network, fp.state, ConstantForcing([0.02, 0.01, 0.0, 0.0]), 40.0)
    assert traj.domains == [0]
    op = assemble_transport(linear_network, linear_network.rest_label())
    closed = propagate_in_domain(fp.state, op, ConstantForcing([0.02, 0.01, 0.0, 0.0]), 0.0, 40.0, dt=0.1)
    np.testing.assert_allclose(traj.states, closed.states, rtol=0, atol=1e-12)


def test_single_amacrine_rectification_against_fine_euler(gate_network):
    fp = gate_network.check_rest_state()
    f = inhibit_amacrine(0.5, 5.0)
    traj = integrate_piecewise(gate_network, fp.state, f, 60.0)
    assert traj.domains == [0, 2]
    euler = integrate_dense_euler(gate_network, fp.state, f, 60.0, dt=1e-3)
    assert np.max(np.abs(traj.final_state - euler.final_state)) < 1e-4


def test_visit_bookkeeping_invariants(gate_network):
    fp = gate_network.check_rest_state()
    cfg = IntegratorConfig()
    traj = integrate_piecewise(gate_network, fp.state, inhibit_amacrine(0.5, 5.0, 20.0), 60.0, cfg)
    assert traj.domains == [0, 2, 0]
    for a, b in zip(traj.visits[:-1], traj.visits[1:]):
        assert a.t_exit == b.t_entry
        g = rectification_guards(a.exit_state, gate_network)
        assert np.min(np.abs(g)) <= cfg.eps_event
    for v in traj.visits:
        inside = (traj.times > v.t_entry) & (traj.times < v.t_exit)
        for x in traj.states[inside]:
            assert classify_domain(x, gate_network) == v.label


def test_exit_states_rebuilt_from_propagators(gate_network):
    fp = gate_network.check_rest_state()
    traj = integrate_piecewise(gate_network, fp.state, inhibit_amacrine(0.5, 5.0, 20.0), 60.0)
    rebuilt = reconstruct_exit_states(traj)
    direct = np.array([v.exit_state for v in traj.visits])
    assert np.max(np.abs(rebuilt - direct)) < 1e-8


def test_propagator_chain_composes(gate_network):
    fp = gate_network.check_rest_state()
    traj = integrate_piecewise(gate_network, fp.state, inhibit_amacrine(0.5, 5.0, 20.0), 60.0)
    assert len(traj.visits) == 3
    for k in range(2, 4):
        for m in range(0, k - 1):
            lhs = propagator_chain(traj, k, m)
            rhs = propagator_chain(traj, k, k - 1) @ propagator_chain(traj, k - 1, m)
            np.testing.assert_allclose(lhs, rhs, rtol=0, atol=1e-10)


def test_visit_cap_raises_chattering_error(gate_network):
    fp = gate_network.check_rest_state()
    with pytest.raises(ChatteringError):
        integrate_piecewise(gate_network, fp.state, inhibit_amacrine(0.5, 5.0, 20.0), 60.0, IntegratorConfig(max_visits=2))


def test_start_outside_rest_domain_is_flagged(gate_network):
    traj = integrate_piecewise(gate_network, np.array([0.0, 0.0, 0.0]), None, 5.0)
    assert "outside the rest domain" in traj.metadata["warning"]


def test_initial_state_must_be_finite(gate_network):
    with pytest.raises(ConfigurationError):
        integrate_piecewise(gate_network, [np.nan, 0.0, 0.0], None, 5.0)


# -- stochastic integration -------------------------------------------------


def test_ornstein_uhlenbeck_stationary_variance():
    tau, sigma = 5.0, 0.8
    net = single_cell(tau)
    res = integrate_sde(net, [0.0], None, 125.0, dt=tau / 200, sigma=sigma, n_trials=4000, seed=11, record_every=2 * tau)
    samples = res.states[:, res.times >= 25.0, 0].ravel()
    assert samples.size >= 10_000
    assert np.var(samples) == pytest.approx(sigma ** 2 * tau / 2, rel=0.02)


def test_zero_noise_reproduces_dense_euler(gate_network):
    fp = gate_network.check_rest_state()
    f = inhibit_amacrine(0.5, 5.0, 20.0)
    sde = integrate_sde(gate_network, fp.state, f, 30.0, dt=0.01, sigma=0.0)
    euler = integrate_dense_euler(gate_network, fp.state, f, 30.0, dt=0.01)
    np.testing.assert_array_equal(sde.states[0, -1], euler.final_state)


def test_independent_cells_have_no_cross_covariance():
    net = make_network({}, 2, 0, 0, tau_b_ms=4.0, tau_a_ms=1.0, tau_g_ms=1.0, theta_b_mv=-1e6)
    res = integrate_sde(net, [0.0, 0.0], None, 100.0, dt=0.1, sigma=1.0, n_trials=500, seed=3, record_every=10.0)
    x = res.states[:, 2:, :].reshape(-1, 2)
    prod = (x[:, 0] - x[:, 0].mean()) * (x[:, 1] - x[:, 1].mean())
    assert abs(prod.mean()) < 3 * prod.std(ddof=1) / math.sqrt(len(prod))


def test_trials_are_reproducible_independently_of_batch():
    net = single_cell(5.0)
    a = integrate_sde(net, [0.0], None, 10.0, dt=0.1, sigma=1.0, n_trials=4, seed=5)
    b = integrate_sde(net, [0.0], None, 10.0, dt=0.1, sigma=1.0, n_trials=1, seed=5, first_trial=2)
    np.testing.assert_array_equal(a.states[2], b.states[0])


def test_too_coarse_sde_step_is_rejected():
    with pytest.raises(StepSizeError):
        integrate_sde(single_cell(2.0), [0.0], None, 10.0, dt=0.2, sigma=1.0)


# -- LNP spikes -------------------------------------------------------------


def _binomial_ok(raster: SpikeRaster, p: float) -> bool:
    n = raster.spikes.size
    return abs(raster.spikes.mean() - p) <= 4 * math.sqrt(p * (1 - p) / n)


def test_threshold_voltage_fires_half_the_bins():
    r = generate_lnp_spikes(np.full((20_000, 2), -1.0), -1.0, 0.5, 1.0, seed=1)
    assert _binomial_ok(r, 0.5)


def test_very_negative_voltage_never_fires():
    r = generate_lnp_spikes(np.full((1000, 3), -np.inf), 0.0, 1.0, 1.0)
    assert not r.spikes.any()


def test_one_sigma_above_threshold_fires_at_normal_cdf():
    r = generate_lnp_spikes(np.full((100_000, 1), 2.5), 2.0, 0.5, 1.0, seed=2)
    assert _binomial_ok(r, float(ndtr(1.0)))
    assert float(ndtr(1.0)) == pytest.approx(0.8413, abs=1e-4)


def test_counts_in_disjoint_windows_are_independent():
    r = generate_lnp_spikes(np.full((3000, 10, 1), 0.3), 0.0, 1.0, 1.0, seed=4)
    first = r.spikes[:, 0, :5].sum(axis=1)
    second = r.spikes[:, 0, 5:].sum(axis=1)
    table = np.zeros((6, 6))
    np.add.at(table, (first, second), 1)
    table = table[table.sum(axis=1) > 0][:, table.sum(axis=0) > 0]
    assert stats.chi2_contingency(table)[1] > 0.01


def test_trace_samples_are_held_over_sub_bins():
    v = np.array([[5.0], [-5.0]])
    r = generate_lnp_spikes(v, 0.0, 0.1, 0.5, trace_dt=1.0)
    assert r.n_bins == 4
    np.testing.assert_array_equal(r.spikes[0, 0], [1, 1, 0, 0])


def test_bins_must_subdivide_trace_step():
    with pytest.raises(ConfigurationError):
        generate_lnp_spikes(np.zeros((4, 1)), 0.0, 1.0, 0.3, trace_dt=1.0)


def test_raster_rejects_non_binary_entries():
    with pytest.raises(ValueError):
        SpikeRaster(np.full((1, 1, 2), 2), 1.0)
