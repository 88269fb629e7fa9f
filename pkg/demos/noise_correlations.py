"""Voltage and spike correlations induced by a shared amacrine cell.

Independent white noise enters each bipolar cell. Because two ganglion cells read
the same bipolar and amacrine population their voltages become correlated.
The closed-form stationary covariance is compared with an Euler-Maruyama
ensemble, then voltages are turned into Bernoulli spikes and the pairwise
spike statistics are estimated.

Run with ``python demos/noise_correlations.py``.
"""

import numpy as np

from retinasim.core import CellParameters, ConnectivityWeights, RetinaNetwork, assemble_transport, fixed_point
from retinasim.dynamics import integrate_sde, generate_lnp_spikes
from retinasim.spectral import eigendecompose
from retinasim.statistics import WhiteNoiseCorrelation, empirical_spike_statistics, firing_rate

net = RetinaNetwork(
    ConnectivityWeights.from_blocks(
        2, 1, 2,
        a_to_b=[[-0.02], [-0.02]], b_to_a=[[0.05, 0.05]], b_to_g=[[0.8, 0.2], [0.2, 0.8]], a_to_g=[[-0.3], [-0.3]],
    ),
    CellParameters(tau_b_ms=[10.0, 12.0], tau_a_ms=15.0, tau_g_ms=[8.0, 11.0], theta_b_mv=-10.0, theta_a_mv=-10.0,
                   theta_g_mv=4.0, sigma_g_mv=1.0),
)
op = assemble_transport(net, net.rest_label())
rest = fixed_point(op).state
g1, g2 = net.n_b + net.n_a, net.n_b + net.n_a + 1
sigma = 0.4
noisy = np.zeros(net.state_dim, bool)
noisy[: net.n_b] = True  # both calls must agree on where noise enters

corr = WhiteNoiseCorrelation(eigendecompose(op), sigma, noisy)
c0 = corr(0.0, 0.0)
rho = c0[g1, g2] / np.sqrt(c0[g1, g1] * c0[g2, g2])
print(f"closed form: var(G1) = {c0[g1, g1]:.4f} mV^2, corr(G1, G2) = {rho:.3f}")

sde = integrate_sde(net, rest, None, 2000.0, dt=0.05, sigma=sigma, noise_cells=noisy, n_trials=40, seed=1, record_every=1.0)
v = sde.states[:, 200:, :]  # drop the first 200 ms
emp = np.cov(v[:, :, [g1, g2]].reshape(-1, 2).T)
print(f"simulated:   var(G1) = {emp[0, 0]:.4f} mV^2, corr(G1, G2) = {emp[0, 1] / np.sqrt(emp[0, 0] * emp[1, 1]):.3f}")

raster = generate_lnp_spikes(v[:, :, [g1, g2]], net.params.theta_g_mv, net.params.sigma_g_mv, 1.0, seed=2)
stats = empirical_spike_statistics(raster, max_lag=3)
expected = firing_rate(rest[[g1, g2]], net.params.theta_g_mv, net.params.sigma_g_mv, np.sqrt(np.diag(emp)))
print("\nspike probability per 1 ms bin:", np.round(stats.rates, 4), "+/-", np.round(stats.rates_se, 4))
print("Gaussian prediction:          ", np.round(expected, 4))
for lag in range(4):
    print(f"  lag {lag} ms: cov(w1, w2) = {stats.covariance[lag, 0, 1]:+.2e} +/- {stats.covariance_se[lag, 0, 1]:.1e}")
