"""Linear response of a spiking ring to a weak probe.

Ten integrate-and-fire neurons sit on a ring, exciting their nearest
neighbours and inhibiting the next ones. A weak white-noise current probes
the network; the trial-averaged change in one neuron's firing is
deconvolved into a causal response kernel, which then predicts the
response to a bar sweeping around the ring.

Run with ``python demos/ring_linear_response.py`` (about half a minute).
"""

import numpy as np

from retinasim.gif import (
    SpikeIndicator,
    delta_average,
    estimate_response_kernel,
    relative_prediction_error,
    ring_moving_bar,
    ring_network,
    simulate_gif,
    spontaneous_run,
    white_noise_probe,
)

net = ring_network(10, g_exc=0.006, g_inh=0.02, e_exc=4.0, e_inh=-2.0, sigma_b=0.35)
print(f"memory depth {net.memory_depth} bins of {net.bin_ms} ms")

spont = spontaneous_run(net, 20000, seed=3, n_trials=20)
print("spontaneous spike probability per bin:", np.round(spont.raster.spikes.mean(axis=(0, 2)), 4))

# probe every neuron with weak independent noise; watch neuron 0
probe = white_noise_probe(3000, 10, 0.1, seed=11)
runs = simulate_gif(net, probe, 3000, 200, seed=21)
obs = SpikeIndicator(0)
dmu = delta_average(obs, runs.raster, spont.raster)
est = estimate_response_kernel(dmu.delta_mu, probe, 20, se=dmu.se)
print(f"\nkernel fit: ridge {est.ridge:.3g}, relative residual {est.residual:.3f}")
print("peak response per neuron (spikes/bin per unit current):")
print("  ", np.round(est.kernel.max(axis=0), 4))

bar = ring_moving_bar(10, 2000, 0.1, speed=0.01, width=0.7, start=5.0, onset_bin=200)
held = simulate_gif(net, bar, 2000, 200, seed=31)
dmu_bar = delta_average(obs, held.raster, spont.raster)
err = relative_prediction_error(est, bar, dmu_bar.delta_mu)
print(f"\nheld-out moving bar: relative prediction error {err:.3f}")
