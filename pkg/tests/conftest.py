import numpy as np
import pytest

from retinasim.core import CellParameters, ConnectivityWeights, RetinaNetwork
from retinasim.stimulus import BiphasicTemporalKernel, BipolarKernel, DoGKernel


def make_network(blocks, n_b, n_a, n_g, **params) -> RetinaNetwork:
    return RetinaNetwork(ConnectivityWeights.from_blocks(n_b, n_a, n_g, **blocks), CellParameters(**params))


@pytest.fixture
def pair_network():
    """One B and one A cell, unit time constants, spectrum -1 +/- i."""
    return make_network({"a_to_b": [[-1.0]], "b_to_a": [[1.0]]}, 1, 1, 0, tau_b_ms=1.0, tau_a_ms=1.0, tau_g_ms=1.0)


@pytest.fixture
def linear_network():
    """Two B, one A and one G cell whose rest state sits well inside the non-rectified domain."""
    return make_network(
        {"a_to_b": [[-0.08], [-0.06]], "b_to_a": [[0.05, 0.04]], "b_to_g": [[0.5, 0.5]], "a_to_g": [[-0.4]]},
        2, 1, 1, tau_b_ms=[8.0, 10.0], tau_a_ms=12.0, tau_g_ms=15.0, theta_b_mv=-3.0, theta_a_mv=-3.0,
    )


@pytest.fixture
def triad_network():
    """One cell per layer with thresholds close enough to rest for modest drives to rectify."""
    return make_network(
        {"a_to_b": [[-0.8]], "b_to_a": [[0.6]], "b_to_g": [[1.0]], "a_to_g": [[-0.5]]},
        1, 1, 1, tau_b_ms=5.0, tau_a_ms=8.0, tau_g_ms=10.0, theta_b_mv=-1.0, theta_a_mv=0.0,
    )


def make_kernel(gain=1.0, center_sigma=0.05, surround_amp=0.0, surround_sigma=0.15, tau1=5.0, amp2=0.5, tau2=15.0):
    return BipolarKernel(
        DoGKernel(1.0, center_sigma, surround_amp, surround_sigma),
        BiphasicTemporalKernel(1.0, tau1, amp2, tau2, 3),
        gain,
    )


@pytest.fixture
def kernel():
    return make_kernel()


def rel_l2(a, b) -> float:
    a, b = np.asarray(a), np.asarray(b)
    return float(np.linalg.norm(a - b) / np.linalg.norm(b))
