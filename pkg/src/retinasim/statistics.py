"""Drive and voltage correlations, LNP firing rates and pairwise spike statistics."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.special import ndtr

from .dynamics import SpikeRaster
from .errors import (
    AccuracyError,
    ConfigurationError,
    EstimationError,
    SpectralError,
    UnstableSpectrumError,
)
from .spectral import SpectralData
from .stimulus import BipolarKernel

# --------------------------------------------------------------------------
# input correlations
# --------------------------------------------------------------------------


def spatial_overlap(kernel_i: BipolarKernel, center_i, kernel_j: BipolarKernel, center_j,
                    step_mm: Optional[float] = None) -> float:
    """``int K_S_i(x - c_i) K_S_j(x - c_j) dx`` by the midpoint rule (gains included).

    Kernels whose truncation disks do not intersect give exactly 0.
    """
    si, sj = kernel_i.spatial, kernel_j.spatial
    ci, cj = np.asarray(center_i, float), np.asarray(center_j, float)
    if np.hypot(*(ci - cj)) >= si.radius_mm + sj.radius_mm:
        return 0.0
    if step_mm is None:
        step_mm = min(si.center_sigma_mm, si.surround_sigma_mm, sj.center_sigma_mm, sj.surround_sigma_mm) / 8.0
    lo = np.maximum(ci - si.radius_mm, cj - sj.radius_mm)
    hi = np.minimum(ci + si.radius_mm, cj + sj.radius_mm)
    nx, ny = (np.ceil((hi - lo) / step_mm).astype(int) + 1)
    xs = lo[0] + (np.arange(nx) + 0.5) * (hi[0] - lo[0]) / nx
    ys = lo[1] + (np.arange(ny) + 0.5) * (hi[1] - lo[1]) / ny
    X, Y = np.meshgrid(xs, ys, indexing="xy")
    area = (hi[0] - lo[0]) / nx * (hi[1] - lo[1]) / ny
    vi = si.evaluate(X - ci[0], Y - ci[1])
    vj = sj.evaluate(X - cj[0], Y - cj[1])
    return float(kernel_i.gain_mv * kernel_j.gain_mv * np.sum(vi * vj) * area)


def _temporal_filter(kernel: BipolarKernel, which: str, tau_b: Optional[float]) -> Callable:
    if which == "drive":
        return kernel.temporal.evaluate
    if which == "opl":
        if tau_b is None:
            raise ConfigurationError("OPL input correlations need tau_b")
        return lambda t: kernel.temporal.evaluate(t) / tau_b + kernel.temporal.derivative(t)
    raise ConfigurationError(f"unknown correlation target {which!r}")


def input_correlation(
    kernel_i: BipolarKernel,
    center_i,
    kernel_j: BipolarKernel,
    center_j,
    sigma_s: float,
    t: float,
    t2: float,
    *,
    which: str = "drive",
    tau_b: Sequence[Optional[float]] = (None, None),
    t_start: float = -math.inf,
    panel_ms: float = 0.25,
) -> float:
    """Covariance of two B cell inputs under white-noise stimulation of intensity ``sigma_s``.

    ``which="drive"`` gives ``E[V_i(t) V_j(t2)]``; ``which="opl"`` gives the
    covariance of ``F = V / tau_B + dV/dt``, whose filter is
    ``K_T / tau_B + K_T'``. The noise starts at ``t_start``. The spatial
    overlap uses the midpoint rule and the time integral Gauss-Legendre
    panels of width ``panel_ms``.
    """
    space = spatial_overlap(kernel_i, center_i, kernel_j, center_j)
    if space == 0.0:
        return 0.0
    fi = _temporal_filter(kernel_i, which, tau_b[0])
    fj = _temporal_filter(kernel_j, which, tau_b[1])
    support = max(kernel_i.temporal.support_ms, kernel_j.temporal.support_ms)
    upper = min(t, t2)
    lower = max(t_start, max(t, t2) - support)
    if upper <= lower:
        return 0.0
    n = int(math.ceil((upper - lower) / panel_ms))
    x, w = np.polynomial.legendre.leggauss(6)
    edges = np.linspace(lower, upper, n + 1)
    half = 0.5 * np.diff(edges)
    s = (0.5 * (edges[:-1] + edges[1:]))[:, None] + half[:, None] * x[None, :]
    ww = half[:, None] * w[None, :]
    val = float(np.sum(ww * fi(t - s) * fj(t2 - s)))
    return sigma_s ** 2 * space * val


def opl_correlation_matrix(
    n_state: int,
    kernels: Sequence[BipolarKernel],
    centers,
    tau_b,
    sigma_s: float,
    t: float,
    t2: float,
    **kw,
) -> np.ndarray:
    """Full state-space input covariance; only the B-cell block is nonzero."""
    nb = len(kernels)
    centers = np.asarray(centers, float)
    tau_b = np.broadcast_to(np.asarray(tau_b, float), (nb,))
    out = np.zeros((n_state, n_state))
    for i in range(nb):
        for j in range(nb):
            out[i, j] = input_correlation(
                kernels[i], centers[i], kernels[j], centers[j], sigma_s, t, t2,
                which="opl", tau_b=(tau_b[i], tau_b[j]), **kw,
            )
    return out


# --------------------------------------------------------------------------
# voltage correlations
# --------------------------------------------------------------------------


def _noise_matrix(dim: int, noise_cells) -> np.ndarray:
    if noise_cells is None:
        return np.eye(dim)
    mask = np.zeros(dim, bool)
    mask[np.asarray(noise_cells)] = True
    return np.diag(mask.astype(float))


class WhiteNoiseCorrelation:
    """Stationary covariance ``C(t, t2) = E[X(t) X(t2)^T]`` under white-noise input.

    The input is ``sigma * Q xi(t)`` with ``Q`` the diagonal mask of cells
    receiving noise (all cells by default). For ``t2 >= t``,
    ``C = -sigma^2 P M diag(exp(lam (t2 - t))) P^T`` with
    ``M_ab = (P^-1 Q P^-T)_ab / (lam_a + lam_b)``.
    """

    stationary = True

    def __init__(self, spectral: SpectralData, sigma: float, noise_cells=None,
                 *, marginal_tol: float = 1e-10, imag_tol: float = 1e-10):
        if not spectral.stable:
            raise UnstableSpectrumError("white-noise correlations need a stable operator")
        lam = spectral.eigenvalues
        denom = lam[:, None] + lam[None, :]
        if np.any(np.abs(denom) < marginal_tol):
            raise SpectralError("marginal modes: lam_a + lam_b vanishes, the stationary covariance diverges")
        Q = _noise_matrix(spectral.dim, noise_cells)
        self.spectral = spectral
        self.sigma = float(sigma)
        self.imag_tol = imag_tol
        self._m = (spectral.left @ Q @ spectral.left.T) / denom
        self.imag_residue = 0.0

    def __call__(self, t: float, t2: float) -> np.ndarray:
        lag = t2 - t
        if lag < 0:
            return self(t2, t).T
        sd = self.spectral
        c = -self.sigma ** 2 * (sd.right @ (self._m * np.exp(sd.eigenvalues * lag)[None, :]) @ sd.right.T)
        scale = max(float(np.max(np.abs(c))), 1e-300)
        residue = float(np.max(np.abs(c.imag))) / scale
        self.imag_residue = max(self.imag_residue, residue)
        if residue > self.imag_tol:
            raise AccuracyError(f"correlation has imaginary residue {residue:.3g}")
        c = c.real
        return 0.5 * (c + c.T) if lag == 0 else c

    def lagged(self, lag: float) -> np.ndarray:
        return self(0.0, lag)


def voltage_correlation(spectral: SpectralData, sigma: float, t: float, t2: float, noise_cells=None) -> np.ndarray:
    """White-noise voltage covariance matrix ``E[X(t) X(t2)^T]``."""
    return WhiteNoiseCorrelation(spectral, sigma, noise_cells)(t, t2)


def voltage_variance(spectral: SpectralData, sigma: float, cell: int, noise_cells=None) -> float:
    """Stationary variance of one cell under white-noise input."""
    return float(WhiteNoiseCorrelation(spectral, sigma, noise_cells)(0.0, 0.0)[cell, cell])


def symmetric_correlation(L, sigma: float, lag: float) -> np.ndarray:
    """``sigma^2 / 2 sum_b P_ib P_jb exp(-s_b lag) / s_b`` for symmetric ``L`` with eigenvalues ``-s_b``."""
    L = np.asarray(L, float)
    if not np.allclose(L, L.T, rtol=0, atol=1e-14 * max(1.0, np.abs(L).max())):
        raise ConfigurationError("symmetric formula needs a symmetric operator")
    lam, P = np.linalg.eigh(L)
    s = -lam
    if np.any(s <= 0):
        raise UnstableSpectrumError("symmetric formula needs negative eigenvalues")
    return 0.5 * sigma ** 2 * (P * (np.exp(-s * abs(lag)) / s)) @ P.T


def voltage_correlation_general(
    spectral: SpectralData,
    input_cov: Callable[[float, np.ndarray], np.ndarray],
    t: float,
    t2: float,
    *,
    t_start: float,
    rtol: float = 1e-6,
    tail: float = 1e-12,
    max_panels: int = 512,
) -> np.ndarray:
    """``int int e^{L(t-s)} C_F(s, s2) e^{L^T (t2-s2)} ds ds2`` over ``[t_start, t] x [t_start, t2]``.

    ``input_cov(s, s2_array)`` returns the input covariance for one ``s`` and
    an array of ``s2`` values, shape (len(s2), N, N). Integration windows
    start no earlier than where ``exp(max Re lam * age)`` drops below
    ``tail``. The inner integral is split at ``s2 = s``, where stationary
    input covariances typically have a kink. Gauss-Legendre panels are
    halved until the result changes by less than ``rtol`` relative.
    """
    if not spectral.stable:
        raise UnstableSpectrumError("correlations over the past need a stable operator")
    lam = spectral.eigenvalues
    horizon = math.log(1.0 / tail) / float(-lam.real.max())
    a = max(t_start, t - horizon)
    b = max(t_start, t2 - horizon)
    if t <= a or t2 <= b:
        return np.zeros((spectral.dim, spectral.dim))
    x, w = np.polynomial.legendre.leggauss(8)

    def nodes(lo, hi, width):
        if hi <= lo:
            return np.empty(0), np.empty(0)
        n = max(1, int(math.ceil((hi - lo) / width)))
        edges = np.linspace(lo, hi, n + 1)
        half = 0.5 * np.diff(edges)
        pts = ((0.5 * (edges[:-1] + edges[1:]))[:, None] + half[:, None] * x[None, :]).ravel()
        wts = (half[:, None] * w[None, :]).ravel()
        return pts, wts

    def propagators(lag):
        e = np.exp(np.multiply.outer(lag, lam))  # (n, N)
        return np.einsum("ik,nk,kj->nij", spectral.right, e, spectral.left).real

    width = 4.0 / float(np.abs(lam).max())
    prev = None
    while True:
        s1, w1 = nodes(a, t, width)
        A = propagators(t - s1)
        total = np.zeros((spectral.dim, spectral.dim))
        for i in range(len(s1)):
            cut = min(max(s1[i], b), t2)
            pl, wl = nodes(b, cut, width)
            pr, wr = nodes(cut, t2, width)
            s2 = np.concatenate([pl, pr])
            w2 = np.concatenate([wl, wr])
            cf = input_cov(s1[i], s2)  # (n2, N, N)
            inner = np.einsum("n,nij,nkj->ik", w2, cf, propagators(t2 - s2))
            total += w1[i] * A[i] @ inner
        if prev is not None:
            scale = max(float(np.max(np.abs(total))), 1e-300)
            if float(np.max(np.abs(total - prev))) <= rtol * scale:
                return total
        if (t - a) / width > max_panels:
            raise AccuracyError("nested correlation quadrature did not converge")
        prev, width = total, width / 2


# --------------------------------------------------------------------------
# rates and pairwise probabilities
# --------------------------------------------------------------------------


def firing_rate(mean, theta_g: float, sigma_g: float, sigma_v=0.0) -> np.ndarray:
    """``Phi((m - theta_G) / sqrt(sigma_G^2 + sigma_v^2))``; voltage and spiking noise add in variance."""
    if not sigma_g > 0:
        raise ConfigurationError("sigma_G must be positive")
    return ndtr((np.asarray(mean, float) - theta_g) / np.sqrt(sigma_g ** 2 + np.asarray(sigma_v, float) ** 2))


@dataclass(frozen=True)
class PairwiseGaussian:
    """Covariance ``[[var_1, cov], [cov, var_2]]`` of two voltages and its eigenstructure.

    ``mu_1 >= mu_2`` are the eigenvalues and ``phi`` the rotation angle with
    ``Sigma = R(phi) diag(mu_1, mu_2) R(phi)^T``.
    """

    var_1: float
    var_2: float
    cov: float

    def __post_init__(self):
        if self.mu_2 < -1e-12 * max(1.0, abs(self.mu_1)):
            raise ConfigurationError(
                f"pair covariance is indefinite (eigenvalues {self.mu_1:.4g}, {self.mu_2:.4g})"
            )

    @property
    def _radius(self) -> float:
        return math.hypot(0.5 * (self.var_1 - self.var_2), self.cov)

    @property
    def mu_1(self) -> float:
        return 0.5 * (self.var_1 + self.var_2) + self._radius

    @property
    def mu_2(self) -> float:
        return 0.5 * (self.var_1 + self.var_2) - self._radius

    @property
    def phi(self) -> float:
        return 0.5 * math.atan2(2 * self.cov, self.var_1 - self.var_2)

    @property
    def rotation(self) -> np.ndarray:
        c, s = math.cos(self.phi), math.sin(self.phi)
        return np.array([[c, -s], [s, c]])

    @property
    def matrix(self) -> np.ndarray:
        return np.array([[self.var_1, self.cov], [self.cov, self.var_2]])

    @property
    def correlation(self) -> float:
        d = math.sqrt(self.var_1 * self.var_2)
        return self.cov / d if d > 0 else 0.0

    def swapped(self) -> "PairwiseGaussian":
        return PairwiseGaussian(self.var_2, self.var_1, self.cov)


def pairwise_spike_probability(
    pair: PairwiseGaussian,
    m1: float,
    m2: float,
    theta_g: float,
    sigma_g: float,
    *,
    order: int = 64,
    method: str = "quadrature",
    n_samples: int = 1_000_000,
    seed: int = 0,
) -> float:
    """Probability that both cells spike in the same bin.

    ``E[Phi((V_1 - theta)/sigma_G) Phi((V_2 - theta)/sigma_G)]`` with
    ``(V_1, V_2)`` Gaussian around ``(m1, m2)``. The expectation is taken in
    the rotated frame where the covariance is diagonal, by tensor
    Gauss-Hermite quadrature or by Monte Carlo.
    """
    if not sigma_g > 0:
        raise ConfigurationError("sigma_G must be positive")
    R = pair.rotation
    scale = np.sqrt(np.maximum([pair.mu_1, pair.mu_2], 0.0))
    if method == "quadrature":
        x, w = np.polynomial.hermite.hermgauss(order)
        z1, z2 = np.meshgrid(math.sqrt(2) * x, math.sqrt(2) * x, indexing="ij")
        ww = np.outer(w, w) / math.pi
    elif method == "montecarlo":
        rng = np.random.default_rng(seed)
        z = rng.standard_normal((2, n_samples))
        z1, z2 = z
        ww = np.full(n_samples, 1.0 / n_samples)
    else:
        raise ConfigurationError(f"unknown method {method!r}")
    u1, u2 = scale[0] * z1, scale[1] * z2
    v1 = m1 + R[0, 0] * u1 + R[0, 1] * u2
    v2 = m2 + R[1, 0] * u1 + R[1, 1] * u2
    return float(np.sum(ww * ndtr((v1 - theta_g) / sigma_g) * ndtr((v2 - theta_g) / sigma_g)))


def spike_correlation_coefficient(pair: PairwiseGaussian, m1: float, m2: float, theta_g: float,
                                  sigma_g: float, **kw) -> float:
    """Pearson correlation of the two Bernoulli spike variables."""
    n12 = pairwise_spike_probability(pair, m1, m2, theta_g, sigma_g, **kw)
    n1 = float(firing_rate(m1, theta_g, sigma_g, math.sqrt(pair.var_1)))
    n2 = float(firing_rate(m2, theta_g, sigma_g, math.sqrt(pair.var_2)))
    d = math.sqrt(n1 * (1 - n1) * n2 * (1 - n2))
    return (n12 - n1 * n2) / d if d > 0 else 0.0


# --------------------------------------------------------------------------
# empirical spike statistics
# --------------------------------------------------------------------------


@dataclass
class SpikeStatistics:
    """Trial-averaged estimates with jackknife standard errors.

    ``joint[l, i, j]`` estimates ``P(w_i(n) = 1, w_j(n + l) = 1)`` and
    ``covariance`` subtracts the product of rates.
    """

    rates: np.ndarray
    rates_se: np.ndarray
    lags: np.ndarray
    joint: np.ndarray
    joint_se: np.ndarray
    covariance: np.ndarray
    covariance_se: np.ndarray
    n_trials: int
    metadata: dict = field(default_factory=dict)


def _jackknife(per_trial: np.ndarray, stat: Callable[[np.ndarray], np.ndarray]):
    """Leave-one-trial-out jackknife of ``stat`` applied to trial means."""
    n = per_trial.shape[0]
    total = per_trial.sum(axis=0)
    full = stat(total / n)
    loo = np.stack([stat((total - per_trial[k]) / (n - 1)) for k in range(n)])
    se = np.sqrt((n - 1) / n * np.sum((loo - loo.mean(axis=0)) ** 2, axis=0))
    return full, se


def empirical_spike_statistics(raster: SpikeRaster, max_lag: int = 0) -> SpikeStatistics:
    """Rates and lagged pairwise statistics of a raster set (trials are the resampling unit)."""
    s = raster.spikes.astype(float)
    n_trials, n_neurons, n_bins = s.shape
    if n_trials == 0 or n_bins == 0 or n_neurons == 0:
        raise EstimationError("empty raster")
    if n_trials < 2:
        raise EstimationError("standard errors need at least two trials")
    if max_lag >= n_bins:
        raise EstimationError("lag exceeds the number of bins")
    lags = np.arange(max_lag + 1)
    rate_trials = s.mean(axis=2)  # (trials, N)
    joint_trials = np.stack(
        [np.einsum("tin,tjn->tij", s[:, :, : n_bins - l], s[:, :, l:]) / (n_bins - l) for l in lags], axis=1
    )  # (trials, lags, N, N)
    rates, rates_se = _jackknife(rate_trials, lambda r: r)
    joint, joint_se = _jackknife(joint_trials, lambda j: j)
    packed = np.concatenate([rate_trials, joint_trials.reshape(n_trials, -1)], axis=1)

    def cov(v):
        r = v[:n_neurons]
        j = v[n_neurons:].reshape(len(lags), n_neurons, n_neurons)
        return (j - r[None, :, None] * r[None, None, :]).ravel()

    c, c_se = _jackknife(packed, cov)
    shape = (len(lags), n_neurons, n_neurons)
    return SpikeStatistics(rates, rates_se, lags, joint, joint_se, c.reshape(shape), c_se.reshape(shape), n_trials)
