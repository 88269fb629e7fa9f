"""Generalized integrate-and-fire network and empirical linear response.

Time is discretised in bins of width ``bin_ms``. Spikes emitted in bin
``n`` act on conductances from bin ``n + 1`` on, through alpha kernels
``a(t) = (t / tau)**degree * exp(-t / tau)`` cut after ``D`` bins.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .dynamics import SpikeRaster
from .errors import (
    AccuracyError,
    ConfigurationError,
    EstimationError,
    ExcitationError,
)


def alpha_kernel(lags, tau_ms: float, degree: int, bin_ms: float) -> np.ndarray:
    """Alpha kernel at integer lags (in bins)."""
    u = np.asarray(lags, float) * bin_ms / tau_ms
    out = np.exp(-u) * (u ** degree if degree else 1.0)
    return np.where(np.asarray(lags) >= 0, out, 0.0)


def memory_depth(tau_ms: float, degree: int, bin_ms: float, eps_mem: float, max_depth: int = 1_000_000) -> int:
    """Smallest ``D`` whose discarded tail (lags > D) is below ``eps_mem`` of the kernel's mass."""
    r = math.exp(-bin_ms / tau_ms)
    if degree == 0:
        # tail sum_{l > D} r^l = r^{D+1} / (1 - r), total sum_{l >= 1} = r / (1 - r)
        return max(1, int(math.ceil(math.log(eps_mem) / math.log(r))))
    lags = np.arange(1, max_depth + 1)
    chunk = alpha_kernel(lags[: min(max_depth, int(50 * tau_ms / bin_ms) + 10)], tau_ms, degree, bin_ms)
    total = chunk.sum()
    tail = total - np.cumsum(chunk)
    idx = np.flatnonzero(tail <= eps_mem * total)
    if idx.size == 0:
        raise ConfigurationError("alpha kernel memory exceeds max_depth")
    return int(idx[0] + 1)


def _full(value, shape, name):
    arr = np.asarray(value, float)
    try:
        return np.broadcast_to(arr, shape).copy()
    except ValueError:
        raise ConfigurationError(f"{name}: cannot broadcast shape {arr.shape} to {shape}") from None


@dataclass(frozen=True, eq=False)
class GifNetwork:
    """Neuron and synapse tables of a gIF network.

    ``conductance[k, j]`` (``G_kj >= 0``), ``reversal[k, j]`` and
    ``tau_syn_ms[k, j]`` describe the synapse from ``j`` onto ``k``.
    The effective weight is ``W_kj = G_kj * E_kj``.
    """

    capacitance: np.ndarray
    g_leak: np.ndarray
    e_leak: np.ndarray
    threshold: np.ndarray
    reset: np.ndarray
    conductance: np.ndarray
    reversal: np.ndarray
    tau_syn_ms: np.ndarray
    degree: int = 0
    sigma_b: float = 0.0
    bin_ms: float = 1.0
    eps_mem: float = 1e-6

    @classmethod
    def build(cls, n: int, *, capacitance=1.0, g_leak=0.1, e_leak=0.0, threshold=1.0, reset=0.0,
              conductance=0.0, reversal=0.0, tau_syn_ms=10.0, **kw) -> "GifNetwork":
        """Broadcast scalar or per-neuron / per-synapse values to full tables."""
        return cls(
            capacitance=_full(capacitance, (n,), "capacitance"),
            g_leak=_full(g_leak, (n,), "g_leak"),
            e_leak=_full(e_leak, (n,), "e_leak"),
            threshold=_full(threshold, (n,), "threshold"),
            reset=_full(reset, (n,), "reset"),
            conductance=_full(conductance, (n, n), "conductance"),
            reversal=_full(reversal, (n, n), "reversal"),
            tau_syn_ms=_full(tau_syn_ms, (n, n), "tau_syn_ms"),
            **kw,
        )

    def __post_init__(self):
        problems = []
        n = len(self.capacitance)
        for name in ("g_leak", "e_leak", "threshold", "reset"):
            if np.shape(getattr(self, name)) != (n,):
                problems.append(f"{name}: expected {n} values")
        for name in ("conductance", "reversal", "tau_syn_ms"):
            if np.shape(getattr(self, name)) != (n, n):
                problems.append(f"{name}: expected an {n}x{n} table")
        if problems:
            raise ConfigurationError("; ".join(problems))
        if np.any(self.capacitance <= 0) or np.any(self.g_leak <= 0):
            problems.append("capacitance and g_leak must be positive")
        bad = np.argwhere(self.conductance < 0)
        problems += [f"conductance[{k + 1}, {j + 1}] < 0" for k, j in bad]
        if np.any(self.tau_syn_ms <= 0):
            problems.append("synaptic time constants must be positive")
        if self.degree not in (0, 1):
            problems.append("alpha kernel degree must be 0 or 1")
        if not self.bin_ms > 0 or not 0 < self.eps_mem < 1 or self.sigma_b < 0:
            problems.append("bin_ms > 0, 0 < eps_mem < 1 and sigma_b >= 0 required")
        active = self.conductance > 0
        if active.any() and self.bin_ms > self.tau_syn_ms[active].min() / 10.0:
            problems.append(
                f"bin width {self.bin_ms} ms exceeds min(tau_syn)/10 = {self.tau_syn_ms[active].min() / 10.0} ms"
            )
        if problems:
            raise ConfigurationError("; ".join(problems))
        for name in ("capacitance", "g_leak", "e_leak", "threshold", "reset", "conductance", "reversal", "tau_syn_ms"):
            getattr(self, name).setflags(write=False)

    @property
    def n(self) -> int:
        return len(self.capacitance)

    @property
    def weights(self) -> np.ndarray:
        return self.conductance * self.reversal

    @property
    def memory_depth(self) -> int:
        active = self.conductance > 0
        taus = np.unique(self.tau_syn_ms[active]) if active.any() else np.unique(self.tau_syn_ms)
        return max(memory_depth(t, self.degree, self.bin_ms, self.eps_mem) for t in taus)

    @property
    def slowest_time_ms(self) -> float:
        return float(max(np.max(self.capacitance / self.g_leak), np.max(self.tau_syn_ms)))

    def with_depth_factor(self, factor: float) -> "GifNetwork":
        """Same network with memory tolerance tightened until ``D`` grows by at least ``factor``."""
        target = math.ceil(factor * self.memory_depth)
        eps = self.eps_mem ** factor  # exact doubling rule for a pure exponential
        while True:
            net = GifNetwork(**{**self.__dict__, "eps_mem": eps})
            if net.memory_depth >= target or eps < 1e-300:
                return net
            eps *= 0.5


def alpha_trace(history, tau_ms: float, degree: int, bin_ms: float, depth: int, *, complete: bool = False) -> np.ndarray:
    """``sum_{n <= t} a(t - n) w(n)`` over the last ``depth + 1`` bins of ``history``.

    ``history`` has time on its last axis, the final entry being bin ``t``.
    A window shorter than ``depth + 1`` raises unless ``complete`` declares
    that no spikes precede it.
    """
    h = np.asarray(history, float)
    if h.shape[-1] < depth + 1 and not complete:
        raise ConfigurationError(f"history window of {h.shape[-1]} bins is shorter than the memory depth {depth} + 1")
    window = h[..., -(depth + 1):]
    lags = np.arange(window.shape[-1])[::-1]
    return np.sum(window * alpha_kernel(lags, tau_ms, degree, bin_ms), axis=-1)


@dataclass
class GifResult:
    raster: SpikeRaster
    voltages: Optional[np.ndarray] = None  # (trials, bins, neurons), sampled at bin ends before reset
    metadata: dict = field(default_factory=dict)


def _stimulus_array(stimulus, n_bins, n):
    if stimulus is None:
        return None
    s = np.asarray(stimulus, float)
    if s.shape != (n_bins, n):
        raise ConfigurationError(f"stimulus must have shape (bins, neurons) = {(n_bins, n)}, got {s.shape}")
    return s


def simulate_gif(
    net: GifNetwork,
    stimulus=None,
    n_bins: int = 1000,
    n_trials: int = 1,
    seed: int = 0,
    *,
    first_trial: int = 0,
    v0=None,
    burn_in_bins: int = 0,
    record_voltage: bool = False,
    chunk_bins: int = 1024,
) -> GifResult:
    """Simulate ``n_trials`` independent trials.

    Within each bin the conductance and current are frozen; the voltage is
    advanced by the exact solution of the resulting linear SDE. A neuron whose
    voltage ends the bin at or above threshold spikes and is reset.
    ``stimulus`` is an array (bins, neurons) of injected current, identical
    in every trial. Trial ``r`` uses the noise stream seeded with
    ``[seed, r]``; ``burn_in_bins`` stimulus-free bins run first and are
    discarded.
    """
    n = net.n
    stim = _stimulus_array(stimulus, n_bins, n)
    depth = net.memory_depth
    d = net.bin_ms
    active = net.conductance > 0
    groups = []
    for tau in np.unique(net.tau_syn_ms[active]):
        mask = active & (net.tau_syn_ms == tau)
        groups.append((float(tau), np.where(mask, net.conductance, 0.0).T, np.where(mask, net.weights, 0.0).T))
    v = np.tile(net.e_leak if v0 is None else np.asarray(v0, float), (n_trials, 1))
    s0 = [np.zeros((n_trials, n)) for _ in groups]
    s1 = [np.zeros((n_trials, n)) for _ in groups]
    ring = np.zeros((depth + 1, n_trials, n))
    rngs = [np.random.default_rng([seed, first_trial + r]) for r in range(n_trials)]
    total = burn_in_bins + n_bins
    spikes = np.zeros((n_trials, n, n_bins), np.uint8)
    volts = np.zeros((n_trials, n_bins, n)) if record_voltage else None
    gl_el = net.g_leak * net.e_leak
    noisy = net.sigma_b > 0
    for start in range(0, total, chunk_bins):
        m = min(chunk_bins, total - start)
        if noisy:
            xi = np.stack([g.standard_normal((m, n)) for g in rngs], axis=1)
        for i in range(m):
            t = start + i
            g_tot = np.broadcast_to(net.g_leak, (n_trials, n)).copy()
            cur = np.broadcast_to(gl_el, (n_trials, n)).copy()
            for gi, (tau, gmat, wmat) in enumerate(groups):
                alpha = s0[gi] if net.degree == 0 else (d / tau) * s1[gi]
                g_tot += alpha @ gmat
                cur += alpha @ wmat
            if stim is not None and t >= burn_in_bins:
                cur += stim[t - burn_in_bins]
            if not np.all(g_tot > 0) or not np.all(np.isfinite(cur)):
                raise AccuracyError(f"conductance blow-up or non-finite current at bin {t}")
            a = g_tot / net.capacitance
            decay = np.exp(-a * d)
            v_inf = cur / g_tot
            v = v_inf + (v - v_inf) * decay
            if noisy:
                v = v + (net.sigma_b / net.capacitance) * np.sqrt((1.0 - decay ** 2) / (2.0 * a)) * xi[i]
            if not np.all(np.isfinite(v)):
                raise AccuracyError(f"non-finite voltage at bin {t}")
            fired = v >= net.threshold
            if t >= burn_in_bins:
                k = t - burn_in_bins
                spikes[:, :, k] = fired
                if volts is not None:
                    volts[:, k] = v
            v = np.where(fired, net.reset, v)
            w_now = fired.astype(float)
            w_old = ring[t % (depth + 1)]  # spikes of bin t - depth
            for gi, (tau, _, _) in enumerate(groups):
                r = math.exp(-d / tau)
                rd = r ** depth
                if net.degree == 1:
                    s1[gi] = r * (s1[gi] - depth * rd * w_old) + r * (s0[gi] - rd * w_old + w_now)
                s0[gi] = r * (s0[gi] + w_now) - r * rd * w_old
            ring[t % (depth + 1)] = w_now
    meta = {"bin_ms": d, "memory_depth": depth, "seed": seed, "trials": n_trials, "burn_in_bins": burn_in_bins}
    return GifResult(SpikeRaster(spikes, d), volts, meta)


def spontaneous_run(net: GifNetwork, n_bins: int, seed: int, *, n_trials: int = 1,
                    burn_in_ms: Optional[float] = None, first_trial: int = 0) -> GifResult:
    """Stationary stimulus-free activity after a burn-in (default 10 x the slowest time constant).

    Several independent trials are simulated side by side; they are cheaper
    than one long trial of the same total length.
    """
    burn = 10.0 * net.slowest_time_ms if burn_in_ms is None else burn_in_ms
    return simulate_gif(net, None, n_bins, n_trials, seed, first_trial=first_trial,
                        burn_in_bins=int(math.ceil(burn / net.bin_ms)))


# --------------------------------------------------------------------------
# observables and linear response
# --------------------------------------------------------------------------


class Observable:
    """Causal function of the raster; ``values`` returns (trials, bins), NaN where undefined."""

    def values(self, raster: SpikeRaster) -> np.ndarray:
        raise NotImplementedError


@dataclass(frozen=True)
class SpikeIndicator(Observable):
    neuron: int

    def values(self, raster):
        return raster.spikes[:, self.neuron, :].astype(float)


@dataclass(frozen=True)
class PairProduct(Observable):
    """``(w_k(t) - m_k) (w_j(t - lag) - m_j)`` with ``m`` the spontaneous rates."""

    k: int
    j: int
    lag: int
    mean_k: float
    mean_j: float

    def values(self, raster):
        s = raster.spikes.astype(float)
        out = np.full((s.shape[0], s.shape[2]), np.nan)
        a = s[:, self.k, self.lag:] - self.mean_k
        b = s[:, self.j, : s.shape[2] - self.lag] - self.mean_j
        out[:, self.lag:] = a * b
        return out


@dataclass
class DeltaAverage:
    """``delta_mu(t) = <f>(t) - <f>_sp`` with its standard error."""

    delta_mu: np.ndarray
    se: np.ndarray
    n_trials: int
    spontaneous_mean: float
    spontaneous_se: float


def _batch_se(x: np.ndarray, n_batches: int) -> float:
    x = x[np.isfinite(x)]
    if len(x) < 2 * n_batches:
        raise EstimationError("spontaneous run too short for batch-means error bars")
    batches = np.array_split(x, n_batches)
    means = np.array([b.mean() for b in batches])
    return float(means.std(ddof=1) / math.sqrt(n_batches))


def delta_average(
    observable: Observable,
    stimulated: SpikeRaster,
    spontaneous: SpikeRaster,
    *,
    n_batches: int = 20,
    max_spontaneous_se_fraction: float = 0.5,
) -> DeltaAverage:
    """Per-bin deviation of the trial-averaged observable from its spontaneous mean.

    The standard error combines the across-trial error of the stimulated
    mean with the batch-means error of the spontaneous mean. The
    spontaneous error must stay below ``max_spontaneous_se_fraction`` of the
    typical per-bin error, otherwise the spontaneous run is too short.
    """
    vals = observable.values(stimulated)
    n = vals.shape[0]
    if n < 2:
        raise EstimationError("delta average needs at least two stimulated trials")
    defined = np.all(np.isfinite(vals), axis=0)
    mean = np.full(vals.shape[1], np.nan)
    se_t = np.full(vals.shape[1], np.nan)
    mean[defined] = vals[:, defined].mean(axis=0)
    se_t[defined] = vals[:, defined].std(axis=0, ddof=1) / math.sqrt(n)
    sp = observable.values(spontaneous).ravel()
    sp_mean = float(np.nanmean(sp))
    sp_se = _batch_se(sp, n_batches)
    positive = se_t[defined & (se_t > 0)]
    typical = float(np.median(positive)) if positive.size else 0.0
    if typical > 0 and sp_se > max_spontaneous_se_fraction * typical:
        raise EstimationError(
            f"spontaneous mean error {sp_se:.3g} exceeds {max_spontaneous_se_fraction} x the per-bin error "
            f"{typical:.3g}; use a longer spontaneous run"
        )
    return DeltaAverage(mean - sp_mean, np.sqrt(se_t ** 2 + sp_se ** 2), n, sp_mean, sp_se)


@dataclass
class LinearResponseEstimate:
    """Causal kernel ``K[lag, channel]`` with ``delta_mu(t) ~ sum K[l, c] S[t - l, c]``."""

    lags: np.ndarray
    kernel: np.ndarray
    kernel_se: Optional[np.ndarray]
    ridge: float
    residual: float
    condition: float
    metadata: dict = field(default_factory=dict)

    def predict(self, stimulus) -> np.ndarray:
        return _design(np.asarray(stimulus, float), len(self.lags)) @ self.kernel.ravel()


def _design(stimulus: np.ndarray, n_lags: int) -> np.ndarray:
    s = stimulus.reshape(len(stimulus), -1)
    T, M = s.shape
    X = np.zeros((T, n_lags, M))
    for lag in range(n_lags):
        X[lag:, lag, :] = s[: T - lag]
    return X.reshape(T, n_lags * M)


def estimate_response_kernel(
    delta_mu,
    stimulus,
    n_lags: int,
    *,
    ridge: Optional[float] = None,
    se=None,
    max_condition: float = 1e10,
    ridge_grid: Optional[Sequence[float]] = None,
) -> LinearResponseEstimate:
    """Ridge-regularised causal deconvolution ``delta_mu = K * S``.

    ``stimulus`` is (bins,) or (bins, channels). Only lags ``0 .. n_lags - 1``
    enter, so the kernel is zero at negative lags by construction. With
    ``ridge=None`` the penalty is chosen by generalized cross-validation.
    A Gram matrix with condition number above ``max_condition`` means the
    probe does not excite every lag and channel.
    """
    y = np.asarray(delta_mu, float)
    s = np.asarray(stimulus, float)
    X = _design(s, n_lags)
    ok = np.isfinite(y)
    X, yy = X[ok], y[ok]
    if len(yy) <= X.shape[1]:
        raise EstimationError("fewer valid bins than kernel coefficients")
    U, sv, Vt = np.linalg.svd(X, full_matrices=False)
    cond = float((sv[0] / sv[-1]) ** 2) if sv[-1] > 0 else math.inf
    if cond > max_condition:
        raise ExcitationError(
            f"design Gram matrix condition number {cond:.3g} exceeds {max_condition:.3g}; "
            "use a probe stimulus with richer temporal and spatial content"
        )
    uty = U.T @ yy
    n = len(yy)

    def fit(lam):
        f = sv / (sv ** 2 + lam)
        coef = Vt.T @ (f * uty)
        rss = float(np.sum((yy - X @ coef) ** 2))
        dof = float(np.sum(sv ** 2 / (sv ** 2 + lam)))
        return coef, rss, dof

    if ridge is None:
        grid = ridge_grid if ridge_grid is not None else sv[0] ** 2 * np.logspace(-12, 0, 49)
        scores = []
        for lam in grid:
            _, rss, dof = fit(lam)
            scores.append(n * rss / max(n - dof, 1e-12) ** 2)
        ridge = float(grid[int(np.argmin(scores))])
    coef, rss, _ = fit(ridge)
    kse = None
    if se is not None:
        sig = np.asarray(se, float)[ok]
        A = Vt.T @ ((sv / (sv ** 2 + ridge))[:, None] * U.T)  # coef = A y
        kse = np.sqrt(np.einsum("pt,t,pt->p", A, sig ** 2, A)).reshape(n_lags, -1)
    resid = math.sqrt(rss) / max(float(np.linalg.norm(yy)), 1e-300)
    M = X.shape[1] // n_lags
    return LinearResponseEstimate(np.arange(n_lags), coef.reshape(n_lags, M), kse, float(ridge), resid, cond)


def relative_prediction_error(estimate: LinearResponseEstimate, stimulus, observed) -> float:
    """``||predicted - observed|| / ||observed||`` over finite bins."""
    pred = estimate.predict(stimulus)
    obs = np.asarray(observed, float)
    ok = np.isfinite(obs)
    return float(np.linalg.norm(pred[ok] - obs[ok]) / max(np.linalg.norm(obs[ok]), 1e-300))


# --------------------------------------------------------------------------
# ring network and its stimuli
# --------------------------------------------------------------------------


def ring_network(
    n: int,
    *,
    g_exc: float,
    g_inh: float,
    e_exc: float,
    e_inh: float,
    tau_syn_ms: float = 10.0,
    **kw,
) -> GifNetwork:
    """Ring where each neuron excites its two nearest neighbours and inhibits the next two."""
    G = np.zeros((n, n))
    E = np.zeros((n, n))
    for k in range(n):
        for off, g, e in ((1, g_exc, e_exc), (2, g_inh, e_inh)):
            for j in ((k + off) % n, (k - off) % n):
                G[k, j], E[k, j] = g, e
    return GifNetwork.build(n, conductance=G, reversal=E, tau_syn_ms=tau_syn_ms, **kw)


def ring_moving_bar(n: int, n_bins: int, amplitude: float, *, speed: float, width: float,
                    start: float = 0.0, onset_bin: int = 0) -> np.ndarray:
    """Current injected by a bar sweeping around the ring, ``a * exp(-d^2 / 2 w^2)``.

    ``speed`` is in neurons per bin and ``d`` the circular distance to the
    bar centre. The bar is off before ``onset_bin``.
    """
    t = np.arange(n_bins)[:, None]
    pos = start + speed * (t - onset_bin)
    d = (np.arange(n)[None, :] - pos + n / 2) % n - n / 2
    out = amplitude * np.exp(-0.5 * (d / width) ** 2)
    out[: onset_bin] = 0.0
    return out


@dataclass
class RateProfile:
    offsets: np.ndarray
    rate: np.ndarray
    se: np.ndarray


def comoving_rate_profile(raster: SpikeRaster, centre, max_offset: int, *, start_bin: int = 0) -> RateProfile:
    """Firing probability per bin against ring distance from a moving centre.

    ``centre[t]`` is the stimulus position (in neuron units) at bin ``t``.
    Offsets are rounded circular distances ``k - centre``. Standard errors
    come from the spread of per-trial means.
    """
    s = raster.spikes[:, :, start_bin:].astype(float)
    n = s.shape[1]
    c = np.asarray(centre, float)[start_bin:]
    off = np.rint((np.arange(n)[None, :] - c[:, None] + n / 2) % n - n / 2).astype(int)  # (bins, n)
    offsets = np.arange(-max_offset, max_offset + 1)
    rate = np.empty(len(offsets))
    se = np.empty(len(offsets))
    trials = s.transpose(0, 2, 1)  # (trials, bins, n)
    for i, o in enumerate(offsets):
        mask = off == o
        if not mask.any():
            raise EstimationError(f"no samples at offset {o}")
        per_trial = trials[:, mask].mean(axis=1)
        rate[i] = per_trial.mean()
        se[i] = per_trial.std(ddof=1) / math.sqrt(len(per_trial)) if len(per_trial) > 1 else math.inf
    return RateProfile(offsets, rate, se)


def white_noise_probe(n_bins: int, n_channels: int, amplitude: float, seed: int) -> np.ndarray:
    """Gaussian white-noise current, reproducible from ``seed``."""
    return amplitude * np.random.default_rng([seed, 7]).standard_normal((n_bins, n_channels))
