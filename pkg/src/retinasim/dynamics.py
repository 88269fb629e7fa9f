"""Exact piecewise-linear integration, Euler oracles, SDE sampling and LNP spikes.

Inside one domain the state obeys ``dX/dt = L X + C + F(t)`` and is advanced
with matrix exponentials. Domain changes are located by sampling on the
output grid and bisecting. The nonlinear right-hand side used by the Euler
integrators is written directly from the cell equations and does not go
through :func:`retinasim.core.assemble_transport`, so it serves as an
independent oracle.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy.linalg import expm

from .core import (
    DomainLabel,
    RetinaNetwork,
    TransportOperator,
    assemble_transport,
    classify_domain,
    gain_guards,
    rectification_guards,
)
from .errors import (
    ChatteringError,
    ConfigurationError,
    StepSizeError,
    ToleranceError,
)

_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(4)
_GL_NODES = 0.5 * (_GL_NODES + 1.0)
_GL_WEIGHTS = 0.5 * _GL_WEIGHTS


# --------------------------------------------------------------------------
# forcing
# --------------------------------------------------------------------------


class Forcing:
    """External input ``F(t)``; ``__call__`` accepts a scalar or a 1-d array of times."""

    dim: int

    def __call__(self, t):
        raise NotImplementedError


class ZeroForcing(Forcing):
    def __init__(self, dim: int):
        self.dim = dim

    def __call__(self, t):
        t = np.asarray(t, float)
        return np.zeros(t.shape + (self.dim,))


class ConstantForcing(Forcing):
    def __init__(self, value):
        self.value = np.asarray(value, float)
        self.dim = self.value.shape[0]

    def __call__(self, t):
        t = np.asarray(t, float)
        return np.broadcast_to(self.value, t.shape + (self.dim,)).copy()


class FunctionForcing(Forcing):
    """Wraps ``fn(t) -> (dim,)``; evaluated point by point."""

    def __init__(self, fn: Callable, dim: int):
        self.fn, self.dim = fn, dim

    def __call__(self, t):
        t = np.asarray(t, float)
        flat = np.array([np.asarray(self.fn(float(s)), float) for s in t.ravel()]).reshape(t.shape + (self.dim,))
        return flat


class SampledForcing(Forcing):
    """Piecewise-linear interpolation of samples on a uniform grid; zero outside it."""

    def __init__(self, times, values):
        self.times = np.asarray(times, float)
        self.values = np.asarray(values, float)
        if self.values.shape[0] != len(self.times) or len(self.times) < 2:
            raise ConfigurationError("SampledForcing needs matching, non-trivial time and value arrays")
        self.dim = self.values.shape[1]
        self.t0 = self.times[0]
        self.dt = (self.times[-1] - self.times[0]) / (len(self.times) - 1)

    def __call__(self, t):
        t = np.asarray(t, float)
        u = (t - self.t0) / self.dt
        n = len(self.times)
        i = np.clip(np.floor(u).astype(np.int64), 0, n - 2)
        frac = (u - i)[..., None]
        out = (1.0 - frac) * self.values[i] + frac * self.values[i + 1]
        inside = (u >= -1e-9) & (u <= n - 1 + 1e-9)
        return np.where(inside[..., None], out, 0.0)


def drive_forcing(network: RetinaNetwork, times, opl_input) -> SampledForcing:
    """State-space forcing with the OPL input on the B rows and zeros elsewhere."""
    opl_input = np.asarray(opl_input, float)
    if opl_input.shape[1] != network.n_b:
        raise ConfigurationError(f"OPL input has {opl_input.shape[1]} cells, network has {network.n_b} B cells")
    values = np.zeros((len(times), network.state_dim))
    values[:, network.slice_b] = opl_input
    return SampledForcing(times, values)


# --------------------------------------------------------------------------
# in-domain propagation
# --------------------------------------------------------------------------


def _checked_expm(m: np.ndarray) -> np.ndarray:
    e = expm(m)
    if not np.all(np.isfinite(e)):
        raise StepSizeError("matrix exponential overflowed; subdivide the interval")
    return e


class _StepCache:
    """Per-operator exponentials for a fixed step ``h``."""

    def __init__(self, L: np.ndarray, C: np.ndarray):
        self.L, self.C = L, C
        self.n = L.shape[0]
        self._cache: dict[float, tuple] = {}

    def get(self, h: float):
        hit = self._cache.get(h)
        if hit is None:
            n = self.n
            # Van Loan block: exp([[L, C], [0, 0]] h) yields int_0^h e^{Ls} ds C
            aug = np.zeros((n + 1, n + 1))
            aug[:n, :n] = self.L * h
            aug[:n, n] = self.C * h
            e_aug = _checked_expm(aug)
            e_h = e_aug[:n, :n]
            const = e_aug[:n, n]
            e_nodes = np.stack([_checked_expm(self.L * (h * (1.0 - xi))) for xi in _GL_NODES])
            hit = (e_h, const, e_nodes)
            if len(self._cache) < 64:
                self._cache[h] = hit
        return hit

    def step(self, x, phi, forcing: Forcing, t: float, h: float):
        """Advance state and visit integral by ``h``."""
        e_h, const, e_nodes = self.get(h)
        f = forcing(t + h * _GL_NODES)  # (4, n)
        inc = const + h * np.einsum("q,qij,qj->i", _GL_WEIGHTS, e_nodes, f)
        return e_h @ x + inc, e_h @ phi + inc


@dataclass
class InDomainSolution:
    """Samples of a single-domain solution (no crossing detection)."""

    times: np.ndarray
    states: np.ndarray
    forcing_integral: np.ndarray


def propagate_in_domain(
    x0,
    operator: TransportOperator,
    forcing: Optional[Forcing],
    t0: float,
    t1: float,
    dt: float = 0.1,
) -> InDomainSolution:
    """Solve ``dX/dt = L X + C + F`` on ``[t0, t1]`` assuming the domain never changes.

    Returns samples every ``dt`` (plus ``t1``). ``forcing_integral`` holds
    ``int_{t0}^{t} e^{L(t-s)} (C + F(s)) ds`` at the same times. The constant
    part is integrated exactly; ``F`` with four-point Gauss-Legendre panels
    per step.
    """
    if not dt > 0:
        raise ConfigurationError("dt must be positive")
    L, C = operator.matrix, operator.constant
    forcing = forcing if forcing is not None else ZeroForcing(L.shape[0])
    cache = _StepCache(L, C)
    n_full = int(math.floor((t1 - t0) / dt + 1e-9))
    times = [t0 + k * dt for k in range(n_full + 1)]
    if t1 - times[-1] > 1e-12 * max(1.0, abs(t1)):
        times.append(t1)
    x = np.array(x0, float)
    phi = np.zeros_like(x)
    xs, phis = [x], [phi]
    for a, b in zip(times[:-1], times[1:]):
        x, phi = cache.step(x, phi, forcing, a, b - a)
        xs.append(x)
        phis.append(phi)
    return InDomainSolution(np.array(times), np.array(xs), np.array(phis))


# --------------------------------------------------------------------------
# crossings
# --------------------------------------------------------------------------


def _guards(state, network: RetinaNetwork) -> np.ndarray:
    g = rectification_guards(state, network)
    gg = gain_guards(state, network)
    return g if gg is None else np.concatenate([g, gg])


def _label_bits(label: DomainLabel) -> np.ndarray:
    if label.gain_controlled is None:
        return label.rectified
    return np.concatenate([label.rectified, label.gain_controlled])


@dataclass(frozen=True)
class Crossing:
    """Exit from a domain: first out-of-domain time and the switching guards.

    ``cells`` indexes the concatenated guard vector: B and A cells first,
    then (with gain control) the B cell activities.
    """

    time: float
    cells: tuple
    state: np.ndarray
    iterations: int


def detect_crossing(
    evaluator: Callable[[float], np.ndarray],
    label: DomainLabel,
    network: RetinaNetwork,
    t_start: float,
    t_end: float,
    *,
    dt: float = 0.1,
    eps_event: float = 1e-9,
    max_iter: int = 100,
) -> Optional[Crossing]:
    """Earliest exit from ``label`` on ``[t_start, t_end]``, or ``None``.

    ``evaluator(t)`` returns the state. The window is sampled every ``dt``;
    the first sample outside the domain is refined by bisection until the
    switching guards are within ``eps_event`` of zero. Crossings entering
    and leaving between two samples are not seen.
    """
    bits = _label_bits(label)
    prev_t = t_start
    t = t_start
    while t < t_end:
        t = min(t + dt, t_end)
        x = evaluator(t)
        if np.array_equal(_guards(x, network) < 0, bits):
            prev_t = t
            continue
        return _bisect(evaluator, bits, network, prev_t, t, x, eps_event, max_iter)
    return None


def _bisect(evaluator, bits, network, lo, hi, x_hi, eps_event, max_iter) -> Crossing:
    for it in range(max_iter + 1):
        g_hi = _guards(x_hi, network)
        changed = np.flatnonzero((g_hi < 0) != bits)
        if np.max(np.abs(g_hi[changed])) <= eps_event or hi - lo <= 4 * np.spacing(hi):
            if np.max(np.abs(g_hi[changed])) > eps_event:
                raise ToleranceError(
                    f"crossing at t = {hi!r} ms cannot be resolved to {eps_event} mV "
                    f"(time resolution exhausted, guard {np.max(np.abs(g_hi[changed])):.3g})"
                )
            return Crossing(float(hi), tuple(int(c) for c in changed), x_hi, it)
        if it == max_iter:
            break
        mid = 0.5 * (lo + hi)
        x_mid = evaluator(mid)
        if np.array_equal(_guards(x_mid, network) < 0, bits):
            lo = mid
        else:
            hi, x_hi = mid, x_mid
    raise ToleranceError(f"crossing bisection did not reach {eps_event} mV within {max_iter} iterations")


# --------------------------------------------------------------------------
# piecewise-exact integration
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class IntegratorConfig:
    dt: float = 0.1
    eps_event: float = 1e-9
    max_iter: int = 100
    max_visits: int = 1_000_000
    mode: str = "exact-piecewise"

    def __post_init__(self):
        if not self.dt > 0 or not self.eps_event > 0:
            raise ConfigurationError("integrator dt and eps_event must be positive")
        if self.mode not in ("exact-piecewise", "dense-euler", "euler-maruyama"):
            raise ConfigurationError(f"unknown integrator mode {self.mode!r}")


@dataclass
class Visit:
    """One stay in a domain.

    ``propagator`` is ``exp(L (t_exit - t_entry))`` and ``forcing_integral``
    is ``int e^{L (t_exit - s)} (C + F(s)) ds`` over the stay, so that
    ``exit_state = propagator @ entry_state + forcing_integral``.
    """

    label: DomainLabel
    t_entry: float
    t_exit: float
    entry_state: np.ndarray
    exit_state: np.ndarray
    propagator: np.ndarray
    forcing_integral: np.ndarray
    crossing_cells: tuple = ()


@dataclass
class Trajectory:
    times: np.ndarray
    states: np.ndarray
    labels: np.ndarray  # packed label of the domain each sample belongs to
    visits: list = field(default_factory=list)
    metadata: dict = field(default_factory=dict)

    @property
    def final_state(self) -> np.ndarray:
        return self.states[-1]

    @property
    def domains(self) -> list:
        return [v.label.packed for v in self.visits]


def reconstruct_exit_states(traj: Trajectory) -> np.ndarray:
    """Exit states rebuilt from the recorded propagators and forcing integrals.

    With ``Phi_0 = X(0)`` and ``H_{k,m} = H_{k,k-1} ... H_{m+1,m}`` this is
    ``X(t_k^+) = sum_{m <= k} H_{k,m} Phi_m``, evaluated term by term.
    """
    visits = traj.visits
    n = len(visits)
    hs = [v.propagator for v in visits]
    phis = [traj.states[0]] + [v.forcing_integral for v in visits]
    out = []
    for k in range(n):
        total = np.zeros_like(phis[0])
        acc = np.eye(len(total))
        for m in range(k + 1, -1, -1):
            if m == k + 1:
                total = total + phis[k + 1]
                continue
            acc = acc @ hs[m]
            total = total + acc @ phis[m]
        out.append(total)
    return np.array(out)


def propagator_chain(traj: Trajectory, k: int, m: int) -> np.ndarray:
    """``H_{k,m}``: product of visit propagators for visits ``m+1 .. k`` (1-based visit index)."""
    acc = np.eye(traj.states.shape[1])
    for j in range(m + 1, k + 1):
        acc = traj.visits[j - 1].propagator @ acc
    return acc


def integrate_piecewise(
    network: RetinaNetwork,
    x0,
    forcing: Optional[Forcing],
    horizon_ms: float,
    config: IntegratorConfig = IntegratorConfig(),
    *,
    t0: float = 0.0,
) -> Trajectory:
    """Exact piecewise-linear solution sampled every ``config.dt``.

    Each domain visit is advanced with matrix exponentials of its transport
    operator; exits are located by :func:`detect_crossing` semantics
    (sample, then bisect). The visit list records the propagators and
    forcing integrals of the H/Phi recurrence.
    """
    dim = network.state_dim
    x = np.array(x0, float)
    if x.shape != (dim,) or not np.all(np.isfinite(x)):
        raise ConfigurationError(f"initial state must be a finite vector of length {dim}")
    forcing = forcing if forcing is not None else ZeroForcing(dim)
    dt = config.dt
    n_steps = int(math.ceil(horizon_ms / dt - 1e-9))
    grid = t0 + dt * np.arange(n_steps + 1)
    grid[-1] = t0 + horizon_ms

    caches: dict[DomainLabel, _StepCache] = {}

    def cache_for(label):
        c = caches.get(label)
        if c is None:
            op = assemble_transport(network, label)
            c = caches[label] = _StepCache(op.matrix, op.constant)
        return c

    label = classify_domain(x, network)
    bits = _label_bits(label)
    visits: list[Visit] = []
    t_entry, x_entry = t0, x.copy()
    phi = np.zeros(dim)
    t = t0
    states, labels = [x.copy()], [label.packed]
    k = 0
    while k < n_steps:
        target = grid[k + 1]
        cache = cache_for(label)
        x_new, phi_new = cache.step(x, phi, forcing, t, target - t)
        if np.array_equal(_guards(x_new, network) < 0, bits):
            x, phi, t = x_new, phi_new, target
            k += 1
            states.append(x.copy())
            labels.append(label.packed)
            continue

        base_x, base_phi, base_t = x, phi, t

        def evaluator(s, _c=cache, _x=base_x, _t=base_t):
            if s <= _t:
                return _x
            return _c.step(_x, np.zeros(dim), forcing, _t, s - _t)[0]

        crossing = _bisect(evaluator, bits, network, base_t, target, x_new, config.eps_event, config.max_iter)
        t_cross = crossing.time
        x, phi = cache.step(base_x, base_phi, forcing, base_t, t_cross - base_t)
        visits.append(
            Visit(label, t_entry, t_cross, x_entry, x.copy(), _checked_expm(cache.L * (t_cross - t_entry)),
                  phi.copy(), crossing.cells)
        )
        if len(visits) >= config.max_visits:
            raise ChatteringError(
                f"more than {config.max_visits} domain visits before t = {t_cross} ms", state=x.copy(), time=t_cross
            )
        label = classify_domain(x, network)
        bits = _label_bits(label)
        t, t_entry, x_entry = t_cross, t_cross, x.copy()
        phi = np.zeros(dim)
        if abs(target - t) <= 1e-12 * max(1.0, abs(target)):
            # crossing landed on the grid point
            k += 1
            states.append(x.copy())
            labels.append(label.packed)

    cache = cache_for(label)
    visits.append(Visit(label, t_entry, t, x_entry, x.copy(), _checked_expm(cache.L * (t - t_entry)), phi.copy()))
    meta = {"mode": "exact-piecewise", "dt": dt, "eps_event": config.eps_event}
    rest = network.rest_label()
    if classify_domain(np.asarray(x0, float), network) != rest:
        meta["warning"] = "initial state outside the rest domain"
    return Trajectory(grid, np.array(states), np.array(labels, dtype=object), visits, meta)


# --------------------------------------------------------------------------
# Euler integrators on the nonlinear equations
# --------------------------------------------------------------------------


class NonlinearDrift:
    """``dX/dt`` of the rectified network, written cell by cell.

    Works on a single state of shape (dim,) or a batch of shape (trials, dim).
    """

    def __init__(self, network: RetinaNetwork):
        self.network = network
        w = network.weights
        p = network.params
        self.nb, self.na, self.ng = network.n_b, network.n_a, network.n_g
        self.inv_tau = 1.0 / network.tau
        self.w_ab, self.w_ba, self.w_bg, self.w_ag = w.a_to_b, w.b_to_a, w.b_to_g, w.a_to_g
        self.gap_ab = w.gap_a_to_b
        self.gap_ba = w.gap_b_to_a
        self.theta_b, self.theta_a = p.theta_b_mv, p.theta_a_mv
        self.gain = p.gain

    def __call__(self, x: np.ndarray, f: np.ndarray) -> np.ndarray:
        nb, na, ng = self.nb, self.na, self.ng
        vb = x[..., :nb]
        va = x[..., nb:nb + na]
        vg = x[..., nb + na:nb + na + ng]
        rb = np.maximum(vb - self.theta_b, 0.0)
        ra = np.maximum(va - self.theta_a, 0.0)
        out_b = rb
        dx = np.empty_like(x)
        if self.gain is not None:
            act = x[..., nb + na + ng:]
            out_b = rb * (act <= self.gain.theta_a)
            dx[..., nb + na + ng:] = -act / self.gain.tau_a_ms + self.gain.h_b * rb
        dvb = -vb * self.inv_tau[:nb] + ra @ self.w_ab.T
        dva = -va * self.inv_tau[nb:nb + na] + out_b @ self.w_ba.T
        if self.gap_ab is not None:
            dvb = dvb + (va[..., None, :] - vb[..., :, None]).__mul__(self.gap_ab).sum(axis=-1)
            dva = dva + (vb[..., None, :] - va[..., :, None]).__mul__(self.gap_ba).sum(axis=-1)
        dvg = -vg * self.inv_tau[nb + na:] + out_b @ self.w_bg.T + ra @ self.w_ag.T
        dx[..., :nb] = dvb
        dx[..., nb:nb + na] = dva
        dx[..., nb + na:nb + na + ng] = dvg
        return dx + f


def integrate_dense_euler(
    network: RetinaNetwork,
    x0,
    forcing: Optional[Forcing],
    horizon_ms: float,
    dt: float = 1e-3,
    record_every: Optional[float] = None,
) -> Trajectory:
    """Forward Euler on the nonlinear equations with a fixed small step.

    The forcing is sampled at each step's midpoint, which removes the
    first-order bias a left-endpoint sample would add. Intended as a
    brute-force oracle for :func:`integrate_piecewise`.
    """
    drift = NonlinearDrift(network)
    dim = network.state_dim
    forcing = forcing if forcing is not None else ZeroForcing(dim)
    n = int(round(horizon_ms / dt))
    if abs(n * dt - horizon_ms) > 1e-9 * max(1.0, horizon_ms):
        raise ConfigurationError("horizon must be a multiple of dt for dense Euler")
    stride = n if record_every is None else max(1, int(round(record_every / dt)))
    ts = (np.arange(n) + 0.5) * dt
    f_all = forcing(ts) if not isinstance(forcing, ZeroForcing) else None
    x = np.array(x0, float)
    times, states = [0.0], [x.copy()]
    for i in range(n):
        f = f_all[i] if f_all is not None else 0.0
        x = x + dt * drift(x, f)
        if (i + 1) % stride == 0:
            times.append((i + 1) * dt)
            states.append(x.copy())
    if times[-1] != n * dt:
        times.append(n * dt)
        states.append(x.copy())
    labels = np.array([classify_domain(s, network).packed for s in states], dtype=object)
    return Trajectory(np.array(times), np.array(states), labels, [], {"mode": "dense-euler", "dt": dt})


@dataclass
class SDEResult:
    """Sampled paths of shape (trials, samples, dim)."""

    times: np.ndarray
    states: np.ndarray
    metadata: dict = field(default_factory=dict)


def integrate_sde(
    network: RetinaNetwork,
    x0,
    forcing: Optional[Forcing],
    horizon_ms: float,
    *,
    dt: float,
    sigma: float,
    n_trials: int = 1,
    seed: int = 0,
    first_trial: int = 0,
    noise_cells: Optional[np.ndarray] = None,
    record_every: Optional[float] = None,
    chunk_steps: int = 512,
) -> SDEResult:
    """Euler-Maruyama for ``dX = (drift + F) dt + sigma Q dW``.

    Rectification acts through the drift only. The deterministic forcing is
    sampled at step midpoints, as in :func:`integrate_dense_euler`, so
    ``sigma = 0`` reproduces that integrator exactly. ``noise_cells`` is a boolean
    mask over the state (default: the B cells). Trial ``r`` draws its noise
    from a generator seeded with ``[seed, r]``, so results per trial do not
    depend on how many trials run together.
    """
    taus = network.effective_tau
    if network.has_gain:
        taus = np.append(taus, network.params.gain.tau_a_ms)
    if dt > float(np.min(taus)) / 20.0:
        raise StepSizeError(
            f"dt = {dt} ms exceeds min(tau)/20 = {float(np.min(taus)) / 20.0:.4g} ms; Euler-Maruyama would be inaccurate"
        )
    drift = NonlinearDrift(network)
    dim = network.state_dim
    if noise_cells is None:
        noise_cells = np.zeros(dim, bool)
        noise_cells[network.slice_b] = True
    noise_idx = np.flatnonzero(noise_cells)
    forcing = forcing if forcing is not None else ZeroForcing(dim)
    n = int(round(horizon_ms / dt))
    stride = n if record_every is None else max(1, int(round(record_every / dt)))
    x = np.tile(np.asarray(x0, float), (n_trials, 1))
    rngs = [np.random.default_rng([seed, first_trial + r]) for r in range(n_trials)]
    amp = sigma * math.sqrt(dt)
    zero_f = isinstance(forcing, ZeroForcing)
    times, samples = [0.0], [x.copy()]
    for start in range(0, n, chunk_steps):
        m = min(chunk_steps, n - start)
        if sigma > 0:
            noise = np.stack([g.standard_normal((m, len(noise_idx))) for g in rngs], axis=1)
        f_chunk = None if zero_f else forcing((start + np.arange(m) + 0.5) * dt)
        for i in range(m):
            f = 0.0 if f_chunk is None else f_chunk[i]
            x = x + dt * drift(x, f)
            if sigma > 0:
                x[:, noise_idx] += amp * noise[i]
            step = start + i + 1
            if step % stride == 0:
                times.append(step * dt)
                samples.append(x.copy())
    if not np.all(np.isfinite(x)):
        raise StepSizeError("Euler-Maruyama produced non-finite states")
    return SDEResult(np.array(times), np.stack(samples, axis=1),
                     {"mode": "euler-maruyama", "dt": dt, "sigma": sigma, "seed": seed, "trials": n_trials})


# --------------------------------------------------------------------------
# LNP spikes
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class SpikeRaster:
    """Binary spikes of shape (trials, neurons, bins) with bin width ``bin_ms``."""

    spikes: np.ndarray
    bin_ms: float

    def __post_init__(self):
        s = np.asarray(self.spikes)
        if s.ndim != 3:
            raise ValueError(f"raster must be (trials, neurons, bins), got shape {s.shape}")
        if s.size and not np.all((s == 0) | (s == 1)):
            raise ValueError("raster entries must be 0 or 1")
        s = s.astype(np.uint8)
        s.setflags(write=False)
        object.__setattr__(self, "spikes", s)

    @property
    def n_trials(self) -> int:
        return self.spikes.shape[0]

    @property
    def n_neurons(self) -> int:
        return self.spikes.shape[1]

    @property
    def n_bins(self) -> int:
        return self.spikes.shape[2]

    @property
    def horizon_ms(self) -> float:
        return self.n_bins * self.bin_ms


def generate_lnp_spikes(
    v_g,
    theta_g: float,
    sigma_g: float,
    bin_ms: float,
    trace_dt: Optional[float] = None,
    *,
    seed: int = 0,
    first_trial: int = 0,
    rate_scale: float = 1.0,
) -> SpikeRaster:
    """Bernoulli spikes with per-bin probability ``rate_scale * Phi((V - theta_G) / sigma_G)``.

    ``v_g`` has shape (bins, neurons) or (trials, bins, neurons). When
    ``trace_dt`` is given and is an integer multiple of ``bin_ms``, each trace
    sample is held over the bins it covers. Trial ``r`` uses a generator
    seeded with ``[seed, r]``.
    """
    from scipy.special import ndtr

    v = np.asarray(v_g, float)
    if v.ndim == 2:
        v = v[None]
    if trace_dt is not None:
        ratio = trace_dt / bin_ms
        k = int(round(ratio))
        if k < 1 or abs(ratio - k) > 1e-9:
            raise ConfigurationError("bin width must equal or subdivide the trace step")
        v = np.repeat(v, k, axis=1)
    if not sigma_g > 0:
        raise ConfigurationError("sigma_G must be positive")
    p = np.clip(rate_scale * ndtr((v - theta_g) / sigma_g), 0.0, 1.0)
    spikes = np.empty(p.shape, np.uint8)
    for r in range(p.shape[0]):
        u = np.random.default_rng([seed, first_trial + r]).random(p.shape[1:])
        spikes[r] = u < p[r]
    return SpikeRaster(np.transpose(spikes, (0, 2, 1)), bin_ms)
