"""Eigen-analysis of transport operators, receptive-field kernels and resonances."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
import scipy.linalg
from scipy.signal import find_peaks

from .core import RetinaNetwork, TransportOperator, assemble_transport, fixed_point
from .dynamics import (
    IntegratorConfig,
    Trajectory,
    drive_forcing,
    integrate_piecewise,
)
from .errors import (
    ConfigurationError,
    EstimationError,
    LinearityViolation,
    SpectralError,
    UnstableSpectrumError,
)
from .stimulus import (
    BipolarKernel,
    DriveTrace,
    FullFieldFlash,
    FullFieldSinusoid,
    compute_drive,
    compute_opl_input,
)


@dataclass(frozen=True)
class SpectralData:
    """``L = P diag(eigenvalues) P^{-1}``; ``right`` holds eigenvectors as columns."""

    eigenvalues: np.ndarray
    right: np.ndarray
    left: np.ndarray
    condition: float
    residual: float

    @property
    def stable(self) -> bool:
        return bool(np.all(self.eigenvalues.real < 0))

    @property
    def dim(self) -> int:
        return len(self.eigenvalues)

    def reconstruct(self) -> np.ndarray:
        return ((self.right * self.eigenvalues) @ self.left).real

    def exp(self, t: float) -> np.ndarray:
        """``exp(L t)`` through the eigenbasis."""
        return ((self.right * np.exp(self.eigenvalues * t)) @ self.left).real


def eigendecompose(
    operator,
    *,
    max_condition: float = 1e10,
    residual_tol: float = 1e-8,
) -> SpectralData:
    """Balanced dense eigendecomposition of a transport operator or matrix.

    Decompositions whose eigenvector matrix has a condition number above
    ``max_condition`` are refused: the operator is (close to) defective and
    a Schur-based treatment should be used instead.
    """
    L = operator.matrix if isinstance(operator, TransportOperator) else np.asarray(operator, float)
    if not np.all(np.isfinite(L)):
        raise SpectralError("operator has non-finite entries")
    lam, P = scipy.linalg.eig(L)
    cond = float(np.linalg.cond(P))
    if not math.isfinite(cond) or cond > max_condition:
        raise SpectralError(
            f"eigenvector matrix condition number {cond:.3g} exceeds {max_condition:.3g}; the operator "
            "is nearly defective (use a Schur decomposition instead)"
        )
    Pinv = np.linalg.inv(P)
    scale = max(np.linalg.norm(L, 2), 1e-300)
    residual = float(np.linalg.norm(L @ P - P * lam, 2) / scale)
    inv_err = float(np.max(np.abs(Pinv @ P - np.eye(len(lam)))))
    if residual > residual_tol or inv_err > residual_tol * max(cond, 1.0):
        raise SpectralError(f"eigendecomposition residual {residual:.3g} / inverse error {inv_err:.3g} too large")
    return SpectralData(lam, P, Pinv, cond, residual)


# --------------------------------------------------------------------------
# exponential convolutions
# --------------------------------------------------------------------------


def exp_convolve(lam, samples, step: float) -> np.ndarray:
    """``I(t_n) = int_0^{t_n} exp(lam (t_n - s)) k(s) ds`` for each ``lam``.

    ``k`` is the piecewise-linear interpolant of ``samples`` (axis 0 is
    time, starting at ``t = 0`` with spacing ``step``), integrated exactly.
    ``lam`` may be a scalar or a 1-d array; the result has shape
    ``(len(lam), *samples.shape)`` for arrays.
    """
    from scipy.signal import lfilter

    k = np.asarray(samples)
    scalar = np.ndim(lam) == 0
    lams = np.atleast_1d(np.asarray(lam, complex))
    out = np.empty((len(lams),) + k.shape, complex)
    for i, lm in enumerate(lams):
        z = lm * step
        if abs(z) < 1e-4:
            a = step * (1 + z / 2 + z * z / 6 + z ** 3 / 24)
            b = step * (0.5 + z / 6 + z * z / 24 + z ** 3 / 120)
        else:
            e = np.expm1(z)
            a = e / lm
            b = (e - z) / (lm * z)
        # I_{n+1} = e^{z} I_n + (a - b) k_n + b k_{n+1}, I_0 = 0
        y = lfilter([b, a - b], [1.0, -np.exp(z)], k, axis=0)
        # lfilter starts from y_0 = b k_0; the integral over an empty interval is 0
        decay = np.exp(z * np.arange(k.shape[0])).reshape((-1,) + (1,) * (k.ndim - 1))
        out[i] = y - b * k[:1] * decay
    return out[0] if scalar else out


# --------------------------------------------------------------------------
# receptive fields
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class ReceptiveFieldKernel:
    """Space-time kernel of one cell, separable per B cell.

    ``K(x, y, t) = sum_g temporal[:, g] * K_S_g(x - x_g, y - y_g)``.
    ``coefficients[b, g] = P[cell, b] P^{-1}[b, g] (lam_b + 1 / tau_Bg)``
    is the per-mode weight table and ``modes[b]`` the matching eigenvalues.
    """

    cell: int
    times: np.ndarray
    temporal: np.ndarray  # (time, B cell)
    centers: np.ndarray
    kernels: tuple
    modes: np.ndarray
    coefficients: np.ndarray
    imag_residue: float
    metadata: dict = field(default_factory=dict)

    def sample(self, xs, ys) -> np.ndarray:
        """Kernel samples on the (t, y, x) grid given by ``xs``, ``ys``."""
        X, Y = np.meshgrid(np.asarray(xs, float), np.asarray(ys, float), indexing="xy")
        spatial = np.stack(
            [k.gain_mv * k.spatial.evaluate(X - c[0], Y - c[1]) for k, c in zip(self.kernels, self.centers)]
        )  # (B, ny, nx)
        return np.einsum("tg,gyx->tyx", self.temporal, spatial)

    def predict_response(self, stim, *, trial: int = 0, **drive_kw) -> np.ndarray:
        """Linear response ``(K * S)(t)`` on ``self.times`` (deviation from rest).

        The kernel is applied in its factorised form: each B cell's drive
        ``K_B * S`` is computed once and convolved exactly with every mode,
        which avoids differentiating or resampling the kernel.
        """
        drive_kw.setdefault("check_refinement", False)
        drives = np.stack(
            [
                compute_drive(stim, k, c[None, :], self.times, trial=trial, **drive_kw).values[:, 0]
                for k, c in zip(self.kernels, self.centers)
            ],
            axis=1,
        )
        return self.response_to_drive(drives)

    def response_to_drive(self, drives) -> np.ndarray:
        """Linear response to B cell drives sampled on ``self.times``, shape (time, B)."""
        drives = np.asarray(drives, float)
        step = self.times[1] - self.times[0]
        conv = exp_convolve(self.modes, drives, step)
        out = np.einsum("bg,btg->t", self.coefficients, conv).real
        if self.cell < drives.shape[1]:
            out = out + drives[:, self.cell]
        return out


def rg_receptive_field(
    network: RetinaNetwork,
    cell: int,
    kernels: Sequence[BipolarKernel],
    centers,
    times,
    *,
    spectrum: Optional[SpectralData] = None,
    imag_tol: float = 1e-10,
) -> ReceptiveFieldKernel:
    """Receptive field of state component ``cell`` around the rest domain.

    ``kernels[g]`` and ``centers[g]`` describe B cell ``g``. ``times`` must be
    a uniform grid starting at 0. The temporal factors are exact
    exponential convolutions of the piecewise-linear kernel samples. When
    ``cell`` is itself a B cell its own bipolar kernel is added.
    """
    op = assemble_transport(network, network.rest_label())
    sd = spectrum if spectrum is not None else eigendecompose(op)
    if not sd.stable:
        raise UnstableSpectrumError(
            "the receptive-field formula integrates over the infinite past and needs all "
            f"eigenvalues in the left half-plane (max real part {sd.eigenvalues.real.max():.3g})"
        )
    times = np.asarray(times, float)
    if abs(times[0]) > 1e-12:
        raise ConfigurationError("receptive-field time grid must start at 0")
    step = times[1] - times[0]
    nb = network.n_b
    if len(kernels) != nb:
        raise ConfigurationError(f"{len(kernels)} bipolar kernels for {nb} B cells")
    tau_b = network.tau[:nb]
    lam = sd.eigenvalues
    coef = sd.right[cell, :, None] * sd.left[:, :nb] * (lam[:, None] + 1.0 / tau_b[None, :])
    kt = np.stack([k.temporal.evaluate(times) for k in kernels], axis=1)  # (T, B)
    conv = exp_convolve(lam, kt, step)  # (modes, T, B)
    temporal_c = np.einsum("bg,btg->tg", coef, conv)
    if cell < nb:
        temporal_c[:, cell] += kt[:, cell]
    scale = max(float(np.max(np.abs(temporal_c))), 1e-300)
    imag = float(np.max(np.abs(temporal_c.imag))) / scale
    if imag > imag_tol:
        raise SpectralError(f"receptive field has imaginary residue {imag:.3g} (conjugate pairs do not cancel)")
    return ReceptiveFieldKernel(
        cell=cell,
        times=times,
        temporal=temporal_c.real,
        centers=np.asarray(centers, float),
        kernels=tuple(kernels),
        modes=lam,
        coefficients=coef,
        imag_residue=imag,
    )


def separability_index(kernel) -> float:
    """``s2 / s1`` of the (time x space) unfolding; 0 for a rank-one kernel.

    ``kernel`` is an array whose first axis is time, for instance
    :meth:`ReceptiveFieldKernel.sample` on a spatial grid.
    """
    arr = np.asarray(kernel, float)
    mat = arr.reshape(arr.shape[0], -1)
    s = np.linalg.svd(mat, compute_uv=False)
    if s.size == 0 or s[0] == 0:
        raise EstimationError("separability index undefined for an all-zero kernel")
    return float(s[1] / s[0]) if s.size > 1 else 0.0


# --------------------------------------------------------------------------
# impulse responses
# --------------------------------------------------------------------------


@dataclass
class ImpulseResponse:
    times: np.ndarray
    response: np.ndarray
    trajectory: Trajectory


def impulse_response(
    network: RetinaNetwork,
    cell: int,
    kernels: Sequence[BipolarKernel],
    centers,
    *,
    amplitude: float,
    duration_ms: float,
    horizon_ms: float,
    dt: float = 0.1,
    stimulus=None,
    integrator: Optional[IntegratorConfig] = None,
    check_refinement: bool = False,
) -> ImpulseResponse:
    """Deviation of ``cell`` from rest after a brief full-field flash at ``t = 0``.

    The full nonlinear model is integrated; if any domain other than the
    rest domain is visited, :class:`LinearityViolation` is raised with the
    trajectory attached. ``stimulus`` replaces the flash when given.
    """
    rest = fixed_point(assemble_transport(network, network.rest_label()))
    if not rest.in_domain:
        from .errors import RestStateError

        raise RestStateError("rest state outside the non-rectified domain")
    stim = stimulus if stimulus is not None else FullFieldFlash(amplitude, 0.0, duration_ms)
    times = np.arange(int(round(horizon_ms / dt)) + 1) * dt
    forcing = network_forcing(network, stim, kernels, centers, times, check_refinement=check_refinement)
    cfg = integrator or IntegratorConfig(dt=dt)
    traj = integrate_piecewise(network, rest.state, forcing, horizon_ms, cfg)
    if len(traj.visits) > 1 or traj.visits[0].label != network.rest_label():
        raise LinearityViolation(
            f"rectification occurred ({len(traj.visits)} domain visits); reduce the pulse amplitude",
            trajectory=traj,
        )
    return ImpulseResponse(traj.times, traj.states[:, cell] - rest.state[cell], traj)


def network_forcing(network, stim, kernels, centers, times, *, trial=0, check_refinement=True, **kw):
    """State-space forcing of ``network`` under ``stim`` (drive, then OPL input)."""
    centers = np.atleast_2d(np.asarray(centers, float))
    values = np.zeros((len(times), network.n_b))
    for g, (k, c) in enumerate(zip(kernels, centers)):
        d = compute_drive(stim, k, c[None, :], times, trial=trial, check_refinement=check_refinement, **kw)
        values[:, g] = d.values[:, 0]
    opl = compute_opl_input(DriveTrace(np.asarray(times, float), values), network.tau[: network.n_b])
    return drive_forcing(network, times, opl)


# --------------------------------------------------------------------------
# resonances
# --------------------------------------------------------------------------


@dataclass
class ResonanceScan:
    frequencies_hz: np.ndarray
    amplitude: np.ndarray
    peaks_hz: np.ndarray
    peak_prominence: np.ndarray
    mode_frequencies_hz: np.ndarray
    metadata: dict = field(default_factory=dict)


def transfer_function(network: RetinaNetwork, cell: int, frequencies_hz, drive_gain=None) -> np.ndarray:
    """Complex response of ``cell`` per unit sinusoidal drive on every B cell.

    With ``V_B = g e^{i w t}`` the OPL input is ``(1/tau_B + i w) V_B``.
    ``drive_gain`` scales each B cell's drive (default 1) and may depend on
    frequency through a callable ``omega -> (B,)``.
    """
    op = assemble_transport(network, network.rest_label())
    L = op.matrix
    nb = network.n_b
    inv_tau = 1.0 / network.tau[:nb]
    out = np.empty(len(frequencies_hz), complex)
    eye = np.eye(L.shape[0])
    for i, f in enumerate(np.asarray(frequencies_hz, float)):
        w = 2 * np.pi * f / 1000.0
        g = np.ones(nb) if drive_gain is None else (drive_gain(w) if callable(drive_gain) else np.asarray(drive_gain))
        rhs = np.zeros(L.shape[0], complex)
        rhs[:nb] = (inv_tau + 1j * w) * g
        out[i] = np.linalg.solve(1j * w * eye - L, rhs)[cell]
    return out


def resonance_scan(
    network: RetinaNetwork,
    cell: int,
    frequencies_hz,
    probe_amplitude: float,
    *,
    drive_gain=None,
    prominence_fraction: float = 0.05,
) -> ResonanceScan:
    """Steady-state amplitude of ``cell`` under sinusoidal drive, with peak detection.

    ``probe_amplitude`` is the drive amplitude in mV. The scan refuses
    unstable spectra and amplitudes that would push any B or A cell across
    its threshold at any scanned frequency.
    """
    op = assemble_transport(network, network.rest_label())
    sd = eigendecompose(op)
    if not sd.stable:
        raise UnstableSpectrumError("resonance scan needs a stable rest operator")
    rest = fixed_point(op)
    freqs = np.asarray(frequencies_hz, float)
    nr = network.n_rectifiable
    margins = rest.state[:nr] - network.thresholds
    for c in range(nr):
        h = np.abs(transfer_function(network, c, freqs, drive_gain)) * probe_amplitude
        if np.any(h > margins[c]):
            raise LinearityViolation(
                f"probe amplitude {probe_amplitude} mV would rectify cell {c} "
                f"(peak excursion {h.max():.3g} mV, margin {margins[c]:.3g} mV)"
            )
    amp = np.abs(transfer_function(network, cell, freqs, drive_gain)) * probe_amplitude
    peaks, props = find_peaks(amp, prominence=prominence_fraction * amp.max())
    modes = np.abs(sd.eigenvalues.imag) / (2 * np.pi) * 1000.0
    return ResonanceScan(freqs, amp, freqs[peaks], props["prominences"], np.unique(modes[modes > 0]))


def simulated_amplitude(
    network: RetinaNetwork,
    cell: int,
    frequency_hz: float,
    kernels,
    centers,
    *,
    contrast: float,
    periods: int = 6,
    dt: float = 0.1,
) -> float:
    """Steady-state amplitude measured by integrating the full model.

    A sinusoidal full-field stimulus runs for ``periods`` cycles; the
    amplitude is read from the last cycle. Raises
    :class:`LinearityViolation` if rectification occurs.
    """
    period = 1000.0 / frequency_hz
    horizon = periods * period
    stim = FullFieldSinusoid(contrast, frequency_hz)
    rest = fixed_point(assemble_transport(network, network.rest_label()))
    times = np.arange(int(round(horizon / dt)) + 1) * dt
    forcing = network_forcing(network, stim, kernels, centers, times, check_refinement=False)
    traj = integrate_piecewise(network, rest.state, forcing, times[-1], IntegratorConfig(dt=dt))
    if len(traj.visits) > 1:
        raise LinearityViolation("rectification occurred during the resonance probe", trajectory=traj)
    last = traj.times >= horizon - period
    x = traj.states[last, cell]
    return 0.5 * float(x.max() - x.min())
