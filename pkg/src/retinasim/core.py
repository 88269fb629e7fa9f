"""Lattice geometry, connectivity, rectification domains and transport operators.

State vectors are ordered as in the model: B cell voltages, then A cell
voltages, then G cell voltages and, when gain control is enabled, the B cell
activities. Cell indices inside a layer are 1-based when they refer to the
lattice (``i = ix + (iy - 1) * L_p``) and 0-based everywhere else.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Mapping, Optional

import numpy as np

from .errors import (
    AssemblyError,
    ConfigurationError,
    RestStateError,
    SpectralError,
    ValidationError,
)

LAYERS = ("B", "A", "G")

# sign each chemical block must respect: +1 means entries >= 0, -1 entries <= 0
BLOCK_SIGNS = {"a_to_b": -1, "b_to_a": +1, "b_to_g": +1, "a_to_g": -1}
# (post layer, pre layer) of every block
BLOCK_LAYERS = {
    "a_to_b": ("B", "A"),
    "b_to_a": ("A", "B"),
    "b_to_g": ("G", "B"),
    "a_to_g": ("G", "A"),
}


# --------------------------------------------------------------------------
# geometry
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class LayerLayout:
    """Square lattices of B, A and G cells over a retina of given edge length.

    A layer whose spacing is ``None`` holds no cells.
    """

    edge_length_mm: float
    spacing_mm: Mapping[str, Optional[float]]
    cells_per_row: Mapping[str, int]

    def n_cells(self, layer: str) -> int:
        return self.cells_per_row[layer] ** 2

    @property
    def n_b(self) -> int:
        return self.n_cells("B")

    @property
    def n_a(self) -> int:
        return self.n_cells("A")

    @property
    def n_g(self) -> int:
        return self.n_cells("G")

    @property
    def n_total(self) -> int:
        return self.n_b + self.n_a + self.n_g

    def index(self, layer: str, ix: int, iy: int) -> int:
        """Lattice index ``i = ix + (iy - 1) * L_p`` (all 1-based)."""
        lp = self.cells_per_row[layer]
        if not (1 <= ix <= lp and 1 <= iy <= lp):
            raise IndexError(f"({ix}, {iy}) outside the {lp}x{lp} {layer} lattice")
        return ix + (iy - 1) * lp

    def grid_position(self, layer: str, i: int) -> tuple[int, int]:
        """Inverse of :meth:`index`."""
        lp = self.cells_per_row[layer]
        if not 1 <= i <= lp * lp:
            raise IndexError(f"index {i} outside 1..{lp * lp} for layer {layer}")
        iy, ix = divmod(i - 1, lp)
        return ix + 1, iy + 1

    def coordinates(self, layer: str, i: int) -> tuple[float, float]:
        ix, iy = self.grid_position(layer, i)
        d = self.spacing_mm[layer]
        return ix * d, iy * d

    def positions(self, layer: str) -> np.ndarray:
        """(N_p, 2) array of cell coordinates in mm, ordered by lattice index."""
        lp = self.cells_per_row[layer]
        if lp == 0:
            return np.zeros((0, 2))
        d = self.spacing_mm[layer]
        k = np.arange(1, lp + 1) * d
        xx, yy = np.meshgrid(k, k, indexing="xy")
        return np.column_stack([xx.ravel(), yy.ravel()])


def build_layout(edge_length_mm: float, spacings: Mapping[str, Optional[float]]) -> LayerLayout:
    """Build the three lattices.

    ``spacings`` maps layer names ("B", "A", "G") to a lattice spacing in mm,
    or to ``None`` for an empty layer. The edge length must be an integer
    multiple of each spacing.
    """
    if not edge_length_mm > 0:
        raise ConfigurationError(f"edge length must be positive, got {edge_length_mm}")
    unknown = set(spacings) - set(LAYERS)
    if unknown:
        raise ConfigurationError(f"unknown layer(s) {sorted(unknown)}")
    spacing, per_row = {}, {}
    for layer in LAYERS:
        d = spacings.get(layer)
        if d is None:
            spacing[layer], per_row[layer] = None, 0
            continue
        if not d > 0:
            raise ConfigurationError(f"layer {layer}: spacing must be positive, got {d}")
        ratio = edge_length_mm / d
        lp = round(ratio)
        if lp < 1 or abs(ratio - lp) > 1e-9 * max(ratio, 1.0):
            raise ConfigurationError(
                f"layer {layer}: edge length {edge_length_mm} mm is not a multiple "
                f"of spacing {d} mm"
            )
        spacing[layer], per_row[layer] = float(d), int(lp)
    return LayerLayout(float(edge_length_mm), spacing, per_row)


# --------------------------------------------------------------------------
# connectivity
# --------------------------------------------------------------------------


def _frozen(a, shape=None) -> np.ndarray:
    arr = np.array(a, dtype=float)
    if shape is not None and arr.size == 0:
        arr = arr.reshape(shape)
    arr.setflags(write=False)
    return arr


def sign_violations(name: str, matrix: np.ndarray, sign: int) -> list[str]:
    """Messages for every entry of ``matrix`` violating ``sign`` (1-based row/col)."""
    bad = np.argwhere(matrix * sign < 0)
    rel = "<= 0" if sign < 0 else ">= 0"
    return [
        f"{name}: entry (row {r + 1}, col {c + 1}) = {float(matrix[r, c]):g} violates {rel}"
        for r, c in bad
    ]


@dataclass(frozen=True)
class ConnectivityWeights:
    """Chemical synapse blocks and optional gap-junction blocks.

    ``a_to_b[i, j]`` is the weight from A cell j onto B cell i, and so on.
    Gap blocks hold conductance over capacitance of the receiving cell.
    """

    a_to_b: np.ndarray
    b_to_a: np.ndarray
    b_to_g: np.ndarray
    a_to_g: np.ndarray
    gap_a_to_b: Optional[np.ndarray] = None
    gap_b_to_a: Optional[np.ndarray] = None

    def __post_init__(self):
        for name in ("a_to_b", "b_to_a", "b_to_g", "a_to_g", "gap_a_to_b", "gap_b_to_a"):
            value = getattr(self, name)
            if value is not None:
                arr = np.array(value, dtype=float)
                if arr.ndim != 2:
                    raise ValidationError(f"{name}: expected a 2-d matrix, got shape {arr.shape}")
                arr.setflags(write=False)
                object.__setattr__(self, name, arr)
        n_b, n_a = self.a_to_b.shape
        n_g = self.b_to_g.shape[0]
        expected = {
            "b_to_a": (n_a, n_b),
            "b_to_g": (n_g, n_b),
            "a_to_g": (n_g, n_a),
            "gap_a_to_b": (n_b, n_a),
            "gap_b_to_a": (n_a, n_b),
        }
        problems = []
        for name, shape in expected.items():
            value = getattr(self, name)
            if value is not None and value.shape != shape:
                problems.append(f"{name}: shape {value.shape}, expected {shape}")
        if problems:
            raise ValidationError(problems)
        for name, sign in BLOCK_SIGNS.items():
            problems += sign_violations(name, getattr(self, name), sign)
        for name in ("gap_a_to_b", "gap_b_to_a"):
            value = getattr(self, name)
            if value is not None:
                problems += sign_violations(name, value, +1)
        if (self.gap_a_to_b is None) != (self.gap_b_to_a is None):
            problems.append("gap junction blocks must be given together")
        elif self.gap_a_to_b is not None:
            if not np.array_equal(self.gap_a_to_b > 0, self.gap_b_to_a.T > 0):
                problems.append("gap junctions must be symmetric: gap_a_to_b and gap_b_to_a.T differ in support")
        if problems:
            raise ValidationError(problems)

    @classmethod
    def zeros(cls, n_b: int, n_a: int, n_g: int) -> "ConnectivityWeights":
        return cls(
            a_to_b=np.zeros((n_b, n_a)),
            b_to_a=np.zeros((n_a, n_b)),
            b_to_g=np.zeros((n_g, n_b)),
            a_to_g=np.zeros((n_g, n_a)),
        )

    @classmethod
    def from_blocks(cls, n_b: int, n_a: int, n_g: int, **blocks) -> "ConnectivityWeights":
        """Build from a subset of blocks; missing chemical blocks are zero."""
        shapes = {"a_to_b": (n_b, n_a), "b_to_a": (n_a, n_b), "b_to_g": (n_g, n_b), "a_to_g": (n_g, n_a)}
        kw = {}
        for name, shape in shapes.items():
            value = blocks.pop(name, None)
            kw[name] = np.zeros(shape) if value is None else np.asarray(value, dtype=float).reshape(shape)
        kw.update(blocks)
        return cls(**kw)

    @property
    def n_b(self) -> int:
        return self.a_to_b.shape[0]

    @property
    def n_a(self) -> int:
        return self.a_to_b.shape[1]

    @property
    def n_g(self) -> int:
        return self.b_to_g.shape[0]

    @property
    def has_gaps(self) -> bool:
        return self.gap_a_to_b is not None


def gap_blocks_from_conductance(conductance, capacitance_b, capacitance_a):
    """Gap blocks from a symmetric conductance table ``g[i, j]`` (B cell i, A cell j).

    Returns ``(gap_a_to_b, gap_b_to_a)`` = ``(g / C_B, g.T / C_A)``.
    """
    g = np.asarray(conductance, dtype=float)
    cb = np.broadcast_to(np.asarray(capacitance_b, dtype=float), (g.shape[0],))
    ca = np.broadcast_to(np.asarray(capacitance_a, dtype=float), (g.shape[1],))
    if np.any(cb <= 0) or np.any(ca <= 0):
        raise ConfigurationError("capacitances must be positive")
    return g / cb[:, None], g.T / ca[:, None]


def _block_matrix(spec: Mapping, post: np.ndarray, pre: np.ndarray, name: str) -> np.ndarray:
    kind = spec.get("kind", "none")
    shape = (len(post), len(pre))
    if kind == "none":
        return np.zeros(shape)
    if kind == "one_to_one":
        if shape[0] != shape[1]:
            raise ConfigurationError(f"{name}: one_to_one pooling needs equal cell counts, got {shape}")
        return float(spec["weight"]) * np.eye(shape[0])
    if kind == "gaussian":
        w0 = float(spec["weight"])
        r = float(spec["radius_mm"])
        cutoff = float(spec.get("cutoff", 3.0))
        if not r > 0:
            raise ConfigurationError(f"{name}: radius_mm must be positive")
        d2 = ((post[:, None, :] - pre[None, :, :]) ** 2).sum(axis=-1)
        m = w0 * np.exp(-d2 / (2 * r * r))
        m[d2 > (cutoff * r) ** 2] = 0.0
        return m
    if kind == "matrix":
        m = np.asarray(spec["values"], dtype=float)
        if m.shape != shape:
            raise ConfigurationError(f"{name}: matrix shape {m.shape}, expected {shape}")
        return m.copy()
    raise ConfigurationError(f"{name}: unknown profile kind {kind!r}")


def build_connectivity(
    layout: LayerLayout,
    profile: Mapping[str, Mapping],
    seed: Optional[int] = None,
) -> ConnectivityWeights:
    """Build weights from per-block profile descriptors.

    ``profile`` maps block names (``a_to_b``, ``b_to_a``, ``b_to_g``,
    ``a_to_g`` and optionally ``gap``) to descriptors::

        {"kind": "gaussian", "weight": -0.5, "radius_mm": 0.2, "cutoff": 3.0}
        {"kind": "one_to_one", "weight": 1.0}
        {"kind": "matrix", "values": [[...], ...]}
        {"kind": "none"}

    A ``jitter`` entry (fraction < 1) multiplies every nonzero weight of the
    block by ``1 + jitter * U(-1, 1)`` drawn from ``seed``. The ``gap``
    descriptor uses ``conductance`` instead of ``weight`` plus
    ``capacitance_b`` / ``capacitance_a``.
    """
    unknown = set(profile) - set(BLOCK_SIGNS) - {"gap"}
    if unknown:
        raise ConfigurationError(f"unknown connectivity block(s) {sorted(unknown)}")
    rng = np.random.default_rng(seed)
    pos = {layer: layout.positions(layer) for layer in LAYERS}
    blocks, problems = {}, []
    for name, sign in BLOCK_SIGNS.items():
        spec = profile.get(name, {"kind": "none"})
        w = spec.get("weight")
        if w is not None and float(w) * sign < 0:
            problems.append(f"{name}: weight {w} has the wrong sign")
            continue
        post, pre = BLOCK_LAYERS[name]
        m = _block_matrix(spec, pos[post], pos[pre], name)
        jitter = float(spec.get("jitter", 0.0))
        if jitter:
            if not 0 <= jitter < 1:
                raise ConfigurationError(f"{name}: jitter must be in [0, 1)")
            m = m * (1.0 + jitter * rng.uniform(-1.0, 1.0, size=m.shape))
        problems += sign_violations(name, m, sign)
        blocks[name] = m
    if problems:
        raise ValidationError(problems)
    gap = profile.get("gap")
    if gap is not None and gap.get("kind", "none") != "none":
        spec = dict(gap)
        spec["weight"] = spec.pop("conductance")
        if float(spec["weight"]) < 0:
            raise ValidationError("gap: conductance must be >= 0")
        g = _block_matrix(spec, pos["B"], pos["A"], "gap")
        blocks["gap_a_to_b"], blocks["gap_b_to_a"] = gap_blocks_from_conductance(
            g, spec.get("capacitance_b", 1.0), spec.get("capacitance_a", 1.0)
        )
    return ConnectivityWeights(**blocks)


# --------------------------------------------------------------------------
# parameters and network
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class GainControl:
    """Piecewise-linear gain control of B cell output.

    The activity obeys ``dA/dt = -A / tau_a + h_b * N_B(V_B)`` and silences
    the B cell's synapses while ``A > theta_a``.
    """

    tau_a_ms: float
    h_b: float
    theta_a: float = 2.0 / 3.0

    def __post_init__(self):
        if not self.tau_a_ms > 0:
            raise ConfigurationError("gain control tau_a_ms must be positive")


@dataclass(frozen=True)
class CellParameters:
    """Time constants (ms, scalar or per cell), thresholds (mV) and LNP parameters."""

    tau_b_ms: object
    tau_a_ms: object
    tau_g_ms: object
    theta_b_mv: float = 0.0
    theta_a_mv: float = 0.0
    theta_g_mv: float = 0.0
    sigma_g_mv: float = 1.0
    gain: Optional[GainControl] = None
    sigma_s: float = 0.0

    def __post_init__(self):
        problems = []
        for name in ("tau_b_ms", "tau_a_ms", "tau_g_ms"):
            arr = np.asarray(getattr(self, name), dtype=float)
            if np.any(~(arr > 0)):
                problems.append(f"{name}: time constants must be strictly positive")
        if not self.sigma_g_mv > 0:
            problems.append("sigma_g_mv must be positive")
        if self.sigma_s < 0:
            problems.append("sigma_s must be non-negative")
        if problems:
            raise ValidationError(problems)


def _per_cell(value, n: int, name: str) -> np.ndarray:
    arr = np.asarray(value, dtype=float)
    if arr.ndim == 0:
        return np.full(n, float(arr))
    if arr.shape != (n,):
        raise ConfigurationError(f"{name}: expected a scalar or {n} values, got shape {arr.shape}")
    return arr.copy()


@dataclass(frozen=True, eq=False)
class RetinaNetwork:
    """Weights, cell parameters and (optionally) the lattice they live on."""

    weights: ConnectivityWeights
    params: CellParameters
    layout: Optional[LayerLayout] = None

    def __post_init__(self):
        if self.layout is not None:
            got = (self.weights.n_b, self.weights.n_a, self.weights.n_g)
            want = (self.layout.n_b, self.layout.n_a, self.layout.n_g)
            if got != want:
                raise ConfigurationError(f"weights sized for {got} cells but layout has {want}")
        # materialise per-cell vectors (validates their lengths)
        self.tau  # noqa: B018

    @property
    def n_b(self) -> int:
        return self.weights.n_b

    @property
    def n_a(self) -> int:
        return self.weights.n_a

    @property
    def n_g(self) -> int:
        return self.weights.n_g

    @property
    def n(self) -> int:
        """Number of voltage variables."""
        return self.n_b + self.n_a + self.n_g

    @property
    def n_rectifiable(self) -> int:
        return self.n_b + self.n_a

    @property
    def has_gain(self) -> bool:
        return self.params.gain is not None

    @property
    def state_dim(self) -> int:
        return self.n + (self.n_b if self.has_gain else 0)

    @property
    def slice_b(self) -> slice:
        return slice(0, self.n_b)

    @property
    def slice_a(self) -> slice:
        return slice(self.n_b, self.n_b + self.n_a)

    @property
    def slice_g(self) -> slice:
        return slice(self.n_b + self.n_a, self.n)

    @property
    def slice_activity(self) -> slice:
        return slice(self.n, self.state_dim)

    @cached_property
    def tau(self) -> np.ndarray:
        """Membrane time constants of all voltage variables (ms), gap junctions excluded."""
        p = self.params
        tau = np.concatenate(
            [
                _per_cell(p.tau_b_ms, self.n_b, "tau_b_ms"),
                _per_cell(p.tau_a_ms, self.n_a, "tau_a_ms"),
                _per_cell(p.tau_g_ms, self.n_g, "tau_g_ms"),
            ]
        )
        tau.setflags(write=False)
        return tau

    @cached_property
    def inverse_effective_tau(self) -> np.ndarray:
        """``1 / tau'``: leak plus total gap-junction conductance over capacitance."""
        inv = 1.0 / self.tau
        w = self.weights
        if w.has_gaps:
            inv = inv.copy()
            inv[self.slice_b] += w.gap_a_to_b.sum(axis=1)
            inv[self.slice_a] += w.gap_b_to_a.sum(axis=1)
        inv.setflags(write=False)
        return inv

    @property
    def effective_tau(self) -> np.ndarray:
        return 1.0 / self.inverse_effective_tau

    @cached_property
    def thresholds(self) -> np.ndarray:
        """Rectification thresholds of the B and A cells."""
        p = self.params
        th = np.concatenate([np.full(self.n_b, p.theta_b_mv), np.full(self.n_a, p.theta_a_mv)])
        th.setflags(write=False)
        return th

    def rest_label(self) -> "DomainLabel":
        return DomainLabel.rest(self.n_rectifiable, self.n_b if self.has_gain else None)

    def check_rest_state(self) -> "FixedPoint":
        """Fixed point of the non-rectified domain; raises if it lies outside it."""
        fp = fixed_point(assemble_transport(self, self.rest_label()))
        if not fp.in_domain:
            raise RestStateError(
                "the rest state -L0^-1 C0 is not in the non-rectified domain "
                "(thresholds and weights are inconsistent)"
            )
        return fp


# --------------------------------------------------------------------------
# domains
# --------------------------------------------------------------------------


class DomainLabel:
    """Rectification (and gain) bits of one phase-space domain.

    ``rectified[alpha]`` is eta_alpha for the B cells followed by the A cells.
    ``gain_controlled[i]`` is ``1 - g_i`` for B cell i, or ``None`` without
    gain control. The packed integer is ``sum eta_alpha 2**alpha`` with the
    gain-controlled flags stacked above the rectification bits, so the rest
    domain always packs to 0.
    """

    __slots__ = ("rectified", "gain_controlled", "_packed")

    def __init__(self, rectified, gain_controlled=None):
        r = np.array(rectified, dtype=bool).ravel()
        r.setflags(write=False)
        self.rectified = r
        if gain_controlled is not None:
            g = np.array(gain_controlled, dtype=bool).ravel()
            g.setflags(write=False)
        else:
            g = None
        self.gain_controlled = g
        self._packed = None

    @classmethod
    def rest(cls, n_rectifiable: int, n_gain: Optional[int] = None) -> "DomainLabel":
        return cls(np.zeros(n_rectifiable, bool), None if n_gain is None else np.zeros(n_gain, bool))

    @classmethod
    def from_packed(cls, n: int, n_rectifiable: int, n_gain: Optional[int] = None) -> "DomainLabel":
        total = n_rectifiable + (n_gain or 0)
        if n < 0 or n >> total:
            raise ValueError(f"label {n} does not fit in {total} bits")
        bits = np.array([(n >> k) & 1 for k in range(total)], dtype=bool)
        gain = None if n_gain is None else bits[n_rectifiable:]
        return cls(bits[:n_rectifiable], gain)

    @property
    def eta(self) -> np.ndarray:
        return self.rectified.astype(np.uint8)

    @property
    def gain_bits(self) -> Optional[np.ndarray]:
        """g_i = 1 while B cell i is not gain controlled."""
        if self.gain_controlled is None:
            return None
        return (~self.gain_controlled).astype(np.uint8)

    @property
    def packed(self) -> int:
        if self._packed is None:
            bits = self.rectified
            if self.gain_controlled is not None:
                bits = np.concatenate([bits, self.gain_controlled])
            n = 0
            for k in np.flatnonzero(bits):
                n |= 1 << int(k)
            self._packed = n
        return self._packed

    @property
    def size(self) -> tuple[int, Optional[int]]:
        return len(self.rectified), None if self.gain_controlled is None else len(self.gain_controlled)

    def flipped(self, rect_cells=(), gain_cells=()) -> "DomainLabel":
        r = self.rectified.copy()
        r[list(rect_cells)] ^= True
        g = None
        if self.gain_controlled is not None:
            g = self.gain_controlled.copy()
            g[list(gain_cells)] ^= True
        return DomainLabel(r, g)

    def __eq__(self, other):
        if not isinstance(other, DomainLabel):
            return NotImplemented
        return self.size == other.size and self.packed == other.packed

    def __hash__(self):
        return hash((self.size, self.packed))

    def __repr__(self):
        return f"DomainLabel({self.packed})"


def rectification_guards(state: np.ndarray, network: RetinaNetwork) -> np.ndarray:
    """``V_alpha - theta_alpha`` for every B and A cell (negative means rectified)."""
    x = np.asarray(state, dtype=float)
    return x[..., : network.n_rectifiable] - network.thresholds


def gain_guards(state: np.ndarray, network: RetinaNetwork) -> Optional[np.ndarray]:
    """``theta_a - activity`` for every B cell (negative means gain controlled)."""
    if not network.has_gain:
        return None
    x = np.asarray(state, dtype=float)
    return network.params.gain.theta_a - x[..., network.slice_activity]


def classify_domain(state, network: RetinaNetwork) -> DomainLabel:
    """Domain containing ``state``.

    A cell sitting exactly on its threshold is not rectified, and an activity
    exactly at ``theta_a`` is not gain controlled.
    """
    x = np.asarray(state, dtype=float)
    if x.shape != (network.state_dim,):
        raise ValueError(f"state has shape {x.shape}, expected ({network.state_dim},)")
    rect = rectification_guards(x, network) < 0
    gain = gain_guards(x, network)
    return DomainLabel(rect, None if gain is None else gain < 0)


# --------------------------------------------------------------------------
# transport operators
# --------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class TransportOperator:
    """Drift ``dX/dt = L X + C + F(t)`` valid inside one domain."""

    label: DomainLabel
    matrix: np.ndarray
    constant: np.ndarray
    network: RetinaNetwork = field(repr=False)

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    @cached_property
    def spectrum(self):
        from .spectral import eigendecompose

        return eigendecompose(self)


def _projections(network: RetinaNetwork, label: DomainLabel):
    nb = network.n_b
    eta = label.rectified
    d_b = (~eta[:nb]).astype(float)
    d_a = (~eta[nb:]).astype(float)
    d_b_out = d_b.copy()
    if label.gain_controlled is not None:
        d_b_out *= ~label.gain_controlled
    return d_b, d_a, d_b_out


def assemble_transport(network: RetinaNetwork, label: DomainLabel) -> TransportOperator:
    """Transport operator and constant vector of the domain ``label``.

    Chemical blocks are right-multiplied by the projection onto the
    presynaptic cells that are neither rectified nor (for B cells) gain
    controlled; gap-junction blocks are added without projection.
    """
    n_rect, n_gain = label.size
    if n_rect != network.n_rectifiable:
        raise AssemblyError(f"label has {n_rect} rectification bits, network has {network.n_rectifiable} B+A cells")
    if (n_gain is None) != (not network.has_gain) or (n_gain is not None and n_gain != network.n_b):
        raise AssemblyError("gain-control bits of the label do not match the network")

    w = network.weights
    p = network.params
    sb, sa, sg = network.slice_b, network.slice_a, network.slice_g
    d_b, d_a, d_b_out = _projections(network, label)

    dim = network.state_dim
    L = np.zeros((dim, dim))
    C = np.zeros(dim)
    idx = np.arange(network.n)
    L[idx, idx] = -network.inverse_effective_tau

    L[sb, sa] = w.a_to_b * d_a
    L[sa, sb] = w.b_to_a * d_b_out
    L[sg, sb] = w.b_to_g * d_b_out
    L[sg, sa] = w.a_to_g * d_a
    if w.has_gaps:
        L[sb, sa] += w.gap_a_to_b
        L[sa, sb] += w.gap_b_to_a

    C[sb] = -p.theta_a_mv * (w.a_to_b @ d_a)
    C[sa] = -p.theta_b_mv * (w.b_to_a @ d_b_out)
    C[sg] = -p.theta_b_mv * (w.b_to_g @ d_b_out) - p.theta_a_mv * (w.a_to_g @ d_a)

    if network.has_gain:
        gc = p.gain
        act = network.slice_activity
        ia = np.arange(network.n, dim)
        L[ia, ia] = -1.0 / gc.tau_a_ms
        L[act, sb] = gc.h_b * np.diag(d_b)
        C[act] = -gc.h_b * p.theta_b_mv * d_b

    L.setflags(write=False)
    C.setflags(write=False)
    return TransportOperator(label, L, C, network)


@dataclass(frozen=True)
class FixedPoint:
    state: np.ndarray
    in_domain: bool
    residual: float
    condition: float


def fixed_point(operator: TransportOperator, max_condition: float = 1e12) -> FixedPoint:
    """Unique fixed point ``-L^-1 C`` of a domain and whether it lies in that domain."""
    L = operator.matrix
    cond = float(np.linalg.cond(L))
    if not math.isfinite(cond) or cond > max_condition:
        raise SpectralError(
            f"transport operator of domain {operator.label.packed} is singular or "
            f"near-singular (condition number {cond:.3g} > {max_condition:.3g})"
        )
    x = np.linalg.solve(L, -operator.constant)
    residual = float(np.max(np.abs(L @ x + operator.constant), initial=0.0))
    inside = classify_domain(x, operator.network) == operator.label
    return FixedPoint(x, bool(inside), residual, cond)
