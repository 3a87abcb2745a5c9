"""Layered variational circuits: the random Pauli ansatz and the hardware-efficient ansatz.

Every circuit is a sequence of ``L`` layers, layer ``l`` being ``W_l V_l(theta_l)``
with ``V_l(theta) = exp(-i theta X_l / 2)`` for a Pauli string ``X_l`` and ``W_l`` a
fixed unitary (``None`` meaning identity).  ``V_1`` acts first on the input, so

    U(theta) = W_L V_L ... W_1 V_1.

Layer indices are 0-based throughout.
"""
from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np

from .qsim import (
    MAX_QUBITS,
    InvalidDimensionError,
    PauliString,
    ShapeError,
    apply_pauli_rotation,
    haar_unitary,
    make_rng,
)


@dataclass(frozen=True, eq=False)
class Layer:
    generator: PauliString
    fixed: np.ndarray | None = field(default=None, repr=False)


@dataclass(frozen=True, eq=False)
class Ansatz:
    """Immutable circuit description with ``L`` trainable angles."""

    n_qubits: int
    layers: tuple
    kind: str = "custom"
    structure_seed: int | None = None
    depth: int | None = None

    def __post_init__(self):
        d = 1 << self.n_qubits
        for i, lay in enumerate(self.layers):
            if lay.generator.n_qubits != self.n_qubits:
                raise ShapeError(f"layer {i}: generator acts on {lay.generator.n_qubits} qubits")
            if lay.fixed is not None:
                if lay.fixed.shape != (d, d):
                    raise ShapeError(f"layer {i}: fixed unitary has shape {lay.fixed.shape}")
                lay.fixed.setflags(write=False)

    @property
    def L(self) -> int:
        return len(self.layers)

    @property
    def dim(self) -> int:
        return 1 << self.n_qubits

    @property
    def generators(self) -> list[str]:
        return [lay.generator.letters for lay in self.layers]

    def engine_arrays(self):
        """Flat arrays consumed by the compiled training loop.

        Returns ``(flips, phases, has_fixed, fixed)`` with shapes ``(L,)``,
        ``(L, d)``, ``(L,)`` and ``(L, d, d)``.
        """
        d, L = self.dim, self.L
        flips = np.array([lay.generator.flip_mask for lay in self.layers], dtype=np.int64)
        phases = np.array([lay.generator.phases for lay in self.layers], dtype=complex).reshape(L, d)
        has_fixed = np.array([lay.fixed is not None for lay in self.layers], dtype=np.bool_)
        fixed = np.zeros((L, d, d), dtype=complex)
        for i, lay in enumerate(self.layers):
            if lay.fixed is not None:
                fixed[i] = lay.fixed
        return flips, phases, has_fixed, fixed

    def fingerprint(self) -> str:
        """SHA-256 over generators and fixed unitaries."""
        h = hashlib.sha256()
        for lay in self.layers:
            h.update(lay.generator.letters.encode())
            if lay.fixed is not None:
                h.update(np.ascontiguousarray(lay.fixed).tobytes())
        return h.hexdigest()

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "n_qubits": self.n_qubits,
            "L": self.L,
            "depth": self.depth,
            "structure_seed": self.structure_seed,
            "generators": self.generators,
            "layer_order": "V_1 acts first; layer l applies V_l then W_l",
            "fingerprint": self.fingerprint(),
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "Ansatz":
        """Rebuild from :meth:`to_dict` output and check the fingerprint."""
        kind = doc["kind"]
        if kind == "rpa":
            a = build_rpa(doc["n_qubits"], doc["L"], doc["structure_seed"])
        elif kind == "hea":
            a = build_hea(doc["n_qubits"], doc["depth"], doc["structure_seed"])
        else:
            raise ValueError(f"cannot rebuild ansatz of kind {kind!r}")
        if "fingerprint" in doc and doc["fingerprint"] != a.fingerprint():
            raise ValueError("rebuilt ansatz does not match the stored fingerprint")
        return a


def _check_n(n: int, lo: int = 1):
    if not lo <= n <= MAX_QUBITS:
        raise InvalidDimensionError(f"n_qubits must be in [{lo}, {MAX_QUBITS}], got {n}")


def random_global_pauli(n: int, rng: np.random.Generator) -> PauliString:
    """Uniform Pauli string over ``{X, Y, Z}^n`` (no identity letter)."""
    return PauliString("".join("XYZ"[i] for i in rng.integers(0, 3, size=n)))


def build_rpa(n: int, L: int, structure_seed: int) -> Ansatz:
    """Random Pauli ansatz: each layer is a global Pauli rotation followed by a Haar unitary."""
    _check_n(n)
    if L < 1:
        raise ValueError(f"L must be >= 1, got {L}")
    rng = make_rng(structure_seed)
    layers = []
    for _ in range(L):
        p = random_global_pauli(n, rng)
        layers.append(Layer(p, haar_unitary(1 << n, rng)))
    return Ansatz(n, tuple(layers), kind="rpa", structure_seed=int(structure_seed))


def cnot_matrix(n: int, control: int, target: int) -> np.ndarray:
    d = 1 << n
    idx = np.arange(d)
    cbit = (idx >> (n - 1 - control)) & 1
    dst = idx ^ (cbit << (n - 1 - target))
    m = np.zeros((d, d))
    m[dst, idx] = 1.0
    return m.astype(complex)


def brickwall(n: int) -> np.ndarray:
    """CNOTs on pairs (0,1), (2,3), ... followed by (1,2), (3,4), ..."""
    u = np.eye(1 << n, dtype=complex)
    for start in (0, 1):
        for q in range(start, n - 1, 2):
            u = cnot_matrix(n, q, q + 1) @ u
    return u


def _single(n: int, q: int, letter: str) -> PauliString:
    s = ["I"] * n
    s[q] = letter
    return PauliString("".join(s))


def build_hea(n: int, D: int, structure_seed: int = 0) -> Ansatz:
    """Hardware-efficient ansatz: ``D`` blocks of RY on all qubits, RZ on all qubits, brickwall CNOTs.

    The entangler is attached as the fixed part of the last RZ layer in each block.
    The layout is deterministic; ``structure_seed`` is recorded only.
    """
    if n < 2:
        raise InvalidDimensionError("the hardware-efficient ansatz needs n >= 2 for its entangler")
    _check_n(n, 2)
    if D < 1:
        raise ValueError(f"D must be >= 1, got {D}")
    ent = brickwall(n)
    layers = []
    for _ in range(D):
        for q in range(n):
            layers.append(Layer(_single(n, q, "Y")))
        for q in range(n):
            layers.append(Layer(_single(n, q, "Z"), ent if q == n - 1 else None))
    return Ansatz(n, tuple(layers), kind="hea", structure_seed=int(structure_seed), depth=D)


def init_params(a: Ansatz, seed) -> np.ndarray:
    """Initial angles uniform on [0, 2 pi)."""
    return make_rng(seed).uniform(0.0, 2 * np.pi, size=a.L)


def _check_params(a: Ansatz, p) -> np.ndarray:
    p = np.asarray(p, dtype=float)
    if p.shape != (a.L,):
        raise ShapeError(f"expected {a.L} parameters, got shape {p.shape}")
    return p


def apply_layer(a: Ansatz, i: int, theta: float, s: np.ndarray) -> np.ndarray:
    lay = a.layers[i]
    s = apply_pauli_rotation(lay.generator, theta, s)
    if lay.fixed is not None:
        s = lay.fixed @ s
    return s


def evolve(a: Ansatz, p, s: np.ndarray) -> np.ndarray:
    """``U(theta) s``; ``s`` may be a vector or a ``(d, k)`` column stack."""
    p = _check_params(a, p)
    s = np.asarray(s, dtype=complex)
    if s.shape[0] != a.dim:
        raise ShapeError(f"state of length {s.shape[0]} vs ansatz dimension {a.dim}")
    for i in range(a.L):
        s = apply_layer(a, i, p[i], s)
    return s


def evolve_adjoint(a: Ansatz, p, s: np.ndarray) -> np.ndarray:
    """``U(theta)^dagger s``."""
    p = _check_params(a, p)
    s = np.asarray(s, dtype=complex)
    for i in reversed(range(a.L)):
        lay = a.layers[i]
        if lay.fixed is not None:
            s = lay.fixed.conj().T @ s
        s = apply_pauli_rotation(lay.generator, -p[i], s)
    return s


def segment_unitary(a: Ansatz, p, from_layer: int, to_layer: int) -> np.ndarray:
    """Product of layers ``[from_layer, to_layer)`` with the earliest acting first.

    ``segment_unitary(a, p, l, L) @ segment_unitary(a, p, 0, l)`` is the full circuit.
    """
    p = _check_params(a, p)
    if not 0 <= from_layer <= to_layer <= a.L:
        raise IndexError(f"invalid layer range [{from_layer}, {to_layer}) for L={a.L}")
    u = np.eye(a.dim, dtype=complex)
    for i in range(from_layer, to_layer):
        u = apply_layer(a, i, p[i], u)
    return u


def prefix_unitaries(a: Ansatz, p) -> np.ndarray:
    """Stack ``P[k] = segment_unitary(a, p, 0, k)`` for ``k = 0..L``; shape ``(L+1, d, d)``."""
    p = _check_params(a, p)
    out = np.empty((a.L + 1, a.dim, a.dim), dtype=complex)
    u = np.eye(a.dim, dtype=complex)
    out[0] = u
    for i in range(a.L):
        u = apply_layer(a, i, p[i], u)
        out[i + 1] = u
    return out
