"""Dense statevector core.

States are plain ``complex128`` numpy vectors of length ``2**n``.  Qubit 0 is
the most significant bit of the basis index, so ``sigma^z`` on the first qubit
is ``+1`` on indices ``< 2**(n-1)``.

Pauli strings are applied matrix-free: ``P|x> = phase[x] |x ^ flip>``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Union

import numpy as np

MAX_QUBITS = 12
NORM_TOL = 1e-10
UNITARY_TOL = 1e-9


class ShapeError(ValueError):
    """Operands have incompatible dimensions."""


class InvalidDimensionError(ValueError):
    pass


class InvalidObservableError(ValueError):
    pass


def make_rng(seed) -> np.random.Generator:
    """The single PRNG family used across the package (PCG64)."""
    return np.random.Generator(np.random.PCG64(seed))


def n_qubits_of(dim: int) -> int:
    n = int(dim).bit_length() - 1
    if dim < 1 or (1 << n) != dim:
        raise InvalidDimensionError(f"dimension {dim} is not a power of two")
    return n


def basis_state(n: int, index: int = 0) -> np.ndarray:
    if not 1 <= n <= MAX_QUBITS:
        raise InvalidDimensionError(f"n_qubits must be in [1, {MAX_QUBITS}], got {n}")
    s = np.zeros(1 << n, dtype=complex)
    s[index] = 1.0
    return s


def check_state(s: np.ndarray, n: int | None = None) -> np.ndarray:
    """Validate a normalized state vector and return it as complex128."""
    s = np.asarray(s, dtype=complex)
    if s.ndim != 1:
        raise ShapeError(f"state must be 1-D, got shape {s.shape}")
    m = n_qubits_of(s.size)
    if n is not None and m != n:
        raise ShapeError(f"state has {m} qubits, expected {n}")
    if abs(np.vdot(s, s).real - 1.0) > NORM_TOL:
        raise ValueError("state is not normalized")
    return s


def haar_unitary(dim: int, rng: np.random.Generator) -> np.ndarray:
    """Haar-random unitary via QR of a complex Ginibre matrix.

    The diagonal of ``R`` is rotated to be real positive so that the result is
    exactly Haar distributed (Mezzadri 2007).
    """
    if dim < 1:
        raise InvalidDimensionError(f"dim must be >= 1, got {dim}")
    z = (rng.standard_normal((dim, dim)) + 1j * rng.standard_normal((dim, dim))) / np.sqrt(2.0)
    q, r = np.linalg.qr(z)
    d = np.diagonal(r)
    return q * (d / np.abs(d))


def is_unitary(u: np.ndarray, tol: float = UNITARY_TOL) -> bool:
    u = np.asarray(u)
    if u.ndim != 2 or u.shape[0] != u.shape[1]:
        return False
    return float(np.max(np.abs(u.conj().T @ u - np.eye(u.shape[0])))) <= tol


@dataclass(frozen=True)
class PauliString:
    """An n-qubit Pauli operator such as ``"XZYI"`` (letter 0 acts on qubit 0)."""

    letters: str

    def __post_init__(self):
        letters = self.letters.upper()
        if not letters or set(letters) - set("IXYZ"):
            raise ValueError(f"invalid Pauli string {self.letters!r}")
        object.__setattr__(self, "letters", letters)

    @property
    def n_qubits(self) -> int:
        return len(self.letters)

    @property
    def is_global(self) -> bool:
        """True if no letter is the identity."""
        return "I" not in self.letters

    @cached_property
    def flip_mask(self) -> int:
        n = self.n_qubits
        return sum(1 << (n - 1 - q) for q, c in enumerate(self.letters) if c in "XY")

    @cached_property
    def phases(self) -> np.ndarray:
        """``phases[x]`` such that ``P|x> = phases[x] |x ^ flip_mask>``."""
        n = self.n_qubits
        idx = np.arange(1 << n)
        ph = np.ones(1 << n, dtype=complex)
        for q, c in enumerate(self.letters):
            bit = (idx >> (n - 1 - q)) & 1
            if c == "Z":
                ph *= 1 - 2 * bit
            elif c == "Y":
                # Y|0> = i|1>, Y|1> = -i|0>
                ph *= 1j * (1 - 2 * bit)
        return ph

    def apply(self, s: np.ndarray) -> np.ndarray:
        """Return ``P s``; ``s`` may be a vector or a ``(dim, k)`` column stack."""
        dim = 1 << self.n_qubits
        if s.shape[0] != dim:
            raise ShapeError(f"Pauli string on {self.n_qubits} qubits vs state dim {s.shape[0]}")
        src = np.arange(dim) ^ self.flip_mask
        if s.ndim == 1:
            return self.phases[src] * s[src]
        return self.phases[src, None] * s[src]

    def matrix(self) -> np.ndarray:
        """Dense matrix; only for oracles and small systems."""
        return self.apply(np.eye(1 << self.n_qubits, dtype=complex))

    def __str__(self):
        return self.letters


def apply_pauli_rotation(p: PauliString, theta: float, s: np.ndarray) -> np.ndarray:
    """``exp(-i theta P / 2) s = cos(theta/2) s - i sin(theta/2) P s``."""
    return np.cos(theta / 2) * s - 1j * np.sin(theta / 2) * p.apply(s)


def apply_unitary(u: np.ndarray, s: np.ndarray) -> np.ndarray:
    if u.ndim != 2 or u.shape[1] != s.shape[0]:
        raise ShapeError(f"unitary of shape {u.shape} cannot act on state of length {s.shape[0]}")
    return u @ s


# -- observables -------------------------------------------------------------


@dataclass(frozen=True)
class PauliObservable:
    """Expectation of a single Pauli string; range [-1, 1] unless it is the identity."""

    pauli: PauliString

    @property
    def n_qubits(self) -> int:
        return self.pauli.n_qubits

    def apply(self, s: np.ndarray) -> np.ndarray:
        return self.pauli.apply(s)

    def matrix(self) -> np.ndarray:
        return self.pauli.matrix()

    def bounds(self) -> tuple[float, float]:
        if set(self.pauli.letters) == {"I"}:
            return 1.0, 1.0
        return -1.0, 1.0

    def describe(self) -> dict:
        return {"kind": "pauli", "letters": self.pauli.letters}


@dataclass(frozen=True, eq=False)
class ProjectorObservable:
    """Rank-1 projector ``|phi><phi|``; range [0, 1]."""

    target: np.ndarray = field(repr=False)

    def __post_init__(self):
        object.__setattr__(self, "target", check_state(self.target))

    @property
    def n_qubits(self) -> int:
        return n_qubits_of(self.target.size)

    def apply(self, s: np.ndarray) -> np.ndarray:
        if s.ndim == 1:
            return self.target * np.vdot(self.target, s)
        return np.outer(self.target, self.target.conj() @ s)

    def matrix(self) -> np.ndarray:
        return np.outer(self.target, self.target.conj())

    def bounds(self) -> tuple[float, float]:
        return 0.0, 1.0

    def describe(self) -> dict:
        nz = np.flatnonzero(np.abs(self.target) > 1e-12)
        if nz.size == 1 and abs(abs(self.target[nz[0]]) - 1) < 1e-12:
            return {"kind": "projector", "basis_index": int(nz[0])}
        return {"kind": "projector", "amplitudes": [[z.real, z.imag] for z in self.target]}


@dataclass(frozen=True, eq=False)
class MatrixObservable:
    """Arbitrary Hermitian matrix (small systems, tests)."""

    mat: np.ndarray = field(repr=False)

    def __post_init__(self):
        m = np.asarray(self.mat, dtype=complex)
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise InvalidObservableError(f"observable must be square, got {m.shape}")
        if np.max(np.abs(m - m.conj().T)) > 1e-12:
            raise InvalidObservableError("observable is not Hermitian")
        object.__setattr__(self, "mat", m)

    @property
    def n_qubits(self) -> int:
        return n_qubits_of(self.mat.shape[0])

    def apply(self, s: np.ndarray) -> np.ndarray:
        return self.mat @ s

    def matrix(self) -> np.ndarray:
        return self.mat

    def bounds(self) -> tuple[float, float]:
        w = np.linalg.eigvalsh(self.mat)
        return float(w[0]), float(w[-1])

    def describe(self) -> dict:
        return {"kind": "matrix", "dim": int(self.mat.shape[0])}


Observable = Union[PauliObservable, ProjectorObservable, MatrixObservable]


def as_observable(o) -> Observable:
    """Coerce a Pauli string, letter string, projector target or matrix."""
    if isinstance(o, (PauliObservable, ProjectorObservable, MatrixObservable)):
        return o
    if isinstance(o, PauliString):
        return PauliObservable(o)
    if isinstance(o, str):
        return PauliObservable(PauliString(o))
    a = np.asarray(o)
    if a.ndim == 1:
        return ProjectorObservable(a)
    return MatrixObservable(a)


def pauli_z(n: int, qubit: int = 0) -> PauliObservable:
    """``sigma^z`` on one qubit (0-based), identity elsewhere."""
    letters = ["I"] * n
    letters[qubit] = "Z"
    return PauliObservable(PauliString("".join(letters)))


def expectation(s: np.ndarray, o) -> float:
    """``<s|O|s>`` for a normalized state."""
    o = as_observable(o)
    if o.n_qubits != n_qubits_of(s.shape[0]):
        raise ShapeError("observable and state sizes differ")
    return float(np.vdot(s, o.apply(s)).real)
