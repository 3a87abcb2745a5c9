"""Datasets of orthogonal input states with real targets, per-datum errors and the MSE loss."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .ansatz import Ansatz, evolve
from .qsim import (
    InvalidDimensionError,
    ProjectorObservable,
    ShapeError,
    as_observable,
    basis_state,
    haar_unitary,
    make_rng,
    pauli_z,
)

ORTHO_TOL = 1e-8


class OrthogonalityError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class Dataset:
    """``N`` input states (rows of ``states``), targets and one observable per datum.

    ``mode`` is ``"shared"`` when every datum is measured with the same observable
    and ``"stateprep"`` when datum ``a`` is measured with the projector onto its
    own target state.
    """

    states: np.ndarray = field(repr=False)
    targets: np.ndarray
    observables: tuple = field(repr=False)
    mode: str = "shared"
    meta: dict = field(default_factory=dict)
    allow_nonorthogonal: bool = False

    def __post_init__(self):
        s = np.atleast_2d(np.asarray(self.states, dtype=complex))
        y = np.atleast_1d(np.asarray(self.targets, dtype=float))
        if s.shape[0] == 0:
            raise ValueError("dataset is empty")
        if y.shape != (s.shape[0],):
            raise ShapeError(f"{s.shape[0]} states but {y.size} targets")
        obs = tuple(as_observable(o) for o in self.observables)
        if len(obs) == 1 and s.shape[0] > 1:
            obs = obs * s.shape[0]
        if len(obs) != s.shape[0]:
            raise ShapeError("need one observable per datum or a single shared one")
        norms = np.einsum("ij,ij->i", s.conj(), s).real
        if np.max(np.abs(norms - 1)) > 1e-10:
            raise ValueError("input states are not normalized")
        if not self.allow_nonorthogonal:
            g = s.conj() @ s.T
            off = np.abs(g - np.diag(np.diag(g)))
            if off.size and off.max() >= ORTHO_TOL:
                raise OrthogonalityError("input states are not pairwise orthogonal")
            if self.mode == "stateprep":
                t = np.array([o.target for o in obs])
                gt = t.conj() @ t.T
                if np.max(np.abs(gt - np.eye(len(obs)))) >= ORTHO_TOL:
                    raise OrthogonalityError("target states are not pairwise orthogonal")
        s.setflags(write=False)
        y.setflags(write=False)
        object.__setattr__(self, "states", s)
        object.__setattr__(self, "targets", y)
        object.__setattr__(self, "observables", obs)

    @property
    def N(self) -> int:
        return self.states.shape[0]

    @property
    def n_qubits(self) -> int:
        return self.observables[0].n_qubits

    def bounds(self) -> tuple[float, float]:
        """Achievable observable range (identical for all data in both modes)."""
        return self.observables[0].bounds()

    def observable_matrices(self) -> np.ndarray:
        return np.array([o.matrix() for o in self.observables])

    def to_dict(self) -> dict:
        return {
            "mode": self.mode,
            "targets": [float(v) for v in self.targets],
            "observables": [o.describe() for o in self.observables],
            **self.meta,
        }


def _input_states(n: int, N: int, seed, unitary, basis_indices):
    d = 1 << n
    if not 1 <= N <= d:
        raise OrthogonalityError(f"cannot place N={N} orthogonal states in dimension {d}")
    if basis_indices is None:
        basis_indices = list(range(N))
    if len(basis_indices) != N or len(set(basis_indices)) != N:
        raise ValueError("basis_indices must be N distinct integers")
    if unitary is None:
        unitary = haar_unitary(d, make_rng(seed))
    elif isinstance(unitary, str) and unitary == "identity":
        unitary = np.eye(d, dtype=complex)
    return np.array([unitary @ basis_state(n, i) for i in basis_indices]), list(basis_indices)


def orthogonal_dataset(n: int, N: int, targets, seed, observable=None, unitary=None, basis_indices=None) -> Dataset:
    """``N`` orthogonal states ``V|i>`` for a shared Haar ``V`` and one shared observable.

    Parameters
    ----------
    observable
        Anything accepted by :func:`as_observable`; defaults to ``sigma^z`` on the first qubit.
    unitary
        ``None`` to draw ``V`` from ``seed``, ``"identity"`` for plain basis states,
        or an explicit matrix.
    basis_indices
        Computational basis indices to rotate, default ``0..N-1``.
    """
    if not 1 <= n:
        raise InvalidDimensionError("n must be >= 1")
    targets = np.atleast_1d(np.asarray(targets, dtype=float))
    if targets.size != N:
        raise ShapeError(f"expected {N} targets, got {targets.size}")
    states, idx = _input_states(n, N, seed, unitary, basis_indices)
    obs = pauli_z(n, 0) if observable is None else as_observable(observable)
    meta = {"n_qubits": n, "data_seed": seed, "basis_indices": idx,
            "input_unitary": "haar" if unitary is None else "given"}
    return Dataset(states, targets, (obs,), mode="shared", meta=meta)


def stateprep_dataset(n: int, N: int, targets, seed, target_indices=None, unitary=None) -> Dataset:
    """Multi-state preparation: datum ``a`` is scored by ``|Phi_a><Phi_a|`` with ``Phi_a`` a basis state."""
    targets = np.atleast_1d(np.asarray(targets, dtype=float))
    if targets.size != N:
        raise ShapeError(f"expected {N} targets, got {targets.size}")
    states, idx = _input_states(n, N, seed, unitary, None)
    if target_indices is None:
        target_indices = list(range(N))
    obs = tuple(ProjectorObservable(basis_state(n, i)) for i in target_indices)
    meta = {"n_qubits": n, "data_seed": seed, "basis_indices": idx,
            "target_indices": list(target_indices),
            "input_unitary": "haar" if unitary is None else "given"}
    return Dataset(states, targets, obs, mode="stateprep", meta=meta)


def error(a: Ansatz, p, state: np.ndarray, target: float, O) -> float:
    """``<psi|U^dagger O U|psi> - y`` for a single datum."""
    O = as_observable(O)
    phi = evolve(a, p, state)
    return float(np.vdot(phi, O.apply(phi)).real) - float(target)


def errors(a: Ansatz, p, ds: Dataset) -> np.ndarray:
    """Vector of all ``N`` errors."""
    phi = evolve(a, p, ds.states.T)
    return np.array([np.vdot(phi[:, i], o.apply(phi[:, i])).real for i, o in enumerate(ds.observables)]) - ds.targets


def mse(eps) -> float:
    eps = np.asarray(eps, dtype=float)
    if eps.size == 0:
        raise ValueError("empty error vector")
    return float(eps @ eps) / (2 * eps.size)


def loss(a: Ansatz, p, ds: Dataset) -> float:
    """``(1/2N) sum_a eps_a^2``."""
    return mse(errors(a, p, ds))
