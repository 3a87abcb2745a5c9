"""Brute-force reference implementations used by the test suite.

Each oracle avoids the code path it checks: dense matrix exponentials instead of
bit-twiddled rotations, explicit loops instead of einsum, finite differences
instead of analytic derivatives.  Not part of the public API.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import expm

from .ansatz import Ansatz
from .taskdata import Dataset

MAX_ORACLE_DIM = 256


@dataclass(frozen=True)
class OracleTolerance:
    absolute: float
    relative: float
    context: str = ""

    def __post_init__(self):
        if not (self.absolute > 0 and self.relative > 0):
            raise ValueError("tolerances must be positive")

    def close(self, a, b) -> bool:
        return bool(np.allclose(a, b, rtol=self.relative, atol=self.absolute))


def _dense_generator(letters: str) -> np.ndarray:
    single = {"I": np.eye(2), "X": np.array([[0, 1], [1, 0]]),
              "Y": np.array([[0, -1j], [1j, 0]]), "Z": np.diag([1.0, -1.0])}
    m = np.ones((1, 1), dtype=complex)
    for c in letters:
        m = np.kron(m, single[c])
    return m


def dense_circuit_oracle(a: Ansatz, p) -> np.ndarray:
    """Full circuit unitary as a product of dense ``expm`` layers."""
    if a.dim > MAX_ORACLE_DIM:
        raise ValueError(f"oracle dimension cap {MAX_ORACLE_DIM} exceeded (dim={a.dim})")
    p = np.asarray(p, float)
    U = np.eye(a.dim, dtype=complex)
    for lay, th in zip(a.layers, p):
        V = expm(-0.5j * th * _dense_generator(lay.generator.letters))
        U = V @ U
        if lay.fixed is not None:
            U = lay.fixed @ U
    return U


def dense_errors(a: Ansatz, p, ds: Dataset) -> np.ndarray:
    U = dense_circuit_oracle(a, p)
    out = np.empty(ds.N)
    for i, (s, O, y) in enumerate(zip(ds.states, ds.observable_matrices(), ds.targets)):
        phi = U @ s
        out[i] = np.real(np.conj(phi) @ O @ phi) - y
    return out


def dense_gd_step(a: Ansatz, p, ds: Dataset, eta: float, h: float = 1e-6) -> np.ndarray:
    """One gradient-descent step with a central-difference loss gradient on the dense circuit."""
    p = np.asarray(p, float)
    g = np.empty_like(p)
    for l in range(p.size):
        e = np.zeros_like(p)
        e[l] = h
        lp = np.sum(dense_errors(a, p + e, ds) ** 2)
        lm = np.sum(dense_errors(a, p - e, ds) ** 2)
        g[l] = (lp - lm) / (2 * h) / (2 * ds.N)
    return p - eta * g


def loop_qntk(G) -> np.ndarray:
    G = np.asarray(G, float)
    N, L = G.shape
    K = np.zeros((N, N))
    for a in range(N):
        for b in range(N):
            for l in range(L):
                K[a, b] += G[a, l] * G[b, l]
    return K


def loop_dqntk(G, H) -> np.ndarray:
    G, H = np.asarray(G, float), np.asarray(H, float)
    N, L = G.shape
    mu = np.zeros((N, N, N))
    for g in range(N):
        for a in range(N):
            for b in range(N):
                s = 0.0
                for l in range(L):
                    for m in range(L):
                        s += G[g, l] * H[a, l, m] * G[b, m]
                mu[g, a, b] = s
    return mu


def loop_relative_dqntk(mu, K) -> np.ndarray:
    N = K.shape[0]
    out = np.full((N, N, N), np.nan)
    for g in range(N):
        for a in range(N):
            for b in range(N):
                den = np.sqrt(K[g, g] * K[b, b])
                if den > 0:
                    out[g, a, b] = mu[g, a, b] / den
    return out


def fd_loss_hessian(a: Ansatz, p, ds: Dataset, h: float = 1e-4) -> np.ndarray:
    """Second differences of ``N * loss = sum eps^2 / 2`` on the dense circuit."""
    p = np.asarray(p, float)
    L = p.size

    def f(q):
        return 0.5 * np.sum(dense_errors(a, q, ds) ** 2)

    H = np.empty((L, L))
    for i in range(L):
        for j in range(i, L):
            ei = np.zeros(L)
            ej = np.zeros(L)
            ei[i] = h
            ej[j] = h
            v = (f(p + ei + ej) - f(p + ei - ej) - f(p - ei + ej) + f(p - ei - ej)) / (4 * h * h)
            H[i, j] = H[j, i] = v
    return H


@dataclass
class StepCheck:
    predicted: np.ndarray
    measured: np.ndarray

    @property
    def residual(self) -> float:
        return float(np.max(np.abs(self.measured - self.predicted)))


def eq5_step_oracle(a: Ansatz, p, ds: Dataset, eta: float, K=None, eps=None) -> StepCheck:
    """Linear-response error update ``-(eta/N) K eps`` against one dense step."""
    from .derivatives import error_derivatives

    if K is None or eps is None:
        eps, G, _ = error_derivatives(a, p, ds, hessian=False)
        K = G @ G.T
    pred = -(eta / ds.N) * (K @ eps)
    q = dense_gd_step(a, p, ds, eta)
    meas = dense_errors(a, q, ds) - dense_errors(a, p, ds)
    return StepCheck(pred, meas)


def eqK_step_oracle(a: Ansatz, p, ds: Dataset, eta: float) -> StepCheck:
    """Kernel update ``-(eta/N) sum_g eps_g (mu_gab + mu_gba)`` against the kernel after one step."""
    from .derivatives import error_derivatives

    eps, G, H = error_derivatives(a, p, ds)
    mu = loop_dqntk(G, H)
    pred = -(eta / ds.N) * (np.einsum("g,gab->ab", eps, mu) + np.einsum("g,gba->ab", eps, mu))
    q = dense_gd_step(a, p, ds, eta)
    _, G2, _ = error_derivatives(a, q, ds, hessian=False)
    return StepCheck(pred, loop_qntk(G2) - loop_qntk(G))


def halving_ratio(check, a: Ansatz, p, ds: Dataset, eta: float) -> float:
    """Residual at ``eta`` over residual at ``eta / 2``; about 4 for an O(eta^2) remainder."""
    return check(a, p, ds, eta).residual / check(a, p, ds, eta / 2).residual


def rk4_vs_exact_linear(A, x0, t: float, steps: int = 200) -> float:
    """Max deviation of fixed-step RK4 from ``expm(A t) x0`` for ``dx/dt = A x``."""
    A = np.asarray(A, float)
    x = np.asarray(x0, float).copy()
    h = t / steps
    for _ in range(steps):
        k1 = A @ x
        k2 = A @ (x + h / 2 * k1)
        k3 = A @ (x + h / 2 * k2)
        k4 = A @ (x + h * k3)
        x = x + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
    return float(np.max(np.abs(x - expm(A * t) @ x0)))
