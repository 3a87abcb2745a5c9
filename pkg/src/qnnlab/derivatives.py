"""Analytic first and second derivatives of per-datum errors, plus numerical oracles.

With ``P_k`` the product of the first ``k`` layers, the generator of layer ``k``
pulled back to the input frame is ``A_k = P_k^dagger X_k P_k``.  Writing
``M = U^dagger O U``, ``e_k = A_k psi`` and ``c_k = A_k M psi``:

    d eps / d theta_k            = -Im <e_k | M psi>
    d2 eps / d theta_j d theta_k = -1/2 Re(<e_j|c_k> - <e_j|M|e_k>),   j <= k

which are the commutator forms ``(i/2)<[A_k, M]>`` and ``-(1/4)<[A_j, [A_k, M]]>``.
"""
from __future__ import annotations

import numpy as np

from .ansatz import Ansatz, _check_params, evolve, prefix_unitaries
from .qsim import as_observable
from .taskdata import Dataset, error

FD_GRAD_STEP = 1e-5
FD_HESS_STEP = 1e-4


def _pulled_generators(a: Ansatz, p) -> np.ndarray:
    """``A[k] = P_k^dagger X_k P_k`` as an ``(L, d, d)`` stack, plus the full unitary."""
    P = prefix_unitaries(a, p)
    A = np.empty((a.L, a.dim, a.dim), dtype=complex)
    for k, lay in enumerate(a.layers):
        A[k] = P[k].conj().T @ lay.generator.apply(P[k])
    return A, P[a.L]


def _derivs_one(A: np.ndarray, U: np.ndarray, psi: np.ndarray, Omat: np.ndarray, target: float, hessian: bool):
    M = U.conj().T @ Omat @ U
    m = M @ psi
    eps = float(np.vdot(psi, m).real) - target
    E = A @ psi  # (L, d) rows e_k
    g = -(E.conj() @ m).imag
    if not hessian:
        return eps, g, None
    C = A @ m
    Ec = E.conj()
    H = -0.5 * (Ec @ C.T - Ec @ M @ E.T).real
    H = np.triu(H)
    H = H + np.triu(H, 1).T
    return eps, g, H


def grad_error(a: Ansatz, p, state: np.ndarray, target: float, O) -> np.ndarray:
    """Exact gradient of one datum's error, shape ``(L,)``."""
    A, U = _pulled_generators(a, p)
    return _derivs_one(A, U, np.asarray(state, complex), as_observable(O).matrix(), target, False)[1]


def hessian_error(a: Ansatz, p, state: np.ndarray, target: float, O) -> np.ndarray:
    """Exact Hessian of one datum's error, symmetric ``(L, L)``."""
    A, U = _pulled_generators(a, p)
    return _derivs_one(A, U, np.asarray(state, complex), as_observable(O).matrix(), target, True)[2]


def error_derivatives(a: Ansatz, p, ds: Dataset, hessian: bool = True):
    """Errors, gradients and (optionally) Hessians of all data in one pass.

    Returns
    -------
    eps : (N,) array
    G : (N, L) array, row ``a`` is the gradient of ``eps_a``
    H : (N, L, L) array or None
    """
    A, U = _pulled_generators(a, p)
    N, L = ds.N, a.L
    eps = np.empty(N)
    G = np.empty((N, L))
    H = np.empty((N, L, L)) if hessian else None
    mats = {}
    for i, o in enumerate(ds.observables):
        key = id(o)
        if key not in mats:
            mats[key] = o.matrix()
        e, g, h = _derivs_one(A, U, ds.states[i], mats[key], ds.targets[i], hessian)
        eps[i], G[i] = e, g
        if hessian:
            H[i] = h
    return eps, G, H


# -- oracles -------------------------------------------------------------------


def _eps_fn(a, state, target, O):
    O = as_observable(O)
    return lambda q: error(a, q, state, target, O)


def fd_grad(a: Ansatz, p, state, target, O, h: float = FD_GRAD_STEP) -> np.ndarray:
    """Central finite-difference gradient."""
    if h <= 0:
        raise ValueError("h must be positive")
    p = _check_params(a, p)
    f = _eps_fn(a, state, target, O)
    g = np.empty(a.L)
    for k in range(a.L):
        e = np.zeros(a.L)
        e[k] = h
        g[k] = (f(p + e) - f(p - e)) / (2 * h)
    return g


def fd_hessian(a: Ansatz, p, state, target, O, h: float = FD_HESS_STEP) -> np.ndarray:
    """Second-order central finite-difference Hessian."""
    if h <= 0:
        raise ValueError("h must be positive")
    p = _check_params(a, p)
    f = _eps_fn(a, state, target, O)
    L = a.L
    f0 = f(p)
    H = np.empty((L, L))
    eye = np.eye(L) * h
    for j in range(L):
        H[j, j] = (f(p + eye[j]) - 2 * f0 + f(p - eye[j])) / h**2
        for k in range(j + 1, L):
            v = (f(p + eye[j] + eye[k]) - f(p + eye[j] - eye[k])
                 - f(p - eye[j] + eye[k]) + f(p - eye[j] - eye[k])) / (4 * h**2)
            H[j, k] = H[k, j] = v
    return H


def shift_grad(a: Ansatz, p, state, target, O) -> np.ndarray:
    """Parameter-shift gradient ``[eps(theta + pi/2) - eps(theta - pi/2)] / 2``."""
    p = _check_params(a, p)
    f = _eps_fn(a, state, target, O)
    g = np.empty(a.L)
    for k in range(a.L):
        e = np.zeros(a.L)
        e[k] = np.pi / 2
        g[k] = (f(p + e) - f(p - e)) / 2
    return g


def shift_hessian_diag(a: Ansatz, p, state, target, O) -> np.ndarray:
    """Shift-rule curvature ``[eps(theta + pi) + eps(theta - pi) - 2 eps(theta)] / 4``.

    Along one Pauli angle the error is ``a + b cos(theta) + c sin(theta)``, which fixes
    the divisor at 4.
    """
    p = _check_params(a, p)
    f = _eps_fn(a, state, target, O)
    f0 = f(p)
    out = np.empty(a.L)
    for k in range(a.L):
        e = np.zeros(a.L)
        e[k] = np.pi
        out[k] = (f(p + e) + f(p - e) - 2 * f0) / 4
    return out
