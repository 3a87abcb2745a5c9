"""Compiled gradient-descent inner loop (adjoint method, O(L N d^2) per step)."""
from __future__ import annotations

import numpy as np
from numba import njit

OK, DIVERGED = 0, 1


@njit(cache=True)
def _errors(theta, flips, phases, has_fixed, fixed, psi, obs, y, chi, out_state):
    L = theta.shape[0]
    N, d = psi.shape
    tmp = np.empty(d, dtype=np.complex128)
    eps = np.empty(N)
    for a in range(N):
        s = psi[a].copy()
        for l in range(L):
            c = np.cos(0.5 * theta[l])
            sn = np.sin(0.5 * theta[l])
            f = flips[l]
            for x in range(d):
                src = x ^ f
                tmp[x] = c * s[x] - 1j * sn * phases[l, src] * s[src]
            chi[l, a, :] = tmp
            if has_fixed[l]:
                for i in range(d):
                    acc = 0j
                    for j in range(d):
                        acc += fixed[l, i, j] * tmp[j]
                    s[i] = acc
            else:
                s[:] = tmp
        out_state[a, :] = s
        acc = 0.0
        for i in range(d):
            v = 0j
            for j in range(d):
                v += obs[a, i, j] * s[j]
            acc += (s[i].conjugate() * v).real
        eps[a] = acc - y[a]
    return eps


@njit(cache=True)
def _loss_grad(theta, flips, phases, has_fixed, fixed, fixed_dag, psi, obs, y, chi, out_state):
    """Errors at ``theta`` and the gradient of the mean-square loss."""
    L = theta.shape[0]
    N, d = psi.shape
    eps = _errors(theta, flips, phases, has_fixed, fixed, psi, obs, y, chi, out_state)
    grad = np.zeros(L)
    b = np.empty(d, dtype=np.complex128)
    tmp = np.empty(d, dtype=np.complex128)
    for a in range(N):
        phi = out_state[a]
        for i in range(d):
            v = 0j
            for j in range(d):
                v += obs[a, i, j] * phi[j]
            b[i] = eps[a] * v
        for l in range(L - 1, -1, -1):
            if has_fixed[l]:
                for i in range(d):
                    acc = 0j
                    for j in range(d):
                        acc += fixed_dag[l, i, j] * b[j]
                    tmp[i] = acc
                b[:] = tmp
            f = flips[l]
            g = 0.0
            for x in range(d):
                src = x ^ f
                g += (b[x].conjugate() * phases[l, src] * chi[l, a, src]).imag
            grad[l] += g
            c = np.cos(0.5 * theta[l])
            sn = np.sin(0.5 * theta[l])
            for x in range(d):
                src = x ^ f
                tmp[x] = c * b[x] + 1j * sn * phases[l, src] * b[src]
            b[:] = tmp
    return eps, grad / N


@njit(cache=True)
def run_steps(theta, nsteps, eta, flips, phases, has_fixed, fixed, fixed_dag, psi, obs, y, loss_cap):
    """Advance ``theta`` in place by up to ``nsteps`` gradient-descent steps.

    Returns ``(status, steps_done, eps)`` with ``eps`` evaluated at the final ``theta``.
    """
    L = theta.shape[0]
    N, d = psi.shape
    chi = np.empty((L, N, d), dtype=np.complex128)
    out_state = np.empty((N, d), dtype=np.complex128)
    for k in range(nsteps):
        eps, grad = _loss_grad(theta, flips, phases, has_fixed, fixed, fixed_dag, psi, obs, y, chi, out_state)
        lo = 0.0
        for a in range(N):
            lo += eps[a] * eps[a]
        lo /= 2 * N
        if not np.isfinite(lo) or lo > loss_cap:
            return DIVERGED, k, eps
        for l in range(L):
            theta[l] -= eta * grad[l]
    eps = _errors(theta, flips, phases, has_fixed, fixed, psi, obs, y, chi, out_state)
    return OK, nsteps, eps


class Engine:
    """Holds the flattened circuit and dataset for repeated compiled calls."""

    def __init__(self, ansatz, ds):
        self.flips, self.phases, self.has_fixed, self.fixed = ansatz.engine_arrays()
        self.fixed_dag = np.ascontiguousarray(np.conj(np.transpose(self.fixed, (0, 2, 1))))
        self.psi = np.ascontiguousarray(ds.states)
        self.obs = np.ascontiguousarray(ds.observable_matrices())
        self.y = np.ascontiguousarray(ds.targets, dtype=float)

    def advance(self, theta: np.ndarray, nsteps: int, eta: float, loss_cap: float = np.inf):
        return run_steps(theta, int(nsteps), float(eta), self.flips, self.phases, self.has_fixed,
                         self.fixed, self.fixed_dag, self.psi, self.obs, self.y, float(loss_cap))

    def loss_grad(self, theta: np.ndarray):
        L, (N, d) = theta.shape[0], self.psi.shape
        chi = np.empty((L, N, d), dtype=np.complex128)
        out = np.empty((N, d), dtype=np.complex128)
        return _loss_grad(theta, self.flips, self.phases, self.has_fixed, self.fixed, self.fixed_dag,
                          self.psi, self.obs, self.y, chi, out)
