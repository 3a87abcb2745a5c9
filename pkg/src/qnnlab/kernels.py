"""Kernel hierarchy built from per-datum gradients and Hessians.

Index conventions follow the tensors' definitions: ``mu[g, a, b] = grad_g . H_a . grad_b``
and ``lam[g, a, b] = mu[g, a, b] / sqrt(K[g, g] K[b, b])``.  The middle index ``a``
(the Hessian owner) is absent from the normalization of ``lam``; this is deliberate.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .qsim import ShapeError

PSD_TOL = -1e-10


class InvalidKernelError(ValueError):
    pass


def _grads(grads) -> np.ndarray:
    G = np.asarray(grads, dtype=float)
    if G.ndim != 2:
        raise ShapeError(f"gradients must be an (N, L) stack, got shape {G.shape}")
    return G


def qntk(grads) -> np.ndarray:
    """``K[a, b] = <grad eps_a, grad eps_b>`` from an ``(N, L)`` gradient stack."""
    G = _grads(grads)
    K = G @ G.T
    K = 0.5 * (K + K.T)
    if K.size and np.linalg.eigvalsh(K)[0] < PSD_TOL * max(1.0, np.trace(K)):
        warnings.warn("QNTK has an eigenvalue below the PSD tolerance", RuntimeWarning, stacklevel=2)
    return K


def angle_matrix(K) -> np.ndarray:
    """Cosine of the angle between gradients; NaN where a diagonal entry is zero."""
    K = np.asarray(K, dtype=float)
    dg = np.diag(K)
    if np.any(dg < 0):
        raise InvalidKernelError("QNTK has a negative diagonal entry")
    s = np.sqrt(dg)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = K / np.outer(s, s)
    out[np.outer(s, s) == 0] = np.nan
    return out


def dqntk(grads, hessians) -> np.ndarray:
    """``mu[g, a, b] = grad_g^T H_a grad_b``."""
    G = _grads(grads)
    H = np.asarray(hessians, dtype=float)
    if H.shape != (G.shape[0], G.shape[1], G.shape[1]):
        raise ShapeError(f"Hessian stack shape {H.shape} does not match gradients {G.shape}")
    return np.einsum("gl,alm,bm->gab", G, H, G)


def relative_dqntk(mu, K) -> np.ndarray:
    """``lam[g, a, b] = mu[g, a, b] / sqrt(K[g, g] K[b, b])``; NaN where the denominator is zero."""
    mu = np.asarray(mu, dtype=float)
    s = np.sqrt(np.clip(np.diag(np.asarray(K, dtype=float)), 0, None))
    den = s[:, None, None] * s[None, None, :]
    with np.errstate(divide="ignore", invalid="ignore"):
        out = mu / den
    out[np.broadcast_to(den == 0, out.shape)] = np.nan
    return out


def f_matrix(K, eps, lam) -> np.ndarray:
    """``f[a, b] = sum_g sqrt(K[g, g]) eps_g lam[g, a, b]``."""
    w = np.sqrt(np.clip(np.diag(np.asarray(K, float)), 0, None)) * np.asarray(eps, float)
    return np.einsum("g,gab->ab", w, np.asarray(lam, float))


def lam_diag(lam) -> np.ndarray:
    """``lam[a, a, a]`` for each ``a``."""
    lam = np.asarray(lam)
    i = np.arange(lam.shape[0])
    return lam[i, i, i]


def charges(K_star, eps_star, lam) -> np.ndarray:
    """Fixed-point charges ``C_a = K*_aa - 2 lam_aaa eps*_a``.

    ``K_star`` may be the diagonal vector or a full matrix.
    """
    Ks = np.asarray(K_star, dtype=float)
    if Ks.ndim == 2:
        Ks = np.diag(Ks)
    return Ks - 2 * lam_diag(lam) * np.asarray(eps_star, float)


def loss_hessian(grads, hessians, eps) -> np.ndarray:
    """``sum_b (grad_b grad_b^T + eps_b H_b)``, without a ``1/N`` prefactor."""
    G = _grads(grads)
    H = np.asarray(hessians, dtype=float)
    out = G.T @ G + np.einsum("b,blm->lm", np.asarray(eps, float), H)
    return 0.5 * (out + out.T)


def hessian_spectrum(H) -> np.ndarray:
    """Eigenvalues in descending order."""
    return np.linalg.eigvalsh(np.asarray(H, float))[::-1]


@dataclass
class KernelSnapshot:
    step: int
    errors: np.ndarray
    K: np.ndarray
    angles: np.ndarray
    mu: np.ndarray
    lam: np.ndarray
    charges: np.ndarray | None = None
    extra: dict = field(default_factory=dict)

    @property
    def lambda_norm1(self) -> float:
        return float(np.nansum(np.abs(self.lam)))

    def to_dict(self) -> dict:
        def clean(x):
            x = np.asarray(x, dtype=float)
            return np.where(np.isfinite(x), x, None).tolist()

        d = {"step": int(self.step), "errors": clean(self.errors), "K": clean(self.K),
             "angles": clean(self.angles), "mu": clean(self.mu), "lambda": clean(self.lam)}
        if self.charges is not None:
            d["charges"] = clean(self.charges)
        d.update(self.extra)
        return d


def snapshot(step: int, eps, grads, hessians) -> KernelSnapshot:
    K = qntk(grads)
    mu = dqntk(grads, hessians)
    return KernelSnapshot(int(step), np.asarray(eps, float).copy(), K, angle_matrix(K), mu, relative_dqntk(mu, K))
