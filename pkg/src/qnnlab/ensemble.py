"""Restricted Haar ensemble: sampler, frame potentials and averaged-kernel predictions.

A restricted Haar unitary fixes the first ``N`` basis vectors up to phases and is
Haar on the complement; with ``N >= d - 1`` it is fully diagonal.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from math import factorial

import numpy as np

from .qsim import InvalidDimensionError, haar_unitary, make_rng


@dataclass
class EnsembleReport:
    d: int
    N_data: int | None
    k: int
    mc_estimate: float
    mc_std_error: float
    analytic: float | None
    analytic_is_bound: bool
    sample_count: int
    seed: object = None
    extra: dict = field(default_factory=dict)

    @property
    def z_score(self) -> float:
        if self.analytic is None or self.mc_std_error == 0:
            return float("nan")
        return (self.mc_estimate - self.analytic) / self.mc_std_error

    def to_dict(self) -> dict:
        return {"d": self.d, "N": self.N_data, "k": self.k, "mc": self.mc_estimate,
                "mc_std_error": self.mc_std_error, "analytic": self.analytic,
                "analytic_is_lower_bound": self.analytic_is_bound, "pairs": self.sample_count,
                "seed": self.seed, **self.extra}


def sample_rh(d: int, N: int, rng: np.random.Generator) -> np.ndarray:
    """One restricted Haar unitary: ``diag(e^{i phi_1..N}) (+) Haar(d - N)``."""
    if d < 1:
        raise InvalidDimensionError("d must be >= 1")
    if not 0 <= N <= d:
        raise ValueError(f"N must lie in [0, d], got N={N}, d={d}")
    if N >= d - 1:
        return np.diag(np.exp(1j * rng.uniform(0, 2 * np.pi, size=d)))
    u = np.zeros((d, d), dtype=complex)
    u[np.arange(N), np.arange(N)] = np.exp(1j * rng.uniform(0, 2 * np.pi, size=N))
    u[N:, N:] = haar_unitary(d - N, rng)
    return u


def rh_sampler(d: int, N: int):
    return lambda rng: sample_rh(d, N, rng)


def haar_sampler(d: int):
    return lambda rng: haar_unitary(d, rng)


def frame_potential_samples(sampler, k: int, pairs: int, rng: np.random.Generator) -> np.ndarray:
    """``|tr(U^dagger V)|^{2k}`` for independent pairs ``(U, V)``."""
    out = np.empty(pairs)
    for i in range(pairs):
        u = sampler(rng)
        v = sampler(rng)
        out[i] = abs(np.vdot(u, v)) ** (2 * k)
    return out


def frame_potential_mc(sampler, k: int, pairs: int, rng: np.random.Generator, d: int | None = None,
                       N: int | None = None, analytic: float | None = None, is_bound: bool = False,
                       seed=None) -> EnsembleReport:
    """Monte-Carlo ``k``-th frame potential with its standard error."""
    if k < 1:
        raise ValueError("k must be >= 1")
    if pairs < 2:
        raise ValueError("pairs must be >= 2")
    s = frame_potential_samples(sampler, k, pairs, rng)
    if d is None:
        d = sampler(make_rng(0)).shape[0]
    return EnsembleReport(d, N, k, float(s.mean()), float(s.std(ddof=1) / np.sqrt(pairs)), analytic, is_bound, pairs, seed)


def fp_haar(k: int) -> float:
    """``k!`` (valid for ``d >= k``)."""
    return float(factorial(k))


def fp_rh_exact2(N: int, d: int) -> float:
    """Exact second frame potential of the restricted Haar ensemble."""
    if not 0 <= N <= d:
        raise ValueError(f"N must lie in [0, d], got N={N}, d={d}")
    if N <= d - 2:
        return float(2 * N * N + 3 * N + 2)
    return float(2 * d * d - d)


def fp_rh_lower(N: int, d: int, k: int) -> float:
    """Combinatorial lower bound on the ``k``-th restricted Haar frame potential.

    The double sum holds for ``1 <= N < d - 1``.  With no data the ensemble is
    plain Haar and ``k!`` is returned.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    if not 0 <= N <= d:
        raise ValueError(f"N must lie in [0, d], got N={N}, d={d}")
    if N == 0:
        return fp_haar(k)
    total = 0
    if N < d - 1:
        for k1 in range(0, k + 1, 2):
            for k2 in range(0, k - k1 + 1):
                c = factorial(k) // (factorial(k1 // 2) ** 2 * factorial(k2) * factorial(k - k1 - k2))
                total += c * N ** (k - k1 - k2) * factorial(k1 // 2 + k2)
    else:
        for k1 in range(0, k + 1, 2):
            total += factorial(k) // (factorial(k1 // 2) ** 2 * factorial(k - k1)) * d ** (k - k1)
    return float(total)


def _check_o(o):
    o = np.asarray(o, float)
    if np.any(o < 0) or np.any(o > 1):
        raise ValueError("o must lie in [0, 1] for a projector observable")
    return o


def predicted_K_diag(L: int, d: int, o, exact: bool = True):
    """Ensemble-average diagonal QNTK at convergence."""
    o = _check_o(o)
    if L < 1 or d < 2:
        raise ValueError("need L >= 1 and d >= 2")
    if exact:
        return L * d * o * (1 - o) / (2 * (d * d - 1))
    return L / (2 * d) * o * (1 - o)


def predicted_lambda_diag(L: int, d: int, o, exact: bool = False):
    """Ensemble-average diagonal relative dQNTK at convergence."""
    o = _check_o(o)
    if L < 1 or d < 2:
        raise ValueError("need L >= 1 and d >= 2")
    if exact:
        return -(2 * (d + 2) / (d + 3) * ((d + 2) * o - 2) + (L - 1) * d * d * (2 * o - 1) / (d * d - 1)) / (4 * d)
    return -(2 * (d * o - 2) + L * (2 * o - 1)) / (4 * d)


def predicted_lambda_slope(d: int, o) -> float:
    """``d lambda / d L`` of the asymptotic form."""
    return -(2 * np.asarray(o, float) - 1) / (4 * d)


def aligned_unitary(U: np.ndarray, inputs: np.ndarray, targets: np.ndarray) -> np.ndarray:
    """``T = B_out^dagger U B_in`` with the data and target states as the leading basis vectors.

    ``inputs`` and ``targets`` are ``(N, d)`` orthonormal rows; each is completed
    to a basis with a QR step so that a converged circuit becomes block diagonal.
    """
    def complete(rows):
        N, d = rows.shape
        m = np.concatenate([rows.T, np.eye(d, dtype=complex)], axis=1)
        q, _ = np.linalg.qr(m)
        q = q[:, :d]
        q[:, :N] = rows.T  # undo QR phases on the pinned columns
        return q

    return complete(targets).conj().T @ U @ complete(inputs)


@dataclass
class KernelComparison:
    L: int
    d: int
    o: np.ndarray
    K_measured: np.ndarray
    K_predicted: np.ndarray
    lam_measured: np.ndarray
    lam_predicted: np.ndarray
    fp_measured: EnsembleReport | None
    warnings: list

    def to_dict(self) -> dict:
        return {"L": self.L, "d": self.d, "o": self.o.tolist(), "K_measured": self.K_measured.tolist(),
                "K_predicted": self.K_predicted.tolist(), "lambda_measured": self.lam_measured.tolist(),
                "lambda_predicted": self.lam_predicted.tolist(),
                "frame_potential": None if self.fp_measured is None else self.fp_measured.to_dict(),
                "warnings": self.warnings}


def validate_against_training(traces, window_fraction: float = 0.1, frame_potential: bool = True,
                              unitaries=None, seed=0, o_mode: str = "limit") -> KernelComparison:
    """Compare late-time kernels of state-preparation runs with the ensemble averages.

    ``K`` is compared per datum with ``o`` measured as ``eps(inf) + y``.  With
    ``o_mode="window"`` the prediction is instead averaged over the late window at
    the instantaneous ``o(t) = eps(t) + y``, which is the only non-trivial
    comparison when ``o(inf)`` sits on the spectrum edge and the limit is 0.
    ``lambda`` uses a ratio of seed averages, ``<mu_aaa> / <K_aa>``.  If
    ``unitaries`` (one aligned converged unitary per trace) are supplied, their
    pairwise second frame potential is compared with the exact restricted Haar value.
    """
    if o_mode not in ("limit", "window"):
        raise ValueError(f"o_mode must be 'limit' or 'window', got {o_mode!r}")
    traces = list(traces)
    warns = []
    if len(traces) < 5:
        warns.append(f"only {len(traces)} traces: low statistical power")
        warnings.warn(warns[-1], RuntimeWarning, stacklevel=2)
    cfg = traces[0].config
    L, n, N = cfg["L"], cfg["n"], traces[0].N
    d = 1 << n
    Ks, mus, os, Kp = [], [], [], []
    for tr in traces:
        w = tr.late_window(window_fraction)
        i = np.arange(N)
        Ks.append(tr.K[w][:, i, i].mean(axis=0))
        mus.append(tr.mu[w][:, i, i, i].mean(axis=0))
        if o_mode == "window":
            ot = np.clip(tr.eps[w] + tr.targets, 0, 1)
            os.append(ot.mean(axis=0))
            Kp.append(predicted_K_diag(L, d, ot, exact=True).mean(axis=0))
        else:
            os.append(np.clip(tr.eps_inf + tr.targets, 0, 1))
            Kp.append(predicted_K_diag(L, d, os[-1], exact=True))
    Ks, mus, os = np.array(Ks), np.array(mus), np.array(os)
    o = os.mean(axis=0)
    K_meas = Ks.mean(axis=0)
    lam_meas = mus.mean(axis=0) / K_meas
    fp = None
    if frame_potential and unitaries is not None and len(unitaries) >= 2:
        us = list(unitaries)
        vals = np.array([abs(np.vdot(us[i], us[j])) ** 4 for i in range(len(us)) for j in range(i + 1, len(us))])
        fp = EnsembleReport(d, N, 2, float(vals.mean()), float(vals.std(ddof=1) / np.sqrt(vals.size)),
                            fp_rh_exact2(N, d), False, int(vals.size), seed)
    return KernelComparison(L, d, o, K_meas, np.mean(Kp, axis=0), lam_meas,
                            predicted_lambda_diag(L, d, o, exact=False), fp, warns)
