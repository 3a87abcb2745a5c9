"""Gradient-descent training with kernel snapshots at a geometric cadence."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np

from . import kernels as kn
from ._engine import DIVERGED, Engine
from .ansatz import Ansatz, build_hea, build_rpa, init_params
from .derivatives import error_derivatives
from .qsim import make_rng
from .taskdata import Dataset, errors, mse, orthogonal_dataset, stateprep_dataset

DEFAULT_ETA = 1e-3
DIVERGENCE_FACTOR = 1e6
LAMBDA_WINDOW = 11


class NumericalAbort(RuntimeError):
    """Training diverged; ``trace`` holds everything recorded before the abort."""

    def __init__(self, msg, step=None, eta=None):
        super().__init__(msg)
        self.step, self.eta, self.trace = step, eta, None


@dataclass
class ExperimentConfig:
    """Everything needed to reproduce a run.

    ``observable`` is a Pauli string such as ``"ZIII"``, the shorthand ``"Z1"``
    (``sigma^z`` on the first qubit) or ``"projector"`` for multi-state preparation.
    Seeds default to values derived from ``seed``.
    """

    targets: tuple = (0.3, -0.5)
    n: int = 4
    L: int = 48
    ansatz: str = "rpa"
    D: int | None = None
    observable: str = "Z1"
    eta: float = DEFAULT_ETA
    steps: int = 100_000
    seed: int = 0
    structure_seed: int | None = None
    data_seed: int | None = None
    init_seed: int | None = None
    dense_until: int = 100
    record_factor: float = 1.05
    window_fraction: float = 0.2
    basis_indices: tuple | None = None

    def __post_init__(self):
        self.targets = tuple(float(v) for v in np.atleast_1d(self.targets))
        if not self.targets:
            raise ValueError("targets: at least one target is required")
        if not self.eta > 0:
            raise ValueError("eta: must be positive")
        if self.steps < 0:
            raise ValueError("steps: must be >= 0")
        if self.ansatz not in ("rpa", "hea"):
            raise ValueError(f"ansatz: unknown kind {self.ansatz!r}")
        if self.ansatz == "hea" and self.D is None:
            raise ValueError("D: required for the hea ansatz")
        if self.record_factor <= 1:
            raise ValueError("record_factor: must exceed 1")
        if not 0 < self.window_fraction <= 0.5:
            raise ValueError("window_fraction: must lie in (0, 0.5]")
        derived = np.random.SeedSequence(self.seed).generate_state(3)
        if self.structure_seed is None:
            self.structure_seed = int(derived[0])
        if self.data_seed is None:
            self.data_seed = int(derived[1])
        if self.init_seed is None:
            self.init_seed = int(derived[2])

    @property
    def N(self) -> int:
        return len(self.targets)

    def build(self) -> tuple[Ansatz, Dataset, np.ndarray]:
        if self.ansatz == "rpa":
            a = build_rpa(self.n, self.L, self.structure_seed)
        else:
            a = build_hea(self.n, self.D, self.structure_seed)
        if self.observable == "projector":
            ds = stateprep_dataset(self.n, self.N, self.targets, self.data_seed)
        else:
            obs = self.observable
            if obs.upper() == "Z1":
                obs = "Z" + "I" * (self.n - 1)
            ds = orthogonal_dataset(self.n, self.N, self.targets, self.data_seed, observable=obs,
                                    basis_indices=list(self.basis_indices) if self.basis_indices else None)
        return a, ds, init_params(a, self.init_seed)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["targets"] = list(self.targets)
        if d["basis_indices"] is not None:
            d["basis_indices"] = list(d["basis_indices"])
        return d


def record_schedule(steps: int, dense_until: int = 100, factor: float = 1.05) -> np.ndarray:
    """Every step below ``dense_until``, then geometric growth by ``factor``; always ends at ``steps``."""
    out = list(range(min(steps, dense_until) + 1))
    t = out[-1]
    while t < steps:
        t = min(steps, max(t + 1, int(np.ceil(t * factor))))
        out.append(t)
    return np.array(out, dtype=np.int64)


@dataclass
class TrainingTrace:
    config: dict
    steps: np.ndarray
    eps: np.ndarray          # (T, N)
    loss: np.ndarray         # (T,)
    K: np.ndarray            # (T, N, N)
    mu: np.ndarray           # (T, N, N, N)
    lam: np.ndarray          # (T, N, N, N), raw
    params: np.ndarray       # (T, L)
    bounds: tuple
    targets: np.ndarray
    status: str = "ok"
    warnings: list = field(default_factory=list)
    eps_inf: np.ndarray | None = None
    hessian_final: dict | None = None

    @property
    def N(self) -> int:
        return self.eps.shape[1]

    @property
    def t(self) -> np.ndarray:
        return self.steps.astype(float)

    @property
    def angles(self) -> np.ndarray:
        return np.array([kn.angle_matrix(k) for k in self.K])

    @property
    def lam_smooth(self) -> np.ndarray:
        return smooth_lambda(self.mu, self.K)

    @property
    def lambda_norm1(self) -> np.ndarray:
        return np.nansum(np.abs(self.lam_smooth), axis=(1, 2, 3))

    @property
    def residuals(self) -> np.ndarray:
        if self.eps_inf is None:
            raise ValueError("eps_inf has not been estimated")
        return self.eps - self.eps_inf

    def snapshot(self, i: int) -> kn.KernelSnapshot:
        return kn.KernelSnapshot(int(self.steps[i]), self.eps[i], self.K[i], kn.angle_matrix(self.K[i]),
                                 self.mu[i], self.lam[i], extra={"lambda_smoothed": _nan_list(self.lam_smooth[i])})

    def late_window(self, fraction: float = 0.1) -> np.ndarray:
        """Indices of recorded steps with ``t >= (1 - fraction) * t_final``."""
        t = self.t
        return np.flatnonzero(t >= (1 - fraction) * t[-1])

    def save(self, path) -> None:
        """Write the trace to a compressed ``.npz`` archive."""
        hf = self.hessian_final or {}
        np.savez_compressed(
            path, config=json.dumps(self.config), steps=self.steps, eps=self.eps, loss=self.loss, K=self.K,
            mu=self.mu, lam=self.lam, params=self.params, bounds=np.array(self.bounds), targets=self.targets,
            status=self.status, warnings=json.dumps(self.warnings),
            eps_inf=np.array([]) if self.eps_inf is None else self.eps_inf,
            hf_grads=hf.get("grads", np.zeros((0, 0))), hf_hessians=hf.get("hessians", np.zeros((0, 0, 0))),
            hf_eps=hf.get("eps", np.zeros(0)))

    @classmethod
    def load(cls, path) -> "TrainingTrace":
        z = np.load(path, allow_pickle=False)
        hf = None
        if z["hf_grads"].size:
            hf = {"grads": z["hf_grads"], "hessians": z["hf_hessians"], "eps": z["hf_eps"]}
        return cls(config=json.loads(str(z["config"])), steps=z["steps"], eps=z["eps"], loss=z["loss"], K=z["K"],
                   mu=z["mu"], lam=z["lam"], params=z["params"], bounds=tuple(z["bounds"].tolist()),
                   targets=z["targets"], status=str(z["status"]), warnings=json.loads(str(z["warnings"])),
                   eps_inf=z["eps_inf"] if z["eps_inf"].size else None, hessian_final=hf)


def _nan_list(x):
    x = np.asarray(x, dtype=float)
    return np.where(np.isfinite(x), x, None).tolist()


def smooth_lambda(mu: np.ndarray, K: np.ndarray, window: int = LAMBDA_WINDOW) -> np.ndarray:
    """Ratio of centred window averages: ``<mu_gab> / sqrt(<K_gg><K_bb>)``."""
    T = mu.shape[0]
    h = window // 2
    out = np.empty_like(mu)
    dg = np.diagonal(K, axis1=1, axis2=2)
    for i in range(T):
        lo, hi = max(0, i - h), min(T, i + h + 1)
        m = mu[lo:hi].mean(axis=0)
        s = np.sqrt(np.clip(dg[lo:hi].mean(axis=0), 0, None))
        den = s[:, None, None] * s[None, None, :]
        with np.errstate(divide="ignore", invalid="ignore"):
            out[i] = np.where(den > 0, m / den, np.nan)
    return out


def gd_step(a: Ansatz, p, ds: Dataset, eta: float = DEFAULT_ETA, S: np.ndarray | None = None) -> np.ndarray:
    """One gradient-descent update ``theta - (eta/N) sum_a eps_a grad eps_a``.

    With ``S`` given, the update is built from the transformed errors ``S eps`` and
    gradients ``S grad``; for orthogonal ``S`` the result is unchanged.
    """
    if not eta > 0:
        raise ValueError("eta must be positive")
    eps, G, _ = error_derivatives(a, p, ds, hessian=False)
    if S is not None:
        eps, G = S @ eps, S @ G
    return np.asarray(p, float) - (eta / ds.N) * (eps @ G)


def gauge_orthogonal(N: int, seed) -> np.ndarray:
    """Random orthogonal ``N x N`` matrix (QR of a Gaussian, sign-fixed)."""
    if N < 1:
        raise ValueError("N must be >= 1")
    z = make_rng(seed).standard_normal((N, N))
    q, r = np.linalg.qr(z)
    return q * np.sign(np.diag(r))


def gauge_replay(a: Ansatz, p, ds: Dataset, S: np.ndarray, steps: int, eta: float = DEFAULT_ETA) -> dict:
    """Run ``steps`` plain and ``S``-transformed gradient steps side by side.

    Returns the max parameter deviation between the two trajectories and the max
    change of loss and ``tr(K)`` under ``S`` along the transformed one.
    """
    p1 = np.asarray(p, float).copy()
    p2 = p1.copy()
    dp = dl = dk = 0.0
    for _ in range(steps):
        p1 = gd_step(a, p1, ds, eta)
        p2 = gd_step(a, p2, ds, eta, S=S)
        dp = max(dp, float(np.max(np.abs(p1 - p2))))
        e, G, _ = error_derivatives(a, p2, ds, hessian=False)
        Se, SG = S @ e, S @ G
        dl = max(dl, abs(mse(Se) - mse(e)))
        dk = max(dk, abs(np.trace(SG @ SG.T) - np.trace(G @ G.T)))
    return {"param_dev": dp, "loss_dev": float(dl), "trK_dev": float(dk)}


def run(config: ExperimentConfig, progress=None) -> TrainingTrace:
    """Train per ``config`` and return the full trace with ``eps_inf`` filled in."""
    a, ds, theta = config.build()
    eng = Engine(a, ds)
    sched = record_schedule(config.steps, config.dense_until, config.record_factor)
    T, N, L = len(sched), ds.N, a.L
    eps = np.empty((T, N))
    K = np.empty((T, N, N))
    mu = np.empty((T, N, N, N))
    params = np.empty((T, L))
    warns = []
    status = "ok"

    def record(i, th):
        e, G, H = error_derivatives(a, th, ds)
        eps[i] = e
        K[i] = G @ G.T
        mu[i] = kn.dqntk(G, H)
        params[i] = th
        return e, G, H

    e0, _, _ = record(0, theta)
    cap = DIVERGENCE_FACTOR * max(mse(e0), 1e-300)
    done = 1
    for i in range(1, T):
        st, k, _ = eng.advance(theta, int(sched[i] - sched[i - 1]), config.eta, cap)
        if st == DIVERGED:
            status = f"diverged at step {int(sched[i - 1] + k)} with eta={config.eta}"
            warns.append(status)
            break
        record(i, theta)
        done = i + 1
        if progress is not None:
            progress(int(sched[i]), config.steps)
    e_last, G, H = error_derivatives(a, params[done - 1], ds)
    sl = slice(0, done)
    losses = np.array([mse(x) for x in eps[sl]])
    if np.any(np.diff(losses) > 1e-12 * max(losses[0], 1e-300)):
        warns.append("loss increased between recorded steps; eta may be too large")
    tr = TrainingTrace(
        config=config.to_dict(), steps=sched[sl].copy(), eps=eps[sl], loss=losses, K=K[sl], mu=mu[sl],
        lam=_raw_lambda(mu[sl], K[sl]),
        params=params[sl], bounds=ds.bounds(), targets=np.array(ds.targets), status=status, warnings=warns,
        hessian_final={"grads": G, "hessians": H, "eps": e_last},
    )
    tr.eps_inf = estimate_eps_infinity(tr, config.window_fraction)
    if status != "ok":
        err = NumericalAbort(status, step=int(sched[done - 1]), eta=config.eta)
        err.trace = tr
        raise err
    return tr


def _raw_lambda(mu, K):
    return np.array([kn.relative_dqntk(m, k) for m, k in zip(mu, K)])


# -- eps(infinity) -------------------------------------------------------------


def _loglog_slope(t, y):
    m = (t > 0) & (y > 0)
    if m.sum() < 3:
        return np.nan
    return float(np.polyfit(np.log(t[m]), np.log(y[m]), 1)[0])


def estimate_eps_infinity(trace: TrainingTrace, window_fraction: float = 0.2) -> np.ndarray:
    """Late-time error plateau for every datum.

    The base estimate is the mean over the final ``window_fraction`` of the run.
    When the target is attainable (inside the observable range or on its
    boundary) and ``log|eps|`` is still falling over that window, the plateau is
    exactly zero.  For unattainable targets a still-decaying approach is
    extrapolated with :func:`extrapolate_plateau` instead of averaged.
    """
    if not 0 < window_fraction <= 0.5:
        raise ValueError("window_fraction must lie in (0, 0.5]")
    t = trace.t
    w = np.flatnonzero(t >= (1 - window_fraction) * t[-1])
    if w.size < 2:
        w = np.arange(max(0, len(t) - 2), len(t))
    lo, hi = trace.bounds
    tol = 1e-12
    out = np.empty(trace.N)
    for a in range(trace.N):
        e = trace.eps[:, a]
        base = float(np.mean(e[w]))
        y = trace.targets[a]
        attainable = lo - tol <= y <= hi + tol
        slope = _loglog_slope(t[w], np.abs(e[w]))
        if attainable:
            out[a] = 0.0 if (np.isfinite(slope) and slope < 0) or np.max(np.abs(e[w])) < 1e-12 else base
        else:
            out[a] = extrapolate_plateau(t, e, base)
    return out


def extrapolate_plateau(t: np.ndarray, e: np.ndarray, fallback: float) -> float:
    """Limit of a monotone tail approaching a constant.

    Differences of the recorded series are fitted on the final decade by either an
    exponential or a power law; the fitted tail is then summed analytically.  The
    ``fallback`` (window mean) is returned when no decaying signal is found.
    """
    m = t >= t[-1] / 10
    if m.sum() < 8 or t[-1] < 20:
        return fallback
    tt, ee = t[m], e[m]
    dt = np.diff(tt)
    de = np.diff(ee) / dt
    tm = 0.5 * (tt[1:] + tt[:-1])
    if not (np.all(de > 0) or np.all(de < 0)):
        return fallback
    r = np.abs(de)
    if np.any(r <= 0):
        return fallback
    sgn = np.sign(de[0])
    # exponential: |e'| = A exp(-k t) -> remaining = |e'(T)| / k
    ke, _ = np.polyfit(tm, np.log(r), 1)
    res_e = np.sum((np.log(r) - np.polyval(np.polyfit(tm, np.log(r), 1), tm)) ** 2)
    # power: |e'| = A t^p, p < -1 -> remaining = |e'(T)| T / (-p - 1)
    kp, _ = np.polyfit(np.log(tm), np.log(r), 1)
    res_p = np.sum((np.log(r) - np.polyval(np.polyfit(np.log(tm), np.log(r), 1), np.log(tm))) ** 2)
    T = t[-1]
    if res_e <= res_p and ke < 0:
        rate = -ke
        tail = np.exp(np.polyval(np.polyfit(tm, np.log(r), 1), T)) / rate
    elif kp < -1:
        tail = np.exp(np.polyval(np.polyfit(np.log(tm), np.log(r), 1), np.log(T))) * T / (-kp - 1)
    else:
        return fallback
    return float(e[-1] + sgn * tail)
