"""Regime prediction and classification, fixed-point stability and the reduced kernel flow.

Regimes are named by the relation between ``S_E`` (data whose error vanishes)
and ``S_K`` (data whose diagonal kernel vanishes), with ``S_E | S_K`` the full
index set.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from numba import njit

from . import kernels as kn

FROZEN_KERNEL = "frozen-kernel"
FROZEN_ERROR = "frozen-error"
MIXED_FROZEN = "mixed-frozen"
CRITICAL_POINT = "critical-point"
CRITICAL_FROZEN_KERNEL = "critical-frozen-kernel"
CRITICAL_FROZEN_ERROR = "critical-frozen-error"
CRITICAL_MIXED_FROZEN = "critical-mixed-frozen"
INCONCLUSIVE = "inconclusive"

REGIMES = (FROZEN_KERNEL, FROZEN_ERROR, MIXED_FROZEN, CRITICAL_POINT,
           CRITICAL_FROZEN_KERNEL, CRITICAL_FROZEN_ERROR, CRITICAL_MIXED_FROZEN)
EXPONENTIAL_CLASS = (FROZEN_KERNEL, FROZEN_ERROR, MIXED_FROZEN)

BOUNDARY_TOL = 1e-12

# classification thresholds
R2_DECAY = 0.95
R2_AMBIGUOUS = 0.9
MODEL_MARGIN = 0.02
FINAL_ABS = 1e-6
MIN_DECAY_DECADES = 0.3
PLATEAU_DECADES = 0.3
# a fall this large over the final decade is decay whatever the fit quality
STRONG_DECAY_DECADES = 1.0


class FitDomainError(ValueError):
    pass


class SingularRatioError(ValueError):
    pass


@dataclass
class RegimeLabel:
    label: str
    S_E: frozenset
    S_K: frozenset
    N: int
    diagnostics: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"label": self.label, "S_E": sorted(i + 1 for i in self.S_E),
                "S_K": sorted(i + 1 for i in self.S_K), "N": self.N}


def label_from_sets(S_E, S_K, N: int) -> str:
    """Regime name from the two index sets (0-based indices)."""
    S_E, S_K = frozenset(S_E), frozenset(S_K)
    omega = frozenset(range(N))
    if S_E | S_K != omega:
        return INCONCLUSIVE
    if not S_E & S_K:
        if not S_K:
            return FROZEN_KERNEL
        if not S_E:
            return FROZEN_ERROR
        return MIXED_FROZEN
    if S_E == omega and S_K == omega:
        return CRITICAL_POINT
    if S_E == omega:
        return CRITICAL_FROZEN_KERNEL
    if S_K == omega:
        return CRITICAL_FROZEN_ERROR
    return CRITICAL_MIXED_FROZEN


def target_sets(targets, o_min: float, o_max: float):
    """``(S_E, S_K, kinds)``; kinds are ``interior``, ``boundary`` or ``outside``."""
    S_E, S_K, kinds = set(), set(), []
    for i, y in enumerate(np.atleast_1d(targets)):
        on_edge = abs(y - o_min) <= BOUNDARY_TOL or abs(y - o_max) <= BOUNDARY_TOL
        if on_edge:
            S_E.add(i)
            S_K.add(i)
            kinds.append("boundary")
        elif o_min < y < o_max:
            S_E.add(i)
            kinds.append("interior")
        else:
            S_K.add(i)
            kinds.append("outside")
    return frozenset(S_E), frozenset(S_K), kinds


def predict_regime(targets, o_min: float = -1.0, o_max: float = 1.0) -> RegimeLabel:
    """Regime implied by where the targets sit relative to the achievable range."""
    if not o_min < o_max:
        raise ValueError("o_min must be below o_max")
    S_E, S_K, kinds = target_sets(targets, o_min, o_max)
    N = len(kinds)
    return RegimeLabel(label_from_sets(S_E, S_K, N), S_E, S_K, N, {"kinds": kinds})


# -- fitting -------------------------------------------------------------------


@dataclass
class FitResult:
    model: str
    rate: float        # decay rate (exponential) or exponent (power law)
    amplitude: float
    offset: float
    r_squared: float
    window: tuple
    n_points: int

    def to_dict(self) -> dict:
        return {k: (float(v) if isinstance(v, (float, np.floating)) else v) for k, v in self.__dict__.items()}


def _window_mask(t, window):
    t = np.asarray(t, float)
    if window is None:
        window = (t[-1] / 10, t[-1])
    lo, hi = window
    return (t >= lo) & (t <= hi), (float(lo), float(hi))


def _r2(y, yhat):
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    if ss_tot <= 0:
        return 0.0
    return float(min(1.0, max(0.0, 1 - np.sum((y - yhat) ** 2) / ss_tot)))


def _prep(t, v, window, offset):
    m, win = _window_mask(t, window)
    if m.sum() < 10:
        raise FitDomainError(f"need at least 10 points in the fit window, got {int(m.sum())}")
    tt = np.asarray(t, float)[m]
    r = np.asarray(v, float)[m] - offset
    if not (np.all(r > 0) or np.all(r < 0)):
        raise FitDomainError("series must keep one strict sign after offset removal")
    return tt, np.log(np.abs(r)), win


def fit_exponential(t, v, window=None, offset: float = 0.0) -> FitResult:
    """Least squares of ``log|v - offset|`` against ``t``; ``rate`` is the decay rate."""
    tt, lv, win = _prep(t, v, window, offset)
    k, c = np.polyfit(tt, lv, 1)
    return FitResult("exponential", float(-k), float(np.exp(c)), offset, _r2(lv, k * tt + c), win, tt.size)


def fit_power_law(t, v, window=None, offset: float = 0.0) -> FitResult:
    """Least squares of ``log|v - offset|`` against ``log t``; ``rate`` is the exponent."""
    tt, lv, win = _prep(t, v, window, offset)
    if np.any(tt <= 0):
        raise FitDomainError("power-law fits need t > 0")
    lt = np.log(tt)
    k, c = np.polyfit(lt, lv, 1)
    return FitResult("power-law", float(k), float(np.exp(c)), offset, _r2(lv, k * lt + c), win, tt.size)


def above_floor_window(t, v, floor: float, span: float = 0.3):
    """Window ``[(1-span) t_j, t_j]`` ending at the last point with ``|v| > floor``."""
    t = np.asarray(t, float)
    ok = np.flatnonzero(np.abs(np.asarray(v, float)) > floor)
    if ok.size == 0:
        raise FitDomainError("series never exceeds the floor")
    tj = t[ok[-1]]
    return ((1 - span) * tj, tj)


def decay_rate(t, v, floor: float, span: float = 0.3) -> FitResult:
    """Exponential rate over the last stretch before the series reaches ``floor``."""
    win = above_floor_window(t, v, floor, span)
    m = (np.asarray(t) >= win[0]) & (np.asarray(t) <= win[1]) & (np.abs(v) > floor)
    return fit_exponential(np.asarray(t)[m], np.asarray(v)[m], window=win)


def asymptotic_rate(t, v, floor: float, points: int = 10) -> FitResult:
    """Exponential rate from the last ``points`` recorded values above ``floor``.

    Late-time rates are limits, so the fit uses the latest data that is still
    above the precision floor.
    """
    t = np.asarray(t, float)
    v = np.asarray(v, float)
    ok = np.flatnonzero(np.abs(v) > floor)
    if ok.size == 0:
        raise FitDomainError("series never exceeds the floor")
    last = ok[-1]
    if last + 1 < points:
        raise FitDomainError(f"need {points} points above the floor")
    sl = slice(last + 1 - points, last + 1)
    return fit_exponential(t[sl], v[sl], window=(t[sl][0], t[sl][-1]))


@dataclass
class SeriesVerdict:
    name: str
    decays: bool | None      # None means ambiguous
    model: str               # exponential | power-law | plateau | inconclusive | floor
    exponent: float | None
    rate: float | None
    r2_exp: float | None
    r2_pow: float | None
    decades_final: float | None
    final: float

    def to_dict(self) -> dict:
        return {k: (None if v is None else (float(v) if isinstance(v, (float, np.floating)) else v))
                for k, v in self.__dict__.items()}


def envelope(v) -> np.ndarray:
    """Suffix maximum of ``|v|``: the smallest non-increasing curve above the series."""
    a = np.abs(np.asarray(v, float))[::-1]
    return np.maximum.accumulate(a)[::-1]


def analyze_series(name: str, t, v, floor_rel: float = 1e-11) -> SeriesVerdict:
    """Decide whether a series decays to zero and by which law over the final decade.

    A series decays if its final magnitude is below ``FINAL_ABS`` or if a fit on
    the final decade has ``r^2 >= R2_DECAY`` and falls by at least
    ``MIN_DECAY_DECADES``, or if it falls by at least ``STRONG_DECAY_DECADES``
    regardless of the fit.  A fall of less than ``PLATEAU_DECADES`` is a plateau.
    Anything else is ambiguous.  Fits use the :func:`envelope` so that a
    decaying series that crosses zero is still recognised.
    """
    t = np.asarray(t, float)
    v = envelope(v)
    final = float(v[-1])
    scale = float(np.max(np.abs(v))) if v.size else 0.0
    floor = floor_rel * max(scale, 1e-300)
    # fit window: final decade, truncated where the series reaches the floor
    try:
        win = above_floor_window(t, v, floor, span=0.9)
    except FitDomainError:
        return SeriesVerdict(name, True, "floor", None, None, None, None, None, final)
    m = (t >= win[0]) & (t <= win[1]) & (np.abs(v) > floor)
    fe = fp = None
    if m.sum() >= 10 and (np.all(v[m] > 0) or np.all(v[m] < 0)):
        fe = fit_exponential(t[m], v[m], window=win)
        fp = fit_power_law(t[m], v[m], window=win)
    if fe is None:
        decays = True if final < FINAL_ABS else None
        return SeriesVerdict(name, decays, "floor" if decays else "inconclusive", None, None, None, None, None, final)
    decades = fp.rate * -np.log10(win[1] / win[0])
    r2best = max(fe.r_squared, fp.r_squared)
    if fe.r_squared >= fp.r_squared + MODEL_MARGIN:
        model = "exponential"
    elif fp.r_squared >= fe.r_squared + MODEL_MARGIN:
        model = "power-law"
    else:
        model = "inconclusive"
    if final < FINAL_ABS:
        decays = True
    elif r2best >= R2_DECAY and decades >= MIN_DECAY_DECADES:
        decays = True
    elif decades >= STRONG_DECAY_DECADES:
        decays = True
    elif abs(decades) < PLATEAU_DECADES:
        decays, model = False, "plateau"
    else:
        decays = None
    if decays is None and r2best < R2_AMBIGUOUS:
        model = "inconclusive"
    return SeriesVerdict(name, decays, model, fp.rate, fe.rate, fe.r_squared, fp.r_squared, float(decades), final)


def classify_empirical(trace) -> RegimeLabel:
    """Empirical ``S_E`` / ``S_K`` from the late-time behaviour of ``eps_a`` and ``K_aa``."""
    t = trace.t
    N = trace.N
    if len(t) < 12 or t[-1] < 100:
        raise ValueError("trace too short for final-decade fits")
    S_E, S_K, verdicts = set(), set(), {}
    ambiguous = []
    for a in range(N):
        ve = analyze_series(f"eps_{a + 1}", t, trace.eps[:, a])
        vk = analyze_series(f"K_{a + 1}{a + 1}", t, trace.K[:, a, a], floor_rel=1e-20)
        verdicts[ve.name], verdicts[vk.name] = ve, vk
        if ve.decays:
            S_E.add(a)
        if vk.decays:
            S_K.add(a)
        for v in (ve, vk):
            if v.decays is None:
                ambiguous.append(v.name)
    label = label_from_sets(S_E, S_K, N)
    if ambiguous:
        label = INCONCLUSIVE
    diag = {"series": {k: v.to_dict() for k, v in verdicts.items()}, "ambiguous": ambiguous}
    return RegimeLabel(label, frozenset(S_E), frozenset(S_K), N, diag)


# -- fixed points and stability ------------------------------------------------


def coupling_ratios(lam) -> np.ndarray:
    """``z[a, b] = lam[a, a, b] / lam[b, b, b]``."""
    lam = np.asarray(lam, float)
    ld = kn.lam_diag(lam)
    if np.any(~np.isfinite(ld)) or np.any(ld == 0):
        raise SingularRatioError("a diagonal relative dQNTK entry is zero or undefined")
    i = np.arange(lam.shape[0])
    return lam[i[:, None], i[:, None], i[None, :]] / ld[None, :]


def reduced_G(g, C, lam) -> np.ndarray:
    """``G_a = -sum_b z_ab g_b (g_b^2 - C_b)`` with ``g = sqrt(K_diag)``."""
    g = np.asarray(g, float)
    z = coupling_ratios(lam)
    return -(z @ (g * (g**2 - np.asarray(C, float))).T).T if g.ndim > 1 else -z @ (g * (g**2 - C))


def stability_matrix(K_star, charges, lam) -> np.ndarray:
    """Jacobian of ``G`` with respect to ``g`` at ``g = sqrt(K_star)``: ``M_ab = z_ab (C_b - 3 K*_bb)``."""
    Ks = np.asarray(K_star, float)
    if Ks.ndim == 2:
        Ks = np.diag(Ks)
    z = coupling_ratios(lam)
    return z * (np.asarray(charges, float) - 3 * Ks)[None, :]


def full_jacobian(K, eps, mu, eta: float = 1.0, N: int | None = None) -> np.ndarray:
    """Jacobian of the coupled one-step map for ``(eps, K)`` with ``mu`` held fixed.

    The state is ``eps`` followed by the row-major entries of ``K``.  Unlike the
    reduced matrix of :func:`stability_matrix`, this Jacobian transforms by
    similarity under an orthogonal change of data basis.
    """
    K, eps, mu = np.asarray(K, float), np.asarray(eps, float), np.asarray(mu, float)
    n = eps.size
    N = n if N is None else N
    c = eta / N
    J = np.zeros((n + n * n, n + n * n))
    J[:n, :n] = -c * K
    for a in range(n):
        for b in range(n):
            J[a, n + a * n + b] = -c * eps[b]
    sym = mu + np.transpose(mu, (0, 2, 1))
    for a in range(n):
        for b in range(n):
            J[n + a * n + b, :n] = -c * sym[:, a, b]
    return J


@dataclass
class StabilityReport:
    fixed_point: np.ndarray
    charges: np.ndarray
    M: np.ndarray
    eigenvalues: np.ndarray
    cls: str
    trace: float
    determinant: float

    @property
    def stable(self) -> bool:
        return self.cls in ("sink", "spiral-sink", "degenerate-sink", "line-of-stable")

    def to_dict(self) -> dict:
        return {"fixed_point": self.fixed_point.tolist(), "charges": self.charges.tolist(),
                "M": self.M.tolist(), "trace": float(self.trace), "det": float(self.determinant),
                "class": self.cls, "eigenvalues": [[float(z.real), float(z.imag)] for z in self.eigenvalues]}


def poincare_class(tr: float, det: float, tol: float = 1e-12) -> str:
    """Planar fixed-point class from trace and determinant."""
    disc = tr * tr - 4 * det
    scale = max(1.0, abs(tr) ** 2, abs(det))
    if det < -tol * scale:
        return "saddle"
    if abs(det) <= tol * scale:
        if tr < -tol * scale:
            return "line-of-stable"
        if tr > tol * scale:
            return "line-of-unstable"
        return "degenerate"
    if abs(tr) <= tol * scale:
        return "center"
    kind = "sink" if tr < 0 else "source"
    if abs(disc) <= tol * scale:
        return "degenerate-" + kind
    if disc < 0:
        return "spiral-" + kind
    return kind


def classify_fixed_point(M, fixed_point=None, charges=None, tol: float = 1e-12) -> StabilityReport:
    M = np.asarray(M, float)
    ev = np.linalg.eigvals(M)
    tr, det = float(np.trace(M)), float(np.linalg.det(M))
    if M.shape == (2, 2):
        cls = poincare_class(tr, det, tol)
    else:
        re = ev.real
        if np.all(re < -tol):
            cls = "spiral-sink" if np.any(np.abs(ev.imag) > tol) else "sink"
        elif np.all(re > tol):
            cls = "spiral-source" if np.any(np.abs(ev.imag) > tol) else "source"
        elif np.any(re > tol) and np.any(re < -tol):
            cls = "saddle"
        else:
            cls = "degenerate"
    fp = np.zeros(M.shape[0]) if fixed_point is None else np.asarray(fixed_point, float)
    ch = np.full(M.shape[0], np.nan) if charges is None else np.asarray(charges, float)
    return StabilityReport(fp, ch, M, ev, cls, tr, det)


def candidate_fixed_points(C) -> list[np.ndarray]:
    """Physically accessible fixed points: each ``K*_aa`` is ``C_a`` (if ``C_a >= 0``) or zero."""
    C = np.asarray(C, float)
    opts = [sorted({0.0, float(c)}) if c > 0 else [0.0] for c in C]
    grids = np.meshgrid(*opts, indexing="ij")
    return [np.array(p) for p in np.stack([g.ravel() for g in grids], axis=1)]


def stable_fixed_point(C, lam, tol: float = 1e-12):
    """The accessible fixed point whose stability matrix has no eigenvalue with positive real part.

    Strictly stable points win over marginal ones (a zero charge makes the
    collided point marginal at linear order).
    """
    best, best_re = None, np.inf
    reports = []
    for K_star in candidate_fixed_points(C):
        rep = classify_fixed_point(stability_matrix(K_star, C, lam), K_star, C, tol)
        reports.append(rep)
        mx = float(np.max(rep.eigenvalues.real))
        if mx <= tol and (best is None or mx < best_re):
            best, best_re = rep, mx
    return best, reports


# -- reduced flow --------------------------------------------------------------


def flow_field(C, lam, g1, g2, eta: float = 1e-3, N: int = 2) -> np.ndarray:
    """Rows ``(g1, g2, dg1, dg2)`` of ``(eta / 2N) G`` on the grid ``g1 x g2``."""
    g1 = np.asarray(g1, float)
    g2 = np.asarray(g2, float)
    if np.any(g1 < 0) or np.any(g2 < 0):
        raise ValueError("g = sqrt(K) must be non-negative")
    if np.asarray(C).shape != (2,):
        raise ValueError("flow_field is defined for N = 2")
    G1, G2 = np.meshgrid(g1, g2, indexing="ij")
    pts = np.stack([G1.ravel(), G2.ravel()], axis=1)
    d = (eta / (2 * N)) * reduced_G(pts, np.asarray(C, float), lam)
    return np.column_stack([pts, d])


@njit(cache=True)
def _flow_rhs(z, C, g, out):
    n = g.size
    for a in range(n):
        acc = 0.0
        for b in range(n):
            acc += z[a, b] * g[b] * (g[b] * g[b] - C[b])
        out[a] = -0.5 * acc


@njit(cache=True)
def _rk4_step(z, C, y, h, out, k1, k2, k3, k4, tmp):
    n = y.size
    _flow_rhs(z, C, y, k1)
    for i in range(n):
        tmp[i] = y[i] + 0.5 * h * k1[i]
    _flow_rhs(z, C, tmp, k2)
    for i in range(n):
        tmp[i] = y[i] + 0.5 * h * k2[i]
    _flow_rhs(z, C, tmp, k3)
    for i in range(n):
        tmp[i] = y[i] + h * k3[i]
    _flow_rhs(z, C, tmp, k4)
    for i in range(n):
        out[i] = y[i] + (h / 6) * (k1[i] + 2 * k2[i] + 2 * k3[i] + k4[i])


@njit(cache=True)
def _integrate(z, C, y0, tau_max, h0, rtol, max_steps, stop_speed, snap, record_factor):
    n = y0.size
    cap = 4096
    taus = np.empty(cap)
    path = np.empty((cap, n))
    y = y0.copy()
    full, mid, half = np.empty(n), np.empty(n), np.empty(n)
    k1, k2, k3, k4, tmp = np.empty(n), np.empty(n), np.empty(n), np.empty(n), np.empty(n)
    tau, h = 0.0, h0
    taus[0] = 0.0
    path[0] = y
    k = 1
    next_rec = 0.0
    for _ in range(max_steps):
        if tau >= tau_max:
            break
        if stop_speed > 0:
            _flow_rhs(z, C, y, tmp)
            if np.max(np.abs(tmp)) < stop_speed:
                break
        h = min(h, tau_max - tau)
        _rk4_step(z, C, y, h, full, k1, k2, k3, k4, tmp)
        _rk4_step(z, C, y, 0.5 * h, mid, k1, k2, k3, k4, tmp)
        _rk4_step(z, C, mid, 0.5 * h, half, k1, k2, k3, k4, tmp)
        num, big = 0.0, 0.0
        for i in range(n):
            num = max(num, abs(full[i] - half[i]))
            big = max(big, abs(half[i]))
        err = num / (rtol * (1 + big))
        if err > 1 and h > 1e-12:
            h *= 0.5
            continue
        for i in range(n):
            y[i] = half[i] if half[i] >= snap else 0.0
        tau += h
        if tau >= next_rec:
            if k == cap:
                cap *= 2
                t2 = np.empty(cap)
                p2 = np.empty((cap, n))
                t2[:k] = taus[:k]
                p2[:k] = path[:k]
                taus, path = t2, p2
            taus[k] = tau
            path[k] = y
            k += 1
            next_rec = tau * record_factor
        if err < 0.05:
            h *= 2
    if taus[k - 1] != tau:
        if k == cap:
            t2 = np.empty(cap + 1)
            p2 = np.empty((cap + 1, n))
            t2[:k] = taus[:k]
            p2[:k] = path[:k]
            taus, path = t2, p2
        taus[k] = tau
        path[k] = y
        k += 1
    return taus[:k], path[:k]


def integrate_flow(C, lam, g0, tau_max: float, h0: float = 1e-4, rtol: float = 1e-8, max_steps: int = 10_000_000,
                   stop_speed: float | None = None, snap: float = 1e-12, record_factor: float = 1.001):
    """Classical RK4 on ``dg/dtau = G(g) / 2`` with ``tau = eta t / N``.

    The step starts at ``h0`` (``eta / 10`` for the default rate) and is doubled
    or halved by step-doubling error control, so algebraic approaches to a
    collided fixed point can be followed to long times.  With ``stop_speed``
    set, integration ends early once ``max |dg/dtau|`` drops below it.
    Components below ``snap`` are set to zero, so an exponentially vanished
    kernel stays put unless the flow re-excites it.  Points are recorded at
    geometrically spaced times (ratio ``record_factor``) plus the final time.
    Returns ``(taus, path)``.
    """
    C = np.asarray(C, float)
    z = np.ascontiguousarray(coupling_ratios(lam))
    y0 = np.asarray(g0, float).copy()
    if np.any(y0 < 0):
        raise ValueError("g = sqrt(K) must be non-negative")
    return _integrate(z, C, y0, float(tau_max), float(h0), float(rtol), int(max_steps),
                      -1.0 if stop_speed is None else float(stop_speed), float(snap), float(record_factor))


# -- theory curves -------------------------------------------------------------


def exponential_rate_matrix(S_E, S_K, K_inf, eps_inf, lam, angles) -> np.ndarray:
    """Linear generator of the exponential class around its fixed point.

    Rows/columns are ordered as ``S_E`` (errors) then ``S_K`` (root kernels).
    With ``S_K`` empty this is ``K(inf)``; with ``S_E`` empty it is
    ``lam[a, a, b] eps_b(inf)``.
    """
    S_E, S_K = sorted(S_E), sorted(S_K)
    idx = S_E + S_K
    g = np.sqrt(np.clip(np.diag(K_inf), 0, None))
    B = np.empty((len(idx), len(idx)))
    for i, a in enumerate(idx):
        for j, b in enumerate(idx):
            if a in S_E and b in S_E:
                B[i, j] = K_inf[a, b]
            elif a in S_E:
                B[i, j] = g[a] * angles[a, b] * eps_inf[b]
            elif b in S_E:
                B[i, j] = lam[a, a, b] * g[b]
            else:
                B[i, j] = lam[a, a, b] * eps_inf[b]
    return B


def slowest_rate(B) -> float:
    """``w*``: the smallest real part among the eigenvalues of ``B``."""
    return float(np.min(np.linalg.eigvals(np.asarray(B, float)).real))


def theory_curve(regime: str, params: dict, t, eta: float, N: int) -> dict:
    """Leading-order solution families evaluated on ``t``.

    ``params`` keys by regime:

    * exponential classes: ``w`` (slowest rate), ``b`` (amplitudes per series),
      optional ``eps_inf``; returns ``eps`` and ``g`` arrays.
    * critical point: ``c0``, ``cE``, ``cG``.
    * ``power``: generic ``b / (c0 + eta t / N)^p`` with keys ``b``, ``c0``, ``p``.
    """
    t = np.asarray(t, float)
    x = eta * t / N
    if regime == "power":
        return {"value": np.asarray(params["b"], float)[..., None] / (params["c0"] + x) ** params["p"]}
    if regime == CRITICAL_POINT:
        s = params["c0"] + x
        return {"eps": np.asarray(params["cE"], float)[:, None] / s,
                "g": np.asarray(params["cG"], float)[:, None] / np.sqrt(s)}
    if regime == CRITICAL_FROZEN_KERNEL:
        s = params["c0"] + x
        return {"eps_interior": params["b"] / s**1.5, "eps_boundary": params["cE"] / s,
                "g_boundary": params["cG"] / np.sqrt(s)}
    if regime == CRITICAL_FROZEN_ERROR:
        s = params["c0"] + x
        return {"residual_outside": params["b"] / s**2, "g_outside": params["bG"] / s**1.5,
                "eps_boundary": params["cE"] / s, "g_boundary": params["cG"] / np.sqrt(s)}
    if regime in EXPONENTIAL_CLASS:
        w = params["w"]
        b = np.asarray(params["b"], float)
        e1 = np.exp(-w * x)
        if regime == FROZEN_KERNEL:
            return {"eps": b[:, None] * e1}
        if regime == FROZEN_ERROR:
            return {"g": b[:, None] * e1, "residual": params.get("r", b**2)[:, None] * e1**2}
        return {"eps_SE": b[:, None] * e1, "residual_SK": params.get("r", b**2)[:, None] * e1**2,
                "g_SK": b[:, None] * e1}
    raise ValueError(f"unsupported regime {regime!r}")


def fit_power_family(t, v, eta: float, N: int, p: float) -> tuple[dict, float]:
    """Fit ``b / (c0 + eta t / N)^p`` with ``p`` fixed; returns params and max relative error."""
    from scipy.optimize import least_squares

    t = np.asarray(t, float)
    v = np.asarray(v, float)
    x = eta * t / N
    sign = np.sign(v[-1]) or 1.0
    lv = np.log(np.abs(v))

    def res(q):
        lb, lc0 = q
        return lb - p * np.log(np.exp(lc0) + x) - lv

    best = None
    for lc0 in np.linspace(-5, np.log(max(x[-1], 1e-3)) + 2, 9):
        s = least_squares(res, [lv[-1] + p * np.log(x[-1] + 1), lc0])
        if best is None or s.cost < best.cost:
            best = s
    lb, lc0 = best.x
    fitted = sign * np.exp(lb) / (np.exp(lc0) + x) ** p
    return {"b": float(sign * np.exp(lb)), "c0": float(np.exp(lc0)), "p": p}, float(np.max(np.abs(fitted / v - 1)))


def stability_from_trace(trace, window_fraction: float = 0.1) -> dict:
    """Charges, measured fixed point and reduced-flow stability from a trace's late window."""
    w = trace.late_window(window_fraction)
    i = np.arange(trace.N)
    K_star = trace.K[w][:, i, i].mean(axis=0)
    eps_star = trace.eps[w].mean(axis=0)
    with np.errstate(all="ignore"), warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        lam = np.nanmean(trace.lam_smooth[w], axis=0)
    C = kn.charges(K_star, eps_star, lam)
    out = {"K_star": K_star.tolist(), "eps_star": np.asarray(eps_star, float).tolist(), "charges": C.tolist(),
           "lambda_diag": kn.lam_diag(lam).tolist()}
    try:
        rep = classify_fixed_point(stability_matrix(K_star, C, lam), K_star, C)
        best, _ = stable_fixed_point(C, lam)
    except SingularRatioError as e:
        out["error"] = str(e)
        return out
    out["measured_point"] = rep.to_dict()
    out["predicted_stable_point"] = None if best is None else best.fixed_point.tolist()
    return out
