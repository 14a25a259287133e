"""Sensitivity formulas, coherence-time fits and random-walk statistics."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import curve_fit, minimize_scalar
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

__all__ = [
    "SensitivityParams",
    "FringeNodeError",
    "delta_g",
    "delta_g_small_angle",
    "delta_g_strong",
    "delta_g_ec",
    "optimal_time",
    "FitResult",
    "extract_envelope",
    "fit_coherence_time",
    "CoherenceTimeEstimator",
    "random_walk_stats",
]

NODE_GUARD = 1e-12
N_RESTARTS = 16
MAX_SUBINTERVALS = 100_000


@dataclass(frozen=True)
class SensitivityParams:
    """Interrogation time ``t``, lifetime ``T1``, signal ``g``, number of
    parallel systems ``n`` and total experiment time ``T``."""

    t: float
    T1: float
    g: float
    n: float = 1.0
    T: float = 1.0

    def __post_init__(self):
        for name in ("t", "T1", "g", "n", "T"):
            v = getattr(self, name)
            if not (v > 0 and math.isfinite(v)):
                raise ValueError(f"{name} must be positive and finite, got {v}")
        if self.t > self.T * (1 + 1e-12):
            raise ValueError("interrogation time t cannot exceed the total time T")


class FringeNodeError(ValueError):
    """Raised where ``sin(2gt)`` vanishes and the sensitivity is undefined."""


def delta_g(params: SensitivityParams) -> float:
    """Frequency uncertainty of a Ramsey-type measurement with decay,

    ``0.5 * sqrt(exp(t/T1) - cos^2(2gt)) / (sqrt(n T t) |sin(2gt)|)``.
    """
    p = params
    s = math.sin(2 * p.g * p.t)
    if abs(s) < NODE_GUARD:
        raise FringeNodeError(f"delta_g is undefined at the fringe node 2gt = {2 * p.g * p.t:.6g}")
    # exp(x) - cos^2 written as expm1(x) + sin^2 to avoid cancellation at small t
    return 0.5 * math.sqrt(math.expm1(p.t / p.T1) + s * s) / (math.sqrt(p.n * p.T * p.t) * abs(s))


def delta_g_small_angle(params: SensitivityParams, coefficient: float = 4.0) -> float:
    """Small-angle form ``0.5 sqrt(e^{t/T1} - 1 + c (2gt)^2) / (sqrt(nTt) 2gt)``.

    ``coefficient=4`` is the form as usually quoted; expanding ``cos^2``
    actually gives ``coefficient=1``. Kept for cross-checks only.
    """
    p = params
    x = 2 * p.g * p.t
    return 0.5 * math.sqrt(math.exp(p.t / p.T1) - 1 + coefficient * x * x) / (
        math.sqrt(p.n * p.T * p.t) * x)


def delta_g_strong(g: float, T1: float, n: float = 1.0, T: float = 1.0) -> float:
    """Strong-noise limit (``g T1 << 1``, ``t = T1``):
    ``0.5 sqrt(e - 1) / (sqrt(nT) 2g T1^{3/2})``."""
    return 0.5 * math.sqrt(math.e - 1) / (math.sqrt(n * T) * 2 * g * T1 ** 1.5)


def delta_g_ec(T1: float, n: float = 1.0, T: float = 1.0) -> float:
    """Scale ``1/sqrt(T1 T n)`` reached when a full fringe fits in ``T1``."""
    return 1.0 / math.sqrt(T1 * T * n)


def optimal_time(g: float, T1: float, n: float = 1.0, T: float = 1.0,
                 t_max: float | None = None) -> tuple[float, float]:
    """Minimize :func:`delta_g` over ``t`` in ``(0, t_max]``.

    The fringe factor makes the objective multimodal, so a bounded
    golden-section/parabolic search is run on equal sub-intervals (at least
    16, and at most an eighth of a fringe ``pi/(2g)`` wide) and the endpoint ``t_max`` is evaluated too; fringe nodes are excluded.
    ``T`` defaults to ``t_max`` when it would otherwise be shorter than ``t``.
    """
    if t_max is None:
        t_max = T
    if not t_max > 0:
        raise ValueError("t_max must be positive")
    T_eff = max(T, t_max)

    def f(t):
        try:
            return delta_g(SensitivityParams(t, T1, g, n, T_eff))
        except FringeNodeError:
            return math.inf

    n_sub = min(MAX_SUBINTERVALS, max(N_RESTARTS, math.ceil(8 * abs(g) * t_max / math.pi)))
    edges = np.linspace(0.0, t_max, n_sub + 1)
    best_t, best_v = float(t_max), f(t_max)
    for a, b in zip(edges[:-1], edges[1:]):
        lo = max(a, t_max * 1e-9)
        res = minimize_scalar(f, bounds=(lo, b), method="bounded",
                              options={"xatol": 1e-12 * max(1.0, t_max)})
        for cand in (res.x, b):
            v = f(cand)
            if v < best_v:
                best_t, best_v = float(cand), v
    return best_t, best_v


@dataclass
class FitResult:
    fitted_value: float
    stderr: float
    residual_norm: float
    model: str
    amplitude: float = 1.0
    reliable: bool = True
    n_points: int = 0

    def __post_init__(self):
        if self.stderr < 0:
            raise ValueError("stderr must be non-negative")

    def as_dict(self) -> dict:
        return {"fitted_value": self.fitted_value, "stderr": self.stderr,
                "residual_norm": self.residual_norm, "model": self.model,
                "amplitude": self.amplitude, "reliable": self.reliable, "n_points": self.n_points}


def extract_envelope(t, y, period: float | None = None, mode: str = "contrast"):
    """Per-period envelope of an oscillating curve.

    With ``period=None`` the curve is taken as its own envelope. Otherwise
    each window ``[k P, (k+1) P)`` contributes one point: the maximum
    (``mode='max'``) or the peak-to-peak contrast (``mode='contrast'``),
    placed at the time of the maximum.
    """
    t = np.asarray(t, dtype=float)
    y = np.asarray(y, dtype=float)
    if period is None:
        return t, y
    if not period > 0:
        raise ValueError("period must be positive")
    k = np.floor((t - t[0]) / period + 1e-9).astype(int)
    te, ye = [], []
    for w in np.unique(k):
        sel = k == w
        if sel.sum() < 2:
            continue
        i = np.argmax(y[sel])
        te.append(t[sel][i])
        ye.append(y[sel][i] - (y[sel].min() if mode == "contrast" else 0.0))
    return np.asarray(te), np.asarray(ye)


def _exp_model(t, a, T2):
    return a * np.exp(-t / T2)


def fit_coherence_time(t, y=None, period: float | None = None, mode: str = "contrast",
                       fit_amplitude: bool = True, observable: str = "signal") -> FitResult:
    """Least-squares fit of the envelope to ``A exp(-t/T2*)``.

    ``t`` may be an :class:`~ecsense.engine.EnsembleStats`, in which case
    ``observable`` selects the curve. Data that barely decay are flagged
    unreliable and ``fitted_value`` is then a lower bound.
    """
    if y is None:
        stats = t
        t, y = stats.times, stats.mean[observable]
    te, ye = extract_envelope(t, y, period, mode)
    if te.size < 3:
        raise ValueError("need at least three envelope points to fit a decay")
    span = te[-1] - te[0]
    pos = ye > 0
    if pos.sum() >= 2:
        slope = np.polyfit(te[pos], np.log(ye[pos]), 1)[0]
    else:
        slope = -1.0 / max(span, 1e-12)
    T0 = -1.0 / slope if slope < 0 else 10 * max(span, 1e-12)
    a0 = float(ye[0] * math.exp(te[0] / T0))
    if fit_amplitude:
        popt, pcov = curve_fit(_exp_model, te, ye, p0=(a0, T0), maxfev=20000,
                               bounds=([0, 1e-300], [np.inf, np.inf]))
        a, T2 = popt
        se = math.sqrt(max(pcov[1, 1], 0.0)) if np.all(np.isfinite(pcov)) else math.inf
    else:
        popt, pcov = curve_fit(lambda tt, T2: _exp_model(tt, 1.0, T2), te, ye, p0=(T0,),
                               maxfev=20000, bounds=([1e-300], [np.inf]))
        a, T2 = 1.0, popt[0]
        se = math.sqrt(max(pcov[0, 0], 0.0)) if np.all(np.isfinite(pcov)) else math.inf
    resid = float(np.linalg.norm(ye - _exp_model(te, a, T2)))
    decayed = 1 - math.exp(-span / T2) if T2 > 0 else 1.0
    reliable = decayed > 0.05 and math.isfinite(se)
    return FitResult(float(T2), float(se), resid, "exp-envelope", float(a), bool(reliable), int(te.size))


class CoherenceTimeEstimator(BaseEstimator):
    """Envelope fit as an estimator: ``fit(t, y)`` sets ``T2_``.

    Parameters
    ----------
    period : float, optional
        Oscillation period for per-period envelope extraction.
    mode : {'contrast', 'max'}
    fit_amplitude : bool
        Fit ``A exp(-t/T2)`` instead of ``exp(-t/T2)``.
    """

    def __init__(self, period=None, mode="contrast", fit_amplitude=True):
        self.period = period
        self.mode = mode
        self.fit_amplitude = fit_amplitude

    def fit(self, t, y):
        t, y = check_X_y(np.asarray(t, dtype=float).reshape(-1, 1), y, y_numeric=True)
        res = fit_coherence_time(t[:, 0], y, self.period, self.mode, self.fit_amplitude)
        self.T2_ = res.fitted_value
        self.T2_stderr_ = res.stderr
        self.amplitude_ = res.amplitude
        self.reliable_ = res.reliable
        self.result_ = res
        return self

    def predict(self, t):
        check_is_fitted(self, "T2_")
        t = check_array(np.asarray(t, dtype=float).reshape(-1, 1))[:, 0]
        return _exp_model(t, self.amplitude_, self.T2_)


def random_walk_stats(protocol, schedule, n_traj: int, master_seed: int, workers=None,
                      state: str = "A", relative: bool = True) -> dict:
    """Ensemble statistics of the amplitude ``beta`` on code state ``state``.

    With ``relative`` the noise-free amplitude is subtracted, so ``beta`` is
    the accumulated error. ``m`` counts lifetimes ``t * gamma``.
    """
    from .engine import ideal_states, run_ensemble

    stats = run_ensemble(protocol, schedule, n_traj, master_seed, workers=workers)
    k = protocol.code.names.index(state)
    beta = stats.batch.code_amplitudes[:, :, k]
    if relative:
        ref = ideal_states(protocol, schedule) @ protocol.code.basis[:, k].conj()
        beta = beta - ref[None, :]
    n = beta.shape[0]
    abs2 = np.abs(beta) ** 2
    mean = beta.mean(axis=0)
    sd = lambda x: x.std(axis=0, ddof=1) / math.sqrt(n) if n > 1 else np.zeros(x.shape[1])
    return {
        "times": np.asarray(stats.times),
        "m": np.asarray(stats.times) * protocol.params.gamma,
        "mean_beta": mean,
        "mean_beta_stderr": sd(beta.real) + 1j * sd(beta.imag),
        "mean_abs2": abs2.mean(axis=0),
        "abs2_stderr": sd(abs2),
        "var_beta": (np.abs(beta - mean) ** 2).sum(axis=0) / max(n - 1, 1),
        "n": n,
        "stats": stats,
    }
