"""Time-resolved randomized benchmarking, Ramsey detuning estimation, and model-violation checks."""

from dataclasses import dataclass, field
import math
import warnings

import numpy as np
from scipy import optimize
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .spectral import Clickstream
from .testing import DriftDetector, chi2_isf, chi2_sf
from .trajectory import (
    ConvergenceError,
    ModelScore,
    TrajectoryModel,
    aic_compare,
    fourier_filter,
    mle_fit,
)

__all__ = [
    "ModelViolation",
    "RBDataset",
    "RBFit",
    "RamseyFit",
    "TimeResolvedRB",
    "TimeResolvedRamsey",
    "confidence_regions",
    "fit_rb_curve",
    "model_violation",
    "ramsey_fit",
    "ramsey_probability",
    "ramsey_select",
    "rb_normalization",
    "rb_static",
    "rb_time_resolved",
    "shared_time_axis",
]


# ---------------------------------------------------------------------------
# randomized benchmarking


def rb_normalization(n_qubits):
    return (4**n_qubits - 1) / 4**n_qubits


@dataclass
class RBDataset:
    circuits: list
    n_qubits: int = 1

    def __post_init__(self):
        if not self.circuits:
            raise ValueError("RB dataset has no circuits")
        n = self.circuits[0][2].n
        for cid, m, stream in self.circuits:
            if stream.n != n:
                raise ValueError(f"circuit {cid!r}: all RB clickstreams must have {n} outcomes")
            if int(m) != m or m < 0:
                raise ValueError(f"circuit {cid!r}: RB length must be a non-negative integer, got {m!r}")

    @classmethod
    def from_streams(cls, streams, n_qubits=1, key="m"):
        circuits = []
        for s in streams:
            if key not in s.metadata:
                raise ValueError(f"circuit {s.circuit_id!r} has no RB length field {key!r}")
            circuits.append((s.circuit_id, int(s.metadata[key]), s))
        return cls(circuits, n_qubits)

    @property
    def streams(self):
        return [s for _, _, s in self.circuits]

    @property
    def lengths(self):
        return np.array([m for _, m, _ in self.circuits])


@dataclass
class RBFit:
    times: np.ndarray
    A: np.ndarray
    B: np.ndarray
    lam: np.ndarray
    r: np.ndarray
    success: np.ndarray
    normalization: float
    lengths: np.ndarray
    P: np.ndarray
    frequencies: tuple = ()
    models: dict = field(default_factory=dict)

    def rows(self):
        for k in range(self.times.size):
            yield self.times[k], self.r[k], self.A[k], self.B[k], self.lam[k]


def _profile_residual(lam, m, y, w):
    """WLS residual of ``y ~ A + B lam**m`` with ``(A, B)`` profiled out.

    Vectorized: `lam` has shape (G,), `y` (L, T); returns residuals (G, T)
    and the corresponding ``A``, ``B``.
    """
    u = lam[:, np.newaxis] ** m[np.newaxis, :]  # (G, L)
    Sw = w.sum()
    Su = u @ w
    Suu = (u**2) @ w
    Sy = w @ y  # (T,)
    Suy = (u * w) @ y  # (G, T)
    Syy = w @ y**2
    det = Sw * Suu - Su**2
    degenerate = det <= 1e-13 * Sw * np.maximum(Suu, 1e-300)
    det_safe = np.where(degenerate, 1.0, det)
    A = (Suu[:, None] * Sy[None, :] - Su[:, None] * Suy) / det_safe[:, None]
    B = (Sw * Suy - Su[:, None] * Sy[None, :]) / det_safe[:, None]
    A = np.where(degenerate[:, None], Sy[None, :] / Sw, A)
    B = np.where(degenerate[:, None], 0.0, B)
    res = Syy[None, :] - A * Sy[None, :] - B * Suy
    return np.maximum(res, 0.0), A, B


def _residual_slope(lam, m, y, w):
    """d/dlam of the profiled residual (envelope theorem: A, B held at their optimum)."""
    _, A, B = _profile_residual(np.array([lam]), m, y, w)
    r = y[:, 0] - A[0, 0] - B[0, 0] * lam**m
    du = np.where(m > 0, m * lam ** np.maximum(m - 1, 0), 0.0)
    return -2.0 * float(np.sum(w * r * B[0, 0] * du))


def _refine(m, y, w, lo, hi, start, start_res):
    """Polish a grid minimum by a root of the residual slope on ``[lo, hi]``.

    The residual is flat to working precision near its minimum, so locating
    the slope's zero resolves lambda to ~1e-15 rather than ~1e-8.
    """
    f = lambda v: float(_profile_residual(np.array([v]), m, y, w)[0][0, 0])
    s_lo, s_hi = _residual_slope(lo, m, y, w), _residual_slope(hi, m, y, w)
    if s_lo < 0 < s_hi:
        cand = optimize.brentq(_residual_slope, lo, hi, args=(m, y, w), xtol=1e-15, rtol=1e-15)
    else:
        cand = optimize.minimize_scalar(f, bounds=(lo, hi), method="bounded", options={"xatol": 1e-13}).x
    return float(cand) if f(cand) <= start_res else start


def fit_rb_curve(m, P, weights=None, grid=2001):
    """Weighted least-squares fit of ``P_m = A + B lam**m`` with ``lam`` in [0, 1].

    `P` may be (L,) or (L, T) for T instants. Minimizing over ``lam`` first on
    a grid then by bounded scalar refinement; on ties the largest ``lam``
    wins, so perfect data (all ones) gives ``lam = 1``.
    Returns arrays ``A, B, lam, success``.
    """
    m = np.asarray(m, dtype=float)
    P = np.asarray(P, dtype=float)
    single = P.ndim == 1
    if single:
        P = P[:, np.newaxis]
    w = np.ones(m.size) if weights is None else np.asarray(weights, dtype=float)
    if np.unique(m).size < 3:
        raise ValueError("need at least three distinct RB lengths")
    T = P.shape[1]
    A = np.full(T, np.nan)
    B = np.full(T, np.nan)
    lam = np.full(T, np.nan)
    ok = np.all(np.isfinite(P), axis=0)
    g = np.linspace(0.0, 1.0, grid)
    if np.any(ok):
        res, _, _ = _profile_residual(g, m, P[:, ok], w)
        scale = np.maximum(w @ P[:, ok] ** 2, 1e-300)
        best_res = res.min(axis=0)
        near = res <= best_res[None, :] + 1e-13 * scale[None, :]
        # largest grid lambda attaining the minimum
        gi = grid - 1 - np.argmax(near[::-1], axis=0)
        cols = np.flatnonzero(ok)
        for j, col in enumerate(cols):
            y = P[:, col : col + 1]
            if best_res[j] <= 1e-13 * scale[j] and gi[j] == grid - 1:
                lam_j = 1.0
            else:
                lam_j = _refine(m, y, w, g[max(gi[j] - 1, 0)], g[min(gi[j] + 1, grid - 1)],
                                float(g[gi[j]]), best_res[j])
            _, a, b = _profile_residual(np.array([lam_j]), m, y, w)
            A[col], B[col], lam[col] = a[0, 0], b[0, 0], lam_j
    success = ok & np.isfinite(lam)
    if single:
        return A[0], B[0], lam[0], bool(success[0])
    return A, B, lam, success


def _group_by_length(lengths, values):
    ms = np.unique(lengths)
    P = np.vstack([values[lengths == m].mean(axis=0) for m in ms])
    counts = np.array([np.count_nonzero(lengths == m) for m in ms], dtype=float)
    return ms, P, counts


def rb_static(data):
    """Ordinary RB fit to the time-aggregated success frequencies."""
    lengths = data.lengths
    means = np.array([s.mean for s in data.streams])
    ms, P, counts = _group_by_length(lengths, means[:, np.newaxis])
    A, B, lam, ok = fit_rb_curve(ms, P[:, 0], counts)
    return {"A": A, "B": B, "lam": lam, "r": rb_normalization(data.n_qubits) * (1 - lam), "success": ok}


def _default_times(streams, count=100):
    t_lo = min(s.sample_times()[0] for s in streams)
    t_hi = max(s.sample_times()[-1] for s in streams)
    return np.linspace(t_lo, t_hi, count)


def rb_time_resolved(data, times=None, alpha=0.05, method="filter", epsilon=0.0):
    """Non-intrusive time-resolved RB.

    Only the circuit-averaged spectrum is tested (``w = 1``); every circuit's
    trajectory then uses all frequencies significant there. Instantaneous
    success probabilities are averaged per length and fitted at each time.
    """
    streams = data.streams
    detector = DriftDetector(alpha=alpha, w=1.0, cv_threshold=None).fit(streams)
    ws = detector.outcome_.averaged_significant
    times = _default_times(streams) if times is None else np.asarray(times, dtype=float)
    models = {}
    values = np.empty((len(streams), times.size))
    for c, (cid, _, s) in enumerate(data.circuits):
        if method == "filter":
            model = fourier_filter(s, ws, epsilon)
        elif method == "mle":
            model, _ = mle_fit(s, ws, max(epsilon, 1e-5))
        else:
            raise ValueError(f"unknown trajectory method {method!r}")
        models[cid] = model
        values[c] = model.evaluate(times)
    ms, P, counts = _group_by_length(data.lengths, values)
    A, B, lam, ok = fit_rb_curve(ms, P, counts)
    lam = np.clip(lam, 0.0, 1.0)
    return RBFit(
        times=times,
        A=A,
        B=B,
        lam=lam,
        r=rb_normalization(data.n_qubits) * (1.0 - lam),
        success=ok,
        normalization=rb_normalization(data.n_qubits),
        lengths=ms,
        P=P,
        frequencies=tuple(ws),
        models=models,
    )


class TimeResolvedRB(BaseEstimator):
    """Estimator wrapper around :func:`rb_time_resolved`.

    ``fit`` takes an :class:`RBDataset` or clickstreams carrying ``m`` in
    their metadata; ``predict(t)`` returns the error rate at times `t`.
    """

    def __init__(self, n_qubits=1, alpha=0.05, method="filter", epsilon=0.0):
        self.n_qubits = n_qubits
        self.alpha = alpha
        self.method = method
        self.epsilon = epsilon

    def fit(self, X, y=None, times=None):
        data = X if isinstance(X, RBDataset) else RBDataset.from_streams(X, self.n_qubits)
        self.data_ = data
        self.fit_ = rb_time_resolved(data, times, self.alpha, self.method, self.epsilon)
        return self

    def predict(self, t):
        check_is_fitted(self, "fit_")
        t = np.atleast_1d(np.asarray(t, dtype=float))
        values = np.vstack([self.fit_.models[cid].evaluate(t) for cid, _, _ in self.data_.circuits])
        ms, P, counts = _group_by_length(self.data_.lengths, values)
        _, _, lam, _ = fit_rb_curve(ms, P, counts)
        return rb_normalization(self.data_.n_qubits) * (1.0 - np.clip(lam, 0.0, 1.0))


# ---------------------------------------------------------------------------
# Ramsey


def shared_time_axis(streams):
    """Common ``(t0, t_step, n)`` for basis functions spanning rastered circuits."""
    firsts, steps = [], []
    for s in streams:
        t0, step, _ = s.time_axis()
        firsts.append(t0)
        steps.append(step)
    return float(np.mean(firsts)), float(np.mean(steps)), streams[0].n


def ramsey_probability(l, t, A, B, l0, t_w, omega):
    """``A + B exp(-l/l0) sin(2 pi l t_w Omega(t))``; `omega` is a callable or array in Hz."""
    om = omega(t) if callable(omega) else omega
    return A + B * np.exp(-np.asarray(l) / l0) * np.sin(2 * np.pi * np.asarray(l) * t_w * om)


PARAM_NAMES = ("A", "B", "l0", "omega_0")


@dataclass
class RamseyFit:
    A: float
    B: float
    l0: float
    t_w: float
    omega: TrajectoryModel
    score: ModelScore
    theta: np.ndarray
    covariance: np.ndarray | None = None
    available: np.ndarray | None = None
    half_widths: dict = field(default_factory=dict)
    l_values: tuple = ()
    held: tuple = ()

    @property
    def frequencies(self):
        return self.omega.frequencies

    @property
    def param_names(self):
        return PARAM_NAMES + tuple(f"omega_{w}" for w in self.frequencies)

    def probability(self, l, t):
        l, t = np.broadcast_arrays(np.asarray(l, dtype=float), np.asarray(t, dtype=float))
        om = self.omega.evaluate(t.ravel()).reshape(t.shape)
        return ramsey_probability(l, t, self.A, self.B, self.l0, self.t_w, om)

    def omega_band(self, t):
        """``(Omega_hat(t), 2-sigma half-width)``; the half-width is None if unavailable."""
        t = np.atleast_1d(np.asarray(t, dtype=float))
        est = self.omega.evaluate(t)
        if self.covariance is None or not np.all(self.available[3:]):
            return est, None
        D = np.hstack([np.ones((t.size, 1)), self.omega.design(t)])
        cov = self.covariance[3:, 3:]
        var = np.einsum("ij,jk,ik->i", D, cov, D)
        return est, 2.0 * np.sqrt(np.maximum(var, 0.0))


class _RamseyProblem:
    """Joint Bernoulli likelihood of all Ramsey clickstreams.

    Parameter vector: ``[A, B, log l0, a0, a_w...]``.
    """

    def __init__(self, streams, t_w, frequencies, axis=None):
        self.t_w = float(t_w)
        self.ws = tuple(sorted(int(w) for w in frequencies))
        t0, t_step, n = shared_time_axis(streams) if axis is None else axis
        self.axis = (t0, t_step, n)
        self.template = TrajectoryModel(0.0, {w: 0.0 for w in self.ws}, t0, t_step, n)
        self.ls = np.array([float(s.metadata["l"]) for s in streams])
        self.x = np.concatenate([s.outcomes.astype(float) for s in streams])
        self.l = np.concatenate([np.full(s.n, float(s.metadata["l"])) for s in streams])
        t = np.concatenate([s.sample_times() for s in streams])
        self.D = np.hstack([np.ones((t.size, 1)), self.template.design(t)])
        self.circuit = np.concatenate([np.full(s.n, c) for c, s in enumerate(streams)])

    def parts(self, th, mask=None):
        A, B, logl0 = th[0], th[1], th[2]
        D = self.D if mask is None else self.D[mask]
        l = self.l if mask is None else self.l[mask]
        om = D @ th[3:]
        E = np.exp(-l / math.exp(logl0))
        phase = 2 * np.pi * l * self.t_w * om
        s, c = np.sin(phase), np.cos(phase)
        p = A + B * E * s
        return p, E, s, c, l, D

    def negll(self, th, mask=None):
        p, *_ = self.parts(th, mask)
        x = self.x if mask is None else self.x[mask]
        p = np.clip(p, 1e-300, 1 - 1e-16)
        return -float(np.where(x > 0, np.log(p), np.log1p(-p)).sum())

    def grad_p(self, th, mask=None):
        p, E, s, c, l, D = self.parts(th, mask)
        A, B, logl0 = th[0], th[1], th[2]
        l0 = math.exp(logl0)
        cols = [np.ones_like(p), E * s, B * E * s * l / l0]
        dom = (B * E * c * 2 * np.pi * l * self.t_w)[:, np.newaxis] * D
        return p, np.column_stack(cols + [dom])

    def grad(self, th, mask=None):
        p, J = self.grad_p(th, mask)
        x = self.x if mask is None else self.x[mask]
        p = np.clip(p, 1e-300, 1 - 1e-16)
        r = np.where(x > 0, 1.0 / p, -1.0 / (1.0 - p))
        return -(r @ J)

    def fisher(self, th):
        p, J = self.grad_p(th)
        p = np.clip(p, 1e-12, 1 - 1e-12)
        return (J / (p * (1 - p))[:, None]).T @ J

    def observed_information(self, th):
        """Numerical Hessian of the negative log-likelihood (central differences of the gradient)."""
        k = th.size
        H = np.empty((k, k))
        for j in range(k):
            h = 1e-5 * max(1.0, abs(th[j]))
            e = np.zeros(k)
            e[j] = h
            H[:, j] = (self.grad(th + e) - self.grad(th - e)) / (2 * h)
        return 0.5 * (H + H.T)

    def max_phase(self, th, mask):
        _, _, _, _, l, D = self.parts(th, mask)
        return float(np.max(np.abs(2 * np.pi * l * self.t_w * (D @ th[3:])))) if l.size else 0.0


def _optimize(problem, th0, free, mask, bounds, epsilon, max_iter):
    free = np.asarray(free, dtype=bool)
    idx = np.flatnonzero(free)
    scale = max(int(np.count_nonzero(mask)) if mask is not None else problem.x.size, 1)

    def full(z):
        th = th0.copy()
        th[idx] = z
        return th

    f = lambda z: problem.negll(full(z), mask) / scale
    g = lambda z: problem.grad(full(z), mask)[idx] / scale
    cons = []
    # validity: A - B >= eps and A + B <= 1 - eps
    if free[0] or free[1]:
        def c_lo(z):
            th = full(z)
            return th[0] - th[1] - epsilon

        def c_hi(z):
            th = full(z)
            return 1.0 - epsilon - th[0] - th[1]

        jl = np.array([1.0, -1.0] + [0.0] * (th0.size - 2))[idx]
        jh = np.array([-1.0, -1.0] + [0.0] * (th0.size - 2))[idx]
        cons = [{"type": "ineq", "fun": c_lo, "jac": lambda z: jl},
                {"type": "ineq", "fun": c_hi, "jac": lambda z: jh}]
    with warnings.catch_warnings():
        # SLSQP clips its own line-search steps back into the bounds
        warnings.filterwarnings("ignore", "Values in x were outside bounds", RuntimeWarning)
        res = optimize.minimize(f, th0[idx], jac=g, method="SLSQP", bounds=[bounds[i] for i in idx],
                                constraints=cons, options={"maxiter": max_iter, "ftol": 1e-14})
    th = full(res.x)
    for i, (lo, hi) in enumerate(bounds):
        th[i] = min(max(th[i], -np.inf if lo is None else lo), np.inf if hi is None else hi)
    if f(th[idx]) > f(th0[idx]):
        th = th0.copy()
    return th, res


def ramsey_fit(streams, t_w, frequencies=(), epsilon=1e-5, l0_bounds=None, init=None,
               max_iter=1000, axis=None, confidence=True):
    """Maximum-likelihood fit of the time-resolved Ramsey model.

    ``p_l(t) = A + B exp(-l/l0) sin(2 pi l t_w Omega(t))`` with
    ``Omega(t) = a0 + sum_w a_w f_w(t)`` in Hz. Each clickstream must carry
    its wait multiple ``l`` in ``metadata``.

    The fit proceeds by continuation over wait length: circuits are added
    shortest first, each stage starting from the previous optimum, so the
    phase of long circuits is never ambiguous. ``B`` and ``l0`` are only
    released once the included circuits reach phases where they are
    separately identifiable (|phase| >= 0.5 rad). If that never happens,
    for instance at zero detuning where ``B sin(...)`` vanishes for any
    ``B``, they stay at their seeded values, are listed in ``held`` and are
    not counted in ``k``.
    """
    streams = list(streams)
    for s in streams:
        if "l" not in s.metadata:
            raise ValueError(f"circuit {s.circuit_id!r} has no wait-length field 'l'")
    if t_w is None or not t_w > 0:
        raise ValueError("t_w must be a positive number of seconds")
    problem = _RamseyProblem(streams, t_w, frequencies, axis)
    ls = problem.ls
    distinct = np.unique(ls)
    if distinct.size < 4:
        raise ValueError("need at least four distinct wait lengths l")
    if l0_bounds is None:
        l0_bounds = (0.1 * distinct.min(), 1e4 * distinct.max())
    k = 3 + 1 + len(problem.ws)
    bounds = [(epsilon, 1 - epsilon), (0.0, 0.5), (math.log(l0_bounds[0]), math.log(l0_bounds[1]))]
    bounds += [(None, None)] * (1 + len(problem.ws))

    if init is None:
        short = problem.l == distinct[0]
        A0 = float(np.clip(problem.x[short].mean(), 0.05, 0.95))
        B0 = max(min(A0, 1 - A0) - 2 * epsilon, 0.0)
        l00 = min(max(10.0 * distinct.max(), l0_bounds[0]), l0_bounds[1])
        th = np.zeros(k)
        th[:3] = A0, B0, math.log(l00)
    else:
        th = np.asarray(init, dtype=float).copy()

    start = min(3, distinct.size)
    released = False
    for stage in range(start - 1, distinct.size):
        mask = problem.l <= distinct[stage]
        last = stage == distinct.size - 1
        if not released and problem.max_phase(th, mask) >= 0.5:
            released = True
        free = np.ones(k, dtype=bool)
        if not released:
            free[1:3] = False
        th, res = _optimize(problem, th, free, None if last else mask, bounds, epsilon, max_iter)
    # a stage may have crossed the phase criterion only after its own fit
    if not released and problem.max_phase(th, None) >= 0.5:
        released = True
        th, res = _optimize(problem, th, np.ones(k, dtype=bool), None, bounds, epsilon, max_iter)
    held = () if released else ("B", "l0")
    if res.status == 9:
        best = _build_fit(problem, th, held)
        raise ConvergenceError("Ramsey MLE hit the iteration budget", best=best)
    fit = _build_fit(problem, th, held)
    if confidence:
        _attach_confidence(fit, problem)
    return fit


def _build_fit(problem, th, held=()):
    t0, t_step, n = problem.axis
    omega = TrajectoryModel(float(th[3]), {w: float(a) for w, a in zip(problem.ws, th[4:])}, t0, t_step, n)
    score = ModelScore(th.size - len(held), -problem.negll(th))
    return RamseyFit(
        A=float(th[0]),
        B=float(th[1]),
        l0=float(math.exp(th[2])),
        t_w=problem.t_w,
        omega=omega,
        score=score,
        theta=th.copy(),
        l_values=tuple(float(v) for v in np.unique(problem.ls)),
        held=held,
    )


def _attach_confidence(fit, problem):
    info = problem.observed_information(fit.theta)
    free = np.array([name not in fit.held for name in fit.param_names])
    cov, available = _invert_information(info, free)
    fit.covariance = cov
    fit.available = available
    fit.half_widths = _half_widths(fit, cov, available)


def _invert_information(info, free=None, tol=1e-9):
    """Covariance from an observed-information matrix, marking unidentifiable parameters.

    Parameters touching the (near-)null space of the information matrix, or
    with negligible curvature (below 1e-12 of the largest), are marked
    unavailable; the rest are inverted as a block.
    """
    k = info.shape[0]
    d = np.diag(info).copy()
    available = np.isfinite(d) & (d > 1e-12 * np.max(np.abs(d), initial=0.0))
    if free is not None:
        available &= free
    if not np.all(np.isfinite(info)):
        return None, np.zeros(k, dtype=bool)
    for _ in range(k):
        idx = np.flatnonzero(available)
        if idx.size == 0:
            break
        sub = info[np.ix_(idx, idx)]
        s = 1.0 / np.sqrt(np.diag(sub))
        corr = sub * s[:, None] * s[None, :]
        vals, vecs = np.linalg.eigh(corr)
        null = vals < tol
        if not np.any(null):
            cov = np.full((k, k), np.nan)
            cov[np.ix_(idx, idx)] = np.linalg.inv(corr) * s[:, None] * s[None, :]
            return cov, available
        weight = np.abs(vecs[:, null]).max(axis=1)
        available[idx[np.argmax(weight)]] = False
    return None, available


def _half_widths(fit, cov, available):
    out = {}
    names = fit.param_names
    for j, name in enumerate(names):
        if cov is None or not available[j] or not np.isfinite(cov[j, j]) or cov[j, j] < 0:
            out[name] = None
            continue
        sd = math.sqrt(cov[j, j])
        out[name] = 2.0 * (fit.l0 * sd if name == "l0" else sd)
    return out


def confidence_regions(fit, streams=None):
    """2-sigma half-widths from the inverse observed information.

    These are in-model uncertainties; they do not account for errors in the
    choice of frequency set. Unidentifiable parameters map to None.
    """
    if streams is not None:
        problem = _RamseyProblem(streams, fit.t_w, fit.frequencies, (fit.omega.t0, fit.omega.t_step, fit.omega.n))
        _attach_confidence(fit, problem)
    return dict(fit.half_widths)


def ramsey_select(streams, t_w, detected, base_size=None, epsilon=1e-5, **kw):
    """Fit nested frequency sets and keep the minimum-AIC one.

    Candidates are the prefixes of `detected` sorted by index, starting from
    the ``base_size`` lowest frequencies (default ``min(4, len)``).
    Returns ``(best_fit, table)`` where table rows are
    ``(frequencies, k, log_likelihood, aic)``.
    """
    detected = sorted(set(int(w) for w in detected))
    if base_size is None:
        base_size = min(4, len(detected))
    sizes = range(base_size, len(detected) + 1) if detected else [0]
    fits = []
    prev = None
    for size in sizes:
        ws = detected[:size]
        init = None
        if prev is not None:
            init = np.concatenate([prev.theta, np.zeros(len(ws) - len(prev.frequencies))])
        fit = ramsey_fit(streams, t_w, ws, epsilon, init=init, confidence=False, **kw)
        fits.append(fit)
        prev = fit
    cmp = aic_compare([f.score for f in fits])
    best = fits[cmp.best]
    problem = _RamseyProblem(streams, t_w, best.frequencies, (best.omega.t0, best.omega.t_step, best.omega.n))
    _attach_confidence(best, problem)
    table = [(f.frequencies, f.score.k, f.score.log_likelihood_max, f.score.aic) for f in fits]
    return best, table


class TimeResolvedRamsey(BaseEstimator):
    """Detect drift in Ramsey clickstreams, select a detuning model by AIC, and fit it.

    ``predict(t)`` returns the estimated detuning Omega(t) in Hz.
    """

    def __init__(self, t_w, alpha=0.05, w=0.5, frequencies=None, base_size=None, epsilon=1e-5):
        self.t_w = t_w
        self.alpha = alpha
        self.w = w
        self.frequencies = frequencies
        self.base_size = base_size
        self.epsilon = epsilon

    def fit(self, X, y=None):
        streams = list(X)
        if self.frequencies is None:
            det = DriftDetector(alpha=self.alpha, w=self.w, cv_threshold=None).fit(streams)
            found = set(det.outcome_.averaged_significant)
            for r in det.outcome_.circuits.values():
                found.update(r.significant)
            self.detected_ = tuple(sorted(found))
            self.detector_ = det
        else:
            self.detected_ = tuple(sorted(self.frequencies))
        self.fit_, self.aic_table_ = ramsey_select(streams, self.t_w, self.detected_, self.base_size,
                                                   self.epsilon)
        return self

    def predict(self, t):
        check_is_fitted(self, "fit_")
        return self.fit_.omega.evaluate(np.asarray(t, dtype=float))


# ---------------------------------------------------------------------------
# model violation


@dataclass
class ModelViolation:
    circuit_ids: list
    llr: np.ndarray
    tvd: np.ndarray
    flagged: np.ndarray
    threshold: float


def _llr(k1, n, p):
    k0 = n - k1
    f = k1 / n
    out = 0.0
    for count, freq, pred in ((k1, f, p), (k0, 1 - f, 1 - p)):
        if count == 0:
            continue
        if pred <= 0.0:
            return math.inf
        out += count * math.log(freq / pred)
    return max(2.0 * out, 0.0)


def model_violation(streams, predicted, alpha=0.05):
    """Per-circuit log-likelihood ratio and total variation distance.

    ``LLR = -2 ln(L(predicted) / L(observed frequency))`` is compared with a
    chi^2_1 threshold Bonferroni-corrected over circuits.
    """
    streams = list(streams)
    predicted = np.asarray(predicted, dtype=float)
    if predicted.shape != (len(streams),):
        raise ValueError("need exactly one predicted probability per circuit")
    if np.any((predicted < 0) | (predicted > 1)):
        raise ValueError("predicted probabilities must lie in [0, 1]")
    llr = np.array([_llr(int(s.outcomes.sum()), s.n, p) for s, p in zip(streams, predicted)])
    tvd = np.abs(predicted - np.array([s.mean for s in streams]))
    thr = chi2_isf(1, alpha / len(streams))
    return ModelViolation([s.circuit_id for s in streams], llr, tvd, llr > thr, thr)


def llr_pvalues(violation):
    return chi2_sf(1, violation.llr)
