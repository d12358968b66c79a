"""Probability-trajectory models and their estimators.

A trajectory is ``p(t) = a0 + sum_w a_w f_w(t)`` with the DCT-II basis
``f_w(t) = cos(w*pi/N * ((t - t0)/t_step + 1/2))``. Amplitudes are kept in
the polytope ``a0 - sum|a_w| >= eps``, ``a0 + sum|a_w| <= 1 - eps``, which
guarantees a valid probability at every time.
"""

from dataclasses import dataclass, field
import math

import numpy as np
from scipy import optimize
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .spectral import Clickstream, standardize

__all__ = [
    "AICComparison",
    "ConvergenceError",
    "ModelScore",
    "TrajectoryEstimator",
    "TrajectoryModel",
    "aic_compare",
    "fourier_filter",
    "log_likelihood",
    "mle_fit",
    "select_frequencies",
]


class ConvergenceError(RuntimeError):
    """Optimizer ran out of budget; ``best`` holds the best iterate found."""

    def __init__(self, message, best=None):
        super().__init__(message)
        self.best = best


def basis(w, t, t0, t_step, n):
    """DCT-II basis function ``f_w`` evaluated at times `t`."""
    u = (np.asarray(t, dtype=float) - t0) / t_step + 0.5
    return np.cos(np.pi * w * u / n)


@dataclass
class TrajectoryModel:
    base: float
    terms: dict = field(default_factory=dict)
    t0: float = 0.0
    t_step: float = 1.0
    n: int = 1
    epsilon: float = 0.0

    @property
    def frequencies(self):
        return tuple(sorted(self.terms))

    @property
    def amplitudes(self):
        return np.array([self.terms[w] for w in self.frequencies])

    def design(self, t):
        """Matrix of basis functions, one column per frequency in sorted order."""
        t = np.atleast_1d(np.asarray(t, dtype=float))
        if not self.terms:
            return np.zeros((t.size, 0))
        ws = np.array(self.frequencies, dtype=float)
        return basis(ws[np.newaxis, :], t[:, np.newaxis], self.t0, self.t_step, self.n)

    def evaluate(self, t):
        t = np.asarray(t, dtype=float)
        out = self.base + self.design(t) @ self.amplitudes if self.terms else np.full(t.shape, self.base)
        return out.reshape(t.shape) if t.ndim else float(np.ravel(out)[0])

    __call__ = evaluate

    def margins(self):
        """``(a0 - sum|a|, 1 - a0 - sum|a|)``; both must be >= epsilon."""
        l1 = float(np.abs(self.amplitudes).sum()) if self.terms else 0.0
        return self.base - l1, 1.0 - self.base - l1

    def is_feasible(self, tol=1e-12):
        lo, hi = self.margins()
        return lo >= self.epsilon - tol and hi >= self.epsilon - tol

    def with_amplitudes(self, base, amplitudes):
        return TrajectoryModel(
            float(base),
            {w: float(a) for w, a in zip(self.frequencies, amplitudes)},
            self.t0,
            self.t_step,
            self.n,
            self.epsilon,
        )

    def to_dict(self):
        return {
            "base": self.base,
            "terms": {str(w): self.terms[w] for w in self.frequencies},
            "t0": self.t0,
            "t_step": self.t_step,
            "n": self.n,
            "epsilon": self.epsilon,
        }


@dataclass
class ModelScore:
    k: int
    log_likelihood_max: float

    @property
    def aic(self):
        return 2 * self.k - 2 * self.log_likelihood_max


def log_likelihood(model, stream):
    """Bernoulli log-likelihood of a clickstream under `model`."""
    p = model.evaluate(stream.sample_times())
    return _bernoulli_loglik(p, stream.outcomes)


def _bernoulli_loglik(p, x):
    x = np.asarray(x, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(x > 0, np.log(p), np.log1p(-p))
    return float(terms.sum())


def select_frequencies(outcome, circuit_id, policy="circuit"):
    """Frequency set for one circuit's trajectory model.

    ``"circuit"`` keeps exactly the frequencies flagged in that circuit's own
    spectrum. ``"average"`` (alias ``"rb"``) gives every circuit the frequencies
    flagged in the circuit-averaged spectrum.
    """
    if policy == "circuit":
        res = outcome.circuits.get(circuit_id)
        return tuple(res.significant) if res is not None else ()
    if policy in ("average", "rb"):
        return tuple(outcome.averaged_significant)
    raise ValueError(f"unknown frequency-selection policy {policy!r}")


def _shrinkage(amplitudes, budget):
    """Smallest ``d >= 0`` with ``sum(max(|a| - d, 0)) <= budget``."""
    mags = np.sort(np.abs(amplitudes))[::-1]
    if mags.sum() <= budget:
        return 0.0
    if budget <= 0:
        return float(mags[0]) if mags.size else 0.0
    # g(d) = sum(max(|a| - d, 0)) is piecewise linear; on the segment where the
    # top j magnitudes are active, g(d) = csum[j-1] - j d
    csum = np.cumsum(mags)
    for j in range(1, mags.size + 1):
        d = (csum[j - 1] - budget) / j
        lower = mags[j] if j < mags.size else 0.0
        if lower <= d <= mags[j - 1]:
            return float(d)
    return float(mags[0])


def _axis(stream):
    t0, t_step, _ = stream.time_axis()
    return t0, t_step


def fourier_filter(stream, frequencies, epsilon=0.0):
    """Optimization-free trajectory estimate.

    Raw amplitudes are the data's own DCT amplitudes at the chosen
    frequencies, rescaled so that evaluating the model at the sample times
    is the partial inverse transform. One common soft-threshold ``d`` is
    then subtracted from every magnitude, the smallest that brings the
    model inside the validity polytope.
    """
    xbar = stream.mean
    if epsilon < 0 or epsilon > min(xbar, 1.0 - xbar):
        raise ValueError(
            f"epsilon={epsilon} infeasible for mean {xbar:.6g}: need 0 <= epsilon <= min(xbar, 1 - xbar)"
        )
    t0, t_step = _axis(stream)
    n = stream.n
    ws = tuple(sorted(int(w) for w in frequencies))
    if any(w <= 0 or w >= n for w in ws):
        raise ValueError(f"frequencies must lie in 1..{n - 1}")
    if stream.is_constant or not ws:
        return TrajectoryModel(xbar, {}, t0, t_step, n, epsilon)
    z = standardize(stream)
    scale = math.sqrt(2.0 / n) * math.sqrt(xbar * (1.0 - xbar))
    raw = scale * z[list(ws)]
    budget = min(xbar - epsilon, 1.0 - epsilon - xbar)
    d = _shrinkage(raw, budget)
    shrunk = np.sign(raw) * np.maximum(np.abs(raw) - d, 0.0)
    return TrajectoryModel(xbar, dict(zip(ws, shrunk.tolist())), t0, t_step, n, epsilon)


def mle_fit(stream, frequencies, epsilon=1e-5, init=None, max_iter=500, tol=1e-9):
    """Maximum-likelihood trajectory over the validity polytope.

    Absolute values are handled by splitting ``a_w = u_w - v_w`` with
    ``u, v >= 0``, which turns the polytope into linear constraints; the
    concave log-likelihood is then maximized with SLSQP. Returns
    ``(model, ModelScore)`` with ``k = |W| + 1``.
    """
    ws = tuple(sorted(int(w) for w in frequencies))
    x = stream.outcomes.astype(float)
    xbar = stream.mean
    n = stream.n
    if init is None:
        eps0 = min(epsilon, xbar, 1.0 - xbar)
        init = fourier_filter(stream, ws, eps0)
        if eps0 < epsilon:
            init = TrajectoryModel(min(max(xbar, epsilon), 1 - epsilon), {w: 0.0 for w in ws},
                                   init.t0, init.t_step, n, epsilon)
    init = TrajectoryModel(init.base, {w: init.terms.get(w, 0.0) for w in ws},
                           init.t0, init.t_step, init.n, epsilon)
    if not init.is_feasible(1e-12):
        raise ValueError("initial model violates the validity constraints")
    init_ll = log_likelihood(init, stream)
    k = len(ws) + 1

    if not ws:
        # closed form: the clamped sample mean
        base = min(max(xbar, epsilon), 1.0 - epsilon)
        model = TrajectoryModel(base, {}, init.t0, init.t_step, init.n, epsilon)
        return model, ModelScore(k, log_likelihood(model, stream))

    B = init.design(stream.sample_times())
    m = len(ws)
    a0 = init.amplitudes
    theta0 = np.concatenate([[init.base], np.maximum(a0, 0.0), np.maximum(-a0, 0.0)])
    x1 = x > 0
    lo_clip = 1e-300

    def unpack(th):
        return th[0], th[1 : m + 1] - th[m + 1 :]

    def negll(th):
        b, a = unpack(th)
        p = np.clip(b + B @ a, lo_clip, 1.0 - 1e-16)
        return -float(np.log(np.where(x1, p, 1.0 - p)).sum()) / n

    def grad(th):
        b, a = unpack(th)
        p = np.clip(b + B @ a, lo_clip, 1.0 - 1e-16)
        r = np.where(x1, 1.0 / p, -1.0 / (1.0 - p))
        ga = B.T @ r
        return -np.concatenate([[r.sum()], ga, -ga]) / n

    ones = np.ones(2 * m)
    cons = [
        {"type": "ineq", "fun": lambda th: th[0] - th[1:].sum() - epsilon,
         "jac": lambda th: np.concatenate([[1.0], -ones])},
        {"type": "ineq", "fun": lambda th: 1.0 - epsilon - th[0] - th[1:].sum(),
         "jac": lambda th: np.concatenate([[-1.0], -ones])},
    ]
    bounds = [(epsilon, 1.0 - epsilon)] + [(0.0, 1.0)] * (2 * m)
    res = optimize.minimize(
        negll, theta0, jac=grad, method="SLSQP", bounds=bounds, constraints=cons,
        options={"maxiter": max_iter, "ftol": tol / n},
    )
    th = np.clip(res.x, [b[0] for b in bounds], [b[1] for b in bounds])
    b, a = unpack(th)
    model = init.with_amplitudes(b, a)
    model = _project_feasible(model)
    ll = log_likelihood(model, stream)
    if not np.isfinite(ll) or ll < init_ll:
        best, ll = init, init_ll
    else:
        best = model
    if res.status == 9 and ll < init_ll + tol:
        raise ConvergenceError(f"MLE did not converge in {max_iter} iterations", best=best)
    return best, ModelScore(k, ll)


def _project_feasible(model):
    """Pull a marginally infeasible optimizer iterate back inside the polytope."""
    lo, hi = model.margins()
    eps = model.epsilon
    if lo >= eps and hi >= eps:
        return model
    amps = model.amplitudes
    base = min(max(model.base, eps), 1.0 - eps)
    d = _shrinkage(amps, min(base - eps, 1.0 - eps - base))
    shrunk = np.sign(amps) * np.maximum(np.abs(amps) - d, 0.0)
    return model.with_amplitudes(base, shrunk)


@dataclass
class AICComparison:
    best: int
    aic: list
    differences: dict


def aic_compare(candidates):
    """Pick the minimum-AIC candidate; ties go to the smallest ``k``, then the earliest.

    ``differences[(a, b)] = AIC_a - AIC_b``, twice the log relative
    likelihood of model ``b`` with respect to model ``a``.
    """
    candidates = list(candidates)
    if not candidates:
        raise ValueError("need at least one candidate model")
    aics = [c.aic for c in candidates]
    best = min(range(len(candidates)), key=lambda i: (aics[i], candidates[i].k, i))
    diffs = {
        (a, b): aics[a] - aics[b]
        for a in range(len(candidates))
        for b in range(len(candidates))
        if a != b
    }
    return AICComparison(best, aics, diffs)


def _as_stream(X):
    if isinstance(X, Clickstream):
        return X
    return Clickstream("0", np.asarray(X).ravel())


class TrajectoryEstimator(BaseEstimator):
    """Estimates one circuit's outcome-probability trajectory.

    Parameters
    ----------
    frequencies : sequence of int
        Non-zero DCT indices in the model, typically the significant
        frequencies from :class:`~driftscope.testing.DriftDetector`.
    method : {"mle", "filter"}
    epsilon : float or None
        Margin from the [0, 1] boundary. Defaults to 1e-5 for MLE and 0 for
        the Fourier filter.
    """

    def __init__(self, frequencies=(), method="mle", epsilon=None):
        self.frequencies = frequencies
        self.method = method
        self.epsilon = epsilon

    def _epsilon(self):
        if self.epsilon is not None:
            return self.epsilon
        return 1e-5 if self.method == "mle" else 0.0

    def fit(self, X, y=None):
        stream = _as_stream(X)
        eps = self._epsilon()
        if self.method == "filter":
            self.model_ = fourier_filter(stream, self.frequencies, eps)
            self.score_ = ModelScore(len(self.model_.terms) + 1, log_likelihood(self.model_, stream))
        elif self.method == "mle":
            self.model_, self.score_ = mle_fit(stream, self.frequencies, eps)
        else:
            raise ValueError(f"unknown method {self.method!r}")
        return self

    def predict(self, t):
        check_is_fitted(self, "model_")
        return self.model_.evaluate(np.asarray(t, dtype=float))

    def score(self, X, y=None):
        """Log-likelihood of clickstream `X` under the fitted trajectory."""
        check_is_fitted(self, "model_")
        return log_likelihood(self.model_, _as_stream(X))
