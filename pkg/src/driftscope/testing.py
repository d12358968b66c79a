"""Bonferroni-corrected chi^2 tests on power spectra.

Every non-zero mode of every per-circuit spectrum is tested at local
significance ``(1 - w) * alpha / ((N - 1) * n_spectra)`` and every non-zero
mode of the circuit-averaged spectrum at ``w * alpha / (N - 1)``; the local
levels sum to ``alpha`` so the family-wise error rate is controlled.

Under drift that leaves a mode's mean at zero but raises its variance
above 1 (possible for the DCT, up to 7/6), chi^2_1 thresholds slightly
exceed the nominal FWER; this is accepted rather than corrected, since
inflating the thresholds would cost power for all other trajectories.
"""

from dataclasses import dataclass, field
import math

import numpy as np
from scipy import optimize, special
from sklearn.base import BaseEstimator

from ._validation import check_fraction
from .spectral import Clickstream, average_spectrum, power_spectrum

__all__ = [
    "CircuitResult",
    "DriftDetector",
    "TestConfig",
    "TestOutcome",
    "Thresholds",
    "chi2_cdf",
    "chi2_cdf_inv",
    "chi2_isf",
    "chi2_sf",
    "lambda_p",
    "test_spectra",
    "thresholds",
]


def chi2_cdf(k, x):
    """Lower regularized incomplete gamma ``P(k/2, x/2)``."""
    return special.gammainc(0.5 * k, 0.5 * np.asarray(x, dtype=float))


def chi2_sf(k, x):
    """Upper tail ``Q(k/2, x/2)``; accurate deep into the tail."""
    return special.gammaincc(0.5 * k, 0.5 * np.asarray(x, dtype=float))


def _check_dof(k):
    if isinstance(k, bool) or int(k) != k or k < 1:
        raise ValueError(f"degrees of freedom must be a positive integer, got {k!r}")
    return int(k)


def _bracket(objective, lo=0.0, hi=1.0):
    while objective(hi) < 0:
        lo, hi = hi, 2.0 * hi
        if hi > 1e8:
            raise ArithmeticError("failed to bracket the chi^2 quantile")
    return lo, hi


def _solve_lower(k, q):
    # log-space keeps the left tail well-conditioned for tiny q
    logq = math.log(q)

    def obj(x):
        c = float(chi2_cdf(k, x))
        return (math.log(c) if c > 0 else -1e4) - logq

    lo, hi = _bracket(obj)
    if lo == 0.0:
        lo = hi
        while obj(lo) > 0:
            hi, lo = lo, 0.5 * lo
            if lo < 1e-300:
                return 0.0
    return optimize.brentq(obj, lo, hi, xtol=1e-300, rtol=4 * np.finfo(float).eps, maxiter=500)


def _solve_upper(k, tail):
    logt = math.log(tail)

    def obj(x):
        s = float(chi2_sf(k, x))
        return logt - (math.log(s) if s > 0 else -1e4)

    lo, hi = _bracket(obj)
    return optimize.brentq(obj, lo, hi, xtol=1e-300, rtol=4 * np.finfo(float).eps, maxiter=500)


def chi2_cdf_inv(k, q):
    """Quantile of the chi^2_k distribution: ``x`` with ``CDF_k(x) = q``."""
    k = _check_dof(k)
    q = float(q)
    if not 0.0 < q < 1.0:
        raise ValueError(f"q must lie in (0, 1), got {q}")
    if q <= 0.5:
        return _solve_lower(k, q)
    return _solve_upper(k, 1.0 - q)


def chi2_isf(k, tail):
    """Inverse survival function: ``x`` with ``1 - CDF_k(x) = tail``.

    Prefer this to ``chi2_cdf_inv(k, 1 - tail)`` for small tails, which
    would lose digits forming ``1 - tail``.
    """
    k = _check_dof(k)
    tail = float(tail)
    if not 0.0 < tail < 1.0:
        raise ValueError(f"tail must lie in (0, 1), got {tail}")
    if tail >= 0.5:
        return _solve_lower(k, 1.0 - tail)
    return _solve_upper(k, tail)


@dataclass
class TestConfig:
    """Global significance, averaged-spectrum weight, and test-family geometry.

    ``n_spectra`` is the number of individually tested spectra; it equals
    ``n_circuits`` for binary data and grows when multi-outcome circuits
    contribute several spectra each.
    """

    __test__ = False

    n_frequencies: int
    n_circuits: int
    alpha: float = 0.05
    w: float = 0.5
    n_spectra: int | None = None
    pvalue_floor: float = 1e-16

    def __post_init__(self):
        self.alpha = check_fraction(self.alpha, "alpha")
        self.w = check_fraction(self.w, "w", closed=True)
        if int(self.n_frequencies) < 1:
            raise ValueError("need at least one non-zero frequency to test (N >= 2)")
        if int(self.n_circuits) < 1:
            raise ValueError("n_circuits must be >= 1")
        self.n_frequencies = int(self.n_frequencies)
        self.n_circuits = int(self.n_circuits)
        self.n_spectra = self.n_circuits if self.n_spectra is None else int(self.n_spectra)
        if not 0.0 < self.pvalue_floor < 1.0:
            raise ValueError("pvalue_floor must lie in (0, 1)")

    @property
    def weight_individual(self):
        """Bonferroni weight of one (spectrum, frequency) test."""
        return (1.0 - self.w) / (self.n_frequencies * self.n_spectra)

    @property
    def weight_average(self):
        return self.w / self.n_frequencies

    @property
    def total_weight(self):
        return self.n_frequencies * (self.weight_average + self.n_spectra * self.weight_individual)


@dataclass
class Thresholds:
    """Power thresholds; ``inf`` marks a disabled test class."""

    t_individual: float
    t_average: float
    local_alpha_individual: float
    local_alpha_average: float
    average_dof: int

    @property
    def lambda_p_threshold(self):
        """``-log10`` of the per-test level, the cut applied to lambda_p."""
        if self.local_alpha_individual == 0.0:
            return math.inf
        return -math.log10(self.local_alpha_individual)

    def individual(self, dof=1):
        """Threshold for a per-circuit spectrum whose null is ``chi^2_dof / dof``."""
        if self.local_alpha_individual == 0.0:
            return math.inf
        if dof == 1:
            return self.t_individual
        return chi2_isf(dof, self.local_alpha_individual) / dof


def thresholds(config, average_dof=None):
    """Significance thresholds for the per-circuit and averaged spectra.

    ``average_dof`` defaults to ``n_circuits``; pass it explicitly when the
    averaged spectrum combines multi-outcome spectra.
    """
    dof_avg = config.n_circuits if average_dof is None else int(average_dof)
    a_ind = config.alpha * config.weight_individual
    a_avg = config.alpha * config.weight_average
    t_ind = chi2_isf(1, a_ind) if a_ind > 0 else math.inf
    t_avg = chi2_isf(dof_avg, a_avg) / dof_avg if a_avg > 0 else math.inf
    return Thresholds(t_ind, t_avg, a_ind, a_avg, dof_avg)


def lambda_p(max_power, dof=1, floor=1e-16):
    """``-log10`` of the chi^2 upper-tail p-value of a spectrum's largest power."""
    p = float(chi2_sf(dof, dof * max_power))
    return -math.log10(max(p, floor))


@dataclass
class CircuitResult:
    circuit_id: str
    significant: tuple
    lambda_p: float
    lambda_p_significant: bool
    max_power: float
    max_index: int
    dof: int = 1


@dataclass
class TestOutcome:
    """Verdicts of one run of the test family."""

    __test__ = False

    thresholds: Thresholds
    circuits: dict
    averaged_significant: tuple
    excluded: list = field(default_factory=list)
    n_tests: int = 0

    @property
    def drift_detected(self):
        return bool(self.averaged_significant) or any(r.significant for r in self.circuits.values())

    def significant_frequencies(self, circuit_id):
        return self.circuits[circuit_id].significant


def test_spectra(per_circuit, averaged, config, thresh=None):
    """Apply the per-circuit and averaged-spectrum tests.

    Strict inequality: a power equal to its threshold is not flagged.
    Fallback (constant clickstream) spectra are skipped and listed in
    ``excluded``. ``averaged`` may be None when its test is disabled.
    """
    per_circuit = list(per_circuit)
    if not per_circuit and averaged is None:
        raise ValueError("nothing to test")
    thresh = thresholds(config, None if averaged is None else averaged.dof) if thresh is None else thresh
    n = config.n_frequencies + 1
    results = {}
    excluded = []
    n_tests = 0
    for spec in per_circuit:
        if spec.n != n:
            raise ValueError(f"spectrum {spec.circuit_id!r} has length {spec.n}, expected {n}")
        if spec.fallback:
            excluded.append(spec.circuit_id)
            continue
        t = thresh.individual(spec.dof)
        tail = spec.powers[1:]
        idx = int(np.argmax(tail)) + 1 if tail.size else 0
        peak = float(spec.powers[idx]) if tail.size else 0.0
        sig = tuple(int(w) + 1 for w in np.flatnonzero(tail > t))
        if math.isfinite(t):
            n_tests += tail.size
        results[spec.circuit_id] = CircuitResult(
            circuit_id=spec.circuit_id,
            significant=sig,
            lambda_p=lambda_p(peak, spec.dof, config.pvalue_floor),
            lambda_p_significant=peak > t,
            max_power=peak,
            max_index=idx,
            dof=spec.dof,
        )
    avg_sig = ()
    if averaged is not None and math.isfinite(thresh.t_average):
        if averaged.n != n:
            raise ValueError(f"averaged spectrum has length {averaged.n}, expected {n}")
        avg_sig = tuple(int(w) + 1 for w in np.flatnonzero(averaged.powers[1:] > thresh.t_average))
        n_tests += n - 1
    return TestOutcome(thresh, results, avg_sig, excluded, n_tests)


# keep pytest from collecting the public API as a test
test_spectra.__test__ = False


def _as_streams(X):
    if isinstance(X, Clickstream):
        return [X]
    items = list(X)
    if items and all(isinstance(s, Clickstream) for s in items):
        return items
    arr = np.asarray(X)
    if arr.ndim == 1:
        arr = arr[np.newaxis, :]
    return [Clickstream(circuit_id=str(c), outcomes=row) for c, row in enumerate(arr)]


class DriftDetector(BaseEstimator):
    """Detects temporal drift in a set of equal-length clickstreams.

    Parameters
    ----------
    alpha : float
        Global significance (family-wise error rate).
    w : float
        Share of ``alpha`` spent on the circuit-averaged spectrum; ``w = 1``
        tests only the averaged spectrum, ``w = 0`` only per-circuit spectra.
    include_constant : bool
        Whether constant clickstreams' fallback spectra enter the average.
        They are never tested individually.
    cv_threshold : float or None
        Warn when inter-sample gaps have a larger coefficient of variation.

    Attributes
    ----------
    spectra_ : list of PowerSpectrum
    averaged_spectrum_ : PowerSpectrum or None
    thresholds_ : Thresholds
    outcome_ : TestOutcome
    drift_detected_ : bool
    """

    def __init__(self, alpha=0.05, w=0.5, include_constant=False, pvalue_floor=1e-16, cv_threshold=0.1):
        self.alpha = alpha
        self.w = w
        self.include_constant = include_constant
        self.pvalue_floor = pvalue_floor
        self.cv_threshold = cv_threshold

    def fit(self, X, y=None):
        streams = _as_streams(X)
        if not streams:
            raise ValueError("no clickstreams given")
        n = streams[0].n
        if any(s.n != n for s in streams):
            raise ValueError("all clickstreams must have the same number of outcomes")
        return self.fit_spectra([power_spectrum(s, self.cv_threshold) for s in streams])

    def fit_spectra(self, spectra):
        """Run the tests on precomputed per-circuit spectra (e.g. outcome-averaged ones)."""
        spectra = list(spectra)
        if not spectra:
            raise ValueError("no spectra given")
        n = spectra[0].n
        if any(s.n != n for s in spectra):
            raise ValueError("all spectra must have the same length")
        pool = [s for s in spectra if self.include_constant or not s.fallback]
        n_tested = sum(not s.fallback for s in spectra)
        averaged = average_spectrum(pool) if pool else None
        config = TestConfig(
            n_frequencies=n - 1,
            n_circuits=max(len(pool), 1),
            alpha=self.alpha,
            w=self.w,
            n_spectra=max(n_tested, 1),
            pvalue_floor=self.pvalue_floor,
        )
        self.config_ = config
        self.spectra_ = spectra
        self.averaged_spectrum_ = averaged
        self.outcome_ = test_spectra(spectra, averaged, config)
        self.thresholds_ = self.outcome_.thresholds
        self.drift_detected_ = self.outcome_.drift_detected
        return self

    def transform(self, X):
        """Power spectra of `X` as a (n_circuits, n_samples) array."""
        return np.vstack([power_spectrum(s, None).powers for s in _as_streams(X)])

    def predict(self, X):
        """Per-circuit drift verdicts for `X`, judged with the fitted thresholds."""
        spectra = [power_spectrum(s, None) for s in _as_streams(X)]
        out = test_spectra(spectra, None, self.config_, thresh=self.thresholds_)
        return np.array([bool(out.circuits[s.circuit_id].significant) if s.circuit_id in out.circuits else False
                         for s in spectra])
