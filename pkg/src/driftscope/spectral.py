"""Clickstreams, the orthogonal DCT-II, and standardized power spectra.

A clickstream is first mean-removed and scaled by its binomial standard
deviation, then mapped through the orthonormal DCT-II. Under a constant
outcome probability each non-zero mode's power is approximately chi^2_1.
"""

from dataclasses import dataclass, field
import warnings

import numpy as np
from scipy import fft
from sklearn.base import BaseEstimator, TransformerMixin

from ._validation import check_bit_matrix, check_bits, check_probabilities

__all__ = [
    "Clickstream",
    "CoarseGraining",
    "NonUniformSamplingWarning",
    "PowerSpectrum",
    "SpectralTransformer",
    "VarianceDiagnostics",
    "average_spectrum",
    "coarse_grain",
    "dct",
    "dct_matrix",
    "frequencies_hz",
    "outcome_averaged_spectrum",
    "power_spectrum",
    "standardize",
    "standardize_matrix",
    "variance_diagnostics",
]

DENSE_LIMIT = 4096


class NonUniformSamplingWarning(UserWarning):
    """Sample times deviate enough from a uniform grid to blur the spectrum."""


@dataclass(frozen=True, eq=False)
class Clickstream:
    """Time-ordered binary outcomes of repeated runs of one circuit.

    ``timestamps`` (seconds, strictly increasing) and ``raster_period``
    (nominal seconds between repetitions) are optional; without either,
    time is measured in repetition indices. ``metadata`` carries
    per-circuit experiment settings such as an RB length ``m``.
    """

    circuit_id: str
    outcomes: np.ndarray
    timestamps: np.ndarray | None = None
    raster_period: float | None = None
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        outcomes = check_bits(self.outcomes)
        object.__setattr__(self, "outcomes", outcomes)
        if self.timestamps is not None:
            ts = np.asarray(self.timestamps, dtype=float)
            if ts.shape != outcomes.shape:
                raise ValueError(
                    f"circuit {self.circuit_id!r}: {ts.size} timestamps for {outcomes.size} outcomes"
                )
            if ts.size > 1 and np.any(np.diff(ts) <= 0):
                raise ValueError(f"circuit {self.circuit_id!r}: timestamps must be strictly increasing")
            object.__setattr__(self, "timestamps", ts)
        if self.raster_period is not None and not self.raster_period > 0:
            raise ValueError("raster_period must be positive")

    @property
    def n(self):
        return self.outcomes.size

    @property
    def mean(self):
        return float(self.outcomes.mean())

    @property
    def is_constant(self):
        m = self.outcomes.mean()
        return m == 0.0 or m == 1.0

    def time_axis(self):
        """``(t0, t_step, has_physical_time)`` for the DCT basis functions."""
        if self.timestamps is not None:
            t0 = float(self.timestamps[0])
            if self.n == 1:
                return t0, float(self.raster_period or 1.0), True
            return t0, float(self.timestamps[-1] - t0) / (self.n - 1), True
        if self.raster_period is not None:
            return 0.0, float(self.raster_period), True
        return 0.0, 1.0, False

    def sample_times(self):
        if self.timestamps is not None:
            return self.timestamps.copy()
        t0, step, _ = self.time_axis()
        return t0 + step * np.arange(self.n)

    def gap_cv(self):
        """Coefficient of variation of the inter-sample gaps (0 for a uniform grid)."""
        if self.timestamps is None or self.n < 3:
            return 0.0
        gaps = np.diff(self.timestamps)
        return float(gaps.std() / gaps.mean())


def dct_matrix(n):
    """Dense orthonormal DCT-II matrix built directly from the closed form.

    Entry ``(w, i)`` is ``sqrt(2**(1 - [w == 0]) / n) * cos(w*pi*(i + 1/2)/n)``.
    Only materialized for ``n <= 4096``; use :func:`dct` above that.
    """
    n = int(n)
    if n < 1:
        raise ValueError("n must be >= 1")
    if n > DENSE_LIMIT:
        raise ValueError(f"dense DCT matrix limited to n <= {DENSE_LIMIT}; use dct() instead")
    w = np.arange(n)[:, np.newaxis]
    i = np.arange(n)[np.newaxis, :]
    F = np.sqrt(2.0 / n) * np.cos(w * np.pi * (i + 0.5) / n)
    F[0, :] = 1.0 / np.sqrt(n)
    return F


def dct(x, axis=-1):
    """Fast O(N log N) orthonormal DCT-II along `axis`."""
    return fft.dct(np.asarray(x, dtype=float), type=2, norm="ortho", axis=axis)


def idct(y, axis=-1):
    return fft.idct(np.asarray(y, dtype=float), type=2, norm="ortho", axis=axis)


def standardize_matrix(X):
    """Standardized DCT amplitudes for a batch of equal-length clickstreams.

    Returns ``(Z, fallback)`` where ``fallback[c]`` marks all-0/all-1 rows,
    whose amplitudes are set to the convention ``(0, 1, 1, ..., 1)``.
    """
    X = check_bit_matrix(X).astype(float)
    n = X.shape[1]
    xbar = X.mean(axis=1)
    fallback = (xbar == 0.0) | (xbar == 1.0)
    Z = np.empty_like(X)
    live = ~fallback
    if np.any(live):
        centered = X[live] - xbar[live, np.newaxis]
        scale = np.sqrt(xbar[live] * (1.0 - xbar[live]))
        Z[live] = dct(centered) / scale[:, np.newaxis]
        # mean removal makes mode 0 vanish; pin it to exact zero
        Z[live, 0] = 0.0
    if np.any(fallback):
        Z[fallback] = 1.0
        Z[fallback, 0] = 0.0
    if n == 1:
        Z[:, 0] = 0.0
    return Z, fallback


def standardize(stream):
    """Standardized amplitude vector of a single clickstream."""
    x = stream.outcomes if isinstance(stream, Clickstream) else stream
    Z, _ = standardize_matrix(np.asarray(x)[np.newaxis, :])
    return Z[0]


def frequencies_hz(n, t_step):
    """Physical frequency of each DCT-II basis function: ``w / (2 n t_step)``."""
    return np.arange(n) / (2.0 * n * t_step)


@dataclass(eq=False)
class PowerSpectrum:
    """Per-mode powers of one standardized clickstream, or an average of several.

    ``dof`` is the chi^2 degrees of freedom of the null per mode: a spectrum
    with ``dof = k`` has powers distributed as ``chi^2_k / k`` when drift-free.
    ``t_step`` (seconds) enables Hz conversion; ``fallback`` marks the
    constant-clickstream convention, which is not a measurement.
    """

    powers: np.ndarray
    dof: int = 1
    circuit_id: str | None = None
    t_step: float | None = None
    fallback: bool = False

    def __post_init__(self):
        self.powers = np.asarray(self.powers, dtype=float)
        if np.any(self.powers < 0):
            raise ValueError("powers must be non-negative")
        if int(self.dof) < 1:
            raise ValueError("dof must be >= 1")
        self.dof = int(self.dof)

    @property
    def n(self):
        return self.powers.size

    @property
    def frequencies_hz(self):
        if self.t_step is None:
            return None
        return frequencies_hz(self.n, self.t_step)


def _check_uniformity(stream, cv_threshold):
    if cv_threshold is None:
        return
    cv = stream.gap_cv()
    if cv > cv_threshold:
        warnings.warn(
            f"circuit {stream.circuit_id!r}: inter-sample gap CV {cv:.3g} exceeds {cv_threshold}; "
            "analyzing as if uniformly sampled",
            NonUniformSamplingWarning,
            stacklevel=3,
        )


def power_spectrum(stream, cv_threshold=0.1):
    """Power spectrum ``z_w**2`` of one clickstream (``dof = 1``)."""
    _check_uniformity(stream, cv_threshold)
    z = standardize(stream)
    _, t_step, physical = stream.time_axis()
    return PowerSpectrum(
        powers=z**2,
        dof=1,
        circuit_id=stream.circuit_id,
        t_step=t_step if physical else None,
        fallback=stream.is_constant,
    )


def average_spectrum(spectra, circuit_id="average"):
    """Average several spectra; the result's null is ``chi^2_D / D`` with ``D = sum(dof)``.

    Powers are dof-weighted, which is the plain arithmetic mean for the usual
    single-circuit (``dof = 1``) inputs.
    """
    spectra = list(spectra)
    if not spectra:
        raise ValueError("need at least one spectrum to average")
    n = spectra[0].n
    for s in spectra:
        if s.n != n:
            raise ValueError(f"spectrum length mismatch: {s.n} != {n}")
    dofs = np.array([s.dof for s in spectra], dtype=float)
    stacked = np.vstack([s.powers for s in spectra])
    powers = dofs @ stacked / dofs.sum()
    steps = {s.t_step for s in spectra}
    t_step = steps.pop() if len(steps) == 1 else None
    return PowerSpectrum(powers=powers, dof=int(dofs.sum()), circuit_id=circuit_id, t_step=t_step)


class SpectralTransformer(TransformerMixin, BaseEstimator):
    """Maps a (n_circuits, n_samples) bit matrix to its power spectra.

    Stateless apart from remembering the fitted stream length; rows that are
    all-0 or all-1 get the fallback spectrum and are listed in
    ``fallback_`` after :meth:`transform`.
    """

    def fit(self, X, y=None):
        X = check_bit_matrix(X)
        self.n_samples_ = X.shape[1]
        return self

    def transform(self, X):
        X = check_bit_matrix(X)
        if hasattr(self, "n_samples_") and X.shape[1] != self.n_samples_:
            raise ValueError(f"expected {self.n_samples_} samples per clickstream, got {X.shape[1]}")
        Z, self.fallback_ = standardize_matrix(X)
        return Z**2


@dataclass(eq=False)
class VarianceDiagnostics:
    nu: np.ndarray
    nu_closed_form: np.ndarray
    delta: np.ndarray
    mean_p: float
    signal: np.ndarray
    signal_powers: np.ndarray

    def inflated(self, tol=1e-12):
        """Mode indices (w > 0) whose variance exceeds 1 by more than `tol`."""
        return np.flatnonzero(self.nu[1:] > 1.0 + tol) + 1


def _extended_dct(v, k):
    """DCT-II amplitude of `v` at integer index `k`, allowing ``k >= n``.

    Uses the un-split ``sqrt(2/n)`` normalization for every index, together
    with the reflections ``v~[n] = 0`` and ``v~[2n - k] = -v~[k]``.
    """
    n = v.size
    base = dct(v)
    base[0] *= np.sqrt(2.0)
    k = np.asarray(k)
    k = np.mod(k, 2 * n)
    out = np.zeros(k.shape)
    lo = k < n
    out[lo] = base[k[lo]]
    hi = k > n
    out[hi] = -base[2 * n - k[hi]]
    return out


def variance_diagnostics(p):
    """Per-mode variance of the standardized amplitudes for trajectory `p`.

    ``nu`` is evaluated as ``sum_i F_wi^2 p_i (1 - p_i) / (pbar (1 - pbar))``;
    ``nu_closed_form`` is ``1 + delta / (pbar (1 - pbar))`` with ``delta``
    from the DCT identity in terms of the signal ``s = p - pbar`` and its
    pointwise square ``q``.
    """
    p = check_probabilities(p)
    n = p.size
    pbar = float(p.mean())
    if pbar <= 0.0 or pbar >= 1.0:
        raise ValueError("mean probability must lie strictly between 0 and 1")
    var0 = pbar * (1.0 - pbar)
    s = p - pbar
    q = s**2
    if n <= DENSE_LIMIT:
        F2 = dct_matrix(n) ** 2
        nu = F2 @ (p * (1.0 - p)) / var0
    else:
        # F_wi^2 = (1 + cos(2 w pi (i+1/2)/n)) / n for w > 0
        v = p * (1.0 - p)
        nu = (v.sum() + np.sqrt(n / 2.0) * _extended_dct(v, 2 * np.arange(n))) / n / var0
        nu[0] = v.sum() / n / var0
    w = np.arange(n)
    delta = (_extended_dct(s, 2 * w) * (1.0 - 2.0 * pbar) - _extended_dct(q, 2 * w)) / np.sqrt(
        2.0 * n
    ) - (s @ s) / n
    delta[0] = -(s @ s) / n
    return VarianceDiagnostics(
        nu=nu,
        nu_closed_form=1.0 + delta / var0,
        delta=delta,
        mean_p=pbar,
        signal=s,
        signal_powers=q,
    )


@dataclass(frozen=True)
class CoarseGraining:
    """Maps raw outcome labels onto ``bin_count`` indicator bins."""

    bin_map: dict
    bin_count: int

    def __post_init__(self):
        if self.bin_count < 2:
            raise ValueError("a coarse-graining needs at least two bins")
        for label, b in self.bin_map.items():
            if not 0 <= int(b) < self.bin_count:
                raise ValueError(f"label {label!r} maps to bin {b}, outside 0..{self.bin_count - 1}")

    @classmethod
    def identity(cls, labels):
        labels = sorted(set(labels))
        if len(labels) < 2:
            labels = labels + [f"<unobserved:{k}>" for k in range(2 - len(labels))]
        return cls({lab: k for k, lab in enumerate(labels)}, len(labels))

    def __call__(self, label):
        try:
            return int(self.bin_map[label])
        except KeyError:
            raise ValueError(f"outcome label {label!r} is not covered by the coarse-graining") from None


def coarse_grain(records, graining, circuit_id="circuit", timestamps=None, raster_period=None):
    """Split a sequence of raw outcome labels into one indicator clickstream per bin."""
    bins = np.array([graining(label) for label in records], dtype=int)
    if bins.size == 0:
        raise ValueError("no outcomes to coarse-grain")
    return [
        Clickstream(
            circuit_id=f"{circuit_id}[{b}]",
            outcomes=(bins == b).astype(np.int8),
            timestamps=timestamps,
            raster_period=raster_period,
        )
        for b in range(graining.bin_count)
    ]


def outcome_averaged_spectrum(streams, circuit_id=None):
    """Combine the per-bin spectra of one multi-outcome circuit.

    Each mode's statistic ``sum_b (1 - xbar_b) z_{b,w}^2`` is the Pearson form
    of the multinomial fluctuation, chi^2 with ``M - 1`` degrees of freedom
    for ``M`` observed bins; it is reported divided by ``M - 1`` so the null
    mean is 1. Bins that were never (or always) observed carry no
    fluctuation and are dropped.
    """
    streams = list(streams)
    live = [s for s in streams if not s.is_constant]
    n = streams[0].n
    if any(s.n != n for s in streams):
        raise ValueError("all bin clickstreams must have the same length")
    _, t_step, physical = streams[0].time_axis()
    t_step = t_step if physical else None
    if len(live) < 2:
        z = np.ones(n)
        z[0] = 0.0
        return PowerSpectrum(z, dof=1, circuit_id=circuit_id, t_step=t_step, fallback=True)
    Z, _ = standardize_matrix(np.vstack([s.outcomes for s in live]))
    weights = 1.0 - np.array([s.mean for s in live])
    dof = len(live) - 1
    return PowerSpectrum(weights @ Z**2 / dof, dof=dof, circuit_id=circuit_id, t_step=t_step)
