"""Synthetic probability trajectories and Bernoulli clickstreams with known ground truth.

Randomness uses NumPy's PCG64 bit generator (``numpy.random.default_rng``),
seeded per circuit from ``SeedSequence([seed, c])`` so every circuit's draw
is replayable independently of how many others are generated.
"""

from dataclasses import dataclass, field
import json

import numpy as np

from ._validation import check_probabilities
from .spectral import Clickstream

__all__ = [
    "BROWNIAN_DEFAULTS",
    "ClipBudgetError",
    "RasteredDataset",
    "SynthSpec",
    "gen_rastered_dataset",
    "gen_trajectory",
    "phase_drift",
    "sample_clickstream",
]

KINDS = ("constant", "cosine-tone", "brownian-phase", "rb-family", "ramsey-family")

# phase error theta(t) = a t + b sin(phi t) + c_t, c_{t+1} = c_t + Normal(0, nu)
BROWNIAN_DEFAULTS = {"a": 2 * np.pi * 1e-5, "b": 1.5e-2, "phi": 2 * np.pi * 1e-2, "nu": 3 / 200}


class ClipBudgetError(ValueError):
    pass


@dataclass
class SynthSpec:
    """Recipe for one circuit's trajectory.

    Parameters per kind:

    * ``constant``: ``p0``
    * ``cosine-tone``: ``p0``, ``amplitude``, ``index``
    * ``brownian-phase``: ``a``, ``b``, ``phi``, ``nu`` (defaults above) and a
      ``law`` mapping phase to probability (default ``cos(theta/2)**2``);
      ``stride`` and ``offset`` place this circuit's samples on the global
      per-run clock
    * ``rb-family``: ``A``, ``B``, ``m`` and ``lam``, a callable of time or an
      array of per-sample decay parameters
    * ``ramsey-family``: ``A``, ``B``, ``l0``, ``t_w``, ``l`` and ``omega``
      (detuning in Hz), a callable of time or per-sample array
    """

    kind: str
    n: int
    params: dict = field(default_factory=dict)
    seed: int = 0
    raster_period: float = 1.0
    clip_budget: int = 0
    circuit_id: str | None = None
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown trajectory kind {self.kind!r}; expected one of {KINDS}")
        if int(self.n) < 1:
            raise ValueError("n must be >= 1")


def phase_drift(n_steps, rng, a=None, b=None, phi=None, nu=None):
    """Sample the drifting phase ``a t + b sin(phi t) + c_t`` for ``t = 0..n_steps-1``.

    ``c_t`` is a Gaussian random walk from ``c_0 = 0`` with step variance ``nu``.
    """
    d = BROWNIAN_DEFAULTS
    a = d["a"] if a is None else a
    b = d["b"] if b is None else b
    phi = d["phi"] if phi is None else phi
    nu = d["nu"] if nu is None else nu
    t = np.arange(n_steps, dtype=float)
    steps = rng.normal(0.0, np.sqrt(nu), size=n_steps - 1)
    c = np.concatenate([[0.0], np.cumsum(steps)])
    return a * t + b * np.sin(phi * t) + c, c


def _values(f, times):
    if callable(f):
        return np.asarray(f(times), dtype=float) * np.ones_like(times)
    arr = np.asarray(f, dtype=float)
    if arr.ndim == 0:
        return np.full(times.shape, float(arr))
    if arr.shape != times.shape:
        raise ValueError(f"per-sample parameter has shape {arr.shape}, expected {times.shape}")
    return arr


def gen_trajectory(spec, times=None):
    """Probability vector for `spec` plus a ground-truth metadata dict.

    `times` are the sample times handed to callable parameters; they default
    to ``i * raster_period``.
    """
    n = int(spec.n)
    P = spec.params
    i = np.arange(n, dtype=float)
    times = i * spec.raster_period if times is None else np.asarray(times, dtype=float)
    meta = {"kind": spec.kind, "params": {k: v for k, v in P.items() if not callable(v)}}
    if spec.kind == "constant":
        p = np.full(n, float(P["p0"]))
    elif spec.kind == "cosine-tone":
        p = P["p0"] + P.get("amplitude", 0.0) * np.cos(P.get("index", 1) * np.pi * (i + 0.5) / n)
    elif spec.kind == "brownian-phase":
        stride = int(P.get("stride", 1))
        offset = int(P.get("offset", 0))
        rng = np.random.default_rng(np.random.SeedSequence([spec.seed, 0x5EED]))
        kw = {k: P[k] for k in ("a", "b", "phi", "nu") if k in P}
        theta, _ = phase_drift((n - 1) * stride + offset + 1, rng, **kw)
        theta = theta[offset::stride][:n]
        law = P.get("law", lambda th: np.cos(th / 2.0) ** 2)
        p = np.asarray(law(theta), dtype=float)
        meta["theta"] = theta.tolist()
        meta["params"] = {**BROWNIAN_DEFAULTS, **meta["params"]}
        meta["params"].pop("law", None)
    elif spec.kind == "rb-family":
        lam = _values(P["lam"], times)
        p = P["A"] + P["B"] * lam ** P["m"]
        meta["lam"] = lam.tolist()
    elif spec.kind == "ramsey-family":
        omega = _values(P["omega"], times)
        p = P["A"] + P["B"] * np.exp(-P["l"] / P["l0"]) * np.sin(2 * np.pi * P["l"] * P["t_w"] * omega)
        meta["omega"] = omega.tolist()
    clipped = int(np.count_nonzero((p < 0) | (p > 1)))
    if clipped > spec.clip_budget:
        raise ClipBudgetError(
            f"{spec.kind}: {clipped} samples outside [0, 1] exceeds clip budget {spec.clip_budget}"
        )
    p = np.clip(p, 0.0, 1.0)
    meta["clip_count"] = clipped
    return p, meta


def sample_clickstream(p, seed, circuit_id="0", timestamps=None, raster_period=None, metadata=None):
    """Independent Bernoulli draws ``x_i ~ Bernoulli(p_i)``; deterministic for a fixed seed."""
    p = check_probabilities(p)
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    x = (rng.random(p.size) < p).astype(np.int8)
    return Clickstream(circuit_id, x, timestamps, raster_period, dict(metadata or {}))


@dataclass(eq=False)
class RasteredDataset:
    streams: list
    truth: dict
    raster_period: float

    def truth_json(self):
        return json.dumps(self.truth, sort_keys=True)

    @staticmethod
    def load_truth(text):
        return json.loads(text)


def gen_rastered_dataset(specs, seed, raster_period=1.0):
    """Generate rastered clickstreams for several circuits.

    Circuit ``c`` of ``C`` has its ``i``-th sample at ``(i*C + c) * raster_period``.
    The truth bundle records every generating trajectory.
    """
    specs = list(specs)
    if not specs:
        raise ValueError("need at least one circuit spec")
    n = specs[0].n
    if any(s.n != n for s in specs):
        raise ValueError("all circuit specs must share the same n")
    C = len(specs)
    streams = []
    truth = {"seed": int(seed), "raster_period": raster_period, "n": n, "circuits": {}}
    for c, spec in enumerate(specs):
        cid = spec.circuit_id if spec.circuit_id is not None else str(c)
        times = (np.arange(n) * C + c) * raster_period
        p, meta = gen_trajectory(spec, times)
        rng = np.random.default_rng(np.random.SeedSequence([int(seed), c]))
        streams.append(sample_clickstream(p, rng, cid, timestamps=times, metadata=spec.metadata))
        truth["circuits"][cid] = {"p": p.tolist(), "metadata": dict(spec.metadata), **meta}
    return RasteredDataset(streams, truth, raster_period)
