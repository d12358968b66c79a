"""Command-line interface: ``driftscope analyze | fit-rb | fit-ramsey | simulate``.

Exit codes: 0 success (no drift detected for ``analyze``), 10 drift
detected, 2 usage or input error.
"""

import argparse
from concurrent.futures import ThreadPoolExecutor
import json
import os
import sys
import warnings

import numpy as np

from . import __version__
from .io import DatasetError, atomic_write, dataset_text, dumps_report, read_dataset, sha256_file, write_csv
from .spectral import CoarseGraining, outcome_averaged_spectrum, power_spectrum
from .synth import BROWNIAN_DEFAULTS, SynthSpec, gen_rastered_dataset
from .testing import DriftDetector
from .timeresolved import RBDataset, TimeResolvedRamsey, rb_static, rb_time_resolved
from .trajectory import ConvergenceError, fourier_filter, mle_fit, select_frequencies

EXIT_OK = 0
EXIT_DRIFT = 10
EXIT_ERROR = 2


class UsageError(ValueError):
    pass


def _workers():
    raw = os.environ.get("DRIFTSCOPE_THREADS", "0")
    try:
        n = int(raw)
    except ValueError:
        raise UsageError(f"DRIFTSCOPE_THREADS must be an integer, got {raw!r}") from None
    if n < 0:
        raise UsageError("DRIFTSCOPE_THREADS must be >= 0")
    return n or (os.cpu_count() or 1)


def _unit_interval(text):
    try:
        v = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a number, got {text!r}") from None
    if not 0.0 < v < 1.0:
        raise argparse.ArgumentTypeError(f"must lie strictly between 0 and 1, got {v}")
    return v


def _weight(text):
    try:
        v = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a number, got {text!r}") from None
    if not 0.0 <= v <= 1.0:
        raise argparse.ArgumentTypeError(f"must lie in [0, 1], got {v}")
    return v


def _nonneg(text):
    v = float(text)
    if not v >= 0:
        raise argparse.ArgumentTypeError(f"must be >= 0, got {v}")
    return v


def _positive(text):
    try:
        v = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a number, got {text!r}") from None
    if not v > 0:
        raise argparse.ArgumentTypeError(f"must be > 0, got {v}")
    return v


def _numbers(text, kind=float):
    try:
        return [kind(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a comma-separated list, got {text!r}") from None


def _int_list(text):
    return _numbers(text, int)


# ---------------------------------------------------------------------------
# analyze


def _load_bin_map(arg):
    if arg is None:
        return None
    text = open(arg, encoding="utf-8").read() if os.path.exists(arg) else arg
    try:
        mapping = json.loads(text)
    except json.JSONDecodeError as exc:
        raise UsageError(f"--bin-map is neither a file nor valid JSON: {exc.msg}") from None
    if not isinstance(mapping, dict) or not mapping:
        raise UsageError("--bin-map must be a JSON object mapping outcome labels to bin numbers")
    bins = {str(k): int(v) for k, v in mapping.items()}
    return CoarseGraining(bins, max(bins.values()) + 1)


def _frequencies(ws, n, t_step):
    return [{"index": int(w), "hz": (w / (2 * n * t_step) if t_step is not None else None)} for w in ws]


def _fit_models(items, estimator, epsilon):
    """Fit trajectory models for ``(stream, frequencies)`` pairs, fanning out when using MLE."""
    def one(item):
        stream, ws = item
        if not ws:
            return fourier_filter(stream, (), 0.0)
        if estimator == "filter":
            return fourier_filter(stream, ws, 0.0 if epsilon is None else epsilon)
        try:
            model, _ = mle_fit(stream, ws, 1e-5 if epsilon is None else epsilon)
        except ConvergenceError as exc:
            model = exc.best
        return model

    workers = _workers() if estimator == "mle" else 1
    if workers > 1 and len(items) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(one, items))
    return [one(item) for item in items]


def _analyze(args):
    data = read_dataset(args.input)
    graining = _load_bin_map(args.bin_map)
    multi = graining is not None or not data.is_binary
    notes = []
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        if multi:
            groups = data.grouped_streams(graining)
            spectra = [outcome_averaged_spectrum(streams, cid) for cid, streams in groups.items()]
            first = next(iter(groups.values()))[0]
            for streams in groups.values():
                if streams[0].gap_cv() > 0.1:
                    warnings.warn(f"circuit {streams[0].circuit_id!r}: sampling gaps are irregular")
        else:
            streams = data.streams()
            spectra = [power_spectrum(s, 0.1) for s in streams]
            first = streams[0]
        det = DriftDetector(alpha=args.alpha, w=args.weight_w).fit_spectra(spectra)
    for msg in sorted({str(w.message) for w in caught}):
        notes.append(msg)

    n = first.n
    _, t_step, physical = first.time_axis()
    t_step = t_step if physical else None
    if t_step is None:
        notes.append("no timestamps or raster_period: frequencies are reported as indices only")

    out = det.outcome_
    if multi:
        items, owners = [], []
        for cid, streams in groups.items():
            ws = select_frequencies(out, cid, args.policy)
            for s in streams:
                items.append((s, ws))
                owners.append(cid)
    else:
        items = [(s, select_frequencies(out, s.circuit_id, args.policy)) for s in streams]
        owners = [s.circuit_id for s in streams]
    models = _fit_models(items, args.estimator, args.epsilon)

    circuits = {}
    for spec in spectra:
        cid = spec.circuit_id
        res = out.circuits.get(cid)
        entry = {"excluded": res is None, "dof": spec.dof}
        if res is not None:
            entry.update({
                "lambda_p": res.lambda_p,
                "lambda_p_significant": res.lambda_p_significant,
                "max_power": res.max_power,
                "max_index": res.max_index,
                "significant": _frequencies(res.significant, n, t_step),
            })
        else:
            entry["significant"] = []
        circuits[cid] = entry
    for (stream, ws), owner, model in zip(items, owners, models):
        traj = {"frequencies": list(ws), **model.to_dict()}
        if multi:
            circuits[owner].setdefault("trajectories", {})[stream.circuit_id] = traj
        else:
            circuits[owner]["trajectory"] = traj

    th = det.thresholds_
    report = {
        "tool": {"name": "driftscope", "version": __version__},
        "input": {"sha256": sha256_file(args.input), "circuits": len(spectra), "samples": n,
                  "multi_outcome": multi},
        "config": {"alpha": args.alpha, "weight_w": args.weight_w, "epsilon": args.epsilon,
                   "policy": args.policy, "estimator": args.estimator,
                   "bin_map": None if graining is None else graining.bin_map},
        "thresholds": {
            "individual": th.t_individual,
            "average": th.t_average,
            "local_alpha_individual": th.local_alpha_individual,
            "local_alpha_average": th.local_alpha_average,
            "average_dof": th.average_dof,
            "lambda_p": th.lambda_p_threshold,
        },
        "averaged": {
            "dof": None if det.averaged_spectrum_ is None else det.averaged_spectrum_.dof,
            "significant": _frequencies(out.averaged_significant, n, t_step),
        },
        "circuits": circuits,
        "excluded": sorted(out.excluded),
        "n_tests": out.n_tests,
        "verdict": {"drift_detected": out.drift_detected,
                    "exit_code": EXIT_DRIFT if out.drift_detected else EXIT_OK},
        "notes": notes,
    }
    _emit(report, args.out)

    if args.csv_spectra:
        rows = []
        allspec = list(spectra) + ([det.averaged_spectrum_] if det.averaged_spectrum_ is not None else [])
        for spec in allspec:
            for w in range(1, n):
                hz = w / (2 * n * t_step) if t_step is not None else None
                rows.append((spec.circuit_id, w, hz, float(spec.powers[w])))
        write_csv(args.csv_spectra, ("circuit_id", "index", "hz", "power"), rows)
    if args.csv_trajectories:
        rows = []
        for (stream, _), model in zip(items, models):
            t = stream.sample_times()
            p = model.evaluate(t)
            rows.extend((stream.circuit_id, float(ti), float(pi)) for ti, pi in zip(t, p))
        write_csv(args.csv_trajectories, ("circuit_id", "t", "p"), rows)
    return EXIT_DRIFT if out.drift_detected else EXIT_OK


def _emit(report, path):
    text = dumps_report(report)
    if path is None or path == "-":
        sys.stdout.write(text)
    else:
        atomic_write(path, text)


def _times(args, streams):
    if args.times:
        return np.array(args.times, dtype=float)
    t_lo = min(s.sample_times()[0] for s in streams)
    t_hi = max(s.sample_times()[-1] for s in streams)
    return np.linspace(t_lo, t_hi, args.n_times)


# ---------------------------------------------------------------------------
# fit-rb


def _fit_rb(args):
    data = read_dataset(args.input)
    streams = data.streams()
    try:
        rb = RBDataset.from_streams(streams, args.qubits)
    except ValueError as exc:
        raise DatasetError(str(exc)) from None
    if np.unique(rb.lengths).size < 3:
        raise DatasetError(f"RB fit needs at least three distinct lengths m, found {np.unique(rb.lengths).tolist()}")
    times = _times(args, streams)
    fit = rb_time_resolved(rb, times, args.alpha, args.estimator, args.epsilon)
    static = rb_static(rb)
    rows = [
        {"t": t, "r": r, "A": a, "B": b, "lambda": lam, "success": bool(ok)}
        for (t, r, a, b, lam), ok in zip(fit.rows(), fit.success)
    ]
    report = {
        "tool": {"name": "driftscope", "version": __version__},
        "input": {"sha256": sha256_file(args.input), "circuits": len(streams), "samples": streams[0].n},
        "config": {"alpha": args.alpha, "qubits": args.qubits, "estimator": args.estimator,
                   "epsilon": args.epsilon},
        "rb": {
            "normalization": fit.normalization,
            "lengths": fit.lengths.tolist(),
            "frequencies": list(fit.frequencies),
            "static": static,
            "instants": rows,
        },
    }
    _emit(report, args.out)
    if args.csv:
        write_csv(args.csv, ("t", "r", "A", "B", "lambda"), list(fit.rows()))
    return EXIT_OK


# ---------------------------------------------------------------------------
# fit-ramsey


def _fit_ramsey(args):
    data = read_dataset(args.input)
    streams = data.streams()
    missing = [s.circuit_id for s in streams if "l" not in s.metadata]
    if missing:
        raise DatasetError(f"circuit {missing[0]!r} has no wait-length field 'l'")
    est = TimeResolvedRamsey(args.tw, alpha=args.alpha, w=args.weight_w, frequencies=args.frequencies)
    try:
        est.fit(streams)
    except ConvergenceError as exc:
        raise DatasetError(f"Ramsey fit did not converge: {exc}") from None
    fit = est.fit_
    times = _times(args, streams)
    omega, band = fit.omega_band(times)
    instants = [{"t": t, "omega_hz": o, "half_width_hz": None if band is None else b}
                for t, o, b in zip(times, omega, band if band is not None else [None] * times.size)]
    det = getattr(est, "detector_", None)
    comparison = {}
    for s in streams:
        ws = det.outcome_.circuits[s.circuit_id].significant if det is not None and \
            s.circuit_id in det.outcome_.circuits else ()
        filt = fourier_filter(s, ws, 0.0)
        comparison[s.circuit_id] = {
            "l": s.metadata["l"],
            "predicted": fit.probability(float(s.metadata["l"]), times),
            "filtered": filt.evaluate(times),
        }
    report = {
        "tool": {"name": "driftscope", "version": __version__},
        "input": {"sha256": sha256_file(args.input), "circuits": len(streams), "samples": streams[0].n},
        "config": {"alpha": args.alpha, "weight_w": args.weight_w, "t_w": args.tw,
                   "frequencies": args.frequencies},
        "ramsey": {
            "A": fit.A,
            "B": fit.B,
            "l0": fit.l0,
            "omega": fit.omega.to_dict(),
            "half_widths": fit.half_widths,
            "log_likelihood": fit.score.log_likelihood_max,
            "k": fit.score.k,
            "aic": fit.score.aic,
            "detected": list(est.detected_),
            "aic_table": [{"frequencies": list(ws), "k": k, "log_likelihood": ll, "aic": aic}
                          for ws, k, ll, aic in est.aic_table_],
            "instants": instants,
            "comparison": comparison,
            "note": "half-widths are 2-sigma in-model uncertainties; null means unavailable",
        },
    }
    _emit(report, args.out)
    if args.csv:
        write_csv(args.csv, ("t", "omega_hz", "half_width_hz"),
                  [(r["t"], r["omega_hz"], r["half_width_hz"]) for r in instants])
    return EXIT_OK


# ---------------------------------------------------------------------------
# simulate


def _simulate_specs(args):
    C, N = args.circuits, args.samples
    total = N * C * args.raster_period
    specs = []
    if args.kind == "constant":
        for c in range(C):
            specs.append(SynthSpec("constant", N, {"p0": args.p0}))
    elif args.kind == "cosine-tone":
        for c in range(C):
            specs.append(SynthSpec("cosine-tone", N, {"p0": args.p0, "amplitude": args.amplitude,
                                                      "index": args.index}))
    elif args.kind == "brownian-phase":
        kw = {k: getattr(args, k) for k in ("a", "b", "phi", "nu") if getattr(args, k) is not None}
        for c in range(C):
            specs.append(SynthSpec("brownian-phase", N, {**kw, "stride": C, "offset": c}, seed=args.seed))
    elif args.kind == "rb-family":
        lengths = args.lengths
        norm = (4**args.qubits - 1) / 4**args.qubits

        def lam(t):
            return 1.0 - (args.r0 + args.r_amplitude * np.cos(np.pi * t / total)) / norm

        for c in range(C):
            m = lengths[c % len(lengths)]
            specs.append(SynthSpec("rb-family", N, {"A": args.A, "B": args.B, "m": m, "lam": lam},
                                   metadata={"m": m}))
    elif args.kind == "ramsey-family":
        ls = args.ls

        def omega(t):
            return args.omega0 + args.omega_amplitude * np.cos(2 * np.pi * t / total)

        for c in range(C):
            l = ls[c % len(ls)]
            specs.append(SynthSpec("ramsey-family", N, {"A": args.A, "B": args.B, "l0": args.l0,
                                                        "t_w": args.tw, "l": l, "omega": omega},
                                   metadata={"l": l}))
    return specs


def _sidecar_path(out):
    root = out[: -len(".jsonl")] if out.endswith(".jsonl") else out
    return root + ".truth.json"


def _simulate(args):
    if args.circuits < 1:
        raise UsageError("--circuits must be at least 1")
    if args.samples < 2:
        raise UsageError("--samples must be at least 2")
    specs = _simulate_specs(args)
    ds = gen_rastered_dataset(specs, args.seed, args.raster_period)
    truth = ds.truth
    truth["kind"] = args.kind
    if args.kind == "brownian-phase":
        truth["defaults"] = dict(BROWNIAN_DEFAULTS)
    atomic_write(args.out, dataset_text(ds.streams, args.raster_period))
    atomic_write(_sidecar_path(args.out), json.dumps(truth, sort_keys=True) + "\n")
    return EXIT_OK


# ---------------------------------------------------------------------------


def build_parser():
    parser = argparse.ArgumentParser(prog="driftscope", description="Detect and characterize drift in clickstreams.")
    parser.add_argument("--version", action="version", version=f"driftscope {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    a = sub.add_parser("analyze", help="spectral drift detection and trajectory estimation")
    a.add_argument("input")
    a.add_argument("--alpha", type=_unit_interval, default=0.05)
    a.add_argument("--weight-w", type=_weight, default=0.5, help="share of alpha for the averaged spectrum")
    a.add_argument("--epsilon", type=_nonneg, default=None)
    a.add_argument("--policy", choices=("circuit", "average", "rb"), default="circuit")
    a.add_argument("--estimator", choices=("filter", "mle"), default="filter")
    a.add_argument("--bin-map", default=None, help="JSON object (or file) mapping outcome labels to bins")
    a.add_argument("--out", default=None)
    a.add_argument("--csv-spectra", default=None)
    a.add_argument("--csv-trajectories", default=None)
    a.set_defaults(func=_analyze)

    r = sub.add_parser("fit-rb", help="time-resolved randomized benchmarking")
    r.add_argument("input")
    r.add_argument("--qubits", type=int, default=1)
    r.add_argument("--times", type=_numbers, default=None, help="comma-separated evaluation times")
    r.add_argument("--n-times", type=int, default=100)
    r.add_argument("--alpha", type=_unit_interval, default=0.05)
    r.add_argument("--estimator", choices=("filter", "mle"), default="filter")
    r.add_argument("--epsilon", type=_nonneg, default=0.0)
    r.add_argument("--out", default=None)
    r.add_argument("--csv", default=None)
    r.set_defaults(func=_fit_rb)

    m = sub.add_parser("fit-ramsey", help="time-resolved Ramsey detuning estimation")
    m.add_argument("input")
    m.add_argument("--tw", type=_positive, required=True, help="wait-time unit in seconds")
    m.add_argument("--alpha", type=_unit_interval, default=0.05)
    m.add_argument("--weight-w", type=_weight, default=0.5)
    m.add_argument("--frequencies", type=_int_list, default=None, help="fix the Omega frequency set")
    m.add_argument("--times", type=_numbers, default=None)
    m.add_argument("--n-times", type=int, default=100)
    m.add_argument("--out", default=None)
    m.add_argument("--csv", default=None)
    m.set_defaults(func=_fit_ramsey)

    s = sub.add_parser("simulate", help="write a synthetic dataset plus ground-truth sidecar")
    s.add_argument("--kind", required=True,
                   choices=("constant", "cosine-tone", "brownian-phase", "rb-family", "ramsey-family"))
    s.add_argument("--circuits", type=int, default=1)
    s.add_argument("--samples", type=int, default=1000)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--raster-period", type=_positive, default=1.0)
    s.add_argument("--out", required=True)
    s.add_argument("--p0", type=float, default=0.5)
    s.add_argument("--amplitude", type=float, default=0.0)
    s.add_argument("--index", type=int, default=1)
    for name in ("a", "b", "phi", "nu"):
        s.add_argument(f"--{name}", type=float, default=None, help=f"brownian-phase {name} (default {BROWNIAN_DEFAULTS[name]:.6g})")
    s.add_argument("--qubits", type=int, default=1)
    s.add_argument("--lengths", type=_int_list, default=[2, 4, 8, 16, 32, 64, 128, 256])
    s.add_argument("--A", type=float, default=0.5)
    s.add_argument("--B", type=float, default=0.5)
    s.add_argument("--r0", type=float, default=0.01)
    s.add_argument("--r-amplitude", type=float, default=0.0)
    s.add_argument("--ls", type=_int_list, default=[2**k for k in range(14)])
    s.add_argument("--tw", type=_positive, default=4e-4)
    s.add_argument("--l0", type=_positive, default=5000.0)
    s.add_argument("--omega0", type=float, default=0.0)
    s.add_argument("--omega-amplitude", type=float, default=0.0)
    s.set_defaults(func=_simulate)
    return parser


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_ERROR if exc.code not in (0, None) else EXIT_OK
    try:
        return args.func(args)
    except (DatasetError, UsageError, ValueError, OSError) as exc:
        print(f"driftscope: error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
