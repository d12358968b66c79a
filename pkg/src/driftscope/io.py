"""Dataset ingestion (JSON Lines) and deterministic report serialization."""

from dataclasses import dataclass, field
import csv
import hashlib
import io
import json
import math
import os
import tempfile

import numpy as np

from .spectral import Clickstream, CoarseGraining, coarse_grain

__all__ = [
    "FORMAT_VERSION",
    "DatasetError",
    "Dataset",
    "Record",
    "atomic_write",
    "canonical",
    "dumps_report",
    "read_dataset",
    "sha256_file",
    "write_csv",
    "write_dataset",
]

FORMAT_VERSION = 1
SIGNIFICANT_DIGITS = 12


class DatasetError(ValueError):
    def __init__(self, message, line=None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


@dataclass
class Record:
    circuit_id: str
    outcomes: list
    timestamps: list | None = None
    metadata: dict = field(default_factory=dict)
    line: int = 0

    @property
    def is_binary(self):
        return all(isinstance(v, int) and not isinstance(v, bool) for v in self.outcomes)


@dataclass
class Dataset:
    records: list
    raster_period: float | None = None
    header: dict = field(default_factory=dict)

    @property
    def is_binary(self):
        return all(r.is_binary for r in self.records)

    def labels(self):
        return sorted({str(v) for r in self.records for v in r.outcomes})

    def streams(self):
        """Binary clickstreams, one per record."""
        out = []
        for r in self.records:
            if not r.is_binary:
                raise DatasetError(f"circuit {r.circuit_id!r} has non-binary outcomes; a bin map is needed", r.line)
            try:
                out.append(Clickstream(r.circuit_id, np.array(r.outcomes), r.timestamps,
                                       self.raster_period, dict(r.metadata)))
            except (ValueError, TypeError) as exc:
                raise DatasetError(str(exc), r.line) from None
        return out

    def grouped_streams(self, graining=None):
        """Per-circuit lists of indicator clickstreams after coarse-graining.

        Without an explicit `graining` every distinct label gets its own bin.
        Binary records map 0 and 1 through the same graining (as labels "0"/"1").
        """
        graining = CoarseGraining.identity(self.labels()) if graining is None else graining
        groups = {}
        for r in self.records:
            try:
                streams = coarse_grain([str(v) for v in r.outcomes], graining, r.circuit_id,
                                       r.timestamps, self.raster_period)
            except ValueError as exc:
                raise DatasetError(str(exc), r.line) from None
            for s in streams:
                s.metadata.update(r.metadata)
            groups[r.circuit_id] = streams
        return groups


def _fail(msg, line):
    raise DatasetError(msg, line)


def _parse_header(obj, line):
    if not isinstance(obj, dict) or "format_version" not in obj:
        _fail("first line must be a header object with 'format_version'", line)
    if obj["format_version"] != FORMAT_VERSION:
        _fail(f"unsupported format_version {obj['format_version']!r} (expected {FORMAT_VERSION})", line)
    period = obj.get("raster_period")
    if period is not None:
        if isinstance(period, bool) or not isinstance(period, (int, float)) or not period > 0:
            _fail("raster_period must be a positive number of seconds", line)
        period = float(period)
    return period


_RESERVED = {"circuit_id", "outcomes", "timestamps", "metadata"}


def _parse_record(obj, line):
    if not isinstance(obj, dict):
        _fail("record must be a JSON object", line)
    cid = obj.get("circuit_id")
    if not isinstance(cid, str) or not cid:
        _fail("record needs a non-empty string 'circuit_id'", line)
    outcomes = obj.get("outcomes")
    if not isinstance(outcomes, list) or not outcomes:
        _fail(f"circuit {cid!r}: 'outcomes' must be a non-empty array", line)
    ints = all(isinstance(v, int) and not isinstance(v, bool) for v in outcomes)
    if ints:
        bad = next((k for k, v in enumerate(outcomes) if v not in (0, 1)), None)
        if bad is not None:
            _fail(f"circuit {cid!r}: outcome {bad} is {outcomes[bad]!r}, expected 0 or 1", line)
    elif not all(isinstance(v, str) for v in outcomes):
        _fail(f"circuit {cid!r}: outcomes must be all 0/1 integers or all label strings", line)
    ts = obj.get("timestamps")
    if ts is not None:
        if not isinstance(ts, list) or len(ts) != len(outcomes):
            _fail(f"circuit {cid!r}: 'timestamps' must be an array as long as 'outcomes'", line)
        if not all(isinstance(v, (int, float)) and not isinstance(v, bool) and math.isfinite(v) for v in ts):
            _fail(f"circuit {cid!r}: timestamps must be finite numbers", line)
        if any(b <= a for a, b in zip(ts, ts[1:])):
            _fail(f"circuit {cid!r}: timestamps must be strictly increasing", line)
        ts = [float(v) for v in ts]
    meta = obj.get("metadata", {})
    if not isinstance(meta, dict):
        _fail(f"circuit {cid!r}: 'metadata' must be an object", line)
    meta = {**{k: v for k, v in obj.items() if k not in _RESERVED}, **meta}
    return Record(cid, outcomes, ts, meta, line)


def parse_lines(lines):
    """Parse JSON Lines text into a :class:`Dataset`; blank lines are ignored."""
    header = None
    period = None
    records = []
    seen = {}
    for num, raw in enumerate(lines, start=1):
        if not raw.strip():
            continue
        try:
            obj = json.loads(raw)
        except json.JSONDecodeError as exc:
            raise DatasetError(f"invalid JSON ({exc.msg})", num) from None
        if header is None:
            period = _parse_header(obj, num)
            header = obj
            continue
        rec = _parse_record(obj, num)
        if rec.circuit_id in seen:
            _fail(f"duplicate circuit_id {rec.circuit_id!r} (first on line {seen[rec.circuit_id]})", num)
        seen[rec.circuit_id] = num
        if records and len(rec.outcomes) != len(records[0].outcomes):
            _fail(
                f"circuit {rec.circuit_id!r} has {len(rec.outcomes)} outcomes but "
                f"{records[0].circuit_id!r} has {len(records[0].outcomes)}; rastered analysis needs equal lengths",
                num,
            )
        records.append(rec)
    if header is None:
        raise DatasetError("empty dataset: missing header line")
    if not records:
        raise DatasetError("dataset has a header but no circuit records")
    return Dataset(records, period, header)


def read_dataset(path):
    with open(path, encoding="utf-8") as fh:
        return parse_lines(fh)


def _record_obj(stream, timestamps=True):
    obj = {"circuit_id": stream.circuit_id, "outcomes": stream.outcomes.astype(int).tolist()}
    if timestamps and stream.timestamps is not None:
        obj["timestamps"] = [float(v) for v in stream.timestamps]
    if stream.metadata:
        obj["metadata"] = canonical(stream.metadata)
    return obj


def dataset_text(streams, raster_period=None):
    header = {"format_version": FORMAT_VERSION}
    if raster_period is not None:
        header["raster_period"] = float(raster_period)
    lines = [json.dumps(header, sort_keys=True)]
    lines += [json.dumps(_record_obj(s), sort_keys=True, separators=(",", ":")) for s in streams]
    return "\n".join(lines) + "\n"


def write_dataset(path, streams, raster_period=None):
    atomic_write(path, dataset_text(streams, raster_period))


def _round(x):
    if not math.isfinite(x):
        return None
    if x == 0:
        return 0.0
    return float(f"{x:.{SIGNIFICANT_DIGITS}g}")


def canonical(obj):
    """JSON-ready copy of `obj`: floats to 12 significant digits, non-finite to null."""
    if isinstance(obj, dict):
        return {str(k): canonical(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [canonical(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return canonical(obj.tolist())
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        return _round(float(obj))
    return obj


def dumps_report(obj):
    return json.dumps(canonical(obj), sort_keys=True, indent=2, allow_nan=False) + "\n"


def atomic_write(path, text):
    """Write `text` to `path` via a temporary file and rename."""
    path = os.fspath(path)
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _cell(v):
    v = canonical(v)
    if v is None:
        return ""
    return repr(v) if isinstance(v, float) else v


def write_csv(path, header, rows):
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([_cell(v) for v in row])
    atomic_write(path, buf.getvalue())


def sha256_file(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()
