"""Event sequence data model, file ingestion, synthetic generators, windowing.

An event sequence is an ordered list of (time, type) pairs with integer
types in ``[0, num_types)``. Loaders validate ordering rather than silently
re-sorting; exact duplicate timestamps are nudged forward by a tiny fraction
of the mean gap (with a warning) because exact ties would make the
clustering hierarchy order-dependent.
"""

from __future__ import annotations

import csv
import json
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, DataError

__all__ = [
    "EventSequence",
    "PredictionExample",
    "NormStats",
    "load_sequences",
    "save_sequences",
    "generate_hawkes",
    "generate_multiscale",
    "make_examples",
    "normalize_times",
    "apply_normalization",
    "denormalize_times",
]


@dataclass
class EventSequence:
    """Ordered (time, type) pairs; types are dense integers in [0, num_types)."""

    times: np.ndarray
    types: np.ndarray
    num_types: int
    seq_id: str = ""

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=np.float64)
        self.types = np.asarray(self.types, dtype=np.int64)
        if self.times.shape != self.types.shape or self.times.ndim != 1:
            raise DataError(
                f"sequence {self.seq_id!r}: times and types must be equal-length"
                f" 1-D arrays, got {self.times.shape} and {self.types.shape}"
            )
        if np.any(np.diff(self.times) < 0):
            bad = int(np.argmax(np.diff(self.times) < 0)) + 1
            raise DataError(f"sequence {self.seq_id!r}: time regression at event {bad}")
        if self.num_types <= 0:
            raise DataError("num_types must be positive")
        if self.types.size and (self.types.min() < 0 or self.types.max() >= self.num_types):
            raise DataError(
                f"sequence {self.seq_id!r}: type ids must lie in [0, {self.num_types})"
            )

    def __len__(self):
        return len(self.times)


@dataclass
class PredictionExample:
    """A history window plus the next event it should predict."""

    history: EventSequence
    target_time: float
    target_type: int

    def __post_init__(self):
        if len(self.history) < 2:
            raise DataError("history must contain at least 2 events")
        if self.target_time <= self.history.times[-1]:
            raise DataError("target_time must exceed the last history time")

    @property
    def target_gap(self) -> float:
        return float(self.target_time - self.history.times[-1])


# ---------------------------------------------------------------------------
# File ingestion
# ---------------------------------------------------------------------------


def _dedupe_times(times: np.ndarray, seq_id: str) -> np.ndarray:
    """Nudge exact duplicate timestamps forward by 1e-9 * mean gap."""
    if times.size < 2:
        return times
    diffs = np.diff(times)
    if not np.any(diffs == 0.0):
        return times
    mean_gap = float(diffs.mean())
    if mean_gap == 0.0:
        raise DataError(f"sequence {seq_id!r}: all timestamps identical")
    eps = 1e-9 * mean_gap
    out = times.copy()
    for i in range(1, len(out)):
        if out[i] <= out[i - 1]:
            out[i] = out[i - 1] + eps
    warnings.warn(
        f"sequence {seq_id!r}: duplicate timestamps perturbed by {eps:.3g}",
        stacklevel=3,
    )
    return out


def _coerce_type(raw: str, vocab: dict | None, where: str) -> int:
    if vocab is not None and raw in vocab:
        return int(vocab[raw])
    try:
        return int(raw)
    except ValueError:
        raise DataError(f"{where}: unknown type id {raw!r}") from None


def load_sequences(
    path,
    format: str | None = None,
    num_types: int | None = None,
    vocab: dict | None = None,
) -> list[EventSequence]:
    """Load sequences from a CSV (``seq_id,time,type``) or JSONL file.

    Times must be ascending within each sequence; a regression raises a
    :class:`DataError` naming the offending row. ``num_types`` defaults to
    one past the largest type id seen. ``vocab`` optionally maps string
    labels to dense integer ids.
    """
    path = Path(path)
    if not path.exists():
        raise DataError(f"no such file: {path}")
    if format is None:
        format = "jsonl" if path.suffix in (".jsonl", ".json") else "csv"
    if format not in ("csv", "jsonl"):
        raise ConfigError(f"unknown format {format!r}, expected csv or jsonl")

    if format == "csv":
        raw = _read_csv(path, vocab)
    else:
        raw = _read_jsonl(path, vocab)

    if not raw:
        warnings.warn(f"{path}: no sequences found", stacklevel=2)
        return []

    if num_types is None:
        num_types = 1 + max(max(types) for _, _, types in raw if types)

    out = []
    for seq_id, times, types in raw:
        times = _dedupe_times(np.asarray(times, dtype=np.float64), seq_id)
        out.append(EventSequence(times, np.asarray(types), num_types, seq_id))
    return out


def _read_csv(path: Path, vocab) -> list[tuple[str, list, list]]:
    order: list[str] = []
    grouped: dict[str, tuple[list, list]] = {}
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            return []
        if [h.strip() for h in header[:3]] != ["seq_id", "time", "type"]:
            raise DataError(f"{path}:1: expected header seq_id,time,type")
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not cell.strip() for cell in row):
                continue
            if len(row) < 3:
                raise DataError(f"{path}:{lineno}: expected 3 columns")
            seq_id = row[0].strip()
            try:
                t = float(row[1])
            except ValueError:
                raise DataError(f"{path}:{lineno}: bad time {row[1]!r}") from None
            k = _coerce_type(row[2].strip(), vocab, f"{path}:{lineno}")
            if seq_id not in grouped:
                grouped[seq_id] = ([], [])
                order.append(seq_id)
            times, types = grouped[seq_id]
            if times and t < times[-1]:
                raise DataError(
                    f"{path}:{lineno}: time regression in sequence {seq_id!r}"
                    f" ({t} after {times[-1]})"
                )
            times.append(t)
            types.append(k)
    return [(sid, *grouped[sid]) for sid in order]


def _read_jsonl(path: Path, vocab) -> list[tuple[str, list, list]]:
    out = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as e:
                raise DataError(f"{path}:{lineno}: invalid JSON ({e.msg})") from None
            try:
                seq_id = str(obj["id"])
                times = [float(t) for t in obj["times"]]
                types = [_coerce_type(str(k), vocab, f"{path}:{lineno}") for k in obj["types"]]
            except KeyError as e:
                raise DataError(f"{path}:{lineno}: missing key {e}") from None
            if any(b < a for a, b in zip(times, times[1:])):
                raise DataError(f"{path}:{lineno}: time regression in sequence {seq_id!r}")
            out.append((seq_id, times, types))
    return out


def save_sequences(path, sequences: list[EventSequence], format: str = "csv") -> None:
    """Write sequences in one of the two loadable formats."""
    path = Path(path)
    if format == "csv":
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["seq_id", "time", "type"])
            for seq in sequences:
                for t, k in zip(seq.times, seq.types):
                    writer.writerow([seq.seq_id, repr(float(t)), int(k)])
    elif format == "jsonl":
        with open(path, "w") as fh:
            for seq in sequences:
                fh.write(
                    json.dumps(
                        {
                            "id": seq.seq_id,
                            "times": [float(t) for t in seq.times],
                            "types": [int(k) for k in seq.types],
                        },
                        sort_keys=True,
                    )
                    + "\n"
                )
    else:
        raise ConfigError(f"unknown format {format!r}")


# ---------------------------------------------------------------------------
# Synthetic generators
# ---------------------------------------------------------------------------


def generate_hawkes(
    num_seqs: int,
    horizon: float,
    base_rate: float,
    excitation: float,
    decay: float,
    num_types: int,
    seed: int,
) -> list[EventSequence]:
    """Simulate a univariate self-exciting process by Ogata thinning.

    Intensity: lambda(t) = base_rate + sum_j excitation * exp(-decay (t - t_j)).
    Requires excitation < decay (stationarity). Between events the intensity
    only decays, so the value just after the latest event is a valid
    thinning bound. Types are drawn uniformly.
    """
    if num_seqs <= 0 or horizon <= 0 or base_rate <= 0 or decay <= 0 or excitation < 0:
        raise ConfigError("hawkes parameters must be positive (excitation may be 0)")
    if excitation >= decay:
        raise ConfigError(
            f"non-stationary parameters: excitation {excitation} must be < decay {decay}"
        )
    rng = np.random.default_rng(seed)
    sequences = []
    for s in range(num_seqs):
        times: list[float] = []
        t = 0.0
        excite = 0.0  # running sum of excitation kernels at time t
        while True:
            bound = base_rate + excite
            w = rng.exponential(1.0 / bound)
            excite *= math.exp(-decay * w)
            t += w
            if t >= horizon:
                break
            if rng.uniform() * bound <= base_rate + excite:
                times.append(t)
                excite += excitation
        types = rng.integers(0, num_types, size=len(times))
        sequences.append(
            EventSequence(np.asarray(times), types, num_types, seq_id=f"hawkes-{s}")
        )
    return sequences


def generate_multiscale(
    num_seqs: int,
    burst_rate: float,
    burst_size: int,
    gap_scale: float,
    num_types: int,
    seed: int,
    num_bursts: int = 8,
    pattern_noise: float = 0.1,
) -> list[EventSequence]:
    """Bursty sequences: dense clusters of events separated by long gaps.

    Within-burst gaps are Exponential(burst_rate) (mean 1/burst_rate); gaps
    between bursts are Exponential(1/gap_scale) (mean gap_scale). Types are
    split into a burst-opening pool and a within-burst pool so that temporal
    scale correlates with type, and follow a cyclic pattern (opener type
    cycles with the burst index, within-burst types cycle within the burst)
    flipped to a random in-pool type with probability ``pattern_noise``.
    """
    if num_seqs <= 0 or burst_rate <= 0 or burst_size <= 0 or gap_scale <= 0:
        raise ConfigError("multiscale parameters must be positive")
    if num_bursts <= 0:
        raise ConfigError("num_bursts must be positive")
    if burst_size == 1:
        warnings.warn(
            "burst_size=1 degenerates to a renewal process of long gaps",
            stacklevel=2,
        )
    n_open = max(1, num_types // 2)
    open_pool = np.arange(0, n_open)
    within_pool = np.arange(n_open, num_types) if num_types > 1 else np.arange(0, 1)

    rng = np.random.default_rng(seed)
    sequences = []
    for s in range(num_seqs):
        times: list[float] = []
        types: list[int] = []
        t = 0.0
        for b in range(num_bursts):
            t += rng.exponential(gap_scale)
            opener = open_pool[b % len(open_pool)]
            if rng.uniform() < pattern_noise:
                opener = rng.choice(open_pool)
            times.append(t)
            types.append(int(opener))
            for j in range(1, burst_size):
                t += rng.exponential(1.0 / burst_rate)
                k = within_pool[(b + j) % len(within_pool)]
                if rng.uniform() < pattern_noise:
                    k = rng.choice(within_pool)
                times.append(t)
                types.append(int(k))
        sequences.append(
            EventSequence(
                np.asarray(times), np.asarray(types), num_types, seq_id=f"multiscale-{s}"
            )
        )
    return sequences


# ---------------------------------------------------------------------------
# Windowing and normalization
# ---------------------------------------------------------------------------


def make_examples(seq: EventSequence, window: int) -> list[PredictionExample]:
    """Sliding windows: history = events [i-window, i), target = event i."""
    if window < 2:
        raise ConfigError(f"window must be >= 2, got {window}")
    out = []
    for i in range(window, len(seq)):
        history = EventSequence(
            seq.times[i - window : i].copy(),
            seq.types[i - window : i].copy(),
            seq.num_types,
            seq_id=f"{seq.seq_id}[{i - window}:{i}]",
        )
        out.append(PredictionExample(history, float(seq.times[i]), int(seq.types[i])))
    return out


@dataclass
class NormStats:
    """Normalization state: per-sequence shifts plus a global gap scale.

    ``mean_gap`` is the mean inter-event gap of the sequences the stats were
    fit on (1.0 when scaling is off), so a predicted gap in model units maps
    back to original units via :meth:`gap_to_original`.
    """

    mode: str
    mean_gap: float = 1.0
    first_times: dict = field(default_factory=dict)

    def gap_to_original(self, gap: float) -> float:
        return gap * self.mean_gap

    def to_dict(self) -> dict:
        return {
            "mode": self.mode,
            "mean_gap": self.mean_gap,
            "first_times": {k: v for k, v in sorted(self.first_times.items())},
        }

    @classmethod
    def from_dict(cls, d: dict) -> "NormStats":
        return cls(d["mode"], float(d["mean_gap"]), dict(d.get("first_times", {})))


NORM_MODES = ("none", "shift_to_zero", "shift_and_scale")


def normalize_times(
    seqs: list[EventSequence], mode: str
) -> tuple[list[EventSequence], NormStats]:
    """Shift each sequence to start at zero and/or scale by the mean gap.

    The scale is fit on ``seqs`` (use :func:`apply_normalization` to reuse it
    on held-out data). Round trip via :func:`denormalize_times` is exact to
    floating point.
    """
    if mode not in NORM_MODES:
        raise ConfigError(f"unknown normalization mode {mode!r}, expected {NORM_MODES}")
    stats = NormStats(mode)
    if mode == "shift_and_scale":
        gaps = np.concatenate([np.diff(s.times) for s in seqs if len(s) >= 2])
        if gaps.size == 0 or gaps.mean() == 0.0:
            raise ConfigError("cannot scale: mean inter-event gap is zero")
        stats.mean_gap = float(gaps.mean())
    return apply_normalization(seqs, stats), stats


def apply_normalization(seqs: list[EventSequence], stats: NormStats) -> list[EventSequence]:
    out = []
    for seq in seqs:
        times = seq.times
        if stats.mode in ("shift_to_zero", "shift_and_scale") and len(seq):
            first = float(times[0])
            stats.first_times[seq.seq_id] = first
            times = times - first
        if stats.mode == "shift_and_scale":
            times = times / stats.mean_gap
        out.append(EventSequence(times, seq.types.copy(), seq.num_types, seq.seq_id))
    return out


def denormalize_times(seqs: list[EventSequence], stats: NormStats) -> list[EventSequence]:
    """Invert :func:`apply_normalization` using the recorded per-sequence shifts."""
    out = []
    for seq in seqs:
        times = seq.times
        if stats.mode == "shift_and_scale":
            times = times * stats.mean_gap
        if stats.mode in ("shift_to_zero", "shift_and_scale"):
            times = times + stats.first_times.get(seq.seq_id, 0.0)
        out.append(EventSequence(times, seq.types.copy(), seq.num_types, seq.seq_id))
    return out
