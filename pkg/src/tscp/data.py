"""Series containers, CSV ingestion, normalisation and a synthetic generator."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

CHANGE_KINDS = ("mean_shift", "var_shift", "freq_shift", "trend_change")


class LoadError(ValueError):
    pass


@dataclass
class LabeledSeries:
    values: np.ndarray                      # [T, d]
    change_points: list[int] = field(default_factory=list)
    name: str = ""
    sample_rate: float | None = None

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim == 1:
            v = v[:, None]
        if v.ndim != 2:
            raise ValueError(f"values must be [T, d], got shape {v.shape}")
        self.values = v
        cps = [int(c) for c in self.change_points]
        T = v.shape[0]
        if any(b <= a for a, b in zip(cps, cps[1:])):
            raise ValueError("change points must be strictly increasing")
        if cps and (cps[0] <= 0 or cps[-1] >= T):
            raise ValueError(f"change points must lie in (0, {T})")
        self.change_points = cps

    @property
    def T(self) -> int:
        return self.values.shape[0]

    @property
    def d(self) -> int:
        return self.values.shape[1]

    def without_labels(self) -> "LabeledSeries":
        return LabeledSeries(self.values.copy(), [], self.name, self.sample_rate)


def _parse_float(cell: str, row: int, col: int) -> float:
    try:
        return float(cell)
    except ValueError:
        raise LoadError(f"row {row}: non-numeric value {cell!r} in column {col}") from None


def load_csv(path, has_header: bool = True, label_column: str | int | None = None,
             forward_fill: bool = False, value_columns=None) -> LabeledSeries:
    """Read a comma-separated series, one row per time step.

    Every column except ``label_column`` becomes a channel, unless
    ``value_columns`` names the channels (header names or indices). Rows whose label
    cell equals 1 are change points. Empty or NaN cells are rejected unless
    ``forward_fill`` is set.
    """
    path = Path(path)
    try:
        with path.open(newline="", encoding="utf-8") as fh:
            rows = [r for r in csv.reader(fh) if r and any(c.strip() for c in r)]
    except OSError as exc:
        raise LoadError(f"cannot read {path}: {exc}") from exc
    header = None
    first = 1
    if has_header:
        if not rows:
            raise LoadError(f"{path}: empty file")
        header = [h.strip() for h in rows[0]]
        rows = rows[1:]
        first = 2
    if not rows:
        raise LoadError(f"{path}: no data rows")
    ncol = len(header) if header is not None else len(rows[0])
    label_idx = None
    if label_column is not None:
        if isinstance(label_column, int) or (isinstance(label_column, str) and label_column.isdigit() and header is None):
            label_idx = int(label_column)
        elif header is not None and label_column in header:
            label_idx = header.index(label_column)
        else:
            raise LoadError(f"{path}: label column {label_column!r} not found")
    if value_columns is None:
        value_cols = [c for c in range(ncol) if c != label_idx]
    else:
        value_cols = []
        for c in value_columns:
            if header is not None and c in header:
                value_cols.append(header.index(c))
            elif str(c).isdigit() and int(c) < ncol:
                value_cols.append(int(c))
            else:
                raise LoadError(f"{path}: value column {c!r} not found")

    values = np.empty((len(rows), len(value_cols)), dtype=np.float64)
    labels = []
    last = None
    for i, r in enumerate(rows):
        rownum = i + first
        if len(r) != ncol:
            raise LoadError(f"row {rownum}: expected {ncol} columns, found {len(r)}")
        for j, c in enumerate(value_cols):
            cell = r[c].strip()
            if cell == "" or cell.lower() == "nan":
                if forward_fill and last is not None:
                    values[i, j] = last[j]
                    continue
                raise LoadError(f"row {rownum}: missing value in column {c}")
            values[i, j] = _parse_float(cell, rownum, c)
            if not np.isfinite(values[i, j]):
                raise LoadError(f"row {rownum}: non-finite value in column {c}")
        last = values[i]
        if label_idx is not None:
            if _parse_float(r[label_idx].strip(), rownum, label_idx) == 1:
                labels.append(i)
    # a flag on row 0 cannot be a boundary
    labels = [t for t in labels if t > 0]
    return LabeledSeries(values, labels, name=path.stem)


def write_csv(series: LabeledSeries, path, label_column: str | None = None) -> None:
    """Inverse of :func:`load_csv`; values written at 32-bit precision."""
    names = [f"v{j}" for j in range(series.d)] if series.d > 1 else ["value"]
    cps = set(series.change_points)
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(names + ([label_column] if label_column else []))
        for t, row in enumerate(series.values.astype(np.float32)):
            cells = [repr(float(x)) for x in row]
            if label_column:
                cells.append("1" if t in cps else "0")
            w.writerow(cells)


def read_labels(path) -> list[int]:
    """Label sidecar: one change-point index per line."""
    out = []
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise LoadError(f"cannot read {path}: {exc}") from exc
    for n, line in enumerate(text.splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        try:
            out.append(int(line))
        except ValueError:
            raise LoadError(f"line {n}: not an integer index: {line!r}") from None
    return out


def write_labels(labels, path) -> None:
    Path(path).write_text("".join(f"{int(t)}\n" for t in labels), encoding="utf-8")


def znormalize(series: LabeledSeries) -> LabeledSeries:
    """Zero mean, unit std per channel; near-constant channels become zeros."""
    v = series.values
    mu = v.mean(axis=0)
    sd = v.std(axis=0)
    out = np.zeros_like(v)
    live = sd >= 1e-8
    out[:, live] = (v[:, live] - mu[live]) / sd[live]
    return LabeledSeries(out, list(series.change_points), series.name, series.sample_rate)


@dataclass
class SynthSpec:
    n_segments: int = 10
    segment_len: tuple[int, int] = (300, 600)
    channels: int = 1
    kinds: tuple[str, ...] = ("mean_shift",)
    magnitude: tuple[float, float] = (4.0, 6.0)   # in units of noise_sigma
    noise_sigma: float = 1.0
    seed: int = 0

    def __post_init__(self):
        self.segment_len = tuple(int(x) for x in self.segment_len)
        self.magnitude = tuple(float(x) for x in self.magnitude)
        self.kinds = tuple(self.kinds)
        if self.n_segments < 2:
            raise ValueError("n_segments must be >= 2")
        lo, hi = self.segment_len
        if lo < 1 or hi < lo:
            raise ValueError(f"bad segment length range {self.segment_len}")
        if min(self.magnitude) <= 0 or self.magnitude[1] < self.magnitude[0]:
            raise ValueError(f"magnitudes must be positive, got {self.magnitude}")
        if not self.kinds or any(k not in CHANGE_KINDS for k in self.kinds):
            raise ValueError(f"kinds must be a non-empty subset of {CHANGE_KINDS}")
        if self.noise_sigma <= 0 or self.channels < 1:
            raise ValueError("noise_sigma and channels must be positive")


def synth_generate(spec: SynthSpec) -> LabeledSeries:
    """Concatenate segments separated by randomly chosen changes.

    Each segment is ``level + slope * t + amp * sin(2 pi f t) + scale * sigma * noise``
    per channel; at every boundary one kind from ``spec.kinds`` perturbs the
    matching term.
    """
    rng = np.random.default_rng(spec.seed)
    lo, hi = spec.segment_len
    lengths = rng.integers(lo, hi + 1, size=spec.n_segments)
    d = spec.channels
    sigma = spec.noise_sigma
    level = np.zeros(d)
    slope = np.zeros(d)
    scale = np.ones(d)
    amp = np.zeros(d)
    freq = rng.uniform(0.01, 0.05, size=d)
    phase = np.zeros(d)

    chunks = []
    for s, n in enumerate(lengths):
        if s > 0:
            kind = spec.kinds[rng.integers(len(spec.kinds))]
            mag = rng.uniform(*spec.magnitude, size=d)
            sign = rng.choice([-1.0, 1.0], size=d)
            if kind == "mean_shift":
                level = level + sign * mag * sigma
            elif kind == "var_shift":
                scale = np.where(scale > 1.0, 1.0, mag)
            elif kind == "freq_shift":
                amp = np.where(amp > 0, amp, mag * sigma)
                freq = np.clip(freq * np.where(sign > 0, 2.5, 0.4), 0.005, 0.25)
            elif kind == "trend_change":
                slope = sign * mag * sigma / n
        t = np.arange(n)[:, None]
        seg = (level + slope * t + amp * np.sin(2 * np.pi * freq * t + phase)
               + scale * sigma * rng.standard_normal((n, d)))
        chunks.append(seg)
        level = level + slope * n
        phase = phase + 2 * np.pi * freq * n
    values = np.concatenate(chunks, axis=0)
    cps = np.cumsum(lengths)[:-1].tolist()
    return LabeledSeries(values, cps, name=f"synth-{spec.seed}")
