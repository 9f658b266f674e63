"""Change-point detection from drops in adjacent-window embedding similarity."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import encoder as enc
from .encoder import EncoderParams


@dataclass
class DetectorConfig:
    window_len: int = 100
    stride: int = 1
    ma_width: int = 10
    threshold: float = 0.05
    min_spacing: int | None = None   # None -> window_len

    def __post_init__(self):
        if self.window_len < 1 or self.stride < 1 or self.ma_width < 1:
            raise ValueError("window_len, stride and ma_width must be >= 1")
        if self.threshold < 0:
            raise ValueError("threshold must be >= 0")
        if self.min_spacing is not None and self.min_spacing < 1:
            raise ValueError("min_spacing must be >= 1")

    @property
    def spacing(self) -> int:
        return self.min_spacing if self.min_spacing is not None else self.window_len


@dataclass
class SimilarityProfile:
    boundaries: np.ndarray
    sim: np.ndarray
    ma: np.ndarray
    diff: np.ndarray
    degenerate: int = 0

    def write_csv(self, path) -> None:
        with Path(path).open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["boundary", "sim", "ma", "diff"])
            for row in zip(self.boundaries, self.sim, self.ma, self.diff):
                w.writerow([int(row[0]), repr(float(row[1])), repr(float(row[2])), repr(float(row[3]))])


@dataclass
class ChangePointEstimates:
    indices: list[int]
    scores: list[float]

    def __len__(self) -> int:
        return len(self.indices)

    def write_csv(self, path) -> None:
        with Path(path).open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["index", "score"])
            for i, s in zip(self.indices, self.scores):
                w.writerow([int(i), repr(float(s))])


def read_estimates(path) -> list[int]:
    with Path(path).open(newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or not rows[0] or rows[0][0].strip() != "index":
        raise ValueError(f"{path}: expected an 'index,score' header")
    return [int(r[0]) for r in rows[1:] if r]


def trailing_moving_average(x: np.ndarray, width: int) -> np.ndarray:
    """Mean of the previous ``width`` values, excluding the current one.

    Positions with fewer than ``width`` predecessors average what exists;
    the very first position has none and takes its own value.
    """
    x = np.asarray(x, dtype=np.float64)
    n = x.size
    if n == 0:
        return x.copy()
    c = np.concatenate([[0.0], np.cumsum(x)])
    idx = np.arange(n)
    lo = np.maximum(idx - width, 0)
    count = idx - lo
    out = np.empty(n)
    has = count > 0
    out[has] = (c[idx[has]] - c[lo[has]]) / count[has]
    out[~has] = x[~has]
    return out


def profile_boundaries(T: int, w: int, stride: int) -> np.ndarray:
    if T < 2 * w:
        raise ValueError(f"series of length {T} is shorter than two windows ({2 * w})")
    return np.arange(w, T - w + 1, stride)


def similarity_profile(params: EncoderParams, series, cfg: DetectorConfig, chunk: int = 256) -> SimilarityProfile:
    """Cosine similarity of history/future embeddings at every boundary."""
    w = cfg.window_len
    if params.config.window_len != w:
        raise ValueError(f"encoder window {params.config.window_len} != detector window {w}")
    values = np.asarray(getattr(series, "values", series), dtype=np.float32)
    if values.ndim == 1:
        values = values[:, None]
    T = values.shape[0]
    bounds = profile_boundaries(T, w, cfg.stride)

    # history at t starts at t-w and future at t; encode each distinct start once
    if params.config.separate_heads:
        hist_starts, fut_starts = bounds - w, bounds
        zh = _embed_starts(params, values, hist_starts, chunk, "history")
        zf = _embed_starts(params, values, fut_starts, chunk, "future")
    else:
        starts = np.unique(np.concatenate([bounds - w, bounds]))
        z = _embed_starts(params, values, starts, chunk, "history")
        zh = z[np.searchsorted(starts, bounds - w)]
        zf = z[np.searchsorted(starts, bounds)]

    zh = zh.astype(np.float64)
    zf = zf.astype(np.float64)
    nh = np.linalg.norm(zh, axis=1)
    nf = np.linalg.norm(zf, axis=1)
    ok = (nh > 0) & (nf > 0)
    sim = np.zeros(bounds.size)
    sim[ok] = (zh[ok] * zf[ok]).sum(axis=1) / (nh[ok] * nf[ok])
    sim = np.clip(sim, -1.0, 1.0)
    ma = trailing_moving_average(sim, cfg.ma_width)
    diff = np.maximum(0.0, ma - sim)
    return SimilarityProfile(bounds, sim, ma, diff, degenerate=int((~ok).sum()))


def _embed_starts(params, values, starts, chunk, role):
    w = params.config.window_len
    offsets = np.arange(w)
    out = np.empty((starts.size, params.config.code_size), dtype=np.float32)
    for i in range(0, starts.size, chunk):
        s = starts[i:i + chunk]
        out[i:i + chunk] = enc.encode(params, values[s[:, None] + offsets], "eval", role).data
    return out


def _local_max_positions(x: np.ndarray) -> list[int]:
    """Leftmost index of every plateau whose neighbours (if any) are strictly lower."""
    n = x.size
    out = []
    i = 0
    while i < n:
        j = i
        while j + 1 < n and x[j + 1] == x[i]:
            j += 1
        left_ok = i == 0 or x[i - 1] < x[i]
        right_ok = j == n - 1 or x[j + 1] < x[i]
        if left_ok and right_ok:
            out.append(i)
        i = j + 1
    return out


def find_peaks(diff, theta: float, min_spacing: int) -> list[int]:
    """Local maxima of ``diff`` at least ``theta`` high, thinned greedily.

    Candidates are taken in descending height (ties: lower index first); any
    candidate closer than ``min_spacing`` to an accepted peak is dropped.
    Returned indices are sorted ascending.
    """
    x = np.asarray(diff, dtype=np.float64)
    cands = [p for p in _local_max_positions(x) if x[p] >= theta]
    cands.sort(key=lambda p: (-x[p], p))
    accepted: list[int] = []
    for p in cands:
        if all(abs(p - q) >= min_spacing for q in accepted):
            accepted.append(p)
    return sorted(accepted)


def detect_from_profile(profile: SimilarityProfile, cfg: DetectorConfig) -> ChangePointEstimates:
    spacing_positions = math.ceil(cfg.spacing / cfg.stride)
    peaks = find_peaks(profile.diff, cfg.threshold, spacing_positions)
    return ChangePointEstimates([int(profile.boundaries[p]) for p in peaks],
                                [float(profile.diff[p]) for p in peaks])


def detect(params: EncoderParams, series, cfg: DetectorConfig) -> ChangePointEstimates:
    return detect_from_profile(similarity_profile(params, series, cfg), cfg)
