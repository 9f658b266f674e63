"""Positive/negative batch construction and the InfoNCE objective."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from . import numcore as nc
from .numcore import Tensor


class CapacityError(ValueError):
    """The series is too short to place the requested number of pairs."""

    def __init__(self, message: str, max_feasible: int):
        super().__init__(message)
        self.max_feasible = max_feasible


class DegenerateEmbeddingWarning(RuntimeWarning):
    pass


def cosine_similarity(a, b) -> float:
    """Cosine of the angle between two vectors, clamped to [-1, 1].

    A zero-norm input yields 0.0 and a DegenerateEmbeddingWarning.
    """
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    if a.shape != b.shape:
        raise ValueError(f"length mismatch: {a.size} vs {b.size}")
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        warnings.warn("zero-norm embedding; similarity set to 0", DegenerateEmbeddingWarning, stacklevel=2)
        return 0.0
    return float(np.clip(a @ b / (na * nb), -1.0, 1.0))


def pairwise_cosine(h: np.ndarray, f: np.ndarray) -> np.ndarray:
    """K x K matrix of cosine similarities between rows of ``h`` and ``f``."""
    h = np.asarray(h, dtype=np.float64)
    f = np.asarray(f, dtype=np.float64)
    hn = np.linalg.norm(h, axis=1, keepdims=True)
    fn = np.linalg.norm(f, axis=1, keepdims=True)
    hu = np.divide(h, hn, out=np.zeros_like(h), where=hn > 0)
    fu = np.divide(f, fn, out=np.zeros_like(f), where=fn > 0)
    return np.clip(hu @ fu.T, -1.0, 1.0)


@dataclass
class WindowPair:
    history: np.ndarray
    future: np.ndarray
    boundary_index: int


@dataclass
class TrainBatch:
    boundaries: np.ndarray  # [K] first future sample of each pair
    history: np.ndarray     # [K, w, d]
    future: np.ndarray      # [K, w, d]
    min_separation: int

    @property
    def K(self) -> int:
        return int(self.boundaries.size)

    @property
    def pairs(self) -> list[WindowPair]:
        return [WindowPair(self.history[i], self.future[i], int(self.boundaries[i])) for i in range(self.K)]


def max_feasible_pairs(T: int, w: int, delta_min: int) -> int:
    if T < 2 * w:
        return 0
    return (T - 2 * w) // delta_min + 1


def sample_boundaries(T: int, K: int, w: int, delta_min: int, rng: np.random.Generator) -> np.ndarray:
    """K boundaries in [w, T-w], pairwise at least ``delta_min`` apart, in random order.

    Uniform over all valid boundary sets: K distinct draws from a shrunken
    range are sorted and spread apart by ``delta_min - 1`` per rank.
    """
    if K < 2:
        raise ValueError("K must be >= 2 (each positive needs at least one negative)")
    if w < 1 or delta_min < 1:
        raise ValueError("window length and delta_min must be >= 1")
    kmax = max_feasible_pairs(T, w, delta_min)
    if K > kmax:
        raise CapacityError(
            f"cannot place {K} pairs with w={w}, delta_min={delta_min} in T={T} samples; "
            f"max feasible K is {kmax}", kmax)
    slots = T - 2 * w + 1 - (K - 1) * delta_min
    z = np.sort(rng.choice(slots + K - 1, size=K, replace=False))
    boundaries = w + z + np.arange(K) * (delta_min - 1)
    return rng.permutation(boundaries)


def sample_batch(series, K: int, w: int, delta_min: int, rng: np.random.Generator) -> TrainBatch:
    """Draw K history/future pairs from ``series`` (labels are never read)."""
    values = _values(series)
    T = values.shape[0]
    b = sample_boundaries(T, K, w, delta_min, rng)
    offsets = np.arange(w)
    hist = values[(b[:, None] - w) + offsets]
    fut = values[b[:, None] + offsets]
    return TrainBatch(b, hist, fut, delta_min)


def _values(series) -> np.ndarray:
    values = getattr(series, "values", series)
    values = np.asarray(values, dtype=np.float32)
    if values.ndim == 1:
        values = values[:, None]
    return values


@dataclass
class ContrastiveOutput:
    sim_matrix: np.ndarray
    rho: np.ndarray
    loss: Tensor

    @property
    def pos_sim(self) -> float:
        return float(np.mean(np.diag(self.sim_matrix)))

    @property
    def neg_sim(self) -> float:
        K = self.sim_matrix.shape[0]
        off = ~np.eye(K, dtype=bool)
        return float(self.sim_matrix[off].mean())


def info_nce(h_emb: Tensor, f_emb: Tensor, tau: float = 0.1, reduction: str = "sum") -> ContrastiveOutput:
    """InfoNCE over K positive pairs, with the other futures as negatives.

    rho_i = softmax_j(sim(h_i, f_j) / tau)[i];  loss = sum_i -log(rho_i)
    """
    if tau <= 0:
        raise ValueError("tau must be positive")
    if h_emb.shape != f_emb.shape or h_emb.data.ndim != 2:
        raise ValueError(f"embedding shapes differ or are not [K, c]: {h_emb.shape}, {f_emb.shape}")
    K = h_emb.shape[0]
    if K < 2:
        raise ValueError("InfoNCE needs K >= 2")
    if not (np.all(np.isfinite(h_emb.data)) and np.all(np.isfinite(f_emb.data))):
        raise ValueError("non-finite embeddings")
    sim = nc.matmul(nc.l2_normalize_rows(h_emb), nc.transpose(nc.l2_normalize_rows(f_emb)))
    logits = nc.scale(sim, 1.0 / tau)
    nll = nc.sub(nc.logsumexp_rows(logits), nc.diagonal(logits))
    if reduction == "sum":
        loss = nc.sum_all(nll)
    elif reduction == "mean":
        loss = nc.mean_all(nll)
    else:
        raise ValueError(f"unknown reduction {reduction!r}")
    rho = np.exp(-nll.data.astype(np.float64))
    return ContrastiveOutput(np.clip(sim.data, -1.0, 1.0), rho, loss)


def info_nce_from_similarity(sim: np.ndarray, tau: float) -> tuple[np.ndarray, float]:
    """(rho, summed loss) for a given similarity matrix, in float64."""
    sim = np.asarray(sim, dtype=np.float64)
    logits = sim / tau
    m = logits.max(axis=1, keepdims=True)
    lse = (m + np.log(np.exp(logits - m).sum(axis=1, keepdims=True))).ravel()
    nll = lse - np.diag(logits)
    return np.exp(-nll), float(nll.sum())


def uniform_loss(K: int) -> float:
    """Loss when every row of the similarity matrix is constant."""
    return K * math.log(K)
