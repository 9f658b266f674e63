"""Self-supervised training loop: sample, encode, InfoNCE, backprop, Adam."""

from __future__ import annotations

import csv
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import encoder as enc
from . import numcore as nc
from .contrastive import info_nce, pairwise_cosine, sample_batch
from .encoder import EncoderConfig, EncoderParams

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    K: int = 16
    tau: float = 0.1
    delta_min: int | None = None     # None -> 4 * window_len
    window_len: int = 100
    learning_rate: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    steps: int = 2000
    seed: int = 0
    checkpoint_every: int = 0
    log_every: int = 1
    clip_norm: float = 5.0
    reduction: str = "sum"

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.steps < 0:
            raise ValueError("steps must be >= 0")
        if self.K < 2:
            raise ValueError("K must be >= 2")
        if self.log_every < 1:
            raise ValueError("log_every must be >= 1")

    @property
    def min_separation(self) -> int:
        return self.delta_min if self.delta_min is not None else 4 * self.window_len


@dataclass
class HistoryRow:
    step: int
    loss: float
    pos_sim: float
    neg_sim: float
    seconds: float


@dataclass
class TrainHistory:
    rows: list[HistoryRow] = field(default_factory=list)
    skipped_steps: int = 0

    @property
    def losses(self) -> list[float]:
        return [r.loss for r in self.rows]

    def write_csv(self, path) -> None:
        with Path(path).open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["step", "loss", "pos_sim", "neg_sim", "seconds"])
            for r in self.rows:
                w.writerow([r.step, repr(r.loss), repr(r.pos_sim), repr(r.neg_sim), f"{r.seconds:.6f}"])


class Adam:
    """Bias-corrected Adam over a dict of named tensors."""

    def __init__(self, lr: float = 1e-4, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}
        self.skipped = 0

    def step(self, params: dict[str, nc.Tensor], grads: dict[str, np.ndarray]) -> bool:
        """Apply one update; returns False (and skips) on a non-finite gradient."""
        if not all(np.all(np.isfinite(g)) for g in grads.values()):
            self.skipped += 1
            log.warning("non-finite gradient, skipping Adam step (%d skipped so far)", self.skipped)
            return False
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for name, p in params.items():
            g = grads[name]
            if name not in self.m:
                self.m[name] = np.zeros_like(p.data)
                self.v[name] = np.zeros_like(p.data)
            # new arrays rather than in-place: p.data may still be referenced by a graph
            self.m[name] = self.beta1 * self.m[name] + (1.0 - self.beta1) * g
            self.v[name] = self.beta2 * self.v[name] + (1.0 - self.beta2) * (g * g)
            m_hat = self.m[name] / bc1
            v_hat = self.v[name] / bc2
            p.data = (p.data - self.lr * m_hat / (np.sqrt(v_hat) + self.eps)).astype(p.data.dtype)
        return True


def clip_by_global_norm(grads: dict[str, np.ndarray], max_norm: float) -> float:
    """Rescale in place so the global L2 norm is at most ``max_norm``; returns the pre-clip norm."""
    total = float(np.sqrt(sum(float((g.astype(np.float64) ** 2).sum()) for g in grads.values())))
    if max_norm > 0 and np.isfinite(total) and total > max_norm:
        factor = max_norm / total
        for k in grads:
            grads[k] = grads[k] * np.float32(factor)
    return total


def contrastive_step(params: EncoderParams, history, future, tau: float, reduction: str = "sum"):
    """Forward + backward for one batch; returns (ContrastiveOutput, grads)."""
    with nc.Graph() as g:
        zh, zf = enc.encode_pairs(params, history, future, "train")
        out = info_nce(zh, zf, tau, reduction)
    nc.backward(out.loss, g)
    grads = {k: t.grad for k, t in params.tensors.items()}
    return out, grads


def train(series, enc_cfg: EncoderConfig, train_cfg: TrainConfig,
          checkpoint_dir=None, params: EncoderParams | None = None) -> tuple[EncoderParams, TrainHistory]:
    """Train the encoder on ``series`` for ``train_cfg.steps`` steps.

    Labels on ``series`` are never read. With ``checkpoint_dir`` set and
    ``checkpoint_every > 0``, intermediate checkpoints are written there.
    """
    if enc_cfg.window_len != train_cfg.window_len:
        raise ValueError(f"window mismatch: encoder {enc_cfg.window_len} vs train {train_cfg.window_len}")
    values = np.asarray(getattr(series, "values", series), dtype=np.float32)
    if values.ndim == 1:
        values = values[:, None]
    if params is None:
        params = enc.init(enc_cfg, train_cfg.seed)
    rng = np.random.default_rng(train_cfg.seed + 1_000_003)
    opt = Adam(train_cfg.learning_rate, train_cfg.beta1, train_cfg.beta2, train_cfg.adam_eps)
    history = TrainHistory()
    bad_streak = 0
    t0 = time.perf_counter()
    for step in range(1, train_cfg.steps + 1):
        batch = sample_batch(values, train_cfg.K, train_cfg.window_len, train_cfg.min_separation, rng)
        out, grads = contrastive_step(params, batch.history, batch.future, train_cfg.tau, train_cfg.reduction)
        loss = out.loss.item()
        if np.isfinite(loss):
            clip_by_global_norm(grads, train_cfg.clip_norm)
            ok = opt.step(params.tensors, grads)
        else:
            opt.skipped += 1
            ok = False
        if not ok:
            bad_streak += 1
            if bad_streak >= 10:
                raise FloatingPointError(f"10 consecutive non-finite steps (last at step {step})")
            continue
        bad_streak = 0
        if step % train_cfg.log_every == 0:
            history.rows.append(HistoryRow(step, loss, out.pos_sim, out.neg_sim, time.perf_counter() - t0))
        if checkpoint_dir is not None and train_cfg.checkpoint_every > 0 and step % train_cfg.checkpoint_every == 0:
            enc.save(params, Path(checkpoint_dir) / f"checkpoint_{step:06d}.cpdt")
    history.skipped_steps = opt.skipped
    return params, history


def evaluate_separation(params: EncoderParams, series, K: int, w: int, delta_min: int,
                        n_batches: int = 20, seed: int = 12345) -> tuple[float, float]:
    """Mean positive and mean negative cosine similarity over fresh eval-mode batches."""
    rng = np.random.default_rng(seed)
    pos, neg = [], []
    for _ in range(n_batches):
        b = sample_batch(series, K, w, delta_min, rng)
        zh = enc.encode_numpy(params, b.history)
        zf = enc.encode_numpy(params, b.future, role="future")
        S = pairwise_cosine(zh, zf)
        off = ~np.eye(K, dtype=bool)
        pos.append(np.diag(S).mean())
        neg.append(S[off].mean())
    return float(np.mean(pos)), float(np.mean(neg))
