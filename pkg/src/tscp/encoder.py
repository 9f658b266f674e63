"""Dilated causal TCN encoder with a dense projection head.

A window [w, d] goes through ``stacks`` TCN stacks (one causal conv + ReLU per
dilation, residual around each stack), the last time step is taken as the
window summary, and a dense -> ReLU -> batch-norm (x2) -> dense head maps it
to a ``code_size`` embedding.  Histories and futures share one encoder.
"""

from __future__ import annotations

import io
import struct
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from . import numcore as nc
from .numcore import BatchNormState, Tensor

MAGIC = b"CPDT1"


@dataclass
class EncoderConfig:
    window_len: int = 100
    channels: int = 1
    filters: int = 64
    kernel: int = 4
    dilations: tuple[int, ...] = (1, 4, 16)
    stacks: int = 2
    head_widths: tuple[int, int] = (128, 64)
    code_size: int = 10
    bn_momentum: float = 0.99
    bn_epsilon: float = 1e-3
    separate_heads: bool = False

    def __post_init__(self):
        self.dilations = tuple(int(d) for d in self.dilations)
        self.head_widths = tuple(int(h) for h in self.head_widths)
        if self.window_len < 1 or self.channels < 1 or self.code_size < 1:
            raise ValueError("window_len, channels and code_size must be >= 1")
        if self.filters < 1 or self.kernel < 1 or self.stacks < 1:
            raise ValueError("filters, kernel and stacks must be >= 1")
        if not self.dilations or any(d < 1 for d in self.dilations):
            raise ValueError(f"dilations must be non-empty and positive, got {self.dilations}")
        if len(self.head_widths) != 2 or any(h < 1 for h in self.head_widths):
            raise ValueError(f"head_widths must be two positive ints, got {self.head_widths}")

    def to_text(self) -> str:
        lines = []
        for f in fields(self):
            v = getattr(self, f.name)
            if isinstance(v, tuple):
                v = ",".join(str(x) for x in v)
            lines.append(f"{f.name}={v}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_items(cls, items: dict[str, str]) -> "EncoderConfig":
        kw = {}
        for f in fields(cls):
            if f.name not in items:
                continue
            raw = items[f.name]
            if f.name in ("dilations", "head_widths"):
                kw[f.name] = tuple(int(x) for x in raw.split(",") if x)
            elif f.name == "separate_heads":
                kw[f.name] = raw.strip().lower() in ("1", "true", "yes")
            elif f.name in ("bn_momentum", "bn_epsilon"):
                kw[f.name] = float(raw)
            else:
                kw[f.name] = int(raw)
        return cls(**kw)


def receptive_field(config: EncoderConfig) -> int:
    """Number of trailing samples that can reach the last-step features."""
    return 1 + config.stacks * sum((config.kernel - 1) * d for d in config.dilations)


def _head_prefixes(config: EncoderConfig) -> list[str]:
    return ["head", "head_f"] if config.separate_heads else ["head"]


def parameter_shapes(config: EncoderConfig) -> dict[str, tuple[int, ...]]:
    """Ordered name -> shape map of every trainable tensor."""
    shapes: dict[str, tuple[int, ...]] = {}
    cin = config.channels
    for s in range(config.stacks):
        c = cin
        for i, _ in enumerate(config.dilations):
            shapes[f"tcn{s}.conv{i}.w"] = (config.kernel, c, config.filters)
            shapes[f"tcn{s}.conv{i}.b"] = (config.filters,)
            c = config.filters
        if cin != config.filters:
            shapes[f"tcn{s}.res.w"] = (1, cin, config.filters)
            shapes[f"tcn{s}.res.b"] = (config.filters,)
        cin = config.filters
    for p in _head_prefixes(config):
        fin = config.filters
        for j, width in enumerate(config.head_widths):
            shapes[f"{p}.dense{j}.w"] = (fin, width)
            shapes[f"{p}.dense{j}.b"] = (width,)
            shapes[f"{p}.bn{j}.gamma"] = (width,)
            shapes[f"{p}.bn{j}.beta"] = (width,)
            fin = width
        shapes[f"{p}.out.w"] = (fin, config.code_size)
        shapes[f"{p}.out.b"] = (config.code_size,)
    return shapes


@dataclass
class EncoderParams:
    config: EncoderConfig
    tensors: dict[str, Tensor]
    bn: dict[str, BatchNormState] = field(default_factory=dict)

    @property
    def parameter_count(self) -> int:
        return int(sum(t.data.size for t in self.tensors.values()))

    def __getitem__(self, name: str) -> Tensor:
        return self.tensors[name]

    def copy(self, dtype=None) -> "EncoderParams":
        dtype = dtype or next(iter(self.tensors.values())).dtype
        tensors = {k: Tensor(v.data.astype(dtype, copy=True), requires_grad=v.requires_grad)
                   for k, v in self.tensors.items()}
        bn = {}
        for k, st in self.bn.items():
            new = st.copy()
            new.running_mean = new.running_mean.astype(dtype)
            new.running_var = new.running_var.astype(dtype)
            bn[k] = new
        return EncoderParams(self.config, tensors, bn)

    def arrays(self) -> dict[str, np.ndarray]:
        """Every stored array, trainable tensors first, then running statistics."""
        out = {k: v.data for k, v in self.tensors.items()}
        for k, st in self.bn.items():
            out[f"{k}.running_mean"] = st.running_mean
            out[f"{k}.running_var"] = st.running_var
        return out


def init(config: EncoderConfig, seed: int) -> EncoderParams:
    """He-normal (fan-in) weights, zero biases, gamma=1, beta=0."""
    rng = np.random.default_rng(seed)
    tensors: dict[str, Tensor] = {}
    for name, shape in parameter_shapes(config).items():
        if name.endswith(".w"):
            fan_in = int(np.prod(shape[:-1]))
            data = rng.normal(0.0, np.sqrt(2.0 / fan_in), size=shape)
        elif name.endswith(".gamma"):
            data = np.ones(shape)
        else:
            data = np.zeros(shape)
        tensors[name] = Tensor(data.astype(np.float32), requires_grad=True)
    bn = {}
    for p in _head_prefixes(config):
        for j, width in enumerate(config.head_widths):
            bn[f"{p}.bn{j}"] = BatchNormState(width)
    return EncoderParams(config, tensors, bn)


def _as_windows(params: EncoderParams, windows) -> Tensor:
    cfg = params.config
    x = windows if isinstance(windows, Tensor) else Tensor(np.asarray(windows, dtype=np.float32))
    if x.data.ndim == 2 and cfg.channels == 1:
        x = Tensor(x.data[:, :, None], requires_grad=x.requires_grad)
    if x.data.ndim != 3 or x.shape[1] != cfg.window_len or x.shape[2] != cfg.channels:
        raise ValueError(f"expected windows [B, {cfg.window_len}, {cfg.channels}], got {x.shape}")
    dt = next(iter(params.tensors.values())).dtype
    if x.dtype != dt and not x.requires_grad:
        x = Tensor(x.data.astype(dt))
    return x


def features(params: EncoderParams, windows) -> Tensor:
    """TCN output at the final time step, shape [B, filters]."""
    cfg = params.config
    x = _as_windows(params, windows)
    P = params.tensors
    for s in range(cfg.stacks):
        h = x
        for i, d in enumerate(cfg.dilations):
            h = nc.relu(nc.causal_dilated_conv1d(h, P[f"tcn{s}.conv{i}.w"], P[f"tcn{s}.conv{i}.b"], d))
        if f"tcn{s}.res.w" in P:
            res = nc.causal_dilated_conv1d(x, P[f"tcn{s}.res.w"], P[f"tcn{s}.res.b"], 1)
        else:
            res = x
        x = nc.add(h, res)
    return nc.last_step(x)


def head(params: EncoderParams, feats: Tensor, training: bool, prefix: str = "head") -> Tensor:
    cfg = params.config
    P = params.tensors
    z = feats
    for j in range(len(cfg.head_widths)):
        z = nc.relu(nc.dense(z, P[f"{prefix}.dense{j}.w"], P[f"{prefix}.dense{j}.b"]))
        z = nc.batch_norm(z, P[f"{prefix}.bn{j}.gamma"], P[f"{prefix}.bn{j}.beta"],
                          params.bn[f"{prefix}.bn{j}"], training,
                          cfg.bn_momentum, cfg.bn_epsilon)
    return nc.dense(z, P[f"{prefix}.out.w"], P[f"{prefix}.out.b"])


def encode(params: EncoderParams, windows, mode: str = "eval", role: str = "history") -> Tensor:
    """Embed a batch of windows [B, w, d] -> [B, code_size].

    ``role`` picks the future head when ``separate_heads`` is set.
    """
    if mode not in ("train", "eval"):
        raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
    prefix = "head_f" if (role == "future" and params.config.separate_heads) else "head"
    return head(params, features(params, windows), mode == "train", prefix)


def encode_pairs(params: EncoderParams, history, future, mode: str = "train") -> tuple[Tensor, Tensor]:
    """Embed history and future windows through one shared pass.

    Both halves go through the TCN as a single batch, so in train mode the
    batch-norm statistics cover histories and futures together.
    """
    h = _as_windows(params, history)
    f = _as_windows(params, future)
    K = h.shape[0]
    training = mode == "train"
    feats = features(params, nc.concat_rows([h, f]))
    if params.config.separate_heads:
        zh = head(params, nc.take_rows(feats, 0, K), training, "head")
        zf = head(params, nc.take_rows(feats, K, 2 * K), training, "head_f")
        return zh, zf
    z = head(params, feats, training, "head")
    return nc.take_rows(z, 0, K), nc.take_rows(z, K, 2 * K)


def encode_numpy(params: EncoderParams, windows: np.ndarray, chunk: int = 256, role: str = "history") -> np.ndarray:
    """Eval-mode embeddings for many windows, computed in chunks without a graph."""
    windows = np.asarray(windows, dtype=np.float32)
    if windows.ndim == 2:
        windows = windows[:, :, None]
    out = np.empty((windows.shape[0], params.config.code_size), dtype=np.float32)
    for start in range(0, windows.shape[0], chunk):
        out[start:start + chunk] = encode(params, windows[start:start + chunk], "eval", role).data
    return out


# -- checkpoint ----------------------------------------------------------------

def save(params: EncoderParams, path) -> None:
    """Write the CPDT1 checkpoint: magic, key=value header, binary sections."""
    arrays = params.arrays()
    buf = io.BytesIO()
    buf.write(MAGIC + b"\n")
    header = params.config.to_text() + f"sections={len(arrays)}\n" + "end\n"
    buf.write(header.encode("utf-8"))
    for name, arr in arrays.items():
        raw = name.encode("utf-8")
        buf.write(struct.pack("<H", len(raw)))
        buf.write(raw)
        buf.write(struct.pack("<B", arr.ndim))
        buf.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
        buf.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    Path(path).write_bytes(buf.getvalue())


def load(path) -> EncoderParams:
    blob = Path(path).read_bytes()
    f = io.BytesIO(blob)
    if f.readline().rstrip(b"\n") != MAGIC:
        raise ValueError(f"{path}: not a CPDT1 checkpoint")
    items: dict[str, str] = {}
    while True:
        line = f.readline()
        if not line:
            raise ValueError(f"{path}: truncated header")
        text = line.decode("utf-8").rstrip("\n")
        if text == "end":
            break
        key, _, value = text.partition("=")
        items[key] = value
    config = EncoderConfig.from_items(items)
    n = int(items["sections"])
    arrays: dict[str, np.ndarray] = {}
    for _ in range(n):
        (ln,) = struct.unpack("<H", f.read(2))
        name = f.read(ln).decode("utf-8")
        (ndim,) = struct.unpack("<B", f.read(1))
        shape = struct.unpack(f"<{ndim}I", f.read(4 * ndim))
        count = int(np.prod(shape)) if ndim else 1
        arrays[name] = np.frombuffer(f.read(4 * count), dtype="<f4").astype(np.float32).reshape(shape)
    expected = parameter_shapes(config)
    tensors = {}
    for name, shape in expected.items():
        if name not in arrays or arrays[name].shape != shape:
            raise ValueError(f"{path}: section {name} missing or has wrong shape")
        tensors[name] = Tensor(arrays[name].copy(), requires_grad=True)
    bn = {}
    for p in _head_prefixes(config):
        for j, width in enumerate(config.head_widths):
            st = BatchNormState(width)
            st.running_mean = arrays[f"{p}.bn{j}.running_mean"].copy()
            st.running_var = arrays[f"{p}.bn{j}.running_var"].copy()
            bn[f"{p}.bn{j}"] = st
    return EncoderParams(config, tensors, bn)


def config_dict(config: EncoderConfig) -> dict:
    return asdict(config)
