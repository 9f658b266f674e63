"""Command-line entry point: synth, train, detect, eval, sweep.

Every option can also come from a ``key=value`` config file (``--config``);
command-line flags win.  Each output directory receives ``config_used``, the
fully resolved configuration.

Exit codes: 0 ok, 1 usage, 2 I/O, 3 capacity, 4 config mismatch.
"""

from __future__ import annotations

import argparse
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import encoder as enc
from .contrastive import CapacityError
from .data import LoadError, SynthSpec, load_csv, read_labels, synth_generate, write_csv, write_labels, znormalize
from .detector import DetectorConfig, detect, read_estimates, similarity_profile, detect_from_profile
from .encoder import EncoderConfig
from .evaluation import report_suite, write_reports_csv
from .trainer import TrainConfig, train

log = logging.getLogger("tscp")

EXIT_OK, EXIT_USAGE, EXIT_IO, EXIT_CAPACITY, EXIT_MISMATCH = 0, 1, 2, 3, 4


class UsageError(Exception):
    pass


class ConfigMismatch(Exception):
    pass


def _bool(s) -> bool:
    if isinstance(s, bool):
        return s
    v = str(s).strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


@dataclass(frozen=True)
class Opt:
    name: str
    type: type | object
    default: object
    help: str
    groups: tuple[str, ...]


_SYN, _ENC, _TRN, _DET, _EVL, _SWP = "synth", "encoder", "train", "detect", "eval", "sweep"

OPTIONS = [
    Opt("segments", int, 10, "number of segments", (_SYN,)),
    Opt("seg_min", int, 300, "minimum segment length", (_SYN,)),
    Opt("seg_max", int, 600, "maximum segment length", (_SYN,)),
    Opt("channels", int, 1, "number of channels", (_SYN,)),
    Opt("kinds", str, "mean_shift", "comma list of mean_shift,var_shift,freq_shift,trend_change", (_SYN,)),
    Opt("mag_min", float, 4.0, "smallest change magnitude (noise sigmas)", (_SYN,)),
    Opt("mag_max", float, 6.0, "largest change magnitude (noise sigmas)", (_SYN,)),
    Opt("noise", float, 1.0, "base noise sigma", (_SYN,)),

    Opt("window", int, 100, "history/future window length", (_ENC, _DET)),
    Opt("filters", int, 64, "TCN filters", (_ENC,)),
    Opt("kernel", int, 4, "TCN kernel size", (_ENC,)),
    Opt("dilations", str, "1,4,16", "dilation rates per stack", (_ENC,)),
    Opt("stacks", int, 2, "TCN stacks", (_ENC,)),
    Opt("head", str, "128,64", "hidden widths of the projection head", (_ENC,)),
    Opt("code", int, 10, "embedding size", (_ENC,)),
    Opt("separate_heads", _bool, False, "separate projection heads for history and future", (_ENC,)),

    Opt("batch", int, 16, "positive pairs per batch (K)", (_TRN,)),
    Opt("tau", float, 0.1, "softmax temperature", (_TRN,)),
    Opt("delta_min", int, 0, "minimum boundary separation (0 = 4 * window)", (_TRN,)),
    Opt("lr", float, 1e-4, "Adam learning rate", (_TRN,)),
    Opt("steps", int, 2000, "training steps", (_TRN,)),
    Opt("log_every", int, 1, "history row every N steps", (_TRN,)),
    Opt("checkpoint_every", int, 0, "intermediate checkpoint every N steps (0 = off)", (_TRN,)),
    Opt("clip_norm", float, 5.0, "global gradient-norm clip", (_TRN,)),
    Opt("reduction", str, "sum", "loss reduction: sum or mean", (_TRN,)),

    Opt("stride", int, 1, "boundary stride", (_DET,)),
    Opt("ma_width", int, 10, "moving-average width in boundaries", (_DET,)),
    Opt("threshold", float, 0.05, "minimum similarity drop for a peak", (_DET,)),
    Opt("min_spacing", int, 0, "minimum samples between estimates (0 = window)", (_DET,)),

    Opt("margins", str, "24,50,75", "detection margins", (_EVL,)),

    Opt("windows", str, "50,100", "sweep: window sizes", (_SWP,)),
    Opt("batches", str, "8,16", "sweep: batch sizes", (_SWP,)),
    Opt("codes", str, "5,10", "sweep: code sizes", (_SWP,)),
    Opt("workers", int, 1, "sweep: parallel cells", (_SWP,)),

    Opt("seed", int, 0, "random seed", (_SYN, _TRN, _SWP)),
    Opt("data", str, "", "input series CSV", ("io",)),
    Opt("labels", str, "", "label sidecar (one index per line)", ("io",)),
    Opt("label_column", str, "", "CSV column flagging change points with 1", ("io",)),
    Opt("value_columns", str, "", "comma list of CSV columns to use as channels (default: all others)", ("io",)),
    Opt("no_header", _bool, False, "CSV has no header row", ("io",)),
    Opt("normalize", _bool, True, "z-normalise channels before use", ("io",)),
    Opt("forward_fill", _bool, False, "forward-fill missing values instead of failing", ("io",)),
    Opt("checkpoint", str, "", "encoder checkpoint path", ("io",)),
    Opt("estimates", str, "", "estimates CSV (index,score)", ("io",)),
    Opt("out", str, "out", "output directory", ("io",)),
]
_BY_NAME = {o.name: o for o in OPTIONS}

COMMAND_GROUPS = {
    "synth": (_SYN,),
    "train": (_ENC, _TRN),
    "detect": (_DET,),
    "eval": (_EVL,),
    "sweep": (_ENC, _TRN, _DET, _EVL, _SWP),
}
COMMAND_IO = {
    "synth": ("out",),
    "train": ("data", "label_column", "value_columns", "no_header", "normalize", "forward_fill", "out"),
    "detect": ("checkpoint", "data", "label_column", "value_columns", "no_header", "normalize",
               "forward_fill", "out"),
    "eval": ("estimates", "labels", "data", "label_column", "value_columns", "no_header", "out"),
    "sweep": ("data", "labels", "label_column", "value_columns", "no_header", "normalize",
              "forward_fill", "out"),
}


def _ints(s: str) -> list[int]:
    return [int(x) for x in str(s).split(",") if x.strip()]


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="tscp", description="Contrastive change-point detection.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for cmd, groups in COMMAND_GROUPS.items():
        p = sub.add_parser(cmd, help=f"{cmd} command")
        p.add_argument("--config", help="key=value config file; flags override it")
        names = [o.name for o in OPTIONS if set(o.groups) & set(groups)] + list(COMMAND_IO[cmd])
        seen = set()
        for name in names:
            if name in seen:
                continue
            seen.add(name)
            o = _BY_NAME[name]
            p.add_argument("--" + name.replace("_", "-"), dest=name, default=None,
                           help=f"{o.help} (default: {o.default})")
    return parser


def read_config_file(path) -> dict[str, str]:
    items = {}
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise LoadError(f"cannot read config {path}: {exc}") from exc
    for n, line in enumerate(text.splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{n}: expected key=value")
        k, v = line.split("=", 1)
        items[k.strip().replace("-", "_")] = v.strip()
    return items


def resolve(args: argparse.Namespace) -> tuple[dict, set[str]]:
    """Defaults <- config file <- flags. Returns (config, names set explicitly)."""
    cfg = {o.name: o.default for o in OPTIONS}
    explicit = set()
    raw = {}
    if args.config:
        raw.update(read_config_file(args.config))
    for o in OPTIONS:
        v = getattr(args, o.name, None)
        if v is not None:
            raw[o.name] = v
    for k, v in raw.items():
        if k not in _BY_NAME:
            raise UsageError(f"unknown config key {k!r}")
        try:
            cfg[k] = _BY_NAME[k].type(v)
        except ValueError as exc:
            raise UsageError(f"bad value for {k}: {v!r} ({exc})") from None
        explicit.add(k)
    return cfg, explicit


def write_config_used(cfg: dict, command: str, out: Path) -> None:
    lines = [f"command={command}"] + [f"{k}={cfg[k]}" for k in sorted(cfg)]
    (out / "config_used").write_text("\n".join(lines) + "\n", encoding="utf-8")


def _out_dir(cfg) -> Path:
    out = Path(cfg["out"])
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise LoadError(f"cannot create output directory {out}: {exc}") from exc
    return out


def _encoder_config(cfg, window=None, code=None) -> EncoderConfig:
    return EncoderConfig(
        window_len=window or cfg["window"], channels=1, filters=cfg["filters"], kernel=cfg["kernel"],
        dilations=tuple(_ints(cfg["dilations"])), stacks=cfg["stacks"],
        head_widths=tuple(_ints(cfg["head"])), code_size=code or cfg["code"],
        separate_heads=cfg["separate_heads"])


def _train_config(cfg, window=None, batch=None, seed=None) -> TrainConfig:
    w = window or cfg["window"]
    return TrainConfig(
        K=batch or cfg["batch"], tau=cfg["tau"], delta_min=cfg["delta_min"] or None, window_len=w,
        learning_rate=cfg["lr"], steps=cfg["steps"], seed=cfg["seed"] if seed is None else seed,
        checkpoint_every=cfg["checkpoint_every"], log_every=cfg["log_every"],
        clip_norm=cfg["clip_norm"], reduction=cfg["reduction"])


def _detector_config(cfg, window) -> DetectorConfig:
    return DetectorConfig(window_len=window, stride=cfg["stride"], ma_width=cfg["ma_width"],
                          threshold=cfg["threshold"], min_spacing=cfg["min_spacing"] or None)


def _load_series(cfg):
    if not cfg["data"]:
        raise UsageError("--data is required")
    cols = [c for c in cfg["value_columns"].split(",") if c] or None
    s = load_csv(cfg["data"], has_header=not cfg["no_header"], label_column=cfg["label_column"] or None,
                 forward_fill=cfg["forward_fill"], value_columns=cols)
    return znormalize(s) if cfg["normalize"] else s


def _labels(cfg, series=None) -> list[int]:
    if cfg["labels"]:
        return read_labels(cfg["labels"])
    if series is not None:
        return list(series.change_points)
    if cfg["data"] and cfg["label_column"]:
        return load_csv(cfg["data"], has_header=not cfg["no_header"],
                        label_column=cfg["label_column"]).change_points
    raise UsageError("labels needed: pass --labels, or --data with --label-column")


# -- commands --------------------------------------------------------------

def cmd_synth(cfg, explicit) -> int:
    spec = SynthSpec(n_segments=cfg["segments"], segment_len=(cfg["seg_min"], cfg["seg_max"]),
                     channels=cfg["channels"], kinds=tuple(k for k in cfg["kinds"].split(",") if k),
                     magnitude=(cfg["mag_min"], cfg["mag_max"]), noise_sigma=cfg["noise"], seed=cfg["seed"])
    series = synth_generate(spec)
    out = _out_dir(cfg)
    write_csv(series, out / "series.csv")
    write_labels(series.change_points, out / "labels.txt")
    write_config_used(cfg, "synth", out)
    print(f"wrote {series.T} samples, {len(series.change_points)} change points to {out}")
    return EXIT_OK


def cmd_train(cfg, explicit) -> int:
    series = _load_series(cfg)
    ecfg = _encoder_config(cfg)
    ecfg.channels = series.d
    tcfg = _train_config(cfg)
    out = _out_dir(cfg)
    params, history = train(series.without_labels(), ecfg, tcfg,
                             checkpoint_dir=out if tcfg.checkpoint_every else None)
    enc.save(params, out / "model.cpdt")
    history.write_csv(out / "history.csv")
    write_config_used(cfg, "train", out)
    last = history.rows[-1].loss if history.rows else float("nan")
    print(f"trained {tcfg.steps} steps, final loss {last:.4f}; checkpoint {out / 'model.cpdt'}")
    return EXIT_OK


def cmd_detect(cfg, explicit) -> int:
    if not cfg["checkpoint"]:
        raise UsageError("--checkpoint is required")
    try:
        params = enc.load(cfg["checkpoint"])
    except OSError as exc:
        raise LoadError(f"cannot read checkpoint: {exc}") from exc
    except (ValueError, KeyError, Exception) as exc:  # noqa: BLE001 - corrupt file of any shape
        raise LoadError(f"corrupt checkpoint {cfg['checkpoint']}: {exc}") from exc
    w = params.config.window_len
    if "window" in explicit and cfg["window"] != w:
        raise ConfigMismatch(f"checkpoint window {w} != requested window {cfg['window']}")
    cfg["window"] = w
    series = _load_series(cfg)
    if series.d != params.config.channels:
        raise ConfigMismatch(f"checkpoint expects {params.config.channels} channels, data has {series.d}")
    dcfg = _detector_config(cfg, w)
    prof = similarity_profile(params, series, dcfg)
    est = detect_from_profile(prof, dcfg)
    out = _out_dir(cfg)
    prof.write_csv(out / "profile.csv")
    est.write_csv(out / "estimates.csv")
    write_config_used(cfg, "detect", out)
    print(f"{len(est)} change points estimated; profile has {prof.sim.size} rows")
    return EXIT_OK


def cmd_eval(cfg, explicit) -> int:
    if not cfg["estimates"]:
        raise UsageError("--estimates is required")
    try:
        est = read_estimates(cfg["estimates"])
    except (OSError, ValueError, IndexError) as exc:
        raise LoadError(f"cannot read estimates {cfg['estimates']}: {exc}") from exc
    truth = _labels(cfg)
    try:
        reports = report_suite(list(truth), sorted(set(est)), _ints(cfg["margins"]))
    except ValueError as exc:
        raise LoadError(f"malformed labels: {exc}") from exc
    out = _out_dir(cfg)
    write_reports_csv(reports, out / "report.csv")
    text = "\n".join(r.to_text() for r in reports)
    (out / "report.txt").write_text(text, encoding="utf-8")
    write_config_used(cfg, "eval", out)
    print(text, end="")
    return EXIT_OK


def _sweep_cell(args):
    cfg, values, truth, w, K, c, seed = args
    ecfg = _encoder_config(cfg, window=w, code=c)
    ecfg.channels = values.shape[1]
    try:
        params, _ = train(values, ecfg, _train_config(cfg, window=w, batch=K, seed=seed))
        est = detect(params, values, _detector_config(cfg, w))
        return [(m, r.f1, "ok") for m, r in zip(_ints(cfg["margins"]),
                                                report_suite(truth, est.indices, _ints(cfg["margins"])))]
    except (CapacityError, ValueError, FloatingPointError) as exc:
        msg = f"error: {type(exc).__name__}: {exc}".replace(",", ";")
        return [(m, float("nan"), msg) for m in _ints(cfg["margins"])]


def cmd_sweep(cfg, explicit) -> int:
    series = _load_series(cfg)
    truth = _labels(cfg, series)
    cells = [(w, K, c) for w in _ints(cfg["windows"]) for K in _ints(cfg["batches"]) for c in _ints(cfg["codes"])]
    jobs = [(cfg, series.values, truth, w, K, c, cfg["seed"] + i) for i, (w, K, c) in enumerate(cells)]
    if cfg["workers"] > 1:
        with ProcessPoolExecutor(cfg["workers"]) as pool:
            results = list(pool.map(_sweep_cell, jobs))
    else:
        results = [_sweep_cell(j) for j in jobs]
    out = _out_dir(cfg)
    lines = ["window,batch,code,margin,f1,status"]
    for (w, K, c), rows in zip(cells, results):
        for m, f1, status in rows:
            lines.append(f"{w},{K},{c},{m},{f1!r},{status}")
    (out / "sweep.csv").write_text("\n".join(lines) + "\n", encoding="utf-8")
    write_config_used(cfg, "sweep", out)
    print(f"{len(cells)} cells written to {out / 'sweep.csv'}")
    return EXIT_OK


COMMANDS = {"synth": cmd_synth, "train": cmd_train, "detect": cmd_detect, "eval": cmd_eval, "sweep": cmd_sweep}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg, explicit = resolve(args)
        return COMMANDS[args.command](cfg, explicit)
    except CapacityError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CAPACITY
    except ConfigMismatch as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_MISMATCH
    except (LoadError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (UsageError, ValueError) as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
