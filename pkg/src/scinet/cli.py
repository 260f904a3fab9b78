"""Command line front end: train, eval, predict, pe, ablate.

Configuration is a flat key=value file (# starts a comment); any key can be
overridden on the command line as ``--key value``. Unknown keys are rejected
up front. Exit codes: 0 success, 1 runtime failure, 2 configuration or
validation failure.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import os
import sys
from dataclasses import dataclass, fields

import numpy as np

from .data import NormStats, SplitSpec, TimeSeriesFrame, WindowDataset, fit_normalizer, load_csv, split
from .errors import ConfigError, DimensionError, ScinetError
from .metrics import PEConfig, compute_metrics, pe_report, permutation_entropy
from .model import ModelConfig, build_model
from .train import TrainConfig, evaluate, fit, load_checkpoint, predict_windows, save_checkpoint

SEED_ENV = "SCINET_SEED"
ABLATION_VARIANTS = ("no_interlearn", "weight_share", "no_residual", "no_decoder")
SCALES = ("normalized", "original")


def _parse_bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("true", "1", "yes"):
        return True
    if low in ("false", "0", "no"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


@dataclass
class RunConfig:
    data_path: str = ""
    timestamp_column: str = "date"
    split: str = "ratio:6,2,2"
    metrics_scale: str = "normalized"
    look_back: int = 48
    horizon: int = 24
    levels: int = 3
    stacks: int = 1
    kernel_size: int = 5
    hidden_ratio: int = 2
    dropout: float = 0.5
    leaky_slope: float = 0.01
    sign: str = "add"
    identity_init: bool = True
    no_interlearn: bool = False
    weight_share: bool = False
    no_residual: bool = False
    no_decoder: bool = False
    epochs: int = 100
    batch_size: int = 32
    lr: float = 1e-3
    lr_decay: float = 0.95
    patience: int = 10
    clip_norm: float = 5.0
    seed: int = 42
    checkpoint_path: str = "model.ckpt"

    def model_config(self, n_variates: int) -> ModelConfig:
        return ModelConfig(
            look_back=self.look_back,
            horizon=self.horizon,
            n_variates=n_variates,
            levels=self.levels,
            stacks=self.stacks,
            kernel_size=self.kernel_size,
            hidden_ratio=self.hidden_ratio,
            dropout=self.dropout,
            leaky_slope=self.leaky_slope,
            sign=self.sign,
            identity_init=self.identity_init,
            no_interlearn=self.no_interlearn,
            weight_share=self.weight_share,
            no_residual=self.no_residual,
            no_decoder=self.no_decoder,
            seed=self.seed,
        )

    def train_config(self) -> TrainConfig:
        return TrainConfig(
            epochs=self.epochs,
            batch_size=self.batch_size,
            lr=self.lr,
            lr_decay=self.lr_decay,
            patience=self.patience,
            clip_norm=self.clip_norm,
            seed=self.seed,
        )

    def canonical_lines(self) -> list[str]:
        return [f"{f.name}={getattr(self, f.name)}" for f in sorted(fields(self), key=lambda f: f.name)]

    def config_hash(self) -> str:
        return hashlib.sha256("\n".join(self.canonical_lines()).encode("utf-8")).hexdigest()


_PARSERS = {str: str, int: int, float: float, bool: _parse_bool}
_FIELD_TYPES = {"data_path": str, "timestamp_column": str, "split": str, "metrics_scale": str,
                "look_back": int, "horizon": int, "levels": int, "stacks": int, "kernel_size": int,
                "hidden_ratio": int, "dropout": float, "leaky_slope": float, "sign": str,
                "identity_init": bool, "no_interlearn": bool, "weight_share": bool,
                "no_residual": bool, "no_decoder": bool, "epochs": int, "batch_size": int,
                "lr": float, "lr_decay": float, "patience": int, "clip_norm": float,
                "seed": int, "checkpoint_path": str}


def parse_kv_file(path: str) -> dict[str, str]:
    """Flat key=value lines; '#' starts a comment; duplicate keys are an error."""
    if not os.path.exists(path):
        raise ConfigError(f"config file not found: {path}")
    out: dict[str, str] = {}
    with open(path) as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path} line {lineno}: expected key=value, got {raw.strip()!r}")
            key, value = line.split("=", 1)
            key = key.strip()
            if key in out:
                raise ConfigError(f"{path} line {lineno}: duplicate key {key!r}")
            out[key] = value.strip()
    return out


def parse_overrides(extra: list[str]) -> dict[str, str]:
    """Turn trailing ``--key value`` pairs into a dict."""
    out: dict[str, str] = {}
    i = 0
    while i < len(extra):
        token = extra[i]
        if not token.startswith("--") or len(token) == 2:
            raise ConfigError(f"expected --key value override, got {token!r}")
        key = token[2:]
        if "=" in key:
            key, value = key.split("=", 1)
        else:
            if i + 1 >= len(extra):
                raise ConfigError(f"override --{key} is missing a value")
            value = extra[i + 1]
            i += 1
        out[key] = value
        i += 1
    return out


def resolve_config(file_kv: dict[str, str], overrides: dict[str, str], env: dict = None) -> RunConfig:
    """Defaults, then SCINET_SEED, then the config file, then command line flags."""
    env = os.environ if env is None else env
    cfg = RunConfig()
    if SEED_ENV in env:
        cfg.seed = _assign(cfg, "seed", env[SEED_ENV], source=f"environment {SEED_ENV}")
    for source, table in (("config file", file_kv), ("command line", overrides)):
        for key, value in table.items():
            _assign(cfg, key, value, source=source)
    if cfg.metrics_scale not in SCALES:
        raise ConfigError(f"metrics_scale must be one of {SCALES}, got {cfg.metrics_scale!r}")
    SplitSpec.parse(cfg.split)
    return cfg


def _assign(cfg: RunConfig, key: str, value: str, source: str):
    if key not in _FIELD_TYPES:
        raise ConfigError(f"unknown configuration key {key!r} (from {source})")
    try:
        parsed = _PARSERS[_FIELD_TYPES[key]](value)
    except ValueError:
        raise ConfigError(
            f"bad value for {key!r} (from {source}): {value!r} is not a {_FIELD_TYPES[key].__name__}"
        ) from None
    setattr(cfg, key, parsed)
    return parsed


def _timestamp_column(name: str) -> str | None:
    return None if name.strip().lower() == "none" else name


def _load_frame(path: str, timestamp_column: str) -> TimeSeriesFrame:
    if not os.path.exists(path):
        raise ConfigError(f"data file not found: {path}")
    frame = load_csv(path, _timestamp_column(timestamp_column))
    if frame.rejected_rows:
        print(f"rejected_rows={frame.rejected_rows}", file=sys.stderr)
    return frame


def _prepared_datasets(cfg: RunConfig):
    frame = _load_frame(cfg.data_path, cfg.timestamp_column)
    # surface hyperparameter contradictions before any windowing complaints
    cfg.model_config(frame.n_variates).validate()
    ranges = split(frame, SplitSpec.parse(cfg.split))
    stats = fit_normalizer(frame, ranges[0])
    values = stats.apply(frame.values)
    datasets = tuple(WindowDataset(values, r, cfg.look_back, cfg.horizon) for r in ranges)
    return frame, stats, values, datasets


def _train_once(cfg: RunConfig, log=None):
    frame, stats, values, (train_ds, val_ds, test_ds) = _prepared_datasets(cfg)
    model = build_model(cfg.model_config(frame.n_variates))
    result = fit(model, train_ds, val_ds, cfg.train_config(), log=log)
    return frame, stats, model, result, (train_ds, val_ds, test_ds)


def _scaled_metrics(pred: np.ndarray, truth: np.ndarray, stats: NormStats, scale: str):
    if scale == "original":
        pred = _invert_windows(stats, pred)
        truth = _invert_windows(stats, truth)
    return compute_metrics(pred, truth)


def _invert_windows(stats: NormStats, arr: np.ndarray) -> np.ndarray:
    return arr * stats.std[None, :, None] + stats.mean[None, :, None]


def cmd_train(args, overrides: dict[str, str]) -> int:
    cfg = resolve_config(parse_kv_file(args.config), overrides)
    if not cfg.data_path:
        raise ConfigError("data_path is required for training")
    frame, stats, model, result, (train_ds, val_ds, test_ds) = _train_once(cfg, log=print)
    test_report = _scaled_metrics(*_predict(model, test_ds), stats, cfg.metrics_scale)
    extras = {
        "seed": cfg.seed,
        "config_hash": cfg.config_hash(),
        "split": cfg.split,
        "timestamp_column": cfg.timestamp_column,
        "metrics_scale": cfg.metrics_scale,
        "variate_names": frame.variate_names,
        "norm_mean": [float(v) for v in stats.mean],
        "norm_std": [float(v) for v in stats.std],
        "best_epoch": result.best_epoch,
        "best_val": result.best_val,
        "history": result.history,
    }
    save_checkpoint(cfg.checkpoint_path, model, extras)
    print(f"best_epoch={result.best_epoch} best_val_loss={result.best_val:.6f}")
    for line in test_report.as_lines():
        print("test_" + line)
    print(f"checkpoint={cfg.checkpoint_path}")
    return 0


def _predict(model, dataset):
    return predict_windows(model, dataset)


def _restore(checkpoint: str):
    model, manifest = load_checkpoint(checkpoint)
    extras = manifest["extras"]
    stats = NormStats(
        mean=np.asarray(extras["norm_mean"], dtype=np.float64),
        std=np.asarray(extras["norm_std"], dtype=np.float64),
    )
    return model, manifest, extras, stats


def cmd_eval(args) -> int:
    model, manifest, extras, stats = _restore(args.checkpoint)
    frame = _load_frame(args.data, extras["timestamp_column"])
    ranges = split(frame, SplitSpec.parse(extras["split"]))
    values = stats.apply(frame.values)
    cfg = model.config
    test_ds = WindowDataset(values, ranges[2], cfg.look_back, cfg.horizon)
    scale = args.scale or extras.get("metrics_scale", "normalized")
    report = _scaled_metrics(*_predict(model, test_ds), stats, scale)
    lines = [f"scale={scale}"] + report.as_lines()
    for line in lines:
        print(line)
    with open(args.out, "w") as fh:
        fh.write("\n".join(lines) + "\n")
    return 0


def cmd_predict(args) -> int:
    model, manifest, extras, stats = _restore(args.checkpoint)
    frame = _load_frame(args.data, extras["timestamp_column"])
    values = stats.apply(frame.values)
    cfg = model.config
    dataset = WindowDataset(values, (0, frame.length), cfg.look_back, cfg.horizon)
    pred, truth = _predict(model, dataset)
    scale = args.scale or extras.get("metrics_scale", "normalized")
    if scale == "original":
        pred = _invert_windows(stats, pred)
        truth = _invert_windows(stats, truth)
    with open(args.emit, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["window_id", "step", "variate", "truth", "prediction"])
        for w in range(pred.shape[0]):
            for s in range(pred.shape[2]):
                for v in range(pred.shape[1]):
                    writer.writerow([w, s + 1, v, repr(float(truth[w, v, s])), repr(float(pred[w, v, s]))])
    print(f"windows={pred.shape[0]} rows={pred.shape[0] * pred.shape[1] * pred.shape[2]} emitted={args.emit}")
    return 0


def cmd_pe(args) -> int:
    pe_cfg = PEConfig(order=args.order, lag=args.lag)
    if args.checkpoint:
        model, manifest, extras, stats = _restore(args.checkpoint)
        frame = _load_frame(args.data, extras["timestamp_column"])
        values = stats.apply(frame.values)
        report = pe_report(model, values, pe_cfg)
        for line in report.as_lines(frame.variate_names):
            print(line)
    else:
        frame = _load_frame(args.data, args.timestamp_column)
        scores = [permutation_entropy(frame.values[:, v], pe_cfg) for v in range(frame.n_variates)]
        for name, score in zip(frame.variate_names, scores):
            print(f"pe_original_{name}={score!r}")
        print(f"pe_original_mean={float(np.mean(scores))!r}")
    return 0


def cmd_ablate(args, overrides: dict[str, str]) -> int:
    if args.variant not in ABLATION_VARIANTS:
        raise ConfigError(f"variant must be one of {ABLATION_VARIANTS}, got {args.variant!r}")
    base_cfg = resolve_config(parse_kv_file(args.config), overrides)
    if not base_cfg.data_path:
        raise ConfigError("data_path is required for ablation")
    variant_over = dict(overrides)
    variant_over[args.variant] = "true"
    variant_cfg = resolve_config(parse_kv_file(args.config), variant_over)
    rows = []
    for label, cfg in (("base", base_cfg), (args.variant, variant_cfg)):
        frame, stats, model, result, (train_ds, val_ds, test_ds) = _train_once(cfg)
        val_report = evaluate(model, val_ds)
        test_report = _scaled_metrics(*_predict(model, test_ds), stats, cfg.metrics_scale)
        rows.append((label, result.best_val, val_report.mse, test_report))
        print(f"{label}: best_val_loss={result.best_val:.6f} val_mse={val_report.mse:.6f} "
              f"test_mse={test_report.mse:.6f} test_mae={test_report.mae:.6f}")
    base_mse, variant_mse = rows[0][2], rows[1][2]
    print(f"val_mse_base={base_mse!r}")
    print(f"val_mse_variant={variant_mse!r}")
    print(f"base_beats_variant={str(base_mse < variant_mse).lower()}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="scinet", description="Even/odd multi-resolution time series forecaster")
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", help="train a model from a key=value config file")
    p_train.add_argument("config")

    p_eval = sub.add_parser("eval", help="evaluate a checkpoint on the test segment of a dataset")
    p_eval.add_argument("checkpoint")
    p_eval.add_argument("data")
    p_eval.add_argument("--out", default="eval_report.txt")
    p_eval.add_argument("--scale", choices=SCALES, default=None)

    p_pred = sub.add_parser("predict", help="emit forecasts for every window of a dataset")
    p_pred.add_argument("checkpoint")
    p_pred.add_argument("data")
    p_pred.add_argument("--emit", required=True)
    p_pred.add_argument("--scale", choices=SCALES, default=None)

    p_pe = sub.add_parser("pe", help="permutation entropy of a dataset, optionally also of a model's representation")
    p_pe.add_argument("data")
    p_pe.add_argument("--checkpoint", default=None)
    p_pe.add_argument("--order", type=int, default=6)
    p_pe.add_argument("--lag", type=int, default=1)
    p_pe.add_argument("--timestamp-column", default="date")

    p_abl = sub.add_parser("ablate", help="train base and one ablation variant with matched seeds")
    p_abl.add_argument("config")
    p_abl.add_argument("--variant", required=True, choices=list(ABLATION_VARIANTS))
    return parser


def main(argv: list[str] | None = None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    parser = build_parser()
    args, extra = parser.parse_known_args(argv)
    try:
        if args.command in ("train", "ablate"):
            overrides = parse_overrides(extra)
            return cmd_train(args, overrides) if args.command == "train" else cmd_ablate(args, overrides)
        if extra:
            raise ConfigError(f"unexpected arguments: {' '.join(extra)}")
        if args.command == "eval":
            return cmd_eval(args)
        if args.command == "predict":
            return cmd_predict(args)
        if args.command == "pe":
            return cmd_pe(args)
        raise ConfigError(f"unknown command {args.command!r}")
    except (ConfigError, DimensionError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except ScinetError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except OSError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


def entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entry()
