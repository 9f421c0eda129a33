"""``vitforge`` command line: scan, train, eval, predict, profile.

Settings resolve as built-in defaults < ``--config FILE`` (JSON) < flags.
Exit codes: 0 ok, 1 usage/config error, 2 data error, 3 numeric fault.
"""

from __future__ import annotations

import argparse
import contextlib
import json
import logging
import os
import sys
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np

from vitforge.checkpoint import load_checkpoint
from vitforge.data import SPLITS, Batch, DatasetManifest, batch_iter, preprocess, scan_dataset
from vitforge.errors import ConfigError, FormatError, VitForgeError
from vitforge.metrics import (
    classification_report,
    confusion_matrix,
    render_confusion,
    render_report,
    roc_auc,
)
from vitforge.model import ViT, ViTConfig
from vitforge.profiler import profile, profile_json, render_profile
from vitforge.tensor import softmax
from vitforge.training import TrainConfig, fit, run_epoch, write_curves

log = logging.getLogger("vitforge")

# training-split size of the reference wildfire dataset; sets the epoch length when profiling random data
REFERENCE_TRAIN_SIZE = 1509
TEST_LINE = "Test Loss: {loss:.4f}, Test Accuracy: {acc:.2f}%"


@dataclass
class RunConfig:
    data: str | None = None
    size: str = "tiny"
    out: str = "vitforge_out"
    seed: int = 0
    batch_size: int = 32
    learning_rate: float = 1e-4
    epochs: int = 10
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    weight_decay: float = 0.0
    save_best: bool = False
    init: str | None = None
    checkpoint: str | None = None
    split: str = "test"
    image: str | None = None
    timed: int = 10
    warmup: int = 3
    json: bool = False

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(d) - known)
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
        return cls(**d)

    def train_config(self, checkpoint_path=None, log_path=None) -> TrainConfig:
        return TrainConfig(
            batch_size=self.batch_size, learning_rate=self.learning_rate, epochs=self.epochs,
            adam_beta1=self.adam_beta1, adam_beta2=self.adam_beta2, adam_eps=self.adam_eps,
            weight_decay=self.weight_decay, seed=self.seed,
            checkpoint_path=None if checkpoint_path is None else str(checkpoint_path),
            log_path=None if log_path is None else str(log_path),
            save_best=self.save_best,
        )


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="vitforge", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(p):
        # defaults are None so that only explicitly given flags override the config file
        p.add_argument("--config", help="JSON file with RunConfig fields")
        p.add_argument("--out", help="output directory")
        p.add_argument("--seed", type=int)
        p.add_argument("--batch-size", type=int, dest="batch_size")
        p.add_argument("--json", action="store_true", default=None,
                       help="machine-readable JSON on stdout instead of text")
        p.add_argument("--print-config", action="store_true",
                       help="print the resolved config as canonical JSON and exit")

    p = sub.add_parser("scan", help="list a dataset and write per-split manifests")
    p.add_argument("data", nargs="?")
    common(p)

    p = sub.add_parser("train", help="train and write checkpoint + curves.csv")
    p.add_argument("--data")
    p.add_argument("--size", choices=["tiny", "base"])
    p.add_argument("--epochs", type=int)
    p.add_argument("--lr", type=float, dest="learning_rate")
    p.add_argument("--beta1", type=float, dest="adam_beta1")
    p.add_argument("--beta2", type=float, dest="adam_beta2")
    p.add_argument("--adam-eps", type=float, dest="adam_eps")
    p.add_argument("--weight-decay", type=float, dest="weight_decay")
    p.add_argument("--init", help="start from this checkpoint's weights")
    p.add_argument("--save-best", action="store_true", default=None, dest="save_best")
    common(p)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a split")
    p.add_argument("--checkpoint")
    p.add_argument("--data")
    p.add_argument("--split", choices=list(SPLITS))
    common(p)

    p = sub.add_parser("predict", help="classify one image")
    p.add_argument("--checkpoint")
    p.add_argument("image", nargs="?")
    common(p)

    p = sub.add_parser("profile", help="time forward/backward/inference")
    p.add_argument("--checkpoint")
    p.add_argument("--size", choices=["tiny", "base"])
    p.add_argument("--data", help="time real batches from <data>/train instead of random input")
    p.add_argument("--timed", type=int)
    p.add_argument("--warmup", type=int)
    common(p)
    return parser


def resolve_config(args: argparse.Namespace) -> RunConfig:
    merged = {}
    if getattr(args, "config", None):
        try:
            merged.update(json.loads(Path(args.config).read_text()))
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config file {args.config}: {exc}") from exc
    names = {f.name for f in fields(RunConfig)}
    for k, v in vars(args).items():
        if k in names and v is not None:
            merged[k] = v
    return RunConfig.from_dict(merged)


def _emit(cfg: RunConfig, text: str, payload) -> None:
    if cfg.json:
        print(json.dumps(payload, sort_keys=True))
    else:
        sys.stdout.write(text)


def _require(value, flag):
    if not value:
        raise ConfigError(f"missing required setting {flag}")
    return value


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def cmd_scan(cfg: RunConfig) -> int:
    root = Path(_require(cfg.data, "<data root>"))
    if not root.is_dir():
        raise ConfigError(f"dataset root {root} does not exist")
    present = [s for s in SPLITS if (root / s).is_dir()]
    if not present:
        raise ConfigError(
            f"{root} contains none of {', '.join(SPLITS)}; "
            "lay the dataset out as <root>/<split>/<class_name>/*.jpg"
        )
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    summary = {}
    lines = []
    for split in present:
        manifest = scan_dataset(root, split)
        manifest.save(out / f"manifest_{split}.json")
        counts = manifest.class_counts()
        summary[split] = {"total": len(manifest), "classes": counts, "warnings": manifest.warnings}
        parts = ", ".join(f"{k} {v}" for k, v in counts.items())
        lines.append(f"{split}: {parts} (total {len(manifest)})\n")
    _emit(cfg, "".join(lines), summary)
    return 0


def _load_model(path) -> tuple[ViT, list[str], object]:
    ckpt = load_checkpoint(path)
    try:
        config = ViTConfig.from_dict(ckpt.config)
        model = ViT(config, ckpt.params)
    except (TypeError, VitForgeError) as exc:
        raise FormatError(f"{path}: checkpoint config/parameters inconsistent ({exc})") from exc
    return model, ckpt.class_names, ckpt


def cmd_train(cfg: RunConfig) -> int:
    root = _require(cfg.data, "--data")
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    train = scan_dataset(root, "train")
    val = scan_dataset(root, "val")
    if val.class_names != train.class_names:
        raise ConfigError(f"val classes {val.class_names} differ from train classes {train.class_names}")
    if cfg.init:
        model, names, _ = _load_model(cfg.init)
        if names and names != train.class_names:
            raise FormatError(f"{cfg.init}: classes {names} do not match dataset {train.class_names}")
    else:
        model = ViT(ViTConfig.named(cfg.size, len(train.class_names)), seed=cfg.seed)
    tcfg = cfg.train_config(out / "checkpoint.vitf", out / "epochs.jsonl")
    (out / "config.json").write_text(cfg.to_json() + "\n")
    sink = open(os.devnull, "w") if cfg.json else sys.stdout
    with contextlib.ExitStack() as stack:
        if cfg.json:
            stack.callback(sink.close)
        logs, _ = fit(model, train, val, tcfg, out=sink)
    write_curves(logs, out / "curves.csv")
    if cfg.json:
        print(json.dumps({"epochs": [asdict(r) for r in logs],
                          "checkpoint": str(out / "checkpoint.vitf"),
                          "curves": str(out / "curves.csv")}, sort_keys=True))
    return 0


def evaluate(model: ViT, manifest: DatasetManifest, batch_size: int = 32):
    """Sequential pass; returns (loss, acc, per-sample records)."""
    records = []

    def keep(batch: Batch, logits):
        probs = softmax(logits.astype(np.float64))
        for path, label, lg, pr in zip(batch.paths, batch.labels, logits, probs):
            records.append({"path": path, "label": int(label), "logits": [float(v) for v in lg],
                            "probs": [float(v) for v in pr], "pred": int(np.argmax(lg))})

    loss, acc = run_epoch(
        model,
        batch_iter(manifest, batch_size, shuffle=False, size=model.config.image_size, on_error="raise"),
        mode="eval", on_logits=keep)
    return loss, acc, records


def cmd_eval(cfg: RunConfig) -> int:
    model, names, _ = _load_model(_require(cfg.checkpoint, "--checkpoint"))
    manifest = scan_dataset(_require(cfg.data, "--data"), cfg.split)
    if names and names != manifest.class_names:
        raise FormatError(
            f"checkpoint classes {names} do not match {cfg.split} split classes {manifest.class_names}"
        )
    if len(manifest.class_names) != model.config.num_classes:
        raise FormatError(
            f"checkpoint has {model.config.num_classes} classes, split has {len(manifest.class_names)}"
        )
    loss, acc, records = evaluate(model, manifest, cfg.batch_size)
    truth = [r["label"] for r in records]
    pred = [r["pred"] for r in records]
    cm = confusion_matrix(truth, pred, len(manifest.class_names), manifest.class_names)
    # positive class is index 0 ("fire" under sorted class names)
    try:
        auc = roc_auc(truth, [r["probs"][0] for r in records], positive=0)
    except VitForgeError:
        auc = None
    report = classification_report(cm, roc_auc=auc)
    payload = {"split": cfg.split, "loss": loss, "accuracy_percent": acc,
               "report": report.to_json(), "predictions": records}
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / f"metrics_{cfg.split}.json").write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
    auc_line = "ROC-AUC: n/a (single class)\n" if auc is None else f"ROC-AUC: {auc:.4f}\n"
    text = (TEST_LINE.format(loss=loss, acc=acc) + "\n\nClassification Report:\n"
            + render_report(report) + "\n" + render_confusion(cm) + "\n" + auc_line)
    _emit(cfg, text, {k: v for k, v in payload.items() if k != "predictions"})
    return 0


def cmd_predict(cfg: RunConfig) -> int:
    model, names, _ = _load_model(_require(cfg.checkpoint, "--checkpoint"))
    image = _require(cfg.image, "<image>")
    names = names or [str(i) for i in range(model.config.num_classes)]
    x = preprocess(image, model.config.image_size)[None]
    logits = model.forward(x, keep_cache=False)[0]
    probs = softmax(logits.astype(np.float64))
    k = int(np.argmax(logits))
    lines = [f"{n}: {p:.6f}" for n, p in zip(names, probs)]
    lines.append(f"Predicted: {names[k]} ({probs[k]:.6f})")
    _emit(cfg, "\n".join(lines) + "\n",
          {"image": image, "label": names[k], "index": k, "probability": float(probs[k]),
           "probs": {n: float(p) for n, p in zip(names, probs)},
           "logits": [float(v) for v in logits]})
    return 0


def cmd_profile(cfg: RunConfig) -> int:
    if cfg.checkpoint:
        model, _, _ = _load_model(cfg.checkpoint)
    else:
        model = ViT(ViTConfig.named(cfg.size), seed=cfg.seed)
    c = model.config
    if cfg.data:
        manifest = scan_dataset(cfg.data, "train")
        batches = []
        for b in batch_iter(manifest, cfg.batch_size, size=c.image_size, on_error="skip"):
            batches.append(b)
            if len(batches) >= cfg.warmup + cfg.timed:
                break
        per_epoch = -(-len(manifest) // cfg.batch_size)
    else:
        rng = np.random.default_rng(cfg.seed)
        images = rng.standard_normal(
            (cfg.batch_size, c.in_channels, c.image_size, c.image_size)).astype(np.float32)
        labels = rng.integers(0, c.num_classes, cfg.batch_size)
        batches = [Batch(images, labels)]
        per_epoch = -(-REFERENCE_TRAIN_SIZE // cfg.batch_size)
    report = profile(model, batches, cfg.train_config(), timed=cfg.timed, warmup=cfg.warmup,
                     batches_per_epoch=per_epoch)
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "profile.json").write_text(profile_json(report) + "\n")
    _emit(cfg, render_profile(report, header=True), report.to_json())
    return 0


COMMANDS = {
    "scan": cmd_scan,
    "train": cmd_train,
    "eval": cmd_eval,
    "predict": cmd_predict,
    "profile": cmd_profile,
}


def _limit_threads():
    env = os.environ.get("VITFORGE_THREADS")
    if not env:
        return contextlib.nullcontext()
    try:
        n = max(1, int(env))
    except ValueError:
        raise ConfigError(f"VITFORGE_THREADS must be an integer, got {env!r}") from None
    from threadpoolctl import threadpool_limits
    return threadpool_limits(n)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        cfg = resolve_config(args)
        if args.print_config:
            print(cfg.to_json())
            return 0
        with _limit_threads():
            return COMMANDS[args.command](cfg)
    except VitForgeError as exc:
        print(f"vitforge {args.command}: {exc}", file=sys.stderr)
        return exc.exit_code
    except KeyboardInterrupt:
        print("interrupted", file=sys.stderr)
        return 130


if __name__ == "__main__":
    sys.exit(main())
