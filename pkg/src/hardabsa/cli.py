"""Command-line entry point: gen, synth-multi, train, eval, viz, stats.

Configuration is a flat JSON object with dotted keys (``train.epochs``,
``encoder.hidden``, ``synth.n_train``, ``quotas.2P`` ...).  Command-line flags
override file values; unknown keys are rejected before any work starts.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import __version__
from .data import (
    COMBINATIONS,
    DEFAULT_QUOTAS,
    DatasetStats,
    Example,
    SynthConfig,
    format_partition_table,
    format_stats_table,
    gen_synthetic_corpus,
    group_by_sentence,
    load_dataset,
    partition_multi_aspect,
    save_dataset,
    synth_multi_train,
    synthesis_report,
)
from .encoder import EncoderConfig, encode_batch
from .errors import ConfigError, DataError, HardAbsaError
from .evaluation import MODES, evaluate
from .heads import HEADS
from .model import head_forward, load_checkpoint, save_checkpoint
from .numerics import no_grad
from .trainer import TrainConfig, train
from .visualize import FORMATS, write_visualizations

log = logging.getLogger("hardabsa")

SPLITS = ("train", "dev", "test")
_ENCODER_KEYS = {f.name for f in fields(EncoderConfig)} - {"vocab_size"}
_TRAIN_KEYS = {f.name for f in fields(TrainConfig)}
_SYNTH_KEYS = {f.name for f in fields(SynthConfig)}


@dataclass
class RunConfig:
    """Merged configuration for one command."""

    seed: int = 0
    head: str = "hard"
    out: str = "runs"
    data: Optional[str] = None
    checkpoint: Optional[str] = None
    format: str = "text"
    mode: str = "three_way"
    ids: list = field(default_factory=list)
    encoder: dict = field(default_factory=dict)
    train: dict = field(default_factory=dict)
    synth: dict = field(default_factory=dict)
    quotas: dict = field(default_factory=lambda: dict(DEFAULT_QUOTAS))

    def train_config(self) -> TrainConfig:
        return TrainConfig(**{**self.train, "seed": self.seed, "head": self.head})

    def synth_config(self) -> SynthConfig:
        return SynthConfig(**{**self.synth, "seed": self.seed})

    def validate(self) -> None:
        if self.head not in HEADS:
            raise ConfigError(f"head must be one of {HEADS}")
        if self.format not in FORMATS:
            raise ConfigError(f"format must be one of {FORMATS}")
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}")
        self.train_config().validate()
        try:
            self.synth_config().validate()
        except DataError as err:
            raise ConfigError(str(err)) from None
        if self.encoder:
            EncoderConfig(vocab_size=8, **self.encoder).validate()
        for code, n in self.quotas.items():
            if not isinstance(n, int) or n < 0:
                raise ConfigError(f"quota for {code} must be a non-negative integer")

    def to_flat(self) -> dict:
        flat = {k: v for k, v in asdict(self).items() if not isinstance(v, dict)}
        for section in ("encoder", "train", "synth", "quotas"):
            flat.update({f"{section}.{k}": v for k, v in getattr(self, section).items()})
        return flat


def _apply(cfg: RunConfig, key: str, value) -> None:
    section, _, name = key.partition(".")
    if not name:
        if section not in {"seed", "head", "out", "data", "checkpoint", "format", "mode", "ids"}:
            raise ConfigError(f"unknown config key {key!r}")
        setattr(cfg, section, value)
        return
    allowed = {"encoder": _ENCODER_KEYS, "train": _TRAIN_KEYS - {"seed", "head"}, "synth": _SYNTH_KEYS - {"seed"}, "quotas": set(COMBINATIONS) | {"P", "N", "Nu"}}
    if section not in allowed or name not in allowed[section]:
        raise ConfigError(f"unknown config key {key!r}")
    getattr(cfg, section)[name] = value


def load_run_config(path: Optional[str], overrides: dict) -> RunConfig:
    cfg = RunConfig()
    if path:
        try:
            raw = json.loads(Path(path).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as err:
            raise ConfigError(f"cannot read config {path}: {err}") from None
        if not isinstance(raw, dict):
            raise ConfigError("config file must hold a JSON object")
        for key, value in raw.items():
            _apply(cfg, key, value)
    for key, value in overrides.items():
        if value is not None:
            _apply(cfg, key, value)
    cfg.validate()
    return cfg


def _write_json(path: Path, obj) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _require(value, flag: str):
    if value is None:
        raise ConfigError(f"{flag} is required for this command")
    return value


def _split_paths(data: str) -> dict:
    """``data`` is a directory holding train/dev/test.jsonl files."""
    root = Path(data)
    if not root.is_dir():
        raise DataError(f"{data} is not a directory of split files")
    return {s: root / f"{s}.jsonl" for s in SPLITS}


# --- commands --------------------------------------------------------------------------


def cmd_gen(cfg: RunConfig) -> int:
    synth = cfg.synth_config()
    corpus = gen_synthetic_corpus(synth)
    out = Path(cfg.out)
    rows = []
    for split in SPLITS:
        save_dataset(out / f"{split}.jsonl", corpus[split])
        rows.append(("T", f"synthetic {split}", DatasetStats.of(corpus[split])))
    _write_json(out / "manifest.json", {"version": __version__, "seed": cfg.seed, "synth": asdict(synth), "sizes": {s: len(corpus[s]) for s in SPLITS}})
    print(format_stats_table(rows))
    return 0


def cmd_synth_multi(cfg: RunConfig) -> int:
    examples, _ = load_dataset(_require(cfg.data, "--data"))
    groups = group_by_sentence(examples)
    singles = [g[0] for g in groups.values() if len(g) == 1]
    out = Path(cfg.out)
    result = synth_multi_train(singles, cfg.quotas, seed=cfg.seed)
    save_dataset(out / "multi_train.jsonl", result)
    counts = synthesis_report(result)
    report = {code: {"requested": cfg.quotas.get(code, 0), "produced": counts.get(code, 0)} for code in ("P", "N", "Nu", *COMBINATIONS)}
    _write_json(out / "quota_report.json", report)
    lines = [f"{'code':<6} {'requested':>9} {'produced':>9}"]
    lines += [f"{code:<6} {r['requested']:>9} {r['produced']:>9}" for code, r in report.items()]
    singles_total = sum(report[c]["produced"] for c in ("P", "N", "Nu"))
    multi_total = sum(report[c]["produced"] for c in COMBINATIONS)
    lines.append(f"singles {singles_total}  multi-aspect {multi_total}")
    (out / "quota_report.txt").write_text("\n".join(lines) + "\n", encoding="utf-8")
    print("\n".join(lines))
    return 0


def cmd_train(cfg: RunConfig) -> int:
    paths = _split_paths(_require(cfg.data, "--data"))
    train_set, _ = load_dataset(paths["train"])
    dev_set, _ = load_dataset(paths["dev"])
    tcfg = cfg.train_config()
    out = Path(cfg.out)
    model, start, optim = None, 0, None
    if cfg.checkpoint:
        model, extra, optim = load_checkpoint(cfg.checkpoint)
        start = int(extra.get("epochs_done", 0))
        log.info("resuming from %s at epoch %d", cfg.checkpoint, start)
    model, history, opt = train(
        train_set, dev_set, tcfg, model=model, encoder_kw=cfg.encoder or None,
        start_epoch=start, optimizer_state=optim, history_path=out / "history.jsonl",
    )  # fmt: skip
    done = start + tcfg.epochs
    state = {"t": opt.t, "m": opt.m, "v": opt.v}
    save_checkpoint(out / "checkpoint.npz", model, {"epochs_done": done, "config": cfg.to_flat()}, state)
    report = evaluate(model, dev_set)
    report.write(out, "dev_report", model.head)
    print(report.format_table(model.head))
    return 0


def cmd_eval(cfg: RunConfig) -> int:
    model, _, _ = load_checkpoint(_require(cfg.checkpoint, "--checkpoint"))
    examples, _ = load_dataset(_require(cfg.data, "--data"))
    report = evaluate(model, examples, cfg.mode)
    report.write(Path(cfg.out), f"eval_{model.head}_{cfg.mode}", model.head)
    print(report.format_table(model.head))
    return 0


def cmd_viz(cfg: RunConfig) -> int:
    model, _, _ = load_checkpoint(_require(cfg.checkpoint, "--checkpoint"))
    examples, _ = load_dataset(_require(cfg.data, "--data"))
    groups = group_by_sentence(examples)
    ids = cfg.ids or list(groups)[:5]
    missing = [i for i in ids if i not in groups]
    if missing:
        raise DataError(f"unknown sentence ids {missing}; the dataset has {len(groups)} ids")
    chosen = [e for i in ids for e in groups[i]]
    with no_grad():
        reps = encode_batch(model.pack(chosen), model.encoder)
        out = head_forward(model, reps, model.head, "greedy")
    predicted = np.argmax(out.logits.data, axis=1)
    if model.head == "hard":
        outputs = [(int(l), int(r)) for l, r in zip(out.l, out.r)]
    elif model.head == "soft":
        outputs = [out.alpha.data[j, : reps.lengths[j]] for j in range(len(chosen))]
    else:
        # the CLS head has no token weights; show its attention from CLS in the last layer
        att = reps.attentions[-1].mean(axis=1)
        outputs = []
        for j, ex in enumerate(chosen):
            w = att[j, 0, 1 : 1 + len(ex.tokens)]
            outputs.append(w / w.sum())
    paths = write_visualizations(Path(cfg.out), chosen, outputs, predicted, model.head, cfg.format)
    for p in paths:
        print(p)
    return 0


def cmd_stats(cfg: RunConfig) -> int:
    target = Path(_require(cfg.data, "--data"))
    files = [target / f"{s}.jsonl" for s in SPLITS] if target.is_dir() else [target]
    rows, multi = [], []
    for path in files:
        examples, stats = load_dataset(path)
        rows.append(("T", path.stem, stats))
        multi.extend(examples)
    print(format_stats_table(rows))
    print()
    print(format_partition_table(partition_multi_aspect(multi)))
    return 0


COMMANDS = {
    "gen": cmd_gen,
    "synth-multi": cmd_synth_multi,
    "train": cmd_train,
    "eval": cmd_eval,
    "viz": cmd_viz,
    "stats": cmd_stats,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hardabsa", description="Hard-selection aspect sentiment toolkit")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="flat JSON file with dotted keys")
        p.add_argument("--seed", type=int)
        p.add_argument("--head", choices=HEADS)
        p.add_argument("--out", help="output directory")
        p.add_argument("--data", help="dataset file or directory of split files")
        p.add_argument("--checkpoint")
        p.add_argument("--format", choices=FORMATS)
        if name == "eval":
            p.add_argument("--mode", choices=MODES)
        if name == "viz":
            p.add_argument("--ids", nargs="+", help="sentence ids to render")
        p.add_argument("-v", "--verbose", action="store_true")
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    overrides = {k: getattr(args, k, None) for k in ("seed", "head", "out", "data", "checkpoint", "format", "mode", "ids")}
    try:
        cfg = load_run_config(args.config, overrides)
        return COMMANDS[args.command](cfg)
    except (HardAbsaError, OSError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
