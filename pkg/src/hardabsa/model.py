"""Encoder + heads bundle, greedy inference, and checkpoint files."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import heads as hd
from . import numerics as nx
from .data import POLARITIES, Example
from .encoder import (
    EncoderConfig,
    EncoderParams,
    Vocabulary,
    encode_batch,
    init_params,
    pack,
    param_shapes,
)
from .errors import CheckpointError, ConfigError, ContractError
from .heads import HEADS, HeadParams, head_shapes, init_head_params
from .numerics import Tensor

CHECKPOINT_VERSION = "hardabsa-checkpoint/1"


@dataclass
class Model:
    vocab: Vocabulary
    encoder: EncoderParams
    heads: HeadParams
    head: str = "hard"

    def __post_init__(self):
        if self.head not in HEADS:
            raise ConfigError(f"unknown head {self.head!r}; choose from {HEADS}")

    @classmethod
    def create(cls, vocab: Vocabulary, head: str = "hard", seed: int = 0, **encoder_kw) -> "Model":
        cfg = EncoderConfig(vocab_size=len(vocab), **encoder_kw)
        enc = init_params(cfg, seed)
        hp = init_head_params(cfg.hidden, len(POLARITIES), seed + 1, cfg.init_std)
        return cls(vocab, enc, hp, head)

    def parameters(self) -> dict:
        """Trainable tensors of the encoder and the active head."""
        out = {f"encoder.{k}": v for k, v in self.encoder.tensors.items()}
        out.update({f"heads.{k}": self.heads.tensors[k] for k in self.heads.names_for(self.head)})
        return out

    def all_tensors(self) -> dict:
        out = {f"encoder.{k}": v for k, v in self.encoder.tensors.items()}
        out.update({f"heads.{k}": v for k, v in self.heads.tensors.items()})
        return out

    def pack(self, examples: Sequence[Example]) -> list:
        return [pack(ex, self.vocab) for ex in examples]


@dataclass
class HeadOutput:
    """Per-example outputs of one forward pass over a batch."""

    logits: Tensor  # [B, C]
    alpha: Optional[Tensor] = None  # soft head, [B, N]
    l: Optional[np.ndarray] = None  # hard head
    r: Optional[np.ndarray] = None
    logp_l: Optional[Tensor] = None
    logp_r: Optional[Tensor] = None


def head_forward(model: Model, reps, head: str, mode: str = "greedy", rng=None) -> HeadOutput:
    W2, b = model.heads.classifier(head)
    if head == "original":
        g = nx.take(reps.full, (slice(None), 0))
        return HeadOutput(hd.batch_logits(g, W2, b))
    if head == "soft":
        alpha, g = hd.batch_soft_select(reps.sentence, reps.sentence_mask, model.heads)
        return HeadOutput(hd.batch_logits(g, W2, b), alpha=alpha)
    l, r, lp_l, lp_r = hd.batch_select(reps.sentence, reps.sentence_mask, model.heads, mode, rng)
    g = hd.batch_pool(reps.sentence, l, r)
    return HeadOutput(hd.batch_logits(g, W2, b), l=l, r=r, logp_l=lp_l, logp_r=lp_r)


@dataclass
class Inference:
    predicted: np.ndarray  # [n]
    probs: np.ndarray  # [n, C]
    alphas: list = field(default_factory=list)  # soft head: one array per example
    spans: list = field(default_factory=list)  # hard head: (l, r) per example


def infer(model: Model, examples: Sequence[Example], head: Optional[str] = None, batch_size: int = 64) -> Inference:
    """Greedy (argmax) inference without building a graph."""
    head = head or model.head
    preds, probs, alphas, spans = [], [], [], []
    with nx.no_grad():
        for i in range(0, len(examples), batch_size):
            chunk = examples[i : i + batch_size]
            reps = encode_batch(model.pack(chunk), model.encoder)
            out = head_forward(model, reps, head, "greedy")
            p = np.exp(out.logits.data - out.logits.data.max(axis=1, keepdims=True))
            p /= p.sum(axis=1, keepdims=True)
            probs.append(p)
            preds.append(np.argmax(p, axis=1))
            if out.alpha is not None:
                alphas.extend(out.alpha.data[j, : reps.lengths[j]].copy() for j in range(len(chunk)))
            if out.l is not None:
                spans.extend((int(a), int(b)) for a, b in zip(out.l, out.r))
    return Inference(np.concatenate(preds), np.concatenate(probs), alphas, spans)


# --- checkpoints ---------------------------------------------------------------------


def save_checkpoint(path, model: Model, extra: Optional[dict] = None, optimizer_state: Optional[dict] = None) -> None:
    """Write a versioned ``.npz``: little-endian float64 arrays plus JSON metadata.

    ``extra`` is stored verbatim in the metadata (epoch counters, history ...).
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    meta = {
        "version": CHECKPOINT_VERSION,
        "head": model.head,
        "encoder_config": model.encoder.config.to_dict(),
        "n_classes": model.heads.n_classes,
        "vocab": model.vocab.itos,
        "vocab_fingerprint": model.vocab.fingerprint(),
        "extra": extra or {},
    }
    arrays = {f"param/{k}": v.data.astype("<f8") for k, v in model.all_tensors().items()}
    for slot, values in (optimizer_state or {}).items():
        if isinstance(values, dict):
            for k, v in values.items():
                arrays[f"optim/{slot}/{k}"] = np.asarray(v, dtype="<f8")
        else:
            meta.setdefault("optim_scalars", {})[slot] = values
    arrays["__meta__"] = np.frombuffer(json.dumps(meta).encode("utf-8"), dtype=np.uint8)
    with path.open("wb") as fh:
        np.savez(fh, **arrays)


def load_checkpoint(path) -> tuple:
    """Returns ``(model, extra, optimizer_state)``; rejects version or shape mismatches."""
    path = Path(path)
    if not path.is_file():
        raise CheckpointError(f"no checkpoint at {path}")
    try:
        npz = np.load(path, allow_pickle=False)
        meta = json.loads(npz["__meta__"].tobytes().decode("utf-8"))
    except (OSError, ValueError, KeyError) as err:
        raise CheckpointError(f"unreadable checkpoint {path}: {err}") from None
    if meta.get("version") != CHECKPOINT_VERSION:
        raise CheckpointError(f"checkpoint version {meta.get('version')!r}, expected {CHECKPOINT_VERSION!r}")
    try:
        vocab = Vocabulary(meta["vocab"])
    except ContractError as err:
        raise CheckpointError(f"bad stored vocabulary: {err}") from None
    if vocab.fingerprint() != meta.get("vocab_fingerprint"):
        raise CheckpointError("vocabulary fingerprint mismatch")
    cfg = EncoderConfig(**meta["encoder_config"])
    if cfg.vocab_size != len(vocab):
        raise CheckpointError("encoder vocab_size does not match stored vocabulary")
    expected = {f"encoder.{k}": s for k, s in param_shapes(cfg).items()}
    expected.update({f"heads.{k}": s for k, s in head_shapes(cfg.hidden, meta["n_classes"]).items()})
    tensors = {}
    for name, shape in expected.items():
        key = f"param/{name}"
        if key not in npz.files:
            raise CheckpointError(f"checkpoint lacks tensor {name}")
        arr = npz[key]
        if arr.shape != tuple(shape) or arr.dtype != np.dtype("<f8"):
            raise CheckpointError(f"tensor {name}: stored {arr.shape}/{arr.dtype}, expected {tuple(shape)}/float64")
        tensors[name] = Tensor(arr, requires_grad=True)
    enc = EncoderParams(cfg, {k[len("encoder."):]: v for k, v in tensors.items() if k.startswith("encoder.")})
    hp = HeadParams(cfg.hidden, meta["n_classes"], {k[len("heads."):]: v for k, v in tensors.items() if k.startswith("heads.")})
    model = Model(vocab, enc, hp, meta["head"])
    optim: dict = dict(meta.get("optim_scalars", {}))
    for key in npz.files:
        if key.startswith("optim/"):
            _, slot, name = key.split("/", 2)
            optim.setdefault(slot, {})[name] = npz[key].copy()
    return model, meta.get("extra", {}), optim
