"""
Sentence-aspect packing and a small bidirectional transformer encoder.

Every example becomes one sequence ``[CLS] w_1..w_N [SEP] a_1..a_M [SEP]``
with segment ids 0 for ``[CLS]``, the sentence and the first ``[SEP]`` and 1
for the aspect part.  The sentence always occupies positions 1..N, so its
contextual rows are a contiguous window of the encoder output.
"""

from __future__ import annotations

import hashlib
import math
from collections import Counter
from dataclasses import asdict, dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np

from . import numerics as nx
from .data import CategoryAspect, Example, TermAspect
from .errors import ConfigError, ContractError, DataError
from .numerics import Tensor

PAD, CLS, SEP, UNK = "[PAD]", "[CLS]", "[SEP]", "[UNK]"
RESERVED = (PAD, CLS, SEP, UNK)
MASK_VALUE = -1e9


def category_token(label: str) -> str:
    return f"[CAT:{label}]"


class Vocabulary:
    """Dense token ids; ids 0-3 are PAD, CLS, SEP, UNK."""

    def __init__(self, tokens: Sequence[str]):
        tokens = list(tokens)
        if tuple(tokens[: len(RESERVED)]) != RESERVED:
            raise ContractError("vocabulary must start with the reserved tokens")
        if len(set(tokens)) != len(tokens):
            raise ContractError("duplicate vocabulary entries")
        self.itos = tokens
        self.stoi = {t: i for i, t in enumerate(tokens)}

    pad_id, cls_id, sep_id, unk_id = 0, 1, 2, 3

    def __len__(self) -> int:
        return len(self.itos)

    def __contains__(self, token: str) -> bool:
        return token in self.stoi

    def encode(self, token: str) -> int:
        return self.stoi.get(token, self.unk_id)

    def decode(self, idx: int) -> str:
        return self.itos[idx]

    def category_id(self, label: str) -> int:
        return self.encode(category_token(label))

    def fingerprint(self) -> str:
        return hashlib.sha256("\n".join(self.itos).encode("utf-8")).hexdigest()[:16]


def build_vocabulary(corpus: Iterable[Example], min_count: int = 1, categories: Iterable[str] = ()) -> Vocabulary:
    """Word ids for tokens seen at least ``min_count`` times plus one abstract
    token per aspect category found in the corpus (or listed in ``categories``)."""
    counts: Counter = Counter()
    cats = set(categories)
    n = 0
    for ex in corpus:
        n += 1
        counts.update(ex.tokens)
        if isinstance(ex.aspect, CategoryAspect):
            cats.add(ex.aspect.label)
    if n == 0:
        raise DataError("cannot build a vocabulary from an empty corpus")
    words = sorted((t for t, c in counts.items() if c >= min_count and t not in RESERVED), key=lambda t: (-counts[t], t))
    return Vocabulary([*RESERVED, *words, *(category_token(c) for c in sorted(cats))])


@dataclass(frozen=True)
class PackedSequence:
    token_ids: np.ndarray
    segment_ids: np.ndarray
    sentence_window: tuple  # inclusive (first, last) positions of the sentence
    n: int
    m: int

    def __len__(self) -> int:
        return len(self.token_ids)


def pack(example: Example, vocab: Vocabulary) -> PackedSequence:
    n = len(example.tokens)
    if n == 0:
        raise DataError(f"{example.sentence_id}: empty sentence")
    aspect = example.aspect
    if isinstance(aspect, TermAspect):
        if not 0 <= aspect.start <= aspect.end < n:
            raise DataError(f"{example.sentence_id}: term span ({aspect.start}, {aspect.end}) outside length {n}")
        aspect_ids = [vocab.encode(t) for t in example.tokens[aspect.start : aspect.end + 1]]
    else:
        aspect_ids = [vocab.category_id(aspect.label)]
    sent_ids = [vocab.encode(t) for t in example.tokens]
    ids = [vocab.cls_id, *sent_ids, vocab.sep_id, *aspect_ids, vocab.sep_id]
    m = len(aspect_ids)
    segs = [0] * (n + 2) + [1] * (m + 1)
    return PackedSequence(np.asarray(ids, dtype=np.int64), np.asarray(segs, dtype=np.int64), (1, n), n, m)


@dataclass
class EncoderConfig:
    vocab_size: int
    hidden: int = 64
    layers: int = 2
    heads: int = 4
    ff_mult: int = 4
    max_len: int = 128
    n_segments: int = 2
    ln_eps: float = 1e-12
    dropout: float = 0.0
    init_std: float = 0.02

    def validate(self) -> None:
        if self.vocab_size < len(RESERVED):
            raise ConfigError("vocab_size smaller than the reserved tokens")
        if self.hidden < 1 or self.heads < 1 or self.layers < 0 or self.ff_mult < 1:
            raise ConfigError("hidden, heads and ff_mult must be positive and layers non-negative")
        if self.hidden % self.heads:
            raise ConfigError(f"hidden size {self.hidden} is not divisible by {self.heads} heads")
        if self.max_len < 4:
            raise ConfigError("max_len must allow at least [CLS] w [SEP] a [SEP]")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError("dropout must lie in [0, 1)")
        if self.ln_eps <= 0 or self.init_std <= 0:
            raise ConfigError("ln_eps and init_std must be positive")

    def to_dict(self) -> dict:
        return asdict(self)


def param_shapes(cfg: EncoderConfig) -> dict:
    """Name -> shape for every encoder tensor, in a fixed order."""
    h, f = cfg.hidden, cfg.hidden * cfg.ff_mult
    shapes = {
        "tok_emb": (cfg.vocab_size, h),
        "pos_emb": (cfg.max_len, h),
        "seg_emb": (cfg.n_segments, h),
        "emb_ln.g": (h,),
        "emb_ln.b": (h,),
    }
    for i in range(cfg.layers):
        p = f"layer{i}."
        shapes.update({
            p + "wq": (h, h), p + "bq": (h,),
            p + "wk": (h, h), p + "bk": (h,),
            p + "wv": (h, h), p + "bv": (h,),
            p + "wo": (h, h), p + "bo": (h,),
            p + "ln1.g": (h,), p + "ln1.b": (h,),
            p + "ff1.w": (h, f), p + "ff1.b": (f,),
            p + "ff2.w": (f, h), p + "ff2.b": (h,),
            p + "ln2.g": (h,), p + "ln2.b": (h,),
        })  # fmt: skip
    return shapes


def init_tensor(name: str, shape: tuple, rng: np.random.Generator, std: float) -> np.ndarray:
    """Weights ~ N(0, std^2); layer-norm gains 1; biases 0."""
    if name.endswith(".g"):
        return np.ones(shape)
    if name.endswith(".b") or name.rsplit(".", 1)[-1].startswith("b"):
        return np.zeros(shape)
    return rng.normal(0.0, std, size=shape)


@dataclass
class EncoderParams:
    config: EncoderConfig
    tensors: dict = field(default_factory=dict)

    def __getitem__(self, name: str) -> Tensor:
        return self.tensors[name]


def init_params(config: EncoderConfig, seed: int = 0) -> EncoderParams:
    config.validate()
    rng = np.random.default_rng(seed)
    tensors = {
        name: Tensor(init_tensor(name, shape, rng, config.init_std), requires_grad=True)
        for name, shape in param_shapes(config).items()
    }
    return EncoderParams(config, tensors)


@dataclass
class ContextualReps:
    full: Tensor  # [packed_len, H]
    sentence: Tensor  # [N, H]
    attentions: list  # per layer, arrays [heads, L, L]


@dataclass
class BatchReps:
    full: Tensor  # [B, L, H]
    sentence: Tensor  # [B, Nmax, H], rows past each length are padding
    sentence_mask: np.ndarray  # [B, Nmax] bool
    lengths: np.ndarray  # [B]
    attentions: list  # per layer, arrays [B, heads, L, L]


def _linear(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    return nx.add(nx.matmul(x, w), b)


def _attention(x: Tensor, params: EncoderParams, i: int, bias: np.ndarray, rng) -> tuple:
    cfg = params.config
    bsz, length, h = x.shape
    nh, dh = cfg.heads, h // cfg.heads
    p = params.tensors
    pre = f"layer{i}."

    def split(t: Tensor, axes) -> Tensor:
        return nx.transpose(nx.reshape(t, (bsz, length, nh, dh)), axes)

    q = split(_linear(x, p[pre + "wq"], p[pre + "bq"]), (0, 2, 1, 3))
    k = split(_linear(x, p[pre + "wk"], p[pre + "bk"]), (0, 2, 3, 1))
    v = split(_linear(x, p[pre + "wv"], p[pre + "bv"]), (0, 2, 1, 3))
    scores = nx.add(nx.scale(nx.matmul(q, k), 1.0 / math.sqrt(dh)), bias)
    att = nx.softmax(scores, axis=-1)
    if cfg.dropout > 0 and rng is not None:
        att = nx.dropout(att, cfg.dropout, rng)
    ctx = nx.reshape(nx.transpose(nx.matmul(att, v), (0, 2, 1, 3)), (bsz, length, h))
    return _linear(ctx, p[pre + "wo"], p[pre + "bo"]), att.data


def encode_batch(batch: Sequence[PackedSequence], params: EncoderParams, rng: Optional[np.random.Generator] = None) -> BatchReps:
    """Encode padded sequences together; padding keys are masked out of attention.

    ``rng`` drives dropout and is only needed when dropout is configured.
    """
    cfg = params.config
    p = params.tensors
    bsz = len(batch)
    if bsz == 0:
        raise ContractError("empty batch")
    length = max(len(s) for s in batch)
    if length > cfg.max_len:
        raise ContractError(f"sequence of length {length} exceeds max_len {cfg.max_len}")
    ids = np.zeros((bsz, length), dtype=np.int64)
    segs = np.zeros((bsz, length), dtype=np.int64)
    keep = np.zeros((bsz, length), dtype=bool)
    for j, s in enumerate(batch):
        ids[j, : len(s)] = s.token_ids
        segs[j, : len(s)] = s.segment_ids
        keep[j, : len(s)] = True
    if ids.max() >= cfg.vocab_size or ids.min() < 0:
        raise ContractError(f"token id outside embedding table of size {cfg.vocab_size}")
    if segs.max() >= cfg.n_segments:
        raise ContractError("segment id outside segment table")

    emb = nx.add(nx.add(nx.take(p["tok_emb"], ids), nx.take(p["pos_emb"], np.arange(length))), nx.take(p["seg_emb"], segs))
    x = nx.layer_norm(emb, p["emb_ln.g"], p["emb_ln.b"], cfg.ln_eps)
    if cfg.dropout > 0 and rng is not None:
        x = nx.dropout(x, cfg.dropout, rng)
    bias = np.where(keep, 0.0, MASK_VALUE)[:, None, None, :]
    attentions = []
    for i in range(cfg.layers):
        pre = f"layer{i}."
        a, att = _attention(x, params, i, bias, rng)
        attentions.append(att)
        if cfg.dropout > 0 and rng is not None:
            a = nx.dropout(a, cfg.dropout, rng)
        x = nx.layer_norm(nx.add(x, a), p[pre + "ln1.g"], p[pre + "ln1.b"], cfg.ln_eps)
        f = _linear(nx.gelu(_linear(x, p[pre + "ff1.w"], p[pre + "ff1.b"])), p[pre + "ff2.w"], p[pre + "ff2.b"])
        if cfg.dropout > 0 and rng is not None:
            f = nx.dropout(f, cfg.dropout, rng)
        x = nx.layer_norm(nx.add(x, f), p[pre + "ln2.g"], p[pre + "ln2.b"], cfg.ln_eps)

    lengths = np.array([s.n for s in batch])
    nmax = int(lengths.max())
    sentence = nx.take(x, (slice(None), slice(1, 1 + nmax)))
    mask = np.arange(nmax)[None, :] < lengths[:, None]
    return BatchReps(x, sentence, mask, lengths, attentions)


def encode(packed: PackedSequence, params: EncoderParams, rng: Optional[np.random.Generator] = None) -> ContextualReps:
    """Contextual rows for one packed sequence and its sentence window."""
    reps = encode_batch([packed], params, rng)
    full = nx.take(reps.full, 0)
    first, last = packed.sentence_window
    sentence = nx.take(full, slice(first, last + 1))
    return ContextualReps(full, sentence, [a[0] for a in reps.attentions])
