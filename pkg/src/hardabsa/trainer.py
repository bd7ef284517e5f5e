"""
Training: self-critical policy gradient for the hard head, plain supervised
cross-entropy for the soft and original heads.

For the hard head each example is encoded once.  A sampled span gives the
reward ``R`` (negated cross-entropy of its prediction), a greedy span
computed outside the graph gives the baseline ``R_b``, and the loss is::

    policy_weight * -(R - R_b) * (log p(l) + log p(r))
    + supervised_weight * cross_entropy(sampled-span prediction)

averaged over the batch.  ``R - R_b`` is a constant in the graph.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import numerics as nx
from .data import CategoryAspect, Example
from .encoder import build_vocabulary, encode_batch
from .errors import ConfigError, DataError
from .heads import HEADS
from .model import Model, head_forward, infer
from .numerics import Tensor

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    epochs: int = 10
    batch_size: int = 32
    learning_rate: float = 1e-3
    seed: int = 0
    head: str = "hard"
    policy_weight: float = 1.0
    supervised_weight: float = 1.0
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    weight_decay: float = 0.0
    clip_norm: Optional[float] = 1.0
    keep_best: bool = False
    # batches per length-sorted pool; 1 gives plain shuffled batches
    length_pool: int = 1

    @classmethod
    def full_scale(cls, **kw) -> "TrainConfig":
        """Batch 32, learning rate 5e-5, 7 epochs (the pre-trained fine-tuning setting)."""
        return cls(**{"epochs": 7, "batch_size": 32, "learning_rate": 5e-5, "clip_norm": None, **kw})

    def validate(self) -> None:
        if self.head not in HEADS:
            raise ConfigError(f"unknown head {self.head!r}")
        if self.epochs < 0:
            raise ConfigError("epochs must be non-negative")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be at least 1")
        if self.learning_rate <= 0:
            raise ConfigError("learning_rate must be positive")
        if self.policy_weight < 0 or self.supervised_weight < 0:
            raise ConfigError("loss weights must be non-negative")
        if self.head == "hard" and self.policy_weight <= 0:
            raise ConfigError("the hard head needs a positive policy_weight")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1) or self.adam_eps <= 0:
            raise ConfigError("bad optimizer hyperparameters")
        if self.clip_norm is not None and self.clip_norm <= 0:
            raise ConfigError("clip_norm must be positive when set")
        if self.length_pool < 1:
            raise ConfigError("length_pool must be at least 1")


class AdamW:
    """Adam with decoupled weight decay over a name -> Tensor mapping."""

    def __init__(self, params: dict, lr: float, beta1=0.9, beta2=0.999, eps=1e-8, weight_decay=0.0, clip_norm=None):
        self.params = params
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.weight_decay = weight_decay
        self.clip_norm = clip_norm
        self.t = 0
        self.m = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in params.items()}

    def zero_grad(self) -> None:
        nx.zero_grad(self.params.values())

    def grad_norm(self) -> float:
        return math.sqrt(sum(float((p.grad * p.grad).sum()) for p in self.params.values() if p.grad is not None))

    def step(self) -> None:
        self.t += 1
        factor = 1.0
        if self.clip_norm is not None:
            norm = self.grad_norm()
            if norm > self.clip_norm:
                factor = self.clip_norm / norm
        bc1 = 1.0 - self.beta1**self.t
        bc2 = 1.0 - self.beta2**self.t
        for k, p in self.params.items():
            if self.weight_decay:
                p.data = p.data * (1.0 - self.lr * self.weight_decay)
            if p.grad is None:
                continue
            g = p.grad * factor
            self.m[k] = self.beta1 * self.m[k] + (1.0 - self.beta1) * g
            self.v[k] = self.beta2 * self.v[k] + (1.0 - self.beta2) * g * g
            p.data = p.data - self.lr * (self.m[k] / bc1) / (np.sqrt(self.v[k] / bc2) + self.eps)

    def state_dict(self) -> dict:
        return {"t": self.t, "m": dict(self.m), "v": dict(self.v)}

    def load_state_dict(self, state: dict) -> None:
        self.t = int(state.get("t", 0))
        for slot in ("m", "v"):
            stored = state.get(slot, {})
            target = getattr(self, slot)
            for k in target:
                if k in stored:
                    target[k] = np.asarray(stored[k], dtype=np.float64).reshape(target[k].shape)


def make_optimizer(model: Model, cfg: TrainConfig) -> AdamW:
    return AdamW(model.parameters(), cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.adam_eps, cfg.weight_decay, cfg.clip_norm)


# --- rewards and losses ----------------------------------------------------------------


def _log_probs(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def reward(probs_o, label: int) -> float:
    """R = sum_c y_c log p_c, the negated cross-entropy of the prediction (<= 0).

    Accepts a probability vector (array or Tensor); the result is a plain float
    so no gradient flows through it.
    """
    p = probs_o.data if isinstance(probs_o, Tensor) else np.asarray(probs_o, dtype=np.float64)
    if not 0 <= label < p.shape[-1]:
        raise IndexError(f"label {label} out of range for {p.shape[-1]} classes")
    return float(np.log(p[label])) if p[label] > 0 else -math.inf


def rewards_from_logits(logits: np.ndarray, labels: np.ndarray) -> np.ndarray:
    return _log_probs(logits)[np.arange(len(labels)), labels]


def scst_loss(R, R_b, logp_l: Tensor, logp_r: Tensor) -> Tensor:
    """-(R - R_b) * (log p(l) + log p(r)), averaged when given per-example arrays."""
    adv = np.asarray(R, dtype=np.float64) - np.asarray(R_b, dtype=np.float64)
    terms = nx.mul(nx.add(logp_l, logp_r), Tensor(-adv))
    return terms if terms.ndim == 0 else nx.mean_over_axis(terms)


@dataclass
class TrainStepReport:
    R: np.ndarray
    R_b: np.ndarray
    advantage: np.ndarray
    policy_loss: float
    supervised_loss: float
    sampled_spans: list
    greedy_spans: list
    accuracy: float

    @property
    def loss(self) -> float:
        return self.policy_loss + self.supervised_loss


def _labels(batch: Sequence[Example]) -> np.ndarray:
    return np.array([ex.label for ex in batch], dtype=np.int64)


def hard_train_step(batch: Sequence[Example], model: Model, config: TrainConfig, rng: np.random.Generator, optimizer: Optional[AdamW] = None) -> TrainStepReport:
    """One self-critical update on ``batch``; returns the audit record."""
    if not batch:
        raise DataError("empty training batch")
    labels = _labels(batch)
    optimizer = optimizer or make_optimizer(model, config)
    optimizer.zero_grad()
    reps = encode_batch(model.pack(batch), model.encoder, rng)
    sampled = head_forward(model, reps, "hard", "sampled", rng)
    with nx.no_grad():
        greedy = head_forward(model, reps, "hard", "greedy")
    R = rewards_from_logits(sampled.logits.data, labels)
    R_b = rewards_from_logits(greedy.logits.data, labels)
    adv = R - R_b
    policy = scst_loss(R, R_b, sampled.logp_l, sampled.logp_r)
    supervised = nx.cross_entropy(sampled.logits, labels)
    total = nx.add(nx.scale(policy, config.policy_weight), nx.scale(supervised, config.supervised_weight))
    nx.backward(total)
    optimizer.step()
    acc = float((np.argmax(greedy.logits.data, axis=1) == labels).mean())
    return TrainStepReport(
        R, R_b, adv, policy.item(), supervised.item(),
        list(zip(sampled.l.tolist(), sampled.r.tolist())),
        list(zip(greedy.l.tolist(), greedy.r.tolist())),
        acc,
    )  # fmt: skip


def supervised_train_step(batch: Sequence[Example], model: Model, config: TrainConfig, rng=None, optimizer: Optional[AdamW] = None) -> TrainStepReport:
    """Cross-entropy update for the soft or original head."""
    if not batch:
        raise DataError("empty training batch")
    labels = _labels(batch)
    optimizer = optimizer or make_optimizer(model, config)
    optimizer.zero_grad()
    reps = encode_batch(model.pack(batch), model.encoder, rng)
    out = head_forward(model, reps, model.head)
    loss = nx.cross_entropy(out.logits, labels)
    nx.backward(nx.scale(loss, config.supervised_weight))
    optimizer.step()
    zeros = np.zeros(len(batch))
    acc = float((np.argmax(out.logits.data, axis=1) == labels).mean())
    return TrainStepReport(zeros, zeros, zeros, 0.0, loss.item(), [], [], acc)


soft_train_step = supervised_train_step
original_train_step = supervised_train_step


def train_step(batch, model: Model, config: TrainConfig, rng, optimizer: AdamW) -> TrainStepReport:
    if model.head == "hard":
        return hard_train_step(batch, model, config, rng, optimizer)
    return supervised_train_step(batch, model, config, rng, optimizer)


# --- epoch loop ---------------------------------------------------------------------------


@dataclass
class EpochRecord:
    epoch: int
    split: str
    loss: float
    accuracy: float
    mean_advantage: float
    mean_span_length: float

    def to_json(self) -> str:
        return json.dumps(asdict(self))


def epoch_batches(lengths: np.ndarray, batch_size: int, rng: np.random.Generator, pool: int = 1) -> list:
    """Shuffled mini-batches, optionally grouped by length.

    The seeded permutation is cut into pools of ``pool`` batches, each pool is
    sorted by length and split, and the resulting batches are shuffled.  Length
    grouping cuts padding but makes batches less varied, which slows learning
    on the synthetic corpus, so it is off by default.
    """
    order = rng.permutation(len(lengths))
    batches = []
    step = batch_size * pool
    for i in range(0, len(order), step):
        chunk = order[i : i + step]
        chunk = chunk[np.argsort(lengths[chunk], kind="stable")]
        batches.extend(chunk[j : j + batch_size] for j in range(0, len(chunk), batch_size))
    return [batches[k] for k in rng.permutation(len(batches))]


def accuracy(model: Model, examples: Sequence[Example]) -> float:
    return float((infer(model, examples).predicted == _labels(examples)).mean())


def _snapshot(model: Model) -> dict:
    return {k: v.data.copy() for k, v in model.all_tensors().items()}


def _restore(model: Model, snap: dict) -> None:
    for k, v in model.all_tensors().items():
        v.data = snap[k].copy()


def train(
    train_set: Sequence[Example],
    dev_set: Sequence[Example],
    config: TrainConfig,
    model: Optional[Model] = None,
    encoder_kw: Optional[dict] = None,
    start_epoch: int = 0,
    optimizer_state: Optional[dict] = None,
    history_path=None,
    on_epoch=None,
) -> tuple:
    """Run ``config.epochs`` epochs of shuffled mini-batches.

    Each epoch ``k`` draws its permutation and sampling noise from a
    generator seeded with ``(seed, k)``, so a run resumed at ``start_epoch``
    repeats the uninterrupted run exactly.  Returns ``(model, history,
    optimizer)``; with ``keep_best`` the model holds the best-dev weights.
    """
    config.validate()
    if not train_set or not dev_set:
        raise DataError("training and development splits must be non-empty")
    if model is None:
        vocab = build_vocabulary(train_set, categories=_categories(dev_set))
        model = Model.create(vocab, config.head, config.seed, **(encoder_kw or {}))
    elif model.head != config.head:
        model.head = config.head
    opt = make_optimizer(model, config)
    if optimizer_state:
        opt.load_state_dict(optimizer_state)
    history: list = []
    sink = None
    if history_path is not None:
        Path(history_path).parent.mkdir(parents=True, exist_ok=True)
        sink = open(history_path, "a" if start_epoch else "w", encoding="utf-8")
    best = (-1.0, None)
    lengths = np.array([len(ex.tokens) for ex in train_set])
    try:
        for epoch in range(start_epoch, start_epoch + config.epochs):
            rng = np.random.default_rng([config.seed, epoch])
            losses, advs, lens, accs, sizes = [], [], [], [], []
            for idx in epoch_batches(lengths, config.batch_size, rng, config.length_pool):
                batch = [train_set[j] for j in idx]
                rep = train_step(batch, model, config, rng, opt)
                losses.append(rep.loss)
                accs.append(rep.accuracy)
                sizes.append(len(batch))
                advs.extend(rep.advantage.tolist())
                lens.extend(r - l + 1 for l, r in rep.sampled_spans)
            w = np.asarray(sizes, dtype=float)
            train_rec = EpochRecord(
                epoch, "train", float(np.average(losses, weights=w)), float(np.average(accs, weights=w)),
                float(np.mean(advs)) if model.head == "hard" else 0.0,
                float(np.mean(lens)) if lens else 0.0,
            )  # fmt: skip
            dev_inf = infer(model, dev_set)
            dev_acc = float((dev_inf.predicted == _labels(dev_set)).mean())
            dev_lens = [r - l + 1 for l, r in dev_inf.spans]
            dev_labels = _labels(dev_set)
            dev_loss = float(-np.log(dev_inf.probs[np.arange(len(dev_set)), dev_labels]).mean())
            dev_rec = EpochRecord(epoch, "dev", dev_loss, dev_acc, 0.0, float(np.mean(dev_lens)) if dev_lens else 0.0)
            for rec in (train_rec, dev_rec):
                history.append(rec)
                if sink:
                    sink.write(rec.to_json() + "\n")
            log.info("epoch %d train loss %.4f acc %.3f | dev acc %.3f", epoch, train_rec.loss, train_rec.accuracy, dev_acc)
            if config.keep_best and dev_acc > best[0]:
                best = (dev_acc, _snapshot(model))
            if on_epoch:
                on_epoch(epoch, model, opt)
    finally:
        if sink:
            sink.close()
    if config.keep_best and best[1] is not None:
        _restore(model, best[1])
    return model, history, opt


def _categories(examples: Sequence[Example]) -> set:
    return {ex.aspect.label for ex in examples if isinstance(ex.aspect, CategoryAspect)}
