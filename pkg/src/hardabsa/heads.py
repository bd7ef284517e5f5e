"""
Prediction heads over the sentence rows ``T_S`` of the encoder output.

* soft selection: attention weights over all sentence words, weighted sum;
* hard selection: a start position drawn from ``softmax(T_S s)``, then an end
  position drawn from ``softmax(T_S[l:] e)``, and the mean of rows l..r;
* original: the ``[CLS]`` row.

Each head has its own polarity classifier ``softmax(W2 g + b)``.  Snippet
ends are inclusive: a selection (l, r) covers words l, l+1, ..., r.

Single-example functions mirror the notation directly; the ``batch_*``
variants compute the same quantities over padded batches with masks and
are what training and evaluation use.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import numerics as nx
from .encoder import MASK_VALUE
from .errors import ContractError, DimensionError
from .numerics import Tensor

HEADS = ("soft", "hard", "original")


@dataclass
class HeadParams:
    """Selection parameters plus one classifier per head.

    ``tensors`` keys: ``v1`` [H], ``W1`` [H, H], ``s`` [H], ``e`` [H] and
    ``<head>.W2`` [C, H], ``<head>.b`` [C] for every head name.
    """

    hidden: int
    n_classes: int
    tensors: dict = field(default_factory=dict)

    def __getitem__(self, name: str) -> Tensor:
        return self.tensors[name]

    def classifier(self, head: str) -> tuple:
        return self.tensors[f"{head}.W2"], self.tensors[f"{head}.b"]

    def names_for(self, head: str) -> list:
        own = {"soft": ["v1", "W1"], "hard": ["s", "e"], "original": []}[head]
        return [*own, f"{head}.W2", f"{head}.b"]


def head_shapes(hidden: int, n_classes: int) -> dict:
    shapes = {"v1": (hidden,), "W1": (hidden, hidden), "s": (hidden,), "e": (hidden,)}
    for h in HEADS:
        shapes[f"{h}.W2"] = (n_classes, hidden)
        shapes[f"{h}.b"] = (n_classes,)
    return shapes


def init_head_params(hidden: int, n_classes: int = 3, seed: int = 0, std: float = 0.02) -> HeadParams:
    rng = np.random.default_rng(seed)
    tensors = {}
    for name, shape in head_shapes(hidden, n_classes).items():
        data = np.zeros(shape) if name.endswith(".b") else rng.normal(0.0, std, size=shape)
        tensors[name] = Tensor(data, requires_grad=True)
    return HeadParams(hidden, n_classes, tensors)


# --- result types --------------------------------------------------------------


@dataclass
class SoftSelection:
    alpha: Tensor  # [N]
    g: Tensor  # [H]


@dataclass
class SnippetSelection:
    l: int
    r: int  # inclusive
    logp_l: Tensor  # scalar
    logp_r: Tensor  # scalar
    mode: str

    @property
    def span(self) -> tuple:
        return (self.l, self.r)


@dataclass
class Prediction:
    logits: Tensor
    probs: Tensor
    predicted_class: int


# --- single-example heads -----------------------------------------------------------


def _check_rows(ts: Tensor, hidden: Optional[int] = None) -> None:
    if ts.ndim != 2 or ts.shape[0] < 1:
        raise DimensionError(f"expected sentence rows [N>=1, H], got {ts.shape}")
    if hidden is not None and ts.shape[1] != hidden:
        raise DimensionError(f"row width {ts.shape[1]} does not match hidden size {hidden}")


def soft_select(ts: Tensor, params: HeadParams) -> SoftSelection:
    """alpha = softmax(v1 . tanh(W1 T_S^T)), g = alpha T_S."""
    _check_rows(ts, params.hidden)
    scores = nx.matmul(nx.tanh(nx.matmul(ts, nx.transpose(params["W1"]))), params["v1"])
    alpha = nx.softmax(scores)
    return SoftSelection(alpha, nx.matmul(alpha, ts))


def classify(g: Tensor, W2: Tensor, b: Tensor) -> Prediction:
    """Class distribution softmax(W2 g + b); ties go to the lowest class index."""
    logits = nx.add(nx.matmul(W2, g), b)
    probs = nx.softmax(logits)
    return Prediction(logits, probs, int(np.argmax(probs.data)))


def span_distribution_start(ts: Tensor, s: Tensor) -> Tensor:
    _check_rows(ts)
    return nx.softmax(nx.matmul(ts, s))


def span_distribution_end(ts_sliced: Tensor, e: Tensor) -> Tensor:
    """Distribution over the sliced rows; index j means absolute position l + j."""
    if ts_sliced.ndim != 2 or ts_sliced.shape[0] == 0:
        raise ContractError("end distribution needs a non-empty slice")
    return nx.softmax(nx.matmul(ts_sliced, e))


def sample_index(probs: np.ndarray, u) -> np.ndarray:
    """Inverse-CDF draw along the last axis for uniforms ``u`` in [0, 1).

    Zero-probability entries are never returned.
    """
    probs = np.asarray(probs)
    c = np.cumsum(probs, axis=-1)
    target = np.asarray(u)[..., None] * c[..., -1:]
    idx = (c <= target).sum(axis=-1)
    last = probs.shape[-1] - 1 - np.argmax((probs > 0)[..., ::-1], axis=-1)
    return np.minimum(idx, last)


def select_span(ts: Tensor, params: HeadParams, mode: str = "greedy", rng: Optional[np.random.Generator] = None) -> SnippetSelection:
    """Pick (l, r) with l <= r, sequentially: start first, end within T_S[l:]."""
    _check_rows(ts, params.hidden)
    if mode not in ("sampled", "greedy"):
        raise ContractError(f"unknown selection mode {mode!r}")
    if mode == "sampled" and rng is None:
        raise ContractError("sampled mode needs an rng")
    logp_start = nx.log_softmax(nx.matmul(ts, params["s"]))
    p_start = np.exp(logp_start.data)
    l = int(np.argmax(p_start)) if mode == "greedy" else int(sample_index(p_start, rng.random()))
    logp_end = nx.log_softmax(nx.matmul(nx.take(ts, slice(l, None)), params["e"]))
    p_end = np.exp(logp_end.data)
    off = int(np.argmax(p_end)) if mode == "greedy" else int(sample_index(p_end, rng.random()))
    return SnippetSelection(l, l + off, nx.take(logp_start, l), nx.take(logp_end, off), mode)


def pool_snippet(ts: Tensor, selection: SnippetSelection) -> Tensor:
    """Mean of rows l..r inclusive."""
    if not 0 <= selection.l <= selection.r < ts.shape[0]:
        raise ContractError(f"span {selection.span} invalid for {ts.shape[0]} rows")
    return nx.mean_over_axis(nx.take(ts, slice(selection.l, selection.r + 1)), axis=0)


def cls_pool(full: Tensor) -> Tensor:
    if full.ndim != 2 or full.shape[0] < 1:
        raise DimensionError(f"expected [L>=1, H], got {full.shape}")
    return nx.take(full, 0)


# --- batched heads -----------------------------------------------------------------


def batch_soft_select(ts: Tensor, mask: np.ndarray, params: HeadParams) -> tuple:
    """Returns (alpha [B, N], g [B, H]); masked positions get zero weight."""
    scores = nx.matmul(nx.tanh(nx.matmul(ts, nx.transpose(params["W1"]))), params["v1"])
    alpha = nx.softmax(nx.masked_fill(scores, ~mask, MASK_VALUE))
    g = nx.reshape(nx.matmul(nx.reshape(alpha, (alpha.shape[0], 1, alpha.shape[1])), ts), (ts.shape[0], ts.shape[2]))
    return alpha, g


def batch_start_logprobs(ts: Tensor, mask: np.ndarray, s: Tensor) -> Tensor:
    return nx.log_softmax(nx.masked_fill(nx.matmul(ts, s), ~mask, MASK_VALUE))


def batch_end_logprobs(ts: Tensor, mask: np.ndarray, e: Tensor, starts: np.ndarray) -> Tensor:
    """Log-probabilities over absolute positions; entries before the start are masked."""
    nmax = ts.shape[1]
    allowed = mask & (np.arange(nmax)[None, :] >= np.asarray(starts)[:, None])
    return nx.log_softmax(nx.masked_fill(nx.matmul(ts, e), ~allowed, MASK_VALUE))


def choose(logp: np.ndarray, mode: str, rng: Optional[np.random.Generator]) -> np.ndarray:
    """Per-row argmax (lowest index on ties) or a sampled index."""
    if mode == "greedy":
        return np.argmax(logp, axis=-1)
    probs = np.exp(logp)
    return sample_index(probs, rng.random(logp.shape[0]))


def batch_select(ts: Tensor, mask: np.ndarray, params: HeadParams, mode: str, rng=None) -> tuple:
    """Returns (l, r, logp_l [B], logp_r [B]) with absolute inclusive ends."""
    rows = np.arange(ts.shape[0])
    lp_start = batch_start_logprobs(ts, mask, params["s"])
    l = choose(lp_start.data, mode, rng)
    lp_end = batch_end_logprobs(ts, mask, params["e"], l)
    r = choose(lp_end.data, mode, rng)
    return l, r, nx.take(lp_start, (rows, l)), nx.take(lp_end, (rows, r))


def span_weights(l: np.ndarray, r: np.ndarray, nmax: int) -> np.ndarray:
    pos = np.arange(nmax)[None, :]
    inside = (pos >= np.asarray(l)[:, None]) & (pos <= np.asarray(r)[:, None])
    return inside / inside.sum(axis=1, keepdims=True)


def batch_pool(ts: Tensor, l: np.ndarray, r: np.ndarray) -> Tensor:
    """Mean of rows l..r for every batch row: [B, N, H] -> [B, H]."""
    w = span_weights(l, r, ts.shape[1])
    return nx.reshape(nx.matmul(Tensor(w[:, None, :]), ts), (ts.shape[0], ts.shape[2]))


def batch_logits(g: Tensor, W2: Tensor, b: Tensor) -> Tensor:
    return nx.add(nx.matmul(g, nx.transpose(W2)), b)
