"""Accuracy reports with multi-aspect breakdowns, and snippet scoring against gold spans."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .data import CATEGORY_ORDER, POLARITIES, Example, MultiAspectCategory, partition_multi_aspect
from .errors import ContractError, DataError

MODES = ("three_way", "binary")


@dataclass(frozen=True)
class SnippetScore:
    exact_match: float
    precision: float
    recall: float
    f1: float
    count: int

    def to_record(self) -> dict:
        return {"exact_match": self.exact_match, "precision": self.precision, "recall": self.recall, "f1": self.f1, "count": self.count}


def span_overlap(pred: tuple, gold: tuple) -> tuple:
    """Precision, recall and F1 of one inclusive span against another."""
    pl, pr = pred
    gl, gr = gold
    if pr < pl or gr < gl:
        raise ContractError(f"malformed span pair {pred} / {gold}")
    overlap = max(0, min(pr, gr) - max(pl, gl) + 1)
    p = overlap / (pr - pl + 1)
    r = overlap / (gr - gl + 1)
    f = 0.0 if overlap == 0 else 2 * p * r / (p + r)
    return p, r, f


def score_snippets(selections: Sequence[tuple], gold_spans: Sequence[tuple]) -> SnippetScore:
    """Exact-match rate and example-averaged token-overlap P/R/F1.

    ``selections`` holds ``(l, r)`` pairs or objects with a ``span`` attribute.
    """
    if len(selections) != len(gold_spans):
        raise ContractError(f"{len(selections)} selections but {len(gold_spans)} gold spans")
    if not selections:
        raise ContractError("no spans to score")
    rows = []
    exact = 0
    for sel, gold in zip(selections, gold_spans):
        pred = tuple(getattr(sel, "span", sel))
        gold = tuple(gold)
        exact += pred == gold
        rows.append(span_overlap(pred, gold))
    p, r, f = np.mean(np.asarray(rows), axis=0)
    return SnippetScore(exact / len(rows), float(p), float(r), float(f), len(rows))


@dataclass
class EvalReport:
    mode: str
    classes: tuple
    accuracy: float
    per_class: dict  # polarity -> accuracy (nan when the class is absent)
    breakdown: dict  # MultiAspectCategory -> (accuracy, count)
    confusion: np.ndarray  # rows gold, columns predicted
    snippets: Optional[SnippetScore] = None
    extra: dict = field(default_factory=dict)

    @property
    def count(self) -> int:
        return int(self.confusion.sum())

    def _pooled(self, cats) -> tuple:
        cells = [self.breakdown[c] for c in cats if self.breakdown[c][1]]
        n = sum(k for _, k in cells)
        if n == 0:
            return math.nan, 0
        return sum(a * k for a, k in cells) / n, n

    def same(self) -> tuple:
        return self._pooled([c for c in CATEGORY_ORDER if c.polarity_mix == "same"])

    def diff(self) -> tuple:
        return self._pooled([c for c in CATEGORY_ORDER if c.polarity_mix == "diff"])

    def multi(self) -> tuple:
        return self._pooled(CATEGORY_ORDER)

    def partition_row(self) -> dict:
        """Accuracy columns: Same, Diff 2-3, Diff More, Diff Total, multi-aspect Total."""
        return {
            "Same": self.same()[0],
            "Diff 2-3": self.breakdown[MultiAspectCategory("diff", "two_three")][0],
            "Diff More": self.breakdown[MultiAspectCategory("diff", "more")][0],
            "Diff Total": self.diff()[0],
            "Total": self.multi()[0],
        }

    def format_table(self, name: str = "model") -> str:
        cols = self.partition_row()
        width = max(len(name), 5)
        head = f"{'Model':<{width}} | " + " | ".join(f"{k:>10}" for k in cols)
        row = f"{name:<{width}} | " + " | ".join(f"{_pct(v):>10}" for v in cols.values())
        lines = [head, "-" * len(head), row, "", f"overall accuracy {_pct(self.accuracy)} on {self.count} examples ({self.mode})"]
        lines.append("per class: " + ", ".join(f"{k} {_pct(v)}" for k, v in self.per_class.items()))
        if self.snippets is not None:
            s = self.snippets
            lines.append(f"snippets: exact {s.exact_match:.4f}  P {s.precision:.4f}  R {s.recall:.4f}  F1 {s.f1:.4f}")
        return "\n".join(lines)

    def to_record(self) -> dict:
        rec = {
            "mode": self.mode,
            "classes": list(self.classes),
            "accuracy": self.accuracy,
            "count": self.count,
            "per_class": {k: _nan_to_none(v) for k, v in self.per_class.items()},
            "breakdown": {
                f"{c.polarity_mix}/{c.size_class}": {"accuracy": _nan_to_none(a), "count": n} for c, (a, n) in self.breakdown.items()
            },
            "partitions": {k: _nan_to_none(v) for k, v in self.partition_row().items()},
            "confusion": self.confusion.tolist(),
        }
        if self.snippets is not None:
            rec["snippets"] = self.snippets.to_record()
        rec.update(self.extra)
        return rec

    def write(self, out_dir, stem: str = "report", name: str = "model") -> tuple:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        text, record = out_dir / f"{stem}.txt", out_dir / f"{stem}.json"
        text.write_text(self.format_table(name) + "\n")
        record.write_text(json.dumps(self.to_record(), indent=2, sort_keys=True) + "\n")
        return text, record


def _pct(v: float) -> str:
    return "-" if v is None or math.isnan(v) else f"{100 * v:.2f}"


def _nan_to_none(v):
    return None if v is None or (isinstance(v, float) and math.isnan(v)) else v


def filter_mode(examples: Sequence[Example], mode: str) -> list:
    if mode not in MODES:
        raise ContractError(f"mode must be one of {MODES}, got {mode!r}")
    kept = [e for e in examples if mode == "three_way" or e.polarity != "neutral"]
    if not kept:
        raise DataError(f"no examples left to evaluate in {mode} mode")
    return kept


def report_from_predictions(examples: Sequence[Example], predicted: Sequence[int], mode: str = "three_way", spans=None) -> EvalReport:
    """Score already-filtered examples against predicted class indices.

    Predictions index into ``POLARITIES``; binary mode expects positive/negative only.
    """
    examples = list(examples)
    predicted = np.asarray(predicted, dtype=np.int64)
    if len(examples) != len(predicted):
        raise ContractError(f"{len(examples)} examples but {len(predicted)} predictions")
    if not examples:
        raise DataError("empty evaluation set")
    classes = POLARITIES if mode == "three_way" else POLARITIES[:2]
    c = len(classes)
    gold = np.array([e.label for e in examples])
    if gold.max() >= c or predicted.min() < 0 or predicted.max() >= c:
        raise ContractError(f"labels outside the {c} classes of {mode} mode")
    confusion = np.zeros((c, c), dtype=np.int64)
    np.add.at(confusion, (gold, predicted), 1)
    correct = gold == predicted
    per_class = {}
    for k, name in enumerate(classes):
        n = int(confusion[k].sum())
        per_class[name] = confusion[k, k] / n if n else math.nan
    index = {id(e): i for i, e in enumerate(examples)}
    breakdown = {}
    for cat, members in partition_multi_aspect(examples).items():
        hits = [correct[index[id(e)]] for e in members]
        breakdown[cat] = (float(np.mean(hits)) if hits else math.nan, len(hits))
    snippets = None
    if spans and all(e.gold_snippet is not None for e in examples):
        snippets = score_snippets(spans, [e.gold_snippet for e in examples])
    return EvalReport(mode, tuple(classes), float(correct.mean()), per_class, breakdown, confusion, snippets)


def evaluate(model, examples: Sequence[Example], mode: str = "three_way", head: Optional[str] = None) -> EvalReport:
    """Greedy inference followed by the accuracy report.

    Binary mode drops neutral examples and predicts the more probable of
    positive and negative.
    """
    from .model import infer

    kept = filter_mode(examples, mode)
    inf = infer(model, kept, head=head)
    if mode == "binary":
        predicted = np.argmax(inf.probs[:, :2], axis=1)
    else:
        predicted = inf.predicted
    return report_from_predictions(kept, predicted, mode, spans=inf.spans or None)
