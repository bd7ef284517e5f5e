"""
Datasets: the record format, statistics, multi-aspect partitioning, balanced
multi-aspect synthesis by sentence concatenation, and a template generator
whose opinion snippets are known exactly.

Record format (one JSON object per line, spans 0-based inclusive)::

    {"tokens": ["the", "food", "is", "good"],
     "aspect": {"kind": "term", "span": [1, 1]},
     "polarity": "positive",
     "sentence_id": "s1",
     "gold_snippet": [3, 3]}

``aspect`` may instead be ``{"kind": "category", "label": "food"}`` and
``gold_snippet`` is optional.
"""

from __future__ import annotations

import json
from collections import Counter
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, NamedTuple, Optional, Sequence, Union

import numpy as np

from .errors import DataError, QuotaError

POLARITIES = ("positive", "negative", "neutral")
POLARITY_CODES = {"P": "positive", "N": "negative", "Nu": "neutral"}
CODE_OF = {v: k for k, v in POLARITY_CODES.items()}

# Combination code -> polarity codes of its component sentences.
COMBINATIONS = {
    "2P": ("P", "P"),
    "2N": ("N", "N"),
    "2Nu": ("Nu", "Nu"),
    "PN": ("P", "N"),
    "PNu": ("P", "Nu"),
    "NNu": ("N", "Nu"),
    "3P": ("P", "P", "P"),
    "3N": ("N", "N", "N"),
    "3Nu": ("Nu", "Nu", "Nu"),
    "2P1N": ("P", "P", "N"),
    "1P2N": ("P", "N", "N"),
    "PNNu": ("P", "N", "Nu"),
}

# Single-aspect pass-through and multi-aspect combination counts of the
# constructed restaurant training set.
DEFAULT_QUOTAS = {"P": 297, "N": 297, "Nu": 297, **{code: 300 for code in COMBINATIONS}}


@dataclass(frozen=True)
class TermAspect:
    start: int
    end: int

    kind = "term"


@dataclass(frozen=True)
class CategoryAspect:
    label: str

    kind = "category"


Aspect = Union[TermAspect, CategoryAspect]


@dataclass(frozen=True)
class Example:
    tokens: tuple
    aspect: Aspect
    polarity: str
    sentence_id: str
    gold_snippet: Optional[tuple] = None

    @property
    def label(self) -> int:
        return POLARITIES.index(self.polarity)

    @property
    def aspect_tokens(self) -> tuple:
        if isinstance(self.aspect, TermAspect):
            return self.tokens[self.aspect.start : self.aspect.end + 1]
        return (self.aspect.label,)

    @property
    def aspect_text(self) -> str:
        return " ".join(self.aspect_tokens)

    def validate(self) -> None:
        n = len(self.tokens)
        if n == 0:
            raise DataError(f"{self.sentence_id}: empty sentence")
        if not all(isinstance(t, str) and t for t in self.tokens):
            raise DataError(f"{self.sentence_id}: tokens must be non-empty strings")
        if self.polarity not in POLARITIES:
            raise DataError(f"{self.sentence_id}: unknown polarity {self.polarity!r}")
        if isinstance(self.aspect, TermAspect):
            _check_span((self.aspect.start, self.aspect.end), n, f"{self.sentence_id}: aspect span")
        elif not isinstance(self.aspect, CategoryAspect) or not self.aspect.label:
            raise DataError(f"{self.sentence_id}: bad aspect {self.aspect!r}")
        if self.gold_snippet is not None:
            _check_span(self.gold_snippet, n, f"{self.sentence_id}: gold_snippet")

    def to_record(self) -> dict:
        if isinstance(self.aspect, TermAspect):
            aspect = {"kind": "term", "span": [self.aspect.start, self.aspect.end]}
        else:
            aspect = {"kind": "category", "label": self.aspect.label}
        rec = {
            "tokens": list(self.tokens),
            "aspect": aspect,
            "polarity": self.polarity,
            "sentence_id": self.sentence_id,
        }
        if self.gold_snippet is not None:
            rec["gold_snippet"] = list(self.gold_snippet)
        return rec

    @classmethod
    def from_record(cls, rec: dict) -> "Example":
        if not isinstance(rec, dict):
            raise DataError("record is not an object")
        missing = {"tokens", "aspect", "polarity", "sentence_id"} - set(rec)
        if missing:
            raise DataError(f"missing fields {sorted(missing)}")
        tokens = rec["tokens"]
        if not isinstance(tokens, list):
            raise DataError("tokens must be a list of strings")
        asp = rec["aspect"]
        if not isinstance(asp, dict):
            raise DataError("aspect must be an object")
        if asp.get("kind") == "term":
            span = asp.get("span")
            if not (isinstance(span, list) and len(span) == 2 and all(isinstance(i, int) for i in span)):
                raise DataError(f"term aspect needs an integer span pair, got {span!r}")
            aspect: Aspect = TermAspect(span[0], span[1])
        elif asp.get("kind") == "category":
            label = asp.get("label")
            if not isinstance(label, str):
                raise DataError("category aspect needs a string label")
            aspect = CategoryAspect(label)
        else:
            raise DataError(f"unknown aspect kind {asp.get('kind')!r}")
        gold = rec.get("gold_snippet")
        if gold is not None:
            if not (isinstance(gold, list) and len(gold) == 2 and all(isinstance(i, int) for i in gold)):
                raise DataError(f"gold_snippet must be an integer pair, got {gold!r}")
            gold = tuple(gold)
        ex = cls(tuple(tokens), aspect, rec["polarity"], str(rec["sentence_id"]), gold)
        ex.validate()
        return ex


def _check_span(span, n: int, what: str) -> None:
    start, end = span
    if start > end:
        raise DataError(f"{what} {tuple(span)} ends before it starts")
    if start < 0 or end >= n:
        raise DataError(f"{what} {tuple(span)} outside sentence of length {n}")


# --- statistics --------------------------------------------------------------


@dataclass(frozen=True)
class DatasetStats:
    all: int
    p: int
    n: int
    nu: int

    @classmethod
    def of(cls, examples: Iterable[Example]) -> "DatasetStats":
        c = Counter(ex.polarity for ex in examples)
        p, n, nu = c["positive"], c["negative"], c["neutral"]
        return cls(p + n + nu, p, n, nu)


def format_stats_table(rows: Sequence[tuple]) -> str:
    """Aligned text table with columns Task | Dataset | All | P | N | Nu.

    ``rows`` holds ``(task, dataset_name, DatasetStats)`` triples.
    """
    header = ("Task", "Dataset", "All", "P", "N", "Nu")
    body = [(t, name, str(s.all), str(s.p), str(s.n), str(s.nu)) for t, name, s in rows]
    widths = [max(len(r[i]) for r in [header, *body]) for i in range(len(header))]
    lines = []
    for r in [header, *body]:
        cells = [r[0].ljust(widths[0]), r[1].ljust(widths[1])]
        cells += [c.rjust(w) for c, w in zip(r[2:], widths[2:])]
        lines.append(" | ".join(cells))
    lines.insert(1, "-+-".join("-" * w for w in widths))
    return "\n".join(lines) + "\n"


# --- file I/O ------------------------------------------------------------------


def check_sentence_groups(examples: Sequence[Example]) -> None:
    seen: dict = {}
    for ex in examples:
        prev = seen.setdefault(ex.sentence_id, ex.tokens)
        if prev != ex.tokens:
            raise DataError(f"sentence_id {ex.sentence_id!r} is shared by different token lists")


def load_dataset(path) -> tuple:
    """Read a line-delimited dataset file; returns ``(examples, DatasetStats)``."""
    path = Path(path)
    if not path.is_file():
        raise DataError(f"no dataset file at {path}")
    examples = []
    with path.open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as err:
                raise DataError(f"{path}:{lineno}: cannot parse record ({err.msg})") from None
            try:
                examples.append(Example.from_record(rec))
            except DataError as err:
                raise DataError(f"{path}:{lineno}: {err}") from None
    check_sentence_groups(examples)
    return examples, DatasetStats.of(examples)


def save_dataset(path, examples: Iterable[Example]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as fh:
        for ex in examples:
            fh.write(json.dumps(ex.to_record(), separators=(",", ":")) + "\n")


# --- multi-aspect partitioning ---------------------------------------------------


class MultiAspectCategory(NamedTuple):
    polarity_mix: str  # "same" | "diff"
    size_class: str  # "two_three" | "more"


CATEGORY_ORDER = tuple(
    MultiAspectCategory(mix, size) for mix in ("same", "diff") for size in ("two_three", "more")
)


def group_by_sentence(examples: Iterable[Example]) -> dict:
    groups: dict = {}
    for ex in examples:
        groups.setdefault(ex.sentence_id, []).append(ex)
    return groups


def classify_group(polarities: Sequence[str]) -> Optional[MultiAspectCategory]:
    if len(polarities) < 2:
        return None
    mix = "same" if len(set(polarities)) == 1 else "diff"
    size = "two_three" if len(polarities) <= 3 else "more"
    return MultiAspectCategory(mix, size)


def partition_multi_aspect(examples: Iterable[Example]) -> dict:
    """Map each multi-aspect category to the examples of its sentences.

    Sentences with two or three aspects are ``two_three``, four or more are
    ``more``; single-aspect sentences are left out.
    """
    out = {cat: [] for cat in CATEGORY_ORDER}
    for group in group_by_sentence(examples).values():
        cat = classify_group([ex.polarity for ex in group])
        if cat is not None:
            out[cat].extend(group)
    return out


def category_of(examples: Iterable[Example]) -> dict:
    """sentence_id -> MultiAspectCategory for every multi-aspect sentence."""
    out = {}
    for sid, group in group_by_sentence(examples).items():
        cat = classify_group([ex.polarity for ex in group])
        if cat is not None:
            out[sid] = cat
    return out


def format_partition_table(partition: dict) -> str:
    """Counts laid out as Same 2-3 | Same More | Same Total | Diff 2-3 | Diff More | Diff Total | Total."""
    n = {cat: len(v) for cat, v in partition.items()}
    same = (n[CATEGORY_ORDER[0]], n[CATEGORY_ORDER[1]])
    diff = (n[CATEGORY_ORDER[2]], n[CATEGORY_ORDER[3]])
    header = ("Same 2-3", "Same More", "Same Total", "Diff 2-3", "Diff More", "Diff Total", "Total")
    vals = (*same, sum(same), *diff, sum(diff), sum(same) + sum(diff))
    widths = [max(len(h), len(str(v))) for h, v in zip(header, vals)]
    return (
        " | ".join(h.rjust(w) for h, w in zip(header, widths))
        + "\n"
        + " | ".join(str(v).rjust(w) for v, w in zip(vals, widths))
        + "\n"
    )


# --- concatenation synthesis -------------------------------------------------------


def concatenate(parts: Sequence[Example], sentence_id: str) -> list:
    """Join single-aspect sentences into one sentence, shifting spans by the preceding lengths."""
    tokens: list = []
    out = []
    for part in parts:
        off = len(tokens)
        tokens.extend(part.tokens)
        aspect = part.aspect
        if isinstance(aspect, TermAspect):
            aspect = TermAspect(aspect.start + off, aspect.end + off)
        gold = None if part.gold_snippet is None else (part.gold_snippet[0] + off, part.gold_snippet[1] + off)
        out.append((aspect, part.polarity, gold))
    tokens_t = tuple(tokens)
    return [Example(tokens_t, a, p, sentence_id, g) for a, p, g in out]


def single_aspect_pools(examples: Iterable[Example]) -> dict:
    """Polarity -> single-aspect examples, keeping input order."""
    pools = {p: [] for p in POLARITIES}
    for group in group_by_sentence(examples).values():
        if len(group) == 1:
            pools[group[0].polarity].append(group[0])
    return pools


def _draw_distinct(pools: dict, codes: Sequence[str], rng: np.random.Generator, combo: str, tries: int = 50) -> list:
    need = Counter(codes)
    for code, k in need.items():
        have = len(pools[POLARITY_CODES[code]])
        if have < k:
            raise QuotaError(
                f"combination {combo} needs {k} distinct {POLARITY_CODES[code]} sentences, only {have} available"
            )
    for _ in range(tries):
        parts = []
        for code, k in need.items():
            pool = pools[POLARITY_CODES[code]]
            parts.extend(pool[i] for i in rng.choice(len(pool), size=k, replace=False))
        surfaces = [p.aspect_text for p in parts]
        if len(set(surfaces)) == len(surfaces):
            return [parts[i] for i in rng.permutation(len(parts))]
    raise QuotaError(f"combination {combo}: could not draw sentences with distinct aspects")


def synth_multi_train(singles: Sequence[Example], quotas: dict, seed: int = 0) -> list:
    """Build a balanced training set of single- and multi-aspect sentences.

    ``quotas`` maps single codes (``P``, ``N``, ``Nu``) to pass-through counts
    and combination codes (``2P`` ... ``PNNu``) to the number of synthetic
    sentences.  Counts are exact; a shortfall raises ``QuotaError``.
    """
    unknown = set(quotas) - set(POLARITY_CODES) - set(COMBINATIONS)
    if unknown:
        raise QuotaError(f"unknown quota codes {sorted(unknown)}")
    rng = np.random.default_rng(seed)
    pools = single_aspect_pools(singles)
    out: list = []
    for code in POLARITY_CODES:
        k = quotas.get(code, 0)
        pool = pools[POLARITY_CODES[code]]
        if k > len(pool):
            raise QuotaError(f"single {code} needs {k} sentences, only {len(pool)} available")
        out.extend(pool[i] for i in sorted(rng.choice(len(pool), size=k, replace=False)))
    for combo, codes in COMBINATIONS.items():
        for i in range(quotas.get(combo, 0)):
            parts = _draw_distinct(pools, codes, rng, combo)
            out.extend(concatenate(parts, f"synth-{combo}-{i:04d}"))
    return out


def synthesis_report(examples: Sequence[Example]) -> dict:
    """Counts per single polarity code and per combination code."""
    counts = {code: 0 for code in (*POLARITY_CODES, *COMBINATIONS)}
    order = {"P": 0, "N": 1, "Nu": 2}
    by_codes = {tuple(sorted(v, key=order.get)): k for k, v in COMBINATIONS.items()}
    for group in group_by_sentence(examples).values():
        codes = tuple(sorted((CODE_OF[ex.polarity] for ex in group), key=order.get))
        if len(codes) == 1:
            counts[codes[0]] += 1
        elif codes in by_codes:
            counts[by_codes[codes]] += 1
    return counts


# --- synthetic corpus with gold snippets ---------------------------------------------

# Aspect terms grouped by category.  Multi-token terms exercise wider aspect spans.
ASPECT_TERMS = {
    "food": [("food",), ("pizza",), ("pasta",), ("sushi",), ("dessert",), ("bread",), ("steak",)],
    "service": [("service",), ("staff",), ("waiter",), ("waitress",), ("host",)],
    "ambience": [("decor",), ("music",), ("atmosphere",), ("lighting",), ("outdoor", "seating")],
    "price": [("prices",), ("bill",), ("cost",), ("lunch", "special")],
    "drinks": [("wine",), ("coffee",), ("cocktails",), ("beer",), ("wine", "list")],
    "location": [("location",), ("view",), ("parking",), ("neighborhood",)],
}

# Polarity lexicons have pairwise disjoint vocabularies.  "head" words fit any
# aspect; CATEGORY_HEADS holds words that only describe one kind of aspect.
SNIPPET_LEXICON = {
    "positive": {
        "head": ["great", "excellent", "wonderful", "superb", "fantastic", "lovely", "amazing"],
        "mod": ["very", "truly", "really"],
        "phrases": [("worth", "every", "penny"), ("beyond", "our", "hopes")],
    },
    "negative": {
        "head": ["awful", "terrible", "horrible", "dreadful", "disappointing", "poor"],
        "mod": ["rather", "painfully", "utterly"],
        "phrases": [("never", "again"), ("a", "total", "letdown")],
    },
    "neutral": {
        "head": ["average", "ordinary", "standard", "typical", "unremarkable", "acceptable"],
        "mod": ["fairly", "mostly"],
        "phrases": [("as", "expected"), ("nothing", "unusual")],
    },
}

CATEGORY_HEADS = {
    "food": {"positive": ["delicious", "tasty", "flavorful"], "negative": ["bland", "stale", "greasy"], "neutral": ["edible", "plain", "simple"]},
    "service": {"positive": ["attentive", "friendly", "prompt"], "negative": ["rude", "slow", "careless"], "neutral": ["formal", "businesslike", "routine"]},
    "ambience": {"positive": ["cozy", "charming", "elegant"], "negative": ["noisy", "cramped", "gloomy"], "neutral": ["muted", "sparse", "conventional"]},
    "price": {"positive": ["affordable", "cheap", "reasonable"], "negative": ["overpriced", "steep", "exorbitant"], "neutral": ["moderate", "midrange", "unsurprising"]},
    "drinks": {"positive": ["refreshing", "smooth", "crisp"], "negative": ["watery", "flat", "sour"], "neutral": ["mild", "light", "customary"]},
    "location": {"positive": ["convenient", "scenic", "central"], "negative": ["remote", "sketchy", "inaccessible"], "neutral": ["suburban", "residential", "urban"]},
}

VERBS = ["was", "is", "seemed", "looked", "felt"]

DISTRACTORS = [
    ("we", "went", "there", "on", "friday"),
    ("my", "sister", "picked", "the", "place"),
    ("after", "the", "movie"),
    ("on", "our", "first", "visit"),
    ("although", "we", "came", "late"),
    ("last", "week"),
    ("for", "my", "birthday"),
    ("when", "we", "sat", "down"),
]


@dataclass
class SynthConfig:
    n_train: int = 5000
    n_dev: int = 500
    n_test: int = 1000
    multi_fraction: float = 0.4
    category_fraction: float = 0.5
    distractor_rate: float = 0.15
    # share of snippets drawn from the aspect-independent lexicon
    generic_rate: float = 0.1
    # relative weights for sentences with 2, 3, 4, 5 aspects
    size_weights: tuple = (0.45, 0.3, 0.15, 0.1)
    seed: int = 0

    def validate(self) -> None:
        for name in ("n_train", "n_dev", "n_test"):
            if getattr(self, name) <= 0:
                raise DataError(f"{name} must be positive")
        if not 0.0 <= self.multi_fraction <= 1.0:
            raise DataError("multi_fraction must lie in [0, 1]")
        if not 0.0 <= self.generic_rate <= 1.0:
            raise DataError("generic_rate must lie in [0, 1]")
        if not 0.0 <= self.category_fraction <= 1.0:
            raise DataError("category_fraction must lie in [0, 1]")
        if len(self.size_weights) > len(ASPECT_TERMS) - 1:
            raise DataError("too many aspect sizes for the available categories")


@dataclass
class _Unit:
    tokens: tuple
    term_span: tuple
    snippet_span: tuple
    polarity: str
    category: str


class _UnitFactory:
    """Draws single-clause sentences; never repeats an instantiation."""

    def __init__(self, rng: np.random.Generator, distractor_rate: float, generic_rate: float):
        self.rng = rng
        self.distractor_rate = distractor_rate
        self.generic_rate = generic_rate
        self.used: set = set()

    def _pick(self, seq):
        return seq[int(self.rng.integers(len(seq)))]

    def _snippet(self, polarity: str, category: str) -> tuple:
        lex = SNIPPET_LEXICON[polarity]
        if self.rng.random() < self.generic_rate:
            if self.rng.random() < 0.3:
                return self._pick(lex["phrases"])
            head = self._pick(lex["head"])
        else:
            head = self._pick(CATEGORY_HEADS[category][polarity])
        if self.rng.random() < 0.45:
            return (self._pick(lex["mod"]), head)
        return (head,)

    def draw(self, polarity: str, category: str) -> _Unit:
        while True:
            unit = self._compose(polarity, category)
            if unit.tokens not in self.used:
                self.used.add(unit.tokens)
                return unit

    def _compose(self, polarity: str, category: str) -> _Unit:
        term = self._pick(ASPECT_TERMS[category])
        snip = self._snippet(polarity, category)
        verb = self._pick(VERBS)
        form = int(self.rng.integers(4))
        if form == 0:  # the TERM VERB SNIP
            body = [("the",), term, (verb,), snip]
        elif form == 1:  # we thought the TERM VERB SNIP
            body = [("we", "thought", "the"), term, (verb,), snip]
        elif form == 2:  # SNIP TERM here  (opinion before the aspect)
            body = [snip, term, ("here",)]
        else:  # the TERM , which we ordered , VERB SNIP
            body = [("the",), term, (",", "which", "we", "tried", ","), (verb,), snip]
        prefix: tuple = ()
        if self.rng.random() < self.distractor_rate:
            prefix = self._pick(DISTRACTORS) + (",",)
        tokens: list = list(prefix)
        spans = {}
        for piece in body:
            start = len(tokens)
            tokens.extend(piece)
            if piece is term:
                spans["term"] = (start, len(tokens) - 1)
            elif piece is snip:
                spans["snip"] = (start, len(tokens) - 1)
        tokens.append(".")
        return _Unit(tuple(tokens), spans["term"], spans["snip"], polarity, category)


def _unit_example(unit: _Unit, sentence_id: str, as_category: bool) -> Example:
    aspect: Aspect = CategoryAspect(unit.category) if as_category else TermAspect(*unit.term_span)
    return Example(unit.tokens, aspect, unit.polarity, sentence_id, unit.snippet_span)


def _generate_split(n: int, cfg: SynthConfig, factory: _UnitFactory, rng: np.random.Generator, prefix: str) -> list:
    n_multi = int(round(cfg.multi_fraction * n))
    sizes = []
    remaining = n_multi
    weights = np.asarray(cfg.size_weights, dtype=float)
    weights = weights / weights.sum()
    while remaining >= 2:
        k = 2 + int(rng.choice(len(weights), p=weights))
        k = min(k, remaining)
        if remaining - k == 1:
            k -= 1 if k > 2 else -1
        sizes.append(k)
        remaining -= k
    n_single = n - sum(sizes)
    slots = [1] * n_single + sizes
    order = rng.permutation(len(slots))
    categories = list(ASPECT_TERMS)
    out: list = []
    for j, idx in enumerate(order):
        k = slots[idx]
        cats = [categories[i] for i in rng.choice(len(categories), size=k, replace=False)]
        pols = [POLARITIES[int(rng.integers(3))] for _ in range(k)]
        units = [factory.draw(p, c) for p, c in zip(pols, cats)]
        sid = f"{prefix}-{j:05d}"
        parts = [_unit_example(u, sid, rng.random() < cfg.category_fraction) for u in units]
        out.extend(concatenate(parts, sid) if k > 1 else parts)
    return out


def gen_synthetic_corpus(config: Optional[SynthConfig] = None) -> dict:
    """Generate ``{"train", "dev", "test"}`` example lists with gold snippets.

    Each aspect's polarity is carried only by its opinion snippet.  Clause
    instantiations are never reused, so the splits share no clause.
    """
    cfg = config or SynthConfig()
    cfg.validate()
    rng = np.random.default_rng(cfg.seed)
    factory = _UnitFactory(rng, cfg.distractor_rate, cfg.generic_rate)
    return {
        name: _generate_split(n, cfg, factory, rng, name)
        for name, n in (("train", cfg.n_train), ("dev", cfg.n_dev), ("test", cfg.n_test))
    }
