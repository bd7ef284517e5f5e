"""Plain-text and self-contained HTML renderings of soft weights and hard snippets."""

from __future__ import annotations

import html
import re
from html.parser import HTMLParser
from pathlib import Path
from typing import Sequence

import numpy as np

from .data import POLARITIES, Example
from .errors import ContractError
from .heads import Prediction, SnippetSelection, SoftSelection

FORMATS = ("text", "html")
_SUFFIX = {"text": "txt", "html": "html"}

# token highlight colours: soft weights in red, hard snippets in blue
_SOFT_RGB = "220,40,40"
_HARD_STYLE = "background-color:rgba(40,100,220,0.35);border-bottom:2px solid rgb(40,100,220)"


def _weights_or_span(head_output, n: int):
    """Normalise a head output to ("soft", weights) or ("hard", (l, r))."""
    if isinstance(head_output, SoftSelection):
        weights = np.asarray(head_output.alpha.data, dtype=np.float64)
    elif isinstance(head_output, SnippetSelection):
        return "hard", _check_span(head_output.span, n)
    elif isinstance(head_output, tuple) and len(head_output) == 2 and all(isinstance(v, (int, np.integer)) for v in head_output):
        return "hard", _check_span(head_output, n)
    else:
        weights = np.asarray(head_output, dtype=np.float64)
    if weights.ndim != 1 or len(weights) != n:
        raise ContractError(f"{weights.shape} weights for {n} tokens")
    if not np.all(np.isfinite(weights)) or weights.min() < 0:
        raise ContractError("soft weights must be finite and non-negative")
    return "soft", weights


def _check_span(span, n: int) -> tuple:
    l, r = (int(v) for v in span)
    if not 0 <= l <= r < n:
        raise ContractError(f"span ({l}, {r}) outside a {n}-token sentence")
    return l, r


def _predicted_class(prediction) -> int:
    if isinstance(prediction, Prediction):
        return int(prediction.predicted_class)
    return int(prediction)


def _escape_text_token(tok: str) -> str:
    # bracket markers are standalone fields, so literal brackets and backslashes get a prefix
    if tok in ("[", "]") or tok.startswith("\\"):
        return "\\" + tok
    return tok


def render_visualization(example: Example, head_output, prediction, format: str = "text") -> str:
    """Render one example with its soft weights or selected snippet.

    ``head_output`` is a ``SoftSelection``, a ``SnippetSelection``, a weight
    vector, or an inclusive ``(l, r)`` pair; ``prediction`` a ``Prediction``
    or a class index.
    """
    if format not in FORMATS:
        raise ContractError(f"format must be one of {FORMATS}, got {format!r}")
    tokens = list(example.tokens)
    kind, payload = _weights_or_span(head_output, len(tokens))
    pred = _predicted_class(prediction)
    if not 0 <= pred < len(POLARITIES):
        raise ContractError(f"predicted class {pred} out of range")
    head = "soft" if kind == "soft" else "hard"
    header = f"id: {example.sentence_id}  aspect: {example.aspect_text}  head: {head}"
    verdict = f"pred: {POLARITIES[pred]}  gold: {example.polarity}  correct: {'yes' if pred == example.label else 'no'}"
    if format == "text":
        return "\n".join([header, _text_body(tokens, kind, payload), verdict]) + "\n"
    return _html_document(tokens, kind, payload, header, verdict)


def _text_body(tokens: Sequence[str], kind: str, payload) -> str:
    if kind == "soft":
        return " ".join(f"{_escape_text_token(t)}:{w:.8f}" for t, w in zip(tokens, payload))
    l, r = payload
    fields = []
    for i, tok in enumerate(tokens):
        if i == l:
            fields.append("[")
        fields.append(_escape_text_token(tok))
        if i == r:
            fields.append("]")
    return " ".join(fields)


def _html_document(tokens: Sequence[str], kind: str, payload, header: str, verdict: str) -> str:
    spans = []
    if kind == "soft":
        top = float(payload.max()) if len(payload) else 0.0
        for tok, w in zip(tokens, payload):
            intensity = w / top if top > 0 else 0.0
            spans.append(
                f'<span class="tok" style="background-color:rgba({_SOFT_RGB},{intensity:.4f})" title="{w:.8f}">{html.escape(tok)}</span>'
            )
    else:
        l, r = payload
        for i, tok in enumerate(tokens):
            style = f' style="{_HARD_STYLE}"' if l <= i <= r else ""
            spans.append(f'<span class="tok"{style}>{html.escape(tok)}</span>')
    return (
        "<!DOCTYPE html>\n"
        '<html><head><meta charset="utf-8"><title>' + html.escape(header) + "</title></head>\n"
        '<body style="font-family:monospace;line-height:2">\n'
        f"<p>{html.escape(header)}</p>\n"
        "<p>" + " ".join(spans) + "</p>\n"
        f"<p>{html.escape(verdict)}</p>\n"
        "</body></html>\n"
    )


class _TokenCollector(HTMLParser):
    def __init__(self):
        super().__init__(convert_charrefs=True)
        self.tokens: list = []
        self._inside = False

    def handle_starttag(self, tag, attrs):
        if tag == "span" and ("class", "tok") in attrs:
            self._inside = True
            self.tokens.append("")

    def handle_endtag(self, tag):
        if tag == "span":
            self._inside = False

    def handle_data(self, data):
        if self._inside:
            self.tokens[-1] += data


def strip_markup(document: str, format: str = "text") -> list:
    """Recover the rendered token sequence from a document."""
    if format == "html":
        parser = _TokenCollector()
        parser.feed(document)
        return parser.tokens
    if format != "text":
        raise ContractError(f"format must be one of {FORMATS}, got {format!r}")
    lines = document.splitlines()
    if len(lines) < 3:
        raise ContractError("not a rendered text document")
    fields = lines[1].split(" ")
    head = lines[0].rsplit("head: ", 1)[-1]
    out = []
    for f in fields:
        if head == "hard" and f in ("[", "]"):
            continue
        if head == "soft":
            f = f.rsplit(":", 1)[0]
        out.append(f[1:] if f.startswith("\\") else f)
    return out


def document_name(example: Example, head: str, format: str) -> str:
    """File name from sentence id, aspect and head, safe for any filesystem."""
    aspect = re.sub(r"[^A-Za-z0-9]+", "-", example.aspect_text).strip("-") or "aspect"
    sid = re.sub(r"[^A-Za-z0-9_.-]+", "-", example.sentence_id)
    if hasattr(example.aspect, "start"):
        aspect = f"{aspect}-{example.aspect.start}"
    return f"{sid}__{aspect}__{head}.{_SUFFIX[format]}"


def write_visualizations(out_dir, examples: Sequence[Example], outputs: Sequence, predictions: Sequence, head: str, format: str = "text") -> list:
    """One document per example under ``out_dir``; returns the written paths."""
    if not len(examples) == len(outputs) == len(predictions):
        raise ContractError("examples, head outputs and predictions must align")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    for ex, out, pred in zip(examples, outputs, predictions):
        path = out_dir / document_name(ex, head, format)
        path.write_text(render_visualization(ex, out, pred, format), encoding="utf-8")
        paths.append(path)
    return paths

