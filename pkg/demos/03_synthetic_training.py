"""Train the three heads on a small synthetic corpus and look at what they select.

Runs in under a minute on one core.  The single-aspect run at the end shows
the span selector recovering gold snippets when no aspect-opinion binding
is needed.
"""

import logging
import tempfile
from pathlib import Path

import numpy as np

from hardabsa.data import SynthConfig, format_partition_table, gen_synthetic_corpus, partition_multi_aspect
from hardabsa.evaluation import evaluate
from hardabsa.model import infer
from hardabsa.trainer import TrainConfig, train
from hardabsa.visualize import render_visualization, write_visualizations

logging.basicConfig(level=logging.INFO, format="%(message)s")

corpus = gen_synthetic_corpus(SynthConfig(n_train=1500, n_dev=200, n_test=300, seed=1))
ex = corpus["train"][0]
print(" ".join(ex.tokens), "|", ex.aspect_text, "->", ex.polarity, "snippet", ex.gold_snippet)
print(format_partition_table(partition_multi_aspect(corpus["test"])))

small = dict(hidden=32, layers=2, heads=4)
models = {}
for head in ("original", "soft", "hard"):
    cfg = TrainConfig(head=head, epochs=4, seed=0)
    models[head], history, _ = train(corpus["train"], corpus["dev"], cfg, encoder_kw=small)

for head, model in models.items():
    rep = evaluate(model, corpus["test"])
    print()
    print(rep.format_table(head))

# what the soft and hard heads look at
probe = next(e for e in corpus["test"] if len(e.tokens) > 10)
soft_out = infer(models["soft"], [probe])
hard_out = infer(models["hard"], [probe])
print()
print(render_visualization(probe, soft_out.alphas[0], soft_out.predicted[0]))
print(render_visualization(probe, hard_out.spans[0], hard_out.predicted[0]))

first = corpus["test"][:5]
picked = infer(models["hard"], first)
out_dir = Path(tempfile.mkdtemp(prefix="hardabsa-viz-"))
paths = write_visualizations(out_dir, first, picked.spans, picked.predicted, "hard", "html")
print("html files in", out_dir, [p.name for p in paths][:2], "...")

# single-aspect sentences only: the opinion snippet is the only polarity-bearing span
singles = gen_synthetic_corpus(SynthConfig(n_train=1500, n_dev=200, n_test=300, multi_fraction=0.0, seed=2))
hard, _, _ = train(singles["train"], singles["dev"], TrainConfig(head="hard", epochs=3), encoder_kw=small)
rep = evaluate(hard, singles["test"])
print()
print(f"single-aspect corpus: accuracy {rep.accuracy:.3f}, snippet F1 {rep.snippets.f1:.3f}, exact {rep.snippets.exact_match:.3f}")
spans = infer(hard, singles["test"][:3]).spans
for e, s in zip(singles["test"][:3], spans):
    print(" ".join(e.tokens), "| gold", e.gold_snippet, "picked", s)
print("mean picked length", np.mean([r - l + 1 for l, r in infer(hard, singles["test"]).spans]))
