import json
import math
from itertools import product
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hardabsa import numerics as nx
from hardabsa.data import CategoryAspect, Example, MultiAspectCategory, TermAspect
from hardabsa.errors import ContractError, DataError
from hardabsa.evaluation import EvalReport, evaluate, filter_mode, report_from_predictions, score_snippets
from hardabsa.heads import SnippetSelection, SoftSelection
from hardabsa.model import Model
from hardabsa.encoder import build_vocabulary
from hardabsa.visualize import document_name, render_visualization, strip_markup, write_visualizations

GOLDEN = Path(__file__).parent / "golden"
P, N, U = 0, 1, 2


def ex(sid, pol, i=0, n=6):
    return Example(tuple(f"w{k}" for k in range(n)), TermAspect(i, i), pol, sid)


def fixture_six():
    """Six sentences covering every breakdown cell, with hand-set predictions."""
    rows = [
        # sentence, polarities, predictions
        ("a", ["positive"], [P]),
        ("b", ["positive", "positive"], [P, N]),  # same 2-3
        ("c", ["negative", "negative", "negative", "negative"], [N, N, N, U]),  # same more
        ("d", ["positive", "negative"], [P, N]),  # diff 2-3
        ("e", ["neutral", "positive", "negative"], [U, U, N]),  # diff 2-3
        ("f", ["positive", "negative", "neutral", "positive"], [P, P, P, P]),  # diff more
    ]
    examples, preds = [], []
    for sid, pols, pr in rows:
        examples += [ex(sid, p, i) for i, p in enumerate(pols)]
        preds += pr
    return examples, preds


class TestReport:
    def test_hand_computed_breakdown(self):
        examples, preds = fixture_six()
        rep = report_from_predictions(examples, preds)
        assert rep.breakdown[MultiAspectCategory("same", "two_three")] == (0.5, 2)
        assert rep.breakdown[MultiAspectCategory("same", "more")] == (0.75, 4)
        assert rep.breakdown[MultiAspectCategory("diff", "two_three")] == (0.8, 5)
        assert rep.breakdown[MultiAspectCategory("diff", "more")] == (0.5, 4)
        assert rep.accuracy == pytest.approx(11 / 16)
        row = rep.partition_row()
        assert row["Same"] == pytest.approx(4 / 6)
        assert row["Diff Total"] == pytest.approx(6 / 9)
        assert row["Total"] == pytest.approx(10 / 15)

    def test_all_correct_is_diagonal(self):
        examples, _ = fixture_six()
        rep = report_from_predictions(examples, [e.label for e in examples])
        assert rep.accuracy == 1.0
        assert np.count_nonzero(rep.confusion - np.diag(np.diag(rep.confusion))) == 0

    def test_confusion_rows_are_gold_counts(self):
        examples, preds = fixture_six()
        rep = report_from_predictions(examples, preds)
        gold = np.bincount([e.label for e in examples], minlength=3)
        np.testing.assert_array_equal(rep.confusion.sum(axis=1), gold)
        assert rep.per_class["neutral"] == pytest.approx(1 / 2)

    def test_binary_filter(self):
        examples, _ = fixture_six()
        kept = filter_mode(examples, "binary")
        assert all(e.polarity != "neutral" for e in kept)
        assert len(kept) == len(examples) - 2

    def test_binary_on_neutral_only_is_error(self):
        with pytest.raises(DataError):
            filter_mode([ex("a", "neutral")], "binary")

    def test_unknown_mode(self):
        with pytest.raises(ContractError):
            filter_mode([ex("a", "neutral")], "five_way")

    def test_record_and_table(self, tmp_path):
        examples, preds = fixture_six()
        rep = report_from_predictions(examples, preds)
        text, record = rep.write(tmp_path)
        rec = json.loads(record.read_text())
        assert rec["breakdown"]["diff/more"] == {"accuracy": 0.5, "count": 4}
        header = text.read_text().splitlines()[0]
        assert [c.strip() for c in header.split("|")][1:] == ["Same", "Diff 2-3", "Diff More", "Diff Total", "Total"]

    def test_empty_breakdown_renders_dash(self):
        rep = report_from_predictions([ex("a", "positive")], [P])
        assert math.isnan(rep.diff()[0])
        assert "-" in rep.format_table()
        assert json.loads(json.dumps(rep.to_record()))["partitions"]["Same"] is None

    @settings(max_examples=30, deadline=None)
    @given(st.lists(st.tuples(st.lists(st.integers(0, 2), min_size=1, max_size=6), st.integers(0, 2 ** 31)), min_size=1, max_size=15))
    def test_breakdown_recombines(self, groups):
        examples, preds = [], []
        for g, (labels, seed) in enumerate(groups):
            rng = np.random.default_rng(seed)
            for i, lab in enumerate(labels):
                examples.append(ex(f"s{g}", ("positive", "negative", "neutral")[lab], i))
                preds.append(int(rng.integers(3)))
        rep = report_from_predictions(examples, preds)
        total = sum(n for _, n in rep.breakdown.values())
        multi = [i for i, e in enumerate(examples) if len(groups[int(e.sentence_id[1:])][0]) >= 2]
        assert total == len(multi)
        if multi:
            direct = np.mean([preds[i] == examples[i].label for i in multi])
            assert abs(rep.multi()[0] - direct) < 1e-12


class TestSnippetScore:
    def test_identical(self):
        s = score_snippets([(1, 3), (0, 0)], [(1, 3), (0, 0)])
        assert (s.exact_match, s.f1) == (1.0, 1.0)

    def test_partial_overlap_arithmetic(self):
        s = score_snippets([(2, 4)], [(3, 5)])
        assert s.precision == s.recall == s.f1 == pytest.approx(2 / 3)
        assert s.exact_match == 0.0

    def test_length_mismatch(self):
        with pytest.raises(ContractError):
            score_snippets([(0, 1)], [(0, 1), (2, 2)])

    def test_accepts_selections(self):
        sel = SnippetSelection(1, 2, nx.Tensor(0.0), nx.Tensor(0.0), "greedy")
        assert score_snippets([sel], [(1, 2)]).exact_match == 1.0

    @settings(max_examples=50, deadline=None)
    @given(st.lists(st.tuples(st.integers(0, 9), st.integers(0, 9), st.integers(0, 9), st.integers(0, 9)), min_size=1, max_size=20))
    def test_set_oracle_and_symmetry(self, quads):
        preds = [(min(a, b), max(a, b)) for a, b, _, _ in quads]
        golds = [(min(c, d), max(c, d)) for _, _, c, d in quads]
        ps, rs, fs = [], [], []
        for (pl, pr), (gl, gr) in zip(preds, golds):
            p, g = set(range(pl, pr + 1)), set(range(gl, gr + 1))
            o = len(p & g)
            ps.append(o / len(p))
            rs.append(o / len(g))
            fs.append(0.0 if o == 0 else 2 * o / (len(p) + len(g)))
        s = score_snippets(preds, golds)
        assert abs(s.precision - np.mean(ps)) < 1e-12
        assert abs(s.recall - np.mean(rs)) < 1e-12
        assert abs(s.f1 - np.mean(fs)) < 1e-12
        swapped = score_snippets(golds, preds)
        assert abs(swapped.precision - s.recall) < 1e-12 and abs(swapped.recall - s.precision) < 1e-12


def viz_example():
    tokens = "the appetizers are ok , but the service is slow".split()
    return Example(tuple(tokens[:9]), TermAspect(7, 7), "negative", "fig-1")


class TestRender:
    def test_hard_brackets(self):
        doc = render_visualization(viz_example(), (5, 7), N)
        assert doc.splitlines()[1] == "the appetizers are ok , [ but the service ] is"
        assert "correct: yes" in doc

    def test_soft_intensity_normalised_to_max(self):
        w = np.array([0.1, 0.05, 0.05, 0.4, 0.05, 0.05, 0.1, 0.1, 0.1])
        doc = render_visualization(viz_example(), w, P, "html")
        assert "rgba(220,40,40,1.0000)" in doc and doc.count("1.0000)") == 1
        assert "rgba(220,40,40,0.2500)" in doc
        assert 'title="0.40000000"' in doc

    def test_soft_text_weights(self):
        w = np.full(9, 1 / 9)
        line = render_visualization(viz_example(), w, P).splitlines()[1]
        assert line.split()[0] == "the:0.11111111"

    def test_length_mismatch(self):
        with pytest.raises(ContractError):
            render_visualization(viz_example(), np.ones(4) / 4, P)
        with pytest.raises(ContractError):
            render_visualization(viz_example(), (3, 9), P)

    def test_selection_objects(self):
        e = viz_example()
        soft = SoftSelection(nx.Tensor(np.full(9, 1 / 9)), nx.Tensor(np.zeros(4)))
        hard = SnippetSelection(8, 8, nx.Tensor(0.0), nx.Tensor(0.0), "greedy")
        assert "head: soft" in render_visualization(e, soft, P)
        assert render_visualization(e, hard, P).splitlines()[1].endswith("[ is ]")

    @settings(max_examples=60, deadline=None)
    @given(
        st.lists(st.sampled_from(["a", "[", "]", "\\x", "b:c", "<tag>", "&amp;", "ü", '"q"']), min_size=1, max_size=8),
        st.data(),
    )
    def test_strip_recovers_tokens(self, tokens, data):
        e = Example(tuple(tokens), CategoryAspect("food"), "positive", "s")
        n = len(tokens)
        l = data.draw(st.integers(0, n - 1))
        r = data.draw(st.integers(l, n - 1))
        w = np.asarray(data.draw(st.lists(st.floats(0.01, 1.0), min_size=n, max_size=n)))
        for out, fmt in product([(l, r), w / w.sum()], ["text", "html"]):
            doc = render_visualization(e, out, P, fmt)
            assert strip_markup(doc, fmt) == tokens

    def test_names(self):
        e = viz_example()
        assert document_name(e, "hard", "text") == "fig-1__service-7__hard.txt"
        assert document_name(e, "soft", "html") != document_name(e, "hard", "html")

    def test_write_one_file_per_example(self, tmp_path):
        e = viz_example()
        paths = write_visualizations(tmp_path, [e, e], [(0, 1), (2, 2)], [P, N], "hard")
        assert len(paths) == 2 and paths[0] == paths[1]
        with pytest.raises(ContractError):
            write_visualizations(tmp_path, [e], [], [P], "hard")


class TestGolden:
    @pytest.mark.parametrize(
        "name, output, fmt",
        [
            ("hard.txt", (5, 8), "text"),
            ("hard.html", (5, 8), "html"),
            ("soft.txt", "weights", "text"),
            ("soft.html", "weights", "html"),
        ],
    )
    def test_byte_identical(self, name, output, fmt):
        w = np.array([0.02, 0.18, 0.05, 0.25, 0.04, 0.16, 0.02, 0.08, 0.20])
        doc = render_visualization(viz_example(), w if output == "weights" else output, N, fmt)
        assert doc.encode("utf-8") == (GOLDEN / name).read_bytes()


@pytest.fixture(scope="module")
def tiny_model():
    examples = [ex("a", "positive"), ex("b", "negative"), ex("c", "neutral"), ex("c", "positive", 1)]
    vocab = build_vocabulary(examples)
    return Model.create(vocab, "hard", seed=0, hidden=8, layers=1, heads=2), examples


class TestEvaluate:
    def test_matches_report_from_predictions(self, tiny_model):
        from hardabsa.model import infer

        model, examples = tiny_model
        rep = evaluate(model, examples)
        direct = report_from_predictions(examples, infer(model, examples).predicted)
        assert rep.accuracy == direct.accuracy
        np.testing.assert_array_equal(rep.confusion, direct.confusion)
        assert rep.snippets is None  # no gold snippets

    def test_deterministic(self, tiny_model):
        model, examples = tiny_model
        a, b = evaluate(model, examples), evaluate(model, examples)
        assert a.to_record() == b.to_record()

    def test_binary_drops_neutral(self, tiny_model):
        model, examples = tiny_model
        rep = evaluate(model, examples, "binary")
        assert rep.count == 3 and rep.confusion.shape == (2, 2)
