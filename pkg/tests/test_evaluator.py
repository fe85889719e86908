import numpy as np
import pytest

from cqakit.evaluation import evaluate, evaluate_scores, rank
from cqakit.queries import parse_grounded
from cqakit.rng import make_rng
from cqakit.sampler import Dataset, GroundedQueryRecord, Provenance


def record(formula, query, train, valid, test):
    return GroundedQueryRecord(
        formula, parse_grounded(query), frozenset(train), frozenset(valid), frozenset(test)
    )


def fixture_records():
    """10 entities, 3 queries, two types; all numbers below derived by hand."""
    return [
        record("(p,(e))", "(p,(0),(e,(0)))", {0, 1}, {0, 1, 2}, {0, 1, 2, 5}),
        record("(p,(e))", "(p,(0),(e,(1)))", {9}, {9}, {0, 9}),
        record("(i,(p,(e)),(p,(e)))", "(i,(p,(0),(e,(0))),(p,(1),(e,(1))))", {0}, {0, 1}, {0, 1, 4}),
    ]


def fixture_scores():
    return np.array(
        [
            [9, 8, 7, 6, 5, 4, 3, 2, 1, 0],
            [0, 1, 2, 3, 4, 5, 6, 7, 8, 9],
            [5, 5, 5, 5, 0, 0, 0, 0, 0, 0],
        ],
        dtype=float,
    )


def test_rank_unique_top():
    scores = np.array([1.0, 5.0, 2.0])
    assert rank(scores, 1, frozenset()) == 1.0


def test_rank_tie_averaged():
    scores = np.array([5.0, 5.0, 0.0])
    assert rank(scores, 0, frozenset()) == 1.5


def test_rank_filtering_removes_competitors():
    scores = np.array([9.0, 8.0, 7.0])
    assert rank(scores, 2, frozenset()) == 3.0
    assert rank(scores, 2, frozenset({0, 1})) == 1.0


def test_rank_matches_brute_force():
    rng = make_rng(77)
    for _ in range(50):
        scores = np.round(rng.normal(size=10), 1)  # rounding provokes ties
        target = int(rng.integers(10))
        filtered = set(int(x) for x in rng.choice(10, size=2, replace=False)) - {target}
        expected = 1.0
        for v in range(10):
            if v == target or v in filtered:
                continue
            if scores[v] > scores[target]:
                expected += 1.0
            elif scores[v] == scores[target]:
                expected += 0.5
        assert rank(scores, target, filtered) == expected


def test_rank_rejects_bad_target():
    with pytest.raises(IndexError):
        rank(np.zeros(3), 5, frozenset())


def test_fixture_entailment_values():
    report = evaluate_scores(fixture_records(), fixture_scores(), modes=("entailment",))
    # per-query: q1 -> 1.0 (both targets rank 1), q2 -> 1.0, q3 -> rank 2.5 -> 0.4
    assert report.value("entailment", "MRR") == pytest.approx(0.7)  # (1.0 + 0.4) / 2 types
    assert report.value("entailment", "Hit@1") == pytest.approx(0.5)
    assert report.value("entailment", "Hit@3") == 1.0
    assert report.value("entailment", "Hit@10") == 1.0
    assert report.value("entailment", "MRR", group="mean_over_queries") == pytest.approx(0.8)
    assert report.value("entailment", "Hit@1", group="mean_over_queries") == pytest.approx(2 / 3)
    assert report.excluded["entailment"] == 0 and report.evaluated["entailment"] == 3


def test_fixture_inference_values():
    report = evaluate_scores(fixture_records(), fixture_scores(), modes=("inference",))
    # q1: target 5 filtered by {0,1,2} -> rank 3 -> 1/3
    # q2: target 0 filtered by {9}    -> rank 9 -> 1/9
    # q3: target 4 filtered by {0,1}  -> rank 1+2+2.5 = 5.5 -> 2/11
    assert report.value("inference", "MRR") == pytest.approx((2 / 9 + 2 / 11) / 2)  # = 20/99
    assert report.value("inference", "MRR") == pytest.approx(20 / 99)
    assert report.value("inference", "Hit@1") == 0.0
    assert report.value("inference", "Hit@3") == pytest.approx(0.25)
    assert report.value("inference", "Hit@10") == 1.0
    assert report.value("inference", "MRR", group="mean_over_queries") == pytest.approx(62 / 297)


def test_fixture_validation_swap():
    report = evaluate_scores(fixture_records(), fixture_scores(), modes=("validation-swap",))
    # q1: target 2, filter {0,1} -> rank 1; q2 excluded (valid == train);
    # q3: target 1, ties with {2,3} -> rank 2 -> 0.5
    assert report.excluded["validation-swap"] == 1
    assert report.evaluated["validation-swap"] == 2
    assert report.value("validation-swap", "MRR") == pytest.approx(0.75)


def test_fixture_groupings():
    report = evaluate_scores(fixture_records(), fixture_scores(), modes=("entailment",))
    # both types have depth 1 and are in-distribution
    assert report.value("entailment", "MRR", "depth", "1") == pytest.approx(0.7)
    assert report.value("entailment", "MRR", "distribution", "in") == pytest.approx(0.7)
    assert report.value("entailment", "MRR", "type", "(p,(e))") == 1.0
    assert report.value("entailment", "MRR", "type", "(i,(p,(e)),(p,(e)))") == pytest.approx(0.4)


def test_scale_invariance():
    records, scores = fixture_records(), fixture_scores()
    r1 = evaluate_scores(records, scores)
    r2 = evaluate_scores(records, scores * 17.0)
    for a, b in zip(r1.rows, r2.rows):
        assert a == b


def test_hit_monotonicity_and_mrr_bounds():
    records, scores = fixture_records(), fixture_scores()
    report = evaluate_scores(records, scores)
    for mode in ("entailment", "inference"):
        h1 = report.value(mode, "Hit@1")
        h3 = report.value(mode, "Hit@3")
        h10 = report.value(mode, "Hit@10")
        mrr = report.value(mode, "MRR")
        assert h1 <= h3 <= h10
        assert h1 <= mrr <= 1.0


def test_filtering_never_worsens_rank():
    rng = make_rng(90)
    for _ in range(30):
        scores = rng.normal(size=12)
        target = int(rng.integers(12))
        filtered = set(int(x) for x in rng.choice(12, size=4, replace=False)) - {target}
        assert rank(scores, target, filtered) <= rank(scores, target, frozenset())


def test_perfect_oracle_scores_one():
    records = fixture_records()
    for mode, base in (("entailment", "train_answers"), ("inference", "test_answers")):
        scores = np.zeros((len(records), 10))
        for i, rec in enumerate(records):
            scores[i, sorted(getattr(rec, base))] = 1e9
        report = evaluate_scores(records, scores, modes=(mode,))
        for metric in ("MRR", "Hit@1", "Hit@10"):
            assert report.value(mode, metric) == 1.0


def test_inference_empty_difference_excluded():
    rec = record("(p,(e))", "(p,(0),(e,(0)))", {1}, {1, 2}, {1, 2})  # test == valid
    report = evaluate_scores([rec], np.zeros((1, 10)), modes=("inference",))
    assert report.excluded["inference"] == 1
    assert report.evaluated["inference"] == 0
    assert report.rows == []


def test_evaluate_with_model_perfect_memorizer():
    # a model whose e_q exactly selects the unique answer -> entailment MRR 1.0
    from cqakit.encoders import EmbeddingTable, QueryModel
    from cqakit.linearize import Vocabulary

    vocab = Vocabulary(num_relations=2, num_entities=10)
    records = [
        record("(p,(e))", "(p,(0),(e,(3)))", {3}, {3}, {3}),
        record("(p,(e))", "(p,(0),(e,(7)))", {7}, {7}, {7}),
    ]
    dataset = Dataset(
        {"(p,(e))": records}, Provenance("fx", 0, "h"), num_entities=10, num_relations=2
    )

    class AnchorReadout:
        # e_q = embedding of the anchor token (position 3 of (p,(r),(e,(v))))
        arch = "LSTM"
        params: dict = {}

        def forward(self, x, mask):
            return x[:, 3], None

    rows = np.zeros((vocab.size, 10))
    for v in range(10):
        rows[vocab.entity_token(v), v] = 1.0  # orthonormal entity embeddings
    model = QueryModel(vocab, EmbeddingTable(vocab, rows), AnchorReadout())
    report = evaluate(model, dataset, mode="entailment")
    assert report.value("entailment", "MRR") == 1.0
    assert report.value("entailment", "Hit@1") == 1.0


def test_report_table_and_lines():
    report = evaluate_scores(fixture_records(), fixture_scores())
    text = report.table()
    assert "mean_over_types" in text and "MRR" in text
    lines = report.lines()
    assert all(line.startswith("{") for line in lines)
    import json

    parsed = [json.loads(line) for line in lines]
    assert any(row["group_kind"] == "depth" for row in parsed)


def test_empty_dataset_evaluates_empty():
    from cqakit.encoders import new_model
    from cqakit.linearize import Vocabulary

    model = new_model(Vocabulary(1, 5), "LSTM", d=4, seed=0)
    report = evaluate(model, Dataset(), mode="both")
    assert report.rows == []


def test_evaluate_supports_tree_architectures():
    from cqakit.encoders import new_model
    from cqakit.linearize import Vocabulary

    vocab = Vocabulary(num_relations=2, num_entities=10)
    records = {
        "(p,(e))": [record("(p,(e))", "(p,(0),(e,(1)))", {2}, {2}, {2, 3})],
        "(i,(p,(e)),(p,(e)))": [
            record("(i,(p,(e)),(p,(e)))", "(i,(p,(0),(e,(1))),(p,(1),(e,(4))))", {5}, {5, 6}, {5, 6})
        ],
    }
    dataset = Dataset(records, Provenance("t", 0, "h"), 10, 2)
    model = new_model(vocab, "TreeLSTM", d=8, seed=1)
    report = evaluate(model, dataset, mode="both")
    assert report.evaluated["entailment"] == 2
    for row in report.rows:
        assert 0.0 <= row["value"] <= 1.0
