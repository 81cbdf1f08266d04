import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from guided_distill.errors import InputError, MetricError
from guided_distill.metrics import (CriteriaScoreTable, accuracy, all_criteria_combinations, auroc,
                                    balanced_accuracy, confusion_matrix, delta_percent, format_delta,
                                    mcnemar_counts, mcnemar_test, micro_f1, seven_point_infer,
                                    seven_point_scores, truncate1)

from oracles import auroc_bruteforce, ba_bruteforce, mcnemar_bruteforce, micro_f1_bruteforce


def test_worked_examples():
    y, p = [0, 0, 1, 1], [0, 1, 1, 1]
    assert balanced_accuracy(y, p) == 0.75
    assert micro_f1(y, p) == 0.75
    assert auroc([0, 0, 1, 1], [0.1, 0.4, 0.35, 0.8]) == 0.75
    np.testing.assert_array_equal(confusion_matrix(y, p), [[1, 1], [0, 2]])


def test_mcnemar_worked_examples():
    a = [True] * 2 + [False] * 8
    b = [False] * 2 + [True] * 8
    assert mcnemar_test(a, b) == pytest.approx(112 / 1024, abs=1e-15)
    assert mcnemar_test([True, False], [False, True]) == 1.0
    assert mcnemar_test([True, True], [True, True]) == 1.0
    a = [True] * 4 + [False] * 20 + [True] * 30
    b = [False] * 4 + [True] * 20 + [True] * 30
    assert mcnemar_counts(a, b) == (30, 4, 20, 0)
    assert mcnemar_test(a, b) < 0.05


def test_delta_examples():
    assert format_delta(delta_percent(0.752, 0.729)) == "+3.1"
    assert format_delta(delta_percent(0.548, 0.581)) == "(-5.6)"
    assert delta_percent(0.5, 0.5) == 0.0 and format_delta(0.0) == "+0.0"
    assert truncate1(3.19) == 3.1 and truncate1(-5.68) == -5.6 and truncate1(0.3) == 0.3
    with pytest.raises(MetricError):
        delta_percent(0.5, 0.0)


def test_metric_input_errors():
    with pytest.raises(InputError):
        balanced_accuracy([0, 1], [0])
    with pytest.raises(MetricError):
        balanced_accuracy([], [])
    with pytest.raises(MetricError):
        balanced_accuracy([0, 0], [0, 1], n_classes=2)
    with pytest.raises(MetricError):
        auroc([1, 1, 1], [0.2, 0.3, 0.4])
    with pytest.raises(InputError):
        mcnemar_test([True], [True, False])


labels = st.lists(st.integers(0, 3), min_size=1, max_size=40)


@settings(max_examples=150, deadline=None)
@given(st.data())
def test_against_bruteforce(data):
    y = data.draw(labels)
    p = data.draw(st.lists(st.integers(0, 3), min_size=len(y), max_size=len(y)))
    assert balanced_accuracy(y, p) == pytest.approx(ba_bruteforce(y, p), abs=1e-12)
    assert micro_f1(y, p) == pytest.approx(micro_f1_bruteforce(y, p), abs=1e-12)
    assert micro_f1(y, p) == accuracy(y, p)


@settings(max_examples=150, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 1), st.integers(0, 6)), min_size=2, max_size=40))
def test_auroc_against_bruteforce(pairs):
    y = [a for a, _ in pairs]
    s = [b / 3 for _, b in pairs]
    if len(set(y)) < 2:
        return
    assert auroc(y, s) == pytest.approx(auroc_bruteforce(y, s), abs=1e-12)
    assert auroc(y, np.exp(np.asarray(s)) * 4 - 1) == auroc(y, s)


@settings(max_examples=150, deadline=None)
@given(st.lists(st.tuples(st.booleans(), st.booleans()), min_size=1, max_size=80))
def test_mcnemar_against_bruteforce_and_symmetric(pairs):
    a = [x for x, _ in pairs]
    b = [y for _, y in pairs]
    p = mcnemar_test(a, b)
    assert p == pytest.approx(mcnemar_bruteforce(a, b), abs=1e-12)
    assert p == mcnemar_test(b, a)
    assert 0.0 <= p <= 1.0


@settings(max_examples=100, deadline=None)
@given(st.data())
def test_ba_relabel_invariance(data):
    y = data.draw(labels)
    p = data.draw(st.lists(st.integers(0, 3), min_size=len(y), max_size=len(y)))
    perm = np.array(data.draw(st.permutations(range(4))))
    assert balanced_accuracy(perm[y], perm[p]) == pytest.approx(balanced_accuracy(y, p), abs=1e-12)


def test_seven_point_default_table():
    table = CriteriaScoreTable.default()
    combos = list(all_criteria_combinations())
    assert len(combos) == 972
    best = {"PN": 2, "BWV": 1, "VS": 2, "PIG": 2, "STR": 2, "DaG": 2, "RS": 1}
    assert table.score(best) == 10
    assert seven_point_infer({c: 0 for c in best}, table, t=1) == (False, 0)
    assert seven_point_infer({**{c: 0 for c in best}, "RS": 1}, table, t=1) == (True, 1)
    assert seven_point_infer({**{c: 0 for c in best}, "BWV": 1}, table, t=3) == (False, 2)
    assert seven_point_infer({**{c: 0 for c in best}, "BWV": 1, "RS": 1}, table, t=3) == (True, 3)
    with pytest.raises(InputError):
        table.score({"PN": 0})


def test_seven_point_vectorised_matches_scalar():
    combos = list(all_criteria_combinations())
    table = CriteriaScoreTable.default()
    vec = seven_point_scores({c: [d[c] for d in combos] for c in combos[0]}, table)
    assert vec.tolist() == [table.score(d) for d in combos]


def test_score_table_validation():
    with pytest.raises(InputError):
        CriteriaScoreTable({"PN": {2: -1}})
    with pytest.raises(InputError):
        CriteriaScoreTable({}, thresholds=(3, 1))
