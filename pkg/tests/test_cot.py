import pytest
from hypothesis import given, strategies as st

from tfdyn.cot import (IdealComparator, ModelComparator, autoregressive_cot_infer, automaton_parity, evaluate,
                       truncated_cot_infer, window_positions)
from tfdyn.model import ModelParams
from tfdyn.sequences import ValidationError, cot_trace, enumerate_sequences, parity_label

seqs = st.text(alphabet="ab", min_size=1, max_size=12)


def test_ideal_truncated_worked_example():
    r = truncated_cot_infer(IdealComparator(), "abba")
    assert [s.window for s in r.steps] == ["abba", "bbaa", "baab"]
    assert r.generated == "aba"
    assert r.prediction == 1 == parity_label("abba")


def test_ideal_exhaustive_2_to_10():
    runs = [truncated_cot_infer(IdealComparator(), s) for L in range(2, 11) for s in enumerate_sequences(L)]
    rows, acc = evaluate(runs)
    assert len(rows) == 2044
    assert acc == 1.0


@given(seqs)
def test_automaton_matches_count_parity(s):
    assert automaton_parity(s) == parity_label(s)


@given(seqs.filter(lambda s: len(s) >= 2))
def test_window_stays_length_L(s):
    r = truncated_cot_infer(IdealComparator(), s)
    assert len(r.steps) == len(s) - 1
    assert all(len(step.window) == len(s) for step in r.steps)


def test_length_one_rejected():
    with pytest.raises(ValidationError):
        truncated_cot_infer(IdealComparator(), "a")


def test_bad_comparator_output():
    with pytest.raises(ValidationError):
        truncated_cot_infer(lambda s: 0, "ab")


def test_model_comparator_window_too_long():
    with pytest.raises(ValidationError):
        truncated_cot_infer(ModelComparator(ModelParams.zeros(4, 2.0)), "aaa")


def test_window_positions_are_1_based():
    assert window_positions("bab", 8) == [1, 2, 3]


def test_autoregressive_preconditions():
    p = ModelParams.zeros(14, 2.0)
    with pytest.raises(ValidationError):
        autoregressive_cot_infer(p, "aaa", 4)
    with pytest.raises(ValidationError):
        autoregressive_cot_infer(ModelParams.zeros(10, 2.0), "aaaa", 4)
    with pytest.raises(ValidationError):
        autoregressive_cot_infer(p, "a", 1)


def test_even_pairs_checkpoint_zero_shot(run):
    comp = ModelComparator(run("ep").checkpoints[5000])
    runs = [truncated_cot_infer(comp, s) for L in range(2, 7) for s in enumerate_sequences(L)]
    rows, acc = evaluate(runs)
    assert [r.sequence for r in rows if not r.correct] == []


def test_parity_checkpoint_autoregressive(run):
    p = run("parity").checkpoints[5000]
    for s in enumerate_sequences(4):
        r = autoregressive_cot_infer(p, s, 4)
        assert r.generated == "".join(cot_trace(s, 4).appended)
        assert r.prediction == parity_label(s)
