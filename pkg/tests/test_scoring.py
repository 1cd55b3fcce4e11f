import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from phonelab.scoring import ScoringError, edit_distance, pter, wer

from oracles import recursive_levenshtein


def test_identical_lists():
    assert edit_distance(list("abc"), list("abc")) == (0, 0, 0)


def test_single_substitution():
    assert edit_distance(["a", "b", "c"], ["a", "x", "c"]) == (1, 0, 0)


def test_empty_hyp_all_deletions():
    assert edit_distance(["a", "b", "c"], []) == (0, 3, 0)


def test_empty_ref_all_insertions():
    assert edit_distance([], ["a", "b"]) == (0, 0, 2)


@settings(max_examples=200, deadline=None)
@given(
    st.lists(st.sampled_from("abc"), max_size=6),
    st.lists(st.sampled_from("abc"), max_size=6),
)
def test_distance_matches_recursive_oracle(ref, hyp):
    s, d, i = edit_distance(ref, hyp)
    assert s + d + i == recursive_levenshtein(tuple(ref), tuple(hyp))
    # alignment accounting: hyp length restores from ref length
    assert len(ref) - d + i == len(hyp)


def test_wer_all_correct():
    report = wer([("a b c", "a b c"), ("d", "d")])
    assert report.error_rate == 0.0


def test_wer_one_substitution_of_three():
    report = wer([("a b c", "a x c")])
    assert report.error_rate == pytest.approx(100.0 / 3.0)


def test_wer_duplication_invariant():
    pairs = [("a b c", "a x c"), ("d e", "d")]
    assert wer(pairs).error_rate == pytest.approx(wer(pairs * 3).error_rate)


def test_wer_monotone_under_corruption():
    base = [("a b c d", "a b c d")]
    worse = [("a b c d", "a b x d")]
    assert wer(worse).error_rate > wer(base).error_rate


def test_wer_empty_corpus_raises():
    with pytest.raises(ScoringError, match="empty"):
        wer([])


def test_pter_identical():
    assert pter([([1, 2, 3], [1, 2, 3])]).error_rate == 0.0


def test_pter_modifier_counts_as_token():
    # ref [a, length-mark], hyp [a]: one deletion over two tokens
    assert pter([([5, 9], [5])]).error_rate == 50.0


def test_pter_matches_oracle_on_random_sequences():
    rng = np.random.default_rng(3)
    for _ in range(100):
        ref = rng.integers(1, 4, size=rng.integers(0, 6)).tolist()
        hyp = rng.integers(1, 4, size=rng.integers(0, 6)).tolist()
        if not ref:
            continue
        report = pter([(ref, hyp)])
        s, d, i = (
            report.rows[0].substitutions,
            report.rows[0].deletions,
            report.rows[0].insertions,
        )
        assert s + d + i == recursive_levenshtein(tuple(ref), tuple(hyp))


def test_report_csv_has_total_row():
    report = wer([("a b", "a b"), ("c", "x")], ids=["u1", "u2"])
    csv = report.to_csv()
    lines = csv.strip().split("\n")
    assert lines[0] == "utt_id,S,D,I,ref_len"
    assert lines[1].startswith("u1,")
    assert lines[-1] == "TOTAL,1,0,0,3"
    assert "WER" in report.to_text()
