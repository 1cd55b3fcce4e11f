import numpy as np
import pytest

from phonelab.autodiff import Graph, grad_check
from phonelab.ctc import (
    CtcError,
    check_feasible,
    ctc_greedy_decode,
    ctc_loss_node,
    ctc_loss_value,
    frame_argmax_labels,
)

from oracles import brute_force_ctc, random_logprob_rows


def test_single_frame_single_alignment():
    # T=1, V=2 (blank, a), target [a], p(a)=0.6
    lp = np.log(np.array([[0.4, 0.6]]))
    assert ctc_loss_value(lp, [1]) == pytest.approx(-np.log(0.6), abs=1e-12)


def test_two_frame_uniform_three_alignments():
    # alignments {aa, blank-a, a-blank} each 0.25 -> -ln 0.75
    lp = np.log(np.full((2, 2), 0.5))
    assert ctc_loss_value(lp, [1]) == pytest.approx(-np.log(0.75), abs=1e-12)


def test_matches_brute_force_enumeration():
    rng = np.random.default_rng(7)
    for _ in range(300):
        t_len = int(rng.integers(1, 9))
        vocab = int(rng.integers(2, 5))
        max_len = min(3, t_len)
        target = rng.integers(1, vocab, size=rng.integers(1, max_len + 1)).tolist()
        lp = random_logprob_rows(rng, t_len, vocab)
        try:
            check_feasible(t_len, target)
        except CtcError:
            continue
        assert ctc_loss_value(lp, target) == pytest.approx(
            brute_force_ctc(lp, target), abs=1e-9
        )


def test_loss_nonnegative():
    rng = np.random.default_rng(8)
    for _ in range(50):
        lp = random_logprob_rows(rng, 6, 3)
        assert ctc_loss_value(lp, [1, 2]) >= 0.0


def test_infeasible_target_raises():
    lp = random_logprob_rows(np.random.default_rng(0), 2, 3)
    with pytest.raises(CtcError, match="alignment capacity"):
        ctc_loss_value(lp, [1, 1, 2])


def test_gradient_passes_grad_check():
    rng = np.random.default_rng(9)
    for _ in range(5):
        t_len = int(rng.integers(3, 8))
        vocab = int(rng.integers(2, 5))
        target = rng.integers(1, vocab, size=2).tolist()
        try:
            check_feasible(t_len, target)
        except CtcError:
            continue
        g = Graph()
        lp = g.input("lp", (t_len, vocab))
        loss = ctc_loss_node(g, lp, target)
        err = grad_check(g, loss, {"lp": random_logprob_rows(rng, t_len, vocab)})
        assert err <= 1e-4


def test_greedy_decode_collapses():
    # frame argmaxes [blank, a, a, blank, b] -> [a, b]
    lp = np.log(np.array([
        [0.9, 0.05, 0.05],
        [0.1, 0.8, 0.1],
        [0.1, 0.8, 0.1],
        [0.9, 0.05, 0.05],
        [0.1, 0.1, 0.8],
    ]))
    assert ctc_greedy_decode(lp) == [1, 2]


def test_greedy_decode_all_blank():
    lp = np.log(np.array([[0.9, 0.1]] * 4))
    assert ctc_greedy_decode(lp) == []


def test_greedy_decode_blank_separates_repeats():
    lp = np.log(np.array([
        [0.1, 0.9],
        [0.9, 0.1],
        [0.1, 0.9],
    ]))
    assert ctc_greedy_decode(lp) == [1, 1]


def test_frame_argmax_one_hot():
    eye = np.log(np.eye(4) * 0.97 + 0.01)
    assert frame_argmax_labels(eye) == [0, 1, 2, 3]


def test_frame_argmax_tie_breaks_low():
    lp = np.log(np.full((3, 4), 0.25))
    assert frame_argmax_labels(lp) == [0, 0, 0]


def test_frame_argmax_empty():
    assert frame_argmax_labels(np.zeros((0, 5))) == []


def test_frame_argmax_shift_invariant():
    rng = np.random.default_rng(11)
    lp = rng.normal(size=(6, 5))
    shifted = lp + rng.normal(size=(6, 1))
    assert frame_argmax_labels(lp) == frame_argmax_labels(shifted)
    assert len(frame_argmax_labels(lp)) == 6
