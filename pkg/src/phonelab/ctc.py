"""CTC loss, greedy decoding, and frame-level argmax labeling.

The loss marginalizes over all monotonic alignments on the blank-interleaved
state lattice (2L+1 states) with a log-space forward recursion. It is exposed
both as a plain function and as a differentiable graph node whose gradient is
the negative state-occupancy posterior from the forward-backward recursions.

Blank is id 0 throughout, matching the inventory convention.
"""

from __future__ import annotations

import numpy as np

from . import autodiff
from .autodiff import Graph, Var

BLANK = 0
NEG_INF = -np.inf


class CtcError(ValueError):
    pass


def check_feasible(num_frames: int, target: list[int]) -> None:
    """CTC needs T >= L + number of adjacent equal label pairs."""
    repeats = sum(1 for a, b in zip(target, target[1:]) if a == b)
    if num_frames < len(target) + repeats:
        raise CtcError(
            f"target longer than alignment capacity: T={num_frames} < "
            f"L={len(target)} + {repeats} adjacent repeats"
        )


def _extend(target: list[int]) -> np.ndarray:
    ext = np.full(2 * len(target) + 1, BLANK, dtype=np.int64)
    ext[1::2] = target
    return ext


def _forward_lattice(logprobs: np.ndarray, ext: np.ndarray) -> np.ndarray:
    """Alpha recursion over the extended lattice; alpha includes the emission at t."""
    t_len, _ = logprobs.shape
    s_len = ext.size
    # transition from s-2 is legal when ext[s] is a label differing from ext[s-2]
    skip_ok = np.zeros(s_len, dtype=bool)
    if s_len > 2:
        skip_ok[2:] = (ext[2:] != BLANK) & (ext[2:] != ext[:-2])

    alpha = np.full((t_len, s_len), NEG_INF)
    alpha[0, 0] = logprobs[0, ext[0]]
    if s_len > 1:
        alpha[0, 1] = logprobs[0, ext[1]]
    for t in range(1, t_len):
        prev = alpha[t - 1]
        stay = prev
        step = np.concatenate(([NEG_INF], prev[:-1]))
        acc = np.logaddexp(stay, step)
        skip = np.concatenate(([NEG_INF, NEG_INF], prev[:-2]))
        acc = np.where(skip_ok, np.logaddexp(acc, skip), acc)
        alpha[t] = acc + logprobs[t, ext]
    return alpha


def _backward_lattice(logprobs: np.ndarray, ext: np.ndarray) -> np.ndarray:
    t_len, _ = logprobs.shape
    s_len = ext.size
    skip_ok = np.zeros(s_len, dtype=bool)
    if s_len > 2:
        skip_ok[:-2] = (ext[:-2] != BLANK) & (ext[:-2] != ext[2:])

    beta = np.full((t_len, s_len), NEG_INF)
    beta[t_len - 1, s_len - 1] = logprobs[t_len - 1, ext[s_len - 1]]
    if s_len > 1:
        beta[t_len - 1, s_len - 2] = logprobs[t_len - 1, ext[s_len - 2]]
    for t in range(t_len - 2, -1, -1):
        nxt = beta[t + 1]
        stay = nxt
        step = np.concatenate((nxt[1:], [NEG_INF]))
        acc = np.logaddexp(stay, step)
        skip = np.concatenate((nxt[2:], [NEG_INF, NEG_INF]))
        acc = np.where(skip_ok, np.logaddexp(acc, skip), acc)
        beta[t] = acc + logprobs[t, ext]
    return beta


def ctc_loss_value(logprobs: np.ndarray, target: list[int]) -> float:
    """-log P(target | logprobs), summed over all valid alignments."""
    logprobs = np.asarray(logprobs, dtype=np.float64)
    check_feasible(logprobs.shape[0], target)
    ext = _extend(list(target))
    alpha = _forward_lattice(logprobs, ext)
    s_len = ext.size
    total = alpha[-1, s_len - 1]
    if s_len > 1:
        total = np.logaddexp(total, alpha[-1, s_len - 2])
    return float(-total)


def ctc_loss_grad(logprobs: np.ndarray, target: list[int]) -> tuple[float, np.ndarray]:
    """Loss plus its gradient w.r.t. the logprob entries (= -occupancy)."""
    logprobs = np.asarray(logprobs, dtype=np.float64)
    check_feasible(logprobs.shape[0], target)
    ext = _extend(list(target))
    t_len, vocab = logprobs.shape
    alpha = _forward_lattice(logprobs, ext)
    beta = _backward_lattice(logprobs, ext)
    s_len = ext.size
    total = alpha[-1, s_len - 1]
    if s_len > 1:
        total = np.logaddexp(total, alpha[-1, s_len - 2])

    # log path mass through (t, s): alpha + beta double-counts the emission
    with np.errstate(invalid="ignore"):
        occ = alpha + beta - logprobs[:, ext] - total
    grad = np.zeros_like(logprobs)
    gamma = np.exp(occ, where=np.isfinite(occ), out=np.zeros_like(occ))
    for s in range(s_len):
        grad[:, ext[s]] -= gamma[:, s]
    return float(-total), grad


# -- graph integration ---------------------------------------------------------


def _ctc_forward_op(node, args):
    loss, grad = ctc_loss_grad(args[0], node.attrs["target"])
    return np.asarray(loss), grad


def _ctc_backward_op(node, args, aux, g):
    return (g * aux,)


autodiff.register_op("ctc_loss", _ctc_forward_op, _ctc_backward_op)


def ctc_loss_node(g: Graph, logprobs: Var, target: list[int]) -> Var:
    """Differentiable CTC loss node over a (T, V) log-posterior node."""
    check_feasible(logprobs.shape[0], list(target))
    return g.custom("ctc_loss", [logprobs], (), {"target": list(target)})


# -- decoding ------------------------------------------------------------------


def frame_argmax_labels(logprobs: np.ndarray) -> list[int]:
    """Per-frame argmax ids; ties break to the lowest index; blank is legal."""
    logprobs = np.asarray(logprobs)
    if logprobs.shape[0] == 0:
        return []
    return np.argmax(logprobs, axis=1).tolist()


def collapse(ids: list[int]) -> list[int]:
    """Collapse adjacent repeats, then drop blanks."""
    out = []
    prev = None
    for i in ids:
        if i != prev:
            out.append(i)
        prev = i
    return [i for i in out if i != BLANK]


def ctc_greedy_decode(logprobs: np.ndarray) -> list[int]:
    return collapse(frame_argmax_labels(logprobs))
