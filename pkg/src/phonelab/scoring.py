"""Levenshtein-based ASR scoring: WER over words, PTER over IPA tokens.

Counts come from a DP backtrace with a fixed preference order among
cost-minimal moves (match > substitution > deletion > insertion), so the
(S, D, I) decomposition is deterministic. Rates pool corpus-wide:
100 * (S+D+I) / total reference length.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class ScoringError(ValueError):
    pass


@dataclass
class UttScore:
    utt_id: str
    substitutions: int
    deletions: int
    insertions: int
    ref_len: int


@dataclass
class ScoreReport:
    rows: list[UttScore]
    token_kind: str  # "word" | "phone"

    @property
    def error_rate(self) -> float:
        total_ref = sum(r.ref_len for r in self.rows)
        errors = sum(r.substitutions + r.deletions + r.insertions for r in self.rows)
        return 100.0 * errors / total_ref

    def totals(self) -> tuple[int, int, int, int]:
        s = sum(r.substitutions for r in self.rows)
        d = sum(r.deletions for r in self.rows)
        i = sum(r.insertions for r in self.rows)
        n = sum(r.ref_len for r in self.rows)
        return s, d, i, n

    def to_csv(self) -> str:
        lines = ["utt_id,S,D,I,ref_len"]
        for r in self.rows:
            lines.append(f"{r.utt_id},{r.substitutions},{r.deletions},{r.insertions},{r.ref_len}")
        s, d, i, n = self.totals()
        lines.append(f"TOTAL,{s},{d},{i},{n}")
        return "\n".join(lines) + "\n"

    def to_text(self) -> str:
        s, d, i, n = self.totals()
        kind = "WER" if self.token_kind == "word" else "PTER"
        return (
            f"{kind} {self.error_rate:.2f}% over {len(self.rows)} utterances "
            f"(S={s} D={d} I={i} ref={n})\n"
        )


def edit_distance(ref: list, hyp: list) -> tuple[int, int, int]:
    """(substitutions, deletions, insertions) of a minimal unit-cost alignment."""
    n, m = len(ref), len(hyp)
    dist = np.zeros((n + 1, m + 1), dtype=np.int64)
    dist[:, 0] = np.arange(n + 1)
    dist[0, :] = np.arange(m + 1)
    for i in range(1, n + 1):
        ri = ref[i - 1]
        row = dist[i]
        prev = dist[i - 1]
        for j in range(1, m + 1):
            diag = prev[j - 1] + (0 if ri == hyp[j - 1] else 1)
            row[j] = min(diag, prev[j] + 1, row[j - 1] + 1)

    subs = dels = ins = 0
    i, j = n, m
    while i > 0 or j > 0:
        if i > 0 and j > 0 and ref[i - 1] == hyp[j - 1] and dist[i, j] == dist[i - 1, j - 1]:
            i, j = i - 1, j - 1
        elif i > 0 and j > 0 and dist[i, j] == dist[i - 1, j - 1] + 1 and ref[i - 1] != hyp[j - 1]:
            subs += 1
            i, j = i - 1, j - 1
        elif i > 0 and dist[i, j] == dist[i - 1, j] + 1:
            dels += 1
            i -= 1
        else:
            ins += 1
            j -= 1
    return subs, dels, ins


def _score_pairs(pairs, token_kind: str, ids=None) -> ScoreReport:
    if not pairs:
        raise ScoringError("empty reference corpus")
    rows = []
    for k, (ref, hyp) in enumerate(pairs):
        s, d, i = edit_distance(list(ref), list(hyp))
        name = ids[k] if ids is not None else f"utt{k:04d}"
        rows.append(UttScore(name, s, d, i, len(ref)))
    if sum(r.ref_len for r in rows) == 0:
        raise ScoringError("reference corpus has zero total length")
    return ScoreReport(rows=rows, token_kind=token_kind)


def wer(pairs: list[tuple[str, str]], ids: list[str] | None = None) -> ScoreReport:
    """Corpus WER over single-space-tokenized transcripts."""
    token_pairs = [(ref.split(), hyp.split()) for ref, hyp in pairs]
    return _score_pairs(token_pairs, "word", ids)


def pter(pairs: list[tuple[list[int], list[int]]], ids: list[str] | None = None) -> ScoreReport:
    """Corpus phone token error rate over IPA id sequences."""
    return _score_pairs(pairs, "phone", ids)
