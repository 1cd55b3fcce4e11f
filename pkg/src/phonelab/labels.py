"""Per-utterance frame label sets and their text file format.

File layout: one header line ``#V=<int> source=<string>`` followed by one
line per utterance: ``utt_id<TAB>v0 v1 ... vT-1`` with space-separated
decimal ids.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class LabelError(ValueError):
    pass


@dataclass
class LabelSet:
    labels: dict[str, np.ndarray]  # utt id -> int64 frame labels
    vocab: int
    source: str

    def __post_init__(self):
        for utt, arr in self.labels.items():
            arr = np.asarray(arr, dtype=np.int64)
            if arr.size and (arr.min() < 0 or arr.max() >= self.vocab):
                raise LabelError(f"{utt}: label id outside [0, {self.vocab})")
            self.labels[utt] = arr

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(f"#V={self.vocab} source={self.source}\n")
            for utt in sorted(self.labels):
                row = " ".join(str(int(v)) for v in self.labels[utt])
                fh.write(f"{utt}\t{row}\n")

    @classmethod
    def load(cls, path) -> "LabelSet":
        with open(path, encoding="utf-8") as fh:
            header = fh.readline().strip()
            if not header.startswith("#V="):
                raise LabelError(f"{path}: missing #V= header")
            fields = dict(part.split("=", 1) for part in header[1:].split())
            labels = {}
            for line in fh:
                line = line.rstrip("\n")
                if not line:
                    continue
                utt, _, row = line.partition("\t")
                labels[utt] = np.array([int(v) for v in row.split()] if row else [], dtype=np.int64)
        return cls(labels=labels, vocab=int(fields["V"]), source=fields["source"])

    def require_coverage(self, utt_ids) -> None:
        missing = [u for u in utt_ids if u not in self.labels]
        if missing:
            raise LabelError(f"label set missing {len(missing)} utterances, first: {missing[0]!r}")
