"""Language-universal IPA inventory and table-driven grapheme-to-IPA rules.

Every Unicode scalar (base letter, modifier such as the length mark, or
combining mark) is its own unit. The inventory merges all languages' symbols
into one contiguous id space with the CTC blank fixed at id 0, so shared
sounds share one output id across languages.
"""

from __future__ import annotations

from dataclasses import dataclass, field

BLANK_SYMBOL = "<blank>"
BLANK_ID = 0


class G2pError(ValueError):
    def __init__(self, word: str, offset: int, language: str):
        self.word = word
        self.offset = offset
        self.language = language
        super().__init__(
            f"unmatched grapheme {word[offset]!r} in word {word!r} "
            f"at offset {offset} (language {language})"
        )


@dataclass(frozen=True)
class Inventory:
    symbols: tuple[str, ...]  # symbols[0] is the blank
    id_of: dict[str, int] = field(default_factory=dict, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "id_of", {s: i for i, s in enumerate(self.symbols)})

    def __len__(self) -> int:
        return len(self.symbols)

    @property
    def blank_id(self) -> int:
        return BLANK_ID


@dataclass
class G2pTable:
    language: str
    rules: dict[str, tuple[str, ...]]  # grapheme -> IPA symbol sequence

    def __post_init__(self):
        for key in self.rules:
            if not key:
                raise ValueError(f"{self.language}: empty grapheme key")
        # longest-match order, independent of insertion order
        self.rules = dict(sorted(self.rules.items(), key=lambda kv: (-len(kv[0]), kv[0])))


def tokenize_ipa(s: str) -> list[str]:
    """Each non-whitespace Unicode scalar is one token (modifiers included)."""
    return [ch for ch in s if not ch.isspace()]


def build_inventory(tables: list[G2pTable]) -> Inventory:
    """Blank plus the lexicographically sorted union of all produced symbols."""
    if not tables:
        raise ValueError("at least one G2P table required")
    symbols: set[str] = set()
    for table in tables:
        for out in table.rules.values():
            symbols.update(out)
    return Inventory(symbols=(BLANK_SYMBOL, *sorted(symbols)))


def g2p(transcript: str, table: G2pTable, inv: Inventory) -> list[int]:
    """Longest-prefix-match conversion; word boundaries emit nothing."""
    ids: list[int] = []
    for word in transcript.split():
        pos = 0
        while pos < len(word):
            for key, out in table.rules.items():
                if word.startswith(key, pos):
                    ids.extend(inv.id_of[s] for s in out)
                    pos += len(key)
                    break
            else:
                raise G2pError(word, pos, table.language)
    return ids


def ids_to_symbols(ids: list[int], inv: Inventory) -> list[str]:
    return [inv.symbols[i] for i in ids]


def load_g2p_table(path, language: str | None = None) -> G2pTable:
    """Parse `grapheme<TAB>symbol[ symbol...]` lines; `#` starts a comment."""
    rules: dict[str, tuple[str, ...]] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].rstrip("\n")
            if not line.strip():
                continue
            if "\t" not in line:
                raise ValueError(f"{path}:{lineno}: expected grapheme<TAB>symbols")
            grapheme, out = line.split("\t", 1)
            if not grapheme:
                raise ValueError(f"{path}:{lineno}: empty grapheme key")
            rules[grapheme] = tuple(out.split())
    from pathlib import Path

    name = language if language is not None else Path(path).stem
    return G2pTable(language=name, rules=rules)


def save_g2p_table(path, table: G2pTable) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"# g2p rules for {table.language}\n")
        for grapheme, out in sorted(table.rules.items()):
            fh.write(f"{grapheme}\t{' '.join(out)}\n")
