"""Deterministic synthetic multilingual corpus with gold frame labels.

Each phone is a two-sinusoid template plus white noise, so gold frame
alignments are exact by construction and acoustic separability is tunable.
Languages draw overlapping subsets of one global phone set (shared phones
share one template, making cross-language phonetic sharing true by
construction). Every word ends in a dedicated low-amplitude pause phone;
its grapheme is part of the word's spelling, which keeps the toy G2P
bijective and makes word boundaries recoverable from a decoded phone stream.

Utterance waveforms carry `receptive_tail` extra trailing samples so that
the student CNN's frame count equals the gold label length exactly.
"""

from __future__ import annotations

import json
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .dsp import save_wav
from .ipa import G2pTable, Inventory, build_inventory, g2p, save_g2p_table
from .labels import LabelSet


class SynthError(ValueError):
    pass


@dataclass(frozen=True)
class PhoneTemplate:
    symbol: str
    grapheme: str
    freq1: float
    freq2: float
    amplitude: float = 0.4


# global phone set: ten content phones plus the word-final pause
GLOBAL_TEMPLATES = (
    PhoneTemplate("a", "a", 800.0, 1150.0),
    PhoneTemplate("e", "e", 530.0, 1840.0),
    PhoneTemplate("i", "i", 270.0, 2290.0),
    PhoneTemplate("o", "o", 560.0, 920.0),
    PhoneTemplate("u", "u", 320.0, 700.0),
    PhoneTemplate("m", "m", 250.0, 1200.0),
    PhoneTemplate("n", "n", 440.0, 1700.0),
    PhoneTemplate("s", "s", 3200.0, 4000.0),
    PhoneTemplate("t", "t", 2000.0, 3000.0),
    PhoneTemplate("k", "k", 1500.0, 2600.0),
)
PAUSE = PhoneTemplate("ʔ", "z", 120.0, 180.0, amplitude=0.15)
# only spoken by the optional uncovered language
UNCOVERED_PHONE = PhoneTemplate("ʁ", "r", 1000.0, 3600.0)

SHARED_PHONES = ("a", "e", "i", "o", "m", "n")
LANGUAGE_PHONES = {
    "lang1": SHARED_PHONES + ("u", "s"),
    "lang2": SHARED_PHONES + ("t", "k"),
    "lang3": SHARED_PHONES + ("ʁ",),  # uncovered language (optional)
}


@dataclass(frozen=True)
class SynthSpec:
    languages: tuple[str, ...] = ("lang1", "lang2")
    utterances_per_language: int = 50
    unlabeled_per_language: int = 50
    lexicon_size: int = 12
    word_length: tuple[int, int] = (2, 4)  # content phones per word
    phones_per_utterance: tuple[int, int] = (11, 15)  # includes pauses
    duration_frames: tuple[int, int] = (9, 15)
    noise_level: float = 0.01
    seed: int = 0
    frame_hop_samples: int = 320
    receptive_tail_samples: int = 80
    sample_rate: int = 16000
    include_uncovered_language: bool = False

    def __post_init__(self):
        for lang in self.languages:
            if lang not in LANGUAGE_PHONES:
                raise SynthError(f"unknown language {lang!r}")
        if self.duration_frames[0] < 1:
            raise SynthError("phone duration must be at least one frame")


@dataclass
class Utterance:
    utt_id: str
    audio: str  # path relative to the corpus root
    language: str
    transcript: str
    duration_s: float


@dataclass
class CorpusManifest:
    utterances: list[Utterance]
    role: str  # "supervised" | "unlabeled"

    def ids(self) -> list[str]:
        return [u.utt_id for u in self.utterances]


@dataclass
class GeneratedCorpus:
    root: Path
    supervised: CorpusManifest
    unlabeled: CorpusManifest
    splits: dict[str, CorpusManifest]  # train / dev / test
    gold_supervised: LabelSet
    gold_unlabeled: LabelSet
    tables: dict[str, G2pTable]
    inventory: Inventory


def save_manifest(path, manifest: CorpusManifest) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for u in manifest.utterances:
            fh.write(json.dumps({
                "id": u.utt_id,
                "audio": u.audio,
                "language": u.language,
                "transcript": u.transcript,
                "duration_s": u.duration_s,
            }, ensure_ascii=False) + "\n")


def load_manifest(path, role: str = "supervised") -> CorpusManifest:
    utts = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            d = json.loads(line)
            utts.append(Utterance(d["id"], d["audio"], d["language"], d["transcript"], d["duration_s"]))
    return CorpusManifest(utterances=utts, role=role)


def make_tables(languages) -> dict[str, G2pTable]:
    by_symbol = {t.symbol: t for t in GLOBAL_TEMPLATES + (PAUSE, UNCOVERED_PHONE)}
    tables = {}
    for lang in languages:
        rules = {}
        for sym in LANGUAGE_PHONES[lang] + (PAUSE.symbol,):
            t = by_symbol[sym]
            rules[t.grapheme] = (t.symbol,)
        tables[lang] = G2pTable(language=lang, rules=rules)
    return tables


def phone_waveform(template: PhoneTemplate, duration_frames: int, seed: int,
                   start_sample: int = 0, hop: int = 320, sample_rate: int = 16000,
                   noise_level: float = 0.0, extra_samples: int = 0) -> np.ndarray:
    """Two-tone + noise segment, phase-continuous in absolute sample position."""
    if duration_frames < 1:
        raise SynthError("duration must be >= 1 frame")
    n = duration_frames * hop + extra_samples
    t = (start_sample + np.arange(n)) / sample_rate
    sig = template.amplitude * np.sin(2 * np.pi * template.freq1 * t)
    sig = sig + template.amplitude * np.sin(2 * np.pi * template.freq2 * t)
    if noise_level > 0:
        # crc32, not hash(): string hashing is salted per process and would
        # break byte-identical regeneration
        rng = np.random.default_rng([seed, start_sample, zlib.crc32(template.symbol.encode("utf-8"))])
        sig = sig + noise_level * rng.standard_normal(n)
    return sig


def _utterance_audio(phones: list[PhoneTemplate], durations: list[int], spec: SynthSpec,
                     seed: int) -> np.ndarray:
    parts = []
    offset = 0
    for i, (tpl, dur) in enumerate(zip(phones, durations)):
        extra = spec.receptive_tail_samples if i == len(phones) - 1 else 0
        parts.append(phone_waveform(
            tpl, dur, seed, start_sample=offset, hop=spec.frame_hop_samples,
            sample_rate=spec.sample_rate, noise_level=spec.noise_level,
            extra_samples=extra,
        ))
        offset += dur * spec.frame_hop_samples
    return np.concatenate(parts)


def _make_lexicon(lang: str, spec: SynthSpec, rng: np.random.Generator) -> list[str]:
    """Unique words of content graphemes, each ending in the pause grapheme."""
    by_symbol = {t.symbol: t for t in GLOBAL_TEMPLATES + (UNCOVERED_PHONE,)}
    graphemes = [by_symbol[s].grapheme for s in LANGUAGE_PHONES[lang]]
    words: list[str] = []
    seen = set()
    while len(words) < spec.lexicon_size:
        length = int(rng.integers(spec.word_length[0], spec.word_length[1] + 1))
        word = "".join(rng.choice(graphemes, size=length)) + PAUSE.grapheme
        if word not in seen:
            seen.add(word)
            words.append(word)
    return words


def generate_corpus(spec: SynthSpec, out_dir) -> GeneratedCorpus:
    """Write WAVs, manifests, G2P tables, and gold frame labels under out_dir."""
    root = Path(out_dir)
    (root / "wav").mkdir(parents=True, exist_ok=True)
    (root / "tables").mkdir(exist_ok=True)

    languages = list(spec.languages)
    if spec.include_uncovered_language and "lang3" not in languages:
        languages = languages + ["lang3"]
    covered = [l for l in languages if l != "lang3"]

    tables = make_tables(languages)
    inventory = build_inventory([tables[l] for l in covered])
    by_symbol = {t.symbol: t for t in GLOBAL_TEMPLATES + (PAUSE, UNCOVERED_PHONE)}
    rng = np.random.default_rng(spec.seed)
    lexicons = {lang: _make_lexicon(lang, spec, rng) for lang in languages}

    def build_utterance(lang: str, utt_id: str) -> tuple[Utterance, np.ndarray | None]:
        table = tables[lang]
        target = int(rng.integers(spec.phones_per_utterance[0], spec.phones_per_utterance[1] + 1))
        words: list[str] = []
        count = 0
        while count < target:
            word = lexicons[lang][int(rng.integers(len(lexicons[lang])))]
            words.append(word)
            count += len(word)
        transcript = " ".join(words)
        symbols = [s for word in words for ch in word for s in table.rules[ch]]
        phones = [by_symbol[s] for s in symbols]
        durations = [int(d) for d in rng.integers(spec.duration_frames[0],
                                                  spec.duration_frames[1] + 1,
                                                  size=len(phones))]
        utt_seed = spec.seed ^ zlib.crc32(utt_id.encode("utf-8"))
        audio = _utterance_audio(phones, durations, spec, utt_seed)
        save_wav(root / "wav" / f"{utt_id}.wav", audio, spec.sample_rate)
        utt = Utterance(
            utt_id=utt_id,
            audio=f"wav/{utt_id}.wav",
            language=lang,
            transcript=transcript,
            duration_s=audio.size / spec.sample_rate,
        )
        if lang == "lang3":
            return utt, None  # phones outside the covered inventory; no gold
        gold = np.concatenate([
            np.full(d, inventory.id_of[s], dtype=np.int64)
            for s, d in zip(symbols, durations)
        ])
        return utt, gold

    sup_utts: list[Utterance] = []
    gold_sup: dict[str, np.ndarray] = {}
    splits: dict[str, list[Utterance]] = {"train": [], "dev": [], "test": []}
    for lang in languages:
        lang_utts = []
        for i in range(spec.utterances_per_language):
            utt, gold = build_utterance(lang, f"{lang}_{i:04d}")
            lang_utts.append(utt)
            if gold is not None:
                gold_sup[utt.utt_id] = gold
            sup_utts.append(utt)
        order = rng.permutation(len(lang_utts))
        n = len(lang_utts)
        n_train = int(round(0.8 * n))
        n_dev = int(round(0.1 * n))
        for k, idx in enumerate(order):
            split = "train" if k < n_train else ("dev" if k < n_train + n_dev else "test")
            splits[split].append(lang_utts[idx])

    unl_utts: list[Utterance] = []
    gold_unl: dict[str, np.ndarray] = {}
    for lang in languages:
        for i in range(spec.unlabeled_per_language):
            utt, gold = build_utterance(lang, f"{lang}_u{i:04d}")
            utt.transcript = ""
            if gold is not None:
                gold_unl[utt.utt_id] = gold
            unl_utts.append(utt)

    supervised = CorpusManifest(sup_utts, "supervised")
    unlabeled = CorpusManifest(unl_utts, "unlabeled")
    split_manifests = {k: CorpusManifest(sorted(v, key=lambda u: u.utt_id), "supervised")
                       for k, v in splits.items()}

    save_manifest(root / "supervised.jsonl", supervised)
    save_manifest(root / "unlabeled.jsonl", unlabeled)
    for name, manifest in split_manifests.items():
        save_manifest(root / f"{name}.jsonl", manifest)
    for lang, table in tables.items():
        save_g2p_table(root / "tables" / f"{lang}.g2p", table)

    vocab = len(inventory)
    gold_supervised = LabelSet(gold_sup, vocab, "gold")
    gold_unlabeled = LabelSet(gold_unl, vocab, "gold")
    gold_supervised.save(root / "gold_supervised.labels")
    gold_unlabeled.save(root / "gold_unlabeled.labels")

    return GeneratedCorpus(
        root=root,
        supervised=supervised,
        unlabeled=unlabeled,
        splits=split_manifests,
        gold_supervised=gold_supervised,
        gold_unlabeled=gold_unlabeled,
        tables=tables,
        inventory=inventory,
    )


def ids_to_transcript(ids: list[int], table: G2pTable, inv: Inventory,
                      word_end_symbol: str = PAUSE.symbol) -> str:
    """Invert the toy G2P: split the id stream after each pause, spell words.

    Inverse rules are matched longest-output-first; a symbol with no matching
    rule output becomes '?'. Only meaningful for tables whose outputs cover
    the decoded ids (true for the synthetic languages; real G2P is many-to-one
    and has no exact inverse).
    """
    symbols = [inv.symbols[i] for i in ids]
    inverse = sorted(((out, grapheme) for grapheme, out in table.rules.items()),
                     key=lambda kv: (-len(kv[0]), kv[1]))
    words: list[str] = []
    current: list[str] = []

    def flush():
        if current:
            words.append("".join(current))
            current.clear()

    pos = 0
    while pos < len(symbols):
        for out, grapheme in inverse:
            if tuple(symbols[pos: pos + len(out)]) == out:
                current.append(grapheme)
                pos += len(out)
                if out[-1] == word_end_symbol:
                    flush()
                break
        else:
            current.append("?")
            pos += 1
    flush()
    return " ".join(words)
