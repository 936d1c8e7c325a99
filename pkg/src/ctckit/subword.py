"""Byte-pair style subword vocabularies and hierarchical targets.

Words are seeded as their first character prefixed with the word-start
marker plus the remaining plain characters; the most frequent adjacent
pair is then merged greedily until the vocabulary reaches its target
size or no pair occurs at least twice.  Ids 0 and 1 are reserved for
blank and unk and count toward the configured size.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, Sequence

from .errors import ConfigurationError, ContractError

MARKER = "▁"  # word-start marker
BLANK_ID = 0
UNK_ID = 1
BLANK_TOKEN = "<blank>"
UNK_TOKEN = "<unk>"


@dataclass
class SubwordVocab:
    tokens: list[str]
    merges: list[tuple[str, str]]
    target_size: int
    id_of: dict[str, int] = field(default_factory=dict, repr=False)
    _word_cache: dict[str, list[int]] = field(default_factory=dict, repr=False)

    def __post_init__(self):
        if not self.id_of:
            self.id_of = {tok: i for i, tok in enumerate(self.tokens)}

    @property
    def size(self) -> int:
        return len(self.tokens)


def _word_symbols(word: str) -> list[str]:
    return [MARKER + word[0]] + list(word[1:])


def _apply_merge(symbols: list[str], left: str, right: str) -> list[str]:
    # left-to-right scan; a freshly merged token may pair with what follows
    out: list[str] = []
    i = 0
    while i < len(symbols):
        if i + 1 < len(symbols) and symbols[i] == left and symbols[i + 1] == right:
            out.append(left + right)
            i += 2
        else:
            out.append(symbols[i])
            i += 1
    return out


def train_bpe(corpus: Iterable[str], target_size: int) -> SubwordVocab:
    """Learn a vocabulary of ``target_size`` tokens from whitespace words.

    Merging stops early when no adjacent pair occurs at least twice, in
    which case the vocabulary stays below the requested size.  Frequency
    ties pick the lexicographically smallest concatenated token.
    """
    word_counts: Counter[str] = Counter()
    for line in corpus:
        word_counts.update(line.split())
    if not word_counts:
        raise ConfigurationError("cannot train a vocabulary on an empty corpus")

    segmented = {w: _word_symbols(w) for w in word_counts}
    # word-start forms first, then plain characters, each group sorted
    base = sorted({s for syms in segmented.values() for s in syms},
                  key=lambda s: (not s.startswith(MARKER), s))
    minimum = len(base) + 2
    if target_size < minimum:
        raise ConfigurationError(
            f"target_size {target_size} below minimum feasible size {minimum} "
            f"({len(base)} base symbols plus blank and unk)")

    tokens = [BLANK_TOKEN, UNK_TOKEN] + base
    merges: list[tuple[str, str]] = []
    while len(tokens) < target_size:
        pair_counts: Counter[tuple[str, str]] = Counter()
        for word, syms in segmented.items():
            n = word_counts[word]
            for pair in zip(syms, syms[1:]):
                pair_counts[pair] += n
        eligible = [(count, left + right, (left, right))
                    for (left, right), count in pair_counts.items() if count >= 2]
        if not eligible:
            break
        _, _, (left, right) = min(eligible, key=lambda e: (-e[0], e[1]))
        merges.append((left, right))
        tokens.append(left + right)
        for word, syms in segmented.items():
            segmented[word] = _apply_merge(syms, left, right)
    return SubwordVocab(tokens=tokens, merges=merges, target_size=target_size)


def _segment_word(word: str, vocab: SubwordVocab) -> list[int]:
    cached = vocab._word_cache.get(word)
    if cached is not None:
        return cached
    symbols = _word_symbols(word)
    for left, right in vocab.merges:
        if len(symbols) < 2:
            break
        symbols = _apply_merge(symbols, left, right)
    ids = [vocab.id_of.get(s, UNK_ID) for s in symbols]
    vocab._word_cache[word] = ids
    return ids


def segment(text: str, vocab: SubwordVocab) -> list[int]:
    """Tokenize a line of whitespace-separated words into ids."""
    ids: list[int] = []
    for word in text.split():
        ids.extend(_segment_word(word, vocab))
    return ids


def detokenize(ids: Sequence[int], vocab: SubwordVocab) -> str:
    """Invert segmentation; markers become separators, unk stays literal."""
    pieces = []
    for i in ids:
        if i == BLANK_ID:
            raise ContractError("blank id is not a text token")
        if not 0 <= i < vocab.size:
            raise ContractError(f"token id {i} outside vocabulary of {vocab.size}")
        pieces.append(vocab.tokens[i])
    return "".join(pieces).replace(MARKER, " ").lstrip(" ")


@dataclass
class HierTargets:
    """One utterance's target ids at every vocabulary level, coarse to fine."""

    levels: list[list[int]]

    @property
    def lengths(self) -> list[int]:
        return [len(level) for level in self.levels]


def build_hierarchy(corpus: Sequence[str],
                    sizes: Sequence[int]) -> tuple[list[SubwordVocab], list[HierTargets]]:
    """Train one vocabulary per size and segment every line at each level."""
    if not sizes:
        raise ConfigurationError("at least one vocabulary size is required")
    vocabs = [train_bpe(corpus, size) for size in sizes]
    targets = [HierTargets(levels=[segment(line, v) for v in vocabs])
               for line in corpus]
    return vocabs, targets


def mean_lengths(targets: Sequence[HierTargets]) -> list[float]:
    """Average segmented length per level; reported, not asserted."""
    if not targets:
        return []
    n_levels = len(targets[0].levels)
    sums = [0.0] * n_levels
    for t in targets:
        for k, level in enumerate(t.levels):
            sums[k] += len(level)
    return [s / len(targets) for s in sums]


# ---------------------------------------------------------------------------
# on-disk format: id<TAB>token lines, a #MERGES sentinel, then merge pairs


def save_vocab(path, vocab: SubwordVocab) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for i, token in enumerate(vocab.tokens):
            fh.write(f"{i}\t{token}\n")
        fh.write("#MERGES\n")
        for left, right in vocab.merges:
            fh.write(f"{left}\t{right}\n")


def load_vocab(path) -> SubwordVocab:
    tokens: list[str] = []
    merges: list[tuple[str, str]] = []
    in_merges = False
    with open(path, encoding="utf-8") as fh:
        for raw in fh:
            line = raw.rstrip("\n")
            if not line:
                continue
            if line == "#MERGES":
                in_merges = True
                continue
            left, _, right = line.partition("\t")
            if in_merges:
                merges.append((left, right))
            else:
                if int(left) != len(tokens):
                    raise ContractError(f"vocabulary ids out of order at {line!r}")
                tokens.append(right)
    if not tokens:
        raise ContractError(f"no tokens found in vocabulary file {path}")
    return SubwordVocab(tokens=tokens, merges=merges, target_size=len(tokens))
