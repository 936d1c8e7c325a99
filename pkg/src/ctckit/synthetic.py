"""Synthetic sequence recognition corpora.

Every character (letters plus the space) owns a fixed random prototype
vector; an utterance's features are frames_per_symbol copies of each
character's prototype in order, plus i.i.d. Gaussian noise.  Words are
pseudo-words built from vowel-led syllables (a vowel, then consonant-
vowel pairs), which keeps the set of word-initial characters small so
that small first-level subword vocabularies stay trainable.

Everything is driven by one seed: the same task spec always produces
the same inventory, transcripts, and feature bytes.
"""

from __future__ import annotations

import string
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np

from .config import read_kv, write_kv
from .data import write_features, write_manifest
from .errors import ConfigurationError

VOWELS = "aeiou"
SPACE = " "


@dataclass
class SyntheticTask:
    alphabet_size: int = 26
    n_words: int = 500
    min_words: int = 3
    max_words: int = 7
    min_syllables: int = 1
    max_syllables: int = 3
    frames_per_symbol: int = 4
    feature_dim: int = 16
    noise_sigma: float = 0.1
    n_train: int = 500
    n_dev: int = 100
    n_test: int = 100
    seed: int = 0

    def __post_init__(self):
        if not 6 <= self.alphabet_size <= 26:
            raise ConfigurationError(
                f"alphabet_size must be in [6, 26], got {self.alphabet_size}")
        if self.n_words < 1:
            raise ConfigurationError("word inventory must not be empty")
        if not 1 <= self.min_words <= self.max_words:
            raise ConfigurationError("need 1 <= min_words <= max_words")
        if not 1 <= self.min_syllables <= self.max_syllables:
            raise ConfigurationError("need 1 <= min_syllables <= max_syllables")
        if self.frames_per_symbol < 1:
            raise ConfigurationError("frames_per_symbol must be >= 1")
        if self.feature_dim < 1:
            raise ConfigurationError("feature_dim must be >= 1")
        if self.noise_sigma < 0:
            raise ConfigurationError("noise_sigma must be >= 0")

    @property
    def alphabet(self) -> str:
        return string.ascii_lowercase[: self.alphabet_size]

    @classmethod
    def from_file(cls, path) -> "SyntheticTask":
        known = {f.name: f.type for f in fields(cls)}
        values = {}
        for key, raw in read_kv(path).items():
            if key not in known:
                raise ConfigurationError(f"unknown task key {key!r}")
            values[key] = float(raw) if key == "noise_sigma" else int(raw)
        return cls(**values)

    def to_file(self, path) -> None:
        write_kv(path, {f.name: getattr(self, f.name) for f in fields(self)})


def make_word_inventory(task: SyntheticTask, rng) -> list[str]:
    """Distinct vowel-initial pseudo-words, in draw order."""
    vowels = [c for c in task.alphabet if c in VOWELS]
    consonants = [c for c in task.alphabet if c not in VOWELS]
    if not vowels or not consonants:
        raise ConfigurationError("alphabet must contain vowels and consonants")
    words: list[str] = []
    seen: set[str] = set()
    attempts = 0
    budget = 1000 * task.n_words
    while len(words) < task.n_words:
        attempts += 1
        if attempts > budget:
            raise ConfigurationError(
                f"could not draw {task.n_words} distinct words; shrink the inventory")
        n_syllables = int(rng.integers(task.min_syllables, task.max_syllables + 1))
        word = rng.choice(vowels)
        for _ in range(n_syllables):
            word += rng.choice(consonants) + rng.choice(vowels)
        if word not in seen:
            seen.add(word)
            words.append(word)
    return words


def make_prototypes(task: SyntheticTask, rng) -> dict[str, np.ndarray]:
    return {symbol: rng.normal(0.0, 1.0, size=task.feature_dim)
            for symbol in task.alphabet + SPACE}


def render_features(text: str, prototypes: dict[str, np.ndarray],
                    task: SyntheticTask, rng) -> np.ndarray:
    """frames_per_symbol copies of each character's prototype, plus noise."""
    rows = np.stack([prototypes[c] for c in text for _ in range(task.frames_per_symbol)])
    noise = rng.normal(0.0, task.noise_sigma, size=rows.shape)
    return (rows + noise).astype(np.float32)


def generate_synthetic_corpus(task: SyntheticTask, out_dir) -> dict[str, int]:
    """Write train/dev/test manifests and feature files under out_dir.

    Returns the utterance count per split.  Deterministic in the task
    seed, including feature bytes.
    """
    out_dir = Path(out_dir)
    feat_dir = out_dir / "feats"
    feat_dir.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(task.seed)
    inventory = make_word_inventory(task, rng)
    prototypes = make_prototypes(task, rng)

    counts = {"train": task.n_train, "dev": task.n_dev, "test": task.n_test}
    utt_index = 0
    for split, count in counts.items():
        rows = []
        for _ in range(count):
            utt_id = f"{split}-{utt_index:05d}"
            utt_index += 1
            n_words = int(rng.integers(task.min_words, task.max_words + 1))
            text = " ".join(inventory[int(rng.integers(len(inventory)))]
                            for _ in range(n_words))
            features = render_features(text, prototypes, task, rng)
            rel = f"feats/{utt_id}.fea"
            write_features(out_dir / rel, features)
            rows.append((utt_id, text, rel))
        write_manifest(out_dir / f"{split}.tsv", rows)
    task.to_file(out_dir / "task.txt")
    return counts
