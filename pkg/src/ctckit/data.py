"""On-disk corpus layout: feature files and manifests.

A feature file is the magic bytes "HFEA", the frame count T and feature
width D as little-endian uint32, then T*D little-endian float32 values
in row-major order.  A manifest is one utterance per line:

    <utt-id> TAB <transcript> TAB <feature-path>

with feature paths relative to the manifest's directory.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ContractError

FEATURE_MAGIC = b"HFEA"


def write_features(path, features: np.ndarray) -> None:
    features = np.asarray(features, dtype=np.float32)
    if features.ndim != 2:
        raise ContractError(f"features must be (T, D), got shape {features.shape}")
    T, D = features.shape
    with open(path, "wb") as fh:
        fh.write(FEATURE_MAGIC)
        fh.write(struct.pack("<II", T, D))
        fh.write(np.ascontiguousarray(features).tobytes())


def read_features(path) -> np.ndarray:
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != FEATURE_MAGIC:
            raise ContractError(f"{path}: not a feature file (magic {magic!r})")
        header = fh.read(8)
        if len(header) != 8:
            raise ContractError(f"{path}: truncated feature header")
        T, D = struct.unpack("<II", header)
        payload = fh.read()
    expected = T * D * 4
    if len(payload) != expected:
        raise ContractError(
            f"{path}: expected {expected} payload bytes for {T}x{D}, got {len(payload)}")
    return np.frombuffer(payload, dtype="<f4").reshape(T, D).copy()


@dataclass
class Utterance:
    utt_id: str
    text: str
    feature_path: Path

    def features(self) -> np.ndarray:
        return read_features(self.feature_path)


def write_manifest(path, rows: list[tuple[str, str, str]]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for utt_id, text, feature_path in rows:
            fh.write(f"{utt_id}\t{text}\t{feature_path}\n")


def read_manifest(path) -> list[Utterance]:
    base = Path(path).parent
    utts: list[Utterance] = []
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 3:
                raise ContractError(f"{path}:{lineno}: expected 3 tab fields")
            utt_id, text, feature_path = parts
            utts.append(Utterance(utt_id, text, base / feature_path))
    return utts


def load_split(data_dir, split: str) -> list[Utterance]:
    manifest = Path(data_dir) / f"{split}.tsv"
    if not manifest.exists():
        raise ContractError(f"no manifest for split {split!r} at {manifest}")
    return read_manifest(manifest)
