"""Decoding, word error rate, and whole-split evaluation."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .checkpoint import load_into
from .ctc import best_path_decode
from .data import load_split, read_features
from .encoder import EncoderConfig, encode, init_params, tap_positions
from .objectives import run_objective
from .subword import SubwordVocab, detokenize, load_vocab, segment
from .tensor import Tensor, using_dtype

TAPPED_OBJECTIVES = ("sc-ctc", "hc-ctc")


def edit_distance(ref: Sequence, hyp: Sequence) -> int:
    """Levenshtein distance with unit costs, two-row dynamic program."""
    if len(ref) < len(hyp):
        ref, hyp = hyp, ref
    previous = list(range(len(hyp) + 1))
    for i, r in enumerate(ref, start=1):
        current = [i] + [0] * len(hyp)
        for j, h in enumerate(hyp, start=1):
            current[j] = min(previous[j] + 1,          # deletion
                             current[j - 1] + 1,       # insertion
                             previous[j - 1] + (r != h))
        previous = current
    return previous[-1]


def edit_distance_wer(ref_words: Sequence[str], hyp_words: Sequence[str]) -> float:
    """Distance normalized by reference length; empty references count 1."""
    return edit_distance(ref_words, hyp_words) / max(1, len(ref_words))


def decode_encoder_output(enc) -> list[int]:
    """Best-path ids from the final head's posteriors."""
    logits = enc.final_logits.data
    shifted = np.exp(logits - logits.max(axis=1, keepdims=True))
    return best_path_decode(shifted / shifted.sum(axis=1, keepdims=True))


@dataclass
class SplitMetrics:
    per_level_loss: list[float]
    wer: float
    infeasible: list[int]
    n_utterances: int


def evaluate_split(objective: str, enc_config: EncoderConfig,
                   params: dict[str, Tensor], features: Sequence[np.ndarray],
                   level_targets: Sequence[Sequence[Sequence[int]]],
                   texts: Sequence[str], final_vocab: SubwordVocab) -> SplitMetrics:
    """Average per-level losses and corpus WER over one split.

    Losses average per utterance over feasible targets only.  WER is
    corpus-level: total edit distance over total reference words.
    """
    taps = objective in TAPPED_OBJECTIVES
    n_levels = enc_config.levels if objective != "ctc" else 1
    loss_sums = [0.0] * n_levels
    feasible = [0] * n_levels
    infeasible = [0] * n_levels
    distance = 0
    ref_words = 0
    for feats, targets, text in zip(features, level_targets, texts):
        enc = encode(feats, enc_config, params, interior_taps=taps)
        report = run_objective(objective, enc, targets)
        for k in range(n_levels):
            if report.infeasible[k]:
                infeasible[k] += 1
            else:
                loss_sums[k] += report.per_level[k]
                feasible[k] += 1
        hyp = detokenize(decode_encoder_output(enc), final_vocab)
        distance += edit_distance(text.split(), hyp.split())
        ref_words += len(text.split())
    losses = [loss_sums[k] / feasible[k] if feasible[k] else float("inf")
              for k in range(n_levels)]
    return SplitMetrics(per_level_loss=losses, wer=distance / max(1, ref_words),
                        infeasible=infeasible, n_utterances=len(features))


# ---------------------------------------------------------------------------
# working with saved runs


@dataclass
class LoadedRun:
    config: "TrainingConfig"
    enc_config: "EncoderConfig"
    params: dict[str, Tensor]
    vocabs: list[SubwordVocab]


def load_run(ckpt_path) -> LoadedRun:
    """Rebuild a model from a checkpoint and the run files beside it."""
    from .train import TrainingConfig  # resolved here to avoid a cycle

    ckpt_path = Path(ckpt_path)
    run_dir = ckpt_path.parent
    config = TrainingConfig.from_file(run_dir / "config.txt")
    vocabs = [load_vocab(run_dir / f"vocab{k}.txt")
              for k in range(1, config.levels + 1)]
    # head widths follow the stored vocabularies, which may have come out
    # smaller than the configured targets
    enc_config = config.encoder_config(tuple(v.size for v in vocabs))
    # feature width is implied by the stored input projection
    from .checkpoint import load_checkpoint
    stacked = load_checkpoint(ckpt_path)["input.w"].shape[0]
    feature_dim = stacked // config.frame_stack
    with using_dtype(config.precision):
        params = init_params(enc_config, feature_dim, config.objective,
                             seed=config.seed)
    load_into(params, ckpt_path)
    return LoadedRun(config=config, enc_config=enc_config, params=params,
                     vocabs=vocabs)


def targets_for(texts: Sequence[str], vocabs: Sequence[SubwordVocab]) -> list[list[list[int]]]:
    return [[segment(text, vocab) for vocab in vocabs] for text in texts]


def evaluate_checkpoint(ckpt_path, data_dir, split: str) -> SplitMetrics:
    run = load_run(ckpt_path)
    utts = load_split(data_dir, split)
    texts = [u.text for u in utts]
    with using_dtype(run.config.precision):
        features = [u.features().astype(run.config.precision) for u in utts]
        return evaluate_split(run.config.objective, run.enc_config,
                              run.params, features, targets_for(texts, run.vocabs),
                              texts, run.vocabs[-1])


def transcribe_features(ckpt_path, feature_file) -> str:
    """Decode one feature file into text with the final-level vocabulary."""
    run = load_run(ckpt_path)
    feats = read_features(feature_file)
    with using_dtype(run.config.precision):
        enc = encode(feats.astype(run.config.precision), run.enc_config,
                     run.params,
                     interior_taps=run.config.objective in TAPPED_OBJECTIVES)
        return detokenize(decode_encoder_output(enc), run.vocabs[-1])


def dump_attention(ckpt_path, data_dir, utt_id: str, out_dir) -> list[Path]:
    """Write attention weights and tapped posteriors for one utterance.

    One text matrix per layer and head (attn_layerLL_headH.txt) plus one
    posterior matrix per loss level tagged with its tap layer.  Raises
    KeyError when the utterance id is in no split of the corpus.
    """
    run = load_run(ckpt_path)
    utt = None
    for split in ("train", "dev", "test"):
        manifest = Path(data_dir) / f"{split}.tsv"
        if not manifest.exists():
            continue
        for candidate in load_split(data_dir, split):
            if candidate.utt_id == utt_id:
                utt = candidate
                break
        if utt is not None:
            break
    if utt is None:
        raise KeyError(f"utterance {utt_id!r} not found in any split under {data_dir}")

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    config = run.config
    enc_config = run.enc_config
    with using_dtype(config.precision):
        enc = encode(utt.features().astype(config.precision), enc_config, run.params,
                     interior_taps=config.objective in TAPPED_OBJECTIVES,
                     want_attention=True)
    written: list[Path] = []
    for layer, weights in enc.attention_maps:
        for head in range(weights.shape[0]):
            path = out_dir / f"attn_layer{layer:02d}_head{head + 1}.txt"
            np.savetxt(path, weights[head], fmt="%.8e")
            written.append(path)
    if config.objective in TAPPED_OBJECTIVES:
        interior, _ = tap_positions(enc_config.layers, enc_config.levels)
        for level, layer in enumerate(interior, start=1):
            path = out_dir / f"posteriors_level{level}_layer{layer:02d}.txt"
            np.savetxt(path, enc.tap_posteriors[level].data, fmt="%.8e")
            written.append(path)
    logits = enc.final_logits.data
    shifted = np.exp(logits - logits.max(axis=1, keepdims=True))
    final_post = shifted / shifted.sum(axis=1, keepdims=True)
    path = out_dir / f"posteriors_level{enc_config.levels}_layer{enc_config.layers:02d}.txt"
    np.savetxt(path, final_post, fmt="%.8e")
    written.append(path)
    return written
