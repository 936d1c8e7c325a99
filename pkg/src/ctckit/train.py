"""Training configuration, metrics stream, and the epoch loop.

A run directory collects everything needed to use the model later:
the resolved config, one vocabulary file per level, per-epoch
checkpoints, a checkpoint index (epoch, file, dev loss, dev WER), and
an append-only metrics stream of key=value lines.  Identical config
and data reproduce an identical stream, except for elapsed-time lines.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np

from .config import as_bool, as_float, as_int, as_int_list, read_kv, write_kv
from .data import load_split
from .encoder import EncoderConfig, encode, init_params
from .errors import ConfigurationError
from .evaluate import TAPPED_OBJECTIVES, evaluate_split, targets_for
from .objectives import OBJECTIVES, combine_reports, run_objective
from .optim import adam_state, adam_step, noam_lr
from .subword import save_vocab, train_bpe
from .checkpoint import save_checkpoint
from .tensor import backward, using_dtype, zero_grads


@dataclass
class TrainingConfig:
    objective: str = "hc-ctc"
    layers: int = 6
    levels: int = 3
    d_model: int = 64
    n_heads: int = 4
    d_ff: int = 128
    vocab_sizes: tuple[int, ...] = (40, 120, 400)
    conditioning: bool = True
    frame_stack: int = 1
    dropout: float = 0.0
    epochs: int = 50
    batch_size: int = 16
    warmup_steps: int = 1000
    lr_factor: float = 1.0
    checkpoint_average: int = 5
    seed: int = 0
    precision: str = "float32"
    stop_wer: float = -1.0          # negative disables early stopping

    def __post_init__(self):
        self.vocab_sizes = tuple(int(v) for v in self.vocab_sizes)
        self.validate()

    def validate(self) -> None:
        if self.objective not in OBJECTIVES:
            raise ConfigurationError(
                f"unknown objective {self.objective!r}; choose from {OBJECTIVES}")
        if self.objective == "ctc":
            if self.levels != 1:
                raise ConfigurationError("plain ctc uses exactly one level")
        elif self.levels < 2:
            raise ConfigurationError(
                f"{self.objective} needs at least two levels, got {self.levels}")
        if len(self.vocab_sizes) != self.levels:
            raise ConfigurationError(
                f"{self.levels} levels need {self.levels} vocab sizes, "
                f"got {self.vocab_sizes}")
        if self.objective == "sc-ctc" and len(set(self.vocab_sizes)) != 1:
            raise ConfigurationError("sc-ctc shares one vocabulary across levels")
        if self.objective == "hc-ctc" and \
                any(a > b for a, b in zip(self.vocab_sizes, self.vocab_sizes[1:])):
            raise ConfigurationError("hc-ctc vocab sizes must be nondecreasing")
        if self.conditioning and self.objective not in TAPPED_OBJECTIVES:
            raise ConfigurationError(
                f"conditioning applies only to {TAPPED_OBJECTIVES}")
        if self.epochs < 0 or self.batch_size < 1 or self.warmup_steps < 1:
            raise ConfigurationError("epochs >= 0, batch_size >= 1, warmup >= 1")
        if self.precision not in ("float32", "float64"):
            raise ConfigurationError(f"precision must be float32/float64, "
                                     f"got {self.precision!r}")
        if self.checkpoint_average < 1:
            raise ConfigurationError("checkpoint_average must be >= 1")
        self.encoder_config()  # surfaces layer/level/head inconsistencies

    def encoder_config(self, built_sizes: tuple[int, ...] | None = None) -> EncoderConfig:
        # head widths follow the vocabularies actually built, which can be
        # smaller than the configured targets when merges run out
        return EncoderConfig(layers=self.layers, levels=self.levels,
                             d_model=self.d_model, n_heads=self.n_heads,
                             d_ff=self.d_ff,
                             level_vocab_sizes=built_sizes or self.vocab_sizes,
                             conditioning=self.conditioning,
                             frame_stack=self.frame_stack, dropout=self.dropout)

    @classmethod
    def from_file(cls, path) -> "TrainingConfig":
        raw = read_kv(path)
        values = {}
        for f in fields(cls):
            if f.name not in raw:
                continue
            text = raw.pop(f.name)
            if f.name == "vocab_sizes":
                values[f.name] = as_int_list(text, f.name)
            elif f.name == "conditioning":
                values[f.name] = as_bool(text, f.name)
            elif f.name in ("dropout", "lr_factor", "stop_wer"):
                values[f.name] = as_float(text, f.name)
            elif f.name in ("objective", "precision"):
                values[f.name] = text
            else:
                values[f.name] = as_int(text, f.name)
        if raw:
            raise ConfigurationError(f"unknown config keys: {sorted(raw)}")
        return cls(**values)

    def to_file(self, path) -> None:
        out = {}
        for f in fields(self):
            value = getattr(self, f.name)
            if f.name == "vocab_sizes":
                value = ",".join(str(v) for v in value)
            elif f.name == "conditioning":
                value = "true" if value else "false"
            out[f.name] = value
        write_kv(path, out)


class Metrics:
    """Append-only stream of key=value lines, flushed as written."""

    def __init__(self, path=None, header: dict | None = None):
        self.rows: list[str] = []
        self._fh = open(path, "w", encoding="utf-8") if path is not None else None
        if header:
            pairs = " ".join(f"{k}={v}" for k, v in header.items())
            self._emit(f"# run {pairs}")

    def _emit(self, line: str) -> None:
        self.rows.append(line)
        if self._fh is not None:
            self._fh.write(line + "\n")
            self._fh.flush()

    def loss(self, epoch: int, split: str, level: int, value: float) -> None:
        self._emit(f"epoch={epoch} split={split} level={level} loss={value:.6f}")

    def wer(self, epoch: int, split: str, value: float) -> None:
        self._emit(f"epoch={epoch} split={split} wer={value:.6f}")

    def infeasible(self, epoch: int, split: str, level: int, count: int) -> None:
        self._emit(f"epoch={epoch} split={split} level={level} infeasible={count}")

    def elapsed(self, epoch: int, seconds: float) -> None:
        self._emit(f"epoch={epoch} elapsed={seconds:.2f}")

    def close(self) -> None:
        if self._fh is not None:
            self._fh.close()
            self._fh = None


class TrainingDiverged(RuntimeError):
    pass


def build_vocabularies(texts, sizes):
    """One vocabulary per size, deduplicating repeated sizes."""
    cache = {}
    vocabs = []
    for size in sizes:
        if size not in cache:
            cache[size] = train_bpe(texts, size)
        vocabs.append(cache[size])
    return vocabs


def _batches(order: np.ndarray, batch_size: int) -> list[np.ndarray]:
    return [order[i:i + batch_size] for i in range(0, len(order), batch_size)]


def train(config: TrainingConfig, data_dir, out_dir) -> Metrics:
    """Run the epoch loop and fill a run directory.

    Returns the metrics stream.  Raises TrainingDiverged when a batch
    loss stops being finite, naming the utterances in that batch.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    train_utts = load_split(data_dir, "train")
    dev_utts = load_split(data_dir, "dev")
    train_texts = [u.text for u in train_utts]
    dev_texts = [u.text for u in dev_utts]

    vocabs = build_vocabularies(train_texts, config.vocab_sizes)
    for k, vocab in enumerate(vocabs, start=1):
        save_vocab(out_dir / f"vocab{k}.txt", vocab)
    config.to_file(out_dir / "config.txt")

    train_targets = targets_for(train_texts, vocabs)
    dev_targets = targets_for(dev_texts, vocabs)

    header = {f.name: getattr(config, f.name) for f in fields(config)}
    header["vocab_sizes"] = ",".join(str(v) for v in config.vocab_sizes)
    metrics = Metrics(out_dir / "metrics.txt", header=header)

    enc_config = config.encoder_config(tuple(v.size for v in vocabs))
    taps = config.objective in TAPPED_OBJECTIVES
    start = time.monotonic()
    with using_dtype(config.precision):
        train_feats = [u.features().astype(config.precision) for u in train_utts]
        dev_feats = [u.features().astype(config.precision) for u in dev_utts]
        feature_dim = train_feats[0].shape[1] if train_feats else 0
        params = init_params(enc_config, feature_dim, config.objective,
                             seed=config.seed)
        state = adam_state(params)
        rng = np.random.default_rng(config.seed)
        dropout_rng = np.random.default_rng(config.seed + 1) \
            if config.dropout > 0 else None

        # length-sorted batches, order reshuffled every epoch
        sorted_idx = np.argsort([f.shape[0] for f in train_feats], kind="stable")
        fixed_batches = _batches(sorted_idx, config.batch_size)

        if config.epochs == 0:
            # nothing trained: save the initialization and stop
            save_checkpoint(out_dir / "epoch000.ckpt", params)
            metrics.close()
            return metrics

        step = 0
        index_rows = []
        for epoch in range(1, config.epochs + 1):
            order = rng.permutation(len(fixed_batches))
            loss_sums = [0.0] * config.levels
            feasible = [0] * config.levels
            infeasible = [0] * config.levels
            for batch_pos in order:
                batch = fixed_batches[batch_pos]
                step += 1
                lr = noam_lr(step, config.d_model, config.warmup_steps,
                             config.lr_factor)
                zero_grads(params.values())
                reports = []
                for idx in batch:
                    enc = encode(train_feats[idx], enc_config, params,
                                 interior_taps=taps, dropout_rng=dropout_rng)
                    reports.append(run_objective(config.objective, enc,
                                                 train_targets[idx]))
                for report in reports:
                    for k in range(config.levels):
                        if report.infeasible[k]:
                            infeasible[k] += 1
                        else:
                            loss_sums[k] += report.per_level[k]
                            feasible[k] += 1
                combined = combine_reports(reports)
                if combined.total is None:
                    continue  # nothing feasible in this batch
                if not np.isfinite(combined.total_value):
                    ids = [train_utts[i].utt_id for i in batch]
                    raise TrainingDiverged(
                        f"non-finite loss at epoch {epoch} step {step} on "
                        f"{ids}; per-level {combined.per_level}")
                backward(combined.total, leaves=params.values())
                adam_step(params, {k: p.grad_view() for k, p in params.items()},
                          state, lr)

            for k in range(config.levels):
                mean = loss_sums[k] / feasible[k] if feasible[k] else float("inf")
                metrics.loss(epoch, "train", k + 1, mean)
                if infeasible[k]:
                    metrics.infeasible(epoch, "train", k + 1, infeasible[k])

            dev = evaluate_split(config.objective, enc_config, params, dev_feats,
                                 dev_targets, dev_texts, vocabs[-1])
            for k, value in enumerate(dev.per_level_loss, start=1):
                metrics.loss(epoch, "dev", k, value)
            metrics.wer(epoch, "dev", dev.wer)
            metrics.elapsed(epoch, time.monotonic() - start)

            ckpt_name = f"epoch{epoch:03d}.ckpt"
            save_checkpoint(out_dir / ckpt_name, params)
            finite = [v for v in dev.per_level_loss if np.isfinite(v)]
            dev_total = sum(finite) / len(finite) if finite else float("inf")
            index_rows.append((epoch, ckpt_name, dev_total, dev.wer))
            with open(out_dir / "checkpoints.tsv", "w", encoding="utf-8") as fh:
                for row in index_rows:
                    fh.write(f"{row[0]}\t{row[1]}\t{row[2]:.6f}\t{row[3]:.6f}\n")

            if 0.0 <= config.stop_wer and dev.wer <= config.stop_wer:
                break
    metrics.close()
    return metrics


def read_checkpoint_index(run_dir) -> list[tuple[int, str, float, float]]:
    """Rows of (epoch, filename, dev loss, dev WER) written during training."""
    path = Path(run_dir) / "checkpoints.tsv"
    if not path.exists():
        raise ConfigurationError(f"no checkpoint index at {path}")
    rows = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            epoch, name, loss, wer = line.rstrip("\n").split("\t")
            rows.append((int(epoch), name, float(loss), float(wer)))
    return rows
