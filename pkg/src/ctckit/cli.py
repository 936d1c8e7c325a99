"""Command line entry points.

    ctckit gen-data     --spec task.txt --out data/
    ctckit build-vocab  --corpus text.txt --sizes 40,120,400 --out vocabs/
    ctckit train        --config train.txt --data data/ --out run/
    ctckit eval         --ckpt run/epoch010.ckpt --data data/ --split dev
    ctckit decode       --ckpt run/epoch010.ckpt --input utt.fea
    ctckit avg          --ckpts run/epoch*.ckpt --n 5 --out run/avg.ckpt
    ctckit dump-attn    --ckpt run/avg.ckpt --data data/ --utt dev-00500 --out maps/
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .checkpoint import average_checkpoints, save_checkpoint
from .config import as_int_list
from .errors import CheckpointError
from .evaluate import dump_attention, evaluate_checkpoint, transcribe_features
from .subword import save_vocab, train_bpe
from .synthetic import SyntheticTask, generate_synthetic_corpus
from .train import TrainingConfig, read_checkpoint_index, train


def _cmd_gen_data(args) -> int:
    task = SyntheticTask.from_file(args.spec)
    counts = generate_synthetic_corpus(task, args.out)
    for split, count in counts.items():
        print(f"{split}: {count} utterances")
    return 0


def _cmd_build_vocab(args) -> int:
    with open(args.corpus, encoding="utf-8") as fh:
        corpus = [line.rstrip("\n") for line in fh if line.strip()]
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for k, size in enumerate(as_int_list(args.sizes, "--sizes"), start=1):
        vocab = train_bpe(corpus, size)
        save_vocab(out / f"vocab{k}.txt", vocab)
        print(f"vocab{k}.txt: {vocab.size} tokens, {len(vocab.merges)} merges")
    return 0


def _cmd_train(args) -> int:
    config = TrainingConfig.from_file(args.config)
    metrics = train(config, args.data, args.out)
    for row in metrics.rows[-(config.levels + 2):]:
        print(row)
    return 0


def _cmd_eval(args) -> int:
    result = evaluate_checkpoint(args.ckpt, args.data, args.split)
    for k, value in enumerate(result.per_level_loss, start=1):
        print(f"split={args.split} level={k} loss={value:.6f}")
    print(f"split={args.split} wer={result.wer:.6f}")
    return 0


def _cmd_decode(args) -> int:
    print(transcribe_features(args.ckpt, args.input))
    return 0


def _cmd_avg(args) -> int:
    paths = [Path(p) for p in args.ckpts]
    n = args.n if args.n is not None else len(paths)
    dev_losses = None
    if n < len(paths):
        # rank by the dev losses the training run recorded next to them
        run_dirs = {p.parent for p in paths}
        if len(run_dirs) != 1:
            raise CheckpointError(
                "selecting the best n checkpoints requires them to share a run "
                "directory with a checkpoints.tsv index")
        index = {name: loss for _, name, loss, _ in
                 read_checkpoint_index(run_dirs.pop())}
        try:
            dev_losses = [index[p.name] for p in paths]
        except KeyError as missing:
            raise CheckpointError(f"checkpoint {missing} not in the run index")
    averaged = average_checkpoints(paths, n=n, dev_losses=dev_losses)
    save_checkpoint(args.out, averaged)
    print(f"averaged {min(n, len(paths))} of {len(paths)} checkpoints -> {args.out}")
    return 0


def _cmd_dump_attn(args) -> int:
    written = dump_attention(args.ckpt, args.data, args.utt, args.out)
    for path in written:
        print(path)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ctckit",
                                     description="CTC objective comparison toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate a synthetic corpus")
    p.add_argument("--spec", required=True, help="task spec (key=value file)")
    p.add_argument("--out", required=True, help="output corpus directory")
    p.set_defaults(fn=_cmd_gen_data)

    p = sub.add_parser("build-vocab", help="train subword vocabularies")
    p.add_argument("--corpus", required=True, help="text file, one line per utterance")
    p.add_argument("--sizes", required=True, help="comma-separated vocabulary sizes")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(fn=_cmd_build_vocab)

    p = sub.add_parser("train", help="train a model")
    p.add_argument("--config", required=True, help="training config (key=value file)")
    p.add_argument("--data", required=True, help="corpus directory from gen-data")
    p.add_argument("--out", required=True, help="run directory to create")
    p.set_defaults(fn=_cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a split")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--split", required=True, choices=["dev", "test"])
    p.set_defaults(fn=_cmd_eval)

    p = sub.add_parser("decode", help="decode one feature file")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--input", required=True, help="feature file")
    p.set_defaults(fn=_cmd_decode)

    p = sub.add_parser("avg", help="average checkpoints")
    p.add_argument("--ckpts", required=True, nargs="+", help="checkpoint files")
    p.add_argument("--n", type=int, default=None,
                   help="keep only the n with the best recorded dev loss")
    p.add_argument("--out", required=True)
    p.set_defaults(fn=_cmd_avg)

    p = sub.add_parser("dump-attn", help="dump attention maps and posteriors")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True, help="corpus directory")
    p.add_argument("--utt", required=True, help="utterance id")
    p.add_argument("--out", required=True)
    p.set_defaults(fn=_cmd_dump_attn)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except (ValueError, KeyError, OSError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
