"""Train the four objectives on one synthetic task and tabulate dev results.

Each objective gets the same data, the same encoder budget, and the same
epoch count, so the final-level dev loss and dev WER columns are directly
comparable.  Defaults are sized for a quick single-core run; scale up with
--epochs / --train / --seeds for a more serious comparison.
"""

import argparse
import statistics
import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src"))

from ctckit.evaluate import evaluate_checkpoint
from ctckit.synthetic import SyntheticTask, generate_synthetic_corpus
from ctckit.train import TrainingConfig, read_checkpoint_index, train

OBJECTIVE_VOCABS = {
    "ctc": (400,),
    "sc-ctc": (400, 400, 400),
    "hc-ctc": (40, 120, 400),
    "para-ctc": (40, 120, 400),
}


def parse_args(argv):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--out", required=True, help="directory for runs and summary")
    parser.add_argument("--data", help="existing corpus dir; generated if omitted")
    parser.add_argument("--epochs", type=int, default=8)
    parser.add_argument("--train", type=int, default=120, help="training utterances when generating")
    parser.add_argument("--dev", type=int, default=40, help="dev utterances when generating")
    parser.add_argument("--seeds", default="0", help="comma-separated model seeds")
    parser.add_argument("--layers", type=int, default=6)
    parser.add_argument("--d-model", type=int, default=64)
    return parser.parse_args(argv)


def make_config(objective, seed, args):
    sizes = OBJECTIVE_VOCABS[objective]
    return TrainingConfig(
        objective=objective,
        layers=args.layers,
        levels=len(sizes),
        d_model=args.d_model,
        n_heads=4,
        d_ff=2 * args.d_model,
        vocab_sizes=sizes,
        conditioning=objective in ("sc-ctc", "hc-ctc"),
        epochs=args.epochs,
        batch_size=16,
        warmup_steps=200,
        lr_factor=1.0,
        seed=seed,
    )


def final_dev_numbers(run_dir, data_dir):
    index = read_checkpoint_index(run_dir)
    last = run_dir / index[-1][1]
    metrics = evaluate_checkpoint(last, data_dir, "dev")
    return metrics.per_level_loss[-1], metrics.wer


def main(argv=None):
    args = parse_args(argv)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if args.data:
        data = Path(args.data)
    else:
        data = out / "data"
        if not (data / "train.tsv").exists():
            task = SyntheticTask(n_train=args.train, n_dev=args.dev,
                                 n_test=args.dev, seed=0)
            generate_synthetic_corpus(task, data)
            print(f"generated corpus under {data}")

    seeds = [int(s) for s in args.seeds.split(",")]
    rows = []
    for objective in OBJECTIVE_VOCABS:
        losses, wers = [], []
        for seed in seeds:
            run = out / f"{objective}-seed{seed}"
            if not (run / "checkpoints.tsv").exists():
                print(f"training {objective} seed={seed} ...", flush=True)
                train(make_config(objective, seed, args), data, run)
            loss, wer = final_dev_numbers(run, data)
            losses.append(loss)
            wers.append(wer)
        rows.append((objective, statistics.median(losses),
                     statistics.median(wers), losses, wers))

    header = f"{'objective':<10} {'dev loss':>10} {'dev WER':>9}   per-seed losses"
    print()
    print(header)
    print("-" * len(header))
    lines = [header]
    for objective, loss, wer, losses, _ in rows:
        detail = " ".join(f"{v:.4f}" for v in losses)
        line = f"{objective:<10} {loss:>10.4f} {wer:>9.4f}   {detail}"
        print(line)
        lines.append(line)
    (out / "summary.txt").write_text("\n".join(lines) + "\n")
    print(f"\nwrote {out / 'summary.txt'}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
