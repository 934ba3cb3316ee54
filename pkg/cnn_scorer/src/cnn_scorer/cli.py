"""Command line: train a scorer checkpoint, score exported volumes.

The score subcommand speaks the labeling engine's external-scorer
protocol, so a trained checkpoint plugs straight into
`partwise score --backend external --cmd
"python3 -m cnn_scorer score --checkpoint model.pt --volumes {volumes}
--header {header} --out {out}"`.
"""

from __future__ import annotations

import argparse
import sys
import traceback

import numpy as np

from .data import Dataset, build_dataset
from .errors import ScorerError, TrainingError
from .formats import RESOLUTION, read_header, read_truth, read_volumes, write_scores
from .model import check_volume_batch, predict
from .train import TrainConfig, load_checkpoint, save_checkpoint, train


def cmd_train(args) -> int:
    resolution, volumes = read_volumes(args.volumes)
    if resolution != RESOLUTION:
        raise TrainingError(f"training volumes must be {RESOLUTION}^3, "
                            f"got {resolution}^3")
    k, hyp_ids = read_header(args.header)
    if args.k is not None and args.k != k:
        raise TrainingError(f"--k {args.k} disagrees with the header K={k}")
    truth = read_truth(args.truth)
    dataset = build_dataset(volumes, hyp_ids, truth, k)

    holdout_ids: list[int] = []
    if args.holdout > 0:
        if not args.scores_out:
            raise TrainingError("--holdout needs --scores-out")
        rng = np.random.default_rng(args.seed)
        n = len(dataset)
        count = max(1, int(round(args.holdout * n)))
        if count >= n:
            raise TrainingError("holdout fraction leaves nothing to train on")
        held = np.sort(rng.choice(n, size=count, replace=False))
        mask = np.ones(n, dtype=bool)
        mask[held] = False
        holdout_ids = [hyp_ids[i] for i in held]
        holdout_volumes = dataset.volumes[held]
        dataset = Dataset(dataset.volumes[mask], dataset.labels[mask],
                          dataset.confidences[mask], k)

    config = TrainConfig(iterations=args.iterations, batch_size=args.batch,
                         learning_rate=args.lr, seed=args.seed,
                         orientation=not args.no_orientation,
                         stop_error=args.stop_error)
    result = train(dataset, config)
    save_checkpoint(args.out, result.model)
    print(f"trained {len(result.losses)} iterations, "
          f"final training error {result.final_error:.3f} -> {args.out}")

    if holdout_ids:
        probs, confs = predict(result.model, holdout_volumes)
        write_scores(args.scores_out, holdout_ids, probs, confs)
        print(f"{len(holdout_ids)} held-out scores -> {args.scores_out}")
    return 0


def cmd_score(args) -> int:
    model = load_checkpoint(args.checkpoint)
    resolution, volumes = read_volumes(args.volumes)
    k, hyp_ids = read_header(args.header)
    if k != model.num_labels:
        raise TrainingError(f"checkpoint was trained for K={model.num_labels}, "
                            f"header says K={k}")
    if volumes.shape[0] != len(hyp_ids):
        raise TrainingError("volume count disagrees with the header ids")
    probs, confs = predict(model, check_volume_batch(volumes))
    write_scores(args.out, hyp_ids, probs, confs)
    print(f"{len(hyp_ids)} scores -> {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cnn_scorer",
        description="Volumetric CNN scorer for part hypotheses.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="fit a checkpoint on exported volumes")
    p.add_argument("--volumes", required=True, help="MCV1 training volumes")
    p.add_argument("--header", required=True, help="K and hypothesis ids")
    p.add_argument("--truth", required=True, help="ground-truth JSONL")
    p.add_argument("--out", required=True, help="checkpoint path")
    p.add_argument("--k", type=int, default=None,
                   help="expected label count; must match the header")
    p.add_argument("--iterations", type=int, default=200)
    p.add_argument("--batch", type=int, default=64)
    p.add_argument("--lr", type=float, default=0.001)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--no-orientation", action="store_true",
                   help="disable the four-orientation augmentation")
    p.add_argument("--stop-error", type=float, default=None,
                   help="stop once training error reaches this")
    p.add_argument("--holdout", type=float, default=0.0,
                   help="fraction of hypotheses scored instead of trained on")
    p.add_argument("--scores-out", default=None,
                   help="where the held-out scores go")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("score", help="score volumes with a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--volumes", required=True)
    p.add_argument("--header", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_score)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ScorerError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except FileNotFoundError as exc:
        print(f"error: missing file: {exc.filename or exc}", file=sys.stderr)
        return 2
    except Exception:
        traceback.print_exc()
        return 1
