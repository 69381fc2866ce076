"""Command line surface for the grounding pipeline.

Subcommands cover the full workflow: generate a synthetic scenario, link
detections into tube proposals, train the matcher, evaluate it, ground a
single video, dump attention weights, and run the gradient checker.

Exit codes: 0 success, 1 usage error, 2 data or contract error.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .autodiff import grad_check
from .errors import TubeGrounderError
from .evaluation import attention_dump, evaluate, ground, score_distribution
from .features import (
    SentenceMatrix,
    load_dataset,
    load_embeddings,
    load_proposals,
    save_proposals,
)
from .interactor import InteractorDims, InteractorParams
from .linking import LinkConfig, extract_proposals
from .pipeline import make_eval_items, make_training_examples
from .synth import SynthConfig, generate, write_scenario
from .training import TrainConfig, TrainingExample, batch_loss, train

__all__ = ["main"]


class UsageError(Exception):
    pass


class Parser(argparse.ArgumentParser):
    # Usage problems must exit 1, not argparse's default 2.
    def error(self, message):
        raise UsageError(message)


def _eta_list(text: str) -> tuple[float, ...]:
    try:
        values = tuple(float(part) for part in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad threshold list {text!r}") from None
    if not values:
        raise argparse.ArgumentTypeError("threshold list is empty")
    return values


def build_parser() -> Parser:
    parser = Parser(prog="tubegrounder", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-synth", help="generate a synthetic scenario")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--videos", type=int, default=96)
    p.add_argument("--test-videos", type=int, default=0, help="held-out split size")
    p.add_argument("--frames", type=int, default=12)
    p.add_argument("--boxes", type=int, default=5, help="boxes per frame")
    p.add_argument("--concepts", type=int, default=4)
    p.add_argument(
        "--background-concepts",
        type=int,
        default=8,
        help="distractor-only direction pool size",
    )
    p.add_argument("--feature-dim", type=int, default=16)
    p.add_argument("--vocab", type=int, default=12)
    p.add_argument("--tokens", type=int, default=6, help="tokens per sentence")
    p.add_argument("--noise", type=float, default=0.05)
    p.set_defaults(func=cmd_gen_synth)

    p = sub.add_parser("link", help="extract tube proposals from detections")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--iou-weight", type=float, default=0.2)
    p.add_argument("--max-proposals", type=int, default=30)
    p.set_defaults(func=cmd_link)

    p = sub.add_parser("train", help="train the matcher")
    p.add_argument("--data", required=True)
    p.add_argument("--proposals", required=True)
    p.add_argument("--embeddings", required=True)
    p.add_argument("--config", help="JSON file with TrainConfig fields")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--val-data", help="validation dataset for checkpoint selection")
    p.add_argument("--val-proposals", help="proposals for --val-data (defaults to --proposals)")
    p.add_argument("--max-steps", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--learning-rate", type=float)
    p.add_argument("--momentum", type=float)
    p.add_argument("--epochs", type=int)
    p.add_argument("--diversity-weight", type=float)
    p.add_argument("--margin", type=float)
    p.add_argument("--proposals-per-video", type=int)
    p.add_argument("--hidden", type=int)
    p.add_argument("--attention", type=int)
    p.add_argument("--segments", type=int)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint")
    _add_scoring_args(p)
    p.add_argument("--out", required=True, help="report JSON path")
    p.add_argument("--csv", help="optional CSV summary path")
    p.add_argument("--score-dist", help="optional score-by-overlap-decile JSON path")
    p.add_argument("--eta", type=_eta_list, default=(0.4, 0.5, 0.6))
    p.add_argument("--trials", type=int, default=1000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--threads", type=int, default=1)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ground", help="ground one video and print the chosen tube")
    _add_scoring_args(p)
    p.add_argument("--video-id", help="defaults to the first video in --data")
    p.set_defaults(func=cmd_ground)

    p = sub.add_parser("inspect-attention", help="dump per-segment token weights")
    _add_scoring_args(p)
    p.add_argument("--video-id", help="defaults to the first video in --data")
    p.add_argument("--out", required=True, help="attention dump JSON path")
    p.set_defaults(func=cmd_inspect_attention)

    p = sub.add_parser("gradcheck", help="finite-difference gradient suite")
    p.add_argument("--dims", choices=("small", "tiny"), default="small")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_gradcheck)

    return parser


def _add_scoring_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--data", required=True)
    p.add_argument("--proposals", required=True)
    p.add_argument("--embeddings", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--segments", type=int, default=20)


def cmd_gen_synth(args) -> int:
    cfg = SynthConfig(
        videos=args.videos,
        frames=args.frames,
        boxes_per_frame=args.boxes,
        concepts=args.concepts,
        background_concepts=args.background_concepts,
        feature_dim=args.feature_dim,
        vocab_size=args.vocab,
        tokens_per_sentence=args.tokens,
        noise=args.noise,
        seed=args.seed,
    )
    paths = write_scenario(generate(cfg), args.out, args.test_videos)
    for role, path in sorted(paths.items()):
        print(f"{role}: {path}")
    return 0


def cmd_link(args) -> int:
    records = load_dataset(args.data)
    cfg = LinkConfig(args.iou_weight)
    proposals = {
        record.video_id: extract_proposals(list(record.frames), cfg, args.max_proposals)
        for record in records
    }
    save_proposals(proposals, args.out)
    total = sum(len(tubes) for tubes in proposals.values())
    print(f"wrote {total} tubes for {len(proposals)} videos to {args.out}")
    return 0


_TRAIN_OVERRIDES = (
    "seed",
    "batch_size",
    "learning_rate",
    "momentum",
    "epochs",
    "diversity_weight",
    "margin",
    "proposals_per_video",
    "hidden",
    "attention",
    "segments",
)


def cmd_train(args) -> int:
    overrides = {name: getattr(args, name) for name in _TRAIN_OVERRIDES}
    if args.config:
        cfg = TrainConfig.from_json(args.config, **overrides)
    else:
        cfg = TrainConfig(**{k: v for k, v in overrides.items() if v is not None})
    records = load_dataset(args.data)
    table = load_embeddings(args.embeddings)
    proposals = load_proposals(args.proposals)
    proposals = {vid: tubes[: cfg.proposals_per_video] for vid, tubes in proposals.items()}
    examples = make_training_examples(records, proposals, table, cfg.segments)
    validation = None
    if args.val_data:
        val_proposals = (
            load_proposals(args.val_proposals) if args.val_proposals else proposals
        )
        val_proposals = {
            vid: tubes[: cfg.proposals_per_video] for vid, tubes in val_proposals.items()
        }
        validation = make_training_examples(
            load_dataset(args.val_data), val_proposals, table, cfg.segments
        )
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    result = train(
        examples,
        cfg,
        validation=validation,
        checkpoint_dir=out / "checkpoints",
        loss_log=out / "loss.csv",
        max_steps=args.max_steps,
    )
    result.params.save(out / "params.json")
    cfg.to_json(out / "config.json")
    last = result.history[-1]
    print(
        f"trained {result.steps} steps over {len(result.history)} epochs; "
        f"selected epoch {result.selected_epoch}; "
        f"final mean loss {last.mean_total:.6f} "
        f"(rank {last.mean_rank:.6f}, diversity {last.mean_div:.6f})"
    )
    if validation is not None:
        best = result.history[result.selected_epoch - 1]
        print(f"validation accuracy at selected epoch: {best.val_accuracy:.4f}")
    print(f"parameters: {out / 'params.json'}")
    return 0


def _load_items(args):
    records = load_dataset(args.data)
    table = load_embeddings(args.embeddings)
    proposals = load_proposals(args.proposals)
    params = InteractorParams.load(args.checkpoint)
    return records, make_eval_items(records, proposals, table, args.segments), params


def cmd_eval(args) -> int:
    _, items, params = _load_items(args)
    report = evaluate(
        params,
        items,
        etas=args.eta,
        trials=args.trials,
        seed=args.seed,
        threads=args.threads,
    )
    report.save_json(args.out)
    if args.csv:
        report.save_csv(args.csv)
    if args.score_dist:
        rows = score_distribution(
            [np.array(pv["scores"]) for pv in report.per_video],
            [pv["proposal_overlaps"] for pv in report.per_video],
        )
        Path(args.score_dist).write_text(json.dumps(rows, indent=2), encoding="utf-8")
    for name, row in (
        ("method", report.method),
        ("upper bound", report.upper),
        ("random (exact)", report.random_exact),
    ):
        cells = "  ".join(f"acc@{eta:g}={row[eta]:.4f}" for eta in report.etas)
        print(f"{name:>14}: {cells}")
    print(f"report: {args.out}")
    return 0


def _select_item(records, items, video_id):
    if video_id is None:
        return items[0]
    for item in items:
        if item.video_id == video_id:
            return item
    raise TubeGrounderError(f"video {video_id!r} not found in dataset")


def cmd_ground(args) -> int:
    records, items, params = _load_items(args)
    item = _select_item(records, items, args.video_id)
    result = ground(params, item)
    out = {
        "video_id": item.video_id,
        "chosen_index": result.index,
        "score": result.match.score,
        "energy": result.tube.energy,
        "boxes": [
            {"frame": t, "x1": b.x1, "y1": b.y1, "x2": b.x2, "y2": b.y2, "conf": b.conf}
            for t, b in enumerate(result.tube.boxes)
        ],
    }
    print(json.dumps(out, indent=2))
    return 0


def cmd_inspect_attention(args) -> int:
    records, items, params = _load_items(args)
    item = _select_item(records, items, args.video_id)
    result = ground(params, item)
    dump = attention_dump(result.match, item.sentence.tokens)
    Path(args.out).write_text(json.dumps(dump, indent=2), encoding="utf-8")
    print(f"attention dump for {item.video_id} (proposal {result.index}): {args.out}")
    return 0


_GRADCHECK_DIMS = {
    # hidden, attention, visual_in, text_in, t_p, t_q, proposals, batch
    "small": (8, 8, 6, 7, 4, 5, 3, 2),
    "tiny": (4, 3, 4, 5, 3, 3, 2, 2),
}


def gradcheck_error(dims: str = "small", seed: int = 0) -> float:
    """Max relative error of analytic vs numeric gradients on one batch."""
    hidden, attention, d_vis, d_text, t_p, t_q, n_props, batch = _GRADCHECK_DIMS[dims]
    rng = np.random.default_rng(seed)
    examples = []
    for i in range(batch):
        feats = [rng.normal(size=(t_p, d_vis)) for _ in range(n_props)]
        tokens = tuple(f"tok{j}" for j in range(t_q))
        sentence = SentenceMatrix(rng.normal(size=(t_q, d_text)), tokens)
        examples.append(TrainingExample(f"fixture{i}", feats, sentence))
    params = InteractorParams.init(
        InteractorDims(visual_in=d_vis, text_in=d_text, hidden=hidden, attention=attention),
        seed,
    )

    def build(tape, pnodes):
        loss, _ = batch_loss(tape, pnodes, examples, margin=1.0, diversity_weight=1.0)
        return loss

    return grad_check(build, params.arrays)


def cmd_gradcheck(args) -> int:
    err = gradcheck_error(args.dims, args.seed)
    print(f"max relative gradient error: {err:.3e} (threshold 1e-4)")
    return 0 if err < 1e-4 else 2


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    try:
        return args.func(args)
    except FileNotFoundError as exc:
        missing = exc.filename if exc.filename else exc
        print(f"error: file not found: {missing}", file=sys.stderr)
        return 2
    except TubeGrounderError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
