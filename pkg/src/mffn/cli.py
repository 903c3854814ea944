"""Command-line interface: train, predict, evaluate, ablate, params.

Exit codes: 0 on success, 1 on usage errors, 2 on runtime failures.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .errors import MffnError


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(1)


def _add_common(parser, out_dir_default="runs"):
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--profile", choices=("tiny", "full"), default="full")
    parser.add_argument("--out-dir", type=Path, default=Path(out_dir_default))


def _add_train_overrides(parser):
    parser.add_argument("--config", type=Path, help="flat key=value config file")
    parser.add_argument("--epochs", type=int)
    parser.add_argument("--batch-size", type=int)
    parser.add_argument("--lr", type=float)
    parser.add_argument("--eval-every", type=int)
    parser.add_argument("--max-steps", type=int)
    parser.add_argument("--image-size", type=int)
    parser.add_argument("--views", help="comma-separated view tags, e.g. original,dflip,close:1.5")
    parser.add_argument("--one-stage", action="store_true", help="disable the second attention stage")
    parser.add_argument("--no-cfu", action="store_true", help="bypass channel fusion")


def _train_config(args):
    from .config import build_train_config, parse_config_file
    from .views import parse_view_list

    file_values = parse_config_file(args.config) if args.config else None
    overrides = dict(
        seed=args.seed,
        epochs=args.epochs,
        batch_size=args.batch_size,
        lr=args.lr,
        eval_every=args.eval_every,
        max_steps=args.max_steps,
        image_size=args.image_size,
        views=parse_view_list(args.views) if args.views else None,
    )
    if args.one_stage:
        overrides["camv_stage2"] = False
    if args.no_cfu:
        overrides["cfu_enabled"] = False
    return build_train_config(args.profile, file_values, **overrides)


def _cmd_train(args) -> int:
    from .data import DatasetSpec
    from .train import train

    cfg = _train_config(args)
    val_spec = DatasetSpec(args.val_data, split="val") if args.val_data else None
    result = train(cfg, DatasetSpec(args.data), val_spec, out_dir=args.out_dir)
    last = result.history.entries[-1][1].scalars() if len(result.history) else {}
    print(f"best checkpoint: {result.best_checkpoint} (epoch {result.best_epoch})")
    print(f"steps: {result.steps}  stopped_early: {result.stopped_early}")
    for name, value in last.items():
        print(f"  {name}: {value:.4f}")
    return 0


def _cmd_predict(args) -> int:
    from .train import predict

    predict(args.checkpoint, args.image, args.out)
    print(f"wrote {args.out}")
    return 0


def _cmd_evaluate(args) -> int:
    from .metrics import evaluate_dir

    report = evaluate_dir(args.pred, args.gt, out_dir=args.out_dir)
    for name, value in report.to_dict().items():
        print(f"{name}: {value:.4f}" if isinstance(value, float) else f"{name}: {value}")
    if args.out_dir:
        print(f"wrote {args.out_dir}/report.json and curves.csv")
    return 0


def _cmd_ablate(args) -> int:
    from .ablate import run_ablation

    out_csv = args.out or (args.out_dir / f"ablate_{args.grid}.csv")
    rows = run_ablation(
        args.grid, args.data, out_csv,
        profile=args.profile, seed=args.seed,
        epochs=args.epochs, max_steps=args.max_steps,
    )
    print(f"wrote {out_csv} ({len(rows)} rows)")
    return 0


def _cmd_params(args) -> int:
    import torch

    from .config import build_train_config
    from .model import MffnNet, count_parameters, parameter_breakdown
    from .views import parse_view_list

    overrides = {}
    if args.views:
        overrides["views"] = parse_view_list(args.views)
    torch.manual_seed(args.seed)
    cfg = build_train_config(args.profile, **overrides)
    model = MffnNet(cfg.model)
    for name, count in parameter_breakdown(model).items():
        print(f"{name:20s} {count:>14,}")
    if args.freeze_backbone:
        model.freeze_backbone()
        print(f"{'trainable (frozen backbone)':20s} {count_parameters(model):>14,}")
    return 0


def build_parser() -> _Parser:
    parser = _Parser(prog="mffn", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", help="train a model")
    p_train.add_argument("--data", required=True, type=Path, help="dataset root (Images/ + GT/)")
    p_train.add_argument("--val-data", type=Path, help="validation root; default: 10%% holdout")
    _add_common(p_train)
    _add_train_overrides(p_train)
    p_train.set_defaults(func=_cmd_train)

    p_pred = sub.add_parser("predict", help="write a prediction map for one image")
    p_pred.add_argument("--checkpoint", required=True, type=Path)
    p_pred.add_argument("--image", required=True, type=Path)
    p_pred.add_argument("--out", required=True, type=Path)
    p_pred.set_defaults(func=_cmd_predict)

    p_eval = sub.add_parser("evaluate", help="score prediction maps against masks")
    p_eval.add_argument("--pred", required=True, type=Path)
    p_eval.add_argument("--gt", required=True, type=Path)
    p_eval.add_argument("--out-dir", type=Path, help="where to write report.json and curves.csv")
    p_eval.set_defaults(func=_cmd_evaluate)

    p_abl = sub.add_parser("ablate", help="sweep view/stage/fusion grids")
    p_abl.add_argument("--grid", required=True, choices=("table3", "table4", "table5"))
    p_abl.add_argument("--data", required=True, type=Path)
    p_abl.add_argument("--out", type=Path, help="output CSV path")
    p_abl.add_argument("--epochs", type=int)
    p_abl.add_argument("--max-steps", type=int)
    _add_common(p_abl, out_dir_default="ablate")
    p_abl.set_defaults(func=_cmd_ablate)

    p_par = sub.add_parser("params", help="report trainable parameter counts")
    p_par.add_argument("--views", help="override the view list")
    p_par.add_argument("--freeze-backbone", action="store_true")
    _add_common(p_par)
    p_par.set_defaults(func=_cmd_params)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except MffnError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
