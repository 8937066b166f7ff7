"""``stmn`` command line: train, eval, ablate, inspect.

Exit codes: 0 success, 2 invalid configuration or inputs, 3 non-finite loss.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .ablation import run_ablation, write_table
from .checkpoint import load_checkpoint
from .config import ConfigError, RunConfig, config_from_dict, load_config
from .evaluation import (
    STRATEGIES,
    evaluate_model,
    export_attention_traces,
    export_magnitude_maps,
    export_matching_maps,
)
from .synth_data import generate_dataset, load_dataset, save_dataset
from .training import NonFiniteLossError, build_model, train

log = logging.getLogger("stmn")

KINDS = ("matching", "magnitude", "attention")
EXIT_OK, EXIT_INPUT, EXIT_NONFINITE = 0, 2, 3


class InputError(Exception):
    """Bad checkpoint, dataset or argument; reported with exit code 2."""


def _config(path) -> RunConfig:
    return load_config(path) if path else RunConfig()


def restore_model(checkpoint):
    """Rebuild the model described in a checkpoint manifest and load its weights."""
    try:
        state, manifest = load_checkpoint(checkpoint)
    except (OSError, ValueError, KeyError, json.JSONDecodeError) as exc:
        raise InputError(f"cannot read checkpoint {checkpoint}: {exc}") from exc
    snapshot = manifest.get("config", {})
    cfg = config_from_dict(snapshot.get("run", {}))
    model = build_model(cfg, int(snapshot.get("n_classes", 1)))
    try:
        model.load_state_dict(state)
    except ValueError as exc:
        raise InputError(f"checkpoint does not match its config: {exc}") from exc
    model.eval()
    return model, cfg


def _dataset(path, cfg: RunConfig):
    if path is None:
        return generate_dataset(cfg.dataset_config())
    try:
        return load_dataset(path)
    except (OSError, ValueError, KeyError, json.JSONDecodeError) as exc:
        raise InputError(f"cannot read dataset {path}: {exc}") from exc


def _check_compatible(model, dataset) -> None:
    c, h, w = dataset.config.image_size
    enc = model.config.encoder
    if (c, h, w) != (enc.in_channels, *enc.input_hw):
        raise InputError(f"dataset frames {(c, h, w)} do not match model input "
                         f"{(enc.in_channels, *enc.input_hw)}")


def cmd_train(args) -> int:
    cfg = _config(args.config)
    out = Path(args.out)
    dataset = generate_dataset(cfg.dataset_config())
    save_dataset(dataset, out / "dataset")
    (out / "config.json").parent.mkdir(parents=True, exist_ok=True)
    (out / "config.json").write_text(json.dumps(cfg.to_dict(), indent=1))
    try:
        result = train(cfg, dataset, out)
    except NonFiniteLossError as exc:
        (out / "nonfinite_dump.json").write_text(json.dumps({"step": exc.step, "losses": exc.losses,
                                                             "config": cfg.to_dict()}, indent=1))
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NONFINITE
    last = result.history[-1]["total"] if result.history else float("nan")
    print(f"trained {result.epochs} epochs, final loss {last:.6f}; artifacts in {out}")
    return EXIT_OK


def cmd_eval(args) -> int:
    model, cfg = restore_model(args.checkpoint)
    dataset = _dataset(args.dataset, cfg)
    _check_compatible(model, dataset)
    report = evaluate_model(model, dataset, args.strategy, camera_filter=not args.no_camera_filter)
    text = report.to_json()
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "metrics.json").write_text(text)
    print(text)
    return EXIT_OK


def cmd_ablate(args) -> int:
    cfg = _config(args.config)
    seeds = [cfg.seed + k for k in range(args.seeds)]
    rows = run_ablation(cfg, seeds, strategy=args.strategy)
    path = write_table(rows, Path(args.out) / "ablation.csv")
    print(path.read_text(), end="")
    return EXIT_OK


def cmd_inspect(args) -> int:
    if args.kind not in KINDS:
        print(f"error: unknown kind {args.kind!r}; valid kinds: {', '.join(KINDS)}", file=sys.stderr)
        return EXIT_INPUT
    model, cfg = restore_model(args.checkpoint)
    dataset = _dataset(args.dataset, cfg)
    _check_compatible(model, dataset)
    probes = dataset.query + dataset.gallery
    run_id = Path(args.checkpoint).resolve().parent.name
    path = Path(args.out) / run_id / f"{args.kind}.csv"
    if args.kind == "matching":
        export_matching_maps(model, probes, path)
    elif args.kind == "magnitude":
        if not model.config.enable_sm:
            raise InputError("magnitude maps need a model with the spatial memory enabled")
        export_magnitude_maps(model, np.stack([s.frames[0] for s in probes]), path)
    else:
        if not model.config.uses_context:
            raise InputError("attention traces need a model with temporal attention")
        export_attention_traces(model, probes, path)
    print(path)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="stmn", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="verb", required=True)

    p = sub.add_parser("train", help="train one model")
    p.add_argument("--config", type=str, default=None)
    p.add_argument("--out", type=str, required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint")
    p.add_argument("--checkpoint", type=str, required=True)
    p.add_argument("--dataset", type=str, default=None,
                   help="dataset directory (default: regenerate from the checkpoint config)")
    p.add_argument("--strategy", choices=STRATEGIES, default="rrs")
    p.add_argument("--no-camera-filter", action="store_true")
    p.add_argument("--out", type=str, default=None)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablate", help="train and evaluate the seven ablation variants")
    p.add_argument("--config", type=str, default=None)
    p.add_argument("--out", type=str, required=True)
    p.add_argument("--seeds", type=int, default=5)
    p.add_argument("--strategy", choices=STRATEGIES, default="rrs")
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("inspect", help="export diagnostic CSVs")
    p.add_argument("--checkpoint", type=str, required=True)
    p.add_argument("--dataset", type=str, default=None)
    # validated by hand so an unknown kind exits 2 with the list of valid ones
    p.add_argument("--kind", type=str, required=True)
    p.add_argument("--out", type=str, required=True)
    p.set_defaults(func=cmd_inspect)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
