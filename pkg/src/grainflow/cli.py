"""grainflow command-line tool.

Subcommands: synth, train, eval, predict, gradcheck, study.

Exit codes: 0 success, 1 gradient check failure, 2 usage / config / parse / I-O error,
3 numeric divergence during training. Command output goes to stdout; logs and the
single `ERROR: ...` line go to stderr.
"""

from __future__ import annotations

import argparse
import logging
import re
import sys
from pathlib import Path
from typing import Callable, Sequence

from pydantic import ValidationError

from src.grainflow import __version__
from src.grainflow.config.settings import config as settings
from src.grainflow.core import network as nn
from src.grainflow.core.errors import ConfigError, GrainflowError
from src.grainflow.core.network import ARCHITECTURES, BINARY_CLASS_NAMES, Network, NetworkConfig
from src.grainflow.data.dataset import Dataset, load_dataset_dir, resize_bilinear, split_test, write_dataset
from src.grainflow.data.pgm import load_pgm
from src.grainflow.data.synth import SynthMode, synth_dataset
from src.grainflow.storage import model_io
from src.grainflow.training.gradcheck import run_gradcheck
from src.grainflow.training.metrics import CsvMetricsWriter
from src.grainflow.training.trainer import (
    Split,
    TrainConfig,
    evaluate,
    initial_loss_check,
    make_train_config,
    step_study,
    train,
)
from src.grainflow.utils.formatters import (
    evaluation_lines,
    format_verdict,
    gradcheck_lines,
    kv_lines,
    study_lines,
    training_summary_lines,
)

logger = logging.getLogger(__name__)

_SIZE_PATTERN = re.compile(r"^\s*(\d+)\s*[x×X]\s*(\d+)\s*$")


def parse_input_size(text: str) -> tuple[int, int]:
    """'64x64' or '64×64' -> (height, width)."""
    match = _SIZE_PATTERN.match(text)
    if not match:
        raise ConfigError(f"input size must look like HxW (e.g. 64x64), got {text!r}")
    h, w = int(match.group(1)), int(match.group(2))
    if h < 1 or w < 1:
        raise ConfigError(f"input extents must be >= 1, got {text!r}")
    return h, w


def _emit(lines: Sequence[str]) -> None:
    print("\n".join(lines))


def _network_config(args: argparse.Namespace, class_names: Sequence[str]) -> NetworkConfig:
    """`--config FILE` wins over `--arch`; the YAML carries its own input size and classes."""
    if getattr(args, "config", None):
        cfg = nn.load_network_config(args.config)
        if tuple(cfg.class_names) != tuple(class_names):
            raise ConfigError(f"config classes {list(cfg.class_names)} do not match data classes {list(class_names)}")
        return cfg
    h, w = parse_input_size(args.input_size)
    return nn.builtin_config(args.arch, (1, h, w), class_names)


def _input_hw(args: argparse.Namespace) -> tuple[int, int]:
    if getattr(args, "config", None):
        _, h, w = nn.load_network_config(args.config).input_shape
        return h, w
    return parse_input_size(args.input_size)


def _train_config(args: argparse.Namespace, **overrides: object) -> TrainConfig:
    fields: dict[str, object] = {
        "steps": args.steps,
        "epochs": getattr(args, "epochs", None),
        "learning_rate": args.lr,
        "seed": args.seed,
        "eval_every": args.eval_every,
        "checkpoint_every": getattr(args, "checkpoint_every", 0),
        "val_fraction": args.val_frac,
    }
    fields.update(overrides)
    return make_train_config(**fields)


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------


def cmd_synth(args: argparse.Namespace) -> int:
    if args.per_class < 1 or args.width < 1 or args.height < 1:
        raise ConfigError("--per-class, --width and --height must be >= 1")
    try:
        dataset = synth_dataset(args.per_class, args.width, args.height, args.seed, SynthMode(args.mode))
    except ValidationError as exc:
        raise ConfigError(f"invalid synthesis parameters: {exc.errors(include_url=False)}") from exc

    out = Path(args.out)
    parts: list[tuple[Path, Dataset]] = [(out, dataset)]
    if args.split_test:
        rest, test = split_test(dataset, args.split_test, args.seed)
        parts = [(out / "train", rest), (out / "test", test)]

    lines: list[str] = []
    for root, part in parts:
        written = write_dataset(part, root)
        lines += [f"class={name} files={count} dir={root / name}" for name, count in written.items()]
    _emit(lines)
    return 0


def _checkpoint_writer(args: argparse.Namespace) -> Callable[[Network, int], None] | None:
    if not args.checkpoint_every:
        return None
    directory = Path(args.checkpoint_dir or settings.checkpoint_dir or Path(args.out).parent / "checkpoints")

    def _write(net: Network, step: int) -> None:
        directory.mkdir(parents=True, exist_ok=True)
        model_io.save(net, directory / f"step-{step}{model_io.MODEL_SUFFIX}")

    return _write


def cmd_train(args: argparse.Namespace) -> int:
    cfg = _train_config(args)
    h, w = _input_hw(args)
    data = load_dataset_dir(args.data, h, w)
    net_config = _network_config(args, data.class_names)
    for line in nn.describe_chain(net_config):
        logger.info("  %s", line)

    net = nn.init(net_config, args.seed)
    initial_loss_check(net, data)
    with CsvMetricsWriter.open(args.metrics) as sink:
        result = train(net, data, cfg, sink, checkpoint=_checkpoint_writer(args))
    model_io.save(result.network, args.out)
    _emit(training_summary_lines(result.final(Split.TRAIN), result.final(Split.VAL), result.steps))
    return 0


def cmd_eval(args: argparse.Namespace) -> int:
    net = model_io.load(args.model)
    _, h, w = net.config.input_shape
    data = load_dataset_dir(args.data, h, w)
    _emit(evaluation_lines(evaluate(net, data), net.config.class_names))
    return 0


def cmd_predict(args: argparse.Namespace) -> int:
    net = model_io.load(args.model)
    _, h, w = net.config.input_shape
    lines = []
    for path in args.image:
        index, probability = nn.predict(net, resize_bilinear(load_pgm(path), h, w))
        lines.append(format_verdict(net.config.class_names[index], probability))
    _emit(lines)
    return 0


def cmd_gradcheck(args: argparse.Namespace) -> int:
    if args.config:
        net_config = nn.load_network_config(args.config)
    else:
        h, w = parse_input_size(args.input_size)
        net_config = nn.builtin_config(args.arch, (1, h, w), BINARY_CLASS_NAMES)
    report = run_gradcheck(
        net_config,
        args.seed,
        tolerance=args.tolerance,
        step=args.step,
        max_coords=args.max_coords,
    )
    _emit(gradcheck_lines(report))
    return 0 if report.passed else 1


def cmd_study(args: argparse.Namespace) -> int:
    try:
        counts = [int(part) for part in args.steps.split(",") if part.strip()]
    except ValueError as exc:
        raise ConfigError(f"--steps must be a comma-separated list of integers, got {args.steps!r}") from exc
    if not counts or min(counts) < 1:
        raise ConfigError(f"--steps must list positive step counts, got {args.steps!r}")
    cfg = _train_config(args, steps=max(counts), epochs=None)
    h, w = _input_hw(args)
    train_data = load_dataset_dir(args.data, h, w)
    test_data = load_dataset_dir(args.test_data, h, w)
    net = nn.init(_network_config(args, train_data.class_names), args.seed)
    points = step_study(net, train_data, test_data, counts, cfg)
    header = kv_lines([("train_samples", len(train_data)), ("test_samples", len(test_data))])
    _emit(header + study_lines(points, train_data.class_names))
    return 0


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------


def _add_arch_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--arch", choices=ARCHITECTURES.names(), default="paper2conv", help="Built-in architecture")
    p.add_argument("--config", default=None, help="YAML NetworkConfig; overrides --arch and --input-size")
    p.add_argument("--input-size", default=settings.default_input_size, help="Network input HxW (default %(default)s)")


def _add_training_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--lr", type=float, default=settings.default_learning_rate, help="SGD learning rate")
    p.add_argument("--seed", type=int, default=settings.default_seed, help="Init / shuffle / split seed")
    p.add_argument("--val-frac", type=float, default=settings.default_val_fraction, help="Validation fraction per class")
    p.add_argument("--eval-every", type=int, default=settings.default_eval_every, help="Steps between metric rows")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="grainflow", description="From-scratch CNN surface defect inspection")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("--log-level", default=None, help="Logging level (default from GRAINFLOW_LOG_LEVEL)")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="Generate a synthetic uneven-illumination dataset")
    p.add_argument("--out", required=True, help="Output directory")
    p.add_argument("--per-class", type=int, required=True, help="Images per class")
    p.add_argument("--width", type=int, default=64)
    p.add_argument("--height", type=int, default=64)
    p.add_argument("--seed", type=int, default=settings.default_seed)
    p.add_argument("--mode", choices=[m.value for m in SynthMode], default=SynthMode.BINARY.value)
    p.add_argument("--split-test", type=int, default=0, help="Hold out N images per class under <out>/test")
    p.set_defaults(handler=cmd_synth)

    p = sub.add_parser("train", help="Train a network on a directory dataset")
    p.add_argument("--data", required=True, help="Dataset root (<root>/<class>/*.pgm)")
    _add_arch_args(p)
    schedule = p.add_mutually_exclusive_group(required=True)
    schedule.add_argument("--steps", type=int, help="Number of SGD steps")
    schedule.add_argument("--epochs", type=int, help="Number of passes over the train split")
    _add_training_args(p)
    p.add_argument("--checkpoint-every", type=int, default=0, help="Write a checkpoint every N steps (0 = off)")
    p.add_argument("--checkpoint-dir", default=None, help="Checkpoint directory")
    p.add_argument("--out", required=True, help="Model file to write")
    p.add_argument("--metrics", required=True, help="Metrics CSV to write")
    p.set_defaults(handler=cmd_train)

    p = sub.add_parser("eval", help="Evaluate a model on a directory dataset")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.set_defaults(handler=cmd_eval)

    p = sub.add_parser("predict", help="Print a verdict line per image")
    p.add_argument("--model", required=True)
    p.add_argument("--image", required=True, action="append", help="PGM image (repeatable)")
    p.set_defaults(handler=cmd_predict)

    p = sub.add_parser("gradcheck", help="Finite-difference check of every backward pass")
    _add_arch_args(p)
    p.add_argument("--seed", type=int, default=settings.default_seed)
    p.add_argument("--tolerance", type=float, default=settings.gradcheck_tolerance)
    p.add_argument("--step", type=float, default=settings.gradcheck_step, help="Finite-difference step")
    p.add_argument("--max-coords", type=int, default=settings.gradcheck_max_coords, help="Coordinates per tensor")
    p.set_defaults(handler=cmd_gradcheck)

    p = sub.add_parser("study", help="Test accuracy and confidence at several step counts")
    p.add_argument("--data", required=True, help="Training dataset root")
    p.add_argument("--test-data", required=True, help="Held-out test dataset root")
    _add_arch_args(p)
    p.add_argument("--steps", default="1000,2500,5000", help="Comma-separated step counts")
    _add_training_args(p)
    p.set_defaults(handler=cmd_study)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=(args.log_level or settings.log_level).upper(),
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        return args.handler(args)
    except GrainflowError as exc:
        print(f"ERROR: {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    raise SystemExit(main())
