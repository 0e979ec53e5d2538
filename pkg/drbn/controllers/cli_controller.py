"""
CLI Controller.
Bridges argparse to the services layer and maps outcomes to exit codes:

    0  success
    1  runtime failure (I/O, corrupt model file, numerical error)
    2  usage error (bad flags or config values, missing inputs)

Every subcommand accepts `--config FILE` with `key=value` lines using the
long flag names; flags given on the command line take precedence.
"""

import argparse
import sys
from pathlib import Path
from typing import Callable, Optional, Sequence

from drbn.config.settings import app_settings, generate_settings, semisup_settings, train_settings
from drbn.core.classifier import HeadConfig
from drbn.core.errors import ConfigError, DrbnError
from drbn.core.trainer import TrainConfig
from drbn.services.dataset_service import load_dataset, resolve_data_path
from drbn.services.generation_service import run_generation
from drbn.services.inspection_service import inspect_model
from drbn.services.semisup_service import PHASES, run_semisup
from drbn.services.training_service import run_training
from drbn.utils.logger import enable_file_logging, logger, set_console_level
from drbn.utils.validators import BINARIZE_MODES, DATA_SOURCES, RunConfig, build_model, load_config_file

EXIT_OK = 0
EXIT_RUNTIME = 1
EXIT_USAGE = 2


class UsageError(Exception):
    """Raised for invalid invocations; reported with exit code 2."""


def _label_list(text: str) -> list[int]:
    try:
        values = [int(part) for part in str(text).split(",") if part.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got '{text}'") from exc
    if not values or any(v < 1 for v in values):
        raise argparse.ArgumentTypeError(f"label budgets must be positive integers, got '{text}'")
    return values


# ─── Parser ───────────────────────────────────────────────────────────────────
def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, help="key=value file supplying defaults for these flags")
    p.add_argument("--seed", type=int, help="random seed (required for train and generate)")
    p.add_argument("--verbose", action="store_true", help="log at DEBUG level")


def _add_data(p: argparse.ArgumentParser) -> None:
    p.add_argument("--data", help="'mnist', an IDX file, an MNIST directory or a directory of mask images")
    p.add_argument("--data-source", choices=DATA_SOURCES, help="override dataset auto-detection")
    p.add_argument("--binarize", choices=BINARIZE_MODES, default="threshold")
    p.add_argument("--threshold", type=float, default=0.5, help="threshold τ for --binarize threshold")
    p.add_argument("--limit", type=int, help="use only the first N training images")
    p.add_argument("--image-size", type=int, default=32, help="side length for image directories")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="drbn",
        description=f"{app_settings.NAME}: RBMs and deep restricted Boltzmann networks trained with joint PCD.",
    )
    sub = parser.add_subparsers(dest="command", metavar="COMMAND")
    sub.required = True

    train = sub.add_parser("train", help="train a generative model")
    _add_common(train)
    _add_data(train)
    train.add_argument("--arch", help="architecture, e.g. dense:500,dense:1000 or conv:64x12s2,conv:128x5s2,dense:512")
    train.add_argument("--k", type=int, default=train_settings.K, help="Gibbs cycles per update")
    train.add_argument("--particles", type=int, default=train_settings.PARTICLES, help="persistent chains N")
    train.add_argument("--batch", type=int, default=train_settings.BATCH, help="minibatch size M")
    train.add_argument("--epochs", type=int, default=train_settings.EPOCHS)
    train.add_argument("--lr", type=float, default=train_settings.LR)
    train.add_argument("--init-std", type=float, default=train_settings.INIT_STD)
    train.add_argument("--eval-every", type=int, default=train_settings.EVAL_EVERY)
    train.add_argument("--sample-every", type=int, default=train_settings.SAMPLE_EVERY)
    train.add_argument("--checkpoint-every", type=int, default=train_settings.CHECKPOINT_EVERY)
    train.add_argument("--max-steps", type=int, help="stop after this many updates (resume later)")
    train.add_argument("--resume", type=Path, help="checkpoint to continue from")
    train.add_argument("--out", type=Path, help="output directory")
    train.set_defaults(handler=cmd_train)

    gen = sub.add_parser("generate", help="sample images from a trained model")
    _add_common(gen)
    gen.add_argument("--model", type=Path, help="ModelFile to sample from")
    gen.add_argument("--steps", type=int, default=generate_settings.STEPS)
    gen.add_argument("--count", type=int, default=generate_settings.COUNT)
    gen.add_argument("--cols", type=int, default=generate_settings.GRID_COLS)
    gen.add_argument("--out", type=Path, help="grid file (.pgm or .png)")
    gen.set_defaults(handler=cmd_generate)

    semi = sub.add_parser("semisup", help="semi-supervised evaluation of a pretrained model")
    _add_common(semi)
    _add_data(semi)
    semi.add_argument("--model", type=Path, help="pretrained ModelFile")
    semi.add_argument("--labels", type=_label_list, default=list(semisup_settings.LABEL_BUDGETS),
                      help="label budget(s), comma separated")
    semi.add_argument("--runs", type=int, default=semisup_settings.RUNS)
    semi.add_argument("--phase", choices=PHASES, default="frozen")
    semi.add_argument("--epochs", type=int, default=semisup_settings.HEAD_EPOCHS, help="softmax head epochs")
    semi.add_argument("--head-lr", type=float, default=train_settings.LR)
    semi.add_argument("--finetune-epochs", type=int, default=semisup_settings.FINETUNE_EPOCHS)
    semi.add_argument("--lr", type=float, default=train_settings.FINETUNE_LR, help="fine-tuning learning rate")
    semi.add_argument("--batch", type=int, default=semisup_settings.HEAD_BATCH)
    semi.add_argument("--validation-size", type=int, default=semisup_settings.VALIDATION_SIZE)
    semi.add_argument("--baseline", action="store_true", help="also train the plain fully-connected baseline")
    semi.add_argument("--out", type=Path, help="output directory for metrics")
    semi.set_defaults(handler=cmd_semisup)

    insp = sub.add_parser("inspect", help="describe a model file")
    _add_common(insp)
    insp.add_argument("--model", type=Path, help="ModelFile to inspect")
    insp.add_argument("--data", help="optional dataset for the probe batch (else noise)")
    insp.add_argument("--probe-size", type=int, default=100)
    insp.set_defaults(handler=cmd_inspect)
    return parser


def _subparser(parser: argparse.ArgumentParser, command: str) -> argparse.ArgumentParser:
    for action in parser._actions:
        if isinstance(action, argparse._SubParsersAction):
            return action.choices[command]
    raise KeyError(command)


def _apply_config_file(sub: argparse.ArgumentParser, path: Path) -> None:
    """Install file values as subparser defaults so explicit flags still win."""
    actions = {a.dest: a for a in sub._actions if a.dest not in ("help", "config", "handler")}
    defaults = {}
    for key, raw in load_config_file(path).items():
        action = actions.get(key)
        if action is None:
            raise ConfigError(f"{path}: unknown key '{key}'")
        if isinstance(action, argparse._StoreTrueAction):
            defaults[key] = raw.lower() in ("1", "true", "yes", "on")
        elif action.type is not None:
            try:
                defaults[key] = action.type(raw)
            except (TypeError, ValueError, argparse.ArgumentTypeError) as exc:
                raise ConfigError(f"{path}: bad value for '{key}': {exc}") from exc
        else:
            defaults[key] = raw
        if action.choices is not None and defaults[key] not in action.choices:
            raise ConfigError(f"{path}: '{key}' must be one of {list(action.choices)}")
    sub.set_defaults(**defaults)


def parse_args(argv: Sequence[str]) -> argparse.Namespace:
    parser = build_parser()
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("command", nargs="?")
    pre.add_argument("--config", type=Path)
    known, _ = pre.parse_known_args(argv)
    if known.config is not None and known.command in ("train", "generate", "semisup", "inspect"):
        _apply_config_file(_subparser(parser, known.command), known.config)
    return parser.parse_args(argv)


# ─── Commands ─────────────────────────────────────────────────────────────────
def _run_config(args: argparse.Namespace, default_out: Path) -> RunConfig:
    return build_model(
        RunConfig,
        data=getattr(args, "data", None),
        data_source=getattr(args, "data_source", None),
        arch=getattr(args, "arch", None),
        output_dir=args.out if getattr(args, "out", None) is not None else default_out,
        seed=args.seed,
        binarize=getattr(args, "binarize", "threshold"),
        threshold=getattr(args, "threshold", 0.5),
        limit=getattr(args, "limit", None),
        image_size=getattr(args, "image_size", 32),
    )


def _require_data(run: RunConfig) -> None:
    if not run.data:
        raise UsageError("--data is required")
    path = resolve_data_path(run.data)
    if not path.exists():
        raise UsageError(f"dataset path does not exist: {path}")


def _require_model(path: Optional[Path]) -> Path:
    if path is None:
        raise UsageError("--model is required")
    if not Path(path).is_file():
        raise UsageError(f"model file not found: {path}")
    return Path(path)


def _finish(result, text: Optional[str] = None) -> int:
    if not result.success:
        print(f"drbn: error: {result.message}", file=sys.stderr)
        return EXIT_RUNTIME
    print(result.message if text is None else text)
    return EXIT_OK


def cmd_train(args: argparse.Namespace) -> int:
    run = _run_config(args, RunConfig().output_dir / "train")
    seed = run.require_seed("train")
    _require_data(run)
    if args.resume is not None and not args.resume.is_file():
        raise UsageError(f"checkpoint not found: {args.resume}")
    config = build_model(
        TrainConfig,
        k=args.k, n_particles=args.particles, batch_size=args.batch, epochs=args.epochs,
        learning_rate=args.lr, init_std=args.init_std, seed=seed,
        eval_every=args.eval_every, checkpoint_every=args.checkpoint_every,
    )
    if args.max_steps is not None and args.max_steps < 0:
        raise UsageError("--max-steps must be ≥ 0")
    if args.sample_every < 0:
        raise UsageError("--sample-every must be ≥ 0")
    enable_file_logging()
    result = run_training(run, config, resume=args.resume, max_steps=args.max_steps, sample_every=args.sample_every)
    return _finish(result)


def cmd_generate(args: argparse.Namespace) -> int:
    if args.seed is None:
        raise ConfigError("generate requires --seed")
    model = _require_model(args.model)
    if args.steps < 1 or args.count < 1 or args.cols < 1:
        raise UsageError("--steps, --count and --cols must be ≥ 1")
    out = args.out if args.out is not None else RunConfig().output_dir / "generated.pgm"
    result = run_generation(model, out, args.steps, args.count, args.seed, args.cols)
    return _finish(result, f"{result.message} (mean pixel variance {result.mean_pixel_variance:.4f})")


def cmd_semisup(args: argparse.Namespace) -> int:
    run = _run_config(args, RunConfig().output_dir / "semisup")
    model = _require_model(args.model)
    _require_data(run)
    seed = run.seed or 0
    head = build_model(HeadConfig, epochs=args.epochs, batch_size=args.batch, learning_rate=args.head_lr, seed=seed)
    tune = build_model(HeadConfig, epochs=args.finetune_epochs, batch_size=args.batch, learning_rate=args.lr, seed=seed)
    if args.validation_size < 0:
        raise UsageError("--validation-size must be ≥ 0")
    enable_file_logging()
    result = run_semisup(
        run, model, args.labels, n_runs=args.runs, phase=args.phase,
        head_config=head, finetune_config=tune, baseline=args.baseline,
        validation_size=args.validation_size,
    )
    if result.summary is not None and not result.summary.empty:
        print(result.summary.to_string(index=False, float_format=lambda v: f"{v:.4f}"))
    return _finish(result)


def cmd_inspect(args: argparse.Namespace) -> int:
    model = _require_model(args.model)
    probe = None
    if args.data:
        run = _run_config(args, RunConfig().output_dir)
        _require_data(run)
        probe = load_dataset(run, n_validation=0).train.images[: args.probe_size]
    result = inspect_model(model, probe=probe, seed=args.seed or 0, probe_size=args.probe_size)
    return _finish(result, result.to_text())


# ─── Entry ────────────────────────────────────────────────────────────────────
def main(argv: Optional[Sequence[str]] = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        args = parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if isinstance(exc.code, int) else EXIT_USAGE
    except ConfigError as exc:
        print(f"drbn: error: {exc}", file=sys.stderr)
        return EXIT_USAGE

    if args.verbose:
        set_console_level("DEBUG")
    handler: Callable[[argparse.Namespace], int] = args.handler
    try:
        return handler(args)
    except (UsageError, ConfigError) as exc:
        print(f"drbn {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DrbnError, OSError, ValueError) as exc:
        logger.error(f"{args.command} failed: {exc}")
        print(f"drbn {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
