"""Command-line entry point: ``cifar-pollution {corrupt,train,evaluate,sweep,report}``.

Exit codes: 0 success, 1 runtime failure, 2 usage error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

from . import cifar_io, harness
from .corruption import LEVELS, NOISE_TYPES, CorruptionSpec, preset
from .errors import PollutionError
from .nn import checkpoint
from .nn.model import MODEL_VARIANTS, ModelConfig
from .nn.optim import OptimState
from .pollution import PollutionPlan, build_plan_grid, corrupt_test_set, corrupted_test_seed, pollute

DEFAULT_DATA_DIR = "data/cifar-10-batches-bin"

# flag dest -> default; shared by --help text and --config merging
COMMON_DEFAULTS = {"data_dir": DEFAULT_DATA_DIR, "seed": 0, "split_seed": 0}
DEFAULTS: dict[str, dict] = {
    "corrupt": {**COMMON_DEFAULTS, "out": "corrupted", "noise": "gaussian", "level": "strong",
                "fraction": 0.1, "include_test": False},
    "train": {**COMMON_DEFAULTS, "out": "runs/train", "profile": "desk", "model": None,
              "epochs": None, "lr": 0.01, "momentum": 0.9, "weight_decay": 5e-4,
              "train_batch": 128, "eval_batch": 100, "train_size": None, "val_size": None,
              "test_size": None, "noise": "gaussian", "level": "strong", "fraction": 0.0},
    "evaluate": {**COMMON_DEFAULTS, "out": None, "checkpoint": "runs/train/best.ckpt",
                 "noise": None, "level": "strong", "test_size": None},
    "sweep": {**COMMON_DEFAULTS, "out": "runs/sweep", "profile": "desk", "model": None,
              "epochs": None, "lr": 0.01, "momentum": 0.9, "weight_decay": 5e-4,
              "train_batch": 128, "eval_batch": 100, "train_size": None, "val_size": None,
              "test_size": None, "noise": list(NOISE_TYPES), "levels": ["strong"],
              "fractions": None, "seeds": None, "save_checkpoints": False},
    "report": {"results": "runs/sweep", "plot": False},
}
PARAM_FLAGS = {"sigma": "gaussian", "p_total": "salt-pepper", "sigma_blur": "blur"}


class UsageError(Exception):
    pass


@dataclass
class Command:
    name: str
    options: dict
    specs: list[CorruptionSpec] = field(default_factory=list)
    plans: list[PollutionPlan] = field(default_factory=list)


def _fraction(text: str) -> float:
    try:
        v = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a number: {text!r}") from None
    if not 0.0 <= v <= 1.0:
        raise argparse.ArgumentTypeError(f"must be in [0, 1], got {v:g}")
    return v


def _nonneg_int(text: str) -> int:
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}") from None
    if v < 0:
        raise argparse.ArgumentTypeError(f"must be >= 0, got {v}")
    return v


def _positive_int(text: str) -> int:
    v = _nonneg_int(text)
    if v < 1:
        raise argparse.ArgumentTypeError("must be >= 1")
    return v


def _positive_float(text: str) -> float:
    try:
        v = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a number: {text!r}") from None
    if not v > 0:
        raise argparse.ArgumentTypeError(f"must be > 0, got {v:g}")
    return v


def _nonneg_float(text: str) -> float:
    try:
        v = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a number: {text!r}") from None
    if v < 0:
        raise argparse.ArgumentTypeError(f"must be >= 0, got {v:g}")
    return v


def _d(cmd: str, key: str) -> str:
    return f"(default: {DEFAULTS[cmd][key]})"


def _add_common(p: argparse.ArgumentParser, cmd: str, data: bool = True) -> None:
    p.add_argument("--config", metavar="JSON", help="JSON file of flag values; explicit flags win")
    if data:
        p.add_argument("--data-dir", help=f"directory of CIFAR-10 binary batch files {_d(cmd, 'data_dir')}")
        p.add_argument("--split-seed", type=_nonneg_int,
                       help=f"seed of the train/validation split {_d(cmd, 'split_seed')}")
    p.add_argument("--seed", type=_nonneg_int, help=f"master seed {_d(cmd, 'seed')}")
    p.add_argument("--out", help=f"output location {_d(cmd, 'out')}")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")


def _add_noise(p: argparse.ArgumentParser, cmd: str, many: bool = False) -> None:
    if many:
        p.add_argument("--noise", nargs="+", choices=NOISE_TYPES, help=f"noise types {_d(cmd, 'noise')}")
        p.add_argument("--levels", nargs="+", choices=LEVELS, help=f"severity presets {_d(cmd, 'levels')}")
        nargs = "+"
    else:
        p.add_argument("--noise", choices=NOISE_TYPES, help=f"noise type {_d(cmd, 'noise')}")
        p.add_argument("--level", choices=LEVELS,
                       help=f"severity preset, used unless an explicit parameter is given {_d(cmd, 'level')}")
        p.add_argument("--param", type=_nonneg_float, help="explicit severity parameter for --noise")
        nargs = None
    p.add_argument("--sigma", type=_nonneg_float, nargs=nargs, help="explicit Gaussian noise sigma")
    p.add_argument("--p-total", type=_fraction, nargs=nargs, help="explicit salt-and-pepper density")
    p.add_argument("--sigma-blur", type=_positive_float, nargs=nargs, help="explicit blur sigma")


def _add_training(p: argparse.ArgumentParser, cmd: str) -> None:
    p.add_argument("--profile", choices=sorted(harness.PROFILES),
                   help=f"preset for model, epochs and data sizes {_d(cmd, 'profile')}")
    p.add_argument("--model", choices=MODEL_VARIANTS, help="model variant (default: from profile)")
    p.add_argument("--epochs", type=_positive_int, help="training epochs (default: from profile)")
    p.add_argument("--lr", type=_positive_float, help=f"learning rate {_d(cmd, 'lr')}")
    p.add_argument("--momentum", type=_nonneg_float, help=f"SGD momentum {_d(cmd, 'momentum')}")
    p.add_argument("--weight-decay", type=_nonneg_float, help=f"L2 weight decay {_d(cmd, 'weight_decay')}")
    p.add_argument("--train-batch", type=_positive_int, help=f"training batch size {_d(cmd, 'train_batch')}")
    p.add_argument("--eval-batch", type=_positive_int, help=f"evaluation batch size {_d(cmd, 'eval_batch')}")
    p.add_argument("--train-size", type=_positive_int, help="training subset size (default: from profile)")
    p.add_argument("--val-size", type=_positive_int, help="validation subset size (default: from profile)")
    p.add_argument("--test-size", type=_positive_int, help="test subset size (default: from profile)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cifar-pollution",
        description="Inject corruptions into CIFAR-10 training data and measure robustness.")
    sub = parser.add_subparsers(dest="command", metavar="{corrupt,train,evaluate,sweep,report}")

    p = sub.add_parser("corrupt", help="export a polluted training split in CIFAR-10 binary format")
    _add_common(p, "corrupt")
    _add_noise(p, "corrupt")
    p.add_argument("--fraction", type=_fraction, help=f"fraction of images to corrupt {_d('corrupt', 'fraction')}")
    p.add_argument("--include-test", action="store_true", default=None,
                   help="also export the fully corrupted test set")

    p = sub.add_parser("train", help="train one model, keeping the best-validation-loss snapshot")
    _add_common(p, "train")
    _add_training(p, "train")
    _add_noise(p, "train")
    p.add_argument("--fraction", type=_fraction, help=f"pollution fraction {_d('train', 'fraction')}")

    p = sub.add_parser("evaluate", help="evaluate a checkpoint on the clean or corrupted test set")
    _add_common(p, "evaluate")
    p.add_argument("--checkpoint", help=f"checkpoint written by train {_d('evaluate', 'checkpoint')}")
    _add_noise(p, "evaluate")
    p.add_argument("--test-size", type=_positive_int, help="test subset size (default: full test set)")

    p = sub.add_parser("sweep", help="train over the pollution grid and write CSV reports")
    _add_common(p, "sweep")
    _add_training(p, "sweep")
    _add_noise(p, "sweep", many=True)
    p.add_argument("--fractions", type=_fraction, nargs="+", help="pollution fractions (default: from profile)")
    p.add_argument("--seeds", type=_nonneg_int, nargs="+", help="run seeds (default: from profile)")
    p.add_argument("--save-checkpoints", action="store_true", default=None,
                   help="write best-model checkpoints under OUT/checkpoints")

    p = sub.add_parser("report", help="aggregate per-run CSVs found under a results directory")
    p.add_argument("--config", metavar="JSON", help="JSON file of flag values; explicit flags win")
    p.add_argument("--results", help=f"results directory {_d('report', 'results')}")
    p.add_argument("--plot", action="store_true", default=None, help="also write PNG figures")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    return parser


def _merge(cmd: str, args: argparse.Namespace) -> dict:
    config = {}
    if getattr(args, "config", None):
        try:
            config = json.loads(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise UsageError(f"--config: cannot read {args.config}: {exc}") from None
        if not isinstance(config, dict):
            raise UsageError("--config: expected a JSON object")
    allowed = set(DEFAULTS[cmd]) | {"param", "sigma", "p_total", "sigma_blur"}
    unknown = sorted(set(config) - allowed)
    if unknown:
        raise UsageError(f"--config: unknown keys {unknown}")
    opts = {}
    for key in allowed:
        flag = getattr(args, key, None)
        if flag is not None:
            opts[key] = flag
        elif key in config:
            opts[key] = config[key]
        else:
            opts[key] = DEFAULTS[cmd].get(key)
    opts["_explicit"] = {k for k in allowed if getattr(args, k, None) is not None or k in config}
    opts["verbose"] = bool(getattr(args, "verbose", False))
    return opts


def _single_spec(opts: dict) -> CorruptionSpec:
    explicit = {k: opts[k] for k in PARAM_FLAGS if opts.get(k) is not None}
    if opts.get("param") is not None:
        explicit["param"] = opts["param"]
    if len(explicit) > 1:
        raise UsageError(f"give at most one explicit parameter, got {sorted(explicit)}")
    if explicit and "level" in opts["_explicit"]:
        raise UsageError("--level cannot be combined with an explicit severity parameter")
    noise = opts["noise"]
    if explicit:
        (key, value), = explicit.items()
        if key != "param":
            if "noise" in opts["_explicit"] and PARAM_FLAGS[key] != noise:
                raise UsageError(f"--{key.replace('_', '-')} does not apply to --noise {noise}")
            noise = PARAM_FLAGS[key]
        return CorruptionSpec(noise, float(value))
    return preset(noise, opts["level"])


def _sweep_specs(opts: dict) -> list[CorruptionSpec]:
    noises = opts["noise"] if isinstance(opts["noise"], list) else [opts["noise"]]
    specs = []
    for noise in noises:
        key = next(k for k, t in PARAM_FLAGS.items() if t == noise)
        values = opts.get(key)
        if values is not None:
            if "levels" in opts["_explicit"]:
                raise UsageError(f"--levels cannot be combined with --{key.replace('_', '-')}")
            values = values if isinstance(values, list) else [values]
            specs += [CorruptionSpec(noise, float(v)) for v in values]
        else:
            specs += [preset(noise, level) for level in opts["levels"]]
    return specs


def _validate_fraction(name: str, value) -> float:
    try:
        v = float(value)
    except (TypeError, ValueError):
        raise UsageError(f"--{name}: not a number: {value!r}") from None
    if not 0.0 <= v <= 1.0:
        raise UsageError(f"--{name}: must be in [0, 1], got {v:g}")
    return v


def _resolve_profile(opts: dict) -> None:
    profile = harness.PROFILES[opts["profile"]]
    for key, value in (("model", profile.model), ("epochs", profile.epochs),
                       ("train_size", profile.train_size), ("val_size", profile.val_size),
                       ("test_size", profile.test_size)):
        if opts.get(key) is None:
            opts[key] = value
    if "fractions" in opts and opts["fractions"] is None:
        opts["fractions"] = list(profile.fractions)
    if "seeds" in opts and opts["seeds"] is None:
        opts["seeds"] = list(profile.seeds)


def parse_args(argv: Sequence[str] | None = None) -> Command:
    """Parse and validate ``argv``; usage problems exit with status 2."""
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command is None:
        parser.print_usage(sys.stderr)
        parser.exit(2, "cifar-pollution: error: a subcommand is required\n")
    cmd = args.command
    try:
        opts = _merge(cmd, args)
        command = Command(cmd, opts)
        if cmd in ("corrupt", "train"):
            opts["fraction"] = _validate_fraction("fraction", opts["fraction"])
            command.specs = [_single_spec(opts)]
            command.plans = [PollutionPlan(opts["fraction"], command.specs[0], int(opts["seed"]))]
        elif cmd == "evaluate":
            if opts["noise"] is not None or any(opts.get(k) is not None for k in (*PARAM_FLAGS, "param")):
                if opts["noise"] is None:
                    opts["noise"] = "gaussian"
                command.specs = [_single_spec(opts)]
        elif cmd == "sweep":
            _resolve_profile(opts)
            opts["fractions"] = [_validate_fraction("fractions", f) for f in opts["fractions"]]
            command.specs = _sweep_specs(opts)
            command.plans = build_plan_grid(opts["fractions"], command.specs, [int(s) for s in opts["seeds"]])
        if cmd == "train":
            _resolve_profile(opts)
    except (UsageError, PollutionError) as exc:
        parser.error(str(exc))
    return command


# ---------------------------------------------------------------------------
# subcommands

def _train_config(opts: dict, seed: int) -> harness.TrainConfig:
    return harness.TrainConfig(
        model=ModelConfig(opts["model"]), epochs=int(opts["epochs"]),
        train_batch=int(opts["train_batch"]), eval_batch=int(opts["eval_batch"]),
        optim=OptimState(float(opts["lr"]), float(opts["momentum"]), float(opts["weight_decay"])),
        seed=seed)


def _bundle(opts: dict) -> harness.DataBundle:
    return harness.load_bundle(opts["data_dir"], int(opts["split_seed"]), opts.get("train_size"),
                               opts.get("val_size"), opts.get("test_size"))


def cmd_corrupt(command: Command) -> int:
    opts = command.options
    plan = command.plans[0]
    full = cifar_io.load_train(opts["data_dir"])
    train, _ = cifar_io.split_train_val(full, int(opts["split_seed"]))
    polluted = pollute(train, plan)
    out = Path(opts["out"])
    out.mkdir(parents=True, exist_ok=True)
    cifar_io.write_batch_file(out / "train_polluted.bin", polluted.examples)
    (out / "corrupted_indices.txt").write_text("".join(f"{i}\n" for i in polluted.corrupted_indices))
    if opts.get("include_test"):
        test = cifar_io.load_test(opts["data_dir"])
        corrupted = corrupt_test_set(test, plan.spec, corrupted_test_seed(plan.master_seed))
        cifar_io.write_batch_file(out / "test_corrupted.bin", corrupted)
    print(f"wrote {len(polluted.corrupted_indices)} corrupted of {len(train)} images "
          f"({plan.spec.label}) to {out}")
    return 0


def cmd_train(command: Command) -> int:
    opts = command.options
    plan = command.plans[0]
    bundle = _bundle(opts)
    cfg = _train_config(opts, plan.master_seed)
    out = Path(opts["out"])
    out.mkdir(parents=True, exist_ok=True)
    polluted = pollute(bundle.train, plan)
    state, metrics = harness.train(polluted, bundle.val, cfg, bundle.stats, out / "best.ckpt")
    metrics.clean = harness.evaluate(state, bundle.test, bundle.stats, eval_batch=cfg.eval_batch, cfg=cfg)
    (out / "config.json").write_text(json.dumps(
        {"train_config": cfg.to_dict(), "plan": plan.to_dict(), "data": bundle.info}, indent=2) + "\n")
    (out / "metrics.json").write_text(json.dumps(harness.metrics_to_dict(metrics), indent=2) + "\n")
    print(json.dumps({"best_epoch": metrics.best_epoch, "clean_loss": metrics.clean.loss,
                      "clean_acc": metrics.clean.top1}))
    return 0


def cmd_evaluate(command: Command) -> int:
    opts = command.options
    ckpt = Path(opts["checkpoint"])
    cfg_path = ckpt.parent / "config.json"
    if not cfg_path.is_file():
        raise FileNotFoundError(f"missing run configuration next to checkpoint: {cfg_path}")
    saved = json.loads(cfg_path.read_text())
    cfg = harness.TrainConfig.from_dict(saved["train_config"])
    state, _ = checkpoint.load(ckpt, cfg.to_dict())
    stats = cifar_io.ChannelStats.from_dict(saved["data"]["stats"])
    test = cifar_io.load_test(opts["data_dir"])
    if opts.get("test_size"):
        test = cifar_io.stratified_subset(test, opts["test_size"], int(opts["split_seed"]), "subset/test")
    spec = command.specs[0] if command.specs else None
    result = harness.evaluate(state, test, stats, spec=spec, seed=corrupted_test_seed(int(opts["seed"])),
                              eval_batch=cfg.eval_batch, cfg=cfg)
    payload = json.dumps({"spec": spec.to_dict() if spec else None, "loss": result.loss,
                          "top1": result.top1, "per_class": result.per_class}, indent=2)
    if opts.get("out"):
        Path(opts["out"]).write_text(payload + "\n")
    else:
        print(payload)
    return 0


def cmd_sweep(command: Command) -> int:
    opts = command.options
    bundle = _bundle(opts)
    cfg = _train_config(opts, 0)
    out = Path(opts["out"])
    ckpt_dir = out / "checkpoints" if opts.get("save_checkpoints") else None
    report = harness.run_sweep(command.plans, cfg, bundle, checkpoint_dir=ckpt_dir)
    files = harness.emit_report(report, out)
    failed = sum(r.status != "ok" for r in report.runs)
    print(f"{len(report.runs)} runs ({failed} failed); wrote {', '.join(str(p) for p in files.values())}")
    return 0


def cmd_report(command: Command) -> int:
    opts = command.options
    results = Path(opts["results"])
    if not results.is_dir():
        raise FileNotFoundError(f"results directory not found: {results}")
    runs = []
    for path in sorted(results.rglob("runs.csv")):
        runs += harness.read_runs_csv(path)
    if not runs:
        raise RuntimeError(f"no runs found under {results}")
    cells = harness.aggregate(runs)
    harness.write_aggregate(cells, results / "aggregate.csv")
    print(f"{'noise':<12} {'param':>6} {'fraction':>8} {'n':>3} {'clean_acc':>17} {'noisy_acc':>17}")
    for c in cells:
        print(f"{c.noise_type:<12} {c.intensity:>6g} {c.fraction:>8g} {c.n_runs - c.n_failed:>3} "
              f"{c.mean['clean_acc']:>8.4f}±{c.std['clean_acc']:<8.4f} "
              f"{c.mean['noisy_acc']:>8.4f}±{c.std['noisy_acc']:<8.4f}")
    if opts.get("plot"):
        from .plotting import plot_cells
        for path in plot_cells(cells, results):
            print(f"wrote {path}")
    return 0


HANDLERS = {"corrupt": cmd_corrupt, "train": cmd_train, "evaluate": cmd_evaluate,
            "sweep": cmd_sweep, "report": cmd_report}


def main(argv: Sequence[str] | None = None) -> int:
    try:
        command = parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if command.options.get("verbose") else logging.WARNING,
                        stream=sys.stderr, format="%(levelname)s %(name)s: %(message)s")
    try:
        return HANDLERS[command.name](command)
    except (PollutionError, OSError, ValueError, RuntimeError, checkpoint.CheckpointError) as exc:
        print(f"cifar-pollution {command.name}: error: {exc}", file=sys.stderr)
        return 1


def run() -> None:
    sys.exit(main())


if __name__ == "__main__":
    run()
