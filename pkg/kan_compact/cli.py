"""
Command-line entry point ``kanc``.

Every command writes its artifacts plus a ``manifest.json`` describing the
run: command, resolved configuration, input hashes, outputs, seed and
toolkit version. Manifests carry no timestamps, so identical inputs give
byte-identical outputs.

Exit statuses: 0 success, 2 usage or configuration error, 3 numerical divergence.
"""

import argparse
import csv
import hashlib
import json
import logging
import os
import sys
from dataclasses import asdict, dataclass, field

from kan_compact import __version__, device, evaluate, networks, symbolic, training
from kan_compact.config import TrainConfig, load_config
from kan_compact.errors import ConfigError, DivergenceError, DomainError, ShapeError

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_DIVERGED = 3


@dataclass
class RunManifest:
    command: str
    config: dict
    inputs: dict[str, str] = field(default_factory=dict)
    """path -> sha256 of the file contents"""
    outputs: list[str] = field(default_factory=list)
    seed: int | None = None
    version: str = __version__

    def add_input(self, path: str):
        self.inputs[path] = sha256(path)

    def add_output(self, path: str):
        self.outputs.append(path)

    def write(self, path: str):
        os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
        with open(path, "w") as f:
            json.dump(asdict(self), f, indent=1, sort_keys=True)
            f.write("\n")


def sha256(path: str) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 16), b""):
            digest.update(chunk)
    return digest.hexdigest()


# --- Helpers ---
def _dataset(args, manifest: RunManifest, step: int | None = None) -> device.VoltageGridDataset:
    if getattr(args, "dataset", None):
        manifest.add_input(args.dataset)
        return device.load_dataset(args.dataset)
    return device.generate_dataset(step or args.step)


def _load_checkpoints(paths, manifest: RunManifest) -> list[networks.Checkpoint]:
    checkpoints = []
    for path in paths:
        manifest.add_input(path)
        checkpoints.append(networks.load_checkpoint(path))
    return checkpoints


def _config(args) -> TrainConfig:
    config = load_config(args.config) if getattr(args, "config", None) else TrainConfig()
    return config.with_overrides(
        family=getattr(args, "family", None),
        preset=getattr(args, "preset", None),
        target=getattr(args, "target", None),
        step=getattr(args, "step", None),
        seed=getattr(args, "seed", None),
        epochs=getattr(args, "epochs", None),
        lr=getattr(args, "lr", None),
        full_budget=getattr(args, "full_budget", None) or None,
    )


def _config_for(checkpoint: networks.Checkpoint, args) -> TrainConfig:
    """Trainer settings for continuing a checkpoint, from a config file or its metadata."""
    if args.config:
        return load_config(args.config)
    meta = checkpoint.metadata
    return TrainConfig(
        family=checkpoint.spec.kind,
        preset=meta.get("preset"),
        target=meta.get("target", "I_D"),
        step=meta.get("step", 10),
        seed=meta.get("seed", 0),
    )


# --- Commands ---
def cmd_gen_data(args) -> int:
    dataset = device.generate_dataset(args.step)
    device.save_dataset(dataset, args.out)
    manifest = RunManifest("gen-data", {"step": args.step})
    manifest.add_output(args.out)
    manifest.write(os.path.splitext(args.out)[0] + ".manifest.json")
    summary = device.split_summary(dataset)
    logger.info("%d train / %d test points written to %s", summary.train, summary.test, args.out)
    return EXIT_OK


def cmd_train(args) -> int:
    config = _config(args)
    manifest = RunManifest("train", config.resolved(), seed=config.seed)
    if args.config:
        manifest.add_input(args.config)
    dataset = _dataset(args, manifest, config.step)
    os.makedirs(args.out, exist_ok=True)

    if args.sweep:
        summary = training.seed_sweep(config, args.sweep, dataset=dataset, workers=args.workers)
        for r in summary.results:
            path = os.path.join(args.out, f"seed_{r.seed}", "checkpoint.json")
            networks.save_checkpoint(r.checkpoint, path)
            r.log.to_csv(os.path.join(args.out, f"seed_{r.seed}", "train_log.csv"))
            manifest.add_output(path)
        summary_path = os.path.join(args.out, "sweep_summary.csv")
        summary.to_csv(summary_path)
        manifest.add_output(summary_path)
        manifest.config["best_seed"] = summary.best.seed
        diverged = any(r.diverged for r in summary.results)
    else:
        checkpoint, log = training.train(config, dataset=dataset)
        checkpoint_path = os.path.join(args.out, "checkpoint.json")
        log_path = os.path.join(args.out, "train_log.csv")
        networks.save_checkpoint(checkpoint, checkpoint_path)
        log.to_csv(log_path)
        manifest.add_output(checkpoint_path)
        manifest.add_output(log_path)
        diverged = log.diverged

    manifest.write(os.path.join(args.out, "manifest.json"))
    if diverged:
        logger.error("training diverged; partial artifacts written to %s", args.out)
        return EXIT_DIVERGED
    return EXIT_OK


def _models(args, manifest):
    if args.oracle:
        return [evaluate.SurrogateOracle(args.oracle)]
    paths = args.checkpoint if isinstance(args.checkpoint, list) else [args.checkpoint]
    return _load_checkpoints(paths, manifest)


def cmd_eval(args) -> int:
    manifest = RunManifest("eval", {"step": args.step, "oracle": args.oracle})
    models = _models(args, manifest)
    dataset = _dataset(args, manifest)
    reports = evaluate.make_report(models, dataset, args.out, sweeps=())
    for r in reports:
        logger.info("%s seed %d: train MAPE %.4g, test MAPE %.4g", r.target, r.seed, r.train_mape, r.test_mape)
    manifest.add_output(os.path.join(args.out, "summary.csv"))
    manifest.write(os.path.join(args.out, "manifest.json"))
    return EXIT_OK


def cmd_derivs(args) -> int:
    manifest = RunManifest(
        "derivs", {"vd": list(args.vd), "resolution": args.resolution, "oracle": args.oracle}
    )
    (model,) = _models(args, manifest)
    os.makedirs(args.out, exist_ok=True)
    for V_D in args.vd:
        curve = evaluate.derivative_sweep(model, V_D, args.resolution)
        path = os.path.join(args.out, f"derivs_vd{V_D:.3f}.csv")
        evaluate.write_curve(curve, path)
        manifest.add_output(path)
        logger.info("V_D = %.3f V: g'_m waviness %.4g", V_D, evaluate.waviness(curve.g_m2))
    manifest.write(os.path.join(args.out, "manifest.json"))
    return EXIT_OK


def cmd_symbolic(args) -> int:
    manifest = RunManifest("symbolic", {"mode": args.mode})
    (checkpoint,) = _load_checkpoints([args.checkpoint], manifest)
    config = _config_for(checkpoint, args)
    k = args.k if args.k is not None else config.k
    manifest.config["k"] = k
    if args.config:
        manifest.add_input(args.config)
    manifest.config["trainer"] = config.resolved()
    dataset = _dataset(args, manifest, config.step)
    os.makedirs(args.out, exist_ok=True)

    status = EXIT_OK
    rounds = []
    if args.mode == "posthoc":
        model = symbolic.symbolize(checkpoint, dataset.train.inputs())
    else:
        try:
            model, rounds = symbolic.iterative_sr(checkpoint, dataset, k, config)
        except DivergenceError as e:
            logger.error("%s", e)
            model, rounds = e.partial
            status = EXIT_DIVERGED

    if rounds:
        path = os.path.join(args.out, "rounds.csv")
        with open(path, "w", newline="") as f:
            writer = csv.writer(f, lineterminator="\n")
            writer.writerow(("round", "edges", "functions", "r2", "loss", "train_mape"))
            for r in rounds:
                writer.writerow(
                    (
                        r.round,
                        " ".join(".".join(map(str, e)) for e in r.edges),
                        " ".join(r.functions),
                        " ".join(f"{v:.17g}" for v in r.r2),
                        f"{r.loss:.17g}",
                        f"{r.mape:.17g}",
                    )
                )
        manifest.add_output(path)

    checkpoint_path = os.path.join(args.out, "symbolic_checkpoint.json")
    networks.save_checkpoint(model.checkpoint, checkpoint_path)
    manifest.add_output(checkpoint_path)
    if model.complete:
        formula = symbolic.extract_formula(model)
        formula_path = os.path.join(args.out, "formula.txt")
        formula.save(formula_path)
        manifest.add_output(formula_path)
        manifest.add_output(os.path.splitext(formula_path)[0] + ".json")
        logger.info("formula: %s", formula.text)
    manifest.write(os.path.join(args.out, "manifest.json"))
    return status


def cmd_report(args) -> int:
    manifest = RunManifest("report", {"step": args.step, "vd": list(args.vd), "oracle": args.oracle})
    models = _models(args, manifest)
    dataset = _dataset(args, manifest)
    evaluate.make_report(models, dataset, args.out, sweeps=tuple(args.vd))
    for name in sorted(os.listdir(args.out)):
        if name.endswith(".csv"):
            manifest.add_output(os.path.join(args.out, name))
    manifest.write(os.path.join(args.out, "manifest.json"))
    return EXIT_OK


# --- Parser ---
def _add_data_args(p):
    p.add_argument("--dataset", help="dataset CSV written by gen-data")
    p.add_argument("--step", type=int, default=10, choices=device.SUPPORTED_STEPS, help="mV")


def _add_model_args(p, many: bool):
    group = p.add_mutually_exclusive_group(required=True)
    group.add_argument("--checkpoint", nargs="+" if many else None, action="store")
    group.add_argument(
        "--oracle", choices=device.FIELDS, help="evaluate the surrogate itself for this target"
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="kanc", description=__doc__.splitlines()[1])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    verbosity = parser.add_mutually_exclusive_group()
    verbosity.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    verbosity.add_argument("-q", "--quiet", action="store_true", help="warnings only")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="tabulate the surrogate device")
    p.add_argument("--step", type=int, required=True, choices=device.SUPPORTED_STEPS, help="mV")
    p.add_argument("--out", required=True, help="dataset CSV path")
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="train one network or a seed sweep")
    p.add_argument("--config", help="TOML config file")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--family", choices=networks.KINDS)
    p.add_argument("--preset", choices=networks.PRESETS)
    p.add_argument("--target", choices=device.FIELDS)
    p.add_argument("--dataset", help="dataset CSV written by gen-data")
    p.add_argument("--step", type=int, choices=device.SUPPORTED_STEPS, help="mV")
    p.add_argument("--seed", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--full-budget", action="store_true")
    p.add_argument("--sweep", type=int, metavar="N", help="train N seeds")
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="train and test MAPE")
    _add_model_args(p, many=True)
    _add_data_args(p)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("derivs", help="transconductance sweeps")
    _add_model_args(p, many=False)
    p.add_argument("--vd", type=float, nargs="+", default=list(evaluate.SWEEP_DRAIN_VOLTAGES))
    p.add_argument("--resolution", type=float, default=evaluate.SWEEP_RESOLUTION, help="V")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_derivs)

    p = sub.add_parser("symbolic", help="symbolic regression of a KAN")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--mode", choices=("posthoc", "iterative"), default="iterative")
    p.add_argument("-k", type=int, help="edges fixed per round (default: from config, 3)")
    p.add_argument("--config", help="TOML config for retraining")
    _add_data_args(p)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_symbolic)

    p = sub.add_parser("report", help="full evaluation report")
    _add_model_args(p, many=True)
    _add_data_args(p)
    p.add_argument("--vd", type=float, nargs="+", default=list(evaluate.SWEEP_DRAIN_VOLTAGES))
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_report)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    level = logging.DEBUG if args.verbose else logging.WARNING if args.quiet else logging.INFO
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)

    try:
        return args.func(args)
    except (
        ConfigError,
        DomainError,
        ShapeError,
        FileNotFoundError,
        IsADirectoryError,
        NotADirectoryError,
        FileExistsError,
    ) as e:
        logger.error("%s", e)
        return EXIT_USAGE
    except DivergenceError as e:
        logger.error("%s", e)
        return EXIT_DIVERGED
    except PermissionError as e:
        logger.error("cannot write output: %s", e)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
