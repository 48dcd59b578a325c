"""
Per-family training procedures and seed sweeps.

MLPs and Fourier KANs are trained with full-batch Adam (plateau and step-decay
schedules respectively). KANs are trained with L-BFGS on each grid of the
refinement ladder, the splines being transferred onto the next grid between
stages.
"""

import csv
import logging
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from kan_compact import diffengine as de
from kan_compact import networks
from kan_compact.config import TrainConfig
from kan_compact.device import VoltageGridDataset, generate_dataset
from kan_compact.errors import EvaluationError, ShapeError
from kan_compact.evaluate import SweepStatistics, sweep_statistics, target_mape
from kan_compact.losses import Objective, make_objective
from kan_compact.networks import Checkpoint
from kan_compact.optimizers import Adam, Lbfgs, ParamPacker, PlateauSchedule, step_decay_lr

logger = logging.getLogger(__name__)


@dataclass
class TrainLog:
    """Per-epoch record of one training run."""

    epochs: list[int] = field(default_factory=list)
    losses: list[float] = field(default_factory=list)
    lrs: list[float] = field(default_factory=list)
    stages: list[int] = field(default_factory=list)
    stage_starts: list[int] = field(default_factory=list)
    stage_losses: list[tuple[float, float]] = field(default_factory=list)
    """(loss before, loss after) each grid transfer"""
    wall_clock: float = 0.0
    diverged: bool = False
    settings: dict = field(default_factory=dict)

    def record(self, loss: float, lr: float, stage: int = 0):
        self.epochs.append(len(self.epochs))
        self.losses.append(float(loss))
        self.lrs.append(float(lr))
        self.stages.append(stage)

    def start_stage(self, stage: int):
        self.stage_starts.append(len(self.epochs))
        logger.debug("stage %d starts at epoch %d", stage, len(self.epochs))

    @property
    def final_loss(self) -> float:
        return self.losses[-1] if self.losses else float("nan")

    def to_csv(self, path: str):
        os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
        with open(path, "w", newline="") as f:
            writer = csv.writer(f, lineterminator="\n")
            writer.writerow(("epoch", "loss", "lr", "stage"))
            for row in zip(self.epochs, self.losses, self.lrs, self.stages):
                writer.writerow((row[0], f"{row[1]:.17g}", f"{row[2]:.17g}", row[3]))


class Problem:
    """Loss and gradient of an objective as a function of the flat parameter vector."""

    def __init__(self, spec, params, fixed, objective: Objective):
        self.spec = spec
        self.fixed = dict(fixed)
        self.packer = ParamPacker(params)
        t = networks.trace(spec, params, objective.X, fixed)
        self.tape = t.tape
        self.tape.mark_output(objective.record(t.output))

    def __call__(self, theta: np.ndarray) -> tuple[float, np.ndarray]:
        values = self.packer.unpack(theta)
        (loss,) = de.forward(self.tape, [values[n] for n in self.packer.names])
        grads = de.backward(self.tape, 0)
        return float(loss), self.packer.pack(grads)

    def loss(self, theta: np.ndarray) -> float:
        values = self.packer.unpack(theta)
        return float(de.forward(self.tape, [values[n] for n in self.packer.names])[0])


def _objective(config: TrainConfig, objective, dataset):
    if objective is not None:
        return objective
    return make_objective(dataset or generate_dataset(config.step), config.target, config.a)


def _checkpoint(spec, params, fixed, config: TrainConfig, log: TrainLog) -> Checkpoint:
    metadata = {
        "family": spec.kind,
        "preset": config.preset_name,
        "target": config.target,
        "step": config.step,
        "seed": config.seed,
        "epochs": len(log.epochs),
        "final_loss": log.final_loss,
        "diverged": log.diverged,
    }
    return Checkpoint(spec, params, dict(fixed), metadata)


def _adam_loop(problem: Problem, theta, adam: Adam, epochs: int, log: TrainLog, lr_at, config):
    """
    Shared Adam loop. ``lr_at(epoch, loss)`` returns the learning rate for the
    next step, or None to stop. On a non-finite loss the last parameters with
    a finite loss are returned and the log is flagged.
    """
    previous = theta
    for epoch in range(epochs):
        try:
            loss, grad = problem(theta)
        except EvaluationError:
            loss, grad = np.nan, None
        if not np.isfinite(loss):
            log.diverged = True
            logger.warning("non-finite loss at epoch %d, training halted", epoch)
            return previous
        log.record(loss, adam.lr)
        if epoch % config.log_every == 0:
            logger.info("epoch %d: loss %.6e lr %.3e", epoch, loss, adam.lr)
        previous = theta
        theta = adam.step(theta, grad)
        lr = lr_at(epoch + 1, loss)
        if lr is None:
            logger.info("learning rate below %.1e after epoch %d, stopping", config.min_lr, epoch)
            break
        adam.lr = lr
    return theta


def train_mlp(
    config: TrainConfig,
    dataset: VoltageGridDataset | None = None,
    objective: Objective | None = None,
    spec: networks.NetworkSpec | None = None,
) -> tuple[Checkpoint, TrainLog]:
    """
    Full-batch Adam with a plateau learning-rate schedule.

    Parameters:
    - config: run settings
    - dataset: train data; generated from config.step when omitted
    - objective: overrides the data loss (used for unit problems)
    - spec: overrides the preset architecture
    """
    objective = _objective(config, objective, dataset)
    spec = spec or config.network()
    params = networks.init_params(spec, np.random.default_rng(config.seed))
    problem = Problem(spec, params, {}, objective)
    theta = problem.packer.pack(params)

    schedule = PlateauSchedule(
        config.resolved_lr,
        window=config.plateau_window,
        threshold=config.plateau_threshold,
        factor=config.plateau_factor,
        min_lr=config.min_lr,
    )
    adam = Adam(config.resolved_lr, weight_decay=config.weight_decay)
    log = TrainLog(
        settings={
            "optimizer": "adam",
            "plateau_window": config.plateau_window,
            "plateau_threshold": config.plateau_threshold,
            "plateau_factor": config.plateau_factor,
            "weight_decay": config.weight_decay,
        }
    )

    def lr_at(epoch, loss):
        lr = schedule.update(loss)
        return None if schedule.stopped else lr

    start = time.perf_counter()
    theta = _adam_loop(problem, theta, adam, config.resolved_epochs, log, lr_at, config)
    log.wall_clock = time.perf_counter() - start
    return _checkpoint(spec, problem.packer.unpack(theta), {}, config, log), log


def train_fkan(
    config: TrainConfig,
    dataset: VoltageGridDataset | None = None,
    objective: Objective | None = None,
    spec: networks.NetworkSpec | None = None,
) -> tuple[Checkpoint, TrainLog]:
    """Full-batch Adam with the learning rate decayed by a constant factor at fixed intervals."""
    objective = _objective(config, objective, dataset)
    spec = spec or config.network()
    params = networks.init_params(spec, np.random.default_rng(config.seed))
    problem = Problem(spec, params, {}, objective)
    theta = problem.packer.pack(params)

    lr0, every = config.resolved_lr, config.resolved_decay_every
    adam = Adam(lr0)
    log = TrainLog(
        settings={"optimizer": "adam", "decay_factor": config.decay_factor, "decay_every": every}
    )

    def lr_at(epoch, loss):
        return step_decay_lr(epoch, lr0, config.decay_factor, every)

    start = time.perf_counter()
    theta = _adam_loop(problem, theta, adam, config.resolved_epochs, log, lr_at, config)
    log.wall_clock = time.perf_counter() - start
    return _checkpoint(spec, problem.packer.unpack(theta), {}, config, log), log


def _lbfgs_stage(problem: Problem, theta, config, lr, epochs, log: TrainLog, stage):
    optimizer = Lbfgs(problem, lr=lr, history=config.history)
    for epoch in range(epochs):
        try:
            new_theta, loss = optimizer.step(theta)
        except EvaluationError:
            loss = np.nan
        if not np.isfinite(loss):
            log.diverged = True
            logger.warning("non-finite loss in stage %d, keeping last finite parameters", stage)
            break
        theta = new_theta
        log.record(loss, lr, stage)
        if epoch % config.log_every == 0:
            logger.info("stage %d epoch %d: loss %.6e", stage, epoch, loss)
        if optimizer.converged:
            logger.debug("L-BFGS converged in stage %d after %d epochs", stage, epoch + 1)
            break
    return theta


def train_kan(
    config: TrainConfig,
    dataset: VoltageGridDataset | None = None,
    objective: Objective | None = None,
    spec: networks.NetworkSpec | None = None,
) -> tuple[Checkpoint, TrainLog]:
    """
    L-BFGS over the grid-refinement ladder.

    The network starts on the first ladder grid; before each later stage the
    splines are transferred onto the next grid and the L-BFGS history is reset.
    """
    objective = _objective(config, objective, dataset)
    spec = (spec or config.network()).with_grid(config.ladder[0])
    if spec.kind != "KAN":
        raise ShapeError(f"train_kan needs a KAN spec, got {spec.kind}")
    params = networks.init_params(spec, np.random.default_rng(config.seed))
    lr = config.resolved_lr
    log = TrainLog(
        settings={
            "optimizer": "lbfgs",
            "history": config.history,
            "line_search": "strong-wolfe, armijo fallback",
            "ladder": list(config.ladder),
        }
    )

    start = time.perf_counter()
    for stage, G in enumerate(config.ladder):
        if G != spec.grids[0]:
            before = Problem(spec, params, {}, objective).loss(ParamPacker(params).pack(params))
            spec, params = networks.refine_network(spec, params, G)
            after = Problem(spec, params, {}, objective).loss(ParamPacker(params).pack(params))
            log.stage_losses.append((before, after))
            logger.info("refined to G=%d: loss %.6e -> %.6e", G, before, after)
        log.start_stage(stage)
        problem = Problem(spec, params, {}, objective)
        theta = _lbfgs_stage(
            problem, problem.packer.pack(params), config, lr, config.stage_epochs, log, stage
        )
        params = problem.packer.unpack(theta)
        if log.diverged:
            break
    log.wall_clock = time.perf_counter() - start
    return _checkpoint(spec, params, {}, config, log), log


TRAINERS = {"MLP": train_mlp, "KAN": train_kan, "FKAN": train_fkan}


def train(
    config: TrainConfig,
    dataset: VoltageGridDataset | None = None,
    objective: Objective | None = None,
    spec: networks.NetworkSpec | None = None,
) -> tuple[Checkpoint, TrainLog]:
    family = spec.kind if spec is not None else config.family
    logger.info(
        "training %s on %s (seed %d, %d epochs)",
        spec or config.preset_name,
        config.target,
        config.seed,
        config.resolved_epochs,
    )
    return TRAINERS[family](config, dataset=dataset, objective=objective, spec=spec)


def retrain(
    checkpoint: Checkpoint, config: TrainConfig, objective: Objective, epochs: int
) -> tuple[Checkpoint, TrainLog]:
    """
    Continue training a checkpoint on its current grid, fixed edges included.

    KANs continue with L-BFGS, the other families with Adam at the configured
    initial learning rate.
    """
    spec, fixed = checkpoint.spec, checkpoint.fixed
    problem = Problem(spec, checkpoint.params, fixed, objective)
    theta = problem.packer.pack(checkpoint.params)
    log = TrainLog(settings={"retrain_epochs": epochs})
    start = time.perf_counter()
    if spec.kind == "KAN":
        log.start_stage(0)
        theta = _lbfgs_stage(problem, theta, config, config.resolved_lr, epochs, log, 0)
    else:
        adam = Adam(config.resolved_lr)
        theta = _adam_loop(problem, theta, adam, epochs, log, lambda e, f: adam.lr, config)
    log.wall_clock = time.perf_counter() - start
    metadata = {**checkpoint.metadata, "final_loss": log.final_loss, "diverged": log.diverged}
    return Checkpoint(spec, problem.packer.unpack(theta), dict(fixed), metadata), log


# --- Seed sweeps ---
@dataclass
class SeedResult:
    seed: int
    train_mape: float
    test_mape: float
    diverged: bool
    checkpoint: Checkpoint
    log: TrainLog


@dataclass
class SweepSummary:
    results: list[SeedResult]
    train: SweepStatistics
    test: SweepStatistics

    @property
    def best(self) -> SeedResult:
        """Seed with the lowest train MAPE among runs that did not diverge."""
        candidates = [r for r in self.results if not r.diverged and np.isfinite(r.train_mape)]
        return min(candidates or self.results, key=lambda r: (r.train_mape, r.seed))

    def to_csv(self, path: str):
        os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
        with open(path, "w", newline="") as f:
            writer = csv.writer(f, lineterminator="\n")
            writer.writerow(("seed", "train_mape", "test_mape", "diverged"))
            for r in self.results:
                writer.writerow((r.seed, f"{r.train_mape:.17g}", f"{r.test_mape:.17g}", r.diverged))
            for name, stats in (("train", self.train), ("test", self.test)):
                for key, value in vars(stats).items():
                    writer.writerow((f"{name}_{key}", f"{value:.17g}", "", ""))


def _run_seed(config: TrainConfig, dataset: VoltageGridDataset) -> SeedResult:
    checkpoint, log = train(config, dataset=dataset)
    scores = []
    for split in ("train", "test"):
        table = dataset.split(split)
        try:
            scores.append(target_mape(checkpoint, table, config.target) if len(table) else 0.0)
        except EvaluationError:
            scores.append(float("nan"))
    return SeedResult(config.seed, scores[0], scores[1], log.diverged, checkpoint, log)


def seed_sweep(
    config: TrainConfig,
    n_seeds: int,
    dataset: VoltageGridDataset | None = None,
    workers: int = 1,
) -> SweepSummary:
    """
    Train one model per seed (config.seed, config.seed + 1, ...) and summarise train/test MAPE.

    Diverged runs are kept in the results and excluded from the statistics.
    """
    if n_seeds < 1:
        raise ValueError("a sweep needs at least one seed")
    dataset = dataset or generate_dataset(config.step)
    configs = [replace(config, seed=config.seed + i) for i in range(n_seeds)]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_run_seed, configs, [dataset] * n_seeds))
    else:
        results = [_run_seed(c, dataset) for c in configs]
    for r in results:
        if r.diverged:
            logger.warning("seed %d diverged", r.seed)
    ok = [r for r in results if not r.diverged]
    return SweepSummary(
        results,
        sweep_statistics([r.train_mape for r in ok]),
        sweep_statistics([r.test_mape for r in ok]),
    )
