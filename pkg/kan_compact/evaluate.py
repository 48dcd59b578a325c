"""
Ratio-based error metrics, derivative sweeps, waviness and report files.
"""

import csv
import logging
import os
from collections.abc import Sequence
from dataclasses import dataclass, field
from typing import Final, Protocol

import numpy as np

from kan_compact.device import (
    I_LEAK,
    V_MAX,
    FieldTable,
    VoltageGridDataset,
    convert_current,
    normalize_voltage,
    surrogate,
)
from kan_compact.errors import DomainError, MetricError, ShapeError

logger = logging.getLogger(__name__)

# --- Constants ---
MAPE_CHARGE_FLOOR: Final = 0.01
"""Charges below this magnitude are left out of charge MAPE [1e-18 F]"""

SWEEP_DRAIN_VOLTAGES: Final = (0.4, 0.8)
"""Fixed drain voltages of the default transconductance sweeps [V]"""

SWEEP_RESOLUTION: Final = 1e-3
"""Gate-voltage spacing of derivative sweeps [V]"""


class Predictor(Protocol):
    """Anything with network-unit predictions on normalised inputs."""

    conversion: str
    metadata: dict

    def predict(self, X) -> np.ndarray: ...


def _as_pair(pred, true):
    pred = np.asarray(pred, dtype=np.float64)
    true = np.asarray(true, dtype=np.float64)
    if pred.shape != true.shape or pred.size == 0:
        raise ShapeError(f"MAPE needs equal nonempty shapes, got {pred.shape} and {true.shape}")
    return pred, true


def mape(pred, true) -> float:
    """Ratio MAPE sum|y - y_hat| / sum|y|, as a fraction."""
    pred, true = _as_pair(pred, true)
    denominator = np.abs(true).sum()
    if denominator == 0:
        raise MetricError("MAPE is undefined for an all-zero truth")
    return float(np.abs(true - pred).sum() / denominator)


def mape_charge(pred, true, floor: float = MAPE_CHARGE_FLOOR) -> float:
    """Ratio MAPE over the points whose true charge magnitude reaches the floor."""
    pred, true = _as_pair(pred, true)
    keep = np.abs(true) >= floor
    if not keep.any():
        raise MetricError(f"every charge lies below the {floor} floor")
    return mape(pred[keep], true[keep])


def predict(model: Predictor, table: FieldTable) -> np.ndarray:
    """Physical-unit prediction: amperes for current models, 1e-18 F for charge models."""
    y = model.predict(table.inputs())
    return convert_current(y) if model.conversion == "exp-current" else y


def target_mape(model: Predictor, table: FieldTable, target: str) -> float:
    pred = predict(model, table)
    true = table.field(target)
    return mape(pred, true) if target == "I_D" else mape_charge(pred, true)


# --- Seed statistics ---
@dataclass(frozen=True)
class SweepStatistics:
    """Box-plot statistics with linearly interpolated quartiles."""

    min: float
    q25: float
    median: float
    q75: float
    max: float


def sweep_statistics(values) -> SweepStatistics:
    values = np.asarray(values, dtype=np.float64)
    values = values[np.isfinite(values)]
    if values.size == 0:
        return SweepStatistics(*([float("nan")] * 5))
    q = np.percentile(values, [0, 25, 50, 75, 100], method="linear")
    return SweepStatistics(*(float(v) for v in q))


# --- Derivative sweeps ---
@dataclass(frozen=True, eq=False)
class DerivativeCurve:
    """A model response along V_G at fixed V_D, with its first and second derivatives."""

    V_D: float
    V_G: np.ndarray
    response: np.ndarray
    g_m: np.ndarray
    g_m2: np.ndarray


def derivative_sweep(
    model: Predictor, V_D_fixed: float = SWEEP_DRAIN_VOLTAGES[0], resolution: float = SWEEP_RESOLUTION
) -> DerivativeCurve:
    """
    g_m = dI_D/dV_G and its derivative along a dense gate-voltage axis.

    Parameters:
    - model: current model (for charge models the charge is differentiated)
    - V_D_fixed: drain voltage of the sweep [V]
    - resolution: gate-voltage spacing [V]
    """
    if not 0.0 <= V_D_fixed <= V_MAX:
        raise DomainError(f"V_D = {V_D_fixed} V outside [0, {V_MAX}] V")
    n = int(round(V_MAX / resolution)) + 1
    V_G = np.linspace(0.0, V_MAX, n)
    X = normalize_voltage(np.column_stack([np.full(n, V_D_fixed), V_G]))
    y = model.predict(X)
    response = convert_current(y) if model.conversion == "exp-current" else y
    h = V_G[1] - V_G[0]
    g_m = np.gradient(response, h, edge_order=2)
    g_m2 = np.gradient(g_m, h, edge_order=2)
    return DerivativeCurve(float(V_D_fixed), V_G, response, g_m, g_m2)


def waviness(curve) -> float:
    """
    Oscillation beyond a single rise and fall.

    Total variation of the curve minus the largest total variation of a
    subsequence with at most one turning point (rise then fall, or fall then
    rise). Monotone and single-peak curves score 0, every extra wiggle adds to
    the score.
    """
    curve = np.asarray(curve, dtype=np.float64)
    if curve.size < 2:
        return 0.0
    total = np.abs(np.diff(curve)).sum()
    low_before = np.minimum.accumulate(curve)
    low_after = np.minimum.accumulate(curve[::-1])[::-1]
    high_before = np.maximum.accumulate(curve)
    high_after = np.maximum.accumulate(curve[::-1])[::-1]
    peak = np.max(2.0 * curve - low_before - low_after)
    valley = np.max(high_before + high_after - 2.0 * curve)
    excess = total - max(peak, valley)
    # summation rounding
    if excess <= curve.size * np.finfo(np.float64).eps * total:
        return 0.0
    return float(excess)


# --- Oracle ---
class SurrogateOracle:
    """The surrogate device presented as a trained model, in network units."""

    def __init__(self, target: str = "I_D"):
        self.target = target
        self.conversion = "exp-current" if target == "I_D" else "charge-scale"
        self.metadata = {"target": target, "seed": 0, "family": "oracle"}

    def predict(self, X) -> np.ndarray:
        V = np.clip(np.asarray(X, dtype=np.float64) * V_MAX, 0.0, V_MAX)
        value = surrogate(V[:, 0], V[:, 1])[self.target]
        return np.log(value + I_LEAK) if self.target == "I_D" else value


# --- Reports ---
@dataclass
class EvalReport:
    target: str
    step: int
    seed: int
    train_mape: float
    test_mape: float
    curves: dict[float, DerivativeCurve] = field(default_factory=dict)
    waviness: dict[float, float] = field(default_factory=dict)
    """waviness of g'_m per sweep drain voltage"""
    train_stats: SweepStatistics | None = None
    test_stats: SweepStatistics | None = None


def evaluate_model(
    model: Predictor,
    dataset: VoltageGridDataset,
    sweeps: Sequence[float] = SWEEP_DRAIN_VOLTAGES,
) -> EvalReport:
    target = model.metadata.get("target", "I_D")
    scores = [
        target_mape(model, dataset.split(s), target) if len(dataset.split(s)) else 0.0
        for s in ("train", "test")
    ]
    report = EvalReport(target, dataset.step_mv, int(model.metadata.get("seed", 0)), *scores)
    for V_D in sweeps:
        curve = derivative_sweep(model, V_D)
        report.curves[V_D] = curve
        report.waviness[V_D] = waviness(curve.g_m2)
    return report


def _fmt(value: float) -> str:
    return f"{value:.17g}"


def write_curve(curve: DerivativeCurve, path: str):
    with open(path, "w", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(("V_G", "g_m", "g_m2"))
        for row in zip(curve.V_G, curve.g_m, curve.g_m2):
            writer.writerow([_fmt(v) for v in row])


def make_report(
    models: Sequence[Predictor],
    dataset: VoltageGridDataset,
    out_dir: str,
    sweeps: Sequence[float] = SWEEP_DRAIN_VOLTAGES,
) -> list[EvalReport]:
    """
    Evaluate every model and write plot-ready tables into ``out_dir``.

    Files: ``summary.csv`` (one row per model), ``curve_<n>_vd<V_D>.csv`` per
    sweep, and ``statistics.csv`` when more than one model is given.
    """
    os.makedirs(out_dir, exist_ok=True)
    reports = [evaluate_model(m, dataset, sweeps) for m in models]

    if len(reports) > 1:
        train_stats = sweep_statistics([r.train_mape for r in reports])
        test_stats = sweep_statistics([r.test_mape for r in reports])
        for r in reports:
            r.train_stats, r.test_stats = train_stats, test_stats
        with open(os.path.join(out_dir, "statistics.csv"), "w", newline="") as f:
            writer = csv.writer(f, lineterminator="\n")
            writer.writerow(("split", *vars(train_stats)))
            writer.writerow(("train", *map(_fmt, vars(train_stats).values())))
            writer.writerow(("test", *map(_fmt, vars(test_stats).values())))

    with open(os.path.join(out_dir, "summary.csv"), "w", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(
            ("target", "step", "seed", "train_mape", "test_mape")
            + tuple(f"waviness@{V_D:g}V" for V_D in sweeps)
        )
        for r in reports:
            writer.writerow(
                (r.target, r.step, r.seed, _fmt(r.train_mape), _fmt(r.test_mape))
                + tuple(_fmt(r.waviness[V_D]) for V_D in sweeps)
            )

    for index, r in enumerate(reports):
        for V_D, curve in r.curves.items():
            write_curve(curve, os.path.join(out_dir, f"curve_{index}_vd{V_D:.3f}.csv"))
    logger.info("report for %d model(s) written to %s", len(reports), out_dir)
    return reports
