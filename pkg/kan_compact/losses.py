"""
Training objectives.

Each objective knows its normalised inputs and records its loss on a tape
from the network's output node. The same recording, applied to a tape
whose only leaf is the output vector, gives the plain numerical loss.
"""

from typing import Final

import numpy as np

from kan_compact import diffengine as de
from kan_compact.device import I_LEAK, VoltageGridDataset, grid_operator
from kan_compact.errors import ShapeError

LOSS_WEIGHT: Final = 100.0
"""Weight a of the linear-current term"""

DERIVATIVES: Final = (("V_G", 1), ("V_D", 1), ("V_G", 2), ("V_D", 2))
"""(axis, order) of g_m, g_DS, g'_m and g'_DS"""

TERM_NAMES: Final = {
    ("V_G", 1): "g_m",
    ("V_D", 1): "g_DS",
    ("V_G", 2): "g'_m",
    ("V_D", 2): "g'_DS",
}


def mse(pred, true) -> float:
    pred = np.asarray(pred, dtype=np.float64)
    true = np.asarray(true, dtype=np.float64)
    if pred.shape != true.shape or pred.size == 0:
        raise ShapeError(f"mse needs equal nonempty shapes, got {pred.shape} and {true.shape}")
    return float(np.mean((pred - true) ** 2))


def _mse(pred: de.Var, true: np.ndarray) -> de.Var:
    return de.mean((pred - true) ** 2)


class Objective:
    """Base class: subclasses set ``X`` and implement ``record_terms``."""

    X: np.ndarray

    def record_terms(self, y: de.Var) -> dict[str, de.Var]:
        raise NotImplementedError

    def combine(self, terms: dict[str, de.Var]) -> de.Var:
        total = None
        for term in terms.values():
            total = term if total is None else total + term
        return total

    def record(self, y: de.Var) -> de.Var:
        return self.combine(self.record_terms(y))

    def terms(self, y_pred) -> dict[str, float]:
        """Value of every loss term for a given output vector."""
        tape = de.Tape()
        y = tape.leaf(y_pred, "y")
        return {name: float(v.value) for name, v in self.record_terms(y).items()}

    def __call__(self, y_pred) -> float:
        tape = de.Tape()
        return float(self.record(tape.leaf(y_pred, "y")).value)


class RegressionObjective(Objective):
    """Plain mean squared error against fixed targets."""

    def __init__(self, X, y):
        self.X = np.asarray(X, dtype=np.float64)
        self.y = np.asarray(y, dtype=np.float64)
        if self.X.shape[0] != self.y.shape[0]:
            raise ShapeError("inputs and targets differ in length")

    def record_terms(self, y):
        return {"y": _mse(y, self.y)}


class CurrentObjective(Objective):
    """
    Drain-current loss on the train sub-grid.

    a·Er(I_D) + Er(ln I_D) + Er(g_m) + Er(g_DS) + Er(g'_m) + Er(g'_DS), with the
    network output read as y_I = ln I_D and every derivative a grid finite
    difference at the sub-grid spacing on both sides. Data currents carry the
    leakage floor I_LEAK so the log term stays finite where I_D = 0.
    """

    def __init__(self, dataset: VoltageGridDataset, a: float = LOSS_WEIGHT):
        self.dataset = dataset
        self.a = float(a)
        self.X = dataset.train.inputs()
        self.I_true = dataset.train.I_D + I_LEAK
        self.y_true = np.log(self.I_true)
        self.operators = {
            key: grid_operator(dataset.train_shape, dataset.step, *key) for key in DERIVATIVES
        }
        self.derivative_targets = {key: D @ self.I_true for key, D in self.operators.items()}

    def record_terms(self, y):
        I_pred = de.exp(y)
        terms = {
            "I_D": _mse(I_pred, self.I_true),
            "log I_D": _mse(y, self.y_true),
        }
        for key, D in self.operators.items():
            terms[TERM_NAMES[key]] = _mse(de.linmap(D, I_pred), self.derivative_targets[key])
        return terms

    def combine(self, terms):
        rest = [v for name, v in terms.items() if name != "I_D"]
        total = terms["I_D"] * self.a
        for term in rest:
            total = total + term
        return total


class ChargeObjective(Objective):
    """Er(Q) + Er(dQ/dV_G) + Er(dQ/dV_D) on the train sub-grid, in 1e-18 F units."""

    def __init__(self, dataset: VoltageGridDataset, field: str):
        self.dataset = dataset
        self.field = field
        self.X = dataset.train.inputs()
        self.Q_true = dataset.train.field(field)
        self.operators = {
            key: grid_operator(dataset.train_shape, dataset.step, *key) for key in DERIVATIVES[:2]
        }
        self.derivative_targets = {key: D @ self.Q_true for key, D in self.operators.items()}

    def record_terms(self, y):
        terms = {self.field: _mse(y, self.Q_true)}
        for (axis, _), D in self.operators.items():
            terms[f"d{self.field}/d{axis}"] = _mse(
                de.linmap(D, y), self.derivative_targets[(axis, 1)]
            )
        return terms


def make_objective(dataset: VoltageGridDataset, target: str, a: float = LOSS_WEIGHT) -> Objective:
    if target == "I_D":
        return CurrentObjective(dataset, a)
    return ChargeObjective(dataset, target)


def loss_current(y_pred, dataset: VoltageGridDataset, a: float = LOSS_WEIGHT) -> float:
    """Current loss for network outputs y_I given at every train point (row order)."""
    y_pred = np.asarray(y_pred, dtype=np.float64)
    if y_pred.shape != (len(dataset.train),):
        raise ShapeError(f"expected {len(dataset.train)} outputs, got {y_pred.shape}")
    return CurrentObjective(dataset, a)(y_pred)


def loss_charge(y_pred, dataset: VoltageGridDataset, field: str = "Q_S") -> float:
    y_pred = np.asarray(y_pred, dtype=np.float64)
    if y_pred.shape != (len(dataset.train),):
        raise ShapeError(f"expected {len(dataset.train)} outputs, got {y_pred.shape}")
    return ChargeObjective(dataset, field)(y_pred)
