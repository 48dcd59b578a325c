"""
Analytical surrogate FinFET and the voltage-grid datasets built from it.

The surrogate gives drain current and terminal charges in closed form over the
quadrant 0 <= V_D, V_G <= 0.82 V. Datasets tabulate it on a 5 mV master grid
and mark a coarser sub-grid as training data; the rest is test data.
"""

import csv
import logging
import os
from collections.abc import Iterator
from dataclasses import dataclass
from typing import Final

import numpy as np
import scipy.sparse as sparse
import sympy as sp

from kan_compact.errors import DomainError, ShapeError

logger = logging.getLogger(__name__)

# --- Model Constants ---
V_MAX: Final = 0.82
"""Upper end of both voltage sweeps [V]"""

V_T: Final = 0.0258
"""Thermal voltage [V]"""

V_TH: Final = 0.25
"""Threshold voltage [V]"""

N_SLOPE: Final = 1.2
"""Subthreshold slope factor [-]"""

K_DRIVE: Final = 5e-3
"""Drive-current prefactor [A/V^2]"""

C0: Final = 60.0
"""Channel charge per volt of overdrive [1e-18 F/V]"""

I_LEAK: Final = 1e-15
"""Leakage floor added to currents before taking logarithms [A]"""

CHARGE_SCALE: Final = 1e-18
"""Physical value of one charge unit [F]"""

# --- Grid Constants ---
MASTER_STEP_MV: Final = 5
"""Spacing of the master grid [mV]"""

SUPPORTED_STEPS: Final = (5, 10, 20, 50)
"""Train sub-grid spacings [mV]"""

FIELDS: Final = ("I_D", "Q_D", "Q_S", "Q_G")
"""Tabulated device responses, in column order"""

AXES: Final = ("V_D", "V_G")


def _overdrive(V_G):
    """Smoothed gate overdrive F(V_G) [V]"""
    z = (np.asarray(V_G, dtype=np.float64) - V_TH) / (N_SLOPE * V_T)
    return N_SLOPE * V_T * np.logaddexp(0.0, z)


def surrogate(V_D, V_G) -> dict[str, np.ndarray]:
    """
    Vectorised surrogate responses.

    Parameters:
    - V_D, V_G: drain and gate voltages [V], broadcastable arrays
    Returns:
    - dict with I_D [A] and Q_D, Q_S, Q_G [1e-18 F]
    """
    V_D = np.asarray(V_D, dtype=np.float64)
    V_G = np.asarray(V_G, dtype=np.float64)
    for name, v in (("V_D", V_D), ("V_G", V_G)):
        if np.any(v < 0.0) or np.any(v > V_MAX) or not np.all(np.isfinite(v)):
            raise DomainError(f"{name} outside [0, {V_MAX}] V")

    F = _overdrive(V_G)
    I_D = K_DRIVE * F**2 * np.tanh(V_D / (0.08 + 0.6 * F))
    Q_S = -C0 * F
    Q_D = -C0 * F * (0.35 + 0.25 * np.tanh((V_D - 0.3) / 0.2))
    Q_G = -(Q_S + Q_D) * 1.5
    return {"I_D": I_D, "Q_D": Q_D, "Q_S": Q_S * np.ones_like(Q_D), "Q_G": Q_G}


def surrogate_expressions() -> dict[str, sp.Expr]:
    """The same closed forms as sympy expressions in symbols V_d, V_g."""
    V_d, V_g = sp.symbols("V_d V_g", real=True)
    nvt = sp.Float(N_SLOPE) * sp.Float(V_T)
    F = nvt * sp.log(1 + sp.exp((V_g - sp.Float(V_TH)) / nvt))
    Q_S = -sp.Float(C0) * F
    Q_D = -sp.Float(C0) * F * (sp.Float(0.35) + sp.Float(0.25) * sp.tanh((V_d - 0.3) / 0.2))
    return {
        "I_D": sp.Float(K_DRIVE) * F**2 * sp.tanh(V_d / (sp.Float(0.08) + sp.Float(0.6) * F)),
        "Q_D": Q_D,
        "Q_S": Q_S,
        "Q_G": -(Q_S + Q_D) * sp.Float(1.5),
    }


@dataclass(frozen=True)
class DevicePoint:
    V_D: float
    V_G: float
    I_D: float
    Q_D: float
    Q_S: float
    Q_G: float

    @property
    def Q_B(self) -> float:
        """Bulk charge closing the terminal-charge balance [1e-18 F]"""
        return -(self.Q_D + self.Q_S + self.Q_G)


def surrogate_eval(V_D: float, V_G: float) -> DevicePoint:
    out = surrogate(V_D, V_G)
    return DevicePoint(float(V_D), float(V_G), *(float(out[f]) for f in FIELDS))


# --- Datasets ---
@dataclass(frozen=True, eq=False)
class FieldTable:
    """Column-oriented device samples; rows of a train table are V_D-major."""

    V_D: np.ndarray
    V_G: np.ndarray
    I_D: np.ndarray
    Q_D: np.ndarray
    Q_S: np.ndarray
    Q_G: np.ndarray

    def __len__(self):
        return len(self.V_D)

    def field(self, name: str) -> np.ndarray:
        if name not in FIELDS + AXES:
            raise DomainError(f"unknown field {name!r}")
        return getattr(self, name)

    def inputs(self) -> np.ndarray:
        """Network inputs (V_D, V_G) / V_MAX, shape (p, 2)."""
        return normalize_voltage(np.column_stack([self.V_D, self.V_G]))

    def points(self) -> Iterator[DevicePoint]:
        for row in zip(self.V_D, self.V_G, self.I_D, self.Q_D, self.Q_S, self.Q_G):
            yield DevicePoint(*(float(v) for v in row))


@dataclass(frozen=True, eq=False)
class VoltageGridDataset:
    """
    Surrogate responses on the master grid with a train/test partition.

    Parameters:
    - step_mv: train sub-grid spacing [mV]
    - vd_axis, vg_axis: master-grid axes [V]
    - train_vd_axis, train_vg_axis: sub-grid axes [V]
    - train, test: disjoint tables whose union is the master grid
    """

    step_mv: int
    vd_axis: np.ndarray
    vg_axis: np.ndarray
    train_vd_axis: np.ndarray
    train_vg_axis: np.ndarray
    train: FieldTable
    test: FieldTable

    @property
    def step(self) -> float:
        """Train sub-grid spacing [V]"""
        return self.step_mv / 1000.0

    @property
    def train_shape(self) -> tuple[int, int]:
        return len(self.train_vd_axis), len(self.train_vg_axis)

    def split(self, name: str) -> FieldTable:
        if name == "train":
            return self.train
        if name == "test":
            return self.test
        raise DomainError(f"unknown split {name!r}")


def normalize_voltage(v):
    return np.asarray(v, dtype=np.float64) / V_MAX


def _table(V_D, V_G, values: dict[str, np.ndarray], mask) -> FieldTable:
    return FieldTable(
        V_D[mask], V_G[mask], *(np.asarray(values[f])[mask] for f in FIELDS)
    )


def _partition(mv_d, mv_g, values, step_mv) -> VoltageGridDataset:
    train_mask = (mv_d % step_mv == 0) & (mv_g % step_mv == 0)
    V_D = mv_d / 1000.0
    V_G = mv_g / 1000.0
    axis_mv = np.unique(mv_d)
    train_axis = axis_mv[axis_mv % step_mv == 0] / 1000.0
    return VoltageGridDataset(
        step_mv=step_mv,
        vd_axis=axis_mv / 1000.0,
        vg_axis=np.unique(mv_g) / 1000.0,
        train_vd_axis=train_axis,
        train_vg_axis=train_axis.copy(),
        train=_table(V_D, V_G, values, train_mask),
        test=_table(V_D, V_G, values, ~train_mask),
    )


def generate_dataset(step: int) -> VoltageGridDataset:
    """
    Tabulate the surrogate on the 5 mV master grid and split off the train sub-grid.

    Parameters:
    - step: train sub-grid spacing in millivolts, one of SUPPORTED_STEPS
    """
    if step not in SUPPORTED_STEPS:
        raise DomainError(f"unsupported step {step} mV; choose from {SUPPORTED_STEPS}")

    axis_mv = np.arange(0, round(V_MAX * 1000) + 1, MASTER_STEP_MV)
    mv_d, mv_g = np.meshgrid(axis_mv, axis_mv, indexing="ij")
    mv_d, mv_g = mv_d.ravel(), mv_g.ravel()
    values = surrogate(mv_d / 1000.0, mv_g / 1000.0)

    dataset = _partition(mv_d, mv_g, values, step)
    logger.info(
        "generated %d mV dataset: %d train / %d test points",
        step,
        len(dataset.train),
        len(dataset.test),
    )
    return dataset


def convert_current(y_I):
    """Network output to drain current, I_D = exp(y_I) [A]."""
    return np.exp(y_I)


def convert_charge(y_Q):
    """Network output to physical charge [F]."""
    return np.asarray(y_Q) * CHARGE_SCALE


def log_current(I_D):
    """Training target for current networks, ln(I_D + I_LEAK)."""
    return np.log(np.asarray(I_D) + I_LEAK)


def bulk_charge(table: FieldTable) -> np.ndarray:
    """
    Bulk charge Q_B of every row [1e-18 F].

    Computed from the surrogate's own charge partition, Q_B = (Q_S + Q_D) / 2,
    which balances the other three terminals.
    """
    values = surrogate(table.V_D, table.V_G)
    return 0.5 * (values["Q_S"] + values["Q_D"])


@dataclass(frozen=True)
class SplitSummary:
    train: int
    test: int
    train_percent: float


def split_summary(dataset: VoltageGridDataset) -> SplitSummary:
    n_train, n_test = len(dataset.train), len(dataset.test)
    return SplitSummary(n_train, n_test, 100.0 * n_train / (n_train + n_test))


# --- Grid derivatives ---
def _stencil(n: int, h: float) -> sparse.csr_matrix:
    """First-derivative operator on n uniform points: central inside, one-sided at the ends."""
    if n < 3:
        raise ShapeError(f"need at least 3 points along the axis, got {n}")
    D = sparse.lil_matrix((n, n))
    for i in range(1, n - 1):
        D[i, i - 1] = -1.0
        D[i, i + 1] = 1.0
    D[0, :3] = [-3.0, 4.0, -1.0]
    D[n - 1, n - 3 :] = [1.0, -4.0, 3.0]
    return (D / (2.0 * h)).tocsr()


def grid_operator(shape: tuple[int, int], h: float, axis: str, order: int = 1):
    """
    Sparse operator differentiating a V_D-major flattened field on a rectangular grid.

    Parameters:
    - shape: (number of V_D points, number of V_G points)
    - h: grid spacing [V]
    - axis: "V_D" or "V_G"
    - order: 1 or 2
    """
    if order not in (1, 2):
        raise DomainError(f"derivative order must be 1 or 2, got {order}")
    n_d, n_g = shape
    if axis == "V_D":
        D = sparse.kron(_stencil(n_d, h), sparse.identity(n_g), format="csr")
    elif axis == "V_G":
        D = sparse.kron(sparse.identity(n_d), _stencil(n_g, h), format="csr")
    else:
        raise DomainError(f"unknown axis {axis!r}")
    return D if order == 1 else (D @ D).tocsr()


def grid_derivative(
    dataset: VoltageGridDataset, field, axis: str, order: int = 1
) -> np.ndarray:
    """
    Finite-difference derivative of a field over the train sub-grid.

    Parameters:
    - dataset: supplies the sub-grid shape and spacing
    - field: a field name (I_D, Q_D, Q_S, Q_G, V_D, V_G) or values in train row order
    - axis: "V_D" or "V_G"
    - order: 1 or 2
    Returns:
    - derivative array of shape (n_VD, n_VG)
    """
    shape = dataset.train_shape
    values = dataset.train.field(field) if isinstance(field, str) else np.asarray(field)
    if values.size != shape[0] * shape[1]:
        raise ShapeError(f"field has {values.size} values, train grid has {shape}")
    D = grid_operator(shape, dataset.step, axis, order)
    return (D @ values.reshape(-1)).reshape(shape)


# --- Delimited text ---
HEADER: Final = (*AXES, *FIELDS, "split")


def save_dataset(dataset: VoltageGridDataset, path: str):
    """Write every point as one CSV row, 17 significant digits, V_D-major order."""
    rows = []
    for split in ("train", "test"):
        table = dataset.split(split)
        columns = [table.field(name) for name in (*AXES, *FIELDS)]
        for values in zip(*columns):
            rows.append((values[0], values[1], [f"{v:.17g}" for v in values], split))
    rows.sort(key=lambda row: (row[0], row[1]))

    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "w", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(HEADER)
        for _, _, formatted, split in rows:
            writer.writerow([*formatted, split])


def load_dataset(path: str) -> VoltageGridDataset:
    with open(path, newline="") as f:
        reader = csv.reader(f)
        header = tuple(next(reader))
        if header != HEADER:
            raise DomainError(f"unexpected dataset header {header}")
        rows = list(reader)

    numbers = np.array([[float(v) for v in row[:-1]] for row in rows])
    labels = {row[-1] for row in rows}
    if not labels <= {"train", "test"}:
        raise DomainError(f"unknown split labels {sorted(labels - {'train', 'test'})} in {path}")
    is_train = np.array([row[-1] == "train" for row in rows])
    mv_d = np.rint(numbers[:, 0] * 1000).astype(np.int64)
    mv_g = np.rint(numbers[:, 1] * 1000).astype(np.int64)

    train_mv = np.unique(mv_d[is_train])
    step_mv = int(train_mv[1] - train_mv[0]) if len(train_mv) > 1 else MASTER_STEP_MV
    if step_mv not in SUPPORTED_STEPS:
        raise DomainError(f"dataset {path} has unsupported step {step_mv} mV")
    expected = (mv_d % step_mv == 0) & (mv_g % step_mv == 0)
    if not np.array_equal(is_train, expected):
        mismatched = int(np.count_nonzero(is_train != expected))
        raise DomainError(
            f"split column of {path} disagrees with the {step_mv} mV sub-grid on {mismatched} rows"
        )

    values = {name: numbers[:, 2 + i] for i, name in enumerate(FIELDS)}
    return _partition(mv_d, mv_g, values, step_mv)
