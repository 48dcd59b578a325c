"""
Symbolic regression on trained KANs.

Every edge function is matched against the basic-function library with an
affine wrapper c·f(a·x + b) + d: (a, b) by a coarse-to-fine grid search and
(c, d) by linear least squares at every grid point. Fixed edges keep their
four affine parameters trainable, which is what lets the iterative procedure
regain accuracy between fixing rounds.
"""

import json
import logging
import math
import os
from collections.abc import Callable, Sequence
from dataclasses import dataclass, field, replace
from typing import Final

import numpy as np
import sympy as sp

from kan_compact import functions
from kan_compact.config import TrainConfig
from kan_compact.device import V_MAX, VoltageGridDataset
from kan_compact.errors import DivergenceError, EvaluationError, ShapeError, SymbolicError
from kan_compact.evaluate import target_mape
from kan_compact.functions import LIBRARY, BasicFunction
from kan_compact.losses import Objective, make_objective
from kan_compact.networks import Checkpoint, EdgeId, edge_ids
from kan_compact.training import retrain

logger = logging.getLogger(__name__)

# --- Fitting Constants ---
SEARCH_RANGE: Final = (-10.0, 10.0)
"""Range searched for the inner affine parameters a and b"""

GRID_POINTS: Final = 21
"""Grid points per parameter and zoom level"""

ZOOM_LEVELS: Final = 3

MIN_SAMPLES: Final = 8

RENDER_DIGITS: Final = 4
"""Decimals of constants in rendered formulas"""

VARIABLES: Final = ("V_D", "V_G")


@dataclass(frozen=True)
class EdgeFit:
    """Affine-wrapped basic function c·f(a·x + b) + d fitted to one edge."""

    edge: EdgeId | None
    function: str
    a: float
    b: float
    c: float
    d: float
    r2: float
    fixed: bool = False

    def __call__(self, x):
        return self.c * functions.get(self.function)(self.a * np.asarray(x) + self.b) + self.d


def _scores(F: np.ndarray, y: np.ndarray):
    """Closed-form (c, d) and R² for every candidate row of F against y."""
    finite = np.all(np.isfinite(F), axis=-1)
    F = np.where(finite[..., None], F, 0.0)
    Fm = F.mean(axis=-1, keepdims=True)
    ym = y.mean()
    dF = F - Fm
    var_F = (dF**2).mean(axis=-1)
    cov = (dF * (y - ym)).mean(axis=-1)
    var_y = ((y - ym) ** 2).mean()
    with np.errstate(divide="ignore", invalid="ignore"):
        c = np.where(var_F > 0, cov / var_F, 0.0)
        r2 = np.where(var_F > 0, cov**2 / (var_F * var_y), 0.0)
    d = ym - c * Fm[..., 0]
    r2 = np.where(finite & np.isfinite(r2), np.minimum(r2, 1.0), -np.inf)
    return c, d, r2


def fit_basic(x, y, f: BasicFunction | str, edge: EdgeId | None = None) -> EdgeFit:
    """
    Fit c·f(a·x + b) + d to samples.

    Parameters:
    - x, y: at least MIN_SAMPLES samples with x spanning a nondegenerate interval
    - f: library function or its name
    - edge: edge the samples came from, carried into the result
    """
    fn = functions.get(f) if isinstance(f, str) else f
    x = np.asarray(x, dtype=np.float64).ravel()
    y = np.asarray(y, dtype=np.float64).ravel()
    if x.size != y.size or x.size < MIN_SAMPLES:
        raise ShapeError(f"need at least {MIN_SAMPLES} paired samples, got {x.size}/{y.size}")
    if not np.ptp(x) > 0:
        raise ShapeError("sample inputs do not span an interval")
    if np.ptp(y) == 0:
        return EdgeFit(edge, fn.name, 1.0, 0.0, 0.0, float(y[0]), 1.0)

    lo, hi = SEARCH_RANGE
    a_axis = np.linspace(lo, hi, GRID_POINTS)
    b_axis = np.linspace(lo, hi, GRID_POINTS)
    best = None
    for _ in range(ZOOM_LEVELS):
        z = a_axis[:, None, None] * x + b_axis[None, :, None]
        with np.errstate(all="ignore"):
            F = fn.f(z)
        c, d, r2 = _scores(F, y)
        i, j = np.unravel_index(np.argmax(r2), r2.shape)
        if best is None or r2[i, j] > best[-1]:
            best = (a_axis[i], b_axis[j], c[i, j], d[i, j], r2[i, j])
        a0, b0 = best[0], best[1]
        half_a = a_axis[1] - a_axis[0]
        half_b = b_axis[1] - b_axis[0]
        a_axis = np.linspace(max(lo, a0 - half_a), min(hi, a0 + half_a), GRID_POINTS)
        b_axis = np.linspace(max(lo, b0 - half_b), min(hi, b0 + half_b), GRID_POINTS)

    a, b, c, d, r2 = (float(v) for v in best)
    return EdgeFit(edge, fn.name, a, b, c, d, r2)


def suggest(
    x, y, library: Sequence[BasicFunction] = LIBRARY, edge: EdgeId | None = None
) -> list[EdgeFit]:
    """Fits of every library function, best R² first, library order among equals."""
    fits = [fit_basic(x, y, fn, edge) for fn in library]
    return sorted(fits, key=lambda fit: -fit.r2)


def edge_samples(checkpoint: Checkpoint, X, edge: EdgeId) -> tuple[np.ndarray, np.ndarray]:
    """Input and output of one edge function over a set of network inputs."""
    if edge not in edge_ids(checkpoint.spec):
        raise SymbolicError(f"unknown edge {edge}")
    l, i, o = edge
    inputs = checkpoint.layer_inputs(X)[l][:, i]
    outputs = checkpoint.edge_values(X)[l][:, i, o]
    return inputs, outputs


def fix_edge(checkpoint: Checkpoint, edge: EdgeId, fit: EdgeFit) -> Checkpoint:
    """Replace one KAN edge by its fitted basic function; its spline drops out of training."""
    spec = checkpoint.spec
    if spec.kind != "KAN":
        raise SymbolicError("only KAN edges can be fixed")
    if edge not in edge_ids(spec):
        raise SymbolicError(f"unknown edge {edge}")
    if edge in checkpoint.fixed:
        raise SymbolicError(f"edge {edge} is already fixed")
    functions.get(fit.function)

    l, i, o = edge
    params = dict(checkpoint.params)
    name = f"layer{l}.affine"
    affine = params.get(name)
    if affine is None:
        affine = np.tile([1.0, 0.0, 1.0, 0.0], (*spec.layer_shape(l), 1))
    else:
        affine = affine.copy()
    affine[i, o] = (fit.a, fit.b, fit.c, fit.d)
    params[name] = affine
    fixed = {**checkpoint.fixed, edge: fit.function}
    return Checkpoint(spec, params, fixed, dict(checkpoint.metadata))


def current_fit(checkpoint: Checkpoint, edge: EdgeId, r2: float = float("nan")) -> EdgeFit:
    """The fit of an already fixed edge, with the affine parameters as they are now."""
    l, i, o = edge
    a, b, c, d = (float(v) for v in checkpoint.params[f"layer{l}.affine"][i, o])
    return EdgeFit(edge, checkpoint.fixed[edge], a, b, c, d, r2, fixed=True)


@dataclass(frozen=True, eq=False)
class SymbolicModel:
    """A KAN checkpoint together with the fit record of its fixed edges."""

    checkpoint: Checkpoint
    fits: dict[EdgeId, EdgeFit] = field(default_factory=dict)

    @property
    def spec(self):
        return self.checkpoint.spec

    @property
    def conversion(self) -> str:
        return self.checkpoint.conversion

    @property
    def metadata(self) -> dict:
        return self.checkpoint.metadata

    @property
    def complete(self) -> bool:
        return set(self.checkpoint.fixed) == set(edge_ids(self.spec))

    def predict(self, X) -> np.ndarray:
        return self.checkpoint.predict(X)

    def edge_fits(self) -> list[EdgeFit]:
        """Fits with the current (possibly retrained) affine parameters."""
        return [
            current_fit(self.checkpoint, e, self.fits[e].r2 if e in self.fits else float("nan"))
            for e in sorted(self.checkpoint.fixed)
        ]


# --- Formulas ---
def _input_symbols(n: int) -> list[sp.Symbol]:
    if n == 1:
        return [sp.Symbol("x", real=True)]
    return [sp.Symbol(f"x{i}", real=True) for i in range(n)]


def _voltage_symbols() -> list[sp.Symbol]:
    return [sp.Symbol("V_d", real=True), sp.Symbol("V_g", real=True)]


def _round_floats(expr: sp.Expr, digits: int) -> sp.Expr:
    return expr.xreplace({n: sp.Float(round(float(n), digits)) for n in expr.atoms(sp.Float)})


def expression_tree(expr: sp.Expr) -> dict:
    """Machine-readable form of an expression: operator, children, constants."""
    if expr.is_Symbol:
        return {"op": "symbol", "name": expr.name}
    if expr.is_Number:
        return {"op": "const", "value": float(expr)}
    return {"op": type(expr).__name__, "args": [expression_tree(a) for a in expr.args]}


@dataclass(frozen=True, eq=False)
class Formula:
    """
    Closed form of a fully fixed KAN.

    Parameters:
    - expr: full-precision expression in the normalised inputs
    - symbols: the normalised input symbols
    - display: expr in physical variables (V_d, V_g) when the network has two inputs
    - text: display with constants rounded for reading
    - conversion: output conversion of the underlying network
    """

    expr: sp.Expr
    symbols: tuple[sp.Symbol, ...]
    display: sp.Expr
    text: str
    conversion: str

    def evaluate(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        fn = sp.lambdify(self.symbols, self.expr, "numpy")
        out = fn(*(X[:, i] for i in range(X.shape[1])))
        return np.broadcast_to(np.asarray(out, dtype=np.float64), (X.shape[0],)).copy()

    @property
    def tree(self) -> dict:
        return expression_tree(self.expr)

    def save(self, path: str):
        """Write the rendered text next to a JSON expression tree (``.json``)."""
        os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
        with open(path, "w") as f:
            f.write(self.text + "\n")
        document = {
            "inputs": [s.name for s in self.symbols],
            "conversion": self.conversion,
            "expression": self.tree,
            "display": expression_tree(self.display),
        }
        with open(os.path.splitext(path)[0] + ".json", "w") as f:
            json.dump(document, f, indent=1)
            f.write("\n")


def extract_formula(model: SymbolicModel | Checkpoint) -> Formula:
    checkpoint = model.checkpoint if isinstance(model, SymbolicModel) else model
    spec = checkpoint.spec
    missing = [e for e in edge_ids(spec) if e not in checkpoint.fixed]
    if missing:
        raise SymbolicError(f"{len(missing)} edge(s) not fixed, e.g. {missing[0]}")

    symbols = _input_symbols(spec.widths[0])
    nodes: list[sp.Expr] = list(symbols)
    for l in range(spec.n_layers):
        n_in, n_out = spec.layer_shape(l)
        bias = checkpoint.params[f"layer{l}.bias"]
        affine = checkpoint.params[f"layer{l}.affine"]
        outputs = []
        for o in range(n_out):
            total = sp.Float(float(bias[o]))
            for i in range(n_in):
                a, b, c, d = (sp.Float(float(v)) for v in affine[i, o])
                f = functions.get(checkpoint.fixed[(l, i, o)])
                total = total + c * f.sym(a * nodes[i] + b) + d
            outputs.append(total)
        nodes = outputs
    expr = nodes[0]

    if spec.widths[0] == 2:
        display = expr.xreplace(
            {s: v / sp.Float(V_MAX) for s, v in zip(symbols, _voltage_symbols())}
        )
    else:
        display = expr
    text = str(_round_floats(display, RENDER_DIGITS))
    return Formula(expr, tuple(symbols), display, text, spec.conversion)


def formula_derivative(model, variable: str = "V_G", order: int = 1) -> Callable:
    """
    Analytic derivative of the physical response of a formula.

    Returns f(V_D, V_G) giving d^order(response)/d(variable)^order, where the
    response is exp(y) for current models and y itself for charge models.
    """
    formula = model if isinstance(model, Formula) else extract_formula(model)
    if len(formula.symbols) != 2:
        raise SymbolicError("voltage derivatives need a two-input network")
    if variable not in VARIABLES:
        raise SymbolicError(f"unknown variable {variable!r}")
    V = _voltage_symbols()
    response = sp.exp(formula.display) if formula.conversion == "exp-current" else formula.display
    derivative = sp.diff(response, V[VARIABLES.index(variable)], order)
    fn = sp.lambdify(V, derivative, "numpy")

    def evaluate(V_D, V_G):
        V_D, V_G = np.broadcast_arrays(np.asarray(V_D, float), np.asarray(V_G, float))
        return np.broadcast_to(np.asarray(fn(V_D, V_G), dtype=np.float64), V_D.shape).copy()

    return evaluate


# --- Procedures ---
def _best_fits(checkpoint: Checkpoint, X, edges) -> dict[EdgeId, EdgeFit]:
    layer_inputs = checkpoint.layer_inputs(X)
    edge_values = checkpoint.edge_values(X)
    best = {}
    for l, i, o in edges:
        x, y = layer_inputs[l][:, i], edge_values[l][:, i, o]
        best[(l, i, o)] = suggest(x, y, edge=(l, i, o))[0]
    return best


def symbolize(checkpoint: Checkpoint, X) -> SymbolicModel:
    """Post-hoc symbolic regression: fix every edge to its best basic function in one pass."""
    edges = [e for e in edge_ids(checkpoint.spec) if e not in checkpoint.fixed]
    fits = _best_fits(checkpoint, X, edges)
    for edge in edges:
        checkpoint = fix_edge(checkpoint, edge, fits[edge])
    logger.info("fixed %d edges, lowest R² %.4f", len(edges), min(f.r2 for f in fits.values()))
    return SymbolicModel(checkpoint, {e: replace(f, fixed=True) for e, f in fits.items()})


@dataclass
class RoundLog:
    round: int
    edges: list[EdgeId]
    functions: list[str]
    r2: list[float]
    loss: float
    mape: float


def iterative_sr(
    checkpoint: Checkpoint,
    dataset: VoltageGridDataset | None,
    k: int,
    config: TrainConfig,
    objective: Objective | None = None,
    retrain_epochs: int | None = None,
) -> tuple[SymbolicModel, list[RoundLog]]:
    """
    Fix the k worst-fitting edges, retrain, and repeat until every edge is fixed.

    The round that fixes the last edges is not followed by retraining, so k
    covering every edge gives the one-pass result of `symbolize`.

    Parameters:
    - checkpoint: trained KAN
    - dataset: train data for refits, retraining and MAPE (may be None with an objective)
    - k: edges fixed per round
    - config: trainer settings; retraining spends config.retrain_fraction of its budget per round
    - objective: overrides the loss built from dataset and config.target
    - retrain_epochs: overrides the per-round retrain budget
    """
    if k < 1:
        raise SymbolicError("k must be at least 1")
    if objective is None:
        if dataset is None:
            raise SymbolicError("iterative symbolic regression needs a dataset or an objective")
        objective = make_objective(dataset, config.target, config.a)
    if retrain_epochs is None:
        retrain_epochs = math.floor(config.retrain_fraction * config.resolved_epochs)
    X = objective.X

    all_edges = edge_ids(checkpoint.spec)
    fits: dict[EdgeId, EdgeFit] = {}
    rounds: list[RoundLog] = []
    n_rounds = math.ceil(len([e for e in all_edges if e not in checkpoint.fixed]) / k)

    for n in range(n_rounds):
        open_edges = [e for e in all_edges if e not in checkpoint.fixed]
        best = _best_fits(checkpoint, X, open_edges)
        order = sorted(open_edges, key=lambda e: (best[e].r2, all_edges.index(e)))
        chosen = order[:k]
        for edge in chosen:
            checkpoint = fix_edge(checkpoint, edge, best[edge])
            fits[edge] = replace(best[edge], fixed=True)

        loss = float("nan")
        if retrain_epochs > 0 and len(chosen) < len(open_edges):
            try:
                checkpoint, log = retrain(checkpoint, config, objective, retrain_epochs)
                diverged = log.diverged
                loss = log.final_loss
            except EvaluationError:
                diverged = True
            if diverged:
                partial = (SymbolicModel(checkpoint, fits), rounds)
                raise DivergenceError(f"retraining diverged in round {n}", partial=partial)

        mape = float("nan")
        if dataset is not None:
            mape = target_mape(checkpoint, dataset.train, config.target)
        rounds.append(
            RoundLog(n, chosen, [best[e].function for e in chosen], [best[e].r2 for e in chosen], loss, mape)
        )
        logger.info(
            "round %d: fixed %s (R² %s), train MAPE %.4g",
            n,
            ", ".join(".".join(map(str, e)) for e in chosen),
            ", ".join(f"{best[e].r2:.3f}" for e in chosen),
            mape,
        )

    return SymbolicModel(checkpoint, fits), rounds


def ablate_variable(model: SymbolicModel, variable: str) -> SymbolicModel:
    """Turn every first-layer edge fed by a voltage into its value at input 0."""
    if variable not in VARIABLES or model.spec.widths[0] != len(VARIABLES):
        raise SymbolicError(f"unknown variable {variable!r}")
    i = VARIABLES.index(variable)
    checkpoint = model.checkpoint
    edges = [(0, i, o) for o in range(model.spec.widths[1])]
    if any(e not in checkpoint.fixed for e in edges):
        raise SymbolicError("ablation needs the edges of the variable to be fixed")

    params = dict(checkpoint.params)
    affine = params["layer0.affine"].copy()
    affine[i, :, 0] = 0.0
    params["layer0.affine"] = affine
    metadata = {**checkpoint.metadata}
    metadata["ablated"] = sorted({*metadata.get("ablated", []), variable})
    ablated = Checkpoint(checkpoint.spec, params, dict(checkpoint.fixed), metadata)
    return SymbolicModel(ablated, dict(model.fits))
