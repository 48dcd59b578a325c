"""
The three trainable model families: MLP, B-spline KAN and Fourier KAN.

Every family is written once as a trace onto a ``diffengine.Tape``; plain
numerical evaluation traces a throwaway tape and reads the output, so the
training and prediction paths cannot drift apart.

Parameters live in flat dicts keyed ``layer{l}.<name>``:

- MLP: ``weight`` (in, out), ``bias`` (out,)
- KAN: ``coeffs`` (in, out, G+k), ``w_b`` and ``w_s`` (in, out), ``bias`` (out,),
  plus ``affine`` (in, out, 4) once an edge of the layer has been fixed to a
  basic function
- FKAN: ``a`` and ``b`` (out, in, G), ``bias`` (out,)
"""

import json
import logging
import os
from dataclasses import dataclass, field, replace
from typing import Final

import numpy as np

from kan_compact import diffengine as de
from kan_compact import functions
from kan_compact.errors import ShapeError
from kan_compact.splines import KnotVector, transfer_coefficients

logger = logging.getLogger(__name__)

KINDS: Final = ("MLP", "KAN", "FKAN")
ACTIVATIONS: Final = ("tanh", "silu")
CONVERSIONS: Final = ("exp-current", "charge-scale")
CHECKPOINT_VERSION: Final = "kanc-v1"

KAN_COEFF_STD: Final = 0.1
"""Standard deviation of initial spline coefficients"""

EdgeId = tuple[int, int, int]
"""(layer, input node, output node)"""


@dataclass(frozen=True)
class NetworkSpec:
    """
    Architecture of one network.

    Parameters:
    - kind: MLP, KAN or FKAN
    - widths: node counts n_0..n_L, with n_L = 1
    - activation: hidden nonlinearity of an MLP
    - k: spline order of a KAN
    - grids: per-layer grid size G (KAN cells or FKAN harmonics)
    - conversion: how the scalar output maps to a physical quantity
    """

    kind: str
    widths: tuple[int, ...]
    activation: str = "tanh"
    k: int = 3
    grids: tuple[int, ...] = ()
    conversion: str = "charge-scale"

    def __post_init__(self):
        object.__setattr__(self, "widths", tuple(int(w) for w in self.widths))
        object.__setattr__(self, "grids", tuple(int(g) for g in self.grids))
        if self.kind not in KINDS:
            raise ShapeError(f"unknown network kind {self.kind!r}")
        if len(self.widths) < 2 or min(self.widths) < 1:
            raise ShapeError(f"invalid widths {self.widths}")
        if self.widths[-1] != 1:
            raise ShapeError("networks have a single output node")
        if self.activation not in ACTIVATIONS:
            raise ShapeError(f"unknown activation {self.activation!r}")
        if self.conversion not in CONVERSIONS:
            raise ShapeError(f"unknown output conversion {self.conversion!r}")
        if self.kind != "MLP":
            if len(self.grids) != self.n_layers or min(self.grids) < 1:
                raise ShapeError(f"need one positive grid size per layer, got {self.grids}")

    @property
    def n_layers(self) -> int:
        return len(self.widths) - 1

    def layer_shape(self, l: int) -> tuple[int, int]:
        return self.widths[l], self.widths[l + 1]

    def with_grid(self, G: int) -> "NetworkSpec":
        """Same KAN with every layer on a G-cell grid."""
        return replace(self, grids=(G,) * self.n_layers)

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "widths": list(self.widths),
            "activation": self.activation,
            "k": self.k,
            "grids": list(self.grids),
            "conversion": self.conversion,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "NetworkSpec":
        return cls(
            kind=data["kind"],
            widths=tuple(data["widths"]),
            activation=data.get("activation", "tanh"),
            k=data.get("k", 3),
            grids=tuple(data.get("grids", ())),
            conversion=data.get("conversion", "charge-scale"),
        )


def conversion_for(target: str) -> str:
    return "exp-current" if target == "I_D" else "charge-scale"


PRESETS: Final = ("MLP1", "MLP2", "KAN1", "KAN2", "FKAN1", "FKAN2", "FKAN2-G8", "KAN-SR")


def preset(name: str, target: str = "I_D", G: int = 16) -> NetworkSpec:
    """
    Named architectures.

    Current KANs keep a trailing 1->1 layer that charge KANs drop. ``G`` sets
    the grid of KAN presets; FKAN grids are part of the preset.
    """
    conversion = conversion_for(target)
    current = target == "I_D"
    match name:
        case "MLP1":
            return NetworkSpec("MLP", (2, 16, 16, 1), conversion=conversion)
        case "MLP2":
            return NetworkSpec("MLP", (2, 16, 16, 16, 1), conversion=conversion)
        case "KAN1":
            widths = (2, 3, 1, 1) if current else (2, 3, 1)
        case "KAN2":
            widths = (2, 3, 3, 1, 1) if current else (2, 3, 3, 1)
        case "KAN-SR":
            widths = (2, 6, 1)
        case "FKAN1":
            return NetworkSpec("FKAN", (2, 8, 1), grids=(8, 8), conversion=conversion)
        case "FKAN2":
            return NetworkSpec("FKAN", (2, 8, 8, 1), grids=(8, 2, 8), conversion=conversion)
        case "FKAN2-G8":
            return NetworkSpec("FKAN", (2, 8, 8, 1), grids=(8, 8, 8), conversion=conversion)
        case _:
            raise ShapeError(f"unknown preset {name!r}; choose from {PRESETS}")
    return NetworkSpec("KAN", widths, grids=(G,) * (len(widths) - 1), conversion=conversion)


# --- Parameters ---
def param_shapes(spec: NetworkSpec) -> dict[str, tuple[int, ...]]:
    shapes = {}
    for l in range(spec.n_layers):
        n_in, n_out = spec.layer_shape(l)
        if spec.kind == "MLP":
            shapes[f"layer{l}.weight"] = (n_in, n_out)
        elif spec.kind == "KAN":
            shapes[f"layer{l}.coeffs"] = (n_in, n_out, spec.grids[l] + spec.k)
            shapes[f"layer{l}.w_b"] = (n_in, n_out)
            shapes[f"layer{l}.w_s"] = (n_in, n_out)
        else:
            shapes[f"layer{l}.a"] = (n_out, n_in, spec.grids[l])
            shapes[f"layer{l}.b"] = (n_out, n_in, spec.grids[l])
        shapes[f"layer{l}.bias"] = (n_out,)
    return shapes


def param_count(spec: NetworkSpec) -> int:
    """Number of learnable parameters, excluding symbolic affine parameters."""
    return int(sum(np.prod(shape) for shape in param_shapes(spec).values()))


def init_params(spec: NetworkSpec, rng: np.random.Generator) -> dict[str, np.ndarray]:
    params = {}
    for l in range(spec.n_layers):
        n_in, n_out = spec.layer_shape(l)
        if spec.kind == "MLP":
            limit = np.sqrt(6.0 / (n_in + n_out))
            params[f"layer{l}.weight"] = rng.uniform(-limit, limit, (n_in, n_out))
        elif spec.kind == "KAN":
            nb = spec.grids[l] + spec.k
            params[f"layer{l}.coeffs"] = rng.normal(0.0, KAN_COEFF_STD, (n_in, n_out, nb))
            params[f"layer{l}.w_b"] = np.ones((n_in, n_out))
            params[f"layer{l}.w_s"] = np.ones((n_in, n_out))
        else:
            G = spec.grids[l]
            std = 1.0 / (n_in * np.sqrt(G))
            params[f"layer{l}.a"] = rng.normal(0.0, std, (n_out, n_in, G))
            params[f"layer{l}.b"] = rng.normal(0.0, std, (n_out, n_in, G))
        params[f"layer{l}.bias"] = np.zeros(n_out)
    return params


def _check_params(spec: NetworkSpec, params: dict, fixed: dict):
    expected = param_shapes(spec)
    for l in sorted({e[0] for e in fixed}):
        expected[f"layer{l}.affine"] = (*spec.layer_shape(l), 4)
    missing = set(expected) - set(params)
    unknown = set(params) - set(expected)
    if missing or unknown:
        raise ShapeError(f"parameter mismatch: missing {sorted(missing)}, unknown {sorted(unknown)}")
    for name, shape in expected.items():
        if np.shape(params[name]) != shape:
            raise ShapeError(f"{name} has shape {np.shape(params[name])}, expected {shape}")


def edge_ids(spec: NetworkSpec) -> list[EdgeId]:
    """All edges of a KAN or FKAN in index order (layer, then input, then output)."""
    if spec.kind == "MLP":
        raise ShapeError("an MLP has no edge functions")
    return [
        (l, i, o)
        for l in range(spec.n_layers)
        for i in range(spec.widths[l])
        for o in range(spec.widths[l + 1])
    ]


# --- Tracing ---
@dataclass
class Trace:
    """A network recorded on a tape, with handles on its intermediate values."""

    tape: de.Tape
    leaves: dict[str, de.Var]
    output: de.Var
    layer_inputs: list[de.Var]
    edges: list[de.Var]


def _mlp_layer(x, leaves, l, spec):
    h = x @ leaves[f"layer{l}.weight"] + leaves[f"layer{l}.bias"]
    if l == spec.n_layers - 1:
        return h, None
    return (de.tanh(h) if spec.activation == "tanh" else de.silu(h)), None


def _kan_layer(x, leaves, l, spec, fixed_layer):
    n_in, n_out = spec.layer_shape(l)
    p = x.shape[0]
    knots = KnotVector.uniform(spec.grids[l], spec.k)

    base = de.reshape(de.silu(x), (p, n_in, 1))
    edges = leaves[f"layer{l}.w_b"] * base + leaves[f"layer{l}.w_s"] * de.spline(
        x, leaves[f"layer{l}.coeffs"], knots
    )

    if fixed_layer:
        mask = np.ones((n_in, n_out))
        for i, o in fixed_layer:
            mask[i, o] = 0.0
        edges = edges * mask
        affine = leaves[f"layer{l}.affine"]
        for (i, o), name in sorted(fixed_layer.items()):
            a, b, c, d = (affine[i, o, j] for j in range(4))
            y = c * functions.get(name).trace(a * x[:, i] + b) + d
            onehot = np.zeros((n_in, n_out))
            onehot[i, o] = 1.0
            edges = edges + de.reshape(y, (p, 1, 1)) * onehot

    return de.sum(edges, axis=1) + leaves[f"layer{l}.bias"], edges


def _fkan_layer(x, leaves, l, spec):
    n_in, _ = spec.layer_shape(l)
    p = x.shape[0]
    harmonics = np.arange(1, spec.grids[l] + 1, dtype=np.float64)
    kx = de.reshape(x, (p, n_in, 1)) * harmonics
    edges = de.einsum("pdg,odg->pdo", de.cos(kx), leaves[f"layer{l}.a"]) + de.einsum(
        "pdg,odg->pdo", de.sin(kx), leaves[f"layer{l}.b"]
    )
    return de.sum(edges, axis=1) + leaves[f"layer{l}.bias"], edges


def trace(
    spec: NetworkSpec,
    params: dict[str, np.ndarray],
    X,
    fixed: dict[EdgeId, str] | None = None,
    tape: de.Tape | None = None,
) -> Trace:
    """
    Record the network on a tape.

    Parameters:
    - spec, params: architecture and parameter arrays
    - X: normalised inputs, shape (p, n_0)
    - fixed: KAN edges replaced by basic functions, edge id -> function name
    - tape: tape to record on; a new one by default
    Returns:
    - Trace whose output has shape (p,); one tape leaf per parameter, in dict order
    """
    fixed = fixed or {}
    _check_params(spec, params, fixed)
    if fixed and spec.kind != "KAN":
        raise ShapeError("only KAN edges can be fixed to basic functions")
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != spec.widths[0]:
        raise ShapeError(f"inputs must have shape (p, {spec.widths[0]}), got {X.shape}")

    tape = tape or de.Tape()
    leaves = {name: tape.leaf(value, name) for name, value in params.items()}
    x = tape.constant(X)
    layer_inputs, edges = [], []
    for l in range(spec.n_layers):
        layer_inputs.append(x)
        if spec.kind == "MLP":
            x, e = _mlp_layer(x, leaves, l, spec)
        elif spec.kind == "KAN":
            fixed_layer = {(i, o): name for (ll, i, o), name in fixed.items() if ll == l}
            x, e = _kan_layer(x, leaves, l, spec, fixed_layer)
        else:
            x, e = _fkan_layer(x, leaves, l, spec)
        edges.append(e)
    output = de.reshape(x, (X.shape[0],))
    return Trace(tape, leaves, output, layer_inputs, edges)


def forward(spec: NetworkSpec, params, x, fixed=None) -> np.ndarray:
    """Network output for one input pair (returns a scalar) or a batch of shape (p, n_0)."""
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    out = trace(spec, params, x[None, :] if single else x, fixed).output.value
    return out[0] if single else out.copy()


def mlp_forward(spec, params, x):
    if spec.kind != "MLP":
        raise ShapeError(f"expected an MLP spec, got {spec.kind}")
    return forward(spec, params, x)


def kan_forward(spec, params, x, fixed=None):
    if spec.kind != "KAN":
        raise ShapeError(f"expected a KAN spec, got {spec.kind}")
    return forward(spec, params, x, fixed)


def fkan_forward(spec, params, x):
    if spec.kind != "FKAN":
        raise ShapeError(f"expected an FKAN spec, got {spec.kind}")
    return forward(spec, params, x)


def refine_network(spec: NetworkSpec, params: dict, new_G: int) -> tuple[NetworkSpec, dict]:
    """Move every spline of a KAN onto a new_G-cell grid by least-squares transfer."""
    if spec.kind != "KAN":
        raise ShapeError("only KANs have spline grids")
    new_spec = spec.with_grid(new_G)
    new_params = dict(params)
    for l in range(spec.n_layers):
        old = KnotVector.uniform(spec.grids[l], spec.k)
        new = KnotVector.uniform(new_G, spec.k)
        new_params[f"layer{l}.coeffs"] = transfer_coefficients(
            old, new, params[f"layer{l}.coeffs"]
        )
    return new_spec, new_params


# --- Checkpoints ---
@dataclass(frozen=True, eq=False)
class Checkpoint:
    """Snapshot of a network: architecture, parameters, fixed edges and training metadata."""

    spec: NetworkSpec
    params: dict[str, np.ndarray]
    fixed: dict[EdgeId, str] = field(default_factory=dict)
    metadata: dict = field(default_factory=dict)

    @property
    def conversion(self) -> str:
        return self.spec.conversion

    def predict(self, X) -> np.ndarray:
        """Raw network output (y_I or y_Q) for normalised inputs."""
        return forward(self.spec, self.params, X, self.fixed)

    def edge_values(self, X) -> list[np.ndarray]:
        """Per-layer edge outputs, each of shape (p, in, out)."""
        if self.spec.kind == "MLP":
            raise ShapeError("an MLP has no edge functions")
        t = trace(self.spec, self.params, X, self.fixed)
        return [e.value.copy() for e in t.edges]

    def layer_inputs(self, X) -> list[np.ndarray]:
        t = trace(self.spec, self.params, X, self.fixed)
        return [x.value.copy() for x in t.layer_inputs]


def _edge_key(edge: EdgeId) -> str:
    return ".".join(str(v) for v in edge)


def parse_edge(text: str) -> EdgeId:
    l, i, o = (int(v) for v in text.split("."))
    return l, i, o


def save_checkpoint(checkpoint: Checkpoint, path: str):
    """Write a checkpoint as JSON; floats use their shortest round-tripping repr."""
    document = {
        "version": CHECKPOINT_VERSION,
        "spec": checkpoint.spec.to_dict(),
        "fixed": {_edge_key(e): name for e, name in sorted(checkpoint.fixed.items())},
        "metadata": checkpoint.metadata,
        "params": {
            name: {"shape": list(value.shape), "data": np.ravel(value).tolist()}
            for name, value in checkpoint.params.items()
        },
    }
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "w") as f:
        json.dump(document, f, indent=1, sort_keys=False)
        f.write("\n")


def load_checkpoint(path: str) -> Checkpoint:
    with open(path) as f:
        document = json.load(f)
    if document.get("version") != CHECKPOINT_VERSION:
        raise ShapeError(f"{path}: unsupported checkpoint version {document.get('version')!r}")
    spec = NetworkSpec.from_dict(document["spec"])
    params = {
        name: np.array(entry["data"], dtype=np.float64).reshape(entry["shape"])
        for name, entry in document["params"].items()
    }
    fixed = {parse_edge(key): name for key, name in document.get("fixed", {}).items()}
    _check_params(spec, params, fixed)
    return Checkpoint(spec, params, fixed, document.get("metadata", {}))


# --- Attribution ---
@dataclass(frozen=True)
class Attribution:
    """Per-layer edge scores (in, out) and input-node scores (in,), all in [0, 1]."""

    edges: list[np.ndarray]
    nodes: list[np.ndarray]


def attribution(checkpoint: Checkpoint, X) -> Attribution:
    """
    Importance of every edge and node for the output.

    An edge scores the standard deviation of its output over the inputs,
    divided by the largest such value in its layer. A node scores the best of
    its outgoing edges.
    """
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] == 0:
        raise ShapeError("attribution needs a nonempty input set")
    edge_scores, node_scores = [], []
    for values in checkpoint.edge_values(X):
        spread = values.std(axis=0)
        top = spread.max()
        scores = spread / top if top > 0 else np.zeros_like(spread)
        edge_scores.append(scores)
        node_scores.append(scores.max(axis=1))
    return Attribution(edge_scores, node_scores)
