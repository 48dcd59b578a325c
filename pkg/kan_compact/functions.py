"""
Library of basic univariate functions used to replace learned edges.

Each entry knows how to evaluate itself on numpy arrays, how to differentiate
itself, how to record itself on an autodiff tape and how to build the
matching sympy expression.
"""

from collections.abc import Callable
from dataclasses import dataclass

import numpy as np
import sympy as sp

from kan_compact import diffengine as de
from kan_compact.errors import SymbolicError


@dataclass(frozen=True)
class BasicFunction:
    """
    A named pointwise map of arity 1.

    Parameters:
    - name: library key, also used in checkpoints and formula trees
    - f, df: numpy implementations of the map and its derivative
    - trace: the same map expressed with tape primitives
    - sym: the same map as a sympy expression builder
    """

    name: str
    f: Callable[[np.ndarray], np.ndarray]
    df: Callable[[np.ndarray], np.ndarray]
    trace: Callable[[de.Var], de.Var]
    sym: Callable[[sp.Expr], sp.Expr]

    def __call__(self, x):
        return self.f(x)


LIBRARY: tuple[BasicFunction, ...] = (
    BasicFunction("x", lambda x: x, np.ones_like, lambda v: v, lambda e: e),
    BasicFunction("x^2", np.square, lambda x: 2.0 * x, lambda v: v**2, lambda e: e**2),
    BasicFunction(
        "x^3", lambda x: x**3, lambda x: 3.0 * x**2, lambda v: v**3, lambda e: e**3
    ),
    BasicFunction(
        "1/x", lambda x: 1.0 / x, lambda x: -1.0 / x**2, lambda v: v**-1, lambda e: 1 / e
    ),
    BasicFunction(
        "1/x^2",
        lambda x: 1.0 / x**2,
        lambda x: -2.0 / x**3,
        lambda v: v**-2,
        lambda e: 1 / e**2,
    ),
    BasicFunction("exp", np.exp, np.exp, de.exp, sp.exp),
    BasicFunction("log", np.log, lambda x: 1.0 / x, de.log, sp.log),
    BasicFunction("sin", np.sin, np.cos, de.sin, sp.sin),
    BasicFunction("cos", np.cos, lambda x: -np.sin(x), de.cos, sp.cos),
    BasicFunction("tan", np.tan, lambda x: 1.0 / np.cos(x) ** 2, de.tan, sp.tan),
    BasicFunction("tanh", np.tanh, lambda x: 1.0 - np.tanh(x) ** 2, de.tanh, sp.tanh),
    BasicFunction(
        "arctan", np.arctan, lambda x: 1.0 / (1.0 + x**2), de.arctan, sp.atan
    ),
    BasicFunction("abs", np.abs, np.sign, de.absolute, sp.Abs),
    BasicFunction("sqrt", np.sqrt, lambda x: 0.5 / np.sqrt(x), de.sqrt, sp.sqrt),
)

_BY_NAME = {fn.name: fn for fn in LIBRARY}


def get(name: str) -> BasicFunction:
    try:
        return _BY_NAME[name]
    except KeyError:
        raise SymbolicError(f"unknown basic function {name!r}") from None


def names() -> list[str]:
    return [fn.name for fn in LIBRARY]
