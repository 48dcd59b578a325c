"""
Full-batch optimizers and learning-rate schedules over flat parameter vectors.
"""

import logging
import warnings
from collections.abc import Callable
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import line_search

from kan_compact.errors import EvaluationError

logger = logging.getLogger(__name__)

FunAndGrad = Callable[[np.ndarray], tuple[float, np.ndarray]]


class ParamPacker:
    """Flattens a parameter dict into one vector and back, in dict order."""

    def __init__(self, params: dict[str, np.ndarray]):
        self.names = list(params)
        self.shapes = [np.shape(params[n]) for n in self.names]
        self.sizes = [int(np.prod(s)) for s in self.shapes]
        self.offsets = np.cumsum([0, *self.sizes])

    @property
    def size(self) -> int:
        return int(self.offsets[-1])

    def pack(self, params: dict[str, np.ndarray]) -> np.ndarray:
        if not self.names:
            return np.zeros(0)
        return np.concatenate([np.ravel(params[n]) for n in self.names]).astype(np.float64)

    def unpack(self, theta: np.ndarray) -> dict[str, np.ndarray]:
        return {
            name: theta[start:stop].reshape(shape).copy()
            for name, shape, start, stop in zip(
                self.names, self.shapes, self.offsets[:-1], self.offsets[1:]
            )
        }


# --- Adam ---
@dataclass
class Adam:
    """
    Adam with L2 weight decay added to the gradient.

    Parameters:
    - lr: step size, may be changed between steps by a schedule
    - weight_decay: coefficient of the L2 term
    """

    lr: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.0
    t: int = 0
    m: np.ndarray | None = field(default=None, repr=False)
    v: np.ndarray | None = field(default=None, repr=False)

    def step(self, theta: np.ndarray, grad: np.ndarray) -> np.ndarray:
        if self.m is None:
            self.m = np.zeros_like(theta)
            self.v = np.zeros_like(theta)
        if self.weight_decay:
            grad = grad + self.weight_decay * theta
        self.t += 1
        self.m = self.beta1 * self.m + (1.0 - self.beta1) * grad
        self.v = self.beta2 * self.v + (1.0 - self.beta2) * grad**2
        m_hat = self.m / (1.0 - self.beta1**self.t)
        v_hat = self.v / (1.0 - self.beta2**self.t)
        return theta - self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


@dataclass
class PlateauSchedule:
    """
    Halve the learning rate when the best loss stalls.

    The best loss must drop by at least ``threshold`` (relative) within
    ``window`` epochs, otherwise lr is multiplied by ``factor``. Training
    stops once lr falls below ``min_lr``.
    """

    lr: float
    window: int = 500
    threshold: float = 1e-3
    factor: float = 0.5
    min_lr: float = 1e-5
    best: float = np.inf
    since_best: int = 0

    def update(self, loss: float) -> float:
        if loss < self.best * (1.0 - self.threshold):
            self.best = loss
            self.since_best = 0
        else:
            self.since_best += 1
        if self.since_best >= self.window:
            self.lr *= self.factor
            self.since_best = 0
            logger.debug("loss plateau, learning rate reduced to %.3e", self.lr)
        return self.lr

    @property
    def stopped(self) -> bool:
        return self.lr < self.min_lr


def step_decay_lr(epoch: int, lr0: float = 0.002, factor: float = 0.85, every: int = 2000) -> float:
    """Learning rate after ``epoch`` epochs of decay by ``factor`` every ``every`` epochs."""
    return lr0 * factor ** (epoch // max(every, 1))


# --- L-BFGS ---
class _Memo:
    """Remembers recent evaluations so the line search and the optimizer share them."""

    def __init__(self, fun: FunAndGrad, size: int = 8):
        self.fun = fun
        self.size = size
        self.cache: dict[bytes, tuple[float, np.ndarray]] = {}

    def __call__(self, theta: np.ndarray) -> tuple[float, np.ndarray]:
        key = theta.tobytes()
        if key not in self.cache:
            try:
                f, g = self.fun(theta)
            except EvaluationError:
                f, g = np.inf, np.zeros_like(theta)
            if len(self.cache) >= self.size:
                self.cache.pop(next(iter(self.cache)))
            self.cache[key] = (float(f), np.asarray(g, dtype=np.float64))
        return self.cache[key]

    def f(self, theta):
        return self(theta)[0]

    def g(self, theta):
        return self(theta)[1]


class Lbfgs:
    """
    Limited-memory BFGS with a strong-Wolfe line search.

    Parameters:
    - fun: returns (loss, gradient) for a parameter vector
    - lr: scale of the quasi-Newton direction handed to the line search
    - history: number of curvature pairs kept
    - max_halvings: backtracking steps tried along -g when the Wolfe search fails

    A failed Wolfe search falls back to backtracking with the history reset;
    the optimizer only reports convergence when no step along -g lowers the loss.
    """

    def __init__(
        self,
        fun: FunAndGrad,
        lr: float = 1.0,
        history: int = 10,
        tolerance_grad: float = 1e-12,
        tolerance_change: float = 1e-15,
        max_halvings: int = 60,
    ):
        self.fun = _Memo(fun)
        self.lr = lr
        self.history = history
        self.tolerance_grad = tolerance_grad
        self.tolerance_change = tolerance_change
        self.max_halvings = max_halvings
        self.pairs: list[tuple[np.ndarray, np.ndarray, float]] = []
        self.converged = False

    def reset(self):
        self.pairs.clear()
        self.converged = False

    def direction(self, g: np.ndarray) -> np.ndarray:
        """Two-loop recursion for -H g."""
        if not self.pairs:
            return -g * min(1.0, 1.0 / max(np.abs(g).sum(), 1e-300))
        q = g.copy()
        alphas = []
        for s, y, rho in reversed(self.pairs):
            alpha = rho * (s @ q)
            q -= alpha * y
            alphas.append(alpha)
        s, y, _ = self.pairs[-1]
        r = (s @ y) / (y @ y) * q
        for (s, y, rho), alpha in zip(self.pairs, reversed(alphas)):
            beta = rho * (y @ r)
            r += s * (alpha - beta)
        return -r

    def _search(self, theta, f, g, d):
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            alpha, *_ = line_search(
                self.fun.f, self.fun.g, theta, d, gfk=g, old_fval=f, c1=1e-4, c2=0.9
            )
        return alpha

    def _backtrack(self, theta, f, g):
        """Armijo backtracking along -g from a unit-length step, halving on failure."""
        d = -g
        slope = g @ d
        alpha = 1.0 / np.linalg.norm(g)
        for _ in range(self.max_halvings):
            f_new = self.fun.f(theta + alpha * d)
            if f_new < f and f_new <= f + 1e-4 * alpha * slope:
                return alpha, d
            alpha *= 0.5
        return None, d

    def step(self, theta: np.ndarray) -> tuple[np.ndarray, float]:
        """One iteration; returns the new parameters and their loss."""
        f, g = self.fun(theta)
        if not np.isfinite(f):
            raise EvaluationError(-1, "loss")
        if np.max(np.abs(g), initial=0.0) <= self.tolerance_grad:
            self.converged = True
            return theta, f

        d = self.lr * self.direction(g)
        if g @ d >= 0:
            self.pairs.clear()
            d = -self.lr * g
        alpha = self._search(theta, f, g, d)
        if alpha is None and self.pairs:
            self.pairs.clear()
            d = self.lr * self.direction(g)
            alpha = self._search(theta, f, g, d)
        if alpha is None:
            logger.debug("line search failed, backtracking along -g")
            self.pairs.clear()
            alpha, d = self._backtrack(theta, f, g)
        if alpha is None:
            logger.debug("no decrease along -g, keeping parameters")
            self.converged = True
            return theta, f

        theta_new = theta + alpha * d
        f_new, g_new = self.fun(theta_new)
        s, y = theta_new - theta, g_new - g
        sy = s @ y
        if sy > 1e-10:
            self.pairs.append((s, y, 1.0 / sy))
            if len(self.pairs) > self.history:
                self.pairs.pop(0)
        if abs(f - f_new) < self.tolerance_change:
            self.converged = True
        return theta_new, f_new
