"""
B-spline basis construction, evaluation and grid refinement.

Every KAN edge is a spline on a uniform knot vector over a fixed input
domain. The basis is evaluated with the Cox-de Boor triangular scheme on the
knot span containing ``x``; spans are clipped to the base interval, so values
outside the domain come from the boundary polynomial pieces.
"""

from dataclasses import dataclass, field
from typing import Final

import numpy as np

from kan_compact.errors import DomainError, RefinementError

# --- Defaults ---
DOMAIN: Final = (0.0, 1.0)
"""Knot domain, i.e. the normalised input range"""

SAMPLES_PER_BASIS: Final = 10
"""Dense samples per basis function used by the refinement transfer"""


@dataclass(frozen=True, eq=False)
class KnotVector:
    """
    Uniform knot vector extended by ``k`` steps on each side of the domain.

    Parameters:
    - domain_lo, domain_hi: input range covered by the base interval
    - G: number of grid cells
    - k: spline order (polynomial degree)
    """

    domain_lo: float
    domain_hi: float
    G: int
    k: int
    knots: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        if self.G < 1:
            raise DomainError(f"grid size must be positive, got {self.G}")
        if self.k < 0:
            raise DomainError(f"spline order must be non-negative, got {self.k}")
        if not self.domain_hi > self.domain_lo:
            raise DomainError("empty knot domain")
        steps = np.arange(-self.k, self.G + self.k + 1)
        knots = self.domain_lo + steps * self.h
        knots.setflags(write=False)
        object.__setattr__(self, "knots", knots)

    @classmethod
    def uniform(cls, G: int, k: int, domain: tuple[float, float] = DOMAIN):
        return cls(domain[0], domain[1], G, k)

    @property
    def h(self) -> float:
        """Knot spacing"""
        return (self.domain_hi - self.domain_lo) / self.G

    @property
    def n_basis(self) -> int:
        return self.G + self.k

    def span(self, x: np.ndarray) -> np.ndarray:
        """Index i of the knot interval [t_i, t_{i+1}) holding x, clipped to the base interval."""
        cell = np.floor((x - self.domain_lo) / self.h).astype(np.int64)
        return np.clip(cell, 0, self.G - 1) + self.k


def _span_values(knots: np.ndarray, x: np.ndarray, span: np.ndarray, degree: int):
    """Nonzero basis values B_{span-degree..span, degree}(x), shape x.shape + (degree+1,)."""
    N = np.zeros(x.shape + (degree + 1,))
    N[..., 0] = 1.0
    left = np.zeros_like(N)
    right = np.zeros_like(N)
    for j in range(1, degree + 1):
        left[..., j] = x - knots[span + 1 - j]
        right[..., j] = knots[span + j] - x
        saved = np.zeros(x.shape)
        for r in range(j):
            temp = N[..., r] / (right[..., r + 1] + left[..., j - r])
            N[..., r] = saved + right[..., r + 1] * temp
            saved = left[..., j - r] * temp
        N[..., j] = saved
    return N


def _scatter(kv: KnotVector, span: np.ndarray, local: np.ndarray) -> np.ndarray:
    out = np.zeros(span.shape + (kv.n_basis,))
    index = span[..., None] - kv.k + np.arange(kv.k + 1)
    np.put_along_axis(out, index, local, axis=-1)
    return out


def basis_eval(kv: KnotVector, x) -> np.ndarray:
    """Values of all G+k basis functions at x, shape x.shape + (G+k,)."""
    x = np.asarray(x, dtype=np.float64)
    span = kv.span(x)
    return _scatter(kv, span, _span_values(kv.knots, x, span, kv.k))


def basis_deriv(kv: KnotVector, x) -> np.ndarray:
    """First derivatives of all basis functions at x, same shape as basis_eval."""
    x = np.asarray(x, dtype=np.float64)
    span = kv.span(x)
    if kv.k == 0:
        return np.zeros(x.shape + (kv.n_basis,))
    lower = _span_values(kv.knots, x, span, kv.k - 1)
    # dB_{m,k} = (B_{m,k-1} - B_{m+1,k-1}) / h on uniform knots
    padded = np.zeros(x.shape + (kv.k + 2,))
    padded[..., 1:-1] = lower
    local = (padded[..., :-1] - padded[..., 1:]) / kv.h
    return _scatter(kv, span, local)


def silu(x):
    """Sigmoid linear unit x / (1 + e^-x)"""
    return x / (1.0 + np.exp(-x))


def silu_deriv(x):
    s = 1.0 / (1.0 + np.exp(-x))
    return s * (1.0 + x * (1.0 - s))


@dataclass(frozen=True, eq=False)
class SplineActivation:
    """One learnable edge function phi(x) = w_b silu(x) + w_s sum_i c_i B_i(x)."""

    knots: KnotVector
    coeffs: np.ndarray
    w_b: float = 1.0
    w_s: float = 1.0

    def __post_init__(self):
        coeffs = np.asarray(self.coeffs, dtype=np.float64)
        if coeffs.shape != (self.knots.n_basis,):
            raise DomainError(
                f"expected {self.knots.n_basis} coefficients, got shape {coeffs.shape}"
            )
        object.__setattr__(self, "coeffs", coeffs)


def spline_eval(act: SplineActivation, x):
    return act.w_b * silu(x) + act.w_s * (basis_eval(act.knots, x) @ act.coeffs)


def spline_deriv(act: SplineActivation, x):
    return act.w_b * silu_deriv(x) + act.w_s * (basis_deriv(act.knots, x) @ act.coeffs)


def transfer_coefficients(
    old: KnotVector, new: KnotVector, coeffs: np.ndarray
) -> np.ndarray:
    """
    Least-squares transfer of spline coefficients onto a new knot vector.

    Parameters:
    - old, new: knot vectors sharing the same domain and order
    - coeffs: coefficients on ``old`` along the last axis, any leading shape
    Returns:
    - coefficients on ``new`` with the same leading shape
    """
    coeffs = np.asarray(coeffs, dtype=np.float64)
    n_samples = SAMPLES_PER_BASIS * max(new.n_basis, old.n_basis)
    xs = np.linspace(new.domain_lo, new.domain_hi, n_samples)

    A = basis_eval(new, xs)
    targets = basis_eval(old, xs) @ coeffs.reshape(-1, old.n_basis).T

    solution, _, rank, _ = np.linalg.lstsq(A, targets, rcond=None)
    if rank < new.n_basis:
        raise RefinementError(
            f"rank-deficient refinement system (rank {rank} < {new.n_basis})"
        )
    return solution.T.reshape(coeffs.shape[:-1] + (new.n_basis,))


def refine(act: SplineActivation, new_G: int) -> SplineActivation:
    """Move an activation onto a finer grid, keeping its shape on the domain."""
    old = act.knots
    if new_G < old.G:
        raise RefinementError(f"cannot refine from G={old.G} down to G={new_G}")
    new = KnotVector(old.domain_lo, old.domain_hi, new_G, old.k)
    coeffs = transfer_coefficients(old, new, act.coeffs)
    return SplineActivation(new, coeffs, act.w_b, act.w_s)
