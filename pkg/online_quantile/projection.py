"""
Euclidean projection onto the ℓ1 ball.

The sort-based projection soft-thresholds the absolute values at a level λ
chosen so that the result has ℓ1 norm exactly R, then restores the signs.
A sorting-free bisection on λ is kept alongside as an independent oracle.
"""

import logging
from dataclasses import dataclass

import numpy as np

from .errors import DomainError

logger = logging.getLogger(__name__)

_BISECTION_MAX_ITER = 200
# rounding slack for vectors that already sit on the sphere, never above 1e-9
_INTERIOR_RTOL = 1e-12
_INTERIOR_ATOL = 1e-9


@dataclass
class ProjectionResult:
    """Outcome of an ℓ1-ball projection."""

    v: np.ndarray
    lambda_: float
    was_interior: bool

    @property
    def l1_norm(self) -> float:
        return float(np.sum(np.abs(self.v)))


def _validate(u, R: float) -> np.ndarray:
    if not R > 0:
        raise ValueError(f"radius R must be positive, got {R}")
    u = np.asarray(u, dtype=float)
    if u.ndim != 1:
        raise ValueError(f"expected a 1-d vector, got shape {u.shape}")
    if not np.all(np.isfinite(u)):
        raise DomainError("vector to project contains non-finite entries")
    return u


def soft_threshold(u: np.ndarray, lam: float) -> np.ndarray:
    """sign(u) * max(|u| - λ, 0) with sign(0) = 0."""
    return np.sign(u) * np.maximum(np.abs(u) - lam, 0.0)


def l1_project(u, R: float) -> ProjectionResult:
    """Project u onto {θ : ‖θ‖₁ <= R}.

    Vectors already inside the ball are returned unchanged. Otherwise the
    absolute values are sorted in non-increasing order and the first index
    ρ with (Σ_{j<=ρ} a_(j) - R)/ρ >= a_(ρ+1), or ρ = J, fixes the threshold.
    Ties in the sort do not change λ.

    Args:
        u: Vector to project
        R: Ball radius (> 0)

    Returns:
        ProjectionResult with the projected vector and threshold

    Raises:
        ValueError: If R <= 0
        DomainError: If u has non-finite entries
    """
    u = _validate(u, R)
    a = np.abs(u)
    if np.sum(a) <= R + min(R * _INTERIOR_RTOL, _INTERIOR_ATOL):
        return ProjectionResult(v=u.copy(), lambda_=0.0, was_interior=True)

    a_sorted = np.sort(a)[::-1]
    lambdas = (np.cumsum(a_sorted) - R) / np.arange(1, a_sorted.shape[0] + 1)
    # pivot test; the last index always qualifies so a_(J+1) is never read
    pivot = np.empty(a_sorted.shape[0], dtype=bool)
    pivot[:-1] = lambdas[:-1] >= a_sorted[1:]
    pivot[-1] = True
    rho = int(np.argmax(pivot))
    lam = float(lambdas[rho])
    return ProjectionResult(v=soft_threshold(u, lam), lambda_=lam, was_interior=False)


def l1_project_oracle(u, R: float) -> np.ndarray:
    """Reference projection by bisection on λ.

    Bisects the monotone map λ -> Σ max(|u_i| - λ, 0) on [0, max|u_i|]
    until the ℓ1 constraint holds to 1e-12 or the bracket stops shrinking.
    """
    u = _validate(u, R)
    a = np.abs(u)
    if np.sum(a) <= R + min(R * _INTERIOR_RTOL, _INTERIOR_ATOL):
        return u.copy()

    lo, hi = 0.0, float(np.max(a))
    for _ in range(_BISECTION_MAX_ITER):
        mid = 0.5 * (lo + hi)
        excess = float(np.sum(np.maximum(a - mid, 0.0))) - R
        if abs(excess) <= 1e-12:
            lo = hi = mid
            break
        if excess > 0:
            lo = mid
        else:
            hi = mid
        if hi - lo <= np.finfo(float).eps * max(hi, 1.0):
            break
    return soft_threshold(u, 0.5 * (lo + hi))
