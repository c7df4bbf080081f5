"""
Centered orthonormal bases on [0, 1] and the additive basis vector.

This module provides functionality to:
1. Evaluate univariate centered orthonormal basis functions
2. Assemble the (1 + pJ)-dimensional additive basis vector
3. Check orthonormality and centering numerically by trapezoid quadrature
"""

import logging
import math
from dataclasses import dataclass
from enum import Enum
from typing import Dict, Union

import numpy as np
from scipy.integrate import trapezoid

from .errors import DomainError

logger = logging.getLogger(__name__)

SQRT2 = math.sqrt(2.0)

ArrayLike = Union[float, np.ndarray]


class BasisFamily(str, Enum):
    """Supported univariate basis families."""

    TRIGONOMETRIC_CENTERED = "trigonometric_centered"


def _trigonometric_block(J: int, x: np.ndarray) -> np.ndarray:
    """ψ_1..ψ_J of the centered trigonometric basis at every entry of x.

    j = 2k - 1 maps to √2 sin(2πkx), j = 2k maps to √2 cos(2πkx); the
    result has shape x.shape + (J,).
    """
    k = np.arange(1, (J + 1) // 2 + 1)
    arg = 2.0 * np.pi * k * x[..., np.newaxis]
    out = np.empty(x.shape + (J,))
    out[..., 0::2] = SQRT2 * np.sin(arg)
    out[..., 1::2] = SQRT2 * np.cos(arg[..., : J // 2])
    return out


# sup-norm bound M of each family
_SUP_NORMS: Dict[BasisFamily, float] = {
    BasisFamily.TRIGONOMETRIC_CENTERED: SQRT2,
}

_EVALUATORS = {
    BasisFamily.TRIGONOMETRIC_CENTERED: _trigonometric_block,
}


@dataclass(frozen=True)
class BasisSpec:
    """Family of per-dimension centered orthonormal bases on [0, 1]^p."""

    dims_p: int
    family: BasisFamily = BasisFamily.TRIGONOMETRIC_CENTERED

    def __post_init__(self):
        if isinstance(self.dims_p, bool) or not isinstance(self.dims_p, (int, np.integer)):
            raise ValueError(f"dims_p must be an integer, got {self.dims_p!r}")
        if self.dims_p < 1:
            raise ValueError(f"dims_p must be positive, got {self.dims_p}")
        object.__setattr__(self, "family", BasisFamily(self.family))

    @property
    def sup_norm_M(self) -> float:
        """Uniform bound on |ψ_j(x)| over all j and x."""
        return _SUP_NORMS[self.family]

    def dimension(self, J: int) -> int:
        """Length of the basis vector for truncation dimension J."""
        return 1 + self.dims_p * J

    def to_dict(self) -> dict:
        return {"family": self.family.value, "dims_p": int(self.dims_p)}

    @classmethod
    def from_dict(cls, data: dict) -> "BasisSpec":
        return cls(dims_p=int(data["dims_p"]), family=BasisFamily(data["family"]))


def _check_unit_interval(x: np.ndarray, what: str = "x") -> None:
    if not np.all(np.isfinite(x)):
        raise DomainError(f"{what} must be finite")
    if np.any(x < 0.0) or np.any(x > 1.0):
        raise DomainError(f"{what} must lie in [0, 1], got {x}")


def eval_univariate(spec: BasisSpec, j: int, x: float) -> float:
    """Evaluate the j-th basis function at a single point.

    Args:
        spec: Basis layout (family and number of covariates)
        j: 1-based basis index (the constant function is not part of the basis)
        x: Point in [0, 1]

    Returns:
        ψ_j(x)

    Raises:
        DomainError: If x is outside [0, 1] or j < 1
    """
    if j < 1:
        raise DomainError(f"basis index must be >= 1, got {j}")
    x_arr = np.asarray(x, dtype=float)
    _check_unit_interval(x_arr)
    return float(_EVALUATORS[spec.family](int(j), x_arr)[j - 1])


def univariate_block(spec: BasisSpec, J: int, x: ArrayLike) -> np.ndarray:
    """Evaluate ψ_1..ψ_J at x.

    Args:
        spec: Basis layout (family and number of covariates)
        J: Number of basis functions
        x: Scalar or 1-d array of points in [0, 1]

    Returns:
        Array of shape (J,) for scalar x, (n, J) for an array of n points
    """
    if J < 1:
        raise DomainError(f"truncation dimension must be >= 1, got {J}")
    x_arr = np.asarray(x, dtype=float)
    _check_unit_interval(x_arr)
    return _EVALUATORS[spec.family](J, x_arr)


def eval_basis_vector(spec: BasisSpec, J: int, x) -> np.ndarray:
    """Assemble Ψ(x) = (1, ψ_11(x1), ..., ψ_1J(x1), ..., ψ_pJ(xp)).

    Entry 0 is the intercept; block k (0-based) occupies entries
    1 + kJ .. (k+1)J. CoefficientState relies on this layout.

    Args:
        spec: Basis layout (family and number of covariates)
        J: Truncation dimension shared by all p blocks
        x: Point in [0, 1]^p

    Returns:
        Array of length 1 + pJ
    """
    x_arr = np.asarray(x, dtype=float).reshape(-1)
    if x_arr.shape[0] != spec.dims_p:
        raise DomainError(f"expected {spec.dims_p} coordinates, got {x_arr.shape[0]}")
    _check_unit_interval(x_arr)
    psi = np.empty(spec.dimension(J))
    psi[0] = 1.0
    psi[1:] = univariate_block(spec, J, x_arr).reshape(-1)
    return psi


def _trapezoid_grid(grid_size: int) -> np.ndarray:
    if grid_size < 1000:
        raise ValueError(f"grid_size must be at least 1000, got {grid_size}")
    return np.linspace(0.0, 1.0, grid_size + 1)


def gram_deviation(spec: BasisSpec, J: int, grid_size: int = 100_000) -> float:
    """Largest deviation of the quadrature Gram matrix from the identity.

    Args:
        spec: Basis layout (family and number of covariates)
        J: Number of basis functions to check
        grid_size: Number of trapezoid intervals (>= 1000)

    Returns:
        max_{i,j <= J} |∫ψ_i ψ_j - δ_ij|
    """
    grid = _trapezoid_grid(grid_size)
    values = univariate_block(spec, J, grid)
    weights = np.full(grid.shape[0], 1.0 / grid_size)
    weights[[0, -1]] *= 0.5
    gram = values.T @ (values * weights[:, np.newaxis])
    return float(np.max(np.abs(gram - np.eye(J))))


def centering_residual(spec: BasisSpec, J: int, grid_size: int = 100_000) -> float:
    """Largest |∫ψ_j| over j <= J by trapezoid quadrature."""
    grid = _trapezoid_grid(grid_size)
    values = univariate_block(spec, J, grid)
    integrals = trapezoid(values, grid, axis=0)
    return float(np.max(np.abs(integrals)))
