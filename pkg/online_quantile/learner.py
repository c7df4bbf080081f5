"""
Projected functional gradient descent for online additive quantile regression.

The learner keeps an intercept plus p blocks of J_t coefficients. Each
arrival (or mini-batch) runs the same sequence:

1. Advance the counters and recompute the schedules J_t and γ_t
2. Zero-pad every block up to J_t
3. Predict with the pre-update coefficients and take the pinball subgradient
4. Step along the subgradient and project back onto the ℓ1 ball of radius R

Historical samples are never stored; the resident state is O(1 + pJ_t).
"""

import hashlib
import json
import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, List, Optional, Sequence, Tuple

import numpy as np

from .basis import BasisSpec, eval_basis_vector, univariate_block
from .errors import DomainError, LayoutMismatchError
from .projection import l1_project

logger = logging.getLogger(__name__)


class Mode(str, Enum):
    """Update mode of the learner."""

    SINGLE_SAMPLE = "single_sample"
    MINI_BATCH = "mini_batch"


def advisory_step_constant(tau: float) -> float:
    """Heuristic scale A = 1/(τ(1-τ)); the schedules only need A large enough."""
    return 1.0 / (tau * (1.0 - tau))


@dataclass(frozen=True)
class EstimatorConfig:
    """Hyper-parameters of the projected functional gradient learner.

    Attributes:
        tau: Target quantile level in (0, 1)
        R: Radius of the ℓ1 ball the coefficients are projected onto
        A: Step-size constant
        s: Known smoothness (> 1/2) driving the truncation schedule
        p: Number of covariates
        mode: Single-sample or mini-batch updates
        basis: Basis family; defaults to the centered trigonometric basis on p dims
        seed: Seed for any randomness built on top of the learner
    """

    tau: float
    R: float
    A: float
    s: float
    p: int
    mode: Mode = Mode.SINGLE_SAMPLE
    basis: Optional[BasisSpec] = None
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.tau < 1.0:
            raise ValueError(f"tau must lie in (0, 1), got {self.tau}")
        if not self.R > 0:
            raise ValueError(f"R must be positive, got {self.R}")
        if not self.A > 0:
            raise ValueError(f"A must be positive, got {self.A}")
        if not self.s > 0.5:
            raise ValueError(f"s must exceed 1/2, got {self.s}")
        if self.p < 1:
            raise ValueError(f"p must be positive, got {self.p}")
        object.__setattr__(self, "mode", Mode(self.mode))
        if self.basis is None:
            object.__setattr__(self, "basis", BasisSpec(dims_p=self.p))
        elif self.basis.dims_p != self.p:
            raise LayoutMismatchError(
                f"basis is defined on {self.basis.dims_p} dims but p = {self.p}"
            )

    @property
    def sup_norm_bound(self) -> float:
        """B = M·R, the deterministic bound on |q̂|."""
        return self.basis.sup_norm_M * self.R

    def to_dict(self) -> dict:
        return {
            "tau": self.tau,
            "R": self.R,
            "A": self.A,
            "s": self.s,
            "p": self.p,
            "mode": self.mode.value,
            "basis": self.basis.to_dict(),
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "EstimatorConfig":
        return cls(
            tau=float(data["tau"]),
            R=float(data["R"]),
            A=float(data["A"]),
            s=float(data["s"]),
            p=int(data["p"]),
            mode=Mode(data.get("mode", Mode.SINGLE_SAMPLE.value)),
            basis=BasisSpec.from_dict(data["basis"]) if "basis" in data else None,
            seed=int(data.get("seed", 0)),
        )

    def digest(self) -> str:
        """SHA-256 over the fields that change the learner's trajectory."""
        canonical = {
            "tau": float(self.tau).hex(),
            "R": float(self.R).hex(),
            "A": float(self.A).hex(),
            "s": float(self.s).hex(),
            "p": int(self.p),
            "mode": self.mode.value,
            "basis": self.basis.to_dict(),
        }
        payload = json.dumps(canonical, sort_keys=True).encode("utf-8")
        return hashlib.sha256(payload).hexdigest()


@dataclass
class Sample:
    """One observation (x, y) with x in [0, 1]^p."""

    x: np.ndarray
    y: float

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=float).reshape(-1)
        if not np.all(np.isfinite(self.x)):
            raise DomainError("sample covariates must be finite")
        if np.any(self.x < 0.0) or np.any(self.x > 1.0):
            raise DomainError(f"sample covariates must lie in [0, 1], got {self.x}")
        self.y = float(self.y)
        if not math.isfinite(self.y):
            raise DomainError(f"sample response must be finite, got {self.y}")


@dataclass
class MiniBatch:
    """n_t samples arriving together at one time step."""

    samples: List[Sample]

    def __post_init__(self):
        self.samples = list(self.samples)
        if not self.samples:
            raise ValueError("a mini-batch needs at least one sample")
        dims = {s.x.shape[0] for s in self.samples}
        if len(dims) != 1:
            raise DomainError(f"mini-batch mixes covariate dimensions {sorted(dims)}")

    def __len__(self) -> int:
        return len(self.samples)


@dataclass
class CoefficientState:
    """Coefficient vector (intercept + p blocks of J) and the step counters.

    Attributes:
        theta: Coefficients laid out as eval_basis_vector lays out Ψ
        J: Current truncation dimension
        t: Number of completed updates
        N: Cumulative number of samples consumed
        p: Number of covariate blocks
    """

    theta: np.ndarray
    J: int
    t: int
    N: int
    p: int

    def __post_init__(self):
        self.theta = np.asarray(self.theta, dtype=float)
        if self.theta.shape != (1 + self.p * self.J,):
            raise LayoutMismatchError(
                f"theta has shape {self.theta.shape}, expected ({1 + self.p * self.J},)"
            )

    @classmethod
    def zeros(cls, p: int) -> "CoefficientState":
        return cls(theta=np.zeros(1 + p), J=1, t=0, N=0, p=p)

    @property
    def intercept(self) -> float:
        return float(self.theta[0])

    @property
    def l1_norm(self) -> float:
        return float(np.sum(np.abs(self.theta)))

    def block(self, k: int) -> np.ndarray:
        """Coefficients of dimension k (0-based) as a read-only view."""
        view = self.theta[1:].reshape(self.p, self.J)[k]
        view.flags.writeable = False
        return view

    def snapshot(self) -> "CoefficientState":
        """Independent copy for readers that must not see later updates."""
        return CoefficientState(theta=self.theta.copy(), J=self.J, t=self.t, N=self.N, p=self.p)


def pinball_loss(tau: float, u):
    """ρ_τ(u) = u(τ - 1{u <= 0}); accepts scalars or arrays."""
    if np.ndim(u) == 0:
        u = float(u)
        return u * (tau - (1.0 if u <= 0 else 0.0))
    u = np.asarray(u, dtype=float)
    return u * (tau - (u <= 0).astype(float))


def subgradient_scalar(tau: float, y: float, yhat: float) -> float:
    """τ - 1{y <= ŷ}; a tie counts as y <= ŷ."""
    return tau - 1.0 if y <= yhat else tau


def step_size(config: EstimatorConfig, t: int, n_t: int = 1, N_t: Optional[int] = None) -> float:
    """γ_t = A/t in single-sample mode, A·n_t/N_t in mini-batch mode."""
    if t < 1:
        raise ValueError(f"t must be >= 1, got {t}")
    if config.mode is Mode.SINGLE_SAMPLE:
        return config.A / t
    if N_t is None:
        raise ValueError("mini-batch step size needs the cumulative sample count N_t")
    if n_t < 1 or N_t < n_t:
        raise ValueError(f"need 1 <= n_t <= N_t, got n_t={n_t}, N_t={N_t}")
    return config.A * n_t / N_t


def truncation_dim(config: EstimatorConfig, t_or_N: int) -> int:
    """J = ⌈t^{1/(2s+1)}⌉ (t is N_t in mini-batch mode)."""
    if t_or_N < 1:
        raise ValueError(f"argument must be >= 1, got {t_or_N}")
    t_or_N = int(t_or_N)
    exponent = 2.0 * config.s + 1.0
    value = float(t_or_N) ** (1.0 / exponent)
    if exponent.is_integer():
        # integer root: correct the float estimate so that (J-1)^e < t <= J^e
        e = int(exponent)
        J = max(1, round(value))
        while J ** e < t_or_N:
            J += 1
        while J > 1 and (J - 1) ** e >= t_or_N:
            J -= 1
        return J
    nearest = round(value)
    if nearest >= 1 and nearest ** exponent == t_or_N:
        return int(nearest)
    return max(1, math.ceil(value))


def align_dimension(state: CoefficientState, J_new: int) -> CoefficientState:
    """Grow every block from state.J to J_new, new slots set to zero.

    Existing coefficients keep their (dimension, index) slot, so predictions
    and ‖θ‖₁ are unchanged.
    """
    if J_new < state.J:
        raise ValueError(f"truncation dimension cannot shrink ({state.J} -> {J_new})")
    if J_new == state.J:
        return state
    theta = np.zeros(1 + state.p * J_new)
    theta[0] = state.theta[0]
    theta[1:].reshape(state.p, J_new)[:, : state.J] = state.theta[1:].reshape(state.p, state.J)
    return CoefficientState(theta=theta, J=J_new, t=state.t, N=state.N, p=state.p)


def check_layout(state: CoefficientState, basis: BasisSpec) -> None:
    if state.p != basis.dims_p:
        raise LayoutMismatchError(f"state has p = {state.p}, basis has p = {basis.dims_p}")


def predict(state: CoefficientState, basis: BasisSpec, x) -> float:
    """q̂(x) = θᵀΨ(x)."""
    check_layout(state, basis)
    return float(state.theta @ eval_basis_vector(basis, state.J, x))


def predict_many(state: CoefficientState, basis: BasisSpec, X) -> np.ndarray:
    """Vectorized prediction for an (n, p) array of query points."""
    check_layout(state, basis)
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if X.shape[1] != state.p:
        raise DomainError(f"expected {state.p} columns, got {X.shape[1]}")
    out = np.full(X.shape[0], state.theta[0])
    blocks = state.theta[1:].reshape(state.p, state.J)
    for k in range(state.p):
        out += univariate_block(basis, state.J, X[:, k]) @ blocks[k]
    return out


def sup_norm_on_grid(state: CoefficientState, basis: BasisSpec, points) -> float:
    """max |q̂| over the supplied (n, p) points."""
    return float(np.max(np.abs(predict_many(state, basis, points))))


def check_sample(sample: Sample, p: int) -> None:
    if sample.x.shape[0] != p:
        raise DomainError(f"sample has {sample.x.shape[0]} covariates, expected {p}")


def check_mode(config: EstimatorConfig, mode: Mode) -> None:
    if config.mode is not mode:
        raise ValueError(f"operation requires mode {mode.value}, config has {config.mode.value}")


def next_schedule(state: CoefficientState, config: EstimatorConfig, n_t: int) -> Tuple[int, int, int, float]:
    """Post-increment counters and schedules (t, N, J, γ) for an arrival of n_t samples."""
    t = state.t + 1
    N = state.N + n_t
    driver = t if config.mode is Mode.SINGLE_SAMPLE else N
    J = max(state.J, truncation_dim(config, driver))
    return t, N, J, step_size(config, t, n_t, N)


def sample_direction(state: CoefficientState, basis: BasisSpec, tau: float,
                     sample: Sample) -> Tuple[np.ndarray, float]:
    """Subgradient direction s_t·Ψ(x) and the pre-update prediction ŷ."""
    psi = eval_basis_vector(basis, state.J, sample.x)
    yhat = float(state.theta @ psi)
    return subgradient_scalar(tau, sample.y, yhat) * psi, yhat


def batch_gradient(state: CoefficientState, basis: BasisSpec, tau: float,
                   samples: Sequence[Sample]) -> Tuple[np.ndarray, List[float]]:
    """Averaged direction G = (1/n) Σ s_i·Ψ(x_i), every ŷ_i from the same θ.

    n copies of one sample reproduce that sample's direction only up to
    summation rounding; bit equality is only guaranteed for n <= 2.
    """
    directions = []
    yhats = []
    for sample in samples:
        direction, yhat = sample_direction(state, basis, tau, sample)
        directions.append(direction)
        yhats.append(yhat)
    return np.sum(np.stack(directions), axis=0) / len(samples), yhats


def gradient_step(state: CoefficientState, config: EstimatorConfig, direction: np.ndarray,
                  gamma: float, t: int, N: int, mask: Optional[np.ndarray] = None) -> CoefficientState:
    """θ̃ = θ + γ·direction (restricted to mask if given), then project onto B(R)."""
    if mask is None:
        theta_tilde = state.theta + gamma * direction
    else:
        theta_tilde = state.theta.copy()
        theta_tilde[mask] += gamma * direction[mask]
    result = l1_project(theta_tilde, config.R)
    return CoefficientState(theta=result.v, J=state.J, t=t, N=N, p=state.p)


def _update_single(state: CoefficientState, config: EstimatorConfig,
                   sample: Sample) -> Tuple[CoefficientState, float]:
    check_mode(config, Mode.SINGLE_SAMPLE)
    check_layout(state, config.basis)
    check_sample(sample, config.p)
    t, N, J, gamma = next_schedule(state, config, 1)
    aligned = align_dimension(state, J)
    direction, yhat = sample_direction(aligned, config.basis, config.tau, sample)
    return gradient_step(aligned, config, direction, gamma, t, N), yhat


def _update_batch(state: CoefficientState, config: EstimatorConfig,
                  batch: MiniBatch) -> Tuple[CoefficientState, List[float]]:
    check_mode(config, Mode.MINI_BATCH)
    check_layout(state, config.basis)
    for sample in batch.samples:
        check_sample(sample, config.p)
    t, N, J, gamma = next_schedule(state, config, len(batch))
    aligned = align_dimension(state, J)
    direction, yhats = batch_gradient(aligned, config.basis, config.tau, batch.samples)
    return gradient_step(aligned, config, direction, gamma, t, N), yhats


def update_single(state: CoefficientState, config: EstimatorConfig, sample: Sample) -> CoefficientState:
    """One single-sample projected gradient step.

    Args:
        state: Current coefficients (not modified)
        config: Estimator configuration in single-sample mode
        sample: New observation

    Returns:
        The projected post-update state

    Raises:
        DomainError: If the sample does not match the configured dimension
    """
    return _update_single(state, config, sample)[0]


def update_batch(state: CoefficientState, config: EstimatorConfig, batch: MiniBatch) -> CoefficientState:
    """One mini-batch projected gradient step with γ_t = A·n_t/N_t and J_t driven by N_t."""
    return _update_batch(state, config, batch)[0]


@dataclass
class PrequentialLoss:
    """Running mean of pinball losses, each scored before its update."""

    total: float = 0.0
    count: int = 0

    def record(self, tau: float, y: float, yhat: float) -> float:
        loss = pinball_loss(tau, y - yhat)
        self.total += loss
        self.count += 1
        return loss

    @property
    def mean(self) -> Optional[float]:
        if self.count == 0:
            return None
        return self.total / self.count


def streamed_pinball(loss: PrequentialLoss) -> Optional[float]:
    """Prequential pinball loss so far, None before the first sample."""
    return loss.mean


@dataclass
class OnlineQuantileEstimator:
    """Single owner of a learner: configuration, state and prequential loss."""

    config: EstimatorConfig
    state: Optional[CoefficientState] = None
    prequential: PrequentialLoss = field(default_factory=PrequentialLoss)

    def __post_init__(self):
        if self.state is None:
            self.state = CoefficientState.zeros(self.config.p)
        check_layout(self.state, self.config.basis)

    def partial_fit(self, sample: Sample) -> float:
        """Consume one sample; returns the prequential prediction ŷ."""
        self.state, yhat = _update_single(self.state, self.config, sample)
        self.prequential.record(self.config.tau, sample.y, yhat)
        return yhat

    def partial_fit_batch(self, batch: MiniBatch) -> List[float]:
        """Consume one mini-batch; returns the prequential predictions."""
        self.state, yhats = _update_batch(self.state, self.config, batch)
        for sample, yhat in zip(batch.samples, yhats):
            self.prequential.record(self.config.tau, sample.y, yhat)
        return yhats

    def fit_stream(self, samples: Iterable[Sample], batch_size: int = 1) -> "OnlineQuantileEstimator":
        """Drive the learner over a stream, grouping batch_size samples per step in mini-batch mode."""
        if self.config.mode is Mode.SINGLE_SAMPLE:
            for sample in samples:
                self.partial_fit(sample)
            return self
        pending: List[Sample] = []
        for sample in samples:
            pending.append(sample)
            if len(pending) == batch_size:
                self.partial_fit_batch(MiniBatch(pending))
                pending = []
        if pending:
            self.partial_fit_batch(MiniBatch(pending))
        return self

    def predict(self, x) -> float:
        return predict(self.state, self.config.basis, x)

    def predict_many(self, X) -> np.ndarray:
        return predict_many(self.state, self.config.basis, X)

    @property
    def streamed_pinball(self) -> Optional[float]:
        return streamed_pinball(self.prequential)

    def snapshot(self) -> CoefficientState:
        return self.state.snapshot()

    def summary(self) -> dict:
        return {
            "t": self.state.t,
            "N": self.state.N,
            "J": self.state.J,
            "l1_norm": self.state.l1_norm,
            "streamed_pinball": self.streamed_pinball,
        }
