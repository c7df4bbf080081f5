"""
Simulation lab for the online quantile learner.

This module provides functionality to:
1. Generate additive truths inside a Sobolev ellipsoid and an ℓ1 ball
2. Stream i.i.d. samples with uniform covariates and a known noise law
3. Compute the exact L2 error of a state through coefficient orthogonality
4. Run experiments, seed sweeps and log-log rate fits
5. Time the per-step and per-prediction cost at fixed J
6. Read and write evaluation reports as CSV
"""

import csv
import logging
import math
import time
from collections import deque
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Callable, Iterator, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy import stats

from .basis import BasisSpec, univariate_block
from .checkpoint import write_json
from .errors import LayoutMismatchError
from .learner import (
    CoefficientState,
    EstimatorConfig,
    MiniBatch,
    Mode,
    OnlineQuantileEstimator,
    Sample,
    predict,
    predict_many,
    step_size,
)
from .ensemble import EnsembleConfig, EnsembleEstimator
from .projection import l1_project

logger = logging.getLogger(__name__)

DEFAULT_J_TRUTH = 2000
DEFAULT_DECAY_OFFSET = 0.6

# rows per chunk when evaluating the J_truth-term truth
_EVAL_CHUNK = 512
_SAMPLE_CHUNK = 1024

REPORT_COLUMNS = ("t", "N", "J", "gamma", "l2_error_sq", "streamed_pinball", "wall_time_ns")

PathLike = Union[str, Path]


class NoiseKind(str, Enum):
    """Supported noise laws."""

    GAUSSIAN = "gaussian"
    STUDENT_T = "student_t"
    UNIFORM = "uniform"


@dataclass(frozen=True)
class NoiseLaw:
    """Additive noise with a known inverse CDF.

    Attributes:
        kind: Law family
        scale: σ of the Gaussian or scale of the Student-t (0 gives noiseless data)
        df: Degrees of freedom ν of the Student-t
        low: Lower end a of the uniform law
        high: Upper end b of the uniform law
    """

    kind: NoiseKind = NoiseKind.GAUSSIAN
    scale: float = 1.0
    df: float = 3.0
    low: float = 0.0
    high: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "kind", NoiseKind(self.kind))
        if self.scale < 0:
            raise ValueError(f"noise scale must be nonnegative, got {self.scale}")
        if not self.df > 0:
            raise ValueError(f"degrees of freedom must be positive, got {self.df}")
        if self.kind is NoiseKind.UNIFORM and not self.high > self.low:
            raise ValueError(f"uniform noise needs low < high, got [{self.low}, {self.high}]")

    @classmethod
    def gaussian(cls, sigma: float = 1.0) -> "NoiseLaw":
        return cls(kind=NoiseKind.GAUSSIAN, scale=sigma)

    @classmethod
    def student_t(cls, df: float, scale: float = 1.0) -> "NoiseLaw":
        return cls(kind=NoiseKind.STUDENT_T, scale=scale, df=df)

    @classmethod
    def uniform(cls, low: float = 0.0, high: float = 1.0) -> "NoiseLaw":
        return cls(kind=NoiseKind.UNIFORM, low=low, high=high)

    @property
    def degenerate(self) -> bool:
        return self.kind is not NoiseKind.UNIFORM and self.scale == 0

    def _distribution(self):
        if self.kind is NoiseKind.GAUSSIAN:
            return stats.norm(loc=0.0, scale=self.scale)
        if self.kind is NoiseKind.STUDENT_T:
            return stats.t(df=self.df, loc=0.0, scale=self.scale)
        return stats.uniform(loc=self.low, scale=self.high - self.low)

    def quantile(self, tau: float) -> float:
        """Inverse CDF of the noise at τ."""
        if not 0.0 < tau < 1.0:
            raise ValueError(f"tau must lie in (0, 1), got {tau}")
        if self.degenerate:
            return 0.0
        return float(self._distribution().ppf(tau))

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        if self.degenerate:
            return np.zeros(n)
        return np.asarray(self._distribution().rvs(size=n, random_state=rng), dtype=float)

    def to_dict(self) -> dict:
        return {"kind": self.kind.value, "scale": self.scale, "df": self.df, "low": self.low, "high": self.high}

    @classmethod
    def from_dict(cls, data: dict) -> "NoiseLaw":
        return cls(
            kind=NoiseKind(data["kind"]),
            scale=float(data.get("scale", 1.0)),
            df=float(data.get("df", 3.0)),
            low=float(data.get("low", 0.0)),
            high=float(data.get("high", 1.0)),
        )


@dataclass
class TrueModel:
    """Additive truth α + Σ_k Σ_{j<=J_truth} θ*_{k,j} ψ_j(x_k) plus noise.

    Attributes:
        p: Number of covariates
        s: Smoothness used to build the coefficients
        coeffs: Array of shape (p, J_truth)
        intercept: α
        noise: Noise law
        tau: Quantile level the lab targets
        Q: Sobolev radius the coefficients respect
        R: ℓ1 radius the coefficients (with intercept and shift) respect
        scales: Per-dimension rescaling constants c_k
        decay_offset: Coefficients decay as j^-(s + decay_offset)
    """

    p: int
    s: float
    coeffs: np.ndarray
    intercept: float
    noise: NoiseLaw
    tau: float
    Q: float = math.inf
    R: float = math.inf
    scales: Optional[np.ndarray] = None
    decay_offset: float = DEFAULT_DECAY_OFFSET

    def __post_init__(self):
        self.coeffs = np.asarray(self.coeffs, dtype=float)
        if self.coeffs.ndim != 2 or self.coeffs.shape[0] != self.p:
            raise LayoutMismatchError(f"coeffs must have shape ({self.p}, J_truth), got {self.coeffs.shape}")

    @property
    def J_truth(self) -> int:
        return self.coeffs.shape[1]

    @property
    def basis(self) -> BasisSpec:
        return BasisSpec(dims_p=self.p)

    @property
    def tau_shift(self) -> float:
        return self.noise.quantile(self.tau)

    @property
    def quantile_intercept(self) -> float:
        """Constant term of q_τ: α + tau_shift."""
        return self.intercept + self.tau_shift

    def sobolev_norms(self) -> np.ndarray:
        """√Σ_j (j^s θ*_{k,j})² for each dimension k."""
        j = np.arange(1, self.J_truth + 1, dtype=float)
        return np.sqrt(np.sum((j ** self.s * self.coeffs) ** 2, axis=1))

    def l1_norm(self) -> float:
        return float(np.sum(np.abs(self.coeffs)) + abs(self.intercept))

    def neglected_tail_bound(self) -> float:
        """Upper bound on Σ_k Σ_{j>J_truth} θ*² of the untruncated construction."""
        if self.scales is None:
            return 0.0
        exponent = 2.0 * (self.s + self.decay_offset)
        integral = self.J_truth ** (1.0 - exponent) / (exponent - 1.0)
        return float(np.sum(np.asarray(self.scales) ** 2) * integral)

    def regression_function(self, X) -> np.ndarray:
        """α + Σ_k f_k(x_k) for every row of X, evaluated in chunks."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if X.shape[1] != self.p:
            raise LayoutMismatchError(f"expected {self.p} columns, got {X.shape[1]}")
        out = np.full(X.shape[0], self.intercept)
        basis = self.basis
        for start in range(0, X.shape[0], _EVAL_CHUNK):
            rows = slice(start, start + _EVAL_CHUNK)
            for k in range(self.p):
                out[rows] += univariate_block(basis, self.J_truth, X[rows, k]) @ self.coeffs[k]
        return out

    def quantile_function(self, X) -> np.ndarray:
        """q_τ(x) = α + Σ_k f_k(x_k) + tau_shift."""
        return self.regression_function(X) + self.tau_shift

    def to_dict(self) -> dict:
        return {
            "p": self.p,
            "s": self.s,
            "J_truth": self.J_truth,
            "intercept": self.intercept,
            "noise": self.noise.to_dict(),
            "tau": self.tau,
            "Q": self.Q,
            "R": self.R,
            "decay_offset": self.decay_offset,
            "sobolev_norms": [float(v) for v in self.sobolev_norms()],
            "l1_norm": self.l1_norm(),
            "neglected_tail_bound": self.neglected_tail_bound(),
        }


def make_sobolev_truth(p: int, s: float, Q: float, R: float, seed: int = 0, tau: float = 0.5,
                       noise: Optional[NoiseLaw] = None, intercept: float = 0.0,
                       J_truth: int = DEFAULT_J_TRUTH,
                       decay_offset: float = DEFAULT_DECAY_OFFSET) -> TrueModel:
    """Draw a truth with Σ_j (j^s θ*_{k,j})² <= Q² and ‖θ*‖₁ + |α + shift| <= R.

    Coefficients are θ*_{k,j} = c_k · ζ_{k,j} · j^-(s + decay_offset) with random
    signs and magnitudes |ζ| in [0.5, 1]; c_k is the largest constant meeting
    both constraints, with the ℓ1 budget split evenly across dimensions.

    Args:
        p: Number of covariates
        s: Smoothness (> 1/2)
        Q: Sobolev radius
        R: ℓ1 radius of the learner the truth must fit in
        seed: Seed of the coefficient draw
        tau: Quantile level
        noise: Noise law (Gaussian σ = 1 by default)
        intercept: α
        J_truth: Number of coefficients kept per dimension
        decay_offset: Extra decay beyond j^-s (> 1/2 keeps the norm finite)

    Returns:
        TrueModel satisfying both constraints

    Raises:
        ValueError: If s <= 1/2 or (Q, R) leaves no room for nonzero coefficients
    """
    if not s > 0.5:
        raise ValueError(f"s must exceed 1/2, got {s}")
    if not Q > 0 or not R > 0:
        raise ValueError(f"Q and R must be positive, got Q={Q}, R={R}")
    if p < 1 or J_truth < 1:
        raise ValueError(f"p and J_truth must be positive, got p={p}, J_truth={J_truth}")
    if not decay_offset > 0.5:
        raise ValueError(f"decay_offset must exceed 1/2, got {decay_offset}")
    noise = noise if noise is not None else NoiseLaw.gaussian(1.0)
    shift = noise.quantile(tau)
    # the learner's intercept targets α + shift, the data carry α
    budget = R - max(abs(intercept), abs(intercept + shift))
    if not budget > 0:
        raise ValueError(
            f"infeasible truth: |intercept| = {abs(intercept)} and shift {shift} exhaust R = {R}"
        )

    rng = np.random.default_rng(seed)
    j = np.arange(1, J_truth + 1, dtype=float)
    signs = rng.choice([-1.0, 1.0], size=(p, J_truth))
    magnitudes = rng.uniform(0.5, 1.0, size=(p, J_truth))
    raw = signs * magnitudes * j ** -(s + decay_offset)

    sobolev = np.sqrt(np.sum((j ** s * raw) ** 2, axis=1))
    l1 = np.sum(np.abs(raw), axis=1)
    # shrink by one part in 1e12 so both constraints survive rounding
    scales = np.minimum(Q / sobolev, budget / (p * l1)) * (1.0 - 1e-12)
    coeffs = raw * scales[:, np.newaxis]

    model = TrueModel(
        p=p,
        s=s,
        coeffs=coeffs,
        intercept=intercept,
        noise=noise,
        tau=tau,
        Q=Q,
        R=R,
        scales=scales,
        decay_offset=decay_offset,
    )
    logger.debug(
        f"Truth drawn: p={p}, s={s}, seed={seed}, sobolev={model.sobolev_norms()}, l1={model.l1_norm():.6f}"
    )
    return model


def sample_stream(model: TrueModel, n: int, rng: np.random.Generator,
                  chunk_size: int = _SAMPLE_CHUNK) -> Iterator[Sample]:
    """Yield n samples with X ~ Uniform[0,1]^p and Y = regression function + noise."""
    remaining = n
    while remaining > 0:
        m = min(chunk_size, remaining)
        X = rng.random((m, model.p))
        Y = model.regression_function(X) + model.noise.sample(rng, m)
        for i in range(m):
            yield Sample(x=X[i], y=float(Y[i]))
        remaining -= m


@dataclass
class L2ErrorBreakdown:
    """Terms of ‖q̂ - q_τ‖²_{L2} by orthonormality."""

    intercept: float
    head: float
    tail: float
    neglected_tail_bound: float

    @property
    def total(self) -> float:
        return self.intercept + self.head + self.tail


def l2_error_breakdown(state: CoefficientState, model: TrueModel) -> L2ErrorBreakdown:
    """Exact squared L2 distance between the state's estimate and q_τ, term by term.

    Raises:
        LayoutMismatchError: If state and model have a different number of covariates
    """
    if state.p != model.p:
        raise LayoutMismatchError(f"state has p = {state.p}, model has p = {model.p}")
    intercept = (state.intercept - model.quantile_intercept) ** 2
    estimate = state.theta[1:].reshape(state.p, state.J)
    J_truth = model.J_truth
    if state.J <= J_truth:
        head = float(np.sum((estimate - model.coeffs[:, : state.J]) ** 2))
        tail = float(np.sum(model.coeffs[:, state.J:] ** 2))
    else:
        head = float(np.sum((estimate[:, :J_truth] - model.coeffs) ** 2) + np.sum(estimate[:, J_truth:] ** 2))
        tail = 0.0
    return L2ErrorBreakdown(
        intercept=float(intercept),
        head=head,
        tail=tail,
        neglected_tail_bound=model.neglected_tail_bound(),
    )


def exact_l2_error(state: CoefficientState, model: TrueModel) -> float:
    """‖q̂ - q_τ‖²_{L2} without quadrature, up to the model's own truncation."""
    return l2_error_breakdown(state, model).total


def monte_carlo_l2_error(state: CoefficientState, model: TrueModel, n_points: int,
                         rng: np.random.Generator) -> Tuple[float, float]:
    """Monte-Carlo estimate of ∫(q̂ - q_τ)² over [0,1]^p and its standard error."""
    if n_points < 2:
        raise ValueError(f"n_points must be at least 2, got {n_points}")
    basis = BasisSpec(dims_p=state.p)
    total = 0.0
    total_sq = 0.0
    for start in range(0, n_points, 100_000):
        m = min(100_000, n_points - start)
        X = rng.random((m, model.p))
        sq = (predict_many(state, basis, X) - model.quantile_function(X)) ** 2
        total += float(np.sum(sq))
        total_sq += float(np.sum(sq ** 2))
    mean = total / n_points
    variance = max(total_sq / n_points - mean ** 2, 0.0) * n_points / (n_points - 1)
    return mean, math.sqrt(variance / n_points)


def empirical_coverage(predictor: Callable[[np.ndarray], np.ndarray], model: TrueModel, n: int,
                       rng: np.random.Generator) -> float:
    """Fraction of n fresh samples with y <= predictor(x)."""
    X = rng.random((n, model.p))
    Y = model.regression_function(X) + model.noise.sample(rng, n)
    return float(np.mean(Y <= np.asarray(predictor(X))))


def truncated_truth_vector(model: TrueModel, J: int) -> np.ndarray:
    """(α + shift, θ*_{1,1..J}, ..., θ*_{p,1..J}) in the learner's layout, zero beyond J_truth."""
    blocks = np.zeros((model.p, J))
    width = min(J, model.J_truth)
    blocks[:, :width] = model.coeffs[:, :width]
    return np.concatenate(([model.quantile_intercept], blocks.reshape(-1)))


def projection_gain(theta_tilde: np.ndarray, J: int, R: float, model: TrueModel) -> float:
    """Decrease of the distance to the truncated truth caused by projecting θ̃.

    Nonnegative whenever the truncated truth lies in the ℓ1 ball of radius R.
    """
    target = truncated_truth_vector(model, J)
    theta_tilde = np.asarray(theta_tilde, dtype=float)
    if theta_tilde.shape != target.shape:
        raise LayoutMismatchError(f"expected length {target.shape[0]}, got {theta_tilde.shape}")
    projected = l1_project(theta_tilde, R).v
    return float(np.linalg.norm(theta_tilde - target) - np.linalg.norm(projected - target))


@dataclass
class EvaluationReport:
    """Learner metrics at one checkpoint of a run."""

    t: int
    N: int
    J: int
    gamma: float
    l2_error_sq: float
    streamed_pinball: Optional[float]
    wall_time_ns: int

    def metrics(self) -> tuple:
        """Every field except the wall time."""
        return (self.t, self.N, self.J, self.gamma, self.l2_error_sq, self.streamed_pinball)


def geometric_checkpoints(horizon: int, base: int = 2) -> List[int]:
    """1, base, base², ... up to horizon, plus horizon itself."""
    if horizon < 1:
        return []
    if base < 2:
        raise ValueError(f"base must be at least 2, got {base}")
    points = []
    value = 1
    while value <= horizon:
        points.append(value)
        value *= base
    if points[-1] != horizon:
        points.append(horizon)
    return points


def run_experiment(config: EstimatorConfig, model: TrueModel, horizon: int,
                   checkpoints: Optional[Sequence[int]] = None, seed: int = 0, batch_size: int = 1,
                   ensemble: Optional[EnsembleConfig] = None,
                   clock: Callable[[], int] = time.perf_counter_ns) -> List[EvaluationReport]:
    """Stream horizon samples through a learner and report at each checkpoint.

    Checkpoints count samples (N). In mini-batch mode the stream is grouped
    into batches of batch_size and a checkpoint is reported after the first
    update that reaches it. Wall time covers learner updates only.

    Args:
        config: Learner configuration (the ensemble's base when ensemble is given)
        model: Truth generating the stream
        horizon: Number of samples
        checkpoints: Sample counts to report at; geometric by default
        seed: Seed of the data stream
        batch_size: Samples per update in mini-batch mode
        ensemble: Run a random-coordinate ensemble instead of a single learner
        clock: Nanosecond clock

    Returns:
        Reports in increasing N
    """
    if horizon < 0:
        raise ValueError(f"horizon must be nonnegative, got {horizon}")
    if batch_size < 1:
        raise ValueError(f"batch_size must be positive, got {batch_size}")
    if config.mode is Mode.SINGLE_SAMPLE and batch_size != 1:
        raise ValueError("batch_size > 1 requires mini-batch mode")
    if horizon == 0:
        return []

    if ensemble is not None:
        learner = EnsembleEstimator(ensemble)
        config = ensemble.base
    else:
        learner = OnlineQuantileEstimator(config)
    pending = deque(sorted(set(checkpoints if checkpoints is not None else geometric_checkpoints(horizon))))
    rng = np.random.default_rng(seed)
    reports: List[EvaluationReport] = []
    elapsed = 0
    batch: List[Sample] = []
    for sample in sample_stream(model, horizon, rng):
        batch.append(sample)
        if len(batch) < batch_size:
            continue
        elapsed += _timed_update(learner, config, batch, clock)
        _collect(reports, pending, learner, config, model, len(batch), elapsed)
        batch = []
    if batch:
        elapsed += _timed_update(learner, config, batch, clock)
        _collect(reports, pending, learner, config, model, len(batch), elapsed)
    logger.debug(f"Run finished: horizon={horizon}, seed={seed}, reports={len(reports)}")
    return reports


def _timed_update(learner, config: EstimatorConfig, batch: List[Sample], clock: Callable[[], int]) -> int:
    start = clock()
    if config.mode is Mode.SINGLE_SAMPLE:
        learner.partial_fit(batch[0])
    else:
        learner.partial_fit_batch(MiniBatch(batch))
    return clock() - start


def _current_state(learner) -> CoefficientState:
    if isinstance(learner, EnsembleEstimator):
        return learner.mean_state()
    return learner.state


def _collect(reports: List[EvaluationReport], pending: deque, learner, config: EstimatorConfig,
             model: TrueModel, n_t: int, elapsed: int) -> None:
    state = _current_state(learner)
    if not pending or state.N < pending[0]:
        return
    while pending and pending[0] <= state.N:
        pending.popleft()
    reports.append(
        EvaluationReport(
            t=state.t,
            N=state.N,
            J=state.J,
            gamma=step_size(config, state.t, n_t, state.N),
            l2_error_sq=exact_l2_error(state, model),
            streamed_pinball=learner.streamed_pinball,
            wall_time_ns=int(elapsed),
        )
    )


def log_log_slope(xs: Sequence[float], errors: Sequence[float]) -> float:
    """OLS slope of log(error) against log(x).

    Raises:
        ValueError: With fewer than 3 points, non-increasing x or nonpositive values
    """
    xs = np.asarray(xs, dtype=float)
    errors = np.asarray(errors, dtype=float)
    if xs.shape[0] < 3:
        raise ValueError(f"need at least 3 points for a slope, got {xs.shape[0]}")
    if np.any(np.diff(xs) <= 0):
        raise ValueError("abscissae must be strictly increasing")
    if np.any(xs <= 0) or np.any(errors <= 0):
        raise ValueError("log-log fit needs positive abscissae and errors")
    return float(stats.linregress(np.log(xs), np.log(errors)).slope)


def _in_window(value: int, window: Optional[Tuple[int, int]]) -> bool:
    return window is None or window[0] <= value <= window[1]


def rate_slope(reports: Sequence[EvaluationReport], window: Optional[Tuple[int, int]] = None,
               by: str = "N") -> float:
    """Slope of log l2_error_sq against log t (by="t") or log N over window (inclusive)."""
    if by not in ("t", "N"):
        raise ValueError(f"by must be 't' or 'N', got {by!r}")
    selected = [r for r in reports if _in_window(getattr(r, by), window)]
    return log_log_slope([getattr(r, by) for r in selected], [r.l2_error_sq for r in selected])


@dataclass
class CurvePoint:
    """Seed-averaged point of a learning curve."""

    N: int
    mean_log_error: float
    runs: int

    @property
    def log_N(self) -> float:
        return math.log(self.N)


def mean_log_error_curve(runs: Sequence[Sequence[EvaluationReport]]) -> List[CurvePoint]:
    """Mean of log l2_error_sq across runs at every N reported by all of them."""
    if not runs:
        return []
    by_run = [{r.N: r.l2_error_sq for r in run} for run in runs]
    common = sorted(set(by_run[0]).intersection(*by_run[1:]))
    return [
        CurvePoint(N=n, mean_log_error=float(np.mean([math.log(errors[n]) for errors in by_run])), runs=len(runs))
        for n in common
    ]


def curve_slope(curve: Sequence[CurvePoint], window: Optional[Tuple[int, int]] = None) -> float:
    """OLS slope of a mean-log-error curve against log N over window (inclusive)."""
    selected = [c for c in curve if _in_window(c.N, window)]
    return log_log_slope([c.N for c in selected], [math.exp(c.mean_log_error) for c in selected])


def expected_rate(s: float) -> float:
    """Minimax exponent -2s/(2s+1)."""
    return -2.0 * s / (2.0 * s + 1.0)


@dataclass
class _SweepTask:
    config: EstimatorConfig
    model: TrueModel
    horizon: int
    checkpoints: Optional[List[int]]
    seed: int
    batch_size: int
    ensemble: Optional[EnsembleConfig]
    timed: bool = True


def zero_clock() -> int:
    """Clock that never advances; runs timed with it report zero wall time."""
    return 0


def _run_task(task: _SweepTask) -> List[EvaluationReport]:
    return run_experiment(
        task.config,
        task.model,
        task.horizon,
        checkpoints=task.checkpoints,
        seed=task.seed,
        batch_size=task.batch_size,
        ensemble=task.ensemble,
        clock=time.perf_counter_ns if task.timed else zero_clock,
    )


def run_seed_sweep(config: EstimatorConfig, model: TrueModel, horizon: int, seeds: Sequence[int],
                   checkpoints: Optional[Sequence[int]] = None, batch_size: int = 1,
                   ensemble: Optional[EnsembleConfig] = None, workers: int = 1,
                   timed: bool = True) -> List[List[EvaluationReport]]:
    """One independent run per seed, fanned out over worker processes when workers > 1.

    With timed=False every report carries wall_time_ns = 0, which makes the
    reports of a seed reproducible byte for byte.

    Returns:
        Report lists in the order of seeds
    """
    tasks = [
        _SweepTask(config, model, horizon, list(checkpoints) if checkpoints else None, seed, batch_size, ensemble, timed)
        for seed in seeds
    ]
    logger.info(f"Running {len(tasks)} seeds to horizon {horizon} with {workers} worker(s)")
    if workers <= 1 or len(tasks) <= 1:
        return [_run_task(task) for task in tasks]
    with ProcessPoolExecutor(max_workers=workers) as executor:
        return list(executor.map(_run_task, tasks))


@dataclass
class StepCost:
    """Mean cost of one update and one prediction at fixed J."""

    J: int
    update_ns: float
    predict_ns: float

    @property
    def J_log_J(self) -> float:
        return self.J * math.log(self.J) if self.J > 1 else 0.0


def profile_step_cost(p: int, J_values: Sequence[int], steps: int = 200, seed: int = 0,
                      tau: float = 0.5, R: float = 1.0, s: float = 2.0,
                      clock: Callable[[], int] = time.perf_counter_ns) -> List[StepCost]:
    """Time updates and predictions with the truncation dimension held at each J.

    The state starts at t = 1 with J coefficients per block, so J_t stays at J
    for the first steps; steps must stay below the point where the schedule
    would exceed J.
    """
    rng = np.random.default_rng(seed)
    config = EstimatorConfig(tau=tau, R=R, A=1.0, s=s, p=p)
    costs = []
    for J in J_values:
        theta = l1_project(rng.standard_normal(1 + p * J), R).v
        state = CoefficientState(theta=theta, J=J, t=1, N=1, p=p)
        estimator = OnlineQuantileEstimator(config, state=state)
        samples = [Sample(x=rng.random(p), y=float(rng.standard_normal())) for _ in range(steps)]

        start = clock()
        for sample in samples:
            estimator.partial_fit(sample)
        update_ns = (clock() - start) / steps

        start = clock()
        for sample in samples:
            predict(estimator.state, config.basis, sample.x)
        predict_ns = (clock() - start) / steps

        if estimator.state.J != J:
            raise ValueError(f"schedule grew J past {J} within {steps} steps")
        costs.append(StepCost(J=J, update_ns=update_ns, predict_ns=predict_ns))
        logger.debug(f"J={J}: update {update_ns:.0f} ns, predict {predict_ns:.0f} ns")
    return costs


def linear_fit_r2(xs: Sequence[float], ys: Sequence[float]) -> Tuple[float, float]:
    """Slope and R² of the least-squares line through (xs, ys)."""
    fit = stats.linregress(np.asarray(xs, dtype=float), np.asarray(ys, dtype=float))
    return float(fit.slope), float(fit.rvalue ** 2)


def _format_float(value: Optional[float]) -> str:
    return "" if value is None else repr(float(value))


def _parse_float(value: str) -> Optional[float]:
    return None if value == "" else float(value)


def write_reports_csv(reports: Sequence[EvaluationReport], path: PathLike) -> Path:
    """Write reports with floats in shortest round-trip form."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(REPORT_COLUMNS)
        for r in reports:
            writer.writerow([
                r.t,
                r.N,
                r.J,
                _format_float(r.gamma),
                _format_float(r.l2_error_sq),
                _format_float(r.streamed_pinball),
                r.wall_time_ns,
            ])
    return path


def read_reports_csv(path: PathLike) -> List[EvaluationReport]:
    """Read a file written by write_reports_csv."""
    with open(path, "r", newline="", encoding="utf-8") as f:
        reader = csv.DictReader(f)
        if tuple(reader.fieldnames or ()) != REPORT_COLUMNS:
            raise ValueError(f"{path} does not have report columns {REPORT_COLUMNS}")
        return [
            EvaluationReport(
                t=int(row["t"]),
                N=int(row["N"]),
                J=int(row["J"]),
                gamma=float(row["gamma"]),
                l2_error_sq=float(row["l2_error_sq"]),
                streamed_pinball=_parse_float(row["streamed_pinball"]),
                wall_time_ns=int(row["wall_time_ns"]),
            )
            for row in reader
        ]


def write_curve_csv(curve: Sequence[CurvePoint], path: PathLike) -> Path:
    """Plot-ready learning curve: N, log N, mean log error."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(("N", "log_N", "mean_log_l2_error_sq", "runs"))
        for c in curve:
            writer.writerow([c.N, repr(c.log_N), repr(c.mean_log_error), c.runs])
    return path


def write_run_manifest(path: PathLike, config: EstimatorConfig, model: TrueModel, seeds: Sequence[int],
                       **extra) -> Path:
    """JSON manifest with the learner config, truth summary and seeds of a run."""
    document = {
        "config": config.to_dict(),
        "config_digest": config.digest(),
        "model": model.to_dict(),
        "seeds": list(seeds),
        **extra,
    }
    return write_json(document, Path(path))
