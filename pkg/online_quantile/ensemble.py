"""
Random-coordinate ensemble of projected gradient learners.

Each replicate sees every sample but only moves a random subset of S_t
coordinates per step; the full vector is still projected onto the ℓ1 ball.
The ensemble estimate is the mean of the replicate predictions.
"""

import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Callable, List, Optional, Sequence, Tuple, Union

import numpy as np

from .basis import BasisSpec
from .checkpoint import (
    CHECKPOINT_FORMAT,
    CHECKPOINT_VERSION,
    check_config_digest,
    check_header,
    write_json,
    estimator_from_dict,
    estimator_to_dict,
    read_document,
)
from .errors import CheckpointError, DomainError, LayoutMismatchError
from .learner import (
    CoefficientState,
    EstimatorConfig,
    MiniBatch,
    Mode,
    OnlineQuantileEstimator,
    PrequentialLoss,
    Sample,
    check_layout,
    check_mode,
    check_sample,
    align_dimension,
    batch_gradient,
    gradient_step,
    next_schedule,
    predict,
    predict_many,
    sample_direction,
)

logger = logging.getLogger(__name__)


class MaskScope(str, Enum):
    """Which coordinates S_t counts."""

    TOTAL = "total"  # S_t out of all 1 + pJ_t coordinates
    PER_BLOCK = "per_block"  # S_t out of the J_t coordinates of each dimension


@dataclass(frozen=True)
class SubsetRule:
    """S_t = max(1, ⌈fraction · available⌉)."""

    fraction: float = 0.5

    def __post_init__(self):
        if not 0.0 < self.fraction <= 1.0:
            raise ValueError(f"subset fraction must lie in (0, 1], got {self.fraction}")

    def __call__(self, available: int) -> int:
        return max(1, math.ceil(self.fraction * available))


half_subset_rule = SubsetRule(0.5)
full_subset_rule = SubsetRule(1.0)


@dataclass(frozen=True)
class EnsembleConfig:
    """Configuration of the random-coordinate ensemble.

    Attributes:
        base: Configuration shared by every replicate
        replicates_B: Number of replicates
        subset_rule: Maps the available coordinate count to S_t
        seed: Root seed; replicate generators are spawned from it
        mask_scope: Whether S_t counts all coordinates or coordinates per block
        always_include_intercept: Force the intercept into every mask
        replicate_seeds: Explicit per-replicate seeds, overriding the spawned ones
    """

    base: EstimatorConfig
    replicates_B: int = 1
    subset_rule: Callable[[int], int] = half_subset_rule
    seed: int = 0
    mask_scope: MaskScope = MaskScope.TOTAL
    always_include_intercept: bool = False
    replicate_seeds: Optional[Tuple[int, ...]] = None

    def __post_init__(self):
        if self.replicates_B < 1:
            raise ValueError(f"replicates_B must be >= 1, got {self.replicates_B}")
        object.__setattr__(self, "mask_scope", MaskScope(self.mask_scope))
        if self.replicate_seeds is not None:
            object.__setattr__(self, "replicate_seeds", tuple(int(s) for s in self.replicate_seeds))
            if len(self.replicate_seeds) != self.replicates_B:
                raise ValueError(
                    f"got {len(self.replicate_seeds)} replicate seeds for {self.replicates_B} replicates"
                )

    def make_generators(self) -> List[np.random.Generator]:
        if self.replicate_seeds is not None:
            return [np.random.default_rng(s) for s in self.replicate_seeds]
        children = np.random.SeedSequence(self.seed).spawn(self.replicates_B)
        return [np.random.default_rng(child) for child in children]

    def to_dict(self) -> dict:
        if not isinstance(self.subset_rule, SubsetRule):
            raise ValueError("only SubsetRule subset rules can be serialized")
        return {
            "base": self.base.to_dict(),
            "replicates_B": self.replicates_B,
            "subset_fraction": self.subset_rule.fraction,
            "seed": self.seed,
            "mask_scope": self.mask_scope.value,
            "always_include_intercept": self.always_include_intercept,
            "replicate_seeds": list(self.replicate_seeds) if self.replicate_seeds else None,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "EnsembleConfig":
        seeds = data.get("replicate_seeds")
        return cls(
            base=EstimatorConfig.from_dict(data["base"]),
            replicates_B=int(data["replicates_B"]),
            subset_rule=SubsetRule(float(data.get("subset_fraction", 0.5))),
            seed=int(data.get("seed", 0)),
            mask_scope=MaskScope(data.get("mask_scope", MaskScope.TOTAL.value)),
            always_include_intercept=bool(data.get("always_include_intercept", False)),
            replicate_seeds=tuple(seeds) if seeds else None,
        )


def select_coordinates(count_available: int, S_t: int, rng: np.random.Generator) -> np.ndarray:
    """Uniform subset of S_t indices out of range(count_available), sorted.

    Raises:
        ValueError: If S_t is not in [1, count_available]
    """
    if not 1 <= S_t <= count_available:
        raise ValueError(f"S_t must lie in [1, {count_available}], got {S_t}")
    return np.sort(rng.choice(count_available, size=S_t, replace=False))


def draw_mask(config: EnsembleConfig, p: int, J: int, rng: np.random.Generator) -> np.ndarray:
    """Coordinate mask for one replicate step at truncation dimension J."""
    count = 1 + p * J
    if config.mask_scope is MaskScope.TOTAL:
        S_t = config.subset_rule(count)
        if not config.always_include_intercept:
            return select_coordinates(count, S_t, rng)
        if S_t == 1 or count == 1:
            return np.array([0])
        rest = select_coordinates(count - 1, min(S_t - 1, count - 1), rng) + 1
        return np.concatenate(([0], rest))

    S_t = config.subset_rule(J)
    parts = []
    # the intercept is drawn at the same rate as a block coordinate
    if config.always_include_intercept or rng.random() < S_t / J:
        parts.append(np.array([0]))
    for k in range(p):
        parts.append(select_coordinates(J, S_t, rng) + 1 + k * J)
    return np.concatenate(parts)


def _check_mask(mask: np.ndarray, dimension: int) -> np.ndarray:
    mask = np.asarray(mask, dtype=int)
    if mask.size == 0:
        raise ValueError("coordinate mask must not be empty")
    if np.any(mask < 0) or np.any(mask >= dimension):
        raise DomainError(f"mask indices must lie in [0, {dimension}), got {mask}")
    return mask


def _update_masked(state: CoefficientState, config: EstimatorConfig, sample: Sample,
                   mask) -> Tuple[CoefficientState, float]:
    check_mode(config, Mode.SINGLE_SAMPLE)
    check_layout(state, config.basis)
    check_sample(sample, config.p)
    t, N, J, gamma = next_schedule(state, config, 1)
    mask = _check_mask(mask, config.basis.dimension(J))
    aligned = align_dimension(state, J)
    direction, yhat = sample_direction(aligned, config.basis, config.tau, sample)
    return gradient_step(aligned, config, direction, gamma, t, N, mask=mask), yhat


def _update_masked_batch(state: CoefficientState, config: EstimatorConfig, batch: MiniBatch,
                         mask) -> Tuple[CoefficientState, List[float]]:
    check_mode(config, Mode.MINI_BATCH)
    check_layout(state, config.basis)
    for sample in batch.samples:
        check_sample(sample, config.p)
    t, N, J, gamma = next_schedule(state, config, len(batch))
    mask = _check_mask(mask, config.basis.dimension(J))
    aligned = align_dimension(state, J)
    direction, yhats = batch_gradient(aligned, config.basis, config.tau, batch.samples)
    return gradient_step(aligned, config, direction, gamma, t, N, mask=mask), yhats


def update_masked(state: CoefficientState, config: EstimatorConfig, sample: Sample, mask) -> CoefficientState:
    """Single-sample step that only moves the coordinates in mask.

    Coordinates outside the mask get a zero gradient; the ℓ1 projection is
    applied to the whole vector. Mask indices refer to the post-alignment
    layout of dimension 1 + pJ_t.
    """
    return _update_masked(state, config, sample, mask)[0]


def update_masked_batch(state: CoefficientState, config: EstimatorConfig, batch: MiniBatch,
                        mask) -> CoefficientState:
    """Mini-batch counterpart of update_masked."""
    return _update_masked_batch(state, config, batch, mask)[0]


def _check_same_layout(states: Sequence[CoefficientState]) -> None:
    if not states:
        raise ValueError("need at least one replicate state")
    layouts = {(s.p, s.J) for s in states}
    if len(layouts) != 1:
        raise LayoutMismatchError(f"replicates disagree on (p, J): {sorted(layouts)}")


def ensemble_predict(replicate_states: Sequence[CoefficientState], basis: BasisSpec, x) -> float:
    """Arithmetic mean of the replicate predictions at x."""
    _check_same_layout(replicate_states)
    return float(np.mean([predict(state, basis, x) for state in replicate_states]))


def mean_state(replicate_states: Sequence[CoefficientState]) -> CoefficientState:
    """Coefficient average; predicts exactly what ensemble_predict averages."""
    _check_same_layout(replicate_states)
    first = replicate_states[0]
    theta = np.mean(np.stack([s.theta for s in replicate_states]), axis=0)
    return CoefficientState(theta=theta, J=first.J, t=first.t, N=first.N, p=first.p)


@dataclass
class EnsembleEstimator:
    """B replicate learners driven by the same stream, each with its own generator."""

    config: EnsembleConfig
    replicates: List[OnlineQuantileEstimator] = field(default_factory=list)
    rngs: List[np.random.Generator] = field(default_factory=list)
    prequential: PrequentialLoss = field(default_factory=PrequentialLoss)

    def __post_init__(self):
        if not self.replicates:
            self.replicates = [OnlineQuantileEstimator(self.config.base) for _ in range(self.config.replicates_B)]
        if not self.rngs:
            self.rngs = self.config.make_generators()
        if len(self.replicates) != self.config.replicates_B or len(self.rngs) != self.config.replicates_B:
            raise ValueError("replicate and generator counts must equal replicates_B")

    @property
    def base(self) -> EstimatorConfig:
        return self.config.base

    @property
    def states(self) -> List[CoefficientState]:
        return [r.state for r in self.replicates]

    def _check_arrival(self, mode: Mode, samples: Sequence[Sample]) -> None:
        # reject before any generator is advanced
        check_mode(self.base, mode)
        for replicate in self.replicates:
            check_layout(replicate.state, self.base.basis)
        for sample in samples:
            check_sample(sample, self.base.p)

    def _mask_for(self, replicate: OnlineQuantileEstimator, rng: np.random.Generator, n_t: int) -> np.ndarray:
        _, _, J, _ = next_schedule(replicate.state, self.base, n_t)
        return draw_mask(self.config, self.base.p, J, rng)

    def partial_fit(self, sample: Sample) -> float:
        """Feed one sample to every replicate; returns the ensemble prequential ŷ."""
        self._check_arrival(Mode.SINGLE_SAMPLE, [sample])
        yhats = []
        for replicate, rng in zip(self.replicates, self.rngs):
            mask = self._mask_for(replicate, rng, 1)
            replicate.state, yhat = _update_masked(replicate.state, self.base, sample, mask)
            replicate.prequential.record(self.base.tau, sample.y, yhat)
            yhats.append(yhat)
        yhat = float(np.mean(yhats))
        self.prequential.record(self.base.tau, sample.y, yhat)
        return yhat

    def partial_fit_batch(self, batch: MiniBatch) -> List[float]:
        """Feed one mini-batch to every replicate; returns the ensemble prequential predictions."""
        self._check_arrival(Mode.MINI_BATCH, batch.samples)
        per_replicate = []
        for replicate, rng in zip(self.replicates, self.rngs):
            mask = self._mask_for(replicate, rng, len(batch))
            replicate.state, yhats = _update_masked_batch(replicate.state, self.base, batch, mask)
            for sample, yhat in zip(batch.samples, yhats):
                replicate.prequential.record(self.base.tau, sample.y, yhat)
            per_replicate.append(yhats)
        means = [float(v) for v in np.mean(np.array(per_replicate), axis=0)]
        for sample, yhat in zip(batch.samples, means):
            self.prequential.record(self.base.tau, sample.y, yhat)
        return means

    def predict(self, x) -> float:
        return ensemble_predict(self.states, self.base.basis, x)

    def predict_many(self, X) -> np.ndarray:
        return predict_many(self.mean_state(), self.base.basis, X)

    def mean_state(self) -> CoefficientState:
        return mean_state(self.states)

    @property
    def streamed_pinball(self) -> Optional[float]:
        return self.prequential.mean

    def summary(self) -> dict:
        state = self.mean_state()
        return {
            "t": state.t,
            "N": state.N,
            "J": state.J,
            "l1_norm": state.l1_norm,
            "replicates": self.config.replicates_B,
            "streamed_pinball": self.streamed_pinball,
        }


def _replicate_path(manifest: Path, index: int) -> Path:
    return manifest.with_name(f"{manifest.stem}.replicate{index}.json")


def save_ensemble(ensemble: EnsembleEstimator, path: Union[str, Path]) -> Path:
    """Write one checkpoint per replicate plus a manifest at path."""
    path = Path(path)
    entries = []
    for i, (replicate, rng) in enumerate(zip(ensemble.replicates, ensemble.rngs)):
        replicate_file = write_json(estimator_to_dict(replicate), _replicate_path(path, i))
        entries.append({"file": replicate_file.name, "rng_state": rng.bit_generator.state})
    manifest = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "kind": "ensemble",
        "config": ensemble.config.to_dict(),
        "config_digest": ensemble.base.digest(),
        "prequential": {
            "total": float(ensemble.prequential.total).hex(),
            "count": ensemble.prequential.count,
        },
        "replicates": entries,
    }
    write_json(manifest, path)
    logger.info(f"Ensemble manifest saved to: {path} ({len(entries)} replicates)")
    return path


def _restore_generator(state: dict) -> np.random.Generator:
    bit_generator = getattr(np.random, state["bit_generator"])()
    bit_generator.state = state
    return np.random.Generator(bit_generator)


def load_ensemble(path: Union[str, Path], expected_config: Optional[EstimatorConfig] = None) -> EnsembleEstimator:
    """Load an ensemble written by save_ensemble, generators included."""
    path = Path(path)
    document = read_document(path)
    check_header(document, "ensemble", str(path))
    try:
        config = EnsembleConfig.from_dict(document["config"])
        check_config_digest(config.base, document["config_digest"], expected_config, str(path))
        replicates = []
        rngs = []
        for entry in document["replicates"]:
            replicate_file = path.parent / entry["file"]
            replicates.append(
                estimator_from_dict(read_document(replicate_file), config.base, source=str(replicate_file))
            )
            rngs.append(_restore_generator(entry["rng_state"]))
        prequential = PrequentialLoss(
            total=float.fromhex(document["prequential"]["total"]),
            count=int(document["prequential"]["count"]),
        )
    except CheckpointError:
        raise
    except (KeyError, TypeError, ValueError, AttributeError) as e:
        raise CheckpointError(f"{path} is malformed: {e}") from e
    logger.info(f"Ensemble loaded from: {path} ({len(replicates)} replicates)")
    return EnsembleEstimator(config=config, replicates=replicates, rngs=rngs, prequential=prequential)
