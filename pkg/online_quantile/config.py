"""
Run configuration for the command-line tool.

Settings come from three places, highest precedence first: command-line
flags, a JSON config file (``--config`` or the ``ONLINE_QUANTILE_CONFIG``
environment variable) and the dataclass defaults. The file may use flat
keys or the ``"estimator"``, ``"ensemble"``, ``"input"`` and ``"lab"``
sections; section names only group keys and are flattened on load.
"""

import json
import logging
import os
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Any, Dict, Mapping, Optional, Sequence, Tuple, Type, TypeVar, Union

from .ensemble import EnsembleConfig, MaskScope, SubsetRule
from .errors import ConfigError
from .learner import EstimatorConfig, Mode, advisory_step_constant
from .records import RecordFormat
from .simlab import NoiseKind, NoiseLaw

logger = logging.getLogger(__name__)

CONFIG_ENV_VAR = "ONLINE_QUANTILE_CONFIG"
_SECTIONS = ("estimator", "ensemble", "input", "lab")

C = TypeVar("C")


@dataclass
class LearnerSettings:
    """Estimator and ensemble settings shared by every subcommand."""

    tau: Optional[float] = None
    R: Optional[float] = None
    A: Optional[float] = None
    s: Optional[float] = None
    p: Optional[int] = None
    mode: Optional[Mode] = None
    batch_size: int = 1
    seed: int = 0
    replicates: Optional[int] = None
    subset_fraction: float = 0.5
    mask_scope: MaskScope = MaskScope.TOTAL
    include_intercept: bool = False

    def __post_init__(self):
        for name in ("tau", "R", "s", "p"):
            if getattr(self, name) is None:
                raise ConfigError(f"missing required setting '{name}'")
        if not 0.0 < self.tau < 1.0:
            raise ConfigError(f"tau must lie in (0, 1), got {self.tau}")
        if not self.s > 0.5:
            raise ConfigError(f"s must exceed 1/2, got {self.s}")
        if not self.R > 0:
            raise ConfigError(f"R must be positive, got {self.R}")
        if self.A is not None and not self.A > 0:
            raise ConfigError(f"A must be positive, got {self.A}")
        if int(self.p) != self.p or self.p < 1:
            raise ConfigError(f"p must be a positive integer, got {self.p}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be positive, got {self.batch_size}")
        if self.replicates is not None and self.replicates < 1:
            raise ConfigError(f"replicates must be positive, got {self.replicates}")
        if not 0.0 < self.subset_fraction <= 1.0:
            raise ConfigError(f"subset_fraction must lie in (0, 1], got {self.subset_fraction}")
        try:
            self.mask_scope = MaskScope(self.mask_scope)
            if self.mode is None:
                self.mode = Mode.MINI_BATCH if self.batch_size > 1 else Mode.SINGLE_SAMPLE
            self.mode = Mode(self.mode)
        except ValueError as e:
            raise ConfigError(str(e)) from e
        if self.mode is Mode.SINGLE_SAMPLE and self.batch_size != 1:
            raise ConfigError("batch_size > 1 requires mode 'mini_batch'")
        self.p = int(self.p)

    def estimator_config(self) -> EstimatorConfig:
        """EstimatorConfig, with the advisory step constant when A is unset."""
        A = self.A
        if A is None:
            A = advisory_step_constant(self.tau)
            logger.warning(f"No step constant A given, using advisory 1/(tau(1-tau)) = {A:.6g}")
        return EstimatorConfig(tau=self.tau, R=self.R, A=A, s=self.s, p=self.p, mode=self.mode, seed=self.seed)

    def ensemble_config(self, base: EstimatorConfig) -> Optional[EnsembleConfig]:
        """EnsembleConfig when replicates is set, else None."""
        if self.replicates is None:
            return None
        return EnsembleConfig(
            base=base,
            replicates_B=self.replicates,
            subset_rule=SubsetRule(self.subset_fraction),
            seed=self.seed,
            mask_scope=self.mask_scope,
            always_include_intercept=self.include_intercept,
        )


@dataclass
class RunConfig(LearnerSettings):
    """Settings of ``fit`` and ``predict``."""

    input: Optional[Path] = None
    input_format: RecordFormat = RecordFormat.CSV
    strict: bool = True
    checkpoint: Optional[Path] = None
    checkpoint_every: int = 0
    resume: bool = False
    output: Optional[Path] = None

    def __post_init__(self):
        super().__post_init__()
        try:
            self.input_format = RecordFormat(self.input_format)
        except ValueError as e:
            raise ConfigError(str(e)) from e
        if self.input is not None and str(self.input) != "-":
            self.input = Path(self.input)
        elif self.input is not None:
            self.input = None
        self.checkpoint = Path(self.checkpoint) if self.checkpoint is not None else None
        self.output = Path(self.output) if self.output is not None else None
        if self.checkpoint_every < 0:
            raise ConfigError(f"checkpoint_every must be nonnegative, got {self.checkpoint_every}")
        if (self.checkpoint_every or self.resume) and self.checkpoint is None:
            raise ConfigError("checkpoint_every and resume need a checkpoint path")

    @property
    def reads_stdin(self) -> bool:
        return self.input is None


@dataclass
class LabConfig(LearnerSettings):
    """Settings of ``simulate``; defaults reproduce the reference rate experiment."""

    tau: Optional[float] = 0.5
    R: Optional[float] = 3.0
    s: Optional[float] = 2.0
    p: Optional[int] = 2
    Q: float = 1.0
    truth_R: Optional[float] = None
    noise: NoiseKind = NoiseKind.GAUSSIAN
    sigma: float = 0.5
    df: float = 3.0
    noise_low: float = 0.0
    noise_high: float = 1.0
    intercept: float = 0.0
    J_truth: int = 2000
    decay_offset: float = 0.6
    truth_seed: int = 0
    horizon: int = 1024
    seeds: Tuple[int, ...] = (0,)
    workers: int = 1
    window: Optional[Tuple[int, int]] = None
    timed: bool = True
    output_dir: Optional[Path] = None

    def __post_init__(self):
        super().__post_init__()
        if self.horizon < 0:
            raise ConfigError(f"horizon must be nonnegative, got {self.horizon}")
        if not self.Q > 0:
            raise ConfigError(f"Q must be positive, got {self.Q}")
        if self.truth_R is not None and self.truth_R > self.R:
            raise ConfigError(f"truth_R = {self.truth_R} exceeds the learner radius R = {self.R}")
        self.seeds = tuple(int(s) for s in self.seeds)
        if not self.seeds:
            raise ConfigError("at least one seed is required")
        if self.window is not None:
            if len(self.window) != 2 or self.window[0] >= self.window[1]:
                raise ConfigError(f"window must be an increasing pair, got {self.window}")
            self.window = (int(self.window[0]), int(self.window[1]))
        if self.output_dir is None:
            raise ConfigError("missing required setting 'output_dir'")
        self.output_dir = Path(self.output_dir)
        try:
            self.noise = NoiseKind(self.noise)
            self.noise_law()
        except ValueError as e:
            raise ConfigError(str(e)) from e

    def noise_law(self) -> NoiseLaw:
        return NoiseLaw(kind=self.noise, scale=self.sigma, df=self.df, low=self.noise_low, high=self.noise_high)


def load_config_file(path: Union[str, Path], sections: Sequence[str] = _SECTIONS) -> Dict[str, Any]:
    """Read a JSON config file into a flat mapping.

    Top-level keys are always read; of the sections only those named in sections are.

    Raises:
        ConfigError: If the file is missing, unparsable or has an unknown section
    """
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"Config file not found: {path}")
    try:
        with open(path, "r", encoding="utf-8") as f:
            data = json.load(f)
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path} is not valid JSON: {e}") from e
    if not isinstance(data, dict):
        raise ConfigError(f"{path} must hold a JSON object")

    flat: Dict[str, Any] = {}
    for key, value in data.items():
        if isinstance(value, dict):
            if key not in _SECTIONS:
                raise ConfigError(f"{path}: unknown section '{key}', expected one of {', '.join(_SECTIONS)}")
            if key in sections:
                flat.update(value)
        else:
            flat[key] = value
    logger.debug(f"Loaded {len(flat)} settings from {path}")
    return flat


def resolve_config_path(flag_value: Optional[Union[str, Path]]) -> Optional[Path]:
    """--config value, else the environment variable, else None."""
    value = flag_value or os.getenv(CONFIG_ENV_VAR)
    return Path(value) if value else None


def merge_settings(file_values: Mapping[str, Any], flag_values: Mapping[str, Any]) -> Dict[str, Any]:
    """File values overridden by every flag that was actually given (not None)."""
    merged = dict(file_values)
    merged.update({k: v for k, v in flag_values.items() if v is not None})
    return merged


def build_config(cls: Type[C], values: Mapping[str, Any]) -> C:
    """Instantiate a settings dataclass, rejecting keys it does not know.

    Raises:
        ConfigError: On unknown keys or invalid values
    """
    known = {f.name for f in fields(cls)}
    unknown = sorted(set(values) - known)
    if unknown:
        raise ConfigError(f"unknown setting(s): {', '.join(unknown)}")
    try:
        return cls(**values)
    except ConfigError:
        raise
    except (TypeError, ValueError) as e:
        raise ConfigError(str(e)) from e
