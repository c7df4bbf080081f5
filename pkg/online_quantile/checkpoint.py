"""
Checkpoint files for learners and ensembles.

Checkpoints are JSON documents. Every float is stored as a hex string
(``float.hex``) so a save/load round trip is bit-exact, and the estimator
configuration digest is stored next to the state so a checkpoint cannot be
resumed under a different τ, radius, schedule or basis.
"""

import json
import logging
from pathlib import Path
from typing import Optional, Union

import numpy as np

from .errors import CheckpointError, CheckpointMismatchError
from .learner import CoefficientState, EstimatorConfig, OnlineQuantileEstimator, PrequentialLoss

logger = logging.getLogger(__name__)

CHECKPOINT_FORMAT = "online-quantile-checkpoint"
CHECKPOINT_VERSION = 1

PathLike = Union[str, Path]


def _hex_list(values: np.ndarray) -> list:
    return [float(v).hex() for v in values]


def _from_hex_list(values: list) -> np.ndarray:
    return np.array([float.fromhex(v) for v in values], dtype=float)


def estimator_to_dict(estimator: OnlineQuantileEstimator) -> dict:
    """Serializable document for one learner."""
    state = estimator.state
    return {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "kind": "estimator",
        "config": estimator.config.to_dict(),
        "config_digest": estimator.config.digest(),
        "t": state.t,
        "N": state.N,
        "J": state.J,
        "p": state.p,
        "theta": _hex_list(state.theta),
        "prequential": {
            "total": float(estimator.prequential.total).hex(),
            "count": estimator.prequential.count,
        },
    }


def check_header(document: dict, kind: str, source: str) -> None:
    if document.get("format") != CHECKPOINT_FORMAT:
        raise CheckpointError(f"{source} is not an online-quantile checkpoint")
    if document.get("version") != CHECKPOINT_VERSION:
        raise CheckpointError(f"{source} has unsupported version {document.get('version')}")
    if document.get("kind") != kind:
        raise CheckpointError(f"{source} holds a {document.get('kind')!r} checkpoint, expected {kind!r}")


def check_config_digest(config: EstimatorConfig, digest: str, expected: Optional[EstimatorConfig], source: str) -> None:
    if config.digest() != digest:
        raise CheckpointError(f"{source}: stored config does not match its digest")
    if expected is not None and expected.digest() != digest:
        raise CheckpointMismatchError(
            f"{source} was written with config {digest[:12]}, current config is {expected.digest()[:12]}"
        )


def estimator_from_dict(document: dict, expected_config: Optional[EstimatorConfig] = None,
                        source: str = "checkpoint") -> OnlineQuantileEstimator:
    """Rebuild a learner from estimator_to_dict output.

    Raises:
        CheckpointError: If the document is malformed
        CheckpointMismatchError: If expected_config differs from the stored config
    """
    check_header(document, "estimator", source)
    try:
        config = EstimatorConfig.from_dict(document["config"])
        check_config_digest(config, document["config_digest"], expected_config, source)
        state = CoefficientState(
            theta=_from_hex_list(document["theta"]),
            J=int(document["J"]),
            t=int(document["t"]),
            N=int(document["N"]),
            p=int(document["p"]),
        )
        prequential = PrequentialLoss(
            total=float.fromhex(document["prequential"]["total"]),
            count=int(document["prequential"]["count"]),
        )
    except CheckpointError:
        raise
    except (KeyError, TypeError, ValueError) as e:
        raise CheckpointError(f"{source} is malformed: {e}") from e
    return OnlineQuantileEstimator(config=config, state=state, prequential=prequential)


def write_json(document: dict, path: Path) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "w", encoding="utf-8") as f:
        json.dump(document, f, indent=2)
    tmp.replace(path)
    return path


def read_document(path: PathLike) -> dict:
    """Load a checkpoint or manifest JSON document."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"Checkpoint not found: {path}")
    try:
        with open(path, "r", encoding="utf-8") as f:
            document = json.load(f)
    except json.JSONDecodeError as e:
        raise CheckpointError(f"{path} is not valid JSON: {e}") from e
    if not isinstance(document, dict):
        raise CheckpointError(f"{path} is not a JSON object")
    return document


def save_checkpoint(estimator: OnlineQuantileEstimator, path: PathLike) -> Path:
    """Write the learner to path (atomically replaced)."""
    path = write_json(estimator_to_dict(estimator), Path(path))
    logger.info(f"Checkpoint saved to: {path} (t={estimator.state.t}, J={estimator.state.J})")
    return path


def load_checkpoint(path: PathLike, expected_config: Optional[EstimatorConfig] = None) -> OnlineQuantileEstimator:
    """Load a learner saved by save_checkpoint."""
    path = Path(path)
    estimator = estimator_from_dict(read_document(path), expected_config, source=str(path))
    logger.info(f"Checkpoint loaded from: {path} (t={estimator.state.t}, J={estimator.state.J})")
    return estimator


def inspect_checkpoint(path: PathLike) -> dict:
    """Checkpoint metadata without the coefficient vectors."""
    document = read_document(path)
    if document.get("format") != CHECKPOINT_FORMAT:
        raise CheckpointError(f"{path} is not an online-quantile checkpoint")
    kind = document.get("kind")
    if kind == "estimator":
        estimator = estimator_from_dict(document, source=str(path))
        return {
            "kind": kind,
            "config": document["config"],
            "config_digest": document["config_digest"],
            **estimator.summary(),
        }
    if kind == "ensemble":
        return {
            "kind": kind,
            "config": document["config"],
            "config_digest": document["config_digest"],
            "replicates": len(document["replicates"]),
            "replicate_files": [r["file"] for r in document["replicates"]],
        }
    raise CheckpointError(f"{path} has unknown checkpoint kind {kind!r}")
