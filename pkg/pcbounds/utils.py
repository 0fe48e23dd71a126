import hashlib
import json
import logging
import math
from pathlib import Path
from typing import Any, Mapping

import numpy as np
import pandas as pd

from pcbounds.errors import ArtifactIOError, InvalidProbability, InvalidSpec, ValidationError

logger = logging.getLogger(__name__)

TOLERANCE = 1e-12
ARTIFACT_VERSION = "1"
MAX_SEED = 2**64 - 1
DATA_DIR = Path(__file__).parent / "data"


def check_probability(value: float, name: str) -> float:
    """
    Validate a probability, snapping values within TOLERANCE of [0, 1] onto it.

    Parameters
    ----------
    value : float
        Candidate probability.
    name : str
        Field name used in the diagnostic.

    Returns
    -------
    float
        The validated probability.
    """
    try:
        value = float(value)
    except (TypeError, ValueError):
        raise InvalidProbability(
            f"{name} must be a number, got {value!r}", field=name
        ) from None
    if math.isnan(value) or value < -TOLERANCE or value > 1.0 + TOLERANCE:
        raise InvalidProbability(
            f"{name} must lie in [0, 1], got {value!r}", field=name
        )
    return min(max(value, 0.0), 1.0)


def check_seed(seed: int) -> int:
    if isinstance(seed, bool) or not isinstance(seed, (int, np.integer)):
        raise ValidationError(f"seed must be an integer, got {seed!r}", field="seed")
    if not 0 <= int(seed) <= MAX_SEED:
        raise ValidationError(
            f"seed must be a 64-bit unsigned integer, got {seed}", field="seed"
        )
    return int(seed)


def fresh_seed() -> int:
    """Draw a 64-bit seed from OS entropy; callers must record it."""
    seed = int(np.random.SeedSequence().generate_state(1, dtype=np.uint64)[0])
    logger.warning(f"no seed supplied, generated seed {seed}")
    return seed


def substream(seed: int, *key: int) -> np.random.Generator:
    """
    Independent PCG64 generator for a (seed, key...) pair.

    Streams with different keys never overlap and do not depend on how many
    other streams were created, so work can be split into blocks and merged in
    block order without changing the result.
    """
    sequence = np.random.SeedSequence(entropy=seed, spawn_key=tuple(key))
    return np.random.Generator(np.random.PCG64(sequence))


def n_blocks(total: int, block_size: int) -> int:
    return max(1, -(-total // block_size))


def to_jsonable(value: Any) -> Any:
    """Convert numpy scalars/arrays and non-finite floats for json output."""
    if isinstance(value, Mapping):
        return {str(k): to_jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [to_jsonable(v) for v in value]
    if isinstance(value, np.ndarray):
        return [to_jsonable(v) for v in value.tolist()]
    if isinstance(value, (bool, np.bool_)):
        return bool(value)
    if isinstance(value, (int, np.integer)):
        return int(value)
    if isinstance(value, (float, np.floating)):
        value = float(value)
        if math.isinf(value):
            return "inf" if value > 0 else "-inf"
        if math.isnan(value):
            return None
        return value
    return value


def dumps(payload: Mapping) -> str:
    # float repr is the shortest string that round-trips the double exactly
    return json.dumps(to_jsonable(payload), indent=2, sort_keys=True) + "\n"


def content_hash(payload: Mapping) -> str:
    """Stable short hash of a json-serializable mapping."""
    canonical = json.dumps(
        to_jsonable(payload), sort_keys=True, separators=(",", ":")
    )
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()[:16]


def artifact_header(seed: int = None, spec_hash: str = None, **extra) -> dict:
    header = {"artifact_version": ARTIFACT_VERSION}
    if seed is not None:
        header["seed"] = seed
    if spec_hash is not None:
        header["spec_hash"] = spec_hash
    header.update(extra)
    return header


def write_json(path: Path, payload: Mapping) -> Path:
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(dumps(payload), encoding="utf-8")
    except OSError as e:
        raise ArtifactIOError(f"could not write {path}: {e}") from e
    logger.info(f"wrote {path}")
    return path


def read_json(path: Path) -> Any:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as e:
        raise ArtifactIOError(f"could not read {path}: {e}") from e
    except UnicodeDecodeError as e:
        raise InvalidSpec(f"{path}: not UTF-8 text: {e.reason}") from None
    try:
        return json.loads(text)
    except json.JSONDecodeError as e:
        raise InvalidSpec(f"{path}: line {e.lineno}, column {e.colno}: {e.msg}") from None


def csv_text(frame: pd.DataFrame, header: Mapping = None) -> str:
    """
    Render a data frame as CSV preceded by ``# key=value`` metadata lines.

    Floats are written with 17 significant digits so values read back equal
    the values written; missing values are written as ``NA``.
    """
    lines = [f"# {k}={v}\n" for k, v in sorted((header or {}).items())]
    body = frame.to_csv(
        index=False, float_format="%.17g", na_rep="NA", lineterminator="\n"
    )
    return "".join(lines) + body


def write_csv(path: Path, frame: pd.DataFrame, header: Mapping = None) -> Path:
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(csv_text(frame, header), encoding="utf-8")
    except OSError as e:
        raise ArtifactIOError(f"could not write {path}: {e}") from e
    logger.info(f"wrote {path}")
    return path


def read_csv(path: Path) -> tuple[pd.DataFrame, dict]:
    """Inverse of write_csv: returns the frame and the metadata header."""
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as e:
        raise ArtifactIOError(f"could not read {path}: {e}") from e
    except UnicodeDecodeError as e:
        raise ValidationError(f"{path}: not UTF-8 text: {e.reason}") from None

    header = {}
    for line in text.splitlines():
        if not line.startswith("#"):
            break
        key, _, value = line[1:].strip().partition("=")
        header[key] = value

    try:
        frame = pd.read_csv(path, comment="#", float_precision="round_trip")
    except (pd.errors.ParserError, pd.errors.EmptyDataError) as e:
        raise ValidationError(f"{path}: malformed CSV: {e}") from None
    return frame, header
