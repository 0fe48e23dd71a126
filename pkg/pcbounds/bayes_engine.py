"""
Beta credence distributions on the chances entering the bounds, and the random
uncertainty interval obtained by pushing Monte-Carlo draws through them.

Two model modes are supported:

``generative``
    theta, p1 and p0 carry independent priors; phi = P(E = 1 | R = 1) is
    derived per draw by Bayes' theorem. Whether the lower bound is zero then
    depends only on the (p1, p0) draws.
``direct``
    phi and theta carry independent priors. The upper bound equals phi, so its
    distribution does not depend on the prior for theta.
"""

import json
import logging
import zipfile
from dataclasses import dataclass, field
from enum import Enum
from os import PathLike
from pathlib import Path
from typing import Dict, Optional, Tuple, Union

import numpy as np
import pandas as pd
from joblib import Parallel, delayed
from scipy import stats

from pcbounds.errors import ArtifactIOError, InvalidSpec, ValidationError
from pcbounds.pc_core import pc_star_bounds_direct, pc_star_bounds_generative
from pcbounds.utils import (
    artifact_header,
    check_seed,
    content_hash,
    fresh_seed,
    n_blocks,
    read_csv,
    substream,
    write_csv,
)

logger = logging.getLogger(__name__)

DEFAULT_DRAWS = 50000
BLOCK_SIZE = 65536

# substream key per chance; fixed so that changing one prior never moves the
# random numbers used for another chance
CHANCE_KEYS = {"theta": 0, "p1": 1, "p0": 2, "phi": 3}


class Mode(str, Enum):
    GENERATIVE = "generative"
    DIRECT = "direct"

    @property
    def chances(self) -> Tuple[str, ...]:
        if self is Mode.GENERATIVE:
            return ("theta", "p1", "p0")
        return ("theta", "phi")


@dataclass(frozen=True)
class BetaParams:
    alpha: float
    beta: float

    def __post_init__(self):
        for name in ("alpha", "beta"):
            value = getattr(self, name)
            try:
                value = float(value)
            except (TypeError, ValueError):
                raise InvalidSpec(f"{name} must be a number, got {value!r}", field=name) from None
            if not np.isfinite(value) or value <= 0:
                raise InvalidSpec(f"{name} must be positive and finite, got {value!r}", field=name)
            object.__setattr__(self, name, value)

    @classmethod
    def from_dict(cls, entry: dict, where: str = "prior") -> "BetaParams":
        if not isinstance(entry, dict) or not {"alpha", "beta"} <= entry.keys():
            raise InvalidSpec(f"{where} must be an object with 'alpha' and 'beta'", field=where)
        return cls(entry["alpha"], entry["beta"])

    def to_dict(self) -> dict:
        return {"alpha": self.alpha, "beta": self.beta}


@dataclass(frozen=True)
class BinomialData:
    """Conjugate evidence: ``successes`` responders out of ``trials``."""

    successes: int
    trials: int

    def __post_init__(self):
        for name in ("successes", "trials"):
            value = getattr(self, name)
            if isinstance(value, bool) or not isinstance(value, (int, np.integer)) or value < 0:
                raise InvalidSpec(f"{name} must be a nonnegative integer, got {value!r}", field=name)
        if self.successes > self.trials:
            raise InvalidSpec(
                f"successes {self.successes} exceed trials {self.trials}", field="successes"
            )

    @classmethod
    def from_dict(cls, entry: dict, where: str = "data") -> "BinomialData":
        if not isinstance(entry, dict) or not {"successes", "trials"} <= entry.keys():
            raise InvalidSpec(f"{where} must be an object with 'successes' and 'trials'", field=where)
        return cls(entry["successes"], entry["trials"])

    def to_dict(self) -> dict:
        return {"successes": self.successes, "trials": self.trials}


def beta_moments(b: BetaParams) -> Tuple[float, float]:
    """Mean and standard deviation of ``Beta(alpha, beta)``."""
    dist = stats.beta(b.alpha, b.beta)
    return float(dist.mean()), float(dist.std())


def posterior_update(prior: BetaParams, data: BinomialData) -> BetaParams:
    return BetaParams(
        prior.alpha + data.successes, prior.beta + data.trials - data.successes
    )


@dataclass(frozen=True)
class ModelSpec:
    """
    Priors (and optional binomial evidence) for every chance of one mode.

    ``priors`` maps chance name to its Beta prior; ``data`` maps chance name to
    its BinomialData. theta has no data channel: it is treated as independent
    of everything else and no study informs it.
    """

    mode: Mode
    priors: Dict[str, BetaParams]
    data: Dict[str, BinomialData] = field(default_factory=dict)

    def __post_init__(self):
        try:
            mode = Mode(self.mode)
        except ValueError:
            raise InvalidSpec(
                f"mode must be 'generative' or 'direct', got {self.mode!r}", field="mode"
            ) from None
        object.__setattr__(self, "mode", mode)

        expected = set(mode.chances)
        given = set(self.priors)
        if given != expected:
            raise InvalidSpec(
                f"{mode.value} mode needs priors for {sorted(expected)}, got {sorted(given)}",
                field="priors",
            )
        unknown = set(self.data) - (expected - {"theta"})
        if unknown:
            raise InvalidSpec(
                f"{mode.value} mode accepts data only for "
                f"{sorted(expected - {'theta'})}, got {sorted(unknown)}",
                field="data",
            )

    @classmethod
    def generative(cls, theta: BetaParams, p1: BetaParams, p0: BetaParams, data=None):
        return cls(Mode.GENERATIVE, {"theta": theta, "p1": p1, "p0": p0}, dict(data or {}))

    @classmethod
    def direct(cls, theta: BetaParams, phi: BetaParams, data=None):
        return cls(Mode.DIRECT, {"theta": theta, "phi": phi}, dict(data or {}))

    @classmethod
    def from_dict(cls, document: dict) -> "ModelSpec":
        """
        Parse the ModelSpec JSON schema.

        Priors are given as ``"<chance>_prior": {"alpha": a, "beta": b}`` and
        evidence as ``"data": {"<chance>": {"successes": s, "trials": t}}``.
        Sampling keys (n, seed, burn_in, thin) are ignored here; see
        SamplingSettings.
        """
        if not isinstance(document, dict):
            raise InvalidSpec("model spec must be a JSON object")
        if "mode" not in document:
            raise InvalidSpec("model spec is missing 'mode'", field="mode")
        try:
            mode = Mode(document["mode"])
        except ValueError:
            raise InvalidSpec(
                f"mode must be 'generative' or 'direct', got {document['mode']!r}",
                field="mode",
            ) from None

        stray = [
            key for key in document
            if key.endswith("_prior") and key[: -len("_prior")] not in mode.chances
        ]
        if stray:
            raise InvalidSpec(
                f"{mode.value} mode does not take {sorted(stray)}", field=stray[0]
            )

        priors = {}
        for chance in mode.chances:
            key = f"{chance}_prior"
            if key not in document:
                raise InvalidSpec(f"{mode.value} mode needs '{key}'", field=key)
            priors[chance] = BetaParams.from_dict(document[key], where=key)

        data = {
            chance: BinomialData.from_dict(entry, where=f"data.{chance}")
            for chance, entry in (document.get("data") or {}).items()
        }
        return cls(mode, priors, data)

    def to_dict(self) -> dict:
        out = {"mode": self.mode.value}
        for chance in self.mode.chances:
            out[f"{chance}_prior"] = self.priors[chance].to_dict()
        if self.data:
            out["data"] = {k: v.to_dict() for k, v in sorted(self.data.items())}
        return out

    @property
    def spec_hash(self) -> str:
        return content_hash(self.to_dict())

    def posterior(self, chance: str) -> BetaParams:
        prior = self.priors[chance]
        if chance in self.data:
            return posterior_update(prior, self.data[chance])
        return prior


@dataclass(frozen=True)
class SamplingSettings:
    n: int = DEFAULT_DRAWS
    seed: Optional[int] = None
    burn_in: int = 0
    thin: int = 1
    workers: int = 1

    def __post_init__(self):
        checks = {"n": 1, "burn_in": 0, "thin": 1, "workers": 1}
        for name, minimum in checks.items():
            value = getattr(self, name)
            if isinstance(value, bool) or not isinstance(value, (int, np.integer)) or value < minimum:
                raise InvalidSpec(f"{name} must be an integer >= {minimum}, got {value!r}", field=name)
        if self.seed is not None:
            try:
                check_seed(self.seed)
            except ValidationError as e:
                raise InvalidSpec(str(e), field="seed") from None

    @classmethod
    def from_dict(cls, document: dict, **overrides) -> "SamplingSettings":
        values = {
            key: document[key]
            for key in ("n", "seed", "burn_in", "thin", "workers")
            if key in document
        }
        values.update({k: v for k, v in overrides.items() if v is not None})
        return cls(**values)


def load_model_spec(path: Union[str, PathLike]) -> Tuple[ModelSpec, dict]:
    """Read a ModelSpec JSON file; returns the spec and the raw document."""
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as e:
        raise ArtifactIOError(f"could not read {path}: {e}") from e
    except UnicodeDecodeError as e:
        raise InvalidSpec(f"{path}: not UTF-8 text: {e.reason}") from None
    try:
        document = json.loads(text)
    except json.JSONDecodeError as e:
        raise InvalidSpec(f"{path}: line {e.lineno}, column {e.colno}: {e.msg}") from None
    return ModelSpec.from_dict(document), document


@dataclass(frozen=True, eq=False)
class DrawSet:
    """
    Seeded Monte-Carlo draws of the uncertainty interval.

    ``chances`` holds the per-draw chance values the interval was computed
    from (theta, p1, p0 or theta, phi), aligned with ``lowers``/``uppers``.
    """

    seed: int
    n: int
    lowers: np.ndarray
    uppers: np.ndarray
    mode: Mode
    spec_hash: str = ""
    chances: Dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        lowers = np.asarray(self.lowers, dtype=float)
        uppers = np.asarray(self.uppers, dtype=float)
        if lowers.shape != (self.n,) or uppers.shape != (self.n,):
            raise ValidationError(
                f"expected {self.n} lowers and uppers, got {lowers.shape} and {uppers.shape}"
            )
        if self.n < 1:
            raise ValidationError(f"a draw set needs n >= 1, got {self.n}", field="n")
        if not (np.all(lowers >= 0) and np.all(lowers <= uppers) and np.all(uppers <= 1)):
            raise ValidationError("every draw must satisfy 0 <= lower <= upper <= 1")
        object.__setattr__(self, "lowers", lowers)
        object.__setattr__(self, "uppers", uppers)
        try:
            mode = Mode(self.mode)
        except ValueError:
            raise ValidationError(
                f"mode must be 'generative' or 'direct', got {self.mode!r}", field="mode"
            ) from None
        object.__setattr__(self, "mode", mode)

    @property
    def lengths(self) -> np.ndarray:
        return self.uppers - self.lowers

    def header(self) -> dict:
        return artifact_header(
            seed=self.seed, spec_hash=self.spec_hash, n=self.n, mode=self.mode.value
        )

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({"lower": self.lowers, "upper": self.uppers})

    def to_csv(self, path: Union[str, PathLike]) -> Path:
        return write_csv(path, self.to_frame(), header=self.header())

    def to_npz(self, path: Union[str, PathLike]) -> Path:
        path = Path(path)
        arrays = {f"chance_{k}": v for k, v in self.chances.items()}
        try:
            path.parent.mkdir(parents=True, exist_ok=True)
            with open(path, "wb") as f:
                np.savez(
                    f,
                    lowers=self.lowers,
                    uppers=self.uppers,
                    meta=np.array(json.dumps(self.header(), sort_keys=True)),
                    **arrays,
                )
        except OSError as e:
            raise ArtifactIOError(f"could not write {path}: {e}") from e
        logger.info(f"wrote {path}")
        return path

    @classmethod
    def from_csv(cls, path: Union[str, PathLike]) -> "DrawSet":
        frame, header = read_csv(path)
        try:
            return cls(
                seed=int(header["seed"]),
                n=int(header["n"]),
                lowers=frame["lower"].to_numpy(dtype=float),
                uppers=frame["upper"].to_numpy(dtype=float),
                mode=header["mode"],
                spec_hash=header.get("spec_hash", ""),
            )
        except KeyError as e:
            raise ValidationError(f"{path}: draw set CSV is missing {e}") from None
        except ValidationError:
            raise
        except (TypeError, ValueError) as e:
            raise ValidationError(f"{path}: malformed draw set CSV: {e}") from None

    @classmethod
    def from_npz(cls, path: Union[str, PathLike]) -> "DrawSet":
        try:
            with np.load(path, allow_pickle=False) as archive:
                meta = json.loads(str(archive["meta"]))
                chances = {
                    key[len("chance_"):]: archive[key]
                    for key in archive.files
                    if key.startswith("chance_")
                }
                return cls(
                    seed=int(meta["seed"]),
                    n=int(meta["n"]),
                    lowers=archive["lowers"],
                    uppers=archive["uppers"],
                    mode=meta["mode"],
                    spec_hash=meta.get("spec_hash", ""),
                    chances=chances,
                )
        except OSError as e:
            raise ArtifactIOError(f"could not read {path}: {e}") from e
        except KeyError as e:
            raise ValidationError(f"{path}: draw set archive is missing {e}") from None
        except ValidationError:
            raise
        except (ValueError, zipfile.BadZipFile) as e:
            raise ValidationError(f"{path}: not a readable draw set archive: {e}") from None


def _draw_chance(
    posterior: BetaParams, seed: int, chance: str, total: int, workers: int
) -> np.ndarray:
    """
    ``total`` Beta draws for one chance, generated in fixed-size blocks.

    Each block has its own substream keyed by (chance, block index), so the
    result is the same for any number of workers.
    """
    key = CHANCE_KEYS[chance]
    blocks = n_blocks(total, BLOCK_SIZE)

    def draw_block(b: int) -> np.ndarray:
        size = min(BLOCK_SIZE, total - b * BLOCK_SIZE)
        return substream(seed, key, b).beta(posterior.alpha, posterior.beta, size)

    parts = Parallel(n_jobs=workers, prefer="threads")(
        delayed(draw_block)(b) for b in range(blocks)
    )
    return np.concatenate(parts)


def sample_draws(
    spec: ModelSpec,
    n: int = DEFAULT_DRAWS,
    seed: Optional[int] = None,
    burn_in: int = 0,
    thin: int = 1,
    workers: int = 1,
) -> DrawSet:
    """
    Draw ``n`` random uncertainty intervals.

    Every chance is drawn independently from its posterior Beta. The stream of
    raw draws has length ``burn_in + n * thin``; the first ``burn_in`` are
    discarded and every ``thin``-th of the rest is kept. Independent sampling
    does not need either, but keeping them lets runs follow a chain protocol.

    Parameters
    ----------
    spec : ModelSpec
    n : int
        Number of kept draws.
    seed : int, optional
        64-bit seed; one is generated (and logged) when omitted.
    burn_in : int
    thin : int
    workers : int
        Threads used for block generation; does not affect the result.
    """
    settings = SamplingSettings(n=n, seed=seed, burn_in=burn_in, thin=thin, workers=workers)
    seed = settings.seed if settings.seed is not None else fresh_seed()
    total = burn_in + n * thin

    chances = {}
    for chance in spec.mode.chances:
        raw = _draw_chance(spec.posterior(chance), seed, chance, total, workers)
        chances[chance] = raw[burn_in::thin][:n]

    if spec.mode is Mode.GENERATIVE:
        lowers, uppers = pc_star_bounds_generative(
            chances["theta"], chances["p1"], chances["p0"]
        )
    else:
        lowers, uppers = pc_star_bounds_direct(chances["phi"], chances["theta"])

    logger.info(
        f"drew {n} {spec.mode.value} intervals (seed={seed}, burn_in={burn_in}, thin={thin})"
    )
    return DrawSet(
        seed=seed,
        n=n,
        lowers=lowers,
        uppers=uppers,
        mode=spec.mode,
        spec_hash=spec.spec_hash,
        chances=chances,
    )


def prob_lower_zero(d: DrawSet) -> float:
    """Fraction of draws whose lower bound is exactly zero."""
    return np.count_nonzero(d.lowers == 0.0) / d.n


def posterior_expectations(spec: ModelSpec) -> Tuple[float, float]:
    """
    Closed-form posterior means ``(E[phi], E[theta])`` for a direct-mode spec.

    In generative mode phi is a nonlinear function of three chances; use the
    sample means of a DrawSet instead.
    """
    if spec.mode is not Mode.DIRECT:
        raise InvalidSpec(
            "closed-form E[phi] exists only in direct mode", field="mode"
        )
    phi_bar, _ = beta_moments(spec.posterior("phi"))
    theta_bar, _ = beta_moments(spec.posterior("theta"))
    return phi_bar, theta_bar
