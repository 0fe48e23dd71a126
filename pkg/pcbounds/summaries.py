import logging
from dataclasses import asdict, dataclass
from os import PathLike
from pathlib import Path
from typing import Dict, List, Optional, Tuple, Union

import numpy as np
import pandas as pd

from pcbounds.bayes_engine import DrawSet, prob_lower_zero
from pcbounds.errors import (
    EmptyGrid,
    EmptyInput,
    InvalidProbability,
    OutOfRange,
    TooFewDraws,
    ValidationError,
)
from pcbounds.pc_core import ExposureChances, UncertaintyInterval, pc_star_bounds
from pcbounds.utils import write_csv, write_json

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class MixtureSummary:
    """
    Summary of a random interval whose lower bound mixes a point mass at zero
    with a continuous part.

    Statistics conditional on ``lower > 0`` are None when no draw has a
    positive lower bound (standard deviations need at least two such draws).
    """

    n: int
    prob_lower_zero: float
    upper_mean: float
    upper_sd: float
    lower_mean_given_pos: Optional[float]
    lower_sd_given_pos: Optional[float]
    length_mean: float
    length_sd: float
    length_mean_given_pos: Optional[float]
    length_sd_given_pos: Optional[float]

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class CoverageCurve:
    grid: np.ndarray
    values: np.ndarray

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({"p": self.grid, "coverage": self.values})


@dataclass(frozen=True)
class HistogramSpec:
    bins: int

    def __post_init__(self):
        if isinstance(self.bins, bool) or not isinstance(self.bins, (int, np.integer)) or self.bins < 1:
            raise ValidationError(f"bins must be a positive integer, got {self.bins!r}", field="bins")

    @property
    def range(self) -> Tuple[float, float]:
        return 0.0, 1.0

    @property
    def edges(self) -> np.ndarray:
        return np.linspace(0.0, 1.0, self.bins + 1)


def _mean_sd(values: np.ndarray) -> Tuple[Optional[float], Optional[float]]:
    if values.size == 0:
        return None, None
    mean = float(values.mean())
    sd = float(values.std(ddof=1)) if values.size > 1 else None
    return mean, sd


def summarize(d: DrawSet) -> MixtureSummary:
    """Sample statistics of the upper bound, the positive lower bound and the length."""
    if d.n < 2:
        raise TooFewDraws(f"summaries need at least 2 draws, got {d.n}", field="n")

    lengths = d.lengths
    positive = d.lowers > 0
    upper_mean, upper_sd = _mean_sd(d.uppers)
    lower_mean_pos, lower_sd_pos = _mean_sd(d.lowers[positive])
    length_mean, length_sd = _mean_sd(lengths)
    length_mean_pos, length_sd_pos = _mean_sd(lengths[positive])

    return MixtureSummary(
        n=d.n,
        prob_lower_zero=prob_lower_zero(d),
        upper_mean=upper_mean,
        upper_sd=upper_sd,
        lower_mean_given_pos=lower_mean_pos,
        lower_sd_given_pos=lower_sd_pos,
        length_mean=length_mean,
        length_sd=length_sd,
        length_mean_given_pos=length_mean_pos,
        length_sd_given_pos=length_sd_pos,
    )


def _check_grid(grid) -> np.ndarray:
    grid = np.asarray(grid, dtype=float).ravel()
    if grid.size == 0:
        raise EmptyGrid("coverage grid is empty", field="grid")
    if np.any(np.isnan(grid)) or grid[0] < 0 or grid[-1] > 1:
        raise InvalidProbability("coverage grid must lie in [0, 1]", field="grid")
    if np.any(np.diff(grid) <= 0):
        raise ValidationError("coverage grid must be strictly ascending", field="grid")
    return grid


def coverage(d: DrawSet, grid) -> CoverageCurve:
    """
    Posterior credence that each grid value lies inside the random interval.

    Since lower <= upper, ``#{lower <= p <= upper} = #{lower <= p} - #{upper < p}``,
    which two sorted searches give for the whole grid at once.
    """
    grid = _check_grid(grid)
    below = np.searchsorted(np.sort(d.lowers), grid, side="right")
    passed = np.searchsorted(np.sort(d.uppers), grid, side="left")
    counts = below - passed
    values = np.array([int(c) / d.n for c in counts])
    logger.debug(f"coverage on {grid.size} grid points from {d.n} draws")
    return CoverageCurve(grid=grid, values=values)


def density(samples, spec: HistogramSpec) -> np.ndarray:
    """
    Histogram masses on ``spec.bins`` equal bins over [0, 1].

    Bins are half-open on the right except the last, which includes 1.
    """
    samples = np.asarray(samples, dtype=float).ravel()
    if samples.size == 0:
        raise EmptyInput("density needs at least one sample", field="samples")
    if np.any(np.isnan(samples)) or samples.min() < 0 or samples.max() > 1:
        raise InvalidProbability("density samples must lie in [0, 1]", field="samples")
    counts, _ = np.histogram(samples, bins=spec.edges)
    return counts / counts.sum()


def histogram_frame(samples, spec: HistogramSpec) -> pd.DataFrame:
    edges = spec.edges
    return pd.DataFrame(
        {"bin_left": edges[:-1], "bin_right": edges[1:], "mass": density(samples, spec)}
    )


def bivariate_density(d: DrawSet, bins: int = 20) -> pd.DataFrame:
    """
    Joint histogram of (lower, upper) over the draws with lower > 0.

    This is the continuous part of the mixture; the point mass at lower = 0 is
    reported by ``prob_lower_zero`` and ``conditional_upper_given_lower_zero``.
    Masses are normalised within the continuous part.
    """
    spec = HistogramSpec(bins)
    positive = d.lowers > 0
    if not np.any(positive):
        raise EmptyInput("no draw has a positive lower bound", field="lowers")
    counts, lower_edges, upper_edges = np.histogram2d(
        d.lowers[positive], d.uppers[positive], bins=[spec.edges, spec.edges]
    )
    masses = counts / counts.sum()
    rows = [
        (lower_edges[i], lower_edges[i + 1], upper_edges[j], upper_edges[j + 1], masses[i, j])
        for i in range(bins)
        for j in range(bins)
        if masses[i, j] > 0
    ]
    return pd.DataFrame(
        rows, columns=["lower_left", "lower_right", "upper_left", "upper_right", "mass"]
    )


def conditional_upper_given_lower_zero(d: DrawSet) -> np.ndarray:
    """Upper-bound draws on the event lower = 0, where length equals upper."""
    return d.uppers[d.lowers == 0.0]


def ordered_subsample(d: DrawSet, k: int, stride: int) -> np.ndarray:
    """
    Thin the draws to ``k`` intervals and order them for display.

    Takes draws ``stride, 2 stride, ..., k stride`` (1-based) and sorts them by
    lower bound, then upper bound, then draw index.

    Returns
    -------
    np.ndarray
        Shape ``(k, 2)`` array of (lower, upper).
    """
    if k < 1 or stride < 1:
        raise OutOfRange(f"k and stride must be positive, got k={k}, stride={stride}")
    if k * stride > d.n:
        raise OutOfRange(
            f"k * stride = {k * stride} exceeds the {d.n} available draws", field="stride"
        )
    index = np.arange(1, k + 1) * stride - 1
    lowers, uppers = d.lowers[index], d.uppers[index]
    order = np.lexsort((index, uppers, lowers))
    return np.column_stack([lowers[order], uppers[order]])


def subsample_frame(intervals: np.ndarray) -> pd.DataFrame:
    return pd.DataFrame(
        {
            "rank": np.arange(1, len(intervals) + 1),
            "lower": intervals[:, 0],
            "upper": intervals[:, 1],
        }
    )


def individual_focused_interval(phi_bar: float, theta_bar: float) -> UncertaintyInterval:
    """
    Single interval for one individual from posterior expectations.

    Plugging E[phi] and E[theta] into the PC* bounds answers a question about
    the individual rather than about the group's chances; it differs in general
    from averaging the random interval.
    """
    return pc_star_bounds(ExposureChances(phi=phi_bar, theta=theta_bar))


def expected_chances(d: DrawSet) -> Tuple[float, float]:
    """
    Sample ``(E[phi], E[theta])`` from a draw set's chances.

    In either mode the upper bound is phi draw by draw.
    """
    if "theta" not in d.chances:
        raise ValidationError("draw set carries no theta draws", field="chances")
    return float(d.uppers.mean()), float(np.mean(d.chances["theta"]))


def write_summary(path: Union[str, PathLike], summary: MixtureSummary, header: dict, **extra):
    payload = dict(header)
    payload["summary"] = summary.to_dict()
    payload.update(extra)
    return write_json(path, payload)


def write_coverage(path: Union[str, PathLike], curve: CoverageCurve, header: dict):
    return write_csv(path, curve.to_frame(), header=header)


def density_frames(d: DrawSet, bins: int = 20) -> Dict[str, pd.DataFrame]:
    """
    Histogram frames of the bound distribution, keyed by artifact name.

    Conditional histograms whose event has no draws are left out.
    """
    spec = HistogramSpec(bins)
    positive = d.lowers > 0
    samples = {
        "hist_upper": d.uppers,
        "hist_lower_pos": d.lowers[positive],
        "hist_length": d.lengths,
        "hist_length_pos": d.lengths[positive],
        "hist_upper_given_lower_zero": conditional_upper_given_lower_zero(d),
    }
    frames = {}
    for name, values in samples.items():
        if values.size == 0:
            logger.info(f"skipping {name}: no draws on its event")
            continue
        frames[name] = histogram_frame(values, spec)
    if np.any(positive):
        frames["bivariate"] = bivariate_density(d, bins)
    return frames


def write_densities(
    directory: Union[str, PathLike], d: DrawSet, header: dict, bins: int = 20
) -> List[Path]:
    directory = Path(directory)
    return [
        write_csv(directory / f"{name}.csv", frame, header=header)
        for name, frame in density_frames(d, bins).items()
    ]
