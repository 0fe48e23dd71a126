"""
Finite-population potential-outcomes simulator.

Individuals carry both potential responses ``(R0, R1)`` drawn from a known
joint law, so the true attribution fraction among exposed responders is
observable here even though no real study could see it. The simulator checks
that the bounds computed from arm-wise response rates contain it, and shows how
they fail when exposure depends on the potential responses.
"""

import itertools
import logging
import math
from abc import ABC, abstractmethod
from dataclasses import dataclass
from typing import Iterable, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from joblib import Parallel, delayed

from pcbounds.errors import EmptyArm, InvalidSpec, NoExposedResponders, ValidationError
from pcbounds.pc_core import (
    MarginalChances,
    PotentialJoint,
    UncertaintyInterval,
    pc_bounds,
)
from pcbounds.utils import check_probability, check_seed, n_blocks, substream

logger = logging.getLogger(__name__)

POPULATION_BLOCK = 1 << 20
CELL_LABELS = ("00", "01", "10", "11")


class ExposureMechanism(ABC):
    @abstractmethod
    def exposure_chances(self) -> np.ndarray:
        """
        Chance of exposure for each potential-response cell.

        Returns
        -------
        np.ndarray
            Length-4 array in (R0, R1) = 00, 01, 10, 11 order.
        """
        pass

    @abstractmethod
    def to_dict(self) -> dict:
        pass


class Exogenous(ExposureMechanism):
    """Exposure independent of the potential responses."""

    def __init__(self, theta: float):
        self.theta = check_probability(theta, "theta")

    def exposure_chances(self) -> np.ndarray:
        return np.full(4, self.theta)

    def to_dict(self) -> dict:
        return {"exogenous": self.theta}


class Confounded(ExposureMechanism):
    """
    Exposure chance set separately for each (R0, R1) cell.

    Parameters
    ----------
    theta_table : dict or sequence
        Either a mapping from cell label ("00", "01", "10", "11") to the chance
        of exposure, or four chances in that order.
    """

    def __init__(self, theta_table):
        if isinstance(theta_table, dict):
            missing = set(CELL_LABELS) - set(theta_table)
            if missing:
                raise InvalidSpec(
                    f"confounded exposure table is missing cells {sorted(missing)}",
                    field="confounded",
                )
            values = [theta_table[label] for label in CELL_LABELS]
        else:
            values = list(theta_table)
            if len(values) != 4:
                raise InvalidSpec(
                    f"confounded exposure table needs 4 chances, got {len(values)}",
                    field="confounded",
                )
        self.theta_table = np.array(
            [check_probability(v, f"confounded.{label}") for label, v in zip(CELL_LABELS, values)]
        )

    def exposure_chances(self) -> np.ndarray:
        return self.theta_table.copy()

    def is_exogenous(self) -> bool:
        return bool(np.all(self.theta_table == self.theta_table[0]))

    def to_dict(self) -> dict:
        return {"confounded": dict(zip(CELL_LABELS, self.theta_table.tolist()))}


def exposure_from_dict(entry: dict) -> ExposureMechanism:
    if not isinstance(entry, dict) or len(entry) != 1:
        raise InvalidSpec(
            "exposure must be {'exogenous': theta} or {'confounded': {...}}", field="exposure"
        )
    (kind, value), = entry.items()
    if kind == "exogenous":
        return Exogenous(value)
    if kind == "confounded":
        return Confounded(value)
    raise InvalidSpec(f"unknown exposure kind {kind!r}", field="exposure")


@dataclass(frozen=True, eq=False)
class PopulationSpec:
    joint: PotentialJoint
    exposure: ExposureMechanism
    n: int
    seed: int

    def __post_init__(self):
        if isinstance(self.n, bool) or not isinstance(self.n, (int, np.integer)) or self.n < 1:
            raise InvalidSpec(f"n must be a positive integer, got {self.n!r}", field="n")
        object.__setattr__(self, "seed", check_seed(self.seed))

    @property
    def is_confounded(self) -> bool:
        return isinstance(self.exposure, Confounded) and not self.exposure.is_exogenous()

    def marginal_exposure(self) -> float:
        """Population chance of exposure, ``sum_c q_c theta_c``."""
        return float(self.joint.cells @ self.exposure.exposure_chances())

    @classmethod
    def from_dict(cls, document: dict) -> "PopulationSpec":
        try:
            joint = PotentialJoint(**document["joint"])
            return cls(
                joint=joint,
                exposure=exposure_from_dict(document["exposure"]),
                n=document["n"],
                seed=document["seed"],
            )
        except KeyError as e:
            raise InvalidSpec(f"population spec is missing {e}", field=str(e).strip("'")) from None
        except TypeError as e:
            raise InvalidSpec(f"malformed population spec: {e}") from None

    def to_dict(self) -> dict:
        joint = self.joint
        return {
            "joint": {"q00": joint.q00, "q01": joint.q01, "q10": joint.q10, "q11": joint.q11},
            "exposure": self.exposure.to_dict(),
            "n": self.n,
            "seed": self.seed,
        }


def exogenized(spec: PopulationSpec) -> PopulationSpec:
    """Same joint and size with exposure made independent at its marginal rate."""
    return PopulationSpec(spec.joint, Exogenous(spec.marginal_exposure()), spec.n, spec.seed)


@dataclass(frozen=True, eq=False)
class PopulationTally:
    """Counts indexed ``counts[E, R0, R1]``."""

    counts: np.ndarray
    n: int

    def __post_init__(self):
        counts = np.asarray(self.counts, dtype=np.int64)
        if counts.shape != (2, 2, 2):
            raise ValidationError(f"tally must have shape (2, 2, 2), got {counts.shape}")
        if np.any(counts < 0) or counts.sum() != self.n:
            raise ValidationError(f"tally counts must be nonnegative and sum to n={self.n}")
        object.__setattr__(self, "counts", counts)

    def to_frame(self) -> pd.DataFrame:
        row = {
            f"e{e}_r0{r0}_r1{r1}": int(self.counts[e, r0, r1])
            for e, r0, r1 in itertools.product((0, 1), repeat=3)
        }
        row["n"] = self.n
        return pd.DataFrame([row])

    def cell_frequencies(self) -> np.ndarray:
        """Frequencies of (R0, R1) cells pooled over exposure, 00/01/10/11 order."""
        return self.counts.sum(axis=0).ravel() / self.n

    def arm_cell_frequencies(self) -> np.ndarray:
        """
        Frequencies of (R0, R1) cells within each exposure arm.

        Row 0 is the unexposed arm and row 1 the exposed arm. Under exogenous
        exposure both rows estimate the same joint.
        """
        per_arm = self.counts.reshape(2, 4)
        sizes = per_arm.sum(axis=1, keepdims=True)
        if np.any(sizes == 0):
            raise EmptyArm("an exposure arm has no individuals")
        return per_arm / sizes


def _simulate_block(cells_by_exposure: np.ndarray, size: int, seed: int, block: int) -> np.ndarray:
    return substream(seed, block).multinomial(size, cells_by_exposure)


def simulate(spec: PopulationSpec, workers: int = 1) -> PopulationTally:
    """
    Simulate ``spec.n`` independent individuals and tally them.

    Each individual draws ``(R0, R1)`` from the joint and then exposure with
    the cell's chance. Individuals are exchangeable, so each block of
    ``POPULATION_BLOCK`` individuals is tallied by one multinomial draw over
    the eight (E, R0, R1) cells. Blocks use their own substreams and sum in
    block order, so the tally does not depend on ``workers``.
    """
    if isinstance(workers, bool) or not isinstance(workers, int) or workers < 1:
        raise ValidationError(f"workers must be an integer >= 1, got {workers!r}", field="workers")
    q = spec.joint.cells
    theta = spec.exposure.exposure_chances()
    # layout matches counts[E, R0, R1].ravel()
    probabilities = np.concatenate([q * (1.0 - theta), q * theta])
    probabilities = probabilities / probabilities.sum()

    blocks = n_blocks(spec.n, POPULATION_BLOCK)
    sizes = [min(POPULATION_BLOCK, spec.n - b * POPULATION_BLOCK) for b in range(blocks)]
    parts = Parallel(n_jobs=workers, prefer="threads")(
        delayed(_simulate_block)(probabilities, size, spec.seed, b)
        for b, size in enumerate(sizes)
    )
    counts = np.sum(parts, axis=0).reshape(2, 2, 2)
    logger.debug(f"simulated {spec.n} individuals in {blocks} blocks")
    return PopulationTally(counts=counts, n=spec.n)


def empirical_pc(t: PopulationTally) -> float:
    """Share of exposed responders who would not have responded unexposed."""
    responders = t.counts[1, :, 1].sum()
    if responders == 0:
        raise NoExposedResponders("no exposed individual responded", field="counts")
    return int(t.counts[1, 0, 1]) / int(responders)


def empirical_marginals(t: PopulationTally) -> MarginalChances:
    """
    Arm-wise response rates: R1 among the exposed and R0 among the unexposed.
    """
    exposed = int(t.counts[1].sum())
    unexposed = int(t.counts[0].sum())
    if exposed == 0:
        raise EmptyArm("no exposed individuals, p1 is not estimable", field="p1")
    if unexposed == 0:
        raise EmptyArm("no unexposed individuals, p0 is not estimable", field="p0")
    p1 = int(t.counts[1, :, 1].sum()) / exposed
    p0 = int(t.counts[0, 1, :].sum()) / unexposed
    return MarginalChances(p1=p1, p0=p0)


@dataclass(frozen=True)
class ContainmentReport:
    empirical_pc: float
    bounds_from_arms: UncertaintyInterval
    contained: bool
    slack: Tuple[float, float]
    sigmas: float

    def to_dict(self) -> dict:
        return {
            "empirical_pc": self.empirical_pc,
            "lower": self.bounds_from_arms.lower,
            "upper": self.bounds_from_arms.upper,
            "contained": self.contained,
            "slack": list(self.slack),
            "sigmas": self.sigmas,
        }


def _endpoint_slack(t: PopulationTally, pc: float, m: MarginalChances, sigmas: float):
    """
    Sampling slack for the lower and upper containment checks.

    Combines the binomial standard error of the empirical PC with the delta
    method standard error of each bound endpoint.
    """
    exposed = int(t.counts[1].sum())
    unexposed = int(t.counts[0].sum())
    responders = int(t.counts[1, :, 1].sum())
    var_pc = pc * (1.0 - pc) / responders
    var_p1 = m.p1 * (1.0 - m.p1) / exposed
    var_p0 = m.p0 * (1.0 - m.p0) / unexposed
    # d/dp0 of both endpoints is -1/p1; d/dp1 is p0/p1^2 (lower) and -(1-p0)/p1^2 (upper)
    var_lower = var_p0 / m.p1**2 + (m.p0 / m.p1**2) ** 2 * var_p1
    var_upper = var_p0 / m.p1**2 + ((1.0 - m.p0) / m.p1**2) ** 2 * var_p1
    return (
        sigmas * math.sqrt(var_pc + var_lower),
        sigmas * math.sqrt(var_pc + var_upper),
    )


def containment(t: PopulationTally, sigmas: float = 3.0) -> ContainmentReport:
    """
    Whether the empirical PC lies inside the bounds computed from the arms,
    allowing ``sigmas`` standard errors of sampling slack at each end.
    """
    pc = empirical_pc(t)
    m = empirical_marginals(t)
    bounds = pc_bounds(m)
    low_slack, high_slack = _endpoint_slack(t, pc, m, sigmas)
    contained = bounds.lower - low_slack <= pc <= bounds.upper + high_slack
    return ContainmentReport(pc, bounds, bool(contained), (low_slack, high_slack), sigmas)


def sufficiency_violation_demo(
    spec: PopulationSpec, sigmas: float = 3.0, workers: int = 1
) -> ContainmentReport:
    """
    Simulate ``spec`` and test whether bounds from the arms contain the truth.

    With exposure that depends on (R0, R1) the arms no longer estimate the
    individual's potential-response chances, and the verdict is typically
    ``contained = False``.
    """
    if not spec.is_confounded:
        logger.info("exposure is exogenous; containment is expected to hold")
    report = containment(simulate(spec, workers=workers), sigmas=sigmas)
    logger.info(
        f"empirical PC {report.empirical_pc:.6f} vs bounds "
        f"[{report.bounds_from_arms.lower:.6f}, {report.bounds_from_arms.upper:.6f}]: "
        f"contained={report.contained}"
    )
    return report


def search_confounded_violation(
    joints: Iterable[PotentialJoint],
    exposure_levels: Sequence[float] = (0.1, 0.5, 0.9),
    n: int = 100_000,
    seed: int = 0,
    sigmas: float = 3.0,
) -> Optional[Tuple[PopulationSpec, ContainmentReport]]:
    """
    Brute-force search for a confounded population whose bounds miss the truth.

    Every joint is paired with every exposure table drawn from
    ``exposure_levels``; the first (joint, table) whose containment check fails
    is returned, or None when none does.
    """
    for joint in joints:
        for table in itertools.product(exposure_levels, repeat=4):
            spec = PopulationSpec(joint, Confounded(table), n, seed)
            if not spec.is_confounded:
                continue
            try:
                report = containment(simulate(spec), sigmas=sigmas)
            except ValidationError:
                continue
            if not report.contained:
                logger.info(f"violation found: {spec.to_dict()}")
                return spec, report
    return None
