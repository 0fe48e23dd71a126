"""
Deterministic bounds on the probability of causation.

For an exposed individual who responded, the probability of causation is
``PC = P(R0 = 0 | R1 = 1)``, where ``R1`` / ``R0`` are the potential responses
with and without exposure. Only the marginal chances ``p1 = P(R1 = 1)`` and
``p0 = P(R0 = 1)`` are estimable, so PC is reported as the interval of values
compatible with every joint law of ``(R0, R1)`` having those marginals.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Tuple, Union

import numpy as np

from pcbounds.errors import (
    DegenerateConditioning,
    DegenerateTheta,
    InvalidProbability,
    UndefinedRatio,
    ValidationError,
)
from pcbounds.utils import TOLERANCE, check_probability

logger = logging.getLogger(__name__)

INCOHERENT_EXPOSURE = "incoherent_exposure_chances"
LOWER_CLAMPED = "lower_clamped_to_upper"


@dataclass(frozen=True)
class MarginalChances:
    """Chances of response with (p1) and without (p0) exposure."""

    p1: float
    p0: float

    def __post_init__(self):
        object.__setattr__(self, "p1", check_probability(self.p1, "p1"))
        object.__setattr__(self, "p0", check_probability(self.p0, "p0"))


@dataclass(frozen=True)
class PotentialJoint:
    """
    Joint law of the potential responses, ``qij = P(R0 = i, R1 = j)``.
    """

    q00: float
    q01: float
    q10: float
    q11: float

    def __post_init__(self):
        for name in ("q00", "q01", "q10", "q11"):
            object.__setattr__(self, name, check_probability(getattr(self, name), name))
        total = self.q00 + self.q01 + self.q10 + self.q11
        if abs(total - 1.0) > TOLERANCE:
            raise InvalidProbability(
                f"joint cells must sum to 1, got {total!r}", field="joint"
            )

    @property
    def cells(self) -> np.ndarray:
        """Cells in (q00, q01, q10, q11) order; index = 2 * R0 + R1."""
        return np.array([self.q00, self.q01, self.q10, self.q11])

    @property
    def p1(self) -> float:
        return self.q01 + self.q11

    @property
    def p0(self) -> float:
        return self.q10 + self.q11

    def marginals(self) -> MarginalChances:
        return MarginalChances(p1=self.p1, p0=self.p0)


@dataclass(frozen=True)
class UncertaintyInterval:
    """
    Ordered pair bounding PC or PC*.

    ``flags`` carries warning codes raised while the interval was computed,
    e.g. ``LOWER_CLAMPED`` when rounding pushed the lower end above the upper.
    """

    lower: float
    upper: float
    flags: Tuple[str, ...] = field(default=(), compare=False)

    def __post_init__(self):
        lower = check_probability(self.lower, "lower")
        upper = check_probability(self.upper, "upper")
        if lower > upper + TOLERANCE:
            raise ValidationError(
                f"interval lower {lower!r} exceeds upper {upper!r}", field="lower"
            )
        object.__setattr__(self, "lower", min(lower, upper))
        object.__setattr__(self, "upper", upper)
        object.__setattr__(self, "flags", tuple(self.flags))

    @property
    def length(self) -> float:
        return self.upper - self.lower

    def contains(self, value: float, slack: float = 0.0) -> bool:
        return self.lower - slack <= value <= self.upper + slack


@dataclass(frozen=True)
class ExposureChances:
    """
    ``phi = P(E = 1 | R = 1)`` and the prior exposure chance ``theta = P(E = 1)``.

    ``psi = P(E = 0 | R = 1)`` is ``1 - phi``.
    """

    phi: float
    theta: float

    def __post_init__(self):
        object.__setattr__(self, "phi", check_probability(self.phi, "phi"))
        object.__setattr__(self, "theta", check_probability(self.theta, "theta"))

    @property
    def psi(self) -> float:
        return 1.0 - self.phi


@dataclass(frozen=True)
class RiskRatio:
    """Causal risk ratio p1 / p0; ``math.inf`` when p0 = 0 < p1."""

    value: float

    def __post_init__(self):
        value = float(self.value)
        if math.isnan(value) or value < 0:
            raise ValidationError(
                f"risk ratio must be nonnegative, got {self.value!r}", field="rr"
            )
        object.__setattr__(self, "value", value)

    @property
    def is_infinite(self) -> bool:
        return math.isinf(self.value)


def risk_ratio(m: MarginalChances) -> RiskRatio:
    if m.p0 == 0.0:
        if m.p1 == 0.0:
            raise UndefinedRatio(
                "risk ratio is undefined when p1 = p0 = 0", field="p0"
            )
        return RiskRatio(math.inf)
    return RiskRatio(m.p1 / m.p0)


def pc_lower(rr: Union[RiskRatio, float]) -> float:
    """Lower bound ``max(0, 1 - 1/RR)``; 1 for an infinite risk ratio."""
    if not isinstance(rr, RiskRatio):
        rr = RiskRatio(rr)
    if rr.is_infinite:
        return 1.0
    if rr.value <= 1.0:
        return 0.0
    return 1.0 - 1.0 / rr.value


def _check_conditioning(m: MarginalChances):
    if m.p1 == 0.0:
        raise DegenerateConditioning(
            "PC conditions on R1 = 1, which needs p1 > 0", field="p1"
        )


def pc_bounds(m: MarginalChances) -> UncertaintyInterval:
    """
    Sharp bounds on PC over all joints with marginals ``m``.

    ``lower = max(0, 1 - p0/p1)`` and ``upper = min(1, (1 - p0)/p1)``.
    """
    _check_conditioning(m)
    lower = max(0.0, 1.0 - m.p0 / m.p1)
    upper = min(1.0, (1.0 - m.p0) / m.p1)
    return UncertaintyInterval(lower, upper)


def pc_bounds_simple(m: MarginalChances) -> UncertaintyInterval:
    """As pc_bounds, with the upper bound fixed at 1."""
    _check_conditioning(m)
    return UncertaintyInterval(pc_bounds(m).lower, 1.0)


def pc_star_bounds(e: ExposureChances) -> UncertaintyInterval:
    """
    Bounds on PC* when exposure itself is uncertain.

    ``upper = phi`` and ``lower = max(0, 1 - (1 - phi)/(1 - theta))``. phi and
    theta are usually assessed separately; a pair no joint model can produce
    (theta = 0 with phi > 0) is flagged rather than rejected.
    """
    if e.theta >= 1.0:
        raise DegenerateTheta(
            "PC* bounds divide by 1 - theta, which needs theta < 1", field="theta"
        )

    flags = []
    if e.theta == 0.0 and e.phi > 0.0:
        logger.warning(
            f"phi={e.phi!r} > 0 is incoherent with theta=0 (no exposure possible)"
        )
        flags.append(INCOHERENT_EXPOSURE)

    upper = e.phi
    lower = max(0.0, 1.0 - e.psi / (1.0 - e.theta))
    if lower > upper:
        logger.warning(f"PC* lower {lower!r} clamped to upper {upper!r}")
        flags.append(LOWER_CLAMPED)
        lower = upper
    return UncertaintyInterval(lower, upper, flags=tuple(flags))


def pc_star_from_pc(pc: UncertaintyInterval, phi: float) -> UncertaintyInterval:
    """PC* scales PC by the chance the exposure occurred."""
    phi = check_probability(phi, "phi")
    return UncertaintyInterval(pc.lower * phi, pc.upper * phi)


def pc_star_bounds_generative(theta, p1, p0):
    """
    Vectorised PC* bounds from generative chances ``(theta, p1, p0)``.

    ``phi`` follows from Bayes' theorem, ``theta p1 / (theta p1 + (1 - theta) p0)``,
    and the lower bound is written ``theta (p1 - p0) / (theta p1 + (1 - theta) p0)``,
    which equals ``1 - p0 / (theta p1 + (1 - theta) p0)`` but stays positive
    whenever ``p1 > p0`` even for tiny ``theta``.

    Returns
    -------
    (lower, upper) : tuple of np.ndarray
    """
    theta, p1, p0 = np.broadcast_arrays(
        np.asarray(theta, dtype=float),
        np.asarray(p1, dtype=float),
        np.asarray(p0, dtype=float),
    )
    exposed = theta * p1
    denominator = exposed + (1.0 - theta) * p0
    safe = np.where(denominator > 0, denominator, 1.0)
    upper = np.where(denominator > 0, exposed / safe, 0.0)
    lower = np.maximum(0.0, np.where(denominator > 0, theta * (p1 - p0) / safe, 0.0))
    upper = np.clip(upper, 0.0, 1.0)
    lower = np.minimum(lower, upper)
    return lower, upper


def pc_star_bounds_direct(phi, theta):
    """
    Vectorised ``pc_star_bounds`` over arrays of ``(phi, theta)``.

    At ``theta = 1`` the limit from below is taken: lower is 0, or 1 when
    ``phi = 1``.
    """
    phi, theta = np.broadcast_arrays(
        np.asarray(phi, dtype=float), np.asarray(theta, dtype=float)
    )
    slack = 1.0 - theta
    safe = np.where(slack > 0, slack, 1.0)
    lower = np.where(
        slack > 0,
        np.maximum(0.0, 1.0 - (1.0 - phi) / safe),
        np.where(phi >= 1.0, 1.0, 0.0),
    )
    upper = phi
    return np.minimum(lower, upper), upper


def _pc_from_cells(q01, q11):
    return q01 / (q01 + q11)


def pc_from_joint(j: PotentialJoint) -> float:
    responders = j.q01 + j.q11
    if responders <= 0.0:
        raise DegenerateConditioning(
            "PC conditions on R1 = 1, which has zero chance under this joint",
            field="joint",
        )
    return float(_pc_from_cells(j.q01, j.q11))


def q11_range(m: MarginalChances) -> Tuple[float, float]:
    """Feasible values of ``q11 = P(R0 = 1, R1 = 1)`` given the marginals."""
    return max(0.0, m.p0 + m.p1 - 1.0), min(m.p0, m.p1)


def joint_from_marginals(m: MarginalChances, q11: float) -> PotentialJoint:
    low, high = q11_range(m)
    if not low - TOLERANCE <= q11 <= high + TOLERANCE:
        raise ValidationError(
            f"q11={q11!r} outside feasible range [{low!r}, {high!r}]", field="q11"
        )
    q11 = min(max(q11, low), high)
    q01 = m.p1 - q11
    q10 = m.p0 - q11
    q00 = 1.0 - m.p1 - m.p0 + q11
    # rounding can leave cells a hair below zero at the Fréchet endpoints
    return PotentialJoint(
        max(q00, 0.0), max(q01, 0.0), max(q10, 0.0), max(q11, 0.0)
    )


def extremal_joints(m: MarginalChances) -> Tuple[PotentialJoint, PotentialJoint]:
    """
    Joints attaining the PC bounds.

    Returns
    -------
    (lower_joint, upper_joint)
        The maximal-q11 joint attains the lower bound and the minimal-q11
        joint attains the upper bound.
    """
    low, high = q11_range(m)
    return joint_from_marginals(m, high), joint_from_marginals(m, low)


def brute_force_pc_range(m: MarginalChances, steps: int) -> UncertaintyInterval:
    """
    Independent check of pc_bounds by sweeping every feasible joint.

    ``steps`` values of q11 are taken across the feasible range, endpoints
    included, and PC is evaluated on each joint. The two extremal joints are
    also evaluated exactly through pc_from_joint so that the result does not
    depend on grid resolution.
    """
    _check_conditioning(m)
    if steps < 2:
        raise ValidationError(f"steps must be at least 2, got {steps}", field="steps")

    low, high = q11_range(m)
    q11 = np.linspace(low, high, steps)
    q01 = np.maximum(m.p1 - q11, 0.0)
    sweep = _pc_from_cells(q01, q11)

    endpoints = [pc_from_joint(j) for j in extremal_joints(m)]
    values = np.concatenate([sweep, endpoints])
    logger.debug(f"swept {steps} joints over q11 in [{low!r}, {high!r}]")
    return UncertaintyInterval(float(values.min()), float(values.max()))


def balance_of_probabilities(interval: UncertaintyInterval) -> Tuple[bool, str]:
    """
    Verdict on the civil standard "more likely than not".

    Returns
    -------
    (exceeds_half, note)
    """
    if interval.lower > 0.5:
        return True, "probability of causation exceeds 50%"
    if interval.upper <= 0.5:
        return False, "probability of causation does not exceed 50%"
    return False, (
        "cannot be sure that the probability of causation exceeds 50%, "
        "nor conclude that it is below 50%"
    )
