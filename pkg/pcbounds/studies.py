import json
import logging
from dataclasses import dataclass, field
from enum import Enum
from os import PathLike
from pathlib import Path
from typing import IO, Dict, List, Optional, Tuple, Union

import pandas as pd

from pcbounds.errors import (
    ArtifactIOError,
    ParseError,
    RetrospectiveDesign,
    ValidationError,
    ZeroBaselineRisk,
    ZeroCell,
    ZeroRow,
)
from pcbounds.utils import csv_text, write_csv

logger = logging.getLogger(__name__)

CELL_NAMES = (
    "exposed_cases",
    "exposed_controls",
    "unexposed_cases",
    "unexposed_controls",
)


class DesignKind(str, Enum):
    RANDOMIZED = "randomized"
    COHORT = "cohort"
    CASE_CONTROL = "case_control"

    @property
    def is_prospective(self) -> bool:
        return self is not DesignKind.CASE_CONTROL


@dataclass(frozen=True)
class TwoByTwoTable:
    """
    Study counts with rows = exposure and columns = case status.

    ========= ===== ========
    exposure  cases controls
    ========= ===== ========
    exposed   a     b
    unexposed c     d
    ========= ===== ========

    For prospective designs the columns read as (responders, non-responders)
    within each exposure arm.
    """

    exposed_cases: int
    exposed_controls: int
    unexposed_cases: int
    unexposed_controls: int

    def __post_init__(self):
        for name in CELL_NAMES:
            value = getattr(self, name)
            if isinstance(value, bool) or not float(value).is_integer():
                raise ValidationError(
                    f"{name} must be an integer count, got {value!r}", field=name
                )
            if value < 0:
                raise ValidationError(
                    f"{name} must be nonnegative, got {value!r}", field=name
                )
            object.__setattr__(self, name, int(value))
        if self.total == 0:
            raise ValidationError("table must contain at least one subject")

    @property
    def cells(self) -> Tuple[int, int, int, int]:
        return (
            self.exposed_cases,
            self.exposed_controls,
            self.unexposed_cases,
            self.unexposed_controls,
        )

    @property
    def total(self) -> int:
        return sum(self.cells)

    def transposed(self) -> "TwoByTwoTable":
        """Swap the exposure rows."""
        a, b, c, d = self.cells
        return TwoByTwoTable(c, d, a, b)

    def to_dict(self) -> Dict[str, int]:
        return dict(zip(CELL_NAMES, self.cells))


@dataclass(frozen=True)
class StudyDesign:
    kind: DesignKind
    stratum: str = ""

    def __post_init__(self):
        try:
            kind = DesignKind(self.kind)
        except ValueError:
            allowed = ", ".join(k.value for k in DesignKind)
            raise ValidationError(
                f"unknown design kind {self.kind!r}, expected one of {allowed}",
                field="design",
            ) from None
        object.__setattr__(self, "kind", kind)
        object.__setattr__(self, "stratum", str(self.stratum))


@dataclass(frozen=True)
class StudyRecord:
    """
    A study table with its design and citation.

    Adjusted estimates that cannot be recomputed from the table (covariate
    adjustment, external syntheses) are kept verbatim in ``adjusted_or`` /
    ``adjusted_or_ci``.
    """

    table: TwoByTwoTable
    design: StudyDesign
    source: str = ""
    adjusted_or: Optional[float] = None
    adjusted_or_ci: Optional[Tuple[float, float]] = None
    external_estimate: Optional[str] = field(default=None)

    def __post_init__(self):
        if self.adjusted_or is not None and not self.adjusted_or > 0:
            raise ValidationError(
                f"adjusted_or must be positive, got {self.adjusted_or!r}",
                field="adjusted_or",
            )
        if self.adjusted_or_ci is not None:
            ci = tuple(float(v) for v in self.adjusted_or_ci)
            if len(ci) != 2 or ci[0] > ci[1]:
                raise ValidationError(
                    f"adjusted_or_ci must be an ordered pair, got {self.adjusted_or_ci!r}",
                    field="adjusted_or_ci",
                )
            object.__setattr__(self, "adjusted_or_ci", ci)

    def to_dict(self) -> dict:
        out = {
            "source": self.source,
            "design": self.design.kind.value,
            "stratum": self.design.stratum,
            "table": self.table.to_dict(),
        }
        if self.adjusted_or is not None:
            out["adjusted_or"] = self.adjusted_or
        if self.adjusted_or_ci is not None:
            out["adjusted_or_ci"] = list(self.adjusted_or_ci)
        if self.external_estimate is not None:
            out["external_estimate"] = self.external_estimate
        return out


def odds_ratio(t: TwoByTwoTable, correction: bool = False) -> float:
    """
    Cross-product ratio ``(a d) / (b c)``.

    Parameters
    ----------
    t : TwoByTwoTable
    correction : bool
        Add 0.5 to every cell first (Haldane-Anscombe). Off by default: a
        table with a zero cell then raises ZeroCell.
    """
    a, b, c, d = t.cells
    if correction:
        logger.warning("applying 0.5 zero-cell correction to every cell")
        a, b, c, d = a + 0.5, b + 0.5, c + 0.5, d + 0.5
    elif 0 in (a, b, c, d):
        empty = [name for name, v in zip(CELL_NAMES, t.cells) if v == 0]
        raise ZeroCell(
            f"odds ratio undefined with zero cells {empty}; pass correction=True "
            "to apply the 0.5 correction",
            field=empty[0],
        )
    return cross_product_ratio(a, b, c, d)


def cross_product_ratio(a: float, b: float, c: float, d: float) -> float:
    """``(a d) / (b c)`` on real-valued cells."""
    return (a * d) / (b * c)


def _arm_risks(t: TwoByTwoTable) -> Tuple[float, float]:
    a, b, c, d = t.cells
    if a + b == 0:
        raise ZeroRow("exposed arm is empty", field="exposed_cases")
    if c + d == 0:
        raise ZeroRow("unexposed arm is empty", field="unexposed_cases")
    if c == 0:
        raise ZeroBaselineRisk(
            "no responders in the unexposed arm, risk ratio is unbounded",
            field="unexposed_cases",
        )
    return a / (a + b), c / (c + d)


def risk_ratio_estimate(r: StudyRecord) -> float:
    """
    Observational risk ratio ``[a/(a+b)] / [c/(c+d)]``.

    Only prospective designs sample within exposure arms, so a case-control
    record raises RetrospectiveDesign.
    """
    if not r.design.kind.is_prospective:
        raise RetrospectiveDesign(
            "risk ratio is not estimable from a retrospective (case-control) design",
            field="design",
        )
    exposed, unexposed = _arm_risks(r.table)
    return exposed / unexposed


@dataclass(frozen=True)
class RareOutcomeReport:
    odds_ratio: float
    risk_ratio: float
    relative_gap: float


def rare_outcome_gap(t: TwoByTwoTable, correction: bool = False) -> RareOutcomeReport:
    """
    Compare OR and RR on a table read as a cohort.

    ``relative_gap = |OR - RR| / RR`` tells a caller whether substituting the
    odds ratio for the risk ratio is defensible.

    ``correction`` applies to the odds ratio only. The risk ratio is always the
    raw ratio of arm risks, so a table with no unexposed responders raises
    ZeroBaselineRisk even when its corrected odds ratio is finite.
    """
    or_ = odds_ratio(t, correction=correction)
    exposed, unexposed = _arm_risks(t)
    rr = exposed / unexposed
    return RareOutcomeReport(or_, rr, abs(or_ - rr) / rr)


def _record_from_dict(entry, index: int) -> StudyRecord:
    if not isinstance(entry, dict):
        raise ValidationError(
            f"record {index}: expected an object, got {type(entry).__name__}",
            record=index,
        )

    def require(mapping, key, where):
        if key not in mapping:
            raise ValidationError(
                f"record {index}: missing field {where}{key!r}",
                field=key,
                record=index,
            )
        return mapping[key]

    table_entry = require(entry, "table", "")
    if not isinstance(table_entry, dict):
        raise ValidationError(
            f"record {index}: field 'table' must be an object", field="table", record=index
        )
    counts = {}
    for name in CELL_NAMES:
        value = require(table_entry, name, "table.")
        if isinstance(value, bool) or not isinstance(value, int):
            raise ValidationError(
                f"record {index}: table.{name} must be an integer, got {value!r}",
                field=name,
                record=index,
            )
        counts[name] = value

    try:
        table = TwoByTwoTable(**counts)
        design = StudyDesign(require(entry, "design", ""), entry.get("stratum", ""))
        ci = entry.get("adjusted_or_ci")
        return StudyRecord(
            table=table,
            design=design,
            source=str(entry.get("source", "")),
            adjusted_or=entry.get("adjusted_or"),
            adjusted_or_ci=tuple(ci) if ci is not None else None,
            external_estimate=entry.get("external_estimate"),
        )
    except ValidationError as e:
        if e.record is not None:
            raise
        raise type(e)(f"record {index}: {e}", field=e.field, record=index) from None
    except (TypeError, ValueError) as e:
        raise ValidationError(f"record {index}: {e}", record=index) from None


def ingest(source: Union[str, PathLike, IO[str]]) -> List[StudyRecord]:
    """
    Read study records from a JSON file path or text stream.

    The document is either one record object or an array of them.

    Raises
    ------
    ParseError
        Malformed JSON, with the line and column of the fault.
    ValidationError
        A record violates the schema; ``record`` and ``field`` identify it.
    """
    if hasattr(source, "read"):
        text = source.read()
        name = getattr(source, "name", "<stream>")
    else:
        name = str(source)
        try:
            text = Path(source).read_text(encoding="utf-8")
        except OSError as e:
            raise ArtifactIOError(f"could not read {name}: {e}") from e
        except UnicodeDecodeError as e:
            raise ParseError(f"{name}: not UTF-8 text: {e.reason}") from None

    try:
        document = json.loads(text)
    except json.JSONDecodeError as e:
        raise ParseError(
            f"{name}: line {e.lineno}, column {e.colno}: {e.msg}",
            line=e.lineno,
            column=e.colno,
        ) from None

    entries = document if isinstance(document, list) else [document]
    records = [_record_from_dict(entry, i) for i, entry in enumerate(entries)]
    logger.info(f"ingested {len(records)} study records from {name}")
    return records


def serialize(records: List[StudyRecord]) -> str:
    return json.dumps([r.to_dict() for r in records], indent=2)


def measures_report(records: List[StudyRecord], correction: bool = False) -> List[dict]:
    """
    Association measures for each record.

    The risk ratio and the OR/RR gap are ``None`` where the design does not
    permit a risk ratio, with the reason in ``rr_note``.
    """
    rows = []
    for record in records:
        row = {
            "source": record.source,
            "design": record.design.kind.value,
            "stratum": record.design.stratum,
            "or": odds_ratio(record.table, correction=correction),
            "rr": None,
            "relative_gap": None,
            "rr_note": None,
        }
        if record.design.kind.is_prospective:
            try:
                gap = rare_outcome_gap(record.table, correction=correction)
            except ZeroBaselineRisk:
                row["rr_note"] = "not estimable (zero baseline risk)"
            except ZeroRow as e:
                row["rr_note"] = f"not estimable ({e})"
            else:
                row["rr"] = gap.risk_ratio
                row["relative_gap"] = gap.relative_gap
        else:
            row["rr_note"] = "not estimable (retrospective design)"
        if record.adjusted_or is not None:
            row["adjusted_or"] = record.adjusted_or
            row["adjusted_or_ci"] = record.adjusted_or_ci
        rows.append(row)
    return rows


def measures_frame(rows: List[dict]) -> pd.DataFrame:
    frame = pd.DataFrame(
        {
            "source": [r["source"] for r in rows],
            "design": [r["design"] for r in rows],
            "or": [r["or"] for r in rows],
            "rr_or_NA": [r["rr"] for r in rows],
            "relative_gap_or_NA": [r["relative_gap"] for r in rows],
        }
    )
    return frame


def measures_to_csv(rows: List[dict], path: Union[str, PathLike] = None, header: dict = None):
    """
    Write the measure report as CSV; returns the CSV text when ``path`` is None.
    """
    frame = measures_frame(rows)
    if path is None:
        return csv_text(frame, header)
    return write_csv(path, frame, header=header)
