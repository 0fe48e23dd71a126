import io
import json

import numpy as np
import pytest

from pcbounds.errors import (
    ParseError,
    RetrospectiveDesign,
    ValidationError,
    ZeroBaselineRisk,
    ZeroCell,
    ZeroRow,
)
from pcbounds.studies import (
    DesignKind,
    StudyDesign,
    StudyRecord,
    TwoByTwoTable,
    cross_product_ratio,
    ingest,
    measures_report,
    measures_to_csv,
    odds_ratio,
    rare_outcome_gap,
    risk_ratio_estimate,
    serialize,
)
from pcbounds.utils import DATA_DIR, artifact_header


def record(a, b, c, d, kind="randomized", **kwargs):
    return StudyRecord(TwoByTwoTable(a, b, c, d), StudyDesign(kind), **kwargs)


class TestTable:
    def test_rejects_negative_and_fractional_counts(self):
        with pytest.raises(ValidationError):
            TwoByTwoTable(-1, 3, 8, 51)
        with pytest.raises(ValidationError):
            TwoByTwoTable(1.5, 3, 8, 51)
        with pytest.raises(ValidationError):
            TwoByTwoTable(True, 3, 8, 51)

    def test_rejects_empty_table(self):
        with pytest.raises(ValidationError):
            TwoByTwoTable(0, 0, 0, 0)

    def test_transposed_inverts_odds_ratio(self):
        t = TwoByTwoTable(19, 3, 8, 51)
        assert odds_ratio(t.transposed()) == pytest.approx(1 / odds_ratio(t))
        assert t.transposed().transposed() == t

    def test_unknown_design(self):
        with pytest.raises(ValidationError) as e:
            StudyDesign("ecological")
        assert e.value.field == "design"

    def test_design_kind_prospective(self):
        assert DesignKind.COHORT.is_prospective
        assert not DesignKind("case_control").is_prospective


class TestMeasures:
    def test_case_control_odds_ratio(self):
        # 19 * 51 / (3 * 8)
        assert odds_ratio(TwoByTwoTable(19, 3, 8, 51)) == 40.375

    def test_case_control_has_no_risk_ratio(self):
        with pytest.raises(RetrospectiveDesign):
            risk_ratio_estimate(record(19, 3, 8, 51, kind="case_control"))

    def test_randomized_risk_ratio(self):
        r = record(30, 70, 12, 88)
        assert risk_ratio_estimate(r) == 2.5
        assert odds_ratio(r.table) == pytest.approx(2640 / 840)

    def test_zero_cell_requires_correction(self):
        t = TwoByTwoTable(5, 0, 3, 10)
        with pytest.raises(ZeroCell) as e:
            odds_ratio(t)
        assert e.value.field == "exposed_controls"

    def test_zero_cell_correction(self, caplog):
        t = TwoByTwoTable(5, 0, 3, 10)
        assert odds_ratio(t, correction=True) == pytest.approx(5.5 * 10.5 / (0.5 * 3.5))
        assert "0.5" in caplog.text

    def test_cross_product_ratio_is_symmetric_in_rows_and_columns(self):
        assert cross_product_ratio(2.0, 3.0, 5.0, 7.0) == cross_product_ratio(7.0, 5.0, 3.0, 2.0)

    @pytest.mark.parametrize("k", [0.1, 3.0, 250.0])
    def test_cross_product_ratio_survives_row_and_column_scaling(self, k):
        a, b, c, d = 19.0, 3.0, 8.0, 51.0
        expected = cross_product_ratio(a, b, c, d)
        assert cross_product_ratio(k * a, k * b, c, d) == pytest.approx(expected, rel=1e-12)
        assert cross_product_ratio(a, b, k * c, k * d) == pytest.approx(expected, rel=1e-12)
        assert cross_product_ratio(k * a, b, k * c, d) == pytest.approx(expected, rel=1e-12)
        assert cross_product_ratio(a, k * b, c, k * d) == pytest.approx(expected, rel=1e-12)

    def test_risk_ratio_estimate_converges(self):
        p1, p0, n = 0.3, 0.12, 1_000_000
        rng = np.random.default_rng(2024)
        a, c = int(rng.binomial(n, p1)), int(rng.binomial(n, p0))
        estimate = risk_ratio_estimate(record(a, n - a, c, n - c))
        se = (p1 / p0) * np.sqrt((1 - p1) / (n * p1) + (1 - p0) / (n * p0))
        assert abs(estimate - p1 / p0) <= 3 * se

    def test_zero_baseline_risk(self):
        with pytest.raises(ZeroBaselineRisk):
            risk_ratio_estimate(record(5, 5, 0, 10))

    def test_zero_row(self):
        with pytest.raises(ZeroRow):
            risk_ratio_estimate(record(0, 0, 3, 4))

    def test_rare_outcome_gap_is_small(self):
        report = rare_outcome_gap(TwoByTwoTable(2, 998, 1, 999))
        assert report.odds_ratio == pytest.approx(1998 / 998)
        assert report.risk_ratio == pytest.approx(2.0)
        assert report.relative_gap < 0.01

    def test_common_outcome_gap_is_large(self):
        report = rare_outcome_gap(TwoByTwoTable(30, 70, 12, 88))
        assert report.relative_gap == pytest.approx((2640 / 840 - 2.5) / 2.5)
        assert report.relative_gap > 0.2

    def test_correction_leaves_risk_ratio_raw(self):
        report = rare_outcome_gap(TwoByTwoTable(30, 70, 12, 88), correction=True)
        assert report.odds_ratio == pytest.approx(30.5 * 88.5 / (70.5 * 12.5))
        assert report.risk_ratio == 2.5
        with pytest.raises(ZeroBaselineRisk):
            rare_outcome_gap(TwoByTwoTable(5, 95, 0, 100), correction=True)


class TestIngest:
    def test_bundled_case_control_record(self):
        (r,) = ingest(DATA_DIR / "table1.json")
        assert r.table.cells == (19, 3, 8, 51)
        assert r.design.kind is DesignKind.CASE_CONTROL
        assert r.adjusted_or == 17.1
        assert r.adjusted_or_ci == (3.5, 83.0)

    def test_single_object_document(self):
        text = json.dumps(
            {
                "design": "cohort",
                "table": {
                    "exposed_cases": 30,
                    "exposed_controls": 70,
                    "unexposed_cases": 12,
                    "unexposed_controls": 88,
                },
            }
        )
        (r,) = ingest(io.StringIO(text))
        assert r.design.kind is DesignKind.COHORT

    def test_malformed_json_reports_position(self):
        with pytest.raises(ParseError) as e:
            ingest(io.StringIO('[\n  {"design": }\n]'))
        assert e.value.line == 2
        assert e.value.column is not None

    def test_empty_document(self):
        with pytest.raises(ParseError):
            ingest(io.StringIO(""))

    def test_undecodable_file(self, tmp_path):
        path = tmp_path / "binary.json"
        path.write_bytes(b"\xff\xfe[")
        with pytest.raises(ParseError):
            ingest(path)

    def test_missing_field_names_record(self):
        good = {
            "design": "randomized",
            "table": {
                "exposed_cases": 1,
                "exposed_controls": 2,
                "unexposed_cases": 3,
                "unexposed_controls": 4,
            },
        }
        bad = {"design": "randomized", "table": {"exposed_cases": 1}}
        with pytest.raises(ValidationError) as e:
            ingest(io.StringIO(json.dumps([good, bad])))
        assert e.value.record == 1
        assert e.value.field == "exposed_controls"

    def test_negative_count_names_field(self):
        entry = {
            "design": "randomized",
            "table": {
                "exposed_cases": 1,
                "exposed_controls": -2,
                "unexposed_cases": 3,
                "unexposed_controls": 4,
            },
        }
        with pytest.raises(ValidationError) as e:
            ingest(io.StringIO(json.dumps([entry])))
        assert e.value.record == 0
        assert e.value.field == "exposed_controls"

    def test_serialize_then_ingest(self):
        records = [
            record(19, 3, 8, 51, kind="case_control", source="s", adjusted_or=17.1,
                   adjusted_or_ci=(3.5, 83.0)),
            record(30, 70, 12, 88, external_estimate="RR 3.1 (2.4 to 4.0), counts not published"),
        ]
        assert ingest(io.StringIO(serialize(records))) == records


class TestReport:
    def test_report_rows(self):
        rows = measures_report([record(19, 3, 8, 51, kind="case_control"), record(30, 70, 12, 88)])
        assert rows[0]["or"] == 40.375
        assert rows[0]["rr"] is None
        assert rows[0]["rr_note"] == "not estimable (retrospective design)"
        assert rows[1]["rr"] == 2.5
        assert rows[1]["relative_gap"] == pytest.approx((2640 / 840 - 2.5) / 2.5)

    def test_inestimable_risk_ratio_keeps_the_row(self):
        rows = measures_report(
            [record(30, 70, 12, 88), record(5, 95, 0, 100, kind="cohort"), record(0, 0, 3, 4)],
            correction=True,
        )
        assert rows[0]["rr"] == 2.5
        assert rows[1]["or"] == pytest.approx(5.5 * 100.5 / (95.5 * 0.5))
        assert rows[1]["rr"] is None
        assert rows[1]["relative_gap"] is None
        assert rows[1]["rr_note"] == "not estimable (zero baseline risk)"
        assert rows[2]["rr"] is None
        assert rows[2]["rr_note"].startswith("not estimable (exposed arm is empty")

    def test_csv_marks_missing_values(self):
        rows = measures_report([record(19, 3, 8, 51, kind="case_control")])
        text = measures_to_csv(rows, header=artifact_header(input_hash="abc"))
        lines = text.splitlines()
        assert lines[0] == "# artifact_version=1"
        assert lines[1] == "# input_hash=abc"
        assert lines[2] == "source,design,or,rr_or_NA,relative_gap_or_NA"
        assert lines[3] == ",case_control,40.375,NA,NA"

    def test_csv_to_file(self, tmp_path):
        rows = measures_report([record(30, 70, 12, 88)])
        path = measures_to_csv(rows, tmp_path / "measures.csv")
        assert path.read_text().splitlines()[0].startswith("source,design")
