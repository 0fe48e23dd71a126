import json

import numpy as np
import pytest

from pcbounds.cli import EXIT_IO, EXIT_OK, EXIT_VALIDATION, main
from pcbounds.utils import DATA_DIR

DENSITY_FILES = (
    "hist_upper.csv",
    "hist_lower_pos.csv",
    "hist_length.csv",
    "hist_length_pos.csv",
    "hist_upper_given_lower_zero.csv",
    "bivariate.csv",
)


def run(capsys, *argv):
    code = main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


def _table(a, b, c, d):
    return {
        "exposed_cases": a,
        "exposed_controls": b,
        "unexposed_cases": c,
        "unexposed_controls": d,
    }


class TestBounds:
    def test_aspirin(self, capsys):
        code, out, _ = run(capsys, "bounds", "--p1", "0.30", "--p0", "0.12")
        assert code == EXIT_OK
        payload = json.loads(out)
        assert payload["lower"] == pytest.approx(0.6, abs=1e-15)
        assert payload["upper"] == 1.0
        assert payload["rr"] == 2.5
        assert payload["exceeds_half"] is True
        assert payload["artifact_version"] == "1"
        assert "input_hash" in payload

    def test_risk_ratio_only(self, capsys):
        code, out, _ = run(capsys, "bounds", "--rr", "1.5")
        assert code == EXIT_OK
        payload = json.loads(out)
        assert payload["lower"] == pytest.approx(1 / 3)
        assert payload["exceeds_half"] is False
        assert "cannot be sure" in payload["note"]

    def test_degenerate_conditioning(self, capsys):
        code, out, err = run(capsys, "bounds", "--p1", "0", "--p0", "0.1")
        assert code == EXIT_VALIDATION
        assert out == ""
        assert "DegenerateConditioning" in err
        assert "[p1]" in err

    def test_conflicting_inputs(self, capsys):
        code, _, _ = run(capsys, "bounds", "--rr", "2", "--p1", "0.3")
        assert code == EXIT_VALIDATION

    def test_csv_output(self, capsys):
        code, out, _ = run(capsys, "bounds", "--p1", "0.5", "--p0", "0.25", "--format", "csv")
        assert code == EXIT_OK
        lines = out.splitlines()
        assert lines[0] == "# artifact_version=1"
        assert lines[2] == "lower,upper,rr,exceeds_half"
        assert lines[3] == "0.5,1,2,False"

    def test_byte_reproducible(self, capsys):
        _, first, _ = run(capsys, "bounds", "--p1", "0.30", "--p0", "0.12")
        _, second, _ = run(capsys, "bounds", "--p1", "0.30", "--p0", "0.12")
        assert first == second


class TestPCStar:
    @pytest.mark.parametrize("theta", ["0.5", "0.9"])
    def test_individual_interval(self, capsys, theta):
        code, out, _ = run(capsys, "pcstar", "--phi", "0.043", "--theta", theta)
        assert code == EXIT_OK
        payload = json.loads(out)
        assert (payload["lower"], payload["upper"]) == (0.0, 0.043)
        assert payload["flags"] == []

    def test_theta_one(self, capsys):
        code, _, err = run(capsys, "pcstar", "--phi", "0.5", "--theta", "1")
        assert code == EXIT_VALIDATION
        assert "DegenerateTheta" in err


class TestStudy:
    def test_bundled_record(self, capsys):
        code, out, _ = run(capsys, "study")
        assert code == EXIT_OK
        (row,) = json.loads(out)["records"]
        assert row["or"] == 40.375
        assert row["rr"] is None
        assert row["rr_note"] == "not estimable (retrospective design)"
        assert row["adjusted_or"] == 17.1

    def test_randomized_record(self, capsys, tmp_path):
        path = tmp_path / "trial.json"
        path.write_text(
            json.dumps(
                {
                    "design": "randomized",
                    "table": {
                        "exposed_cases": 30,
                        "exposed_controls": 70,
                        "unexposed_cases": 12,
                        "unexposed_controls": 88,
                    },
                }
            )
        )
        code, out, _ = run(capsys, "study", str(path), "--format", "csv")
        assert code == EXIT_OK
        assert out.splitlines()[-1].startswith(",randomized,3.14285714285714")
        assert ",2.5," in out.splitlines()[-1]

    def test_zero_baseline_record_keeps_the_others(self, capsys, tmp_path):
        records = [
            {"design": "randomized", "table": _table(30, 70, 12, 88)},
            {"design": "cohort", "table": _table(5, 95, 0, 100)},
        ]
        path = tmp_path / "studies.json"
        path.write_text(json.dumps(records))
        code, out, _ = run(capsys, "study", str(path), "--correction")
        assert code == EXIT_OK
        trial, cohort = json.loads(out)["records"]
        assert trial["rr"] == pytest.approx(2.5)
        assert cohort["or"] == pytest.approx((5.5 * 100.5) / (95.5 * 0.5))
        assert cohort["rr"] is None
        assert cohort["relative_gap"] is None
        assert cohort["rr_note"] == "not estimable (zero baseline risk)"

    def test_undecodable_file(self, capsys, tmp_path):
        path = tmp_path / "binary.json"
        path.write_bytes(b"\xff\xfe{")
        code, out, err = run(capsys, "study", str(path))
        assert code == EXIT_VALIDATION
        assert out == ""
        assert "ParseError" in err

    def test_empty_file(self, capsys, tmp_path):
        path = tmp_path / "empty.json"
        path.write_text("")
        code, _, err = run(capsys, "study", str(path))
        assert code == EXIT_VALIDATION
        assert "ParseError" in err

    def test_missing_file(self, capsys, tmp_path):
        code, _, _ = run(capsys, "study", str(tmp_path / "absent.json"))
        assert code == EXIT_IO


class TestPosterior:
    def test_artifacts_and_reproducibility(self, capsys, tmp_path):
        spec = str(DATA_DIR / "prior1_direct.json")
        args = ("posterior", spec, "--n", "2000", "--seed", "7")
        code, out, _ = run(capsys, *args, "--output-dir", str(tmp_path / "a"))
        assert code == EXIT_OK
        payload = json.loads(out)
        assert payload["seed"] == 7
        assert 0.0 < payload["prob_lower_zero"] < 1.0
        assert payload["individual_focused"]["lower"] == 0.0

        run(capsys, *args, "--output-dir", str(tmp_path / "b"))
        for name in ("summary.json", "coverage.csv", "subsample.csv", *DENSITY_FILES):
            assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
        assert (tmp_path / "a" / "draws.npz").exists()

    def test_zero_draws(self, capsys, tmp_path):
        spec = str(DATA_DIR / "prior1_direct.json")
        code, _, err = run(capsys, "posterior", spec, "--n", "0", "--output-dir", str(tmp_path))
        assert code == EXIT_VALIDATION
        assert "InvalidSpec" in err

    def test_generated_seed_is_printed(self, capsys, tmp_path):
        document = json.loads((DATA_DIR / "prior2_direct.json").read_text())
        del document["seed"]
        path = tmp_path / "spec.json"
        path.write_text(json.dumps(document))
        code, out, err = run(capsys, "posterior", str(path), "--n", "100", "--output-dir", str(tmp_path))
        assert code == EXIT_OK
        assert "seed: " in err
        seed = int(err.split("seed: ")[1].split()[0])
        assert json.loads(out)["seed"] == seed

    def test_output_dir_from_environment(self, capsys, tmp_path, monkeypatch):
        monkeypatch.setenv("PCBOUNDS_OUTPUT_DIR", str(tmp_path / "env"))
        spec = str(DATA_DIR / "prior1_generative.json")
        code, _, _ = run(capsys, "posterior", spec, "--n", "500", "--seed", "1")
        assert code == EXIT_OK
        assert (tmp_path / "env" / "summary.json").exists()

    def test_report_and_coverage_from_saved_draws(self, capsys, tmp_path):
        spec = str(DATA_DIR / "prior1_direct.json")
        run(capsys, "posterior", spec, "--n", "2000", "--seed", "3", "--output-dir", str(tmp_path))
        draws = str(tmp_path / "draws.npz")

        code, out, _ = run(capsys, "report", draws)
        assert code == EXIT_OK
        payload = json.loads(out)
        assert payload["coverage_at_zero"] == payload["prob_lower_zero"]
        assert payload["summary"]["n"] == 2000
        assert payload["individual_focused"]["upper"] == pytest.approx(0.043, abs=0.002)

        code, out, _ = run(capsys, "coverage", draws, "--grid-points", "11", "--output-dir", str(tmp_path / "c"))
        assert code == EXIT_OK
        values = json.loads(out)["coverage"]["coverage"]
        assert len(values) == 11
        assert values[0] == payload["prob_lower_zero"]
        assert (tmp_path / "c" / "coverage.csv").exists()

    def test_density_artifacts(self, capsys, tmp_path):
        spec = str(DATA_DIR / "prior1_direct.json")
        code, _, _ = run(
            capsys, "posterior", spec, "--n", "2000", "--seed", "5", "--bins", "10",
            "--output-dir", str(tmp_path),
        )
        assert code == EXIT_OK
        for name in DENSITY_FILES:
            lines = (tmp_path / name).read_text().splitlines()
            assert "# seed=5" in lines
            assert not lines[-1].startswith("#")
        upper = (tmp_path / "hist_upper.csv").read_text().splitlines()
        assert upper[-11] == "bin_left,bin_right,mass"
        masses = [float(line.split(",")[2]) for line in upper[-10:]]
        assert sum(masses) == pytest.approx(1.0)

    def test_report_writes_densities_on_request(self, capsys, tmp_path):
        spec = str(DATA_DIR / "prior1_direct.json")
        run(capsys, "posterior", spec, "--n", "1000", "--seed", "2", "--output-dir", str(tmp_path / "a"))
        code, _, _ = run(
            capsys, "report", str(tmp_path / "a" / "draws.npz"), "--bins", "20",
            "--output-dir", str(tmp_path / "b"),
        )
        assert code == EXIT_OK
        for name in DENSITY_FILES:
            assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()

    def test_bad_bins(self, capsys, tmp_path):
        spec = str(DATA_DIR / "prior1_direct.json")
        code, _, err = run(
            capsys, "posterior", spec, "--n", "100", "--seed", "1", "--bins", "0",
            "--output-dir", str(tmp_path),
        )
        assert code == EXIT_VALIDATION
        assert "[bins]" in err

    def test_archive_that_is_not_a_zip(self, capsys, tmp_path):
        path = tmp_path / "draws.npz"
        path.write_bytes(b"not an archive")
        code, out, err = run(capsys, "report", str(path))
        assert code == EXIT_VALIDATION
        assert out == ""
        assert "ValidationError" in err

    def test_archive_with_unknown_mode(self, capsys, tmp_path):
        path = tmp_path / "draws.npz"
        meta = {"artifact_version": "1", "seed": 1, "n": 2, "mode": "hybrid", "spec_hash": ""}
        with open(path, "wb") as f:
            np.savez(
                f,
                lowers=np.array([0.0, 0.1]),
                uppers=np.array([0.2, 0.3]),
                meta=np.array(json.dumps(meta)),
            )
        code, _, err = run(capsys, "report", str(path))
        assert code == EXIT_VALIDATION
        assert "[mode]" in err

    def test_undecodable_model_spec(self, capsys, tmp_path):
        path = tmp_path / "spec.json"
        path.write_bytes(b"\xff")
        code, _, err = run(capsys, "posterior", str(path), "--output-dir", str(tmp_path))
        assert code == EXIT_VALIDATION
        assert "InvalidSpec" in err

    def test_missing_draws(self, capsys, tmp_path):
        code, _, _ = run(capsys, "report", str(tmp_path / "absent.npz"))
        assert code == EXIT_IO


class TestSimulate:
    def test_confounded_and_exogenized(self, capsys, tmp_path):
        spec = str(DATA_DIR / "confounded_population.json")
        code, out, _ = run(capsys, "simulate", spec, "--n", "200000", "--output-dir", str(tmp_path))
        assert code == EXIT_OK
        assert json.loads(out)["containment"]["contained"] is False
        assert (tmp_path / "tally.csv").exists()

        code, out, _ = run(
            capsys, "simulate", spec, "--n", "200000", "--exogenize", "--output-dir", str(tmp_path)
        )
        assert code == EXIT_OK
        payload = json.loads(out)
        assert payload["containment"]["contained"] is True
        assert "exogenous" in payload["population"]["exposure"]

    def test_seed_override_is_recorded(self, capsys, tmp_path):
        spec = str(DATA_DIR / "exogenous_population.json")
        _, out, _ = run(capsys, "simulate", spec, "--n", "1000", "--seed", "99", "--output-dir", str(tmp_path))
        assert json.loads(out)["seed"] == 99

    def test_zero_workers(self, capsys, tmp_path):
        spec = str(DATA_DIR / "exogenous_population.json")
        code, out, err = run(
            capsys, "simulate", spec, "--n", "1000", "--workers", "0", "--output-dir", str(tmp_path)
        )
        assert code == EXIT_VALIDATION
        assert out == ""
        assert "[workers]" in err

    def test_undecodable_population(self, capsys, tmp_path):
        path = tmp_path / "population.json"
        path.write_bytes(b"\xff")
        code, _, err = run(capsys, "simulate", str(path), "--output-dir", str(tmp_path))
        assert code == EXIT_VALIDATION
        assert "InvalidSpec" in err
