"""
Command-line front end.

Every command validates its inputs, runs one pipeline and prints a
machine-readable result on stdout; artifacts go to ``--output-dir``
(default ``$PCBOUNDS_OUTPUT_DIR`` or the working directory). Exit codes are
0 on success, 2 on invalid input and 3 on file-system failures.
"""

import argparse
import logging
import os
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional

import numpy as np
import pandas as pd

from pcbounds.bayes_engine import (
    DrawSet,
    Mode,
    SamplingSettings,
    load_model_spec,
    posterior_expectations,
    prob_lower_zero,
    sample_draws,
)
from pcbounds.errors import ArtifactIOError, InvalidSpec, PCBoundsError, ValidationError
from pcbounds.oracle_sim import (
    PopulationSpec,
    containment,
    exogenized,
    simulate,
)
from pcbounds.pc_core import (
    ExposureChances,
    MarginalChances,
    UncertaintyInterval,
    balance_of_probabilities,
    pc_bounds,
    pc_lower,
    pc_star_bounds,
    risk_ratio,
)
from pcbounds.studies import ingest, measures_report, measures_to_csv
from pcbounds.summaries import (
    coverage,
    expected_chances,
    individual_focused_interval,
    ordered_subsample,
    subsample_frame,
    summarize,
    write_coverage,
    write_densities,
    write_summary,
)
from pcbounds.utils import (
    DATA_DIR,
    artifact_header,
    content_hash,
    csv_text,
    dumps,
    fresh_seed,
    read_json,
    write_csv,
    write_json,
)

logger = logging.getLogger(__name__)

COMMANDS = ("bounds", "pcstar", "study", "posterior", "coverage", "simulate", "report")
OUTPUT_DIR_ENV = "PCBOUNDS_OUTPUT_DIR"
EXIT_OK, EXIT_VALIDATION, EXIT_IO = 0, 2, 3
SUBSAMPLE_SIZE = 100
GRID_POINTS = 101
HISTOGRAM_BINS = 20


@dataclass
class RunConfig:
    command: str
    output_dir: Path
    fmt: str = "json"
    seed: Optional[int] = None
    inputs: List[Path] = field(default_factory=list)
    options: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.command not in COMMANDS:
            raise ValidationError(f"unknown command {self.command!r}", field="command")
        if self.fmt not in ("json", "csv"):
            raise ValidationError(f"format must be json or csv, got {self.fmt!r}", field="format")

    @classmethod
    def from_args(cls, args: argparse.Namespace) -> "RunConfig":
        inputs = [Path(p) for p in (getattr(args, "input", None),) if p is not None]
        reserved = {"command", "output_dir", "format", "seed", "input", "verbose", "func"}
        options = {k: v for k, v in vars(args).items() if k not in reserved}
        return cls(
            command=args.command,
            output_dir=Path(args.output_dir),
            fmt=args.format,
            seed=getattr(args, "seed", None),
            inputs=inputs,
            options=options,
        )

    def resolve_seed(self) -> int:
        """The requested seed, or a generated one announced on stderr."""
        if self.seed is None:
            self.seed = fresh_seed()
            print(f"seed: {self.seed}", file=sys.stderr)
        return self.seed


def _emit(payload: dict, fmt: str = "json", frame: pd.DataFrame = None):
    if fmt == "csv" and frame is not None:
        sys.stdout.write(csv_text(frame, header=_flat_header(payload)))
    else:
        sys.stdout.write(dumps(payload))


def _flat_header(payload: dict) -> dict:
    keys = ("artifact_version", "seed", "spec_hash", "input_hash")
    return {k: payload[k] for k in keys if k in payload}


def cmd_bounds(config: RunConfig) -> int:
    opts = config.options
    if opts["rr"] is not None:
        if opts["p1"] is not None or opts["p0"] is not None:
            raise ValidationError("give either --rr or --p1/--p0, not both", field="rr")
        if not opts["rr"] >= 0:
            raise ValidationError(f"rr must be nonnegative, got {opts['rr']!r}", field="rr")
        inputs = {"rr": opts["rr"]}
        rr = opts["rr"]
        lower, upper = pc_lower(rr), 1.0
    else:
        if opts["p1"] is None or opts["p0"] is None:
            raise ValidationError("bounds needs --p1 and --p0, or --rr", field="p1")
        inputs = {"p1": opts["p1"], "p0": opts["p0"]}
        m = MarginalChances(p1=opts["p1"], p0=opts["p0"])
        interval = pc_bounds(m)
        rr = risk_ratio(m).value
        lower, upper = interval.lower, interval.upper

    exceeds_half, note = balance_of_probabilities(UncertaintyInterval(lower, upper))
    payload = artifact_header(input_hash=content_hash(inputs))
    payload.update(
        {"lower": lower, "upper": upper, "rr": rr, "exceeds_half": exceeds_half, "note": note}
    )
    frame = pd.DataFrame([{"lower": lower, "upper": upper, "rr": rr, "exceeds_half": exceeds_half}])
    _emit(payload, config.fmt, frame)
    return EXIT_OK


def cmd_pcstar(config: RunConfig) -> int:
    opts = config.options
    interval = pc_star_bounds(ExposureChances(phi=opts["phi"], theta=opts["theta"]))
    payload = artifact_header(input_hash=content_hash({"phi": opts["phi"], "theta": opts["theta"]}))
    payload.update(
        {"lower": interval.lower, "upper": interval.upper, "flags": list(interval.flags)}
    )
    frame = pd.DataFrame([{"lower": interval.lower, "upper": interval.upper}])
    _emit(payload, config.fmt, frame)
    return EXIT_OK


def cmd_study(config: RunConfig) -> int:
    path = config.inputs[0] if config.inputs else DATA_DIR / "table1.json"
    records = ingest(path)
    rows = measures_report(records, correction=config.options["correction"])
    header = artifact_header(input_hash=content_hash({"records": [r.to_dict() for r in records]}))
    if config.fmt == "csv":
        sys.stdout.write(measures_to_csv(rows, header=header))
    else:
        payload = dict(header)
        payload["records"] = rows
        sys.stdout.write(dumps(payload))
    return EXIT_OK


def _individual_interval(spec, draws: DrawSet):
    if spec is not None and spec.mode is Mode.DIRECT:
        phi_bar, theta_bar = posterior_expectations(spec)
    else:
        phi_bar, theta_bar = expected_chances(draws)
    interval = individual_focused_interval(phi_bar, theta_bar)
    return {
        "phi_bar": phi_bar,
        "theta_bar": theta_bar,
        "lower": interval.lower,
        "upper": interval.upper,
    }


def _grid(opts: dict) -> np.ndarray:
    points = opts.get("grid_points") or GRID_POINTS
    if points < 2:
        raise ValidationError(f"grid needs at least 2 points, got {points}", field="grid_points")
    return np.linspace(0.0, 1.0, points)


def cmd_posterior(config: RunConfig) -> int:
    opts = config.options
    spec, document = load_model_spec(config.inputs[0])
    try:
        settings = SamplingSettings.from_dict(
            document,
            n=opts["n"],
            seed=config.seed,
            burn_in=opts["burn_in"],
            thin=opts["thin"],
            workers=opts["workers"],
        )
    except TypeError as e:
        raise InvalidSpec(f"malformed sampling settings: {e}") from None
    config.seed = settings.seed
    seed = config.resolve_seed()

    draws = sample_draws(
        spec,
        n=settings.n,
        seed=seed,
        burn_in=settings.burn_in,
        thin=settings.thin,
        workers=settings.workers,
    )
    summary = summarize(draws)
    header = draws.header()
    out = config.output_dir

    draws.to_npz(out / "draws.npz")
    if config.fmt == "csv":
        draws.to_csv(out / "draws.csv")
    write_coverage(out / "coverage.csv", coverage(draws, _grid(opts)), header)
    k = min(SUBSAMPLE_SIZE, draws.n)
    write_csv(
        out / "subsample.csv",
        subsample_frame(ordered_subsample(draws, k, draws.n // k)),
        header=header,
    )
    write_densities(out, draws, header, bins=opts["bins"])
    individual = _individual_interval(spec, draws)
    write_summary(
        out / "summary.json",
        summary,
        header,
        individual_focused=individual,
        sampling={"burn_in": settings.burn_in, "thin": settings.thin},
    )
    logger.info(f"posterior artifacts written to {out}")

    payload = dict(header)
    payload.update(
        {
            "prob_lower_zero": summary.prob_lower_zero,
            "upper_mean": summary.upper_mean,
            "lower_mean_given_pos": summary.lower_mean_given_pos,
            "length_mean": summary.length_mean,
            "individual_focused": individual,
        }
    )
    sys.stdout.write(dumps(payload))
    return EXIT_OK


def _load_draws(path: Path) -> DrawSet:
    if path.suffix == ".csv":
        return DrawSet.from_csv(path)
    return DrawSet.from_npz(path)


def cmd_coverage(config: RunConfig) -> int:
    draws = _load_draws(config.inputs[0])
    curve = coverage(draws, _grid(config.options))
    header = draws.header()
    frame = curve.to_frame()
    write_coverage(config.output_dir / "coverage.csv", curve, header)
    if config.fmt == "csv":
        sys.stdout.write(csv_text(frame, header))
    else:
        payload = dict(header)
        payload["coverage"] = {"p": curve.grid, "coverage": curve.values}
        sys.stdout.write(dumps(payload))
    return EXIT_OK


def cmd_simulate(config: RunConfig) -> int:
    opts = config.options
    document = read_json(config.inputs[0])
    if not isinstance(document, dict):
        raise InvalidSpec("population spec must be a JSON object")
    document = dict(document)
    if opts["n"] is not None:
        document["n"] = opts["n"]
    if config.seed is not None:
        document["seed"] = config.seed
    elif "seed" not in document:
        document["seed"] = config.resolve_seed()
    spec = PopulationSpec.from_dict(document)
    if opts["exogenize"]:
        spec = exogenized(spec)

    tally = simulate(spec, workers=opts["workers"])
    report = containment(tally, sigmas=opts["sigmas"])
    header = artifact_header(seed=spec.seed, spec_hash=content_hash(spec.to_dict()))
    write_csv(config.output_dir / "tally.csv", tally.to_frame(), header=header)

    payload = dict(header)
    payload["population"] = spec.to_dict()
    payload["containment"] = report.to_dict()
    write_json(config.output_dir / "containment.json", payload)
    sys.stdout.write(dumps(payload))
    return EXIT_OK


def cmd_report(config: RunConfig) -> int:
    draws = _load_draws(config.inputs[0])
    summary = summarize(draws)
    payload = draws.header()
    payload["summary"] = summary.to_dict()
    payload["coverage_at_zero"] = coverage(draws, [0.0]).values[0]
    payload["prob_lower_zero"] = prob_lower_zero(draws)
    if "theta" in draws.chances:
        payload["individual_focused"] = _individual_interval(None, draws)
    if config.options["bins"] is not None:
        write_densities(config.output_dir, draws, draws.header(), bins=config.options["bins"])
    if config.fmt == "csv":
        sys.stdout.write(csv_text(pd.DataFrame([summary.to_dict()]), _flat_header(payload)))
    else:
        sys.stdout.write(dumps(payload))
    return EXIT_OK


HANDLERS = {
    "bounds": cmd_bounds,
    "pcstar": cmd_pcstar,
    "study": cmd_study,
    "posterior": cmd_posterior,
    "coverage": cmd_coverage,
    "simulate": cmd_simulate,
    "report": cmd_report,
}


def _seed(value: str) -> int:
    try:
        seed = int(value)
    except ValueError:
        raise argparse.ArgumentTypeError(f"seed must be an integer, got {value!r}") from None
    if not 0 <= seed < 2**64:
        raise argparse.ArgumentTypeError(f"seed must fit in 64 unsigned bits, got {seed}")
    return seed


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument(
        "-v", "--verbose", action="count", default=0, help="-v for info, -vv for debug logs"
    )
    common.add_argument(
        "--output-dir",
        default=os.environ.get(OUTPUT_DIR_ENV, "."),
        help=f"artifact directory (default ${OUTPUT_DIR_ENV} or .)",
    )
    common.add_argument("--format", choices=("json", "csv"), default="json")

    parser = argparse.ArgumentParser(
        prog="pcbounds",
        description="Bounds on the probability of causation, from data to posterior summaries.",
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog="Examples:\n"
        "  pcbounds bounds --p1 0.30 --p0 0.12\n"
        "  pcbounds study pcbounds/data/table1.json --format csv\n"
        "  pcbounds posterior pcbounds/data/prior1_direct.json --seed 1\n",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("bounds", parents=[common], help="PC bounds from arm response chances")
    p.add_argument("--p1", type=float, help="response chance with exposure")
    p.add_argument("--p0", type=float, help="response chance without exposure")
    p.add_argument("--rr", type=float, help="risk ratio (lower bound only)")

    p = sub.add_parser("pcstar", parents=[common], help="PC* bounds from (phi, theta)")
    p.add_argument("--phi", type=float, required=True)
    p.add_argument("--theta", type=float, required=True)

    p = sub.add_parser("study", parents=[common], help="association measures for study records")
    p.add_argument("input", nargs="?", help="study JSON (default: bundled table1.json)")
    p.add_argument("--correction", action="store_true", help="apply the 0.5 zero-cell correction")

    p = sub.add_parser("posterior", parents=[common], help="sample and summarise PC* intervals")
    p.add_argument("input", help="ModelSpec JSON")
    p.add_argument("--seed", type=_seed)
    p.add_argument("--n", type=int)
    p.add_argument("--burn-in", type=int)
    p.add_argument("--thin", type=int)
    p.add_argument("--workers", type=int)
    p.add_argument("--grid-points", type=int, default=GRID_POINTS)
    p.add_argument("--bins", type=int, default=HISTOGRAM_BINS, help="histogram bins on [0, 1]")

    p = sub.add_parser("coverage", parents=[common], help="coverage curve of saved draws")
    p.add_argument("input", help="draw set (.npz or .csv)")
    p.add_argument("--grid-points", type=int, default=GRID_POINTS)

    p = sub.add_parser("simulate", parents=[common], help="finite-population containment check")
    p.add_argument("input", help="PopulationSpec JSON")
    p.add_argument("--seed", type=_seed)
    p.add_argument("--n", type=int)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--sigmas", type=float, default=3.0)
    p.add_argument(
        "--exogenize", action="store_true", help="replace exposure by its marginal rate"
    )

    p = sub.add_parser("report", parents=[common], help="summary of saved draws")
    p.add_argument("input", help="draw set (.npz or .csv)")
    p.add_argument("--bins", type=int, help="also write histogram CSVs with this many bins")

    return parser


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    level = {0: logging.WARNING, 1: logging.INFO}.get(args.verbose, logging.DEBUG)
    logging.basicConfig(
        level=level, stream=sys.stderr, format="%(levelname)s %(name)s: %(message)s"
    )

    try:
        config = RunConfig.from_args(args)
        return HANDLERS[config.command](config)
    except ValidationError as e:
        where = f" [{e.field}]" if e.field else ""
        print(f"error: {type(e).__name__}: {e}{where}", file=sys.stderr)
        return EXIT_VALIDATION
    except (ArtifactIOError, OSError) as e:
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_IO
    except PCBoundsError as e:
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_VALIDATION
    except ValueError as e:
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
