"""Command line interface: run, mock-run, report."""

from __future__ import annotations

import argparse
import logging
import sys
from importlib import resources
from pathlib import Path

from .backends import HttpPolicyClient, HttpVerifierClient, load_mock_fixture
from .config import load_config, normalize_mode
from .errors import StepSearchError
from .grading import GraderClient
from .harness import build_report, load_dataset, make_manifest, run

log = logging.getLogger(__name__)


def bundled_fixture(name: str) -> Path:
    return Path(str(resources.files("stepsearch").joinpath("fixtures", name)))


def _add_run_flags(parser: argparse.ArgumentParser, *, mock: bool) -> None:
    parser.add_argument("--config", help="JSON config file; defaults are built in")
    parser.add_argument("--dataset", help="JSONL dataset file",
                        default=None if not mock else str(bundled_fixture("questions10.jsonl")))
    parser.add_argument("--mode", choices=["hybrid", "mcts-bon", "bon-refine", "solution-level", "best-of-1"])
    parser.add_argument("--n-samples", type=int)
    parser.add_argument("--n-paths", type=int)
    parser.add_argument("--repeat", type=int, default=1, help="number of repeat runs")
    parser.add_argument("--resume", action="store_true", help="skip questions already in the results file")
    parser.add_argument("--out", default="results.jsonl", help="results file (JSONL)")
    parser.add_argument("--skip-threshold", type=float, help="refinement skip threshold override")
    if mock:
        parser.add_argument("--fixture", default=str(bundled_fixture("mock_script.jsonl")),
                            help="mock script fixture (JSONL)")


def _overrides_from_args(args: argparse.Namespace) -> dict:
    overrides: dict = {"search": {}, "refinement": {}, "run": {}}
    if args.mode:
        overrides["search"]["mode"] = normalize_mode(args.mode)
    if args.n_samples is not None:
        overrides["search"]["n_samples"] = args.n_samples
    if args.n_paths is not None:
        overrides["search"]["n_paths"] = args.n_paths
    if args.skip_threshold is not None:
        overrides["refinement"]["skip_threshold"] = args.skip_threshold
    return overrides


def _out_path(base: str, repeat: int, index: int) -> Path:
    if repeat == 1:
        return Path(base)
    p = Path(base)
    return p.with_name(f"{p.stem}.r{index}{p.suffix}")


def _execute(args: argparse.Namespace, *, mock: bool) -> int:
    overrides = _overrides_from_args(args)
    if mock:
        # Scripted runs must be byte-reproducible; keep a single worker.
        overrides["run"]["parallelism"] = 1
    config = load_config(args.config, overrides)
    if not args.dataset:
        print("error: --dataset is required", file=sys.stderr)
        return 2
    dataset = load_dataset(args.dataset)

    grader = None
    if config.grader_command and not mock:
        grader = GraderClient(config.grader_command, timeout=config.grader_timeout)

    exit_code = 0
    try:
        for index in range(args.repeat):
            if mock:
                policy, verifier = load_mock_fixture(args.fixture)
            else:
                transport = config.raw["transport"]
                policy = HttpPolicyClient(
                    config.raw["policy"]["url"], config.raw["policy"]["model"],
                    seed=config.seed, auth_token=config.raw["policy"]["token"],
                    timeout=transport["timeout"], max_attempts=transport["max_attempts"],
                    backoff=transport["backoff"], max_in_flight=transport["max_in_flight"],
                )
                verifier = HttpVerifierClient(
                    config.raw["verifier"]["url"], config.raw["verifier"]["model"],
                    auth_token=config.raw["verifier"]["token"],
                    timeout=transport["timeout"], max_attempts=transport["max_attempts"],
                    backoff=transport["backoff"], max_in_flight=transport["max_in_flight"],
                )
            out = _out_path(args.out, args.repeat, index)
            manifest = make_manifest(config, args.dataset, repeat_index=index)
            report = run(manifest, dataset, policy, verifier, config, out,
                         resume=args.resume, grader=grader)
            print(f"# results: {out}")
            print(report.to_text())
    finally:
        if grader is not None:
            grader.close()
    return exit_code


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(prog="stepsearch",
                                     description="Verifier-guided step-level search over LLM backends")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    run_parser = sub.add_parser("run", help="run against live HTTP backends (unscored harness)")
    _add_run_flags(run_parser, mock=False)

    mock_parser = sub.add_parser("mock-run", help="run against scripted mock backends")
    _add_run_flags(mock_parser, mock=True)

    report_parser = sub.add_parser("report", help="aggregate a results file")
    report_parser.add_argument("--results", required=True)

    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "report":
            print(build_report(args.results).to_text())
            return 0
        return _execute(args, mock=args.command == "mock-run")
    except StepSearchError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
