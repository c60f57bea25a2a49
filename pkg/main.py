"""
Command-line entry point.

    python main.py run fig2a --out results --jobs 4
    python main.py sweep fig8b --override osnr_sweep_db=[14,16,18] --symbols 4096
    python main.py validate fig2a
    python main.py selftest
"""
import argparse
import logging
import os
import sys
from typing import List, Optional

from services.errors import ConfigError, KkSimError
from services.experiment_service import ExperimentService, LinkScenario
from services.results_service import emit_results, scenario_from_manifest
from services.scenario_service import build_scenario, format_report, load_scenario, validate_report
from services.settings import __version__, get_settings

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_RUNTIME = 2

TEST_MODULES = [
    "test_signal_core.py",
    "test_tx_modem.py",
    "test_channel_model.py",
    "test_kk_receiver.py",
    "test_experiment_service.py",
    "test_scenario_service.py",
    "test_results_service.py",
]


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="kksim", description="Kramers-Kronig transceiver link simulations")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def scenario_command(name: str, help_text: str) -> argparse.ArgumentParser:
        p = sub.add_parser(name, help=help_text)
        p.add_argument("config", help="scenario YAML (path or name under scenarios/) or a run manifest")
        p.add_argument("--seed", type=int, default=None, help="override base_seed")
        p.add_argument("--symbols", type=int, default=None, help="override n_symbols")
        return p

    for name, help_text in (("run", "run a scenario"), ("sweep", "run a scenario with overrides")):
        p = scenario_command(name, help_text)
        p.add_argument("--out", default=None, help="output directory (default KKSIM_OUT_DIR)")
        p.add_argument("--jobs", type=int, default=None, help="worker processes (default KKSIM_JOBS)")
        p.add_argument("--no-progress", action="store_true", help="hide the progress bar")
        if name == "sweep":
            p.add_argument("--override", action="append", default=[], metavar="KEY=VALUE",
                           help="dotted scenario key, value parsed as YAML; repeatable")

    scenario_command("validate", "print derived link quantities without running")
    sub.add_parser("selftest", help="run the test suite")
    return parser


def _scenario(args) -> LinkScenario:
    if args.config.endswith(".json"):
        scenario = scenario_from_manifest(args.config)
        updates = {}
        if args.seed is not None:
            updates["base_seed"] = args.seed
        if args.symbols is not None:
            updates["n_symbols"] = args.symbols
        return build_scenario({**scenario.dict(), **updates}) if updates else scenario
    return load_scenario(args.config, getattr(args, "override", []), args.seed, args.symbols)


def _run(args) -> int:
    settings = get_settings()
    scenario = _scenario(args)
    jobs = args.jobs or settings.jobs
    out_dir = args.out or settings.out_dir
    service = ExperimentService(jobs=jobs, progress=not args.no_progress)
    logger.info(f"Running {scenario.name} ({scenario.scheme.value}) with {jobs} worker(s)")
    result = service.run(scenario)
    written = emit_results(result, os.path.join(out_dir, f"{scenario.name}.csv"), scenario)
    for kind, path in written.items():
        print(f"{kind:10s} {path}")
    return EXIT_OK


def _validate(args) -> int:
    print(format_report(validate_report(_scenario(args))))
    return EXIT_OK


def _selftest() -> int:
    import pytest

    root = os.path.dirname(os.path.abspath(__file__))
    code = pytest.main(["-q"] + [os.path.join(root, module) for module in TEST_MODULES])
    return EXIT_OK if code == 0 else EXIT_RUNTIME


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=getattr(logging, get_settings().log_level, logging.INFO))
    try:
        if args.command in ("run", "sweep"):
            return _run(args)
        if args.command == "validate":
            return _validate(args)
        return _selftest()
    except ConfigError as e:
        logger.error(f"Configuration error: {str(e)}")
        return EXIT_CONFIG
    except KkSimError as e:
        logger.error(f"Run failed: {str(e)}")
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
