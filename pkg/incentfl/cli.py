"""
The batch driver: ``incentfl simulate|analyze|game|verify``.

Each command collects its output files in an OutputCache, and writes
them to the output directory in one step at the end.
"""

import io
import os
import csv
import sys
import json
import math
import logging
import argparse
from dataclasses import dataclass, field
from typing import Dict, List

from . import verification
from ._coreutils import ConfigError, DegenerateError, IncentFLError, logger_set_level_callbacks
from ._diagnostics import diagnostics, dict_to_text
from ._version import __version__
from .config import ExperimentConfig, load_config
from .enums import MechanismMode
from .game import best_response_dynamics, compare_mechanisms, game_report, verify_nash
from .mechanism import (
    check_nestedness,
    contribution_accuracy_correlation,
    make_clients,
    performance_tradeoff,
    rounds_to_csv,
    run_training,
)
from .synthdata import generate_task
from .utility import (
    UTILITY_CURVE_HEADER,
    check_concavity,
    check_eq_large,
    compare_optima,
    utility_curve,
)


__all__ = ["main", "cmd_simulate", "cmd_analyze", "cmd_game", "cmd_verify", "RunReport"]

logger = logging.getLogger("incentfl")


class OutputCache:
    """An in-memory file cache for the outputs of a command, so that
    results are written in one go, with LF line endings.
    """

    def __init__(self):
        self._file_contents = {}

    @property
    def filenames_written(self):
        """The (relative) filenames that have been written to the cache."""
        return sorted(self._file_contents)

    def write(self, fname, text):
        """Write to a (virtual) file. The text is a string with LF newlines."""
        self._file_contents[fname] = text

    def read(self, fname):
        return self._file_contents[fname]

    def write_to_disk(self, out_dir):
        """Write all files to the given directory, creating it if needed."""
        os.makedirs(out_dir, exist_ok=True)
        for fname in self.filenames_written:
            with open(os.path.join(out_dir, fname), "wb") as f:
                f.write(self._file_contents[fname].encode())


@dataclass
class RunReport:
    """The result of a command: the config, the output files and the summary."""

    command: str
    config: ExperimentConfig
    out_dir: str
    files: List[str] = field(default_factory=list)
    summary: Dict = field(default_factory=dict)

    @property
    def paths(self):
        return [os.path.join(self.out_dir, fname) for fname in self.files]

    @property
    def config_echo(self):
        return self.config.to_text()


def _json_safe(ob):
    # NaN and inf are not valid JSON
    if isinstance(ob, dict):
        return {str(key): _json_safe(val) for key, val in ob.items()}
    elif isinstance(ob, (list, tuple)):
        return [_json_safe(val) for val in ob]
    elif isinstance(ob, float) and not math.isfinite(ob):
        return None
    return ob


def to_json(ob):
    """Serialize to JSON text. Floats are written with the shortest repr
    that round-trips (at most 17 significant digits).
    """
    return json.dumps(_json_safe(ob), indent=2) + "\n"


def _resolve(config):
    if isinstance(config, ExperimentConfig):
        return config
    return load_config(config)


def _finish(command, config, cache, summary, out=None):
    out_dir = out or config["out"]
    cache.write("timings.json", to_json(diagnostics.timings.get_dict()))
    cache.write_to_disk(out_dir)
    return RunReport(command, config, out_dir, cache.filenames_written, summary)


# %% Commands


def cmd_simulate(config, out=None):
    """Run the mechanism simulation. Writes rounds.csv, summary.json and timings.json."""
    config = _resolve(config)
    diagnostics.timings.timer.reset()
    cache = OutputCache()

    local, validation = generate_task(config.task_spec)
    clients = make_clients(local)
    mechanism_cfg = config.mechanism_config
    result = run_training(clients, validation, config["rounds"], config.train_config, mechanism_cfg)
    cache.write("rounds.csv", rounds_to_csv(result.logs))

    final = result.logs[-1]
    violations = [v for log in result.logs for v in check_nestedness(log)]
    summary = {
        "command": "simulate",
        "config": config.to_text(runtime=False),
        "mode": mechanism_cfg.mode,
        "rounds": config["rounds"],
        "final": {
            e.client_id: {
                "d_i": e.d_i,
                "position": e.position,
                "acc_uploaded": e.acc_uploaded,
                "acc_distributed": e.acc_distributed,
            }
            for e in final.entries
        },
        "checks": {
            "nestedness_violations": len(violations),
            "nestedness_holds": not violations,
            "size_accuracy_spearman": contribution_accuracy_correlation(final),
        },
    }

    if config["mechanism.compare_vanilla"] and mechanism_cfg.mode == MechanismMode.incentive:
        vanilla_cfg = config.updated({"mechanism.mode": MechanismMode.vanilla}).mechanism_config
        vanilla = run_training(clients, validation, config["rounds"], config.train_config, vanilla_cfg)
        cache.write("rounds_vanilla.csv", rounds_to_csv(vanilla.logs))
        summary["tradeoff"] = performance_tradeoff(final, vanilla.logs[-1])

    cache.write("summary.json", to_json(summary))
    return _finish("simulate", config, cache, summary, out)


def _concavity_dict(report):
    return {
        "verdict": "concave" if report.concave else "not concave",
        "max_second_deriv": report.max_second,
        "argmax_second_deriv": report.argmax_second,
        "kinks": report.kinks,
        "active_from": report.active_from,
    }


def cmd_analyze(config, out=None):
    """Analyze the utility model. Writes utility_curve.csv and analysis.json."""
    config = _resolve(config)
    diagnostics.timings.timer.reset()
    cache = OutputCache()
    params = config.utility_params

    with diagnostics.timings.timer.phase("analyze"):
        f = io.StringIO()
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(UTILITY_CURVE_HEADER)
        for row in utility_curve(params):
            writer.writerow([repr(v) for v in row])
        cache.write("utility_curve.csv", f.getvalue())

        try:
            eq_large = check_eq_large(params)._asdict()
        except DegenerateError as err:
            logger.warning(f"Large-derivative check is degenerate: {err}")
            eq_large = {"degenerate": True, "message": str(err)}

        optima = compare_optima(params)
        summary = {
            "command": "analyze",
            "config": config.to_text(runtime=False),
            "cap": params.cap,
            "eq_large": eq_large,
            "concavity": {
                "incentive": _concavity_dict(check_concavity(params, MechanismMode.incentive)),
                "vanilla": _concavity_dict(
                    check_concavity(params, MechanismMode.vanilla, optima.d_fixed)
                ),
            },
            "optimal": {
                "d_opt": optima.d_opt,
                "d_opt_star": optima.d_opt_star,
                "d_fixed": optima.d_fixed,
                "grid_step": optima.grid_step,
                "d_opt_ge_d_opt_star": optima.holds,
            },
        }
    cache.write("analysis.json", to_json(summary))
    return _finish("analyze", config, cache, summary, out)


def cmd_game(config, out=None):
    """Play the contribution game. Writes game.json."""
    config = _resolve(config)
    diagnostics.timings.timer.reset()
    cache = OutputCache()
    params = config.utility_params
    cfg = config.game_config()

    with diagnostics.timings.timer.phase("game"):
        dynamics = best_response_dynamics(config.game_profile(), cfg, params)
        verdict = verify_nash(dynamics.final, cfg, params)
        comparison = compare_mechanisms(params, cfg, dynamics.final)
    summary = {
        "command": "game",
        "config": config.to_text(runtime=False),
        "start": config["game.start"],
    }
    summary.update(game_report(dynamics, verdict, comparison))
    cache.write("game.json", to_json(summary))
    return _finish("game", config, cache, summary, out)


def cmd_verify(file=None):
    """Run the built-in property suite. Returns the exit status."""
    results = verification.run_checks(file=file)
    return 0 if all(r.passed for r in results) else 1


COMMANDS = {"simulate": cmd_simulate, "analyze": cmd_analyze, "game": cmd_game}


# %% Entry point


def build_parser():
    parser = argparse.ArgumentParser(
        prog="incentfl",
        description="Simulate and analyze a rank-based incentive mechanism for federated learning.",
    )
    parser.add_argument("--version", action="version", version=f"incentfl {__version__}")
    parser.add_argument("command", choices=["simulate", "analyze", "game", "verify"])
    parser.add_argument("--config", help="Path of the experiment config file.")
    parser.add_argument("--out", help="Output directory (overrides the config).")
    parser.add_argument("--seed", type=int, help="Seed (overrides the config).")
    parser.add_argument("--threads", type=int, help="Number of threads (overrides the config).")
    verbosity = parser.add_mutually_exclusive_group()
    verbosity.add_argument("-v", "--verbose", action="store_true", help="Log progress.")
    verbosity.add_argument("-q", "--quiet", action="store_true", help="Only log errors.")
    return parser


def _setup_logging(args):
    logger = logging.getLogger("incentfl")
    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(logging.Formatter("%(levelname)s: %(message)s"))
    handler.setLevel(logger.level)
    logger_set_level_callbacks.append(handler.setLevel)
    logger.addHandler(handler)
    if args.verbose:
        logger.setLevel(logging.INFO)
    elif args.quiet:
        logger.setLevel(logging.ERROR)
    return handler


def _load_with_overrides(args):
    if not args.config:
        raise ConfigError("--config", f"required for the {args.command} command")
    config = load_config(args.config)
    overrides = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.threads is not None:
        overrides["mechanism.threads"] = args.threads
    if args.out is not None:
        overrides["out"] = args.out
    return config.updated(overrides) if overrides else config


def main(argv=None):
    """Run the command line interface. Returns the exit status."""
    args = build_parser().parse_args(argv)
    handler = _setup_logging(args)
    try:
        if args.command == "verify":
            return cmd_verify()
        config = _load_with_overrides(args)
        report = COMMANDS[args.command](config)
        print(f"Wrote {', '.join(report.files)} to {report.out_dir}")
        overview = {key: val for key, val in report.summary.items() if key != "config"}
        for key, val in overview.items():
            if isinstance(val, dict) and all(not isinstance(v, dict) for v in val.values()):
                print(f"\n{key}:\n" + dict_to_text(_printable(val)))
        return 0
    except ConfigError as err:
        print(f"incentfl: config error: {err}", file=sys.stderr)
        return 2
    except (IncentFLError, OSError, ValueError) as err:
        print(f"incentfl: {err.__class__.__name__}: {err}", file=sys.stderr)
        return 1
    finally:
        logging.getLogger("incentfl").removeHandler(handler)
        logger_set_level_callbacks.remove(handler.setLevel)


def _printable(d):
    return {
        str(key): val if isinstance(val, (str, int, float, bool)) or val is None else str(val)
        for key, val in d.items()
    }
