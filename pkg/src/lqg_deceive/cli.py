"""``lqg-deceive`` command-line entry point.

Exit codes: 0 success, 1 computation error, 2 configuration error (missing
or invalid config, bad arguments).  Errors go to stderr as one JSON object
and, when ``--out`` is known, to ``error.json`` in that directory.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

from . import experiments
from .config import ConfigError, ExperimentConfig
from .serialization import dumps

LOG_ENV = "LQG_DECEIVE_LOG"
LEVELS = {"error": logging.ERROR, "info": logging.INFO, "debug": logging.DEBUG}


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse would print usage and exit 2 on its own
        raise ConfigError(message)


def _parser() -> argparse.ArgumentParser:
    p = _Parser(prog="lqg-deceive", description="Cost-falsification attacks on LQG learners.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp, need_config=True):
        sp.add_argument("--config", required=need_config, help="experiment config JSON")
        sp.add_argument("--out", default=None, help="output directory")
        sp.add_argument("--seed", type=int, default=None, help="override every seed in the config")
        return sp

    common(sub.add_parser("solve", help="optimal policy and value function"))
    common(sub.add_parser("bounds", help="perturbation constants and their empirical check"))
    sp = common(sub.add_parser("attack", help="minimal cost falsification for the target policy"))
    sp.add_argument("--dump-problem", default=None, metavar="PATH", help="write the conic problem as JSON")
    sp = common(sub.add_parser("feasibility", help="frequency-domain feasibility evidence"))
    sp.add_argument("--grid", type=int, default=None, help="unit-circle grid size")
    common(sub.add_parser("reproduce", help="full vehicle pipeline with graded summary"), need_config=False)
    sp = sub.add_parser("plotdata", help="CSV series from a reproduction directory")
    sp.add_argument("run_dir")
    return p


def _setup_logging() -> None:
    level = LEVELS.get(os.environ.get(LOG_ENV, "error").lower(), logging.ERROR)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)


def _config(args) -> ExperimentConfig:
    cfg = ExperimentConfig.load(args.config) if args.config else ExperimentConfig.default()
    return cfg.with_seed(args.seed)


def _default_out(args, cfg: ExperimentConfig) -> Path:
    if args.out:
        return Path(args.out)
    return Path(cfg.data.get("output_dir") or f"runs/{cfg.data['name']}") / args.command


def _fail(exc: BaseException, code: int, out: Path | None) -> int:
    payload = {**experiments.error_payload(exc), "exit_code": code}
    print(json.dumps(payload), file=sys.stderr)
    if out is not None:
        try:
            out.mkdir(parents=True, exist_ok=True)
            (out / "error.json").write_text(json.dumps(payload, indent=1) + "\n")
        except OSError:
            pass
    return code


def main(argv: list[str] | None = None) -> int:
    _setup_logging()
    out: Path | None = None
    try:
        args = _parser().parse_args(argv)
        if args.command == "plotdata":
            written = experiments.plotdata(args.run_dir)
            print(json.dumps({"written": written}, indent=1, sort_keys=True))
            return 0
        out = Path(args.out) if args.out else None
        cfg = _config(args)
        out = _default_out(args, cfg)
        if args.command == "solve":
            result = experiments.run_solve(cfg, out)
        elif args.command == "bounds":
            result = experiments.run_bounds(cfg, out)
        elif args.command == "attack":
            result = experiments.run_attack(cfg, out, args.dump_problem)
        elif args.command == "feasibility":
            result = experiments.run_feasibility(cfg, out, args.grid)
        else:
            summary = experiments.reproduce(cfg, out)
            result = {"all_pass": summary.all_pass, "stages": summary.stages,
                      "failed_checks": [c.name for c in summary.checks if not c.passed]}
            print(json.dumps(result, indent=1, sort_keys=True, default=str))
            return 0 if summary.all_pass else 1
        sys.stdout.write(dumps({"command": args.command, "out": str(out), "result": result}))
        return 0
    except ConfigError as exc:
        return _fail(exc, 2, out)
    except Exception as exc:  # noqa: BLE001 - every failure becomes structured JSON
        logging.getLogger(__name__).debug("unhandled", exc_info=True)
        return _fail(exc, 1, out)


if __name__ == "__main__":
    sys.exit(main())
