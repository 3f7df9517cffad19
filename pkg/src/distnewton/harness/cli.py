"""Command-line entry point.

Exit codes: 0 success, 2 configuration error, 3 divergence detected,
4 numerical failure.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .config import ConfigError, load_config
from .experiment import (EXIT_CONFIG, EXIT_NUMERICAL, INPUT_ERRORS, NUMERICAL_ERRORS, estimate_spectrum,
                         run_experiment, run_scan)
from .presets import PRESETS, run_preset
from .summary import SummaryError, summarize

log = logging.getLogger("distnewton")


def _parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, help="override the instance seed")
    common.add_argument("--rounds", type=int, help="override the number of rounds")
    common.add_argument("--out", type=Path, help="output directory")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="distnewton", description="Distributed Newton consensus experiments.")
    sub = p.add_subparsers(dest="command", required=True)
    for name, text in (("run", "run one configured experiment"),
                       ("scan-alpha", "scan the deflated local rate over step sizes"),
                       ("estimate-spectrum", "second eigenvalue of the weight matrix")):
        sp = sub.add_parser(name, parents=[common], help=text)
        sp.add_argument("config", type=Path)
    sp = sub.add_parser("presets", parents=[common], help="canned comparison studies")
    sp.add_argument("name", choices=sorted(PRESETS))
    sp = sub.add_parser("summarize", help="summary record of a trace CSV")
    sp.add_argument("trace", type=Path)
    return p


def _config(args):
    cfg = load_config(args.config)
    changes = {k: getattr(args, k) for k in ("seed", "rounds", "out") if getattr(args, k) is not None}
    return cfg.replace(**changes) if changes else cfg


def _dispatch(args) -> int:
    if args.command == "summarize":
        s = summarize(args.trace)
        for k, v in s.as_row().items():
            print(f"{k},{'' if v is None else v}")
        return 0
    if args.command == "presets":
        out = args.out if args.out is not None else Path("out") / args.name
        outcome = run_preset(args.name, out, args.seed, args.rounds)
        for rec in outcome.records:
            log.info("%s: %s, fitted ratio %.6g", rec.name, rec.result.trace.status, rec.summary.fitted_ratio)
    else:
        cfg = _config(args)
        if args.command == "run":
            outcome = run_experiment(cfg)
            rec = outcome.records[0]
            log.info("status %s, final max error %.3e, fitted ratio %.6g", rec.result.trace.status,
                     rec.summary.final_max_err, rec.summary.fitted_ratio)
        elif args.command == "scan-alpha":
            outcome = run_scan(cfg)
            print(f"alpha_opt,{outcome.scan.alpha_opt!r}")
        else:
            outcome, rep = estimate_spectrum(cfg)
            print(f"lambda2,{complex(rep.lambda2)!r}")
            print(f"lambda2_modulus,{abs(complex(rep.lambda2))!r}")
            print(f"offline_alpha,{rep.offline_alpha!r}")
            if rep.power_estimate is not None:
                print(f"power_estimate,{rep.power_estimate!r}")
    for f in outcome.files:
        log.info("wrote %s", f)
    return outcome.exit_code


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if getattr(args, "verbose", False) else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        return _dispatch(args)
    except (ConfigError, SummaryError, *INPUT_ERRORS) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NUMERICAL_ERRORS as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
