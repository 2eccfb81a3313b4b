"""``rotorfluc`` command line: run, calibrate, oracle."""

from __future__ import annotations

import argparse
import logging
import os
import re
import sys
from dataclasses import replace

EXIT_OK = 0
EXIT_FAILED_CHECK = 1
EXIT_CONFIG = 2
EXIT_CONVERGENCE = 3
EXIT_IO = 4

log = logging.getLogger("rotorfluc")


def _u64(s: str) -> int:
    v = int(s, 0)
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError("seed must fit in an unsigned 64-bit integer")
    return v


def _target(s: str) -> float:
    v = float(s)
    if not 1.0 / 3.0 < v < 1.0:
        raise argparse.ArgumentTypeError("target must lie in (1/3, 1)")
    return v


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="rotorfluc", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run quantum and/or classical simulations")
    r.add_argument("--config", required=True)
    r.add_argument("--mode", choices=("quantum", "classical", "both"))
    r.add_argument("--out")
    r.add_argument("--seed", type=_u64)

    c = sub.add_parser("calibrate", help="fit delta_alpha to a target adiabatic peak <cos^2>")
    c.add_argument("--config", required=True)
    c.add_argument("--target", type=_target, default=0.8)
    c.add_argument("--write", metavar="PATH", help="write the config with the calibrated value")

    o = sub.add_parser("oracle", help="run built-in consistency checks")
    from .oracle import CHECKS

    o.add_argument("--check", choices=(*CHECKS, "all"), default="all")
    return p


def _thread_limit():
    n = os.environ.get("ROTORFLUC_THREADS")
    if not n:
        return None
    from threadpoolctl import threadpool_limits

    return threadpool_limits(limits=max(1, int(n)))


def _cmd_run(args) -> int:
    from .config import load_config
    from .runner import run

    cfg = load_config(args.config)
    if args.mode:
        cfg = replace(cfg, mode=args.mode)
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
    result = run(cfg, args.out)
    print(f"wrote {len(result.files) + 1} files to {result.config.output_dir}")
    return EXIT_OK


def _cmd_calibrate(args) -> int:
    from pathlib import Path

    from .config import load_config, resolve_config_path
    from .runner import calibrate_delta_alpha

    path = resolve_config_path(args.config)
    cfg = load_config(path)
    res = calibrate_delta_alpha(cfg, args.target)
    print(f"delta_alpha_A3 = {res.delta_alpha_A3!r}  (peak {res.peak:.6f}, {res.iterations} bisections, J_max {res.J_max})")
    if args.write:
        text = path.read_text()
        line = f"molecule.delta_alpha_A3 = {res.delta_alpha_A3!r}"
        pattern = re.compile(r"^molecule\.delta_alpha_A3\s*=.*$", re.M)
        text = pattern.sub(line, text) if pattern.search(text) else text.rstrip("\n") + "\n" + line + "\n"
        Path(args.write).write_text(text)
    return EXIT_OK


def _cmd_oracle(args) -> int:
    from .oracle import run_checks

    results = run_checks(args.check)
    for r in results:
        print(r.line())
    return EXIT_OK if all(r.passed for r in results) else EXIT_FAILED_CHECK


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    from .classical import StepFailure as ClassicalStepFailure
    from .config import ConfigError
    from .quantum import NoConvergence, StepFailure, TruncationOverflow
    from .runner import CalibrationError

    handlers = {"run": _cmd_run, "calibrate": _cmd_calibrate, "oracle": _cmd_oracle}
    limiter = _thread_limit()
    try:
        return handlers[args.command](args)
    except ConfigError as exc:
        log.error("config error: %s", exc)
        return EXIT_CONFIG
    except (NoConvergence, TruncationOverflow, StepFailure, ClassicalStepFailure, CalibrationError) as exc:
        log.error("convergence failure: %s", exc)
        return EXIT_CONVERGENCE
    except OSError as exc:
        log.error("I/O error: %s", exc)
        return EXIT_IO
    finally:
        if limiter is not None:
            limiter.restore_original_limits()


if __name__ == "__main__":
    sys.exit(main())
