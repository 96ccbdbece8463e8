"""Command line entry point: ``dtbpde run <config> [options]`` and ``dtbpde --verify DIR``."""
from __future__ import annotations

import argparse
import os
import sys


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="dtbpde", description="Deep tangent bundle experiment runner")
    p.add_argument("--verify", metavar="DIR", help="recompute the digests listed in DIR/manifest.json")
    sub = p.add_subparsers(dest="command")
    r = sub.add_parser("run", help="run one experiment config")
    r.add_argument("config", help="config file or bundled config name")
    r.add_argument("--check", action="store_true", help="exit with status 2 when an acceptance check fails")
    r.add_argument("--scale", choices=("paper", "desk", "smoke"), default="desk")
    r.add_argument("--seed", type=int, help="override the config seed")
    r.add_argument("--out", help="output directory")
    r.add_argument("--deterministic", action="store_true",
                   help="single-threaded numerics and no timings in CSV output")
    r.add_argument("--cache", help="directory for pretrained parameters and reference solutions")
    r.add_argument("-v", "--verbose", action="store_true")
    sub.add_parser("list", help="list bundled configs")
    return p


def _single_thread():
    for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ[var] = "1"
    os.environ["XLA_FLAGS"] = (os.environ.get("XLA_FLAGS", "") +
                               " --xla_cpu_multi_thread_eigen=false intra_op_parallelism_threads=1").strip()


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.verify:
        from .runner import verify

        code, problems = verify(args.verify)
        for msg in problems:
            print(msg)
        print("verify: ok" if code == 0 else "verify: FAILED")
        return code
    if args.command == "list":
        from .config import bundled_configs

        for name, path in bundled_configs().items():
            print(f"{name}\t{path}")
        return 0
    if args.command != "run":
        build_parser().print_help()
        return 1
    if args.deterministic:
        # has to happen before numpy / jax spin up their thread pools
        _single_thread()
    from .runner import run

    code, _ = run(args.config, args.scale, args.seed, args.out, args.deterministic, args.check, args.verbose,
                  args.cache)
    return code


if __name__ == "__main__":
    sys.exit(main())
