"""Command-line driver: ``qtemplate --experiment NAME --seed S --out DIR``.

Exit codes: 0 success, 1 usage or bad input, 2 capacity, 3 internal error.
Failures print a JSON object ``{"error": ..., "type": ..., "exit_code": ...}``
on stderr and, when the output directory exists, into ``error.json``.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import io as qio
from .errors import (
    CapacityError,
    ContractViolation,
    MalformedFileError,
    PreconditionError,
    SchemaError,
    UnsupportedAction,
)
from .experiments import EXPERIMENTS, RunConfig, run

EXIT_OK, EXIT_USAGE, EXIT_CAPACITY, EXIT_INTERNAL = 0, 1, 2, 3

USAGE_ERRORS = (ContractViolation, PreconditionError, SchemaError, MalformedFileError,
                UnsupportedAction, FileNotFoundError)


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ContractViolation(message)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="qtemplate", description="Template estimation experiments in quotient spaces.")
    p.add_argument("--config", help="JSON file with any subset of the options below")
    p.add_argument("--experiment", choices=EXPERIMENTS)
    p.add_argument("--n", type=int, help="dimension N")
    p.add_argument("--i", type=int, help="sample size I")
    p.add_argument("--sigma", type=float, help="noise level")
    p.add_argument("--seed", type=int, help="mandatory RNG seed")
    p.add_argument("--template", help="step, smooth, or a vector CSV path")
    p.add_argument("--action", choices=("cyclic_shift", "rotation", "trivial",
                                        "affine_translation", "conjugated_cyclic"))
    p.add_argument("--out", help="output directory")
    p.add_argument("--threads", type=int)
    p.add_argument("--reps", type=int, help="Monte-Carlo repetitions (default 8)")
    p.add_argument("--n-mc", dest="n_mc", type=int, help="Monte-Carlo draws")
    p.add_argument("--start", help="max-max start: Y<k> or mean (default Y1)")
    p.add_argument("--n-starts", dest="n_starts", type=int)
    p.add_argument("--checkpoints", type=lambda s: [int(v) for v in s.split(",")])
    p.add_argument("--sigmas", type=lambda s: [float(v) for v in s.split(",")])
    p.add_argument("--subspace-dim", dest="subspace_dim", type=int)
    p.add_argument("--omega", type=float)
    p.add_argument("--sigma-factor", dest="sigma_factor", type=float)
    return p


def config_from_args(argv) -> RunConfig:
    args = vars(build_parser().parse_args(argv))
    base = {}
    path = args.pop("config")
    if path:
        base = qio.read_json(path)
        if not isinstance(base, dict):
            raise ContractViolation("config file must hold a JSON object")
    base.update({k: v for k, v in args.items() if v is not None})
    if "experiment" not in base or "seed" not in base:
        raise ContractViolation("--experiment and --seed are required")
    return RunConfig.from_dict(base)


def _fail(exc: BaseException, code: int, out) -> int:
    doc = {"error": str(exc), "type": type(exc).__name__, "exit_code": code}
    print(json.dumps(doc, sort_keys=True), file=sys.stderr)
    if out is not None and Path(out).is_dir():
        qio.write_json(doc, Path(out) / "error.json")
    return code


def main(argv=None) -> int:
    out = None
    try:
        cfg = config_from_args(sys.argv[1:] if argv is None else argv)
        out = cfg.out
        values = run(cfg)
    except USAGE_ERRORS as exc:
        return _fail(exc, EXIT_USAGE, out)
    except CapacityError as exc:
        return _fail(exc, EXIT_CAPACITY, out)
    except Exception as exc:  # noqa: BLE001 - reported as an internal error
        return _fail(exc, EXIT_INTERNAL, out)
    print(qio.dumps(values))
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
