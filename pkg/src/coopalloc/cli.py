"""Command line: ``coopalloc sim | solve | certify``.

Exit codes: 0 success, 1 infeasible instance (``solve``) or failed
certificate (``certify``), 2 invalid input.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from typing import List, Optional

from . import harness, jspa, oracle
from .model import Allocation, Instance, InfeasibleInstance

EXIT_OK, EXIT_INFEASIBLE, EXIT_INVALID = 0, 1, 2


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_INVALID, f"{self.prog}: error: {message}\n")


def _eps_list(text: str) -> List[float]:
    try:
        vals = [float(v) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"bad epsilon list {text!r}") from exc
    if not vals or any(v <= 0 for v in vals):
        raise argparse.ArgumentTypeError("epsilon list must hold positive numbers")
    return vals


def _load_json(path: str) -> dict:
    with open(path) as fh:
        return json.load(fh)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="coopalloc", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="cmd", required=True, parser_class=_Parser)

    s = sub.add_parser("sim", help="Monte-Carlo comparison of JSPA, JMPC and ESP")
    s.add_argument("--bs", type=int, required=True)
    s.add_argument("--ue", type=int, default=20)
    s.add_argument("--epsilon", type=_eps_list, default=_eps_list("0.2,0.4,0.6,0.8,1.0,1.2,1.4"))
    s.add_argument("--snapshots", type=int, default=1000)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--b0-hz", type=float, default=1e7)
    s.add_argument("--p0-w", type=float, default=1.0)
    s.add_argument("--inner-radius-m", type=float, default=600.0)
    s.add_argument("--workers", type=int, default=1)
    s.add_argument("--out", required=True)
    s.add_argument("--format", choices=("csv", "json"), default="csv")

    s = sub.add_parser("solve", help="optimize one instance file, print the allocation as JSON")
    s.add_argument("--instance", required=True)
    s.add_argument("--out", help="write the allocation here instead of stdout")

    s = sub.add_parser("certify", help="check an allocation against an instance")
    s.add_argument("--instance", required=True)
    s.add_argument("--allocation", required=True)
    return p


def _sim(args) -> int:
    sc = harness.Scenario(num_bs=args.bs, num_ue=args.ue, inner_radius_m=args.inner_radius_m,
                          p0_watts=args.p0_w, b0_hz=args.b0_hz, snapshots=args.snapshots,
                          seed=args.seed)
    res = harness.run_monte_carlo(sc, args.epsilon, workers=args.workers)
    harness.emit(res, args.out, args.format)
    return EXIT_OK


def _solve(args) -> int:
    try:
        inst = Instance.from_dict(_load_json(args.instance))
    except InfeasibleInstance as exc:
        print(json.dumps({"feasible": False, "reason": str(exc)}))
        return EXIT_INFEASIBLE
    alloc = jspa.optimize(inst)
    text = json.dumps(alloc.to_dict(), indent=1)
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(text + "\n")
    else:
        print(text)
    return EXIT_OK if alloc.feasible else EXIT_INFEASIBLE


def _certify(args) -> int:
    inst = Instance.from_dict(_load_json(args.instance))
    alloc = Allocation.from_dict(_load_json(args.allocation))
    if alloc.x.shape != inst.gamma.shape:
        raise ValueError(f"allocation shape {alloc.x.shape} does not match instance "
                         f"{inst.gamma.shape}")
    cert = oracle.certify(inst, alloc)
    print(json.dumps({"lemma1_ok": cert.lemma1_ok, "lemma2_ok": cert.lemma2_ok,
                      "no_improving_shift": cert.no_improving_shift, "kkt_ok": cert.kkt_ok},
                     indent=1))
    return EXIT_OK if cert.all_ok else EXIT_INFEASIBLE


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING)
    handler = {"sim": _sim, "solve": _solve, "certify": _certify}[args.cmd]
    try:
        return handler(args)
    except (OSError, ValueError, KeyError, TypeError, json.JSONDecodeError) as exc:
        if isinstance(exc, InfeasibleInstance):
            print(json.dumps({"feasible": False, "reason": str(exc)}))
            return EXIT_INFEASIBLE
        print(f"coopalloc: error: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
