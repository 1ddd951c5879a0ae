"""Command-line interface.

Subcommands::

    amcsim run <scenario.json>
    amcsim sweep <scenario.json> --axis <name> --values v1,v2,...
    amcsim check <scenario.json>
    amcsim poles <scenario.json>

Exit codes: 0 success, 1 accuracy or settling failure, 2 unstable
circuit, 3 invalid scenario. Nothing is written when validation fails.
"""
from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

from . import scenario as scn
from .device import ConductanceWindowError
from .stability import poles as pole_report

OUT_ENV = "AMCSIM_OUTPUT_DIR"


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="amcsim", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("scenario", help="scenario JSON file")
        sp.add_argument("--seed", type=int, default=None, help="override simulation.seed")

    def outputs(sp):
        sp.add_argument("--out", default=None,
                        help=f"output directory (default: scenario output_dir, then ${OUT_ENV}, then ./amcsim_out)")
        sp.add_argument("--timing", action="store_true", help="add wall-clock time to report.json")

    r = sub.add_parser("run", help="simulate one scenario")
    common(r)
    outputs(r)

    s = sub.add_parser("sweep", help="run a scenario over a list of values")
    common(s)
    outputs(s)
    s.add_argument("--axis", required=True,
                   help="dotted scenario field (delta, oa.gbwp_hz, device.levels ...), max_row_sum or bits")
    s.add_argument("--values", required=True, help="comma-separated values")

    c = sub.add_parser("check", help="validate and predict without simulating")
    common(c)

    q = sub.add_parser("poles", help="print the circuit poles")
    common(q)
    return p


def _out_dir(args, sc) -> Path:
    return Path(args.out or sc.output_dir or os.environ.get(OUT_ENV) or "amcsim_out")


def _load(args):
    sc = scn.load_scenario(args.scenario)
    if args.seed is not None:
        sc.simulation["seed"] = args.seed
    return sc


def _fail(problems) -> int:
    for line in problems:
        print(f"error: {line}", file=sys.stderr)
    return scn.EXIT_INVALID


def _check(args) -> int:
    """Report every finding, including validation problems, and never fail on them."""
    try:
        findings = {"valid": True, **scn.check(_load(args))}
    except scn.ScenarioError as exc:
        findings = {"valid": False, "problems": scn.validation_suggestions(exc)}
    except ValueError as exc:
        findings = {"valid": False, "problems": [str(exc)]}
    print(json.dumps(findings, indent=2, sort_keys=True, ensure_ascii=False))
    return scn.EXIT_OK


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    if args.command == "check":
        return _check(args)
    try:
        sc = _load(args)
        if args.command == "sweep":
            values = [float(v) for v in args.values.split(",") if v.strip()]
            if not values:
                raise scn.ScenarioError([("--values", "no values given")])
            scn.validate_axis(sc, args.axis)
            variants = [scn.apply_axis(sc, args.axis, v) for v in values]
            for v in variants:
                scn.build_system(v)
    except scn.ScenarioError as exc:
        return _fail(scn.validation_suggestions(exc))
    except ValueError as exc:
        return _fail([str(exc)])

    try:
        if args.command == "poles":
            system, _ = scn.build_system(sc)
            print(json.dumps(pole_report(system).to_dict(), indent=2, sort_keys=True))
            return scn.EXIT_OK
        if args.command == "run":
            outcome = scn.run(sc)
            out = _out_dir(args, sc)
            scn.write_outputs(outcome, out, timing=args.timing)
            rep = outcome.report
            print(f"{rep['topology']}: {rep['status']} "
                  f"(relative_error={rep.get('relative_error')}, settle_time_s={rep.get('settle_time_s')})")
            print(f"wrote {out / 'report.json'}")
            return outcome.exit_code
        rows = scn.sweep(sc, args.axis, values, _out_dir(args, sc))
        for r in rows:
            print(f"{args.axis}={r['value']:g}: settle_time={r['settle_time']} "
                  f"relative_error={r['relative_error']} exit={r['exit_code']}")
        return scn.EXIT_OK
    except (ConductanceWindowError, scn.ScenarioError) as exc:
        return _fail([str(exc)])


if __name__ == "__main__":
    sys.exit(main())
