"""Command line front end: run, compare, sweep, verify and scale.

Every subcommand builds a :class:`ScenarioConfig` from an optional YAML
file plus flag overrides, so a sweep row can be reproduced with ``run``.
"""
from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from typing import Dict, Iterable, List, Optional, Sequence

from ..errors import StreamScaleError
from ..protocols import PROTOCOLS
from .equivalence import equivalence_check
from .scenario import RunResult, ScenarioConfig, reference_run, run_scenario

# Column names are part of the output contract; bump the version on any change.
CSV_SCHEMA_VERSION = 1
METRICS_COLUMNS = ("scenario", "protocol", "seed", "peak_latency", "avg_latency",
                   "scaling_duration", "L_p", "L_s", "L_d", "L_o", "reroutes", "migrations")
SWEEP_COLUMNS = ("rate", "payload_bytes", "zipf_s") + METRICS_COLUMNS


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _floats(text: str) -> List[float]:
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}")


def _ints(text: str) -> List[int]:
    try:
        return [int(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")


def _protocols(text: str) -> List[str]:
    names = [x.strip() for x in text.split(",") if x.strip()]
    for n in names:
        if n not in PROTOCOLS:
            raise argparse.ArgumentTypeError(
                f"unknown protocol {n!r} (choose from {', '.join(sorted(PROTOCOLS))})")
    return names


def _scenario_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("scenario")
    g.add_argument("--config", help="YAML job/scenario document")
    g.add_argument("--scenario", help="scenario name written to the CSV")
    g.add_argument("--seed", type=int)
    g.add_argument("--rate", type=float, help="records per 1000 ticks")
    g.add_argument("--duration", type=int, help="ticks of input")
    g.add_argument("--keys", type=int, help="key space size")
    g.add_argument("--zipf-s", type=float, dest="zipf_s")
    g.add_argument("--payload-bytes", type=int, dest="payload_bytes")
    g.add_argument("--operator-kind", choices=("keyed_aggregate", "sliding_window"),
                   dest="operator_kind")
    g.add_argument("--keygroups", type=int)
    g.add_argument("--parallelism", type=int)
    g.add_argument("--new-parallelism", type=int, dest="new_parallelism")
    g.add_argument("--scale-at", type=int, dest="scale_at")
    g.add_argument("--subscale-size", type=int, dest="subscale_size",
                   help="0 puts every pair's migrations into a single subscale")


def build_config(args) -> ScenarioConfig:
    cfg = ScenarioConfig.load(args.config) if getattr(args, "config", None) else ScenarioConfig()
    changes: Dict[str, object] = {}
    for flag, target in (("seed", "wl_seed"), ("rate", "wl_rate"), ("duration", "wl_duration"),
                         ("keys", "wl_key_space"), ("zipf_s", "wl_zipf_s"),
                         ("payload_bytes", "wl_payload_bytes"), ("scenario", "name"),
                         ("operator_kind", "operator"), ("keygroups", "num_keygroups"),
                         ("parallelism", "parallelism"),
                         ("new_parallelism", "new_parallelism"), ("scale_at", "scale_at")):
        value = getattr(args, flag, None)
        if value is not None:
            changes[target] = value
    size = getattr(args, "subscale_size", None)
    if size is not None:
        changes["subscale_size"] = size or None
    try:
        return cfg.replace(**changes)
    except ValueError as exc:
        raise UsageError(str(exc))


def metrics_row(result: RunResult) -> Dict[str, object]:
    m = result.metrics
    return {
        "scenario": result.config.name,
        "protocol": result.protocol or "none",
        "seed": result.config.workload.seed,
        "peak_latency": m.peak_latency,
        "avg_latency": round(m.avg_latency, 6),
        "scaling_duration": m.scaling_duration,
        "L_p": m.L_p,
        "L_s": m.L_s,
        "L_d": m.L_d,
        "L_o": m.L_o,
        "reroutes": m.reroute_count,
        "migrations": m.migrations,
    }


def write_csv(rows: Iterable[Dict[str, object]], columns: Sequence[str], out) -> None:
    w = csv.DictWriter(out, fieldnames=list(columns), lineterminator="\n")
    w.writeheader()
    for row in rows:
        w.writerow(row)


def _open_out(path: Optional[str]):
    if path in (None, "-"):
        return sys.stdout, False
    parent = os.path.dirname(path)
    if parent:
        os.makedirs(parent, exist_ok=True)
    return open(path, "w", newline=""), True


def _emit_csv(rows, columns, path: Optional[str]) -> None:
    out, close = _open_out(path)
    try:
        write_csv(rows, columns, out)
    finally:
        if close:
            out.close()


# subcommands
def cmd_run(args) -> int:
    cfg = build_config(args)
    result = run_scenario(cfg, args.protocol)
    os.makedirs(args.out_dir, exist_ok=True)
    stem = os.path.join(args.out_dir, f"{cfg.name}-{args.protocol}-{cfg.workload.seed}")
    _emit_csv([metrics_row(result)], METRICS_COLUMNS, stem + ".metrics.csv")
    result.trace.dump(stem + ".trace.jsonl")
    with open(stem + ".sessions.json", "w") as fh:
        json.dump(result.coordinator.summaries(), fh, sort_keys=True, indent=1)
    print(f"wrote {stem}.metrics.csv {stem}.trace.jsonl {stem}.sessions.json")
    return 0


def cmd_compare(args) -> int:
    cfg = build_config(args)
    rows = [metrics_row(run_scenario(cfg, p)) for p in args.protocols]
    _emit_csv(rows, METRICS_COLUMNS, args.out)
    return 0


def cmd_sweep(args) -> int:
    base = build_config(args)
    rates = args.rates or [base.workload.rate]
    sizes = args.sizes or [base.workload.payload_bytes]
    rows = []
    for zipf_s in args.zipf:
        for rate in rates:
            for size in sizes:
                cfg = base.replace(wl_zipf_s=zipf_s, wl_rate=rate, wl_payload_bytes=size)
                for proto in args.protocols:
                    row = {"rate": rate, "payload_bytes": size, "zipf_s": zipf_s}
                    row.update(metrics_row(run_scenario(cfg, proto)))
                    rows.append(row)
    _emit_csv(rows, SWEEP_COLUMNS, args.out)
    return 0


def _outputs(result: RunResult):
    # per key, ignoring how outputs of different windows interleave at the sink
    return {k: sorted(v, key=repr) for k, v in result.sim.sink_outputs().items()}


def cmd_verify(args) -> int:
    cfg = build_config(args)
    kinds = [cfg.operator] if args.config or args.operator_kind else ["keyed_aggregate",
                                                                       "sliding_window"]
    ok = True
    for kind in kinds:
        c = cfg.replace(operator=kind)
        ref = reference_run(c)
        res = run_scenario(c, args.protocol)
        verdict = equivalence_check(res, ref, op_id=c.scale_operator)
        outputs_equal = _outputs(res) == _outputs(ref)
        passed = verdict.ok and outputs_equal and res.authoritative
        ok = ok and passed
        print(f"{args.protocol} {kind}: {verdict.summary()} "
              f"outputs={'ok' if outputs_equal else 'DIFF'} -> {'PASS' if passed else 'FAIL'}")
        for d in verdict.diffs[:10]:
            print(f"  {d}")
    return 0 if ok else 1


def cmd_scale(args) -> int:
    cfg = build_config(args).replace(scale_operator=args.operator, new_parallelism=args.to,
                                     scale_at=args.at_tick)
    result = run_scenario(cfg, args.protocol)
    text = json.dumps(result.coordinator.summaries(), sort_keys=True, indent=1)
    if args.summary:
        with open(args.summary, "w") as fh:
            fh.write(text + "\n")
    else:
        print(text)
    return 0


def make_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="streamscale", description="Live rescaling benchmark harness")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)
    sub.required = True

    p = sub.add_parser("run", help="run one scenario, write metrics CSV and trace JSONL")
    _scenario_flags(p)
    p.add_argument("--protocol", default="drrs", choices=sorted(PROTOCOLS))
    p.add_argument("--out-dir", default="out")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("compare", help="one CSV row per protocol on the same scenario")
    _scenario_flags(p)
    p.add_argument("--protocols", type=_protocols, default=["drrs", "fluid", "all_at_once"])
    p.add_argument("--out", help="CSV path (default stdout)")
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("sweep", help="grid over zipf x rate x state size, long-format CSV")
    _scenario_flags(p)
    p.add_argument("--zipf", type=_floats, default=[0.0, 0.5, 1.0, 1.5])
    p.add_argument("--rates", type=_floats)
    p.add_argument("--sizes", type=_ints, help="payload bytes per state entry")
    p.add_argument("--protocols", type=_protocols, default=["drrs"])
    p.add_argument("--out", help="CSV path (default stdout)")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("verify", help="equivalence against the no-scale run; exit 0 iff equal")
    _scenario_flags(p)
    p.add_argument("--protocol", default="drrs", choices=sorted(PROTOCOLS))
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("scale", help="issue one scale request and print the session summary")
    _scenario_flags(p)
    p.add_argument("--operator", required=True)
    p.add_argument("--to", type=int, required=True)
    p.add_argument("--protocol", default="drrs", choices=sorted(PROTOCOLS))
    p.add_argument("--at-tick", type=int, required=True, dest="at_tick")
    p.add_argument("--summary", help="JSON path (default stdout)")
    p.set_defaults(func=cmd_scale)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = make_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except UsageError as exc:
        print(parser.format_usage().rstrip(), file=sys.stderr)
        print(exc, file=sys.stderr)
        return 2
    except (StreamScaleError, OSError) as exc:
        print(f"streamscale: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
