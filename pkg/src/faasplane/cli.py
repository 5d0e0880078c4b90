"""Command-line driver.

Exit codes: 0 success, 1 verification failure, 2 usage or config error.
"""
from __future__ import annotations

import argparse
import glob
import json
import sys
from pathlib import Path

from .events import EventsError, Topology, run_schedule, write_delivery_csv
from .scheduler import MalformedTraceError, read_trace_csv, write_trace_csv
from .sim.config import ConfigError, ScenarioConfig
from .sim.engine import MissingBeaconError, run_batch
from .sim.report import read_metrics_csv, render_csv, render_text, summarize, write_metrics_csv
from .sim.verify import MalformedBeaconsError, dump_beacons, load_beacons, replay_verify

OK, VERIFY_FAILED, USAGE = 0, 1, 2


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(USAGE)


def _fail(msg: str, code: int = USAGE) -> int:
    print(f"error: {msg}", file=sys.stderr)
    return code


def _load_config(path: str, overrides: list[str] | None = None) -> ScenarioConfig:
    return ScenarioConfig.load(path, overrides or [])


def cmd_run(args) -> int:
    try:
        config = _load_config(args.scenario, args.override)
    except ConfigError as exc:
        return _fail(str(exc))
    batch = run_batch(config, n_jobs=args.jobs)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.json").write_text(config.to_json() + "\n")
    with open(out / "metrics.csv", "w", newline="") as fh:
        write_metrics_csv(batch.metrics, fh)
    for r in batch.runs:
        i = r.metrics.run_index
        with open(out / f"trace_run{i}.csv", "w", newline="") as fh:
            write_trace_csv(r.decisions, fh)
        (out / f"beacons_run{i}.json").write_text(dump_beacons(r.blocks, i) + "\n")
    s = config.sim
    print(
        f"policy={s.policy} arrival_mode={s.arrival_mode} k={s.num_data_centers} runs={s.runs} "
        f"calls={s.total_calls} average_queue_time={batch.average_queue_time:.3f} "
        f"dc_counts={';'.join(f'{c:g}' for c in batch.dc_counts)}"
    )
    print(f"artifacts written to {out}")
    return OK


def cmd_verify(args) -> int:
    try:
        config = _load_config(args.scenario)
        with open(args.trace, newline="") as fh:
            trace = read_trace_csv(fh)
        blocks = load_beacons(args.beacons)
    except (ConfigError, MalformedTraceError, MalformedBeaconsError) as exc:
        return _fail(str(exc))
    except OSError as exc:
        return _fail(f"cannot read input: {exc}")
    try:
        result = replay_verify(trace, blocks, config)
    except MissingBeaconError as exc:
        print(f"FAIL: {exc}")
        return VERIFY_FAILED
    if result.ok:
        print(f"OK: {result.reason}")
        return OK
    if result.call_id is not None:
        print(f"FAIL: first divergent call_id {result.call_id} ({result.reason})")
    else:
        print(f"FAIL: {result.reason}")
    return VERIFY_FAILED


def cmd_report(args) -> int:
    paths = sorted({p for pattern in args.metrics for p in glob.glob(pattern, recursive=True)})
    if not paths:
        return _fail(f"no metrics files match {' '.join(args.metrics)}")
    rows = []
    read = 0
    for p in paths:
        try:
            with open(p, newline="") as fh:
                rows.extend(read_metrics_csv(fh))
            read += 1
        except (OSError, ValueError, KeyError) as exc:
            print(f"warning: skipping {p}: {exc}", file=sys.stderr)
    if not read:
        return _fail("no readable metrics files")
    summary = summarize(rows)
    sys.stdout.write(render_csv(summary) if args.format == "csv" else render_text(summary))
    return OK


def cmd_gossip(args) -> int:
    try:
        topology = Topology.from_json(Path(args.topology).read_text())
        schedule = json.loads(Path(args.events).read_text())
        mesh = run_schedule(topology, schedule)
    except OSError as exc:
        return _fail(f"cannot read input: {exc}")
    except (ValueError, KeyError, TypeError, EventsError) as exc:
        return _fail(f"invalid gossip input: {exc}")
    if args.out:
        with open(args.out, "w", newline="") as fh:
            write_delivery_csv(mesh.deliveries, fh)
    for msg_id, msg in mesh.messages.items():
        got = sorted(mesh.delivered_to(msg_id))
        print(f"message {msg_id.hex()[:16]} topic={msg.topic} from={msg.publisher} delivered={len(got)}")
    print(f"eager_sends={mesh.eager_sends} lazy_sends={mesh.lazy_sends} duplicates={mesh.duplicates}")
    for line in mesh.run_log:
        print(f"log {line}")
    return OK


def cmd_demo_billing(args) -> int:
    from .sim.billing import billing_demo

    try:
        config = _load_config(args.scenario, args.override)
    except ConfigError as exc:
        return _fail(str(exc))
    report, _ = billing_demo(config)
    print("\n".join(report.lines()))
    return OK


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="faasplane", description="Multi-cloud FaaS control plane simulator.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    r = sub.add_parser("run", help="run a scenario batch and write artifacts")
    r.add_argument("--scenario", required=True)
    r.add_argument("--out", default="out")
    r.add_argument("--override", action="append", default=[], metavar="KEY=VALUE")
    r.add_argument("--jobs", type=int, default=1, help="worker processes (-1 = all cores)")
    r.set_defaults(func=cmd_run)

    v = sub.add_parser("verify", help="replay a routing trace against its beacon chain")
    v.add_argument("--trace", required=True)
    v.add_argument("--beacons", required=True)
    v.add_argument("--scenario", required=True)
    v.set_defaults(func=cmd_verify)

    rep = sub.add_parser("report", help="render the comparison table from metrics CSV files")
    rep.add_argument("--metrics", required=True, nargs="+", metavar="GLOB")
    rep.add_argument("--format", choices=("text", "csv"), default="text")
    rep.set_defaults(func=cmd_report)

    g = sub.add_parser("gossip", help="drive the gossip mesh from a topology and event schedule")
    g.add_argument("--topology", required=True)
    g.add_argument("--events", required=True)
    g.add_argument("--out", help="write deliveries CSV here")
    g.set_defaults(func=cmd_gossip)

    b = sub.add_parser("demo-billing", help="sign, route, log, receipt and settle end to end")
    b.add_argument("--scenario", required=True)
    b.add_argument("--override", action="append", default=[], metavar="KEY=VALUE")
    b.set_defaults(func=cmd_demo_billing)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    raise SystemExit(main())
