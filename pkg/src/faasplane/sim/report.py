"""Metrics CSV files and the policy x data-center comparison table."""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from typing import Iterable, Sequence

from .engine import RunMetrics

METRIC_COLUMNS = [
    "run_index", "policy", "arrival_mode", "num_data_centers", "total_calls",
    "average_queue_time", "max_queue_time", "forwarded", "ticks", "dc_counts", "ledger_digest",
]

# row order of the comparison table
TABLE_ROWS = [
    ("default", "random", "default / random arrivals"),
    ("default", "single_dc", "default / all arrivals at dc0"),
    ("choice2", "random", "choice2 / random arrivals"),
    ("choice2", "single_dc", "choice2 / all arrivals at dc0"),
    ("none", "random", "none / random arrivals"),
]


@dataclass(frozen=True)
class MetricRow:
    run_index: int
    policy: str
    arrival_mode: str
    num_data_centers: int
    total_calls: int
    average_queue_time: float
    max_queue_time: int
    forwarded: int
    ticks: int
    dc_counts: tuple[int, ...]
    ledger_digest: str

    @property
    def key(self) -> tuple[str, str, int]:
        return (self.policy, self.arrival_mode, self.num_data_centers)

    @classmethod
    def from_metrics(cls, m: RunMetrics) -> "MetricRow":
        return cls(m.run_index, m.policy, m.arrival_mode, m.num_data_centers, m.total_calls,
                   m.average_queue_time, m.max_queue_time, m.forwarded, m.ticks,
                   tuple(m.dc_counts), m.ledger_digest)


def write_metrics_csv(metrics: Iterable[RunMetrics | MetricRow], fh=None) -> str | None:
    out = io.StringIO() if fh is None else fh
    w = csv.writer(out, lineterminator="\n")
    w.writerow(METRIC_COLUMNS)
    for m in metrics:
        r = m if isinstance(m, MetricRow) else MetricRow.from_metrics(m)
        w.writerow([r.run_index, r.policy, r.arrival_mode, r.num_data_centers, r.total_calls,
                    repr(r.average_queue_time), r.max_queue_time, r.forwarded, r.ticks,
                    ";".join(map(str, r.dc_counts)), r.ledger_digest])
    return out.getvalue() if fh is None else None


def read_metrics_csv(fh) -> list[MetricRow]:
    reader = csv.DictReader(fh)
    if reader.fieldnames != METRIC_COLUMNS:
        raise ValueError(f"unexpected metrics header {reader.fieldnames}")
    return [
        MetricRow(
            int(r["run_index"]), r["policy"], r["arrival_mode"], int(r["num_data_centers"]),
            int(r["total_calls"]), float(r["average_queue_time"]), int(r["max_queue_time"]),
            int(r["forwarded"]), int(r["ticks"]),
            tuple(int(x) for x in r["dc_counts"].split(";") if x), r["ledger_digest"],
        )
        for r in reader
    ]


@dataclass(frozen=True)
class SummaryRow:
    policy: str
    arrival_mode: str
    num_data_centers: int
    average_queue_time: float
    runs: int


def summarize(metrics: Iterable[RunMetrics | MetricRow]) -> list[SummaryRow]:
    """Mean of per-run average queue times for each (policy, arrival_mode, k)."""
    groups: dict[tuple[str, str, int], list[float]] = {}
    for m in metrics:
        groups.setdefault(m.key, []).append(m.average_queue_time)
    order = {(p, a): i for i, (p, a, _) in enumerate(TABLE_ROWS)}
    keys = sorted(groups, key=lambda k: (order.get((k[0], k[1]), len(order)), k[0], k[1], k[2]))
    return [SummaryRow(*k, sum(groups[k]) / len(groups[k]), len(groups[k])) for k in keys]


def _table(rows: Sequence[SummaryRow]) -> tuple[list[str], list[list[str]]]:
    ks = sorted({r.num_data_centers for r in rows})
    cells = {(r.policy, r.arrival_mode, r.num_data_centers): r.average_queue_time for r in rows}
    labels = list(TABLE_ROWS)
    for r in rows:
        if (r.policy, r.arrival_mode) not in {(p, a) for p, a, _ in labels}:
            labels.append((r.policy, r.arrival_mode, f"{r.policy} / {r.arrival_mode}"))
    header = ["scenario"] + [f"{k} data centers" for k in ks]
    body = []
    for p, a, label in labels:
        body.append([label] + [f"{cells[(p, a, k)]:.3f}" if (p, a, k) in cells else "" for k in ks])
    return header, body


def render_csv(rows: Sequence[SummaryRow]) -> str:
    header, body = _table(rows)
    out = io.StringIO()
    w = csv.writer(out, lineterminator="\n")
    w.writerow(header)
    w.writerows(body)
    return out.getvalue()


def render_text(rows: Sequence[SummaryRow]) -> str:
    header, body = _table(rows)
    widths = [max(len(r[i]) for r in [header] + body) for i in range(len(header))]
    lines = []
    for j, r in enumerate([header] + body):
        lines.append(" | ".join(c.ljust(w) if i == 0 else c.rjust(w) for i, (c, w) in enumerate(zip(r, widths))))
        if j == 0:
            lines.append("-+-".join("-" * w for w in widths))
    return "\n".join(lines) + "\n"
