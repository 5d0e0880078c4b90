"""Beacon-driven randomized load balancing and weighted gateway payments.

Every random choice is drawn from a block hash, so anyone holding the beacon
chain and the arrival trace can recompute each routing decision.
"""
from __future__ import annotations

import csv
import enum
import io
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable, Mapping, Sequence

from ._digest import sha256

_TWO64 = 1 << 64


class Policy(str, enum.Enum):
    DEFAULT = "default"
    CHOICE2 = "choice2"
    NONE = "none"


def _call_bytes(call_id: int | str | bytes) -> bytes:
    if isinstance(call_id, bytes):
        return call_id
    return str(call_id).encode()


def draw_uniform(beacon_hash: bytes, call_id: int | str | bytes, k: int) -> int:
    """Uniform integer in ``[0, k)`` derived from ``beacon_hash`` and ``call_id``.

    The first 8 bytes of ``sha256(beacon ‖ call_id ‖ counter)`` are read as a
    big-endian integer; values at or above the largest multiple of ``k`` below
    2**64 are rejected and the counter is bumped.
    """
    if k < 1:
        raise ValueError("domain size must be at least 1")
    if k == 1:
        return 0
    cid = _call_bytes(call_id)
    bound = (_TWO64 // k) * k
    counter = 0
    while True:
        v = int.from_bytes(sha256(beacon_hash, cid, counter.to_bytes(8, "big"))[:8], "big")
        if v < bound:
            return v % k
        counter += 1


@dataclass
class DataCenterState:
    id: int
    capacity: float
    queue_length: int = 0
    gateways: list[str] = field(default_factory=list)

    def __post_init__(self):
        if self.capacity < 1:
            raise ValueError("capacity must be at least 1")
        if self.queue_length < 0:
            raise ValueError("queue_length must be non-negative")


@dataclass
class LoadCache:
    """A gateway's local, periodically refreshed view of per-DC queue lengths."""

    snapshot: tuple[int, ...]
    snapshot_height: int = 0
    refresh_period: float = 1
    last_refresh: int = 0

    def queue_of(self, dc: int) -> int:
        return self.snapshot[dc]


def refresh_load_cache(cache: LoadCache, ledger_view, now: int, height: int | None = None) -> LoadCache:
    """Return a refreshed cache if the period elapsed; never writes to the ledger.

    ``ledger_view`` only needs ``read_load_feed() -> (tick, queues)``.
    """
    if now - cache.last_refresh < cache.refresh_period:
        return cache
    _, queues = ledger_view.read_load_feed()
    return LoadCache(
        snapshot=tuple(queues),
        snapshot_height=cache.snapshot_height if height is None else height,
        refresh_period=cache.refresh_period,
        last_refresh=now,
    )


def candidate_dc(beacon_hash: bytes, call_id, receiving: int, k: int) -> int:
    """Random data center other than ``receiving``."""
    idx = draw_uniform(beacon_hash, _call_bytes(call_id) + b"dc", k - 1)
    return idx if idx < receiving else idx + 1


def route_default(receiving: DataCenterState, candidate: DataCenterState) -> DataCenterState:
    # strict: equal load stays local
    if receiving.queue_length > candidate.queue_length:
        return candidate
    return receiving


def route_choice2(
    receiving: DataCenterState, candidate: DataCenterState, threshold: float | None = None
) -> DataCenterState:
    """Forward only if the receiving DC is overloaded; the candidate's load is never read."""
    limit = receiving.capacity if threshold is None else threshold
    if receiving.queue_length > limit:
        return candidate
    return receiving


def select_gateway(dc: DataCenterState, beacon_hash: bytes, call_id) -> str:
    if not dc.gateways:
        raise ValueError(f"data center {dc.id} has no gateways")
    return dc.gateways[draw_uniform(beacon_hash, _call_bytes(call_id) + b"gw", len(dc.gateways))]


@dataclass(frozen=True)
class RoutingDecision:
    call_id: int
    tick: int
    receiving_dc: int
    candidate_dc: int | None
    chosen_dc: int
    chosen_gateway: str
    beacon_height: int
    policy: Policy

    def as_row(self) -> list[str]:
        return [
            str(self.call_id),
            str(self.tick),
            str(self.receiving_dc),
            "" if self.candidate_dc is None else str(self.candidate_dc),
            str(self.chosen_dc),
            self.chosen_gateway,
            str(self.beacon_height),
            self.policy.value,
        ]


TRACE_COLUMNS = [
    "call_id", "tick", "receiving_dc", "candidate_dc",
    "chosen_dc", "chosen_gateway", "beacon_height", "policy",
]


class MalformedTraceError(ValueError):
    pass


def write_trace_csv(decisions: Iterable[RoutingDecision], fh=None) -> str | None:
    out = io.StringIO() if fh is None else fh
    w = csv.writer(out, lineterminator="\n")
    w.writerow(TRACE_COLUMNS)
    for d in decisions:
        w.writerow(d.as_row())
    return out.getvalue() if fh is None else None


def read_trace_csv(fh) -> list[RoutingDecision]:
    reader = csv.reader(fh)
    try:
        header = next(reader)
    except StopIteration:
        raise MalformedTraceError("empty trace file") from None
    if header != TRACE_COLUMNS:
        raise MalformedTraceError(f"unexpected trace header {header}")
    out = []
    for lineno, row in enumerate(reader, start=2):
        if len(row) != len(TRACE_COLUMNS):
            raise MalformedTraceError(f"line {lineno}: expected {len(TRACE_COLUMNS)} fields")
        try:
            out.append(
                RoutingDecision(
                    call_id=int(row[0]),
                    tick=int(row[1]),
                    receiving_dc=int(row[2]),
                    candidate_dc=None if row[3] == "" else int(row[3]),
                    chosen_dc=int(row[4]),
                    chosen_gateway=row[5],
                    beacon_height=int(row[6]),
                    policy=Policy(row[7]),
                )
            )
        except ValueError as exc:
            raise MalformedTraceError(f"line {lineno}: {exc}") from None
    return out


@dataclass(frozen=True)
class PaymentPolicy:
    """Target share of calls per data center plus the over-limit penalty."""

    target_distribution: tuple[Fraction, ...]
    tolerance: Fraction = Fraction(1, 10)
    overage_penalty: Fraction = Fraction(2)

    def __post_init__(self):
        fr = tuple(Fraction(x) for x in self.target_distribution)
        if any(x < 0 for x in fr) or sum(fr) != 1:
            raise ValueError("target distribution must be non-negative and sum to 1")
        object.__setattr__(self, "target_distribution", fr)
        object.__setattr__(self, "tolerance", Fraction(self.tolerance))
        object.__setattr__(self, "overage_penalty", Fraction(self.overage_penalty))

    @classmethod
    def even(cls, k: int, **kw) -> "PaymentPolicy":
        return cls(tuple(Fraction(1, k) for _ in range(k)), **kw)

    def to_dict(self) -> dict:
        return {
            "target_distribution": [[f.numerator, f.denominator] for f in self.target_distribution],
            "tolerance": [self.tolerance.numerator, self.tolerance.denominator],
            "overage_penalty": [self.overage_penalty.numerator, self.overage_penalty.denominator],
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "PaymentPolicy":
        f = lambda p: Fraction(int(p[0]), int(p[1]))  # noqa: E731
        return cls(
            tuple(f(p) for p in d["target_distribution"]),
            tolerance=f(d["tolerance"]),
            overage_penalty=f(d["overage_penalty"]),
        )


def payment_limit(expected: Fraction, tolerance: Fraction) -> Fraction:
    return expected * (1 + tolerance)


def compute_payments(
    counts: Mapping[str, int],
    policy: PaymentPolicy,
    fee_per_call,
    gateway_dc: Mapping[str, int],
) -> dict[str, Fraction]:
    """Per-gateway payment: full fee up to the limit, a linear penalty beyond it.

    ``gateway_dc`` maps each gateway to the index of its data center in
    ``policy.target_distribution``.
    """
    if any(c < 0 for c in counts.values()):
        raise ValueError("handled counts must be non-negative")
    fee = Fraction(fee_per_call)
    total = sum(counts.values())
    per_dc: dict[int, int] = {}
    for dc in gateway_dc.values():
        per_dc[dc] = per_dc.get(dc, 0) + 1
    out = {}
    for g, dc in gateway_dc.items():
        n = counts.get(g, 0)
        expected = total * policy.target_distribution[dc] / per_dc[dc]
        limit = payment_limit(expected, policy.tolerance)
        out[g] = fee * min(n, limit) - policy.overage_penalty * max(0, n - limit)
    return out


def chi_square_uniform(counts: Sequence[int]) -> tuple[float, float]:
    """Chi-square statistic and p-value against the uniform distribution."""
    from scipy.stats import chisquare

    res = chisquare(list(counts))
    return float(res.statistic), float(res.pvalue)


def beacon_height_for(tick: int, blocks_interval: int) -> int:
    return tick // blocks_interval

