"""Discrete-event engine for the multi-cloud routing experiment.

Time is an integer tick. Within a tick events run in kind order: service
completions, block sealing, oracle/cache refresh, arrivals, forwarded calls,
service starts. A call's queue time is the tick its service starts minus the
tick it arrived.
"""
from __future__ import annotations

import heapq
import math
from collections import deque
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, Sequence

from .._digest import address_of, sha256
from ..ledger import Block, Ledger, LedgerConfig
from ..scheduler import (
    DataCenterState,
    LoadCache,
    Policy,
    RoutingDecision,
    beacon_height_for,
    candidate_dc,
    compute_payments,
    draw_uniform,
    refresh_load_cache,
    route_choice2,
    route_default,
    select_gateway,
)
from .config import ScenarioConfig

# event kinds; the value is the same-tick priority
COMPLETION, BLOCK, REFRESH, HEARTBEAT, ARRIVAL, FORWARD, SERVICE, BILLING_CYCLE = range(8)


class MissingBeaconError(LookupError):
    pass


class EventQueue:
    """Min-heap keyed by ``(tick, kind, sequence)``."""

    def __init__(self):
        self._heap: list = []
        self._seq = 0

    def push(self, tick: int, kind: int, payload=None) -> None:
        heapq.heappush(self._heap, (tick, kind, self._seq, payload))
        self._seq += 1

    def pop(self):
        tick, kind, _, payload = heapq.heappop(self._heap)
        return tick, kind, payload

    def peek_tick(self) -> int | None:
        return self._heap[0][0] if self._heap else None

    def __len__(self) -> int:
        return len(self._heap)


@dataclass
class RunMetrics:
    run_index: int
    policy: str
    arrival_mode: str
    num_data_centers: int
    total_calls: int
    average_queue_time: float
    max_queue_time: int
    forwarded: int
    dc_counts: list[int]
    gateway_counts: dict[str, int]
    gateway_payments: dict[str, Fraction]
    ticks: int
    ledger_digest: str = ""

    @property
    def key(self) -> tuple[str, str, int]:
        return (self.policy, self.arrival_mode, self.num_data_centers)


@dataclass
class RunResult:
    metrics: RunMetrics
    decisions: list[RoutingDecision]
    blocks: list[Block]
    ledger: Ledger | None = None

    def __iter__(self):
        # unpacks as (metrics, trace)
        return iter((self.metrics, self.decisions))


def run_seed(config: ScenarioConfig, run_index: int) -> bytes:
    return sha256(config.seed.encode(), b"|run|", run_index.to_bytes(8, "big"))


def arrival_ticks(config: ScenarioConfig) -> list[int]:
    """Constant-rate arrivals: call ``i`` arrives at ``floor(i / rate)``."""
    rate = Fraction(config.arrival_rate()).limit_denominator(10**6)
    return [math.floor(i / rate) for i in range(config.sim.total_calls)]


def gateway_ids(config: ScenarioConfig) -> list[list[str]]:
    return [[f"dc{d}/gw{g}" for g in range(config.sim.gateways_per_dc)] for d in range(config.sim.num_data_centers)]


def build_ledger(config: ScenarioConfig, run_index: int) -> Ledger:
    """Fresh management ledger with the scenario's data centers, gateways and one public function."""
    lp = config.ledger
    led = Ledger(
        LedgerConfig(
            min_stake=lp.min_stake,
            gateway_quota=lp.gateway_quota,
            watermark_fraction=Fraction(config.billing.watermark_fraction).limit_denominator(10**6),
            cycle_length=config.billing.cycle_length,
            fee_per_call=config.billing.fee_per_call,
            payment_policy=config.payment_policy(),
        ),
        seed=run_seed(config, run_index),
    )
    provider = address_of("function-provider")
    led.create_account(provider)
    led.register_endpoint(provider, "/fn", is_public=True)
    for d in range(config.sim.num_data_centers):
        dc = f"dc{d}"
        led.add_data_center(dc)
        for g in range(config.sim.gateways_per_dc):
            op = address_of(f"gateway-operator-{d}-{g}")
            led.create_account(op, lp.gateway_stake)
            led.register_gateway(op, dc, lp.gateway_stake, endpoints=["/fn"])
    return led


class _Feed:
    def __init__(self):
        self.tick: int | None = None
        self.queues: tuple[int, ...] = ()

    def read_load_feed(self):
        return self.tick, self.queues


class _RoutingRun:
    """One pass of the routing experiment; also drives replay with a fixed beacon list."""

    def __init__(
        self,
        config: ScenarioConfig,
        beacon: Callable[[int], bytes],
        seal_block: Callable[[int], None] | None,
        ledger: Ledger | None,
        arrivals: Sequence[tuple[int, int | None]] | None = None,
    ):
        self.cfg = config
        self.arrivals = arrivals
        s = config.sim
        self.k = s.num_data_centers
        self.policy = config.policy
        self.beacon = beacon
        self.seal_block = seal_block
        self.ledger = ledger
        caps = config.capacities()
        gw = gateway_ids(config)
        self.dcs = [DataCenterState(d, caps[d], 0, gw[d]) for d in range(self.k)]
        self.queues: list[deque] = [deque() for _ in range(self.k)]
        self.busy = [0] * self.k
        self.thresholds = [c * s.choice2_multiplier for c in caps]
        period = math.inf if s.refresh_period is None else s.refresh_period
        self.cache = LoadCache(tuple([0] * self.k), 0, period, 0)
        self.feed = _Feed()
        self.decisions: list[RoutingDecision] = []
        self.dc_counts = [0] * self.k
        self.gw_counts = {g: 0 for row in gw for g in row}
        self.forwarded = 0
        self.wait_sum = 0
        self.wait_max = 0
        self.served = 0
        self.events = EventQueue()

    # -- routing -------------------------------------------------------

    def _route(self, call_id: int, tick: int, receiving: int, bh: bytes, height: int, hop: int):
        cid = str(call_id) if hop == 0 else f"{call_id}#{hop}"
        if self.policy is Policy.NONE:
            cand, chosen = None, receiving
        else:
            cand = candidate_dc(bh, cid, receiving, self.k)
            rx = self.dcs[receiving]
            # the receiving gateway knows its own queue; other DCs come from the cache
            rx_view = DataCenterState(receiving, rx.capacity, len(self.queues[receiving]))
            if self.policy is Policy.DEFAULT:
                cand_view = DataCenterState(cand, self.dcs[cand].capacity, self.cache.queue_of(cand))
                chosen = route_default(rx_view, cand_view).id
            else:
                cand_view = DataCenterState(cand, self.dcs[cand].capacity)
                chosen = route_choice2(rx_view, cand_view, self.thresholds[receiving]).id
        gateway = select_gateway(self.dcs[chosen], bh, cid)
        self.decisions.append(
            RoutingDecision(call_id, tick, receiving, cand, chosen, gateway, height, self.policy)
        )
        return chosen, gateway

    def _admit(self, call_id: int, arrived: int, tick: int, receiving: int, hop: int) -> None:
        height = beacon_height_for(tick, self.cfg.sim.blocks_interval)
        bh = self.beacon(height)
        chosen, gateway = self._route(call_id, tick, receiving, bh, height, hop)
        if chosen != receiving:
            if hop == 0:
                self.forwarded += 1
            delay = self.cfg.sim.forward_delay
            if delay > 0:
                self.events.push(tick + delay, FORWARD, (call_id, arrived, chosen, gateway, hop + 1))
                return
            if hop + 1 < self.cfg.sim.max_hops:
                self._admit(call_id, arrived, tick, chosen, hop + 1)
                return
        self.queues[chosen].append((call_id, arrived, gateway))

    def _forwarded(self, tick: int, payload) -> None:
        call_id, arrived, dc, gateway, hop = payload
        if hop < self.cfg.sim.max_hops:
            self._admit(call_id, arrived, tick, dc, hop)
        else:
            self.queues[dc].append((call_id, arrived, gateway))

    # -- service -------------------------------------------------------

    def _service_time(self, call_id: int, tick: int) -> int:
        s = self.cfg.sim
        if s.service_time_max is None:
            return s.service_time
        bh = self.beacon(beacon_height_for(tick, s.blocks_interval))
        return s.service_time + draw_uniform(bh, f"{call_id}svc", s.service_time_max - s.service_time + 1)

    def _start_service(self, tick: int) -> None:
        for d in range(self.k):
            q = self.queues[d]
            cap = self.dcs[d].capacity
            free = len(q) if cap == math.inf else int(cap) - self.busy[d]
            n = min(free, len(q))
            if n <= 0:
                continue
            fixed = self.cfg.sim.service_time_max is None
            for _ in range(n):
                call_id, arrived, gateway = q.popleft()
                wait = tick - arrived
                self.wait_sum += wait
                if wait > self.wait_max:
                    self.wait_max = wait
                self.served += 1
                self.dc_counts[d] += 1
                self.gw_counts[gateway] += 1
                if cap != math.inf:
                    self.busy[d] += 1
                    dur = self.cfg.sim.service_time if fixed else self._service_time(call_id, tick)
                    self.events.push(tick + dur, COMPLETION, d)

    # -- oracle feed -----------------------------------------------------

    def _refresh(self, tick: int) -> None:
        queues = [len(q) for q in self.queues]
        noise = self.cfg.sim.oracle_noise
        height = beacon_height_for(tick, self.cfg.sim.blocks_interval)
        if noise:
            bh = self.beacon(height)
            queues = [
                max(0, q + draw_uniform(bh, f"oracle|{d}".encode(), 2 * noise + 1) - noise)
                for d, q in enumerate(queues)
            ]
        self.feed.tick, self.feed.queues = tick, tuple(queues)
        if self.ledger is not None:
            self.ledger.publish_load_feed(tick, queues)
        self.cache = refresh_load_cache(self.cache, self.feed, tick, height)

    # -- main loop -------------------------------------------------------

    def run(self) -> int:
        s = self.cfg.sim
        if self.arrivals is None:
            arrivals = [(t, None) for t in arrival_ticks(self.cfg)]
        else:
            arrivals = list(self.arrivals)
        self.receiving = [r for _, r in arrivals]
        batches: dict[int, list[int]] = {}
        for cid, (t, _) in enumerate(arrivals):
            batches.setdefault(t, []).append(cid)
        for t, ids in batches.items():
            self.events.push(t, ARRIVAL, ids)
        self.events.push(0, BLOCK)
        if s.refresh_period is not None:
            self.events.push(0, REFRESH)
        self.events.push(0, SERVICE)
        total = len(arrivals)
        last_tick = 0
        ev = self.events
        while len(ev):
            tick, kind, payload = ev.pop()
            last_tick = tick
            if kind == COMPLETION:
                self.busy[payload] -= 1
            elif kind == BLOCK:
                if self.seal_block is not None:
                    self.seal_block(tick)
                if self.served < total:
                    ev.push(tick + s.blocks_interval, BLOCK)
            elif kind == REFRESH:
                if tick > 0:
                    self._refresh(tick)
                if self.served < total:
                    ev.push(tick + s.refresh_period, REFRESH)
            elif kind == ARRIVAL:
                for cid in payload:
                    receiving = self.receiving[cid]
                    if receiving is not None:
                        if not 0 <= receiving < self.k:
                            raise ValueError(f"call {cid}: receiving data center {receiving} out of range")
                    elif s.arrival_mode == "single_dc":
                        receiving = 0
                    else:
                        height = beacon_height_for(tick, s.blocks_interval)
                        receiving = draw_uniform(self.beacon(height), f"{cid}rx", self.k)
                    self._admit(cid, tick, tick, receiving, 0)
            elif kind == FORWARD:
                self._forwarded(tick, payload)
            elif kind == SERVICE:
                self._start_service(tick)
                if self.served < total:
                    ev.push(tick + 1, SERVICE)
            if self.served >= total and kind == SERVICE:
                break
        return last_tick


def _cfg_payments(config: ScenarioConfig, gw_counts: dict[str, int]) -> dict[str, Fraction]:
    dc_of = {g: int(g[2:].split("/")[0]) for g in gw_counts}
    return compute_payments(gw_counts, config.payment_policy(), config.billing.fee_per_call, dc_of)


def run(
    config: ScenarioConfig,
    run_index: int = 0,
    arrivals: Sequence[tuple[int, int | None]] | None = None,
    *,
    ledger: Ledger | None = None,
) -> RunResult:
    """Execute one run; returns metrics, the routing trace and the beacon chain.

    ``arrivals`` optionally replaces the generated constant-rate arrivals with
    explicit ``(tick, receiving_dc)`` pairs (``None`` = draw from the beacon).
    A prepared ``ledger`` (from :func:`build_ledger`) may be passed in.
    """
    config.validate()
    led = build_ledger(config, run_index) if ledger is None else ledger

    def seal(tick: int) -> None:
        led.advance_to(tick)
        led.append_block()

    sim = _RoutingRun(config, led.beacon, seal, led, arrivals)
    ticks = sim.run()
    metrics = RunMetrics(
        run_index=run_index,
        policy=config.sim.policy,
        arrival_mode=config.sim.arrival_mode,
        num_data_centers=config.sim.num_data_centers,
        total_calls=sim.served,
        average_queue_time=sim.wait_sum / sim.served,
        max_queue_time=sim.wait_max,
        forwarded=sim.forwarded,
        dc_counts=list(sim.dc_counts),
        gateway_counts=dict(sim.gw_counts),
        gateway_payments=_cfg_payments(config, sim.gw_counts),
        ticks=ticks,
        ledger_digest=led.state_digest().hex(),
    )
    return RunResult(metrics, sim.decisions, list(led.blocks), led)


@dataclass
class BatchResult:
    config: ScenarioConfig
    runs: list[RunResult] = field(default_factory=list)

    @property
    def metrics(self) -> list[RunMetrics]:
        return [r.metrics for r in self.runs]

    @property
    def average_queue_time(self) -> float:
        return sum(m.average_queue_time for m in self.metrics) / len(self.runs)

    @property
    def dc_counts(self) -> list[float]:
        k = self.config.sim.num_data_centers
        return [sum(m.dc_counts[d] for m in self.metrics) / len(self.runs) for d in range(k)]


def _run_one(args):
    config, i = args
    r = run(config, i)
    r.ledger = None
    return r


def run_batch(config: ScenarioConfig, *, n_jobs: int = 1) -> BatchResult:
    """Run ``config.sim.runs`` repetitions, each on its own beacon chain."""
    jobs = [(config, i) for i in range(config.sim.runs)]
    if n_jobs == 1:
        results = [run(config, i) for i in range(config.sim.runs)]
    else:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(max_workers=None if n_jobs < 0 else n_jobs) as pool:
            results = list(pool.map(_run_one, jobs))
    return BatchResult(config, results)


def make_replay(config: ScenarioConfig, hashes: Sequence[bytes], arrivals=None) -> _RoutingRun:
    def beacon(h: int) -> bytes:
        if not 0 <= h < len(hashes):
            raise MissingBeaconError(f"missing beacon height {h}")
        return hashes[h]

    return _RoutingRun(config, beacon, None, None, arrivals)
