"""Scored gossip publish/subscribe mesh and the topic-to-function trigger connector.

The whole overlay runs inside one deterministic event loop: links have
fixed integer delays, every random pick (graft/prune targets, fan-out peers)
is drawn from a beacon hash, and peers are always visited in sorted order.

Full messages go eagerly to mesh peers. The metadata gossip that real
GossipSub uses to reach non-mesh subscribers is simulated as a lazy
full-message push one heartbeat later; receivers drop duplicates.
"""
from __future__ import annotations

import csv
import heapq
import io
import json
import logging
from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping

from ._digest import address_of, sha256
from .scheduler import draw_uniform

log = logging.getLogger(__name__)

MAX_PAYLOAD = 256 * 1024
VALID_DELIVERY_REWARD = 1
VIOLATION_PENALTY = -10


class EventsError(Exception):
    pass


class PayloadTooLargeError(EventsError):
    pass


class UnboundTopicError(EventsError):
    pass


@dataclass(frozen=True)
class MeshParams:
    D: int = 6
    D_lo: int = 4
    D_hi: int = 12
    score_threshold: float = 0
    fanout_size: int = 6
    heartbeat_period: int = 1
    fanout_ttl: int = 60
    max_payload: int = MAX_PAYLOAD

    def __post_init__(self):
        if not self.D_lo <= self.D <= self.D_hi:
            raise ValueError("mesh degree bounds must satisfy D_lo <= D <= D_hi")
        if self.fanout_size < 1:
            raise ValueError("fanout_size must be at least 1")
        if self.heartbeat_period < 1:
            raise ValueError("heartbeat_period must be at least 1")

    @classmethod
    def from_dict(cls, d: Mapping) -> "MeshParams":
        return cls(**{k: v for k, v in d.items() if k in cls.__dataclass_fields__})


@dataclass(frozen=True)
class GossipMessage:
    msg_id: bytes
    topic: str
    payload: bytes
    publisher: str
    seqno: int

    @staticmethod
    def make_id(publisher: str, seqno: int, payload: bytes) -> bytes:
        return sha256(publisher.encode(), b"\x00", seqno.to_bytes(8, "big"), payload)


@dataclass
class PeerState:
    peer_id: str
    neighbors: dict[str, int]
    subscribed_topics: set[str] = field(default_factory=set)
    mesh_peers: dict[str, set[str]] = field(default_factory=dict)
    fanout_peers: dict[str, set[str]] = field(default_factory=dict)
    fanout_last_used: dict[str, int] = field(default_factory=dict)
    scores: dict[str, float] = field(default_factory=dict)
    seen: set[bytes] = field(default_factory=set)
    seqno: int = 0

    def score_of(self, other: str) -> float:
        return self.scores.get(other, 0)


@dataclass(frozen=True)
class Delivery:
    tick: int
    msg_id: bytes
    sender: str
    receiver: str
    topic: str


@dataclass(frozen=True)
class Topology:
    """Undirected peer graph with constant per-edge delays and initial scores."""

    delays: Mapping[str, Mapping[str, int]]
    initial_scores: Mapping[str, float]

    @property
    def peer_ids(self) -> list[str]:
        return sorted(self.delays)

    @classmethod
    def from_dict(cls, d: Mapping) -> "Topology":
        """Parse ``{"peers": {id: {"score": s, "neighbors": {id: delay}}}}``."""
        peers = d["peers"]
        delays: dict[str, dict[str, int]] = {p: {} for p in peers}
        scores = {}
        for pid, entry in peers.items():
            scores[pid] = entry.get("score", 0)
            for other, delay in entry.get("neighbors", {}).items():
                if other not in peers:
                    raise EventsError(f"peer {pid!r} lists unknown neighbor {other!r}")
                if other == pid:
                    raise EventsError(f"self-loop on {pid!r}")
                delay = int(delay)
                if delay < 0:
                    raise EventsError("link delays must be non-negative")
                prev = delays[other].get(pid)
                if prev is not None and prev != delay:
                    raise EventsError(f"asymmetric delay on edge {pid!r}-{other!r}")
                delays[pid][other] = delay
                delays[other][pid] = delay
        return cls(delays, scores)

    @classmethod
    def from_json(cls, text: str) -> "Topology":
        return cls.from_dict(json.loads(text))

    @classmethod
    def from_edges(cls, edges: Iterable[tuple[str, str, int]], scores: Mapping[str, float] | None = None,
                   peers: Iterable[str] = ()) -> "Topology":
        delays: dict[str, dict[str, int]] = {p: {} for p in peers}
        for a, b, w in edges:
            delays.setdefault(a, {})[b] = w
            delays.setdefault(b, {})[a] = w
        scores = dict(scores or {})
        return cls(delays, {p: scores.get(p, 0) for p in delays})

    def to_dict(self) -> dict:
        return {
            "peers": {
                p: {"score": self.initial_scores.get(p, 0), "neighbors": dict(sorted(self.delays[p].items()))}
                for p in self.peer_ids
            }
        }


def default_beacon(seed: bytes) -> Callable[[int], bytes]:
    return lambda tick: sha256(b"mesh-beacon", seed, tick.to_bytes(8, "big"))


def _pick(pool: list[str], n: int, beacon_hash: bytes, label: str) -> list[str]:
    """Deterministic sample of ``n`` items without replacement."""
    pool = sorted(pool)
    out = []
    for i in range(min(n, len(pool))):
        j = draw_uniform(beacon_hash, f"{label}|{i}".encode(), len(pool))
        out.append(pool.pop(j))
    return out


@dataclass
class CallRecord:
    """One API call entering the routing pipeline."""

    call_id: str
    caller: bytes
    endpoint: str
    tick: int
    nonce: int | None = None
    signature: bytes | None = None
    source: str = "user"
    msg_id: bytes | None = None
    decisions: list = field(default_factory=list)


class TriggerConnector:
    """Maps delivered topic messages onto calls of ledger-registered functions."""

    def __init__(self, bindings: Mapping[str, str], ledger):
        for topic, path in bindings.items():
            provider, _ = ledger.resolve_endpoint(path)
            if provider is None:
                raise EventsError(f"topic {topic!r} bound to unregistered function {path!r}")
        self.bindings = dict(bindings)
        self.ledger = ledger
        self._dispatched: set[bytes] = set()
        self.calls: list[CallRecord] = []

    def dispatch_trigger(self, message: GossipMessage, tick: int, peer: str = "") -> CallRecord | None:
        """Emit a call for ``message``; a msg_id seen before yields ``None``."""
        path = self.bindings.get(message.topic)
        if path is None:
            raise UnboundTopicError(f"no function bound to topic {message.topic!r}")
        if message.msg_id in self._dispatched:
            return None
        self._dispatched.add(message.msg_id)
        rec = CallRecord(
            call_id=f"evt:{message.msg_id.hex()[:16]}:{peer}",
            caller=address_of(message.publisher),
            endpoint=path,
            tick=tick,
            source="event",
            msg_id=message.msg_id,
        )
        self.calls.append(rec)
        return rec


# only message arrivals are queued; a heartbeat runs after same-tick arrivals
_MSG = 0


class Mesh:
    def __init__(
        self,
        topology: Topology,
        params: MeshParams | None = None,
        *,
        beacon: Callable[[int], bytes] | None = None,
        seed: bytes = b"",
    ):
        self.params = params or MeshParams()
        self.topology = topology
        self.beacon = beacon or default_beacon(seed)
        self.peers: dict[str, PeerState] = {}
        for pid in topology.peer_ids:
            nbrs = dict(topology.delays[pid])
            self.peers[pid] = PeerState(
                pid, nbrs, scores={n: topology.initial_scores.get(n, 0) for n in nbrs}
            )
        self.now = 0
        self._queue: list = []
        self._seq = 0
        self.messages: dict[bytes, GossipMessage] = {}
        self.deliveries: list[Delivery] = []
        self.undeliverable: list[bytes] = []
        self.duplicates = 0
        self.eager_sends = 0
        self.lazy_sends = 0
        self.connectors: dict[str, TriggerConnector] = {}
        self.run_log: list[str] = []
        self._next_heartbeat = 0

    # -- membership -------------------------------------------------------

    def subscribe(self, peer: str, topic: str) -> None:
        st = self.peers[peer]
        st.subscribed_topics.add(topic)
        st.mesh_peers.setdefault(topic, set())
        st.fanout_peers.pop(topic, None)
        st.fanout_last_used.pop(topic, None)

    def unsubscribe(self, peer: str, topic: str) -> None:
        st = self.peers[peer]
        st.subscribed_topics.discard(topic)
        for other in st.mesh_peers.pop(topic, set()):
            self.peers[other].mesh_peers.get(topic, set()).discard(peer)

    def subscribers(self, topic: str) -> list[str]:
        return [p for p in sorted(self.peers) if topic in self.peers[p].subscribed_topics]

    def _eligible(self, viewer: PeerState, other: str, topic: str) -> bool:
        return (
            topic in self.peers[other].subscribed_topics
            and viewer.score_of(other) >= self.params.score_threshold
        )

    def update_score(self, peer: str, observed: str, delta: float) -> None:
        st = self.peers[peer]
        st.scores[observed] = st.score_of(observed) + delta

    def attach_connector(self, peer: str, connector: TriggerConnector) -> None:
        self.connectors[peer] = connector

    # -- heartbeat --------------------------------------------------------

    def heartbeat(self, peer: str, beacon_hash: bytes | None = None) -> list[tuple[str, str, str]]:
        """Maintain ``peer``'s meshes; returns ``(action, topic, other)`` tuples."""
        p = self.params
        st = self.peers[peer]
        bh = self.beacon(self.now) if beacon_hash is None else beacon_hash
        actions = []
        for topic in sorted(st.subscribed_topics):
            mesh = st.mesh_peers.setdefault(topic, set())
            for other in sorted(mesh):
                if not self._eligible(st, other, topic):
                    self._prune(peer, other, topic)
                    actions.append(("prune", topic, other))
            if len(mesh) < p.D_lo:
                pool = [n for n in st.neighbors if n not in mesh and self._eligible(st, n, topic)]
                for other in _pick(pool, p.D - len(mesh), bh, f"{peer}|{topic}|graft"):
                    self._graft(peer, other, topic)
                    actions.append(("graft", topic, other))
            elif len(mesh) > p.D_hi:
                for other in _pick(list(mesh), len(mesh) - p.D, bh, f"{peer}|{topic}|prune"):
                    self._prune(peer, other, topic)
                    actions.append(("prune", topic, other))
        for topic in sorted(st.fanout_peers):
            if self.now - st.fanout_last_used.get(topic, self.now) > p.fanout_ttl:
                del st.fanout_peers[topic]
                st.fanout_last_used.pop(topic, None)
                actions.append(("fanout-expire", topic, ""))
        return actions

    def _graft(self, peer: str, other: str, topic: str) -> None:
        self.peers[peer].mesh_peers.setdefault(topic, set()).add(other)
        other_st = self.peers[other]
        # the remote side accepts the graft only if it still rates us eligible
        if topic in other_st.subscribed_topics and other_st.score_of(peer) >= self.params.score_threshold:
            other_st.mesh_peers.setdefault(topic, set()).add(peer)

    def _prune(self, peer: str, other: str, topic: str) -> None:
        self.peers[peer].mesh_peers.get(topic, set()).discard(other)
        self.peers[other].mesh_peers.get(topic, set()).discard(peer)

    def heartbeat_all(self) -> list[tuple[str, str, str, str]]:
        bh = self.beacon(self.now)
        return [(peer, *a) for peer in sorted(self.peers) for a in self.heartbeat(peer, bh)]

    # -- publishing -------------------------------------------------------

    def _push(self, tick: int, kind: int, payload) -> None:
        heapq.heappush(self._queue, (tick, kind, self._seq, payload))
        self._seq += 1

    def _send(self, sender: str, receiver: str, msg_id: bytes, extra_delay: int, lazy: bool) -> None:
        st = self.peers[sender]
        if st.score_of(receiver) < self.params.score_threshold:
            return
        if lazy:
            self.lazy_sends += 1
        else:
            self.eager_sends += 1
        self._push(self.now + extra_delay + st.neighbors[receiver], _MSG, (sender, receiver, msg_id))

    def _relay(self, peer: str, msg: GossipMessage, exclude: str | None) -> None:
        st = self.peers[peer]
        mesh = st.mesh_peers.get(msg.topic, set())
        for other in sorted(mesh):
            if other != exclude:
                self._send(peer, other, msg.msg_id, 0, lazy=False)
        for other in sorted(st.neighbors):
            if other != exclude and other not in mesh and self._eligible(st, other, msg.topic):
                self._send(peer, other, msg.msg_id, self.params.heartbeat_period, lazy=True)

    def publish(self, peer: str, topic: str, payload: bytes) -> GossipMessage:
        """Inject a message at ``peer``; deliveries happen as the loop advances."""
        if len(payload) > self.params.max_payload:
            raise PayloadTooLargeError(f"payload of {len(payload)} bytes exceeds {self.params.max_payload}")
        st = self.peers[peer]
        st.seqno += 1
        msg = GossipMessage(GossipMessage.make_id(peer, st.seqno, payload), topic, payload, peer, st.seqno)
        self.messages[msg.msg_id] = msg
        st.seen.add(msg.msg_id)
        if not any(p != peer for p in self.subscribers(topic)):
            self.undeliverable.append(msg.msg_id)
            self.run_log.append(f"{self.now}: message {msg.msg_id.hex()[:16]} on {topic!r} has no subscribers")
            return msg
        if topic in st.subscribed_topics:
            self._relay(peer, msg, exclude=None)
            return msg
        fan = st.fanout_peers.setdefault(topic, set())
        for other in sorted(fan):
            if not self._eligible(st, other, topic):
                fan.discard(other)
        if len(fan) < self.params.fanout_size:
            pool = [n for n in st.neighbors if n not in fan and self._eligible(st, n, topic)]
            fan.update(_pick(pool, self.params.fanout_size - len(fan), self.beacon(self.now),
                             f"{peer}|{topic}|fanout|{st.seqno}"))
        st.fanout_last_used[topic] = self.now
        if not fan:
            self.undeliverable.append(msg.msg_id)
            self.run_log.append(f"{self.now}: no eligible fan-out peers for {topic!r} at {peer}")
        for other in sorted(fan):
            self._send(peer, other, msg.msg_id, 0, lazy=False)
        return msg

    def _receive(self, sender: str, receiver: str, msg_id: bytes) -> None:
        st = self.peers[receiver]
        if msg_id in st.seen:
            self.duplicates += 1
            return
        msg = self.messages[msg_id]
        st.seen.add(msg_id)
        self.deliveries.append(Delivery(self.now, msg_id, sender, receiver, msg.topic))
        self.update_score(receiver, sender, VALID_DELIVERY_REWARD)
        conn = self.connectors.get(receiver)
        if conn is not None:
            try:
                conn.dispatch_trigger(msg, self.now, receiver)
            except UnboundTopicError as exc:
                self.run_log.append(f"{self.now}: {receiver}: {exc}")
                log.warning("%s: %s", receiver, exc)
        if msg.topic in st.subscribed_topics:
            self._relay(receiver, msg, exclude=sender)

    # -- event loop -------------------------------------------------------

    def run_until(self, tick: int, *, heartbeats: bool = True) -> None:
        """Process message arrivals and periodic heartbeats up to ``tick`` inclusive."""
        while True:
            next_msg = self._queue[0][0] if self._queue else None
            next_hb = self._next_heartbeat if heartbeats else None
            candidates = [t for t in (next_msg, next_hb) if t is not None and t <= tick]
            if not candidates:
                break
            t = min(candidates)
            self.now = t
            if next_msg == t:
                _, _, _, (s, r, mid) = heapq.heappop(self._queue)
                self._receive(s, r, mid)
            else:
                self.heartbeat_all()
                self._next_heartbeat = t + self.params.heartbeat_period
        self.now = max(self.now, tick)

    def settle(self) -> None:
        """Drain all in-flight messages with the mesh frozen."""
        while self._queue:
            t, _, _, (s, r, mid) = heapq.heappop(self._queue)
            self.now = max(self.now, t)
            self._receive(s, r, mid)

    def warm_up(self, rounds: int) -> None:
        for _ in range(rounds):
            self.heartbeat_all()

    def delivered_to(self, msg_id: bytes) -> set[str]:
        return {d.receiver for d in self.deliveries if d.msg_id == msg_id}

    def publish_and_settle(self, peer: str, topic: str, payload: bytes) -> set[str]:
        msg = self.publish(peer, topic, payload)
        self.settle()
        return self.delivered_to(msg.msg_id)


def flood_oracle(topology: Topology, subscribers: Iterable[str], below_threshold: Iterable[str],
                 publisher: str) -> set[str]:
    """Peers reachable from ``publisher`` by flooding through eligible subscribers only."""
    eligible = set(subscribers) - set(below_threshold)
    start = [n for n in topology.delays[publisher] if n in eligible] if publisher not in eligible else [publisher]
    seen = set(start)
    stack = list(start)
    while stack:
        u = stack.pop()
        for v in topology.delays[u]:
            if v in eligible and v not in seen:
                seen.add(v)
                stack.append(v)
    seen.discard(publisher)
    return seen


def write_delivery_csv(deliveries: Iterable[Delivery], fh=None) -> str | None:
    out = io.StringIO() if fh is None else fh
    w = csv.writer(out, lineterminator="\n")
    w.writerow(["tick", "msg_id", "from", "to", "topic"])
    for d in deliveries:
        w.writerow([d.tick, d.msg_id.hex(), d.sender, d.receiver, d.topic])
    return out.getvalue() if fh is None else None


def run_schedule(topology: Topology, schedule: Mapping) -> Mesh:
    """Drive a mesh from an event schedule document.

    ``schedule`` keys: ``seed``, ``params``, ``subscriptions`` ({peer: [topics]}),
    ``warmup`` (heartbeat rounds before tick 0), ``publish`` and
    ``score_updates`` (lists of tick-stamped actions) and optional ``until``.
    """
    params = MeshParams.from_dict(schedule.get("params", {}))
    mesh = Mesh(topology, params, seed=str(schedule.get("seed", "")).encode())
    for peer, topics in sorted(schedule.get("subscriptions", {}).items()):
        if peer not in mesh.peers:
            raise EventsError(f"subscription for unknown peer {peer!r}")
        for t in topics:
            mesh.subscribe(peer, t)
    mesh.warm_up(int(schedule.get("warmup", 3)))
    actions = []
    for pub in schedule.get("publish", []):
        actions.append((int(pub["tick"]), 1, "publish", pub))
    for upd in schedule.get("score_updates", []):
        actions.append((int(upd["tick"]), 0, "score", upd))
    actions.sort(key=lambda a: (a[0], a[1]))
    for tick, _, kind, a in actions:
        if tick > 0:
            mesh.run_until(tick - 1)
        mesh.now = max(mesh.now, tick)
        if kind == "publish":
            mesh.publish(a["peer"], a["topic"], str(a.get("payload", "")).encode())
        else:
            mesh.update_score(a["peer"], a["observed"], a["delta"])
    last = max((a[0] for a in actions), default=0)
    mesh.run_until(int(schedule.get("until", last + 100)))
    mesh.settle()
    return mesh
