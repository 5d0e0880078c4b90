"""Public replay of a routing trace from the beacon chain and the scenario alone."""
from __future__ import annotations

import json
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Sequence

from .._digest import ZERO_HASH
from ..ledger import Block
from ..scheduler import RoutingDecision
from .config import ScenarioConfig
from .engine import MissingBeaconError, make_replay


class MalformedBeaconsError(ValueError):
    pass


@dataclass(frozen=True)
class VerifyResult:
    ok: bool
    call_id: int | None = None
    index: int | None = None
    field: str | None = None
    reason: str = ""

    def __bool__(self) -> bool:
        return self.ok


def check_chain(blocks: Sequence[Block]) -> str | None:
    """Return a description of the first broken link, or ``None`` for a sound chain."""
    parent = ZERO_HASH
    for i, b in enumerate(blocks):
        if b.height != i:
            return f"block {i} has height {b.height}"
        if b.parent_hash != parent:
            return f"block {i} does not link to its parent"
        if Block.compute_hash(b.height, b.parent_hash, b.state_digest) != b.hash:
            return f"block {i} hash does not match its header"
        parent = b.hash
    return None


def load_beacons(path: str | Path) -> list[Block]:
    try:
        doc = json.loads(Path(path).read_text())
        return [Block.from_dict(b) for b in doc["blocks"]]
    except (KeyError, TypeError, ValueError) as exc:
        raise MalformedBeaconsError(f"{path}: {exc}") from None


def dump_beacons(blocks: Sequence[Block], run_index: int) -> str:
    return json.dumps({"run_index": run_index, "blocks": [b.to_dict() for b in blocks]}, indent=1)


def _first_diff(a: RoutingDecision, b: RoutingDecision) -> str | None:
    for f in fields(RoutingDecision):
        if getattr(a, f.name) != getattr(b, f.name):
            return f.name
    return None


def replay_verify(
    trace: Sequence[RoutingDecision], blocks: Sequence[Block], config: ScenarioConfig
) -> VerifyResult:
    """Recompute every decision and compare it to ``trace``.

    Raises :class:`MissingBeaconError` when the chain ends before a height the
    replay needs.
    """
    broken = check_chain(blocks)
    if broken:
        return VerifyResult(False, reason=f"beacon chain invalid: {broken}")
    replay = make_replay(config, [b.hash for b in blocks])
    replay.run()
    expected = replay.decisions
    for i, (want, got) in enumerate(zip(expected, trace)):
        diff = _first_diff(want, got)
        if diff is not None:
            return VerifyResult(False, got.call_id, i, diff, f"call {got.call_id}: {diff} differs")
    if len(expected) != len(trace):
        i = min(len(expected), len(trace))
        cid = trace[i].call_id if i < len(trace) else expected[i].call_id
        return VerifyResult(False, cid, i, None, f"trace has {len(trace)} decisions, replay {len(expected)}")
    return VerifyResult(True, reason=f"{len(trace)} decisions verified")


__all__ = ["VerifyResult", "replay_verify", "check_chain", "load_beacons", "dump_beacons",
           "MalformedBeaconsError", "MissingBeaconError"]
