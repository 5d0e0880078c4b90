"""Scenario configuration: JSON document, dotted-path overrides, validation."""
from __future__ import annotations

import copy
import json
from dataclasses import asdict, dataclass, field, fields
from fractions import Fraction
from pathlib import Path
from typing import Any, Mapping

from ..events import MeshParams
from ..scheduler import PaymentPolicy, Policy


class ConfigError(ValueError):
    """Invalid scenario; ``key`` names the offending dotted config path."""

    def __init__(self, key: str, message: str):
        super().__init__(f"{key}: {message}")
        self.key = key


ARRIVAL_MODES = ("random", "single_dc")


@dataclass
class SimParams:
    num_data_centers: int = 6
    gateways_per_dc: int = 3
    capacity: int | None = 1
    capacities: list[int] | None = None
    policy: str = "default"
    arrival_mode: str = "random"
    total_calls: int = 10_000
    runs: int = 5
    arrival_rate: float | None = None
    load_factor: float = 0.95
    refresh_period: int | None = 1
    blocks_interval: int = 1
    choice2_multiplier: float = 3
    forward_delay: int = 0
    max_hops: int = 1
    service_time: int = 1
    service_time_max: int | None = None
    oracle_noise: int = 0


@dataclass
class LedgerParams:
    min_stake: int = 10
    gateway_quota: int = 4
    gateway_stake: int = 10


@dataclass
class BillingParams:
    fee_per_call: int = 1
    watermark_fraction: float = 0.8
    cycle_length: int = 1000
    deposit: int = 1000
    users: int = 3


@dataclass
class PaymentParams:
    tolerance: float = 0.1
    overage_penalty: float = 2
    target_distribution: list[float] | None = None


_SECTIONS = {
    "sim": SimParams,
    "ledger": LedgerParams,
    "billing": BillingParams,
    "payment": PaymentParams,
    "mesh": MeshParams,
}


@dataclass
class ScenarioConfig:
    seed: str = "faasplane"
    sim: SimParams = field(default_factory=SimParams)
    ledger: LedgerParams = field(default_factory=LedgerParams)
    billing: BillingParams = field(default_factory=BillingParams)
    payment: PaymentParams = field(default_factory=PaymentParams)
    mesh: MeshParams = field(default_factory=MeshParams)

    # -- derived views -----------------------------------------------------

    @property
    def policy(self) -> Policy:
        return Policy(self.sim.policy)

    def capacities(self) -> list[float]:
        s = self.sim
        if s.capacities is not None:
            return [float(c) for c in s.capacities]
        cap = float("inf") if s.capacity is None else float(s.capacity)
        return [cap] * s.num_data_centers

    def arrival_rate(self) -> float:
        s = self.sim
        if s.arrival_rate is not None:
            return float(s.arrival_rate)
        total = sum(self.capacities())
        if total == float("inf"):
            return float(s.num_data_centers)
        return s.load_factor * total

    def payment_policy(self) -> PaymentPolicy:
        p = self.payment
        k = self.sim.num_data_centers
        if p.target_distribution is None:
            dist = tuple(Fraction(1, k) for _ in range(k))
        else:
            dist = tuple(Fraction(x).limit_denominator(10**6) for x in p.target_distribution)
        return PaymentPolicy(
            dist,
            tolerance=Fraction(p.tolerance).limit_denominator(10**6),
            overage_penalty=Fraction(p.overage_penalty).limit_denominator(10**6),
        )

    # -- (de)serialization --------------------------------------------------

    def to_dict(self) -> dict:
        d: dict[str, Any] = {"seed": self.seed}
        for name in _SECTIONS:
            d[name] = asdict(getattr(self, name))
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, d: Mapping) -> "ScenarioConfig":
        unknown = set(d) - set(_SECTIONS) - {"seed"}
        if unknown:
            raise ConfigError(sorted(unknown)[0], "unknown config section")
        kwargs: dict[str, Any] = {"seed": str(d.get("seed", "faasplane"))}
        for name, klass in _SECTIONS.items():
            section = d.get(name, {}) or {}
            if not isinstance(section, Mapping):
                raise ConfigError(name, "section must be a JSON object")
            known = {f.name for f in fields(klass)}
            for k in section:
                if k not in known:
                    raise ConfigError(f"{name}.{k}", "unknown config key")
            try:
                kwargs[name] = klass(**section)
            except (TypeError, ValueError) as exc:
                raise ConfigError(name, str(exc)) from None
        cfg = cls(**kwargs)
        cfg.validate()
        return cfg

    @classmethod
    def load(cls, path: str | Path, overrides: list[str] | None = None) -> "ScenarioConfig":
        p = Path(path)
        try:
            raw = json.loads(p.read_text())
        except FileNotFoundError:
            raise ConfigError("scenario", f"file not found: {p}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError("scenario", f"invalid JSON: {exc}") from None
        return cls.from_dict(apply_overrides(raw, overrides or []))

    def with_overrides(self, overrides: list[str]) -> "ScenarioConfig":
        return ScenarioConfig.from_dict(apply_overrides(self.to_dict(), overrides))

    def validate(self) -> None:
        s = self.sim

        def need(ok: bool, key: str, msg: str) -> None:
            if not ok:
                raise ConfigError(key, msg)

        for name in ("num_data_centers", "gateways_per_dc", "total_calls", "runs", "blocks_interval",
                     "max_hops", "service_time", "forward_delay", "oracle_noise"):
            need(isinstance(getattr(s, name), int) and not isinstance(getattr(s, name), bool),
                 f"sim.{name}", "must be an integer")
        need(s.num_data_centers >= 2, "sim.num_data_centers", "need at least 2 data centers")
        need(s.gateways_per_dc >= 1, "sim.gateways_per_dc", "need at least 1 gateway per data center")
        need(s.gateways_per_dc <= self.ledger.gateway_quota, "sim.gateways_per_dc",
             f"exceeds the per-cloud gateway quota ({self.ledger.gateway_quota})")
        need(self.ledger.gateway_stake >= self.ledger.min_stake, "ledger.gateway_stake",
             "below the minimum stake")
        need(s.total_calls >= 1, "sim.total_calls", "must be >= 1")
        need(s.runs >= 1, "sim.runs", "must be >= 1")
        need(s.policy in {p.value for p in Policy}, "sim.policy", f"unknown policy {s.policy!r}")
        need(s.arrival_mode in ARRIVAL_MODES, "sim.arrival_mode", f"unknown arrival mode {s.arrival_mode!r}")
        need(s.capacity is None or (isinstance(s.capacity, int) and s.capacity >= 1), "sim.capacity",
             "must be a positive integer or null (unbounded)")
        if s.capacities is not None:
            need(len(s.capacities) == s.num_data_centers, "sim.capacities", "one entry per data center")
            need(all(isinstance(c, int) and c >= 1 for c in s.capacities), "sim.capacities",
                 "entries must be positive integers")
        need(s.arrival_rate is None or s.arrival_rate > 0, "sim.arrival_rate", "must be positive")
        need(s.load_factor > 0, "sim.load_factor", "must be positive")
        need(s.refresh_period is None or (isinstance(s.refresh_period, int) and s.refresh_period >= 1),
             "sim.refresh_period", "must be a positive integer or null (never refresh)")
        need(s.blocks_interval >= 1, "sim.blocks_interval", "must be >= 1")
        need(s.choice2_multiplier > 0, "sim.choice2_multiplier", "must be positive")
        need(s.forward_delay >= 0, "sim.forward_delay", "must be >= 0")
        need(s.max_hops >= 1, "sim.max_hops", "must be >= 1")
        need(s.service_time >= 1, "sim.service_time", "must be >= 1")
        need(s.service_time_max is None or s.service_time_max >= 1, "sim.service_time_max", "must be >= 1")
        need(s.oracle_noise >= 0, "sim.oracle_noise", "must be >= 0")
        b = self.billing
        need(0 < b.watermark_fraction <= 1, "billing.watermark_fraction", "must be in (0, 1]")
        need(b.cycle_length >= 1, "billing.cycle_length", "must be >= 1")
        if self.payment.target_distribution is not None:
            need(len(self.payment.target_distribution) == s.num_data_centers,
                 "payment.target_distribution", "one fraction per data center")
        try:
            self.payment_policy()
        except ValueError as exc:
            raise ConfigError("payment.target_distribution", str(exc)) from None


def _parse_value(raw: str) -> Any:
    try:
        return json.loads(raw)
    except json.JSONDecodeError:
        return raw


def apply_overrides(doc: Mapping, overrides: list[str]) -> dict:
    """Apply ``key=value`` overrides; bare keys resolve to the unique section holding them."""
    out = copy.deepcopy(dict(doc))
    for item in overrides:
        if "=" not in item:
            raise ConfigError(item, "override must look like key=value")
        key, raw = item.split("=", 1)
        key = key.strip()
        value = _parse_value(raw)
        if key == "seed":
            out["seed"] = str(value)
            continue
        if "." in key:
            section, name = key.split(".", 1)
        else:
            owners = [s for s, k in _SECTIONS.items() if key in {f.name for f in fields(k)}]
            if len(owners) != 1:
                raise ConfigError(key, "unknown config key" if not owners else "ambiguous key; use section.key")
            section, name = owners[0], key
        klass = _SECTIONS.get(section)
        if klass is None or name not in {f.name for f in fields(klass)}:
            raise ConfigError(key, "unknown config key")
        out.setdefault(section, {})
        out[section] = dict(out[section])
        out[section][name] = value
    return out
