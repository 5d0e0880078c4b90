"""In-process stand-in for the management blockchain.

A single-writer state machine: every mutation goes through a method on
:class:`Ledger`, and reads never mutate. ``state_digest()`` hashes the
canonical JSON export, so two ledgers fed the same transaction stream agree
byte-for-byte.
"""
from __future__ import annotations

import enum
import json
from dataclasses import dataclass
from fractions import Fraction
from math import floor
from typing import Iterable, Mapping, Sequence

from ._digest import ZERO_HASH, canonical_json, sha256
from .scheduler import PaymentPolicy, compute_payments


class LedgerError(Exception):
    pass


class UnknownHeightError(LedgerError):
    pass


class UnknownDataCenterError(LedgerError):
    pass


class StakeError(LedgerError):
    pass


class QuotaExceededError(LedgerError):
    pass


class DuplicateEndpointError(LedgerError):
    pass


class UnknownEndpointError(LedgerError):
    pass


class NotProviderError(LedgerError):
    pass


class AccessDeniedError(LedgerError):
    pass


class InsufficientFundsError(LedgerError):
    pass


class InvalidReceiptError(LedgerError):
    pass


class DisputeError(LedgerError):
    pass


class Method(str, enum.Enum):
    GET = "GET"
    PUT = "PUT"
    POST = "POST"
    DELETE = "DELETE"


@dataclass(frozen=True)
class Permission:
    get: bool = False
    put: bool = False
    post: bool = False
    delete: bool = False

    @classmethod
    def all(cls) -> "Permission":
        return cls(True, True, True, True)

    @classmethod
    def of(cls, *methods: Method | str) -> "Permission":
        names = {Method(m).value.lower() for m in methods}
        return cls(**{n: True for n in names})

    def allows(self, method: Method | str) -> bool:
        return getattr(self, Method(method).value.lower())

    def methods(self) -> list[Method]:
        return [m for m in Method if self.allows(m)]

    def to_dict(self) -> dict:
        return {"get": self.get, "put": self.put, "post": self.post, "delete": self.delete}


@dataclass
class Account:
    address: bytes
    balance: int = 0
    nonce: int = 0


@dataclass(frozen=True)
class Block:
    height: int
    parent_hash: bytes
    state_digest: bytes
    hash: bytes

    @staticmethod
    def compute_hash(height: int, parent_hash: bytes, state_digest: bytes) -> bytes:
        return sha256(height.to_bytes(8, "big"), parent_hash, state_digest)

    def to_dict(self) -> dict:
        return {
            "height": self.height,
            "parent_hash": self.parent_hash.hex(),
            "state_digest": self.state_digest.hex(),
            "hash": self.hash.hex(),
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "Block":
        return cls(
            height=int(d["height"]),
            parent_hash=bytes.fromhex(d["parent_hash"]),
            state_digest=bytes.fromhex(d["state_digest"]),
            hash=bytes.fromhex(d["hash"]),
        )


@dataclass
class EndpointRecord:
    path: str
    provider: bytes
    is_public: bool


@dataclass(frozen=True)
class AccessGrant:
    token_id: int
    subject: bytes
    endpoint_digest: bytes
    method_mask: Permission
    issued_at: int
    expires_at: int


@dataclass
class StakeRecord:
    entity: str
    staked: int
    slashed_total: int = 0


@dataclass
class GatewayRecord:
    gateway_id: str
    provider: bytes
    data_center: str
    endpoints: tuple[str, ...] = ()


@dataclass
class BillingAccount:
    user: bytes
    deposit: int
    accrued: int
    watermark: int
    cycle_length: int
    cycle_start: int = 0


class DisputeOutcome(str, enum.Enum):
    OPEN = "open"
    UPHELD = "upheld"
    REJECTED = "rejected"


@dataclass
class DisputeRecord:
    dispute_id: int
    claimant: bytes
    respondent: str
    call_id: str
    outcome: DisputeOutcome = DisputeOutcome.OPEN
    slash_amount: int = 0
    closed: bool = False


@dataclass
class LedgerConfig:
    min_stake: int = 10
    gateway_quota: int = 4
    watermark_fraction: Fraction = Fraction(4, 5)
    cycle_length: int = 1000
    fee_per_call: int = 1
    payment_policy: PaymentPolicy | None = None


def endpoint_digest(path: str) -> bytes:
    return sha256(path.encode())


class Ledger:
    """Deterministic management-chain state machine.

    Gateway identifiers (``"dc0/gw1"``) double as the gateway's on-ledger
    address for stakes and payments; users and providers use 32-byte
    addresses.
    """

    def __init__(self, config: LedgerConfig | None = None, *, seed: bytes = b""):
        self.config = config or LedgerConfig()
        self.seed = seed
        self.now = 0
        self.blocks: list[Block] = []
        self.accounts: dict[bytes, Account] = {}
        self.data_centers: list[str] = []
        self.gateways: dict[str, GatewayRecord] = {}
        self.stakes: dict[str, StakeRecord] = {}
        self.gateway_balances: dict[str, int] = {}
        self.handled_counts: dict[str, int] = {}
        self.endpoints: dict[str, EndpointRecord] = {}
        self.permissions: dict[bytes, dict[bytes, Permission]] = {}
        self.grants: dict[int, AccessGrant] = {}
        self.token_owner: dict[int, bytes] = {}
        self.next_token_id = 1
        self.user_keys: dict[bytes, bytes] = {}
        self.billing: dict[bytes, BillingAccount] = {}
        self.settled_windows: dict[tuple[str, bytes], int] = {}
        self.settled_calls: set[str] = set()
        self.disputes: dict[int, DisputeRecord] = {}
        self.reputation: dict[str, int] = {}
        self.load_feed_tick: int | None = None
        self.load_feed: tuple[int, ...] = ()
        self._core_digest: bytes | None = None

    # -- bookkeeping ------------------------------------------------------

    def _touch(self) -> None:
        self._core_digest = None

    def advance_to(self, tick: int) -> None:
        if tick < self.now:
            raise LedgerError(f"ledger time cannot go backwards ({tick} < {self.now})")
        self.now = tick

    # -- blocks / beacon --------------------------------------------------

    @property
    def head(self) -> Block | None:
        return self.blocks[-1] if self.blocks else None

    def append_block(self, state_digest: bytes | None = None) -> Block:
        """Seal a block over ``state_digest`` (defaults to the current state digest)."""
        if state_digest is None:
            state_digest = self.state_digest()
        if len(state_digest) != 32:
            raise ValueError("state_digest must be 32 bytes")
        height = len(self.blocks)
        parent = self.blocks[-1].hash if self.blocks else ZERO_HASH
        block = Block(height, parent, state_digest, Block.compute_hash(height, parent, state_digest))
        self.blocks.append(block)
        return block

    def beacon(self, height: int) -> bytes:
        if not 0 <= height < len(self.blocks):
            raise UnknownHeightError(f"no block at height {height}")
        return self.blocks[height].hash

    # -- accounts ---------------------------------------------------------

    def create_account(self, address: bytes, balance: int = 0) -> Account:
        if address in self.accounts:
            raise LedgerError(f"account {address.hex()[:12]} already exists")
        if balance < 0:
            raise ValueError("genesis balance must be non-negative")
        acct = Account(address, balance)
        self.accounts[address] = acct
        self._touch()
        return acct

    def _account(self, address: bytes) -> Account:
        acct = self.accounts.get(address)
        if acct is None:
            acct = self.create_account(address)
        return acct

    def _bump_nonce(self, address: bytes) -> None:
        self._account(address).nonce += 1

    def register_user_key(self, user: bytes, verification_key: bytes) -> None:
        self._account(user)
        self.user_keys[user] = verification_key
        self._bump_nonce(user)
        self._touch()

    # -- data centers and gateways ---------------------------------------

    def add_data_center(self, dc: str) -> None:
        if dc in self.data_centers:
            raise LedgerError(f"data center {dc!r} already known")
        self.data_centers.append(dc)
        self._touch()

    def gateways_in(self, dc: str) -> list[str]:
        return [g.gateway_id for g in self.gateways.values() if g.data_center == dc]

    def register_gateway(
        self, provider: bytes, data_center: str, stake: int, endpoints: Iterable[str] = ()
    ) -> str:
        if data_center not in self.data_centers:
            raise UnknownDataCenterError(f"unknown data center {data_center!r}")
        if stake < self.config.min_stake:
            raise StakeError(f"stake {stake} below minimum {self.config.min_stake}")
        existing = self.gateways_in(data_center)
        if len(existing) >= self.config.gateway_quota:
            raise QuotaExceededError(
                f"data center {data_center!r} already has {len(existing)} gateways"
            )
        acct = self._account(provider)
        if acct.balance < stake:
            raise InsufficientFundsError("provider balance does not cover the stake")
        acct.balance -= stake
        acct.nonce += 1
        gid = f"{data_center}/gw{len(existing)}"
        self.gateways[gid] = GatewayRecord(gid, provider, data_center, tuple(endpoints))
        self.stakes[gid] = StakeRecord(gid, stake)
        self.gateway_balances[gid] = 0
        self.handled_counts[gid] = 0
        self.reputation[gid] = 0
        self._touch()
        return gid

    # -- endpoint registry and access control ------------------------------

    def register_endpoint(self, provider: bytes, path: str, is_public: bool) -> None:
        if path in self.endpoints:
            raise DuplicateEndpointError(f"endpoint {path!r} already registered")
        self.endpoints[path] = EndpointRecord(path, provider, bool(is_public))
        self._bump_nonce(provider)
        self._touch()

    def _endpoint(self, path: str) -> EndpointRecord:
        rec = self.endpoints.get(path)
        if rec is None:
            raise UnknownEndpointError(f"unknown endpoint {path!r}")
        return rec

    def set_permission(self, provider: bytes, subject: bytes, path: str, perm: Permission) -> None:
        rec = self._endpoint(path)
        if rec.provider != provider:
            raise NotProviderError(f"caller is not the provider of {path!r}")
        self.permissions.setdefault(subject, {})[endpoint_digest(path)] = perm
        self._bump_nonce(provider)
        self._touch()

    def check_access(self, subject: bytes, path: str, method: Method | str) -> bool:
        rec = self._endpoint(path)
        if rec.is_public:
            return True
        perm = self.permissions.get(subject, {}).get(endpoint_digest(path))
        return perm is not None and perm.allows(method)

    def resolve_endpoint(self, path: str) -> tuple[bytes | None, list[str]]:
        rec = self.endpoints.get(path)
        if rec is None:
            return None, []
        hosts = sorted({g.data_center for g in self.gateways.values() if path in g.endpoints})
        return rec.provider, hosts

    # -- access tokens ----------------------------------------------------

    def issue_access_token(
        self, subject: bytes, path: str, methods: Permission, ttl: int
    ) -> AccessGrant:
        if ttl <= 0:
            raise ValueError("ttl must be positive")
        requested = methods.methods()
        if not requested:
            raise ValueError("token must cover at least one method")
        for m in requested:
            if not self.check_access(subject, path, m):
                raise AccessDeniedError(f"{m.value} on {path!r} not permitted")
        grant = AccessGrant(
            token_id=self.next_token_id,
            subject=subject,
            endpoint_digest=endpoint_digest(path),
            method_mask=methods,
            issued_at=self.now,
            expires_at=self.now + ttl,
        )
        self.next_token_id += 1
        self.grants[grant.token_id] = grant
        self.token_owner[grant.token_id] = subject
        self._bump_nonce(subject)
        self._touch()
        return grant

    def transfer_token(self, token_id: int, sender: bytes, recipient: bytes) -> None:
        if self.token_owner.get(token_id) != sender:
            raise LedgerError(f"token {token_id} not owned by sender")
        self.token_owner[token_id] = recipient
        self._bump_nonce(sender)
        self._touch()

    def verify_access_token(self, grant: AccessGrant, now: int, method: Method | str) -> bool:
        recorded = self.grants.get(grant.token_id)
        if recorded is None or recorded != grant:
            return False
        if self.token_owner.get(grant.token_id) != grant.subject:
            return False
        return now < grant.expires_at and grant.method_mask.allows(method)

    # -- billing ----------------------------------------------------------

    def deposit(self, user: bytes, amount: int, *, watermark: int | None = None) -> BillingAccount:
        if amount <= 0:
            raise ValueError("deposit must be positive")
        acct = self._account(user)
        if acct.balance < amount:
            raise InsufficientFundsError("wallet balance does not cover the deposit")
        acct.balance -= amount
        acct.nonce += 1
        ba = self.billing.get(user)
        if ba is None:
            ba = BillingAccount(user, 0, 0, 0, self.config.cycle_length, self.now)
            self.billing[user] = ba
        ba.deposit += amount
        if watermark is None:
            watermark = floor(ba.deposit * self.config.watermark_fraction)
        ba.watermark = min(watermark, ba.deposit)
        self._touch()
        return ba

    def record_handled_counts(self, counts: Mapping[str, int]) -> None:
        """Publish per-gateway handled counts for the epoch (taken from a verified routing trace)."""
        for g, n in counts.items():
            if g not in self.gateways:
                raise LedgerError(f"unknown gateway {g!r}")
            if n < 0:
                raise ValueError("handled counts must be non-negative")
            self.handled_counts[g] = int(n)
        self._touch()

    def weighted_amount(self, gateway: str, amount: int) -> int:
        """Gateway credit for ``amount`` pre-weighting tokens.

        The weight is the gateway's epoch payment over its unweighted fee
        total; it is 1 while the handled count stays within the limit.
        """
        policy = self.config.payment_policy
        n = self.handled_counts.get(gateway, 0)
        if policy is None or n == 0:
            return amount
        pay = compute_payments(self.handled_counts, policy, self.config.fee_per_call, self.gateway_dcs())[gateway]
        return floor(Fraction(amount) * pay / (self.config.fee_per_call * n))

    def gateway_dcs(self) -> dict[str, int]:
        return {g: self.data_centers.index(rec.data_center) for g, rec in self.gateways.items()}

    def settle_receipt(self, receipt, gateway: str, store, decrypt_key: bytes) -> int:
        """Verify ``receipt`` against the log store and move funds.

        Returns the (possibly negative) weighted amount credited to the gateway.
        """
        from .logstore import verify_receipt

        if receipt.gateway != gateway:
            raise InvalidReceiptError("receipt names a different gateway")
        if gateway not in self.gateways:
            raise InvalidReceiptError(f"unknown gateway {gateway!r}")
        if not receipt.call_ids:
            return 0
        key = (gateway, receipt.user)
        if receipt.window[0] <= self.settled_windows.get(key, -1):
            raise InvalidReceiptError("receipt window overlaps an already settled window")
        if any(c in self.settled_calls for c in receipt.call_ids):
            raise InvalidReceiptError("receipt re-bills an already settled call")
        if not verify_receipt(receipt, store, decrypt_key, self.user_keys):
            raise InvalidReceiptError("receipt failed verification")
        ba = self.billing.get(receipt.user)
        if ba is None or ba.deposit < receipt.total_fee:
            raise InsufficientFundsError("user deposit does not cover the receipt")
        credit = self.weighted_amount(gateway, receipt.total_fee)
        ba.deposit -= receipt.total_fee
        ba.accrued = 0
        ba.watermark = min(ba.watermark, ba.deposit)
        self.gateway_balances[gateway] += credit
        self.settled_windows[key] = receipt.window[1]
        self.settled_calls.update(receipt.call_ids)
        self._touch()
        return credit

    def total_supply(self) -> int:
        return (
            sum(a.balance for a in self.accounts.values())
            + sum(s.staked for s in self.stakes.values())
            + sum(b.deposit for b in self.billing.values())
            + sum(self.gateway_balances.values())
        )

    # -- trust management -------------------------------------------------

    def open_dispute(self, claimant: bytes, respondent: str, call_id: str) -> DisputeRecord:
        if respondent not in self.stakes:
            raise DisputeError(f"no staked entity {respondent!r}")
        d = DisputeRecord(len(self.disputes) + 1, claimant, respondent, call_id)
        self.disputes[d.dispute_id] = d
        self._bump_nonce(claimant)
        self._touch()
        return d

    def rule_dispute(self, dispute_id: int, upheld: bool, slash_amount: int = 0) -> DisputeRecord:
        """Record the governance outcome of a dispute."""
        d = self.disputes[dispute_id]
        if d.outcome is not DisputeOutcome.OPEN:
            raise DisputeError("dispute already ruled")
        if not upheld and slash_amount:
            raise DisputeError("a rejected dispute carries no slash")
        if upheld and slash_amount <= 0:
            raise DisputeError("an upheld dispute needs a positive slash amount")
        d.outcome = DisputeOutcome.UPHELD if upheld else DisputeOutcome.REJECTED
        d.slash_amount = slash_amount
        if not upheld:
            d.closed = True
        rep = self.reputation.get(d.respondent, 0)
        self.reputation[d.respondent] = rep - 1 if upheld else rep
        self._touch()
        return d

    def apply_slash(self, entity: str, amount: int, dispute: DisputeRecord) -> None:
        d = self.disputes.get(dispute.dispute_id)
        if d is None or d.outcome is not DisputeOutcome.UPHELD or d.closed:
            raise DisputeError("slashing requires an open, upheld dispute")
        if d.respondent != entity:
            raise DisputeError("dispute respondent does not match the slashed entity")
        rec = self.stakes[entity]
        if amount <= 0 or amount > rec.staked:
            raise StakeError(f"slash {amount} not within stake {rec.staked}")
        rec.staked -= amount
        rec.slashed_total += amount
        d.closed = True
        self._touch()

    # -- oracle feed ------------------------------------------------------

    def publish_load_feed(self, tick: int, queue_lengths: Sequence[int]) -> None:
        self.load_feed_tick = tick
        self.load_feed = tuple(queue_lengths)

    def read_load_feed(self) -> tuple[int | None, tuple[int, ...]]:
        return self.load_feed_tick, self.load_feed

    # -- export / import --------------------------------------------------

    def _dynamic_state(self) -> dict:
        return {
            "now": self.now,
            "load_feed": {"tick": self.load_feed_tick, "queues": list(self.load_feed)},
            "head": None if self.head is None else self.head.to_dict(),
        }

    def export_state(self, include_blocks: bool = True) -> dict:
        cfg = self.config
        state = {
            "seed": self.seed,
            "config": {
                "min_stake": cfg.min_stake,
                "gateway_quota": cfg.gateway_quota,
                "watermark_fraction": [cfg.watermark_fraction.numerator, cfg.watermark_fraction.denominator],
                "cycle_length": cfg.cycle_length,
                "fee_per_call": cfg.fee_per_call,
                "payment_policy": None if cfg.payment_policy is None else cfg.payment_policy.to_dict(),
            },
            "accounts": {a.hex(): {"balance": x.balance, "nonce": x.nonce} for a, x in self.accounts.items()},
            "data_centers": list(self.data_centers),
            "gateways": {
                g: {"provider": r.provider, "data_center": r.data_center, "endpoints": list(r.endpoints)}
                for g, r in self.gateways.items()
            },
            "stakes": {g: {"staked": s.staked, "slashed_total": s.slashed_total} for g, s in self.stakes.items()},
            "gateway_balances": dict(self.gateway_balances),
            "handled_counts": dict(self.handled_counts),
            "reputation": dict(self.reputation),
            "endpoints": {p: {"provider": e.provider, "is_public": e.is_public} for p, e in self.endpoints.items()},
            "permissions": {
                s.hex(): {d.hex(): p.to_dict() for d, p in m.items()} for s, m in self.permissions.items()
            },
            "grants": {
                str(t): {
                    "subject": g.subject,
                    "endpoint_digest": g.endpoint_digest,
                    "method_mask": g.method_mask.to_dict(),
                    "issued_at": g.issued_at,
                    "expires_at": g.expires_at,
                }
                for t, g in self.grants.items()
            },
            "token_owner": {str(t): o for t, o in self.token_owner.items()},
            "next_token_id": self.next_token_id,
            "user_keys": {u.hex(): k for u, k in self.user_keys.items()},
            "billing": {
                u.hex(): {
                    "deposit": b.deposit,
                    "accrued": b.accrued,
                    "watermark": b.watermark,
                    "cycle_length": b.cycle_length,
                    "cycle_start": b.cycle_start,
                }
                for u, b in self.billing.items()
            },
            "settled_windows": {f"{g}|{u.hex()}": end for (g, u), end in self.settled_windows.items()},
            "settled_calls": sorted(self.settled_calls),
            "disputes": {
                str(i): {
                    "claimant": d.claimant,
                    "respondent": d.respondent,
                    "call_id": d.call_id,
                    "outcome": d.outcome.value,
                    "slash_amount": d.slash_amount,
                    "closed": d.closed,
                }
                for i, d in self.disputes.items()
            },
        }
        state.update(self._dynamic_state())
        if include_blocks:
            state["blocks"] = [b.to_dict() for b in self.blocks]
        return state

    _DYNAMIC = ("now", "load_feed", "head")

    def state_digest(self) -> bytes:
        """Digest of the canonical state with the block list summarized by its head.

        Computed as ``sha256(canonical({"core": hex(sha256(canonical(core))),
        "now", "load_feed", "head"}))`` where ``core`` is the export without the
        fast-changing ``now``/``load_feed``/``head`` fields, so per-block
        sealing does not re-serialize the whole registry.
        """
        if self._core_digest is None:
            state = self.export_state(include_blocks=False)
            core = {k: v for k, v in state.items() if k not in self._DYNAMIC}
            self._core_digest = sha256(canonical_json(core))
        top = self._dynamic_state()
        top["core"] = self._core_digest.hex()
        return sha256(canonical_json(top))

    def to_json(self) -> str:
        return canonical_json(self.export_state()).decode()

    @classmethod
    def from_json(cls, text: str) -> "Ledger":
        return cls.from_state(json.loads(text))

    @classmethod
    def from_state(cls, s: Mapping) -> "Ledger":
        """Rebuild a ledger from a canonical export (integers may be decimal strings)."""
        i = int
        hx = bytes.fromhex
        c = s["config"]
        pp = c.get("payment_policy")
        cfg = LedgerConfig(
            min_stake=i(c["min_stake"]),
            gateway_quota=i(c["gateway_quota"]),
            watermark_fraction=Fraction(i(c["watermark_fraction"][0]), i(c["watermark_fraction"][1])),
            cycle_length=i(c["cycle_length"]),
            fee_per_call=i(c["fee_per_call"]),
            payment_policy=None if pp is None else PaymentPolicy.from_dict(pp),
        )
        led = cls(cfg, seed=hx(s["seed"]) if isinstance(s["seed"], str) else s["seed"])
        led.now = i(s["now"])
        led.accounts = {
            hx(a): Account(hx(a), i(v["balance"]), i(v["nonce"])) for a, v in s["accounts"].items()
        }
        led.data_centers = list(s["data_centers"])
        led.gateways = {
            g: GatewayRecord(g, hx(v["provider"]), v["data_center"], tuple(v["endpoints"]))
            for g, v in s["gateways"].items()
        }
        led.stakes = {g: StakeRecord(g, i(v["staked"]), i(v["slashed_total"])) for g, v in s["stakes"].items()}
        led.gateway_balances = {g: i(v) for g, v in s["gateway_balances"].items()}
        led.handled_counts = {g: i(v) for g, v in s["handled_counts"].items()}
        led.reputation = {g: i(v) for g, v in s["reputation"].items()}
        led.endpoints = {
            p: EndpointRecord(p, hx(v["provider"]), bool(v["is_public"])) for p, v in s["endpoints"].items()
        }
        led.permissions = {
            hx(sub): {hx(d): Permission(**p) for d, p in m.items()} for sub, m in s["permissions"].items()
        }
        led.grants = {
            i(t): AccessGrant(
                i(t), hx(g["subject"]), hx(g["endpoint_digest"]), Permission(**g["method_mask"]),
                i(g["issued_at"]), i(g["expires_at"]),
            )
            for t, g in s["grants"].items()
        }
        led.token_owner = {i(t): hx(o) for t, o in s["token_owner"].items()}
        led.next_token_id = i(s["next_token_id"])
        led.user_keys = {hx(u): hx(k) for u, k in s["user_keys"].items()}
        led.billing = {
            hx(u): BillingAccount(
                hx(u), i(b["deposit"]), i(b["accrued"]), i(b["watermark"]),
                i(b["cycle_length"]), i(b["cycle_start"]),
            )
            for u, b in s["billing"].items()
        }
        led.settled_windows = {}
        for k, end in s["settled_windows"].items():
            g, u = k.split("|")
            led.settled_windows[(g, hx(u))] = i(end)
        led.settled_calls = set(s["settled_calls"])
        led.disputes = {
            i(n): DisputeRecord(
                i(n), hx(d["claimant"]), d["respondent"], d["call_id"],
                DisputeOutcome(d["outcome"]), i(d["slash_amount"]), bool(d["closed"]),
            )
            for n, d in s["disputes"].items()
        }
        feed = s["load_feed"]
        led.load_feed_tick = None if feed["tick"] is None else i(feed["tick"])
        led.load_feed = tuple(i(q) for q in feed["queues"])
        led.blocks = [Block.from_dict(b) for b in s.get("blocks", [])]
        return led
