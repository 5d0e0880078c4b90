"""End-to-end billing walk-through: sign, route, log, receipt, settle."""
from __future__ import annotations

from dataclasses import dataclass, field

from .._digest import address_of, sha256
from ..ledger import Ledger, Method, Permission, endpoint_digest
from ..logstore import BillingMeter, LogStore, ReceiptError, UserKey, sign_request
from .config import ScenarioConfig
from .engine import build_ledger, run

FUNCTION_PATH = "/rent/quote"


@dataclass
class BillingReport:
    calls: int = 0
    accepted: int = 0
    rejected_token: int = 0
    rejected_deposit: int = 0
    receipts: int = 0
    billed: int = 0
    credited: int = 0
    user_deposits: dict[str, int] = field(default_factory=dict)
    gateway_balances: dict[str, int] = field(default_factory=dict)
    supply_before: int = 0
    supply_after: int = 0
    ledger_digest: str = ""

    def lines(self) -> list[str]:
        out = [
            f"calls={self.calls} accepted={self.accepted} rejected_token={self.rejected_token} "
            f"rejected_deposit={self.rejected_deposit}",
            f"receipts={self.receipts} billed={self.billed} credited={self.credited}",
            f"supply before={self.supply_before} after={self.supply_after}",
        ]
        out += [f"user {u} deposit={v}" for u, v in sorted(self.user_deposits.items())]
        out += [f"gateway {g} balance={v}" for g, v in sorted(self.gateway_balances.items())]
        out.append(f"ledger digest {self.ledger_digest}")
        return out


def billing_demo(config: ScenarioConfig, run_index: int = 0, *, token_ttl: int | None = None) -> tuple[BillingReport, Ledger]:
    b = config.billing
    led = build_ledger(config, run_index)
    provider = address_of("function-provider")
    led.register_endpoint(provider, FUNCTION_PATH, is_public=False)
    users = []
    grants = []
    ttl = token_ttl if token_ttl is not None else 10 * b.cycle_length
    for u in range(b.users):
        key = UserKey(address_of(f"user-{u}"), sha256(config.seed.encode(), b"user-secret", u.to_bytes(4, "big")))
        led.create_account(key.address, b.deposit)
        led.register_user_key(key.address, key.verification_key)
        led.deposit(key.address, b.deposit)
        led.set_permission(provider, key.address, FUNCTION_PATH, Permission.of(Method.POST))
        grants.append(led.issue_access_token(key.address, FUNCTION_PATH, Permission.of(Method.POST), ttl))
        users.append(key)

    report = BillingReport(supply_before=led.total_supply())
    result = run(config, run_index, ledger=led)
    led.record_handled_counts(result.metrics.gateway_counts)

    stores: dict[str, LogStore] = {}
    meters: dict[str, BillingMeter] = {}
    for g in led.gateways:
        stores[g] = LogStore(sha256(config.seed.encode(), b"log-key", g.encode()))
        meters[g] = BillingMeter(g, stores[g], led.user_keys)
        for key in users:
            ba = led.billing[key.address]
            meters[g].open_account(key.address, ba.deposit, ba.watermark, ba.cycle_length)

    digest = endpoint_digest(FUNCTION_PATH)
    nonces = [0] * len(users)

    def settle(tick: int) -> None:
        for g, meter in meters.items():
            for receipt in meter.end_tick(tick):
                report.receipts += 1
                report.billed += receipt.total_fee
                report.credited += led.settle_receipt(receipt, g, stores[g], stores[g].key)
            # meters cache the on-chain deposit; refresh after settlements at other gateways
            for key in users:
                m = meter.users[key.address]
                m.deposit = led.billing[key.address].deposit
                m.watermark = min(m.watermark, m.deposit) if m.deposit else 0

    current = None
    for d in result.decisions:
        if current is not None and d.tick != current:
            for t in range(current, d.tick):
                settle(t)
        current = d.tick
        report.calls += 1
        u = d.call_id % len(users)
        if not led.verify_access_token(grants[u], d.tick, Method.POST):
            report.rejected_token += 1
            continue
        addr = users[u].address
        pending = sum(m.users[addr].accrued for m in meters.values())
        if pending + b.fee_per_call > led.billing[addr].deposit:
            report.rejected_deposit += 1
            continue
        req = sign_request(users[u], digest, nonces[u], b.fee_per_call, call_id=str(d.call_id), tick=d.tick)
        nonces[u] += 1
        try:
            meters[d.chosen_gateway].record(req)
        except ReceiptError:
            report.rejected_deposit += 1
            continue
        report.accepted += 1
    if current is not None:
        # close the billing cycle for whatever is still pending
        for meter in meters.values():
            for m in meter.users.values():
                m.cycle_start = current - m.cycle_length + 1
        settle(current)

    report.supply_after = led.total_supply()
    report.user_deposits = {f"user-{i}": led.billing[k.address].deposit for i, k in enumerate(users)}
    report.gateway_balances = dict(led.gateway_balances)
    report.ledger_digest = led.state_digest().hex()
    return report, led
