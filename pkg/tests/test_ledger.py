import hashlib
import itertools
from fractions import Fraction

import pytest
from hypothesis import given
from hypothesis import strategies as st

from faasplane._digest import ZERO_HASH, address_of, canonical_json
from faasplane.ledger import (
    AccessDeniedError,
    Block,
    DisputeError,
    DuplicateEndpointError,
    InsufficientFundsError,
    InvalidReceiptError,
    Ledger,
    LedgerConfig,
    LedgerError,
    Method,
    NotProviderError,
    Permission,
    QuotaExceededError,
    StakeError,
    UnknownDataCenterError,
    UnknownEndpointError,
    UnknownHeightError,
    endpoint_digest,
)
from faasplane.logstore import LogStore, UserKey, build_receipt, sign_request
from faasplane.scheduler import PaymentPolicy

ALICE, BOB, CAROL, DAVE = (address_of(n) for n in ("alice", "bob", "carol", "dave"))
PROVIDER = address_of("provider")


def led_with_dc(n_dc=1, **cfg):
    led = Ledger(LedgerConfig(**cfg))
    for d in range(n_dc):
        led.add_data_center(f"dc{d}")
    led.create_account(PROVIDER, 1000)
    return led


# -- blocks and beacon -------------------------------------------------------


def oracle_hash(height, parent, digest):
    return hashlib.sha256(height.to_bytes(8, "big") + parent + digest).digest()


def test_genesis_block():
    led = Ledger()
    b = led.append_block(ZERO_HASH)
    assert b.height == 0 and b.parent_hash == ZERO_HASH
    assert led.beacon(0) == b.hash


def test_identical_digests_differ_by_height():
    led = Ledger()
    a = led.append_block(ZERO_HASH)
    b = led.append_block(ZERO_HASH)
    assert a.hash != b.hash


def test_beacon_matches_external_digest():
    led = Ledger()
    for i in range(5):
        led.append_block(hashlib.sha256(bytes([i])).digest())
    parent = ZERO_HASH
    for h, blk in enumerate(led.blocks):
        assert led.beacon(h) == oracle_hash(h, parent, blk.state_digest) == led.beacon(h)
        parent = blk.hash


def test_beacon_unknown_height():
    led = Ledger()
    with pytest.raises(UnknownHeightError):
        led.beacon(0)


def test_beacon_stable_after_more_blocks():
    led = Ledger()
    led.append_block()
    first = led.beacon(0)
    led.create_account(ALICE, 5)
    led.append_block()
    assert led.beacon(0) == first


def _script(led):
    led.add_data_center("dc0")
    led.create_account(PROVIDER, 100)
    led.register_gateway(PROVIDER, "dc0", 10)
    led.append_block()
    led.register_endpoint(PROVIDER, "/f", False)
    led.set_permission(PROVIDER, ALICE, "/f", Permission.of("GET"))
    led.advance_to(3)
    led.append_block()
    led.issue_access_token(ALICE, "/f", Permission.of("GET"), 5)
    led.append_block()
    return [b.hash for b in led.blocks], led.state_digest()


def test_replay_same_transactions_same_chain():
    assert _script(Ledger(seed=b"x")) == _script(Ledger(seed=b"x"))


def test_state_digest_changes_with_state():
    led = Ledger()
    d0 = led.state_digest()
    led.create_account(ALICE, 1)
    assert led.state_digest() != d0


def test_state_digest_recomputes_from_export():
    led = Ledger(seed=b"s")
    _script(led)
    state = led.export_state(include_blocks=False)
    dyn = {k: state.pop(k) for k in ("now", "load_feed", "head")}
    core = hashlib.sha256(canonical_json(state)).hexdigest()
    top = dict(dyn, core=core)
    assert led.state_digest() == hashlib.sha256(canonical_json(top)).digest()


def test_json_round_trip_preserves_digest():
    led = Ledger(seed=b"s")
    _script(led)
    led.create_account(BOB, 50)
    led.deposit(BOB, 20)
    again = Ledger.from_json(led.to_json())
    assert again.state_digest() == led.state_digest()
    assert [b.hash for b in again.blocks] == [b.hash for b in led.blocks]


def test_block_dict_round_trip():
    led = Ledger()
    b = led.append_block()
    assert Block.from_dict(b.to_dict()) == b


def test_time_cannot_go_backwards():
    led = Ledger()
    led.advance_to(5)
    with pytest.raises(LedgerError):
        led.advance_to(4)


# -- gateways ----------------------------------------------------------------


def test_stake_boundary():
    led = led_with_dc(min_stake=10)
    assert led.register_gateway(PROVIDER, "dc0", 10) == "dc0/gw0"
    with pytest.raises(StakeError):
        led.register_gateway(PROVIDER, "dc0", 9)


def test_gateway_quota():
    led = led_with_dc(gateway_quota=2)
    led.register_gateway(PROVIDER, "dc0", 10)
    led.register_gateway(PROVIDER, "dc0", 10)
    with pytest.raises(QuotaExceededError):
        led.register_gateway(PROVIDER, "dc0", 10)


def test_unknown_data_center():
    led = led_with_dc()
    with pytest.raises(UnknownDataCenterError):
        led.register_gateway(PROVIDER, "nowhere", 10)


def test_stake_debited_from_provider():
    led = led_with_dc()
    before = led.total_supply()
    led.register_gateway(PROVIDER, "dc0", 25)
    assert led.accounts[PROVIDER].balance == 975
    assert led.stakes["dc0/gw0"].staked == 25
    assert led.total_supply() == before


def test_stake_needs_funds():
    led = led_with_dc()
    with pytest.raises(InsufficientFundsError):
        led.register_gateway(PROVIDER, "dc0", 5000)


# -- registry and access control ----------------------------------------------


def test_public_endpoint_allows_anyone():
    led = led_with_dc()
    led.register_endpoint(PROVIDER, "/rent/quote", True)
    for who in (ALICE, BOB, address_of("stranger")):
        for m in Method:
            assert led.check_access(who, "/rent/quote", m)


def test_duplicate_endpoint():
    led = led_with_dc()
    led.register_endpoint(PROVIDER, "/f", True)
    with pytest.raises(DuplicateEndpointError):
        led.register_endpoint(PROVIDER, "/f", False)


def test_private_endpoint_denies_by_default():
    led = led_with_dc()
    led.register_endpoint(PROVIDER, "/p", False)
    for who in (ALICE, BOB, CAROL):
        for m in Method:
            assert not led.check_access(who, "/p", m)


def test_grant_get_only():
    led = led_with_dc()
    led.register_endpoint(PROVIDER, "/p", False)
    led.set_permission(PROVIDER, ALICE, "/p", Permission(get=True, post=False))
    assert led.check_access(ALICE, "/p", Method.GET)
    assert not led.check_access(ALICE, "/p", Method.POST)


def test_non_provider_cannot_grant():
    led = led_with_dc()
    led.register_endpoint(PROVIDER, "/p", False)
    with pytest.raises(NotProviderError):
        led.set_permission(ALICE, ALICE, "/p", Permission.all())


def test_grant_then_revoke():
    led = led_with_dc()
    led.register_endpoint(PROVIDER, "/p", False)
    led.set_permission(PROVIDER, ALICE, "/p", Permission.all())
    led.set_permission(PROVIDER, ALICE, "/p", Permission())
    assert not any(led.check_access(ALICE, "/p", m) for m in Method)


def test_unknown_endpoint_check():
    with pytest.raises(UnknownEndpointError):
        Ledger().check_access(ALICE, "/missing", "GET")


SUBJECTS = [ALICE, BOB, CAROL, DAVE]
PATHS = ["/a", "/b", "/c", "/d"]
perm_strategy = st.builds(Permission, st.booleans(), st.booleans(), st.booleans(), st.booleans())


@given(
    public=st.lists(st.booleans(), min_size=4, max_size=4),
    ops=st.lists(st.tuples(st.integers(0, 3), st.integers(0, 3), perm_strategy), max_size=25),
)
def test_access_matches_flat_truth_table(public, ops):
    led = Ledger()
    table = {}
    for path, pub in zip(PATHS, public):
        led.register_endpoint(PROVIDER, path, pub)
    for s, p, perm in ops:
        led.set_permission(PROVIDER, SUBJECTS[s], PATHS[p], perm)
        for m in ("GET", "PUT", "POST", "DELETE"):
            table[(s, p, m)] = getattr(perm, m.lower())
    for s, p, m in itertools.product(range(4), range(4), ("GET", "PUT", "POST", "DELETE")):
        expect = public[p] or table.get((s, p, m), False)
        assert led.check_access(SUBJECTS[s], PATHS[p], m) is expect


def test_resolve_endpoint():
    led = led_with_dc(3)
    led.register_endpoint(PROVIDER, "/f", True)
    assert led.resolve_endpoint("/nope") == (None, [])
    for d in range(3):
        led.register_gateway(PROVIDER, f"dc{d}", 10, endpoints=["/f"])
    provider, hosts = led.resolve_endpoint("/f")
    assert provider == PROVIDER and hosts == ["dc0", "dc1", "dc2"]


# -- tokens ------------------------------------------------------------------


def token_ledger():
    led = led_with_dc()
    led.register_endpoint(PROVIDER, "/p", False)
    led.set_permission(PROVIDER, ALICE, "/p", Permission.of("GET", "POST"))
    return led


def test_token_expiry_boundary():
    led = token_ledger()
    led.advance_to(7)
    g = led.issue_access_token(ALICE, "/p", Permission.of("GET"), 10)
    assert g.expires_at == g.issued_at + 10 == 17
    assert led.verify_access_token(g, 7, "GET")
    assert led.verify_access_token(g, 16, "GET")
    assert not led.verify_access_token(g, 17, "GET")
    assert not led.verify_access_token(g, 18, "GET")


def test_token_method_must_be_granted():
    led = token_ledger()
    with pytest.raises(AccessDeniedError):
        led.issue_access_token(ALICE, "/p", Permission.of("DELETE"), 10)
    assert led.grants == {}
    g = led.issue_access_token(ALICE, "/p", Permission.of("GET"), 10)
    assert not led.verify_access_token(g, 0, "POST")


def test_token_ids_unique():
    led = token_ledger()
    ids = {led.issue_access_token(ALICE, "/p", Permission.of("GET"), 1).token_id for _ in range(1000)}
    assert len(ids) == 1000


def test_token_transfer_invalidates():
    led = token_ledger()
    g = led.issue_access_token(ALICE, "/p", Permission.of("GET"), 10)
    led.transfer_token(g.token_id, ALICE, BOB)
    assert not led.verify_access_token(g, 0, "GET")
    with pytest.raises(LedgerError):
        led.transfer_token(g.token_id, ALICE, CAROL)


def test_forged_grant_rejected():
    led = token_ledger()
    g = led.issue_access_token(ALICE, "/p", Permission.of("GET"), 10)
    from dataclasses import replace

    assert not led.verify_access_token(replace(g, expires_at=1000), 50, "GET")


# -- billing -----------------------------------------------------------------


def billing_setup(deposit=100, policy=None):
    led = led_with_dc(2, payment_policy=policy)
    gw = led.register_gateway(PROVIDER, "dc0", 10)
    user = UserKey(ALICE, b"alice-secret")
    led.create_account(ALICE, deposit)
    led.register_user_key(ALICE, user.verification_key)
    led.deposit(ALICE, deposit)
    store = LogStore(bytes(32))
    return led, gw, user, store


def receipt_for(led, gw, user, store, n, start=0):
    reqs = [sign_request(user, endpoint_digest("/f"), start + i, 1, tick=i) for i in range(n)]
    return build_receipt(gw, user.address, (0, n), reqs, store, led.user_keys)


def test_deposit_watermark():
    led, *_ = billing_setup(100)
    ba = led.billing[ALICE]
    assert (ba.deposit, ba.watermark) == (100, 80)


def test_settle_arithmetic():
    led, gw, user, store = billing_setup(100)
    r = receipt_for(led, gw, user, store, 80)
    credit = led.settle_receipt(r, gw, store, store.key)
    assert led.billing[ALICE].deposit == 20
    assert credit == 80 and led.gateway_balances[gw] == 80


def test_settle_conserves_supply_without_weighting():
    led, gw, user, store = billing_setup(100)
    before = led.total_supply()
    led.settle_receipt(receipt_for(led, gw, user, store, 30), gw, store, store.key)
    assert led.total_supply() == before


def test_settle_rejects_flipped_signature():
    led, gw, user, store = billing_setup(100)
    reqs = [sign_request(user, endpoint_digest("/f"), i, 1) for i in range(3)]
    from dataclasses import replace

    bad = replace(reqs[1], signature=bytes([reqs[1].signature[0] ^ 1]) + reqs[1].signature[1:])
    cids = tuple(store.append(r.to_bytes()).content_id for r in [reqs[0], bad, reqs[2]])
    from faasplane.logstore import Receipt

    r = Receipt(gw, ALICE, (0, 0), tuple(r.call_id for r in reqs), 3, cids)
    with pytest.raises(InvalidReceiptError):
        led.settle_receipt(r, gw, store, store.key)
    assert led.billing[ALICE].deposit == 100


def test_settle_empty_receipt_noop():
    led, gw, user, store = billing_setup(100)
    r = build_receipt(gw, ALICE, (0, 5), [], store, led.user_keys)
    digest = led.state_digest()
    assert led.settle_receipt(r, gw, store, store.key) == 0
    assert led.state_digest() == digest


def test_settle_twice_rejected():
    led, gw, user, store = billing_setup(100)
    r = receipt_for(led, gw, user, store, 5)
    led.settle_receipt(r, gw, store, store.key)
    with pytest.raises(InvalidReceiptError):
        led.settle_receipt(r, gw, store, store.key)


def test_settle_insufficient_deposit():
    led, gw, user, store = billing_setup(10)
    with pytest.raises(InsufficientFundsError):
        led.settle_receipt(receipt_for(led, gw, user, store, 11), gw, store, store.key)


def test_weighted_settlement_can_go_negative():
    policy = PaymentPolicy.even(2, tolerance=Fraction(0), overage_penalty=Fraction(2))
    led, gw, user, store = billing_setup(1000, policy)
    other = led.register_gateway(PROVIDER, "dc1", 10)
    # expected share 50 each; gw handled 100 = 2x its limit
    led.record_handled_counts({gw: 100, other: 0})
    before = led.total_supply()
    credit = led.settle_receipt(receipt_for(led, gw, user, store, 100), gw, store, store.key)
    assert credit == 1 * 50 - 2 * 50 == -50
    assert led.billing[ALICE].deposit == 900
    assert led.total_supply() == before - 100 - 50


# -- disputes and slashing ------------------------------------------------------


def slash_setup(stake=50):
    led = led_with_dc()
    gw = led.register_gateway(PROVIDER, "dc0", stake)
    return led, gw


def test_full_slash():
    led, gw = slash_setup()
    d = led.open_dispute(ALICE, gw, "call-1")
    led.rule_dispute(d.dispute_id, True, 50)
    led.apply_slash(gw, 50, d)
    assert led.stakes[gw].staked == 0


def test_slash_on_rejected_dispute():
    led, gw = slash_setup()
    d = led.open_dispute(ALICE, gw, "call-1")
    led.rule_dispute(d.dispute_id, False)
    with pytest.raises(DisputeError):
        led.apply_slash(gw, 10, d)


def test_partial_slash_keeps_gateway():
    led, gw = slash_setup()
    d = led.open_dispute(ALICE, gw, "c")
    led.rule_dispute(d.dispute_id, True, 10)
    led.apply_slash(gw, 10, d)
    assert led.stakes[gw].staked == 40
    assert led.gateways_in("dc0") == [gw]


def test_slash_more_than_stake():
    led, gw = slash_setup()
    d = led.open_dispute(ALICE, gw, "c")
    led.rule_dispute(d.dispute_id, True, 60)
    with pytest.raises(StakeError):
        led.apply_slash(gw, 60, d)


def test_slash_applies_once():
    led, gw = slash_setup()
    d = led.open_dispute(ALICE, gw, "c")
    led.rule_dispute(d.dispute_id, True, 5)
    led.apply_slash(gw, 5, d)
    with pytest.raises(DisputeError):
        led.apply_slash(gw, 5, d)


def test_slash_burns_supply():
    led, gw = slash_setup()
    before = led.total_supply()
    d = led.open_dispute(ALICE, gw, "c")
    led.rule_dispute(d.dispute_id, True, 7)
    led.apply_slash(gw, 7, d)
    assert led.total_supply() == before - 7


def test_load_feed_does_not_touch_registry():
    led = Ledger()
    led.publish_load_feed(3, [1, 2])
    assert led.read_load_feed() == (3, (1, 2))
