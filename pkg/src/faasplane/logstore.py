"""Signed requests, an encrypted content-addressed call log, and billing receipts.

A gateway keeps an encrypted copy of every request it processed. A receipt
only references those copies by content id, so the chain can check that each
billed call carries the user's own signature and that the fee adds up.
"""
from __future__ import annotations

import hashlib
import hmac
import json
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Protocol

from cryptography.exceptions import InvalidSignature, InvalidTag
from cryptography.hazmat.primitives.asymmetric.ed25519 import Ed25519PrivateKey, Ed25519PublicKey
from cryptography.hazmat.primitives.ciphers.aead import AESGCM

from ._digest import canonical_json, sha256

MAX_FEE = (1 << 64) - 1


class LogStoreError(Exception):
    pass


class NonceReuseError(LogStoreError):
    pass


class UnknownContentError(LogStoreError, KeyError):
    pass


class DecryptionError(LogStoreError):
    pass


class ReceiptError(LogStoreError):
    pass


class Signer(Protocol):
    def sign(self, signing_key: bytes, message: bytes) -> bytes: ...

    def verify(self, verification_key: bytes, message: bytes, signature: bytes) -> bool: ...

    def verification_key(self, signing_key: bytes) -> bytes: ...


class HmacSigner:
    """Deterministic keyed-digest signatures; the verification key is the registered secret."""

    def sign(self, signing_key: bytes, message: bytes) -> bytes:
        return hmac.new(signing_key, message, hashlib.sha256).digest()

    def verify(self, verification_key: bytes, message: bytes, signature: bytes) -> bool:
        return hmac.compare_digest(self.sign(verification_key, message), signature)

    def verification_key(self, signing_key: bytes) -> bytes:
        return signing_key


class Ed25519Signer:
    """Asymmetric drop-in; Ed25519 signatures are deterministic too."""

    def sign(self, signing_key: bytes, message: bytes) -> bytes:
        return Ed25519PrivateKey.from_private_bytes(signing_key).sign(message)

    def verify(self, verification_key: bytes, message: bytes, signature: bytes) -> bool:
        try:
            Ed25519PublicKey.from_public_bytes(verification_key).verify(signature, message)
        except (InvalidSignature, ValueError):
            return False
        return True

    def verification_key(self, signing_key: bytes) -> bytes:
        from cryptography.hazmat.primitives.serialization import Encoding, PublicFormat

        pub = Ed25519PrivateKey.from_private_bytes(signing_key).public_key()
        return pub.public_bytes(Encoding.Raw, PublicFormat.Raw)


DEFAULT_SIGNER: Signer = HmacSigner()


@dataclass(frozen=True)
class SignedRequest:
    call_id: str
    caller: bytes
    endpoint_digest: bytes
    nonce: int
    fee: int
    signature: bytes
    # stamped by the receiving gateway, not covered by the signature
    tick: int = 0

    def signed_message(self) -> bytes:
        return request_message(self.caller, self.endpoint_digest, self.nonce, self.fee)

    def to_dict(self) -> dict:
        return {
            "call_id": self.call_id,
            "caller": self.caller.hex(),
            "endpoint_digest": self.endpoint_digest.hex(),
            "nonce": self.nonce,
            "fee": self.fee,
            "signature": self.signature.hex(),
            "tick": self.tick,
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "SignedRequest":
        return cls(
            call_id=str(d["call_id"]),
            caller=bytes.fromhex(d["caller"]),
            endpoint_digest=bytes.fromhex(d["endpoint_digest"]),
            nonce=int(d["nonce"]),
            fee=int(d["fee"]),
            signature=bytes.fromhex(d["signature"]),
            tick=int(d["tick"]),
        )

    def to_bytes(self) -> bytes:
        return canonical_json(self.to_dict())

    @classmethod
    def from_bytes(cls, raw: bytes) -> "SignedRequest":
        return cls.from_dict(json.loads(raw))


def request_message(caller: bytes, endpoint_digest: bytes, nonce: int, fee: int) -> bytes:
    if not (0 <= nonce <= MAX_FEE and 0 <= fee <= MAX_FEE):
        raise ValueError("nonce and fee must fit in 64 unsigned bits")
    return sha256(caller, endpoint_digest, nonce.to_bytes(8, "big"), fee.to_bytes(8, "big"))


@dataclass
class UserKey:
    """A user's signing key plus the nonces it has already used."""

    address: bytes
    secret: bytes
    signer: Signer = DEFAULT_SIGNER
    used_nonces: set[int] = field(default_factory=set)
    signing_log: list[SignedRequest] = field(default_factory=list)

    @property
    def verification_key(self) -> bytes:
        return self.signer.verification_key(self.secret)


def sign_request(
    user: UserKey, endpoint_digest: bytes, nonce: int, fee: int, *, call_id: str | None = None, tick: int = 0
) -> SignedRequest:
    if nonce in user.used_nonces:
        raise NonceReuseError(f"nonce {nonce} already used by {user.address.hex()[:12]}")
    sig = user.signer.sign(user.secret, request_message(user.address, endpoint_digest, nonce, fee))
    req = SignedRequest(
        call_id=call_id if call_id is not None else f"{user.address.hex()[:16]}:{nonce}",
        caller=user.address,
        endpoint_digest=endpoint_digest,
        nonce=nonce,
        fee=fee,
        signature=sig,
        tick=tick,
    )
    user.used_nonces.add(nonce)
    user.signing_log.append(req)
    return req


def verify_request(req: SignedRequest, verification_key: bytes, signer: Signer = DEFAULT_SIGNER) -> bool:
    try:
        msg = req.signed_message()
    except ValueError:
        return False
    return signer.verify(verification_key, msg, req.signature)


@dataclass(frozen=True)
class LogEntry:
    content_id: bytes
    ciphertext: bytes
    created_at: int


def _key_id(key: bytes) -> str:
    return sha256(b"key-id:", key).hex()[:16]


class LogStore:
    """Append-only store of AES-256-GCM encrypted entries addressed by SHA-256."""

    NONCE_LEN = 12

    def __init__(self, key: bytes):
        if len(key) != 32:
            raise ValueError("log key must be 32 bytes")
        self.key = key
        self.counter = 0
        self._entries: dict[bytes, LogEntry] = {}
        self._order: list[bytes] = []

    def __len__(self) -> int:
        return len(self._entries)

    def __contains__(self, content_id: bytes) -> bool:
        return content_id in self._entries

    def _nonce(self, key: bytes, counter: int) -> bytes:
        return hmac.new(key, b"log-nonce" + counter.to_bytes(8, "big"), hashlib.sha256).digest()[: self.NONCE_LEN]

    def append(self, plaintext: bytes, key: bytes | None = None, *, tick: int = 0) -> LogEntry:
        key = self.key if key is None else key
        nonce = self._nonce(key, self.counter)
        ciphertext = nonce + AESGCM(key).encrypt(nonce, plaintext, None)
        self.counter += 1
        entry = LogEntry(sha256(ciphertext), ciphertext, tick)
        # a collision would mean identical ciphertexts; keep the first copy
        if entry.content_id not in self._entries:
            self._entries[entry.content_id] = entry
            self._order.append(entry.content_id)
        return entry

    def get(self, content_id: bytes) -> LogEntry:
        try:
            return self._entries[content_id]
        except KeyError:
            raise UnknownContentError(f"no entry {content_id.hex()[:16]}") from None

    def decrypt(self, entry: LogEntry, key: bytes | None = None) -> bytes:
        key = self.key if key is None else key
        nonce, body = entry.ciphertext[: self.NONCE_LEN], entry.ciphertext[self.NONCE_LEN:]
        try:
            return AESGCM(key).decrypt(nonce, body, None)
        except (InvalidTag, ValueError) as exc:
            raise DecryptionError(f"entry {entry.content_id.hex()[:16]} failed authentication") from exc

    def entries(self) -> list[LogEntry]:
        return [self._entries[c] for c in self._order]

    def export(self, directory: str | os.PathLike) -> Path:
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        for e in self.entries():
            (d / e.content_id.hex()).write_bytes(e.ciphertext)
        manifest = {
            "counter": self.counter,
            "key_id": _key_id(self.key),
            "entries": [{"content_id": e.content_id.hex(), "created_at": e.created_at} for e in self.entries()],
        }
        (d / "manifest.json").write_text(json.dumps(manifest, indent=1, sort_keys=True))
        return d

    @classmethod
    def load(cls, directory: str | os.PathLike, key: bytes) -> "LogStore":
        d = Path(directory)
        manifest = json.loads((d / "manifest.json").read_text())
        if manifest["key_id"] != _key_id(key):
            raise LogStoreError("key does not match the store manifest")
        store = cls(key)
        for item in manifest["entries"]:
            ct = (d / item["content_id"]).read_bytes()
            cid = sha256(ct)
            if cid.hex() != item["content_id"]:
                raise LogStoreError(f"file {item['content_id']} does not match its content id")
            store._entries[cid] = LogEntry(cid, ct, int(item["created_at"]))
            store._order.append(cid)
        store.counter = int(manifest["counter"])
        return store


@dataclass(frozen=True)
class Receipt:
    gateway: str
    user: bytes
    window: tuple[int, int]
    call_ids: tuple[str, ...]
    total_fee: int
    log_content_ids: tuple[bytes, ...]

    def to_dict(self) -> dict:
        return {
            "gateway": self.gateway,
            "user": self.user.hex(),
            "window": list(self.window),
            "call_ids": list(self.call_ids),
            "total_fee": self.total_fee,
            "log_content_ids": [c.hex() for c in self.log_content_ids],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_dict(cls, d: Mapping) -> "Receipt":
        return cls(
            gateway=d["gateway"],
            user=bytes.fromhex(d["user"]),
            window=(int(d["window"][0]), int(d["window"][1])),
            call_ids=tuple(d["call_ids"]),
            total_fee=int(d["total_fee"]),
            log_content_ids=tuple(bytes.fromhex(c) for c in d["log_content_ids"]),
        )

    @classmethod
    def from_json(cls, text: str) -> "Receipt":
        return cls.from_dict(json.loads(text))


def build_receipt(
    gateway: str,
    user: bytes,
    window: tuple[int, int],
    requests: Iterable[SignedRequest],
    store: LogStore,
    public_keys: Mapping[bytes, bytes],
    *,
    signer: Signer = DEFAULT_SIGNER,
    key: bytes | None = None,
) -> Receipt:
    requests = list(requests)
    vk = public_keys.get(user)
    start, end = window
    for r in requests:
        if r.caller != user:
            raise ReceiptError(f"request {r.call_id} belongs to another user")
        if not start <= r.tick <= end:
            raise ReceiptError(f"request {r.call_id} at tick {r.tick} outside window {window}")
        if vk is None or not verify_request(r, vk, signer):
            raise ReceiptError(f"request {r.call_id} failed signature verification")
    if len({r.nonce for r in requests}) != len(requests):
        raise ReceiptError("duplicate nonce in receipt")
    cids = tuple(store.append(r.to_bytes(), key, tick=r.tick).content_id for r in requests)
    return Receipt(
        gateway=gateway,
        user=user,
        window=(start, end),
        call_ids=tuple(r.call_id for r in requests),
        total_fee=sum(r.fee for r in requests),
        log_content_ids=cids,
    )


def verify_receipt(
    receipt: Receipt,
    store: LogStore,
    key: bytes | None,
    public_keys: Mapping[bytes, bytes],
    *,
    signer: Signer = DEFAULT_SIGNER,
) -> bool:
    """True iff every referenced entry decrypts to a validly signed request of the user."""
    if len(receipt.call_ids) != len(receipt.log_content_ids):
        return False
    vk = public_keys.get(receipt.user)
    if vk is None and receipt.call_ids:
        return False
    start, end = receipt.window
    nonces = set()
    total = 0
    for call_id, cid in zip(receipt.call_ids, receipt.log_content_ids):
        try:
            entry = store.get(cid)
            req = SignedRequest.from_bytes(store.decrypt(entry, key))
        except (LogStoreError, ValueError, KeyError):
            return False
        if sha256(entry.ciphertext) != cid:
            return False
        if req.call_id != call_id or req.caller != receipt.user:
            return False
        if not start <= req.tick <= end:
            return False
        if not verify_request(req, vk, signer):
            return False
        if req.nonce in nonces:
            return False
        nonces.add(req.nonce)
        total += req.fee
    return total == receipt.total_fee


@dataclass
class _UserMeter:
    deposit: int
    watermark: int
    cycle_length: int
    cycle_start: int
    window_start: int
    accrued: int = 0
    pending: list[SignedRequest] = field(default_factory=list)


class BillingMeter:
    """Gateway-side accumulator that emits a receipt at the watermark or cycle end.

    Call :meth:`record` for each processed request and :meth:`end_tick` once
    per tick after all requests of that tick are in.
    """

    def __init__(self, gateway: str, store: LogStore, public_keys: Mapping[bytes, bytes], signer: Signer = DEFAULT_SIGNER):
        self.gateway = gateway
        self.store = store
        self.public_keys = public_keys
        self.signer = signer
        self.users: dict[bytes, _UserMeter] = {}

    def open_account(self, user: bytes, deposit: int, watermark: int, cycle_length: int, start: int = 0) -> None:
        self.users[user] = _UserMeter(deposit, watermark, cycle_length, start, start)

    def accrued(self, user: bytes) -> int:
        return self.users[user].accrued

    def record(self, req: SignedRequest) -> None:
        m = self.users.get(req.caller)
        if m is None:
            raise ReceiptError("user has no billing account at this gateway")
        if m.accrued + req.fee > m.deposit:
            raise ReceiptError("request would exceed the cached deposit")
        m.pending.append(req)
        m.accrued += req.fee

    def end_tick(self, tick: int) -> list[Receipt]:
        out = []
        for user, m in self.users.items():
            cycle_over = tick - m.cycle_start + 1 >= m.cycle_length
            if m.pending and (m.accrued >= m.watermark or cycle_over):
                out.append(
                    build_receipt(
                        self.gateway, user, (m.window_start, tick), m.pending, self.store,
                        self.public_keys, signer=self.signer,
                    )
                )
                m.deposit -= m.accrued
                m.watermark = min(m.watermark, m.deposit)
                m.accrued = 0
                m.pending = []
                m.window_start = tick + 1
            if cycle_over:
                m.cycle_start = tick + 1
        return out
