"""Append-only DAG ledger with tip selection and authenticated message channels.

The ledger is the communication backbone of the framework: compliance bits,
escrow transfers and controller cost vectors are all written to it and read
back from it.  It is a Tangle-style structure: every new transaction approves
two existing transactions (its *parents*), transactions are content-addressed
by a 32-byte hash, and the set of transactions with no approvers yet (the
*tips*) is where new transactions attach.

Channels layer an ordered, optionally encrypted message stream on top of raw
transactions.  A channel is identified by a 32-byte root; the address of
message ``i`` is a hash chain starting at the mode-dependent base address, so
a subscriber who knows the base address can walk the channel in publish
order.  Modes:

* ``PUBLIC``      address = root, plaintext payloads
* ``PRIVATE``     address = H(root), plaintext payloads (the address itself
                  is unguessable without the root)
* ``RESTRICTED``  address = H(root || side_key), payloads encrypted and
                  authenticated under a key derived from the side key

Genesis convention: the genesis transaction lists itself as both parents so
the two-parent rule holds for every transaction.  Its id is computed with
zero bytes in the parent slots (a literal fixpoint hash is impossible), and
``verify`` knows about that convention.

Concurrency: appends are serialized through one internal lock; reads see a
consistent prefix and never block appends for long.
"""

from __future__ import annotations

import base64
import json
import random
import struct
import threading
from dataclasses import dataclass
from enum import Enum

from . import crypto

MAX_PAYLOAD = 4096          # bytes, per transaction
ZERO32 = bytes(32)

_TX_DOMAIN = b"masksim-tx-v1"
_CHAIN_DOMAIN = b"masksim-mam-next"
_KEY_DOMAIN = b"masksim-mam-key"
_NONCE_DOMAIN = b"masksim-mam-nonce"

_ENVELOPE_MAGIC = b"MAM1"
_ENVELOPE_VERSION = 1

SNAPSHOT_FORMAT = "masksim-tangle"
SNAPSHOT_VERSION = 1


class LedgerError(Exception):
    """Base class for ledger faults."""


class PayloadTooLarge(LedgerError):
    """Payload exceeds the per-transaction limit."""


class IntegrityError(LedgerError):
    """Stored data fails verification (corrupt snapshot, bad hash, ...)."""


class ChannelKeyError(LedgerError):
    """Channel mode / key combination is invalid."""


# =============================================================================
# Transactions and the Tangle
# =============================================================================

@dataclass(frozen=True)
class Transaction:
    """One immutable DAG node.

    ``id`` is the hash of (parents, payload, channel_address) and is
    recomputable; ``logical_time`` is the append sequence number.
    """
    id: bytes
    parents: tuple[bytes, bytes]
    payload: bytes
    channel_address: bytes | None
    logical_time: int


def transaction_id(parents: tuple[bytes, bytes], payload: bytes,
                   channel_address: bytes | None) -> bytes:
    """Content hash of a transaction.

    Self-referencing parent slots (the genesis convention) are hashed as
    zero bytes, which is what makes the genesis id computable at all.
    """
    addr = channel_address if channel_address is not None else ZERO32
    flag = b"\x01" if channel_address is not None else b"\x00"
    return crypto.digest(_TX_DOMAIN, parents[0], parents[1], flag, addr, payload)


class Tangle:
    """Append-only two-parent DAG with uniform random tip selection.

    A fresh Tangle contains only the self-parenting genesis transaction.
    ``rng_seed`` fixes the tip-selection stream, which makes whole runs
    reproducible.
    """

    def __init__(self, rng_seed: int = 0, genesis_payload: bytes = b"genesis"):
        self._lock = threading.RLock()
        self._rng = random.Random(rng_seed)
        gid = transaction_id((ZERO32, ZERO32), genesis_payload, None)
        genesis = Transaction(gid, (gid, gid), genesis_payload, None, 0)
        self.genesis = gid
        self.transactions: dict[bytes, Transaction] = {gid: genesis}
        # insertion-ordered so tip sampling never depends on bytes hashing
        self._tips: dict[bytes, None] = {gid: None}
        self._children: dict[bytes, int] = {gid: 0}
        self._by_address: dict[bytes, list[bytes]] = {}
        self._next_time = 1

    # -- core operations ------------------------------------------------

    def __len__(self) -> int:
        return len(self.transactions)

    @property
    def tips(self) -> set[bytes]:
        with self._lock:
            return set(self._tips)

    def select_tips(self, rng: random.Random | None = None) -> tuple[bytes, bytes]:
        """Sample two tips uniformly with replacement (duplicates allowed)."""
        r = rng if rng is not None else self._rng
        with self._lock:
            pool = list(self._tips)
            return r.choice(pool), r.choice(pool)

    def append(self, payload: bytes, channel_address: bytes | None = None,
               parents: tuple[bytes, bytes] | None = None) -> bytes:
        """Attach a new transaction; returns its id.

        Parents default to two freshly selected tips.  A concurrent publisher
        may stage the write by calling :meth:`select_tips` itself and passing
        the result in; the referenced transactions only need to exist, they
        need not still be tips (that is how the DAG branches).
        """
        if len(payload) > MAX_PAYLOAD:
            raise PayloadTooLarge(
                f"payload is {len(payload)} bytes, limit is {MAX_PAYLOAD}")
        if channel_address is not None and len(channel_address) != 32:
            raise LedgerError("channel address must be 32 bytes")
        with self._lock:
            if parents is None:
                parents = self.select_tips()
            elif len(parents) != 2:
                raise LedgerError("exactly two parents required")
            for p in parents:
                if p not in self.transactions:
                    raise IntegrityError(f"unknown parent {p.hex()}")
            parents = (parents[0], parents[1])
            tid = transaction_id(parents, payload, channel_address)
            if tid in self.transactions:
                # identical content already attached at the same parents;
                # content addressing makes the re-append a no-op
                return tid
            tx = Transaction(tid, parents, payload, channel_address, self._next_time)
            self._next_time += 1
            self.transactions[tid] = tx
            for p in set(parents):
                self._children[p] = self._children.get(p, 0) + 1
                self._tips.pop(p, None)
            self._children.setdefault(tid, 0)
            self._tips[tid] = None
            if channel_address is not None:
                self._by_address.setdefault(channel_address, []).append(tid)
            return tid

    def transactions_at(self, address: bytes) -> list[Transaction]:
        """All transactions carrying ``address``, in append order."""
        with self._lock:
            return [self.transactions[t] for t in self._by_address.get(address, ())]

    # -- verification ---------------------------------------------------

    def verify(self) -> list[str]:
        """Run every structural invariant; returns a list of violations."""
        with self._lock:
            txs = dict(self.transactions)
            tips = set(self._tips)
            genesis = self.genesis
        problems: list[str] = []

        g = txs.get(genesis)
        if g is None:
            return [f"genesis {genesis.hex()} missing from store"]
        if g.parents != (genesis, genesis):
            problems.append("genesis does not reference itself twice")

        children: dict[bytes, int] = {t: 0 for t in txs}
        times = set()
        for tx in txs.values():
            is_genesis = tx.id == genesis
            effective = (ZERO32, ZERO32) if is_genesis else tx.parents
            if transaction_id(effective, tx.payload, tx.channel_address) != tx.id:
                problems.append(f"content hash mismatch on {tx.id.hex()[:16]}")
            if len(tx.payload) > MAX_PAYLOAD:
                problems.append(f"oversize payload on {tx.id.hex()[:16]}")
            if len(tx.parents) != 2:
                problems.append(f"{tx.id.hex()[:16]} does not have 2 parents")
            if tx.logical_time in times:
                problems.append(f"duplicate logical_time {tx.logical_time}")
            times.add(tx.logical_time)
            if not is_genesis:
                if tx.id in tx.parents:
                    problems.append(f"{tx.id.hex()[:16]} references itself")
                for p in tx.parents:
                    parent = txs.get(p)
                    if parent is None:
                        problems.append(
                            f"{tx.id.hex()[:16]} has unresolvable parent {p.hex()[:16]}")
                    else:
                        children[p] += 1
                        if parent.logical_time >= tx.logical_time:
                            problems.append(
                                f"{tx.id.hex()[:16]} does not postdate parent "
                                f"{p.hex()[:16]}")

        # logical_time strictly increases along parent edges, so passing the
        # check above already rules out cycles; reachability still needs the
        # explicit walk because a disconnected second root would slip through.
        reaches: dict[bytes, bool] = {}
        for tx in sorted(txs.values(), key=lambda t: t.logical_time):
            if tx.id == genesis:
                reaches[tx.id] = True
            else:
                reaches[tx.id] = all(reaches.get(p, False) for p in tx.parents)
        unreachable = [t for t, ok in reaches.items() if not ok]
        for t in unreachable:
            problems.append(f"{t.hex()[:16]} cannot reach genesis")

        expected_tips = {t for t, n in children.items() if n == 0}
        if expected_tips != tips:
            problems.append(
                f"tip set inconsistent: tracked {len(tips)}, actual {len(expected_tips)}")
        return problems

    def stats(self) -> dict:
        """DAG statistics used by the inspection tooling and run summaries."""
        with self._lock:
            n = len(self.transactions)
            tips = len(self._tips)
            addressed = sum(len(v) for v in self._by_address.values())
            chains = _chain_partition(set(self._by_address))
        return {
            "transactions": n,
            "tips": tips,
            "channel_messages": addressed,
            "channels": len(chains),
            "messages_per_channel": sorted((len(c) for c in chains), reverse=True),
        }

    # -- persistence ------------------------------------------------------

    def save(self, path) -> None:
        """Write a versioned JSON snapshot, transactions in append order."""
        with self._lock:
            txs = sorted(self.transactions.values(), key=lambda t: t.logical_time)
            doc = {
                "format": SNAPSHOT_FORMAT,
                "version": SNAPSHOT_VERSION,
                "genesis": self.genesis.hex(),
                "transactions": [
                    {
                        "id": t.id.hex(),
                        "parents": [p.hex() for p in t.parents],
                        "payload": base64.b64encode(t.payload).decode("ascii"),
                        "channel_address": (t.channel_address.hex()
                                            if t.channel_address else None),
                        "logical_time": t.logical_time,
                    }
                    for t in txs
                ],
            }
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(doc, fh, indent=1)
            fh.write("\n")

    @classmethod
    def load(cls, path, rng_seed: int = 0) -> "Tangle":
        """Load a snapshot and re-verify every invariant.

        Raises :class:`IntegrityError` on any malformed or tampered record.
        """
        try:
            with open(path, "r", encoding="utf-8") as fh:
                doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise IntegrityError(f"snapshot is not valid JSON: {exc}") from exc
        if doc.get("format") != SNAPSHOT_FORMAT:
            raise IntegrityError("not a tangle snapshot")
        if doc.get("version") != SNAPSHOT_VERSION:
            raise IntegrityError(f"unsupported snapshot version {doc.get('version')}")

        tangle = cls.__new__(cls)
        tangle._lock = threading.RLock()
        tangle._rng = random.Random(rng_seed)
        tangle.genesis = bytes.fromhex(doc["genesis"])
        tangle.transactions = {}
        tangle._tips = {}
        tangle._children = {}
        tangle._by_address = {}
        max_time = 0
        try:
            records = doc["transactions"]
        except KeyError as exc:
            raise IntegrityError("snapshot has no transaction list") from exc
        for rec in records:
            try:
                tx = Transaction(
                    id=bytes.fromhex(rec["id"]),
                    parents=(bytes.fromhex(rec["parents"][0]),
                             bytes.fromhex(rec["parents"][1])),
                    payload=base64.b64decode(rec["payload"]),
                    channel_address=(bytes.fromhex(rec["channel_address"])
                                     if rec["channel_address"] else None),
                    logical_time=int(rec["logical_time"]),
                )
            except (KeyError, ValueError, IndexError, TypeError) as exc:
                raise IntegrityError(f"malformed snapshot record: {rec!r}") from exc
            if tx.id in tangle.transactions:
                raise IntegrityError(f"duplicate transaction id {tx.id.hex()[:16]}")
            tangle.transactions[tx.id] = tx
            max_time = max(max_time, tx.logical_time)
            if tx.channel_address is not None:
                tangle._by_address.setdefault(tx.channel_address, []).append(tx.id)
        tangle._next_time = max_time + 1
        tangle._children = {t: 0 for t in tangle.transactions}
        for tx in tangle.transactions.values():
            if tx.id == tangle.genesis:
                continue
            for p in tx.parents:
                if p in tangle._children:
                    tangle._children[p] += 1
        for tx in sorted(tangle.transactions.values(), key=lambda t: t.logical_time):
            if tangle._children[tx.id] == 0:
                tangle._tips[tx.id] = None
        problems = tangle.verify()
        if problems:
            raise IntegrityError("; ".join(problems))
        return tangle


def _chain_partition(addresses: set[bytes]) -> list[list[bytes]]:
    """Group addresses into hash chains (address -> H(chain-domain, address)).

    Channel identity is recoverable from snapshot structure alone because
    successive message addresses are linked by a public hash.
    """
    succ = {}
    has_pred = set()
    for a in addresses:
        nxt = crypto.digest(_CHAIN_DOMAIN, a)
        if nxt in addresses:
            succ[a] = nxt
            has_pred.add(nxt)
    chains = []
    for a in addresses:
        if a in has_pred:
            continue
        chain = [a]
        while chain[-1] in succ:
            chain.append(succ[chain[-1]])
        chains.append(chain)
    return chains


# =============================================================================
# Message channels
# =============================================================================

class ChannelMode(Enum):
    PUBLIC = "public"
    PRIVATE = "private"
    RESTRICTED = "restricted"


def channel_address(mode: ChannelMode, root: bytes,
                    side_key: bytes | None = None) -> bytes:
    """Base (index-0) address of a channel.

    Public channels sit at the root verbatim, private ones at H(root), and
    restricted ones at H(root || side_key); the concatenation order is a
    convention of this framework.
    """
    if len(root) != 32:
        raise ChannelKeyError("channel root must be 32 bytes")
    if mode is ChannelMode.RESTRICTED:
        if not side_key:
            raise ChannelKeyError("restricted mode requires a side key")
        return crypto.digest(root, side_key)
    if side_key:
        raise ChannelKeyError(f"{mode.value} mode does not take a side key")
    if mode is ChannelMode.PRIVATE:
        return crypto.digest(root)
    return root


def _next_address(address: bytes) -> bytes:
    return crypto.digest(_CHAIN_DOMAIN, address)


def _message_key(base_address: bytes, side_key: bytes) -> bytes:
    return crypto.derive_key(_KEY_DOMAIN, base_address, side_key)


def _message_nonce(base_address: bytes, index: int) -> bytes:
    return crypto.derive_nonce(_NONCE_DOMAIN, base_address,
                               struct.pack(">Q", index))


@dataclass
class MamChannel:
    """Writer-side state of one message channel.

    ``next_index`` counts published messages; the current attachment address
    is maintained incrementally so publishing stays O(1) per message.
    """
    mode: ChannelMode
    root: bytes
    side_key: bytes | None = None
    next_index: int = 0

    def __post_init__(self):
        # validates the mode/key combination as a side effect
        self._base = channel_address(self.mode, self.root, self.side_key)
        self._cursor = self._base
        for _ in range(self.next_index):
            self._cursor = _next_address(self._cursor)

    @property
    def base_address(self) -> bytes:
        return self._base

    def fast_forward(self, index: int) -> None:
        """Advance the publish cursor past ``index`` messages already on the
        ledger (used when a writer restarts against an existing channel)."""
        while self.next_index < index:
            self._cursor = _next_address(self._cursor)
            self.next_index += 1

    def publish(self, tangle: Tangle, message: bytes) -> bytes:
        """Encode, encrypt if restricted, and append; returns the tx id."""
        index = self.next_index
        address = self._cursor
        if self.mode is ChannelMode.RESTRICTED:
            body = crypto.encrypt(_message_key(self._base, self.side_key),
                                  _message_nonce(self._base, index),
                                  message, aad=address)
        else:
            body = message
        envelope = (_ENVELOPE_MAGIC
                    + bytes([_ENVELOPE_VERSION, _mode_byte(self.mode)])
                    + struct.pack(">Q", index)
                    + body)
        if len(envelope) > MAX_PAYLOAD:
            raise PayloadTooLarge(
                f"message of {len(message)} bytes exceeds the channel limit")
        tx_id = tangle.append(envelope, channel_address=address)
        self.next_index = index + 1
        self._cursor = _next_address(address)
        return tx_id


def _mode_byte(mode: ChannelMode) -> int:
    return {ChannelMode.PUBLIC: 0, ChannelMode.PRIVATE: 1,
            ChannelMode.RESTRICTED: 2}[mode]


def _decode_envelope(payload: bytes, address: bytes, base_address: bytes,
                     index: int, mode: ChannelMode,
                     side_key: bytes | None) -> bytes | None:
    """Decode one stored envelope; ``None`` if it is not decodable."""
    header = len(_ENVELOPE_MAGIC) + 2 + 8
    if len(payload) < header or payload[:4] != _ENVELOPE_MAGIC:
        return None
    if payload[4] != _ENVELOPE_VERSION or payload[5] != _mode_byte(mode):
        return None
    (stored_index,) = struct.unpack(">Q", payload[6:14])
    if stored_index != index:
        return None
    body = payload[14:]
    if mode is not ChannelMode.RESTRICTED:
        return body
    if not side_key:
        return None
    return crypto.decrypt(_message_key(base_address, side_key),
                          _message_nonce(base_address, index),
                          body, aad=address)


@dataclass(frozen=True)
class ChannelMessage:
    index: int
    tx_id: bytes
    body: bytes


class ChannelReader:
    """Incremental subscriber cursor over one channel.

    Holds the walk position so polling inside a simulation loop is O(new
    messages), not O(channel length).
    """

    def __init__(self, tangle: Tangle, address: bytes, mode: ChannelMode,
                 side_key: bytes | None = None):
        self._tangle = tangle
        self._base = address
        self._mode = mode
        self._side_key = side_key
        self._cursor = address
        self._index = 0

    @property
    def next_index(self) -> int:
        """First channel index not yet seen populated."""
        return self._index

    def poll(self) -> list[ChannelMessage]:
        """Messages published since the last poll, in channel order."""
        out: list[ChannelMessage] = []
        while True:
            txs = self._tangle.transactions_at(self._cursor)
            if not txs:
                return out
            for tx in txs:
                body = _decode_envelope(tx.payload, self._cursor, self._base,
                                        self._index, self._mode, self._side_key)
                if body is not None:
                    out.append(ChannelMessage(self._index, tx.id, body))
            self._index += 1
            self._cursor = _next_address(self._cursor)


def mam_publish(tangle: Tangle, channel: MamChannel, message: bytes) -> bytes:
    """Publish one message on ``channel``; returns the ledger transaction id."""
    return channel.publish(tangle, message)


def mam_fetch(tangle: Tangle, address: bytes, mode: ChannelMode,
              side_key: bytes | None = None) -> list[bytes]:
    """All decodable messages of the channel at ``address``, in order.

    An unknown address or a restricted channel without its side key simply
    yields an empty list; absence of messages is not an error.
    """
    reader = ChannelReader(tangle, address, mode, side_key)
    return [m.body for m in reader.poll()]
