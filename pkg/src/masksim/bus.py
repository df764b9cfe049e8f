"""In-process publish/subscribe bus and the bus-to-ledger gateway.

The bus reproduces the publish/subscribe contract of an MQTT broker without
the network: publishers write to topics, subscribers receive every message
published after they subscribed, and per-(publisher, topic) FIFO order is
preserved.  Subscriptions use a bounded buffer with a drop-oldest overflow
policy and a drop counter.

The gateway is the back-end bridge: it subscribes to routed topics and
republishes each message onto a ledger channel exactly once.  Bridged
payloads embed (publisher, sequence), so the bridge is restartable with
at-least-once delivery and idempotent dedup - on startup it rebuilds its
seen-set from the ledger itself.
"""

from __future__ import annotations

import base64
import json
import logging
import threading
import time
from collections import deque
from dataclasses import dataclass

from .ledger import ChannelReader, LedgerError, MamChannel, Tangle

log = logging.getLogger(__name__)

MAX_BUS_PAYLOAD = 64 * 1024
DEFAULT_BUFFER = 1024

_BRIDGE_VERSION = 1


class TopicError(ValueError):
    """Malformed topic name."""


def validate_topic(topic: str) -> str:
    if not topic or not all(seg for seg in topic.split("/")):
        raise TopicError(f"invalid topic {topic!r}: empty segment")
    return topic


@dataclass(frozen=True)
class BusMessage:
    topic: str
    payload: bytes
    publisher_id: str
    sequence: int


class Subscription:
    """One subscriber's bounded message buffer.

    Dropping the handle (``close``) detaches it from the bus; a slow consumer
    loses the oldest messages first and ``dropped`` counts the losses.
    """

    def __init__(self, bus: "MessageBus", topic: str, maxlen: int):
        self._bus = bus
        self.topic = topic
        self._queue: deque[BusMessage] = deque()
        self._maxlen = maxlen
        self.dropped = 0
        self.closed = False

    def _offer(self, message: BusMessage) -> None:
        if len(self._queue) >= self._maxlen:
            self._queue.popleft()
            self.dropped += 1
        self._queue.append(message)

    def pop(self) -> BusMessage | None:
        """Next buffered message, or ``None`` if the buffer is empty."""
        try:
            return self._queue.popleft()
        except IndexError:
            return None

    def drain(self) -> list[BusMessage]:
        out = []
        while (m := self.pop()) is not None:
            out.append(m)
        return out

    def __len__(self) -> int:
        return len(self._queue)

    def close(self) -> None:
        if not self.closed:
            self.closed = True
            self._bus._detach(self)


class MessageBus:
    """Multi-producer, multi-consumer topic bus with per-publisher FIFO."""

    def __init__(self):
        self._lock = threading.Lock()
        self._subs: dict[str, list[Subscription]] = {}
        self._sequences: dict[tuple[str, str], int] = {}

    def subscribe(self, topic: str, maxlen: int = DEFAULT_BUFFER) -> Subscription:
        validate_topic(topic)
        sub = Subscription(self, topic, maxlen)
        with self._lock:
            self._subs.setdefault(topic, []).append(sub)
        return sub

    def _detach(self, sub: Subscription) -> None:
        with self._lock:
            subs = self._subs.get(sub.topic, [])
            if sub in subs:
                subs.remove(sub)
            if not subs:
                self._subs.pop(sub.topic, None)

    def publish(self, topic: str, payload: bytes, publisher_id: str,
                sequence: int | None = None) -> int:
        """Deliver ``payload`` to all current subscribers of ``topic``.

        ``sequence`` is normally assigned by the bus; a redelivering producer
        may pass the original value explicitly so that downstream dedup keyed
        on (publisher, sequence) recognizes the retry.
        """
        validate_topic(topic)
        if len(payload) > MAX_BUS_PAYLOAD:
            raise ValueError(
                f"payload of {len(payload)} bytes exceeds {MAX_BUS_PAYLOAD}")
        with self._lock:
            key = (publisher_id, topic)
            if sequence is None:
                sequence = self._sequences.get(key, 0) + 1
            self._sequences[key] = max(self._sequences.get(key, 0), sequence)
            message = BusMessage(topic, payload, publisher_id, sequence)
            for sub in self._subs.get(topic, ()):
                sub._offer(message)
        return sequence


# =============================================================================
# Gateway: bus topics -> ledger channels
# =============================================================================

def encode_bridge_record(message: BusMessage) -> bytes:
    return json.dumps({
        "v": _BRIDGE_VERSION,
        "publisher": message.publisher_id,
        "topic": message.topic,
        "seq": message.sequence,
        "payload": base64.b64encode(message.payload).decode("ascii"),
    }, separators=(",", ":"), sort_keys=True).encode("utf-8")


def decode_bridge_record(body: bytes) -> dict | None:
    try:
        doc = json.loads(body.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError):
        return None
    if not isinstance(doc, dict) or doc.get("v") != _BRIDGE_VERSION:
        return None
    try:
        return {
            "publisher": doc["publisher"],
            "topic": doc["topic"],
            "seq": int(doc["seq"]),
            "payload": base64.b64decode(doc["payload"]),
        }
    except (KeyError, ValueError, TypeError):
        return None


class Gateway:
    """Bridges routed bus topics onto ledger channels, exactly once each.

    On construction the gateway scans its routed channels and rebuilds the
    dedup set from what is already on the ledger, which is what makes a
    restart after a crash safe: redelivered messages are recognized by
    (publisher, topic, sequence) and skipped.
    """

    def __init__(self, bus: MessageBus, tangle: Tangle,
                 routes: dict[str, MamChannel], buffer: int = DEFAULT_BUFFER,
                 max_retries: int = 3, backoff_s: float = 0.0):
        self._tangle = tangle
        self._routes = dict(routes)
        self._max_retries = max_retries
        self._backoff_s = backoff_s
        self._subs = {topic: bus.subscribe(topic, maxlen=buffer)
                      for topic in self._routes}
        self._seen: dict[tuple[str, str, int], bytes] = {}
        self.bridged = 0
        self.duplicates = 0
        self.dead_letters: list[BusMessage] = []
        for topic, channel in self._routes.items():
            reader = ChannelReader(tangle, channel.base_address, channel.mode,
                                   channel.side_key)
            for msg in reader.poll():
                rec = decode_bridge_record(msg.body)
                if rec is not None:
                    self._seen[(rec["publisher"], rec["topic"], rec["seq"])] = msg.tx_id
            # recover the publish cursor of a restarted writer
            channel.fast_forward(reader.next_index)

    @property
    def dropped(self) -> int:
        return sum(s.dropped for s in self._subs.values())

    def tx_for(self, publisher_id: str, topic: str, sequence: int) -> bytes | None:
        """Ledger transaction id a bridged message landed in, if bridged."""
        return self._seen.get((publisher_id, topic, sequence))

    def pump(self, limit: int | None = None) -> list[bytes]:
        """Bridge pending messages; returns appended transaction ids.

        ``limit`` bounds how many messages are processed (tests use it to
        force a crash mid-stream).
        """
        appended: list[bytes] = []
        processed = 0
        for topic, sub in self._subs.items():
            channel = self._routes[topic]
            while limit is None or processed < limit:
                message = sub.pop()
                if message is None:
                    break
                processed += 1
                key = (message.publisher_id, message.topic, message.sequence)
                if key in self._seen:
                    self.duplicates += 1
                    continue
                tx_id = self._append_with_retry(channel, message)
                if tx_id is None:
                    self.dead_letters.append(message)
                else:
                    self._seen[key] = tx_id
                    self.bridged += 1
                    appended.append(tx_id)
            if limit is not None and processed >= limit:
                break
        return appended

    def _append_with_retry(self, channel: MamChannel,
                           message: BusMessage) -> bytes | None:
        delay = self._backoff_s
        for attempt in range(self._max_retries):
            try:
                return channel.publish(self._tangle, encode_bridge_record(message))
            except LedgerError as exc:
                log.warning("ledger append failed (attempt %d): %s", attempt + 1, exc)
                if delay:
                    time.sleep(delay)
                    delay *= 2
        log.error("dead-lettering %s/%s seq %d", message.publisher_id,
                  message.topic, message.sequence)
        return None

    def counters(self) -> dict:
        return {
            "bridged": self.bridged,
            "duplicates": self.duplicates,
            "dead_letters": len(self.dead_letters),
            "dropped": self.dropped,
        }

    def close(self) -> None:
        for sub in self._subs.values():
            sub.close()
