"""Alice and Bob state machines for the 1-2 ROT message flow.

The parties talk over a framed byte transport (TCP or an in-memory
socketpair).  Message order is fixed; any deviation aborts the session.
Alice never learns Bob's choice bit: Bob's only transmissions are his
timetags and the two index sets, and the index-set payload is symmetric
under relabeling.

Wire framing: 4-byte big-endian payload length, 1-byte type tag, payload.
Bit vectors are packed little-endian within bytes.
"""

from __future__ import annotations

import enum
import math
import socket
import struct
import threading
import time
from dataclasses import dataclass, field

import numpy as np

from .hashing import HashSeed, one_time_pad, sample_seed, toeplitz_hash
from .ldpc import ParityCheckMatrix, sum_product_decode, syndrome_encode
from .params import (
    AdversaryModel,
    DerivedProbabilities,
    ExperimentParams,
    SecurityConstants,
    derived_probabilities,
)
from .photonsim import (
    DEFAULT_WINDOW_TICKS,
    SiftedStrings,
    TimetagStream,
    coincidence_search,
    sift,
    timetags_from_bytes,
    timetags_to_bytes,
)
from .security import SecurityReport, rot_length

__all__ = [
    "MessageType",
    "AbortReason",
    "SessionConfig",
    "SessionTranscript",
    "TranscriptEntry",
    "AliceResult",
    "BobResult",
    "AbortResult",
    "Transport",
    "loopback_pair",
    "verify_report_interval",
    "run_alice",
    "run_bob",
    "ot_from_rot",
    "alice_send_ot",
    "bob_receive_ot",
    "run_local_session",
    "pack_bits",
    "unpack_bits",
]


class MessageType(enum.IntEnum):
    TIMETAGS = 1
    ROUND_INDICES = 2
    ABORT = 3
    BASES = 4
    INDEX_SETS = 5
    SYNDROMES = 6
    HASH_SEEDS = 7
    OT_CIPHERTEXTS = 8


class AbortReason(enum.IntEnum):
    INTERVAL = 1
    OUT_OF_ORDER = 2
    INSUFFICIENT_ROUNDS = 3
    INSECURE_LENGTH = 4
    DECODE_FAILURE = 5
    MALFORMED = 6
    TIMEOUT = 7

    def label(self) -> str:
        return {
            AbortReason.INTERVAL: "interval",
            AbortReason.OUT_OF_ORDER: "out-of-order message",
            AbortReason.INSUFFICIENT_ROUNDS: "insufficient rounds",
            AbortReason.INSECURE_LENGTH: "no secure OT possible (l < 1)",
            AbortReason.DECODE_FAILURE: "error correction failed",
            AbortReason.MALFORMED: "malformed message",
            AbortReason.TIMEOUT: "transport timeout",
        }[self]


def pack_bits(bits: np.ndarray) -> bytes:
    return np.packbits(np.asarray(bits).astype(np.uint8),
                       bitorder="little").tobytes()


def unpack_bits(data: bytes, count: int) -> np.ndarray:
    bits = np.unpackbits(np.frombuffer(data, dtype=np.uint8),
                         bitorder="little")
    if bits.size < count:
        raise ValueError("payload shorter than expected bit count")
    return bits[:count].astype(np.uint8)


@dataclass
class TranscriptEntry:
    direction: str  # "sent" | "received"
    msg_type: MessageType
    payload: bytes
    timestamp: float


@dataclass
class SessionTranscript:
    """Ordered, replayable record of the framed messages of one session."""

    entries: list[TranscriptEntry] = field(default_factory=list)

    def add(self, direction: str, msg_type: MessageType, payload: bytes) -> None:
        self.entries.append(
            TranscriptEntry(direction, msg_type, payload, time.monotonic())
        )

    def received_payloads(self) -> list[tuple[MessageType, bytes]]:
        return [(e.msg_type, e.payload) for e in self.entries
                if e.direction == "received"]

    def to_bytes(self) -> bytes:
        out = [struct.pack("<I", len(self.entries))]
        for e in self.entries:
            out.append(struct.pack(
                "<BBdI", 0 if e.direction == "sent" else 1,
                int(e.msg_type), e.timestamp, len(e.payload)))
            out.append(e.payload)
        return b"".join(out)

    @classmethod
    def from_bytes(cls, data: bytes) -> "SessionTranscript":
        (count,) = struct.unpack_from("<I", data, 0)
        off = 4
        entries = []
        for _ in range(count):
            d, t, ts, ln = struct.unpack_from("<BBdI", data, off)
            off += struct.calcsize("<BBdI")
            payload = data[off: off + ln]
            off += ln
            entries.append(TranscriptEntry(
                "sent" if d == 0 else "received", MessageType(t), payload, ts))
        return cls(entries)


class SessionAbort(Exception):
    def __init__(self, reason: AbortReason, detail: str = ""):
        self.reason = reason
        self.detail = detail or reason.label()
        super().__init__(self.detail)


class Transport:
    """Framed messaging over a connected socket, with transcript recording."""

    def __init__(self, sock: socket.socket, timeout: float = 30.0):
        self.sock = sock
        self.sock.settimeout(timeout)
        self.transcript = SessionTranscript()

    def send(self, msg_type: MessageType, payload: bytes) -> None:
        frame = struct.pack(">IB", len(payload), int(msg_type)) + payload
        self.sock.sendall(frame)
        self.transcript.add("sent", msg_type, payload)

    def _recv_exact(self, n: int) -> bytes:
        chunks = []
        got = 0
        while got < n:
            chunk = self.sock.recv(min(n - got, 1 << 20))
            if not chunk:
                raise SessionAbort(AbortReason.TIMEOUT, "connection closed")
            chunks.append(chunk)
            got += len(chunk)
        return b"".join(chunks)

    def recv(self) -> tuple[MessageType, bytes]:
        try:
            header = self._recv_exact(5)
            length, tag = struct.unpack(">IB", header)
            payload = self._recv_exact(length)
        except socket.timeout as exc:
            raise SessionAbort(AbortReason.TIMEOUT, "receive timed out") from exc
        try:
            msg_type = MessageType(tag)
        except ValueError as exc:
            raise SessionAbort(AbortReason.MALFORMED,
                               f"unknown message tag {tag}") from exc
        self.transcript.add("received", msg_type, payload)
        return msg_type, payload

    def expect(self, msg_type: MessageType) -> bytes:
        got, payload = self.recv()
        if got == MessageType.ABORT:
            code, text = _parse_abort(payload)
            raise SessionAbort(code, f"peer aborted: {text}")
        if got != msg_type:
            raise SessionAbort(
                AbortReason.OUT_OF_ORDER,
                f"expected {msg_type.name}, got {got.name}",
            )
        return payload

    def abort(self, reason: AbortReason, detail: str = "") -> None:
        text = (detail or reason.label()).encode()
        try:
            self.send(MessageType.ABORT, struct.pack(">H", int(reason)) + text)
        except OSError:
            pass

    def close(self) -> None:
        try:
            self.sock.close()
        except OSError:
            pass


def _parse_abort(payload: bytes) -> tuple[AbortReason, str]:
    (code,) = struct.unpack_from(">H", payload, 0)
    return AbortReason(code), payload[2:].decode(errors="replace")


def loopback_pair(timeout: float = 30.0) -> tuple[Transport, Transport]:
    a, b = socket.socketpair()
    return Transport(a, timeout), Transport(b, timeout)


@dataclass
class SessionConfig:
    """Shared session parameters both parties agreed on beforehand."""

    matrix: ParityCheckMatrix
    block_size: int
    window: int = DEFAULT_WINDOW_TICKS
    wait_seconds: float = 1.0
    max_decode_iter: int = 100


@dataclass
class AliceResult:
    s0: np.ndarray
    s1: np.ndarray
    l: int
    report: SecurityReport
    transcript: SessionTranscript


@dataclass
class BobResult:
    s_c: np.ndarray
    choice: int
    l: int
    transcript: SessionTranscript


@dataclass
class AbortResult:
    reason: AbortReason
    detail: str
    transcript: SessionTranscript


def verify_report_interval(
    detected: int, dp: DerivedProbabilities, n: int
) -> bool:
    """Whether the detected-round count lies in the acceptable interval.

    Guards against a dishonest receiver selectively reporting rounds as
    lost (the photon-number-splitting analogue).
    """
    center = (1.0 - dp.ph_noclick) * n
    half = dp.zeta * n
    return center - half <= detected <= center + half


def _session_length(report: SecurityReport, cfg: SessionConfig,
                    consts: SecurityConstants) -> int:
    # The hash input is a block, so the session cannot extract more than the
    # block minus the revealed syndrome and the safety margin.
    cap = cfg.block_size - cfg.matrix.n_rows - math.ceil(
        math.log2(2.0 / consts.epsilon))
    return min(report.l, cap)


def run_alice(
    transport: Transport,
    stream: TimetagStream,
    params: ExperimentParams,
    adv: AdversaryModel,
    consts: SecurityConstants,
    rng: np.random.Generator,
    cfg: SessionConfig,
) -> AliceResult | AbortResult:
    """Alice's side of one ROT session; outputs (S0, S1) or an abort."""
    try:
        dp = derived_probabilities(params, consts, mode="model")

        bob_blob = transport.expect(MessageType.TIMETAGS)
        bob_stream = timetags_from_bytes(bob_blob, "bob")
        a_idx, b_idx = coincidence_search(stream, bob_stream, cfg.window)
        # both parties walk the sifted strings in Bob's record order
        order = np.argsort(b_idx, kind="stable")
        a_idx, b_idx = a_idx[order], b_idx[order]

        matched = np.zeros(len(bob_stream), dtype=np.uint8)
        matched[b_idx] = 1
        transport.send(MessageType.ROUND_INDICES, pack_bits(matched))
        wait_from = time.monotonic()

        if not verify_report_interval(a_idx.size, dp, params.n):
            raise SessionAbort(AbortReason.INTERVAL)

        sifted = sift((a_idx, b_idx), stream, bob_stream)
        m = sifted.m_obs

        # memory-decoherence wait before any basis information leaves
        remaining = cfg.wait_seconds - (time.monotonic() - wait_from)
        if remaining > 0:
            time.sleep(remaining)
        transport.send(MessageType.BASES, pack_bits(sifted.alpha))

        payload = transport.expect(MessageType.INDEX_SETS)
        nbytes = (m + 7) // 8
        if len(payload) != 2 * nbytes:
            raise SessionAbort(AbortReason.MALFORMED, "bad index-set payload")
        i0 = np.flatnonzero(unpack_bits(payload[:nbytes], m))
        i1 = np.flatnonzero(unpack_bits(payload[nbytes:], m))
        if np.intersect1d(i0, i1).size or i0.size + i1.size != m:
            raise SessionAbort(AbortReason.MALFORMED,
                               "index sets are not a partition")
        if min(i0.size, i1.size) < cfg.block_size:
            raise SessionAbort(AbortReason.INSUFFICIENT_ROUNDS)
        i0 = i0[: cfg.block_size]
        i1 = i1[: cfg.block_size]

        report = rot_length(params, adv, consts, dp)
        l = _session_length(report, cfg, consts)
        if not (report.positivity_ok and report.capacity_ok) or l < 1:
            raise SessionAbort(AbortReason.INSECURE_LENGTH)

        x0 = sifted.x_bits[i0]
        x1 = sifted.x_bits[i1]
        syn0 = syndrome_encode(cfg.matrix, x0)
        syn1 = syndrome_encode(cfg.matrix, x1)
        transport.send(
            MessageType.SYNDROMES,
            _len_prefixed_bits(syn0) + _len_prefixed_bits(syn1),
        )

        f0 = sample_seed(rng, cfg.block_size, l)
        f1 = sample_seed(rng, cfg.block_size, l)
        transport.send(
            MessageType.HASH_SEEDS,
            _len_prefixed_bits(f0.bits) + _len_prefixed_bits(f1.bits)
            + struct.pack(">I", l),
        )
        s0 = toeplitz_hash(f0, x0, l)
        s1 = toeplitz_hash(f1, x1, l)
        return AliceResult(s0, s1, l, report, transport.transcript)
    except SessionAbort as abort:
        if not abort.detail.startswith("peer aborted"):
            transport.abort(abort.reason, abort.detail)
        return AbortResult(abort.reason, abort.detail, transport.transcript)


def run_bob(
    transport: Transport,
    stream: TimetagStream,
    choice: int,
    params: ExperimentParams,
    consts: SecurityConstants,
    rng: np.random.Generator,
    cfg: SessionConfig,
) -> BobResult | AbortResult:
    """Bob's side of one ROT session; outputs S_C or an abort.

    Bob labels the matched-basis subset I_C, decodes only that partition,
    and sends nothing after receiving the syndromes, so nothing he does
    depends observably on C.
    """
    if choice not in (0, 1):
        raise ValueError("choice must be 0 or 1")
    try:
        dp = derived_probabilities(params, consts, mode="model")
        transport.send(MessageType.TIMETAGS, timetags_to_bytes(stream))

        flags = unpack_bits(
            transport.expect(MessageType.ROUND_INDICES), len(stream)
        )
        mine = np.flatnonzero(flags)
        m = mine.size
        beta = (stream.detectors[mine] >> 1).astype(np.uint8)
        y = (stream.detectors[mine] & 1).astype(np.uint8)

        alpha = unpack_bits(transport.expect(MessageType.BASES), m)
        matched = np.flatnonzero(alpha == beta)
        unmatched = np.flatnonzero(alpha != beta)
        sets = {choice: matched, 1 - choice: unmatched}
        transport.send(
            MessageType.INDEX_SETS,
            pack_bits(_index_bitmap(sets[0], m))
            + pack_bits(_index_bitmap(sets[1], m)),
        )
        if min(matched.size, unmatched.size) < cfg.block_size:
            raise SessionAbort(AbortReason.INSUFFICIENT_ROUNDS)
        kept = sets[choice][: cfg.block_size]

        payload = transport.expect(MessageType.SYNDROMES)
        syndromes, off = [], 0
        for _ in range(2):
            syn, off = _read_len_prefixed_bits(payload, off)
            syndromes.append(syn)
        y_block = y[kept]
        y_cor = sum_product_decode(
            cfg.matrix, y_block, syndromes[choice], dp.p_err,
            max_iter=cfg.max_decode_iter,
        )
        if y_cor is None:
            # whole-session restart; the signal is independent of C
            raise SessionAbort(AbortReason.DECODE_FAILURE)

        payload = transport.expect(MessageType.HASH_SEEDS)
        seed_bits, off = _read_len_prefixed_bits(payload, 0)
        seed_bits1, off = _read_len_prefixed_bits(payload, off)
        (l,) = struct.unpack_from(">I", payload, off)
        bits = (seed_bits, seed_bits1)[choice]
        f_c = HashSeed(bits=bits, n_in=cfg.block_size, l_out=l)
        s_c = toeplitz_hash(f_c, y_cor, l)
        return BobResult(s_c, choice, l, transport.transcript)
    except SessionAbort as abort:
        if not abort.detail.startswith("peer aborted"):
            transport.abort(abort.reason, abort.detail)
        return AbortResult(abort.reason, abort.detail, transport.transcript)


def _index_bitmap(indices: np.ndarray, m: int) -> np.ndarray:
    bitmap = np.zeros(m, dtype=np.uint8)
    bitmap[indices] = 1
    return bitmap


def _len_prefixed_bits(bits: np.ndarray) -> bytes:
    return struct.pack(">I", int(bits.size)) + pack_bits(bits)


def _read_len_prefixed_bits(data: bytes, offset: int) -> tuple[np.ndarray, int]:
    (count,) = struct.unpack_from(">I", data, offset)
    offset += 4
    nbytes = (count + 7) // 8
    bits = unpack_bits(data[offset: offset + nbytes], count)
    return bits, offset + nbytes


def ot_from_rot(
    s0: np.ndarray,
    s1: np.ndarray,
    desired0: np.ndarray,
    desired1: np.ndarray,
    choice: int,
    s_c: np.ndarray,
) -> np.ndarray:
    """OT-from-ROT step in one place: pad both strings, unpad the chosen one."""
    if desired0.size != s0.size or desired1.size != s1.size:
        raise ValueError("desired strings must have length l")
    ct0 = one_time_pad(s0, desired0)
    ct1 = one_time_pad(s1, desired1)
    return one_time_pad((ct0, ct1)[choice], s_c)


def alice_send_ot(
    transport: Transport,
    s0: np.ndarray,
    s1: np.ndarray,
    desired0: np.ndarray,
    desired1: np.ndarray,
) -> None:
    ct0 = one_time_pad(s0, desired0)
    ct1 = one_time_pad(s1, desired1)
    transport.send(
        MessageType.OT_CIPHERTEXTS,
        _len_prefixed_bits(ct0) + _len_prefixed_bits(ct1),
    )


def bob_receive_ot(
    transport: Transport, choice: int, s_c: np.ndarray
) -> np.ndarray:
    payload = transport.expect(MessageType.OT_CIPHERTEXTS)
    ct0, off = _read_len_prefixed_bits(payload, 0)
    ct1, _ = _read_len_prefixed_bits(payload, off)
    return one_time_pad((ct0, ct1)[choice], s_c)


def run_local_session(
    alice_stream: TimetagStream,
    bob_stream: TimetagStream,
    choice: int,
    params: ExperimentParams,
    adv: AdversaryModel,
    consts: SecurityConstants,
    cfg: SessionConfig,
    alice_seed: int = 1,
    bob_seed: int = 2,
    desired: tuple[np.ndarray, np.ndarray] | None = None,
    timeout: float = 120.0,
):
    """Run both roles over an in-memory transport; returns (alice, bob[, ot]).

    When ``desired`` strings are given the OT extension runs as well and the
    third element is the string Bob recovered.
    """
    ta, tb = loopback_pair(timeout)
    results: dict = {}

    def alice_side():
        res = run_alice(
            ta, alice_stream, params, adv, consts,
            np.random.default_rng(alice_seed), cfg,
        )
        results["alice"] = res
        if desired is not None and isinstance(res, AliceResult):
            alice_send_ot(ta, res.s0, res.s1, desired[0], desired[1])

    thread = threading.Thread(target=alice_side)
    thread.start()
    bob_res = run_bob(
        tb, bob_stream, choice, params, consts,
        np.random.default_rng(bob_seed), cfg,
    )
    recovered = None
    if desired is not None and isinstance(bob_res, BobResult):
        recovered = bob_receive_ot(tb, choice, bob_res.s_c)
    thread.join()
    ta.close()
    tb.close()
    if desired is not None:
        return results["alice"], bob_res, recovered
    return results["alice"], bob_res
