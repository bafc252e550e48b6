"""Simulated entangled-pair exchange and coincidence processing.

Stands in for the optical table: pair emission with PDC number statistics,
per-arm loss, correlated BB84 outcomes, dark counts, and timetagging at
156.25 ps resolution.  A round is one emission event of the source (at least
one pair within a coherence window); rounds sit on a uniform clock grid with
small per-party jitter, so honest coincidences always fall inside the
matching window.

Randomness comes from counter-based Philox streams keyed by (seed, chunk), so
a given seed reproduces the exact same streams regardless of how generation
is batched.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .params import ExperimentParams, pdc_pair_distribution

__all__ = [
    "TimetagStream",
    "GroundTruth",
    "SiftedStrings",
    "simulate_exchange",
    "coincidence_search",
    "sift",
    "write_timetags",
    "read_timetags",
    "timetags_to_bytes",
    "timetags_from_bytes",
    "TICK_SECONDS",
    "DEFAULT_WINDOW_TICKS",
    "DEFAULT_PERIOD_TICKS",
]

#: One timetag tick is 156.25 ps.
TICK_SECONDS = 156.25e-12

#: Default coincidence window of ~3 ns.
DEFAULT_WINDOW_TICKS = 19

#: Clock-grid spacing between rounds, in ticks (100 ns).
DEFAULT_PERIOD_TICKS = 640

_CHUNK = 1 << 21
_MAGIC = b"ROTT"
_VERSION = 1


@dataclass
class TimetagStream:
    """Time-ordered detection record of one party."""

    ticks: np.ndarray      # uint64, non-decreasing
    detectors: np.ndarray  # uint8, basis*2 + bit
    party: str = ""

    def __len__(self) -> int:
        return int(self.ticks.size)


@dataclass
class GroundTruth:
    """Simulation bookkeeping for verifying the emitted streams."""

    alice_round: np.ndarray  # emission-round index of each Alice record
    bob_round: np.ndarray
    alice_dark: np.ndarray   # bool, record caused by a dark count
    bob_dark: np.ndarray
    n_rounds: int
    n_multipair: int


@dataclass
class SiftedStrings:
    """Aligned basis/bit strings of both parties over mutually detected rounds."""

    x_bits: np.ndarray
    y_bits: np.ndarray
    alpha: np.ndarray
    beta: np.ndarray

    def __post_init__(self) -> None:
        sizes = {a.size for a in (self.x_bits, self.y_bits, self.alpha, self.beta)}
        if len(sizes) != 1:
            raise ValueError("sifted vectors must have equal length")

    @property
    def m_obs(self) -> int:
        return int(self.x_bits.size)


def _chunk_rng(seed: int, chunk: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(key=(int(seed) << 64) | chunk))


def _empty_stream(party: str) -> TimetagStream:
    return TimetagStream(
        np.zeros(0, dtype=np.uint64), np.zeros(0, dtype=np.uint8), party
    )


def simulate_exchange(
    params: ExperimentParams,
    seed: int,
    duration_pulses: int,
    period_ticks: int = DEFAULT_PERIOD_TICKS,
    jitter_scale: float = 2.0,
    detector_efficiency: np.ndarray | None = None,
    symmetrize: bool = False,
) -> tuple[TimetagStream, TimetagStream, GroundTruth]:
    """Simulate ``duration_pulses`` emission rounds of the source.

    Per round the pair count follows the PDC number distribution conditioned
    on emission; each photon survives its arm independently; surviving
    photons give correlated BB84 outcomes (equal-basis bits agree except with
    probability ``e_det``); every detector can fire spuriously with
    ``p_dark``.  Deterministic given ``seed``.
    """
    if duration_pulses < 1:
        raise ValueError("duration_pulses must be >= 1")
    eta_a, eta_b = params.arm_transmittances
    probs, _ = pdc_pair_distribution(params.mu)
    cond = probs[1:].copy()
    total = float(cond.sum())
    if total <= 0.0 and params.p_dark == 0.0:
        gt = GroundTruth(
            np.zeros(0, np.uint64), np.zeros(0, np.uint64),
            np.zeros(0, bool), np.zeros(0, bool), duration_pulses, 0,
        )
        return _empty_stream("alice"), _empty_stream("bob"), gt
    if total > 0.0:
        cond /= total
        pair_values = np.arange(1, probs.size)
    else:
        # dark counts only
        cond = np.array([1.0])
        pair_values = np.array([0])
        eta_a = eta_b = 0.0

    if detector_efficiency is None:
        det_eff = np.ones(4)
    else:
        det_eff = np.asarray(detector_efficiency, dtype=np.float64)
        if det_eff.shape != (4,):
            raise ValueError("detector_efficiency must have 4 entries")
    if symmetrize:
        det_eff = np.full(4, det_eff.min())

    jitter_cap = max(1, min(period_ticks - 1, DEFAULT_WINDOW_TICKS // 2))

    a_ticks, a_det, a_round = [], [], []
    b_ticks, b_det, b_round = [], [], []
    a_dark_rounds: set[int] = set()
    b_dark_rounds: set[int] = set()
    n_multipair = 0

    for chunk_idx, start in enumerate(range(0, duration_pulses, _CHUNK)):
        rng = _chunk_rng(seed, chunk_idx)
        size = min(_CHUNK, duration_pulses - start)
        counts = rng.choice(pair_values, size=size, p=cond)

        abasis = rng.integers(0, 2, size, dtype=np.uint8)
        abit = rng.integers(0, 2, size, dtype=np.uint8)
        bbasis = rng.integers(0, 2, size, dtype=np.uint8)
        flip = rng.random(size) < params.e_det
        rand_bit = rng.integers(0, 2, size, dtype=np.uint8)
        bbit = np.where(abasis == bbasis, abit ^ flip, rand_bit).astype(np.uint8)

        a_detector = (abasis * 2 + abit).astype(np.uint8)
        b_detector = (bbasis * 2 + bbit).astype(np.uint8)
        have_pair = counts > 0
        a_click = (rng.random(size) < eta_a * det_eff[a_detector]) & have_pair
        b_click = (rng.random(size) < eta_b * det_eff[b_detector]) & have_pair

        # multi-pair rounds: each photon is routed independently; the first
        # click per party wins (squashing), later photons are discarded
        multi = np.flatnonzero(counts > 1)
        n_multipair += multi.size
        for i in multi:
            for _extra in range(int(counts[i]) - 1):
                eab = int(rng.integers(0, 2))
                eabit = int(rng.integers(0, 2))
                ebb = int(rng.integers(0, 2))
                if eab == ebb:
                    ebbit = eabit ^ int(rng.random() < params.e_det)
                else:
                    ebbit = int(rng.integers(0, 2))
                ea_det = eab * 2 + eabit
                eb_det = ebb * 2 + ebbit
                if not a_click[i] and rng.random() < eta_a * det_eff[ea_det]:
                    a_click[i] = True
                    a_detector[i] = ea_det
                if not b_click[i] and rng.random() < eta_b * det_eff[eb_det]:
                    b_click[i] = True
                    b_detector[i] = eb_det

        jit_a = np.minimum(
            rng.exponential(jitter_scale, size), jitter_cap
        ).astype(np.uint64)
        jit_b = np.minimum(
            rng.exponential(jitter_scale, size), jitter_cap
        ).astype(np.uint64)

        for click, detector, jit, dark_rounds in (
            (a_click, a_detector, jit_a, a_dark_rounds),
            (b_click, b_detector, jit_b, b_dark_rounds),
        ):
            n_dark = rng.binomial(size * 4, params.p_dark)
            if n_dark == 0:
                continue
            dr = rng.integers(0, size, n_dark)
            dd = rng.integers(0, 4, n_dark, dtype=np.uint8)
            dt = rng.integers(0, jitter_cap + 1, n_dark).astype(np.uint64)
            for j in range(n_dark):
                i = int(dr[j])
                if click[i]:
                    # squash: keep the earlier of photon and dark click
                    if dt[j] < jit[i]:
                        jit[i] = dt[j]
                        detector[i] = dd[j]
                        dark_rounds.add(i + start)
                else:
                    click[i] = True
                    detector[i] = dd[j]
                    jit[i] = dt[j]
                    dark_rounds.add(i + start)

        base = (np.arange(start, start + size, dtype=np.uint64)
                * np.uint64(period_ticks))
        a_idx = np.flatnonzero(a_click)
        b_idx = np.flatnonzero(b_click)
        a_ticks.append(base[a_idx] + jit_a[a_idx])
        a_det.append(a_detector[a_idx])
        a_round.append((a_idx + start).astype(np.uint64))
        b_ticks.append(base[b_idx] + jit_b[b_idx])
        b_det.append(b_detector[b_idx])
        b_round.append((b_idx + start).astype(np.uint64))

    def _concat(parts: list[np.ndarray], dtype) -> np.ndarray:
        return np.concatenate(parts) if parts else np.zeros(0, dtype=dtype)

    alice = TimetagStream(
        _concat(a_ticks, np.uint64), _concat(a_det, np.uint8), "alice"
    )
    bob = TimetagStream(
        _concat(b_ticks, np.uint64), _concat(b_det, np.uint8), "bob"
    )
    alice_round = _concat(a_round, np.uint64)
    bob_round = _concat(b_round, np.uint64)

    def _dark_mask(rounds: np.ndarray, dark: set[int]) -> np.ndarray:
        if not dark:
            return np.zeros(rounds.size, dtype=bool)
        darks = np.array(sorted(dark), dtype=np.uint64)
        return np.isin(rounds, darks)

    gt = GroundTruth(
        alice_round=alice_round,
        bob_round=bob_round,
        alice_dark=_dark_mask(alice_round, a_dark_rounds),
        bob_dark=_dark_mask(bob_round, b_dark_rounds),
        n_rounds=duration_pulses,
        n_multipair=n_multipair,
    )
    return alice, bob, gt


def coincidence_search(
    alice: TimetagStream,
    bob: TimetagStream,
    window: int = DEFAULT_WINDOW_TICKS,
) -> tuple[np.ndarray, np.ndarray]:
    """One-to-one pairing of events with |t_A - t_B| <= window.

    Greedy nearest-neighbour matching; each event is used at most once and
    the output is sorted by Alice's time.  Returns (alice indices, bob
    indices).
    """
    ta = alice.ticks.astype(np.int64)
    tb = bob.ticks.astype(np.int64)
    if np.any(np.diff(ta) < 0) or np.any(np.diff(tb) < 0):
        raise ValueError("timetag streams must be time-sorted")
    if ta.size == 0 or tb.size == 0:
        return np.zeros(0, dtype=np.int64), np.zeros(0, dtype=np.int64)

    pos = np.searchsorted(ta, tb)
    left = np.clip(pos - 1, 0, ta.size - 1)
    right = np.clip(pos, 0, ta.size - 1)
    d_left = np.abs(tb - ta[left])
    d_right = np.abs(tb - ta[right])
    use_left = d_left <= d_right
    cand = np.where(use_left, left, right)
    dist = np.where(use_left, d_left, d_right)
    ok = dist <= window
    b_idx = np.flatnonzero(ok)
    a_cand = cand[ok]
    d_ok = dist[ok]

    # resolve collisions on the same Alice event: keep the closest Bob event
    order = np.lexsort((d_ok, a_cand))
    a_sorted = a_cand[order]
    keep = np.ones(a_sorted.size, dtype=bool)
    keep[1:] = a_sorted[1:] != a_sorted[:-1]
    a_out = a_sorted[keep]
    b_out = b_idx[order][keep]
    sort = np.argsort(a_out, kind="stable")
    return a_out[sort].astype(np.int64), b_out[sort].astype(np.int64)


def sift(
    pairs: tuple[np.ndarray, np.ndarray],
    alice: TimetagStream,
    bob: TimetagStream,
) -> SiftedStrings:
    """Basis and bit strings over the paired rounds, nothing discarded.

    Detector ids map to (basis, bit) = (id >> 1, id & 1); both matched and
    mismatched bases are kept.
    """
    a_idx, b_idx = pairs
    a_det = alice.detectors[a_idx]
    b_det = bob.detectors[b_idx]
    return SiftedStrings(
        x_bits=(a_det & 1).astype(np.uint8),
        y_bits=(b_det & 1).astype(np.uint8),
        alpha=(a_det >> 1).astype(np.uint8),
        beta=(b_det >> 1).astype(np.uint8),
    )


def timetags_to_bytes(stream: TimetagStream) -> bytes:
    """Serialize to the binary timetag format (magic, version, LE records)."""
    header = _MAGIC + struct.pack("<I", _VERSION)
    rec = np.zeros(
        len(stream), dtype=np.dtype([("tick", "<u8"), ("det", "u1")])
    )
    rec["tick"] = stream.ticks
    rec["det"] = stream.detectors
    return header + rec.tobytes()


def timetags_from_bytes(data: bytes, party: str = "") -> TimetagStream:
    if data[:4] != _MAGIC:
        raise ValueError("bad timetag magic")
    (version,) = struct.unpack("<I", data[4:8])
    if version != _VERSION:
        raise ValueError(f"unsupported timetag version {version}")
    rec = np.frombuffer(
        data[8:], dtype=np.dtype([("tick", "<u8"), ("det", "u1")])
    )
    if np.any(rec["det"] >= 4):
        raise ValueError("detector_id out of range")
    return TimetagStream(
        rec["tick"].astype(np.uint64), rec["det"].astype(np.uint8), party
    )


def write_timetags(path: str | Path, stream: TimetagStream) -> None:
    Path(path).write_bytes(timetags_to_bytes(stream))


def read_timetags(path: str | Path, party: str = "") -> TimetagStream:
    return timetags_from_bytes(Path(path).read_bytes(), party)
