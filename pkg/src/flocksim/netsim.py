"""Broadcast radio medium and per-agent neighbor caches.

Every agent periodically broadcasts its own sensed position and velocity.
The medium decides, per directed sender->receiver link, whether the packet
arrives (range gate on true positions, i.i.d. loss, link outage bursts) and
when (truncated-normal delay). Arrived packets land in the receiver's
neighbor cache, which keeps only the freshest sample per sender and forgets
entries that have not been refreshed within an expiry horizon.

Packets are stored in per-delivery-tick buckets of flat arrays so that a
whole swarm's traffic can be enqueued and drained with a handful of numpy
operations per tick.
"""

from __future__ import annotations

import heapq
from dataclasses import dataclass
from typing import Dict, List, Optional, Tuple

import numpy as np

from .core import AgentStatus, Vec2


@dataclass
class NetworkParams:
    comm_range: float = 80.0       # m, hard disc on true distance
    delay_mean: float = 0.4        # s
    delay_std: float = 0.2         # s, truncated-normal spread
    delay_min: float = 0.05        # s, floor after truncation
    packet_loss: float = 0.0       # probability per delivery
    outage_rate: float = 0.0       # 1/s per directed link
    outage_duration_mean: float = 0.0  # s, exponential burst length
    broadcast_hz: float = 10.0     # Hz

    def __post_init__(self) -> None:
        if not self.comm_range > 0:
            raise ValueError("comm_range must be positive")
        if self.delay_mean < 0 or self.delay_std < 0:
            raise ValueError("delay parameters must be non-negative")
        if not self.delay_min > 0:
            raise ValueError("delay_min must be positive")
        if not 0.0 <= self.packet_loss < 1.0:
            raise ValueError("packet_loss must be in [0, 1)")
        if self.outage_rate < 0 or self.outage_duration_mean < 0:
            raise ValueError("outage parameters must be non-negative")
        if self.outage_rate > 0 and self.outage_duration_mean <= 0:
            raise ValueError("outage_duration_mean must be positive when "
                             "outage_rate is set")
        if not self.broadcast_hz > 0:
            raise ValueError("broadcast_hz must be positive")


@dataclass
class BroadcastMessage:
    """Payload as sensed by the sender at sample_time."""

    sender: int
    sample_time: float
    position: Vec2
    velocity: Vec2
    status: AgentStatus = AgentStatus.AIRBORNE


@dataclass
class InFlightPacket:
    message: BroadcastMessage
    receiver: int
    deliver_at: float


def sample_delays(rng: np.random.Generator, params: NetworkParams,
                  size) -> np.ndarray:
    """Per-packet delays: normal(mean, std) floored at delay_min."""
    if params.delay_std > 0:
        d = rng.normal(params.delay_mean, params.delay_std, size=size)
    else:
        d = np.full(size, float(params.delay_mean))
    return np.maximum(d, params.delay_min)


def broadcast_packets(message: BroadcastMessage, true_positions: np.ndarray,
                      t_now: float, params: NetworkParams,
                      rng: np.random.Generator,
                      receiver_ok: Optional[np.ndarray] = None,
                      ) -> List[InFlightPacket]:
    """One sender's broadcast resolved against every potential receiver.

    true_positions (n, 2) gates reception by distance from the sender's true
    position; receiver_ok optionally masks receivers out (link outages,
    landed vehicles). Receivers are visited in index order so the random
    stream is reproducible.
    """
    n = true_positions.shape[0]
    diff = true_positions - true_positions[message.sender]
    dist = np.hypot(diff[:, 0], diff[:, 1])
    ok = dist <= params.comm_range
    ok[message.sender] = False
    if receiver_ok is not None:
        ok &= receiver_ok
    idx = np.flatnonzero(ok)
    if idx.size == 0:
        return []
    delays = sample_delays(rng, params, idx.size)
    if params.packet_loss > 0:
        survive = rng.random(idx.size) >= params.packet_loss
        idx, delays = idx[survive], delays[survive]
    return [InFlightPacket(message=message, receiver=int(j),
                           deliver_at=t_now + float(d))
            for j, d in zip(idx, delays)]


# One enqueued batch: flat arrays over packets, all due at the same tick:
# senders, receivers, position, velocity, sample_time, status, deliver_at.
_Chunk = Tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray,
               np.ndarray, np.ndarray, np.ndarray]


class Medium:
    """Shared radio channel for n agents on a fixed tick grid.

    Delivery times are quantized up to the next tick boundary, which is when
    the engine hands packets to receivers; a packet due exactly on a boundary
    is delivered at that tick.
    """

    def __init__(self, n_agents: int, params: NetworkParams,
                 rng: np.random.Generator, tick: float):
        self.n = n_agents
        self.params = params
        self.rng = rng
        self.tick = tick
        self._buckets: Dict[int, List[_Chunk]] = {}
        self._bucket_heap: List[int] = []
        # Directed-link outage end times, [sender, receiver].
        self.outage_until = np.full((n_agents, n_agents), -np.inf)

    # -- outages ----------------------------------------------------------

    def outage_step(self, t_now: float, dt: float) -> None:
        """Advance the per-link outage processes by dt.

        Links not currently in outage enter one with probability
        1 - exp(-rate * dt); burst lengths are exponential. Draw shapes are
        fixed so the random stream does not depend on the outcome.
        """
        p = self.params
        if p.outage_rate <= 0:
            return
        u = self.rng.random((self.n, self.n))
        dur = self.rng.exponential(p.outage_duration_mean, (self.n, self.n))
        start_p = 1.0 - np.exp(-p.outage_rate * dt)
        idle = self.outage_until <= t_now
        starting = idle & (u < start_p)
        self.outage_until = np.where(starting, t_now + dur, self.outage_until)

    def link_up(self, sender: int, receiver: int, t_now: float) -> bool:
        return bool(self.outage_until[sender, receiver] <= t_now)

    # -- sending ----------------------------------------------------------

    def _enqueue(self, chunk: _Chunk) -> None:
        deliver_at = chunk[6]
        due_tick = np.ceil(deliver_at / self.tick - 1e-9).astype(np.int64)
        order = np.argsort(due_tick, kind="stable")
        chunk = tuple(a[order] for a in chunk)  # type: ignore[assignment]
        due_tick = due_tick[order]
        edges = np.flatnonzero(np.diff(due_tick)) + 1
        starts = np.concatenate(([0], edges))
        stops = np.concatenate((edges, [due_tick.size]))
        for a, b in zip(starts, stops):
            key = int(due_tick[a])
            if key not in self._buckets:
                self._buckets[key] = []
                heapq.heappush(self._bucket_heap, key)
            self._buckets[key].append(tuple(arr[a:b] for arr in chunk))

    def broadcast_batch(self, true_pos: np.ndarray, payload_pos: np.ndarray,
                        payload_vel: np.ndarray, sample_time: np.ndarray,
                        status: np.ndarray, t_now: float,
                        active: np.ndarray) -> int:
        """Enqueue one broadcast round for every active sender at once.

        true_pos gates reception range; payload_* is what each sender
        believes and is what its receivers get. Returns the number of packets
        enqueued.
        """
        n, p = self.n, self.params
        diff = true_pos[:, None, :] - true_pos[None, :, :]
        dist = np.hypot(diff[..., 0], diff[..., 1])
        mask = dist <= p.comm_range
        np.fill_diagonal(mask, False)
        mask &= active[:, None] & active[None, :]
        if p.outage_rate > 0:
            mask &= self.outage_until <= t_now
        # Random draws use fixed shapes so streams stay reproducible.
        if p.delay_std > 0:
            delays = self.rng.normal(p.delay_mean, p.delay_std, (n, n))
            delays = np.maximum(delays, p.delay_min)
        else:
            delays = np.full((n, n), max(p.delay_mean, p.delay_min))
        if p.packet_loss > 0:
            mask &= self.rng.random((n, n)) >= p.packet_loss

        senders, receivers = np.nonzero(mask)
        if senders.size == 0:
            return 0
        self._enqueue((senders, receivers,
                       payload_pos[senders], payload_vel[senders],
                       np.asarray(sample_time, dtype=np.float64)[senders],
                       np.asarray(status, dtype=np.int8)[senders],
                       t_now + delays[senders, receivers]))
        return int(senders.size)

    def broadcast(self, message: BroadcastMessage, true_positions: np.ndarray,
                  t_now: float,
                  receiver_ok: Optional[np.ndarray] = None,
                  ) -> List[InFlightPacket]:
        """Single-sender form; enqueues and returns the packets."""
        ok = receiver_ok
        if self.params.outage_rate > 0:
            up = self.outage_until[message.sender] <= t_now
            ok = up if ok is None else (ok & up)
        packets = broadcast_packets(message, true_positions, t_now,
                                    self.params, self.rng, receiver_ok=ok)
        if packets:
            k = len(packets)
            self._enqueue((
                np.full(k, message.sender, dtype=np.int64),
                np.array([pk.receiver for pk in packets], dtype=np.int64),
                np.tile(np.asarray(message.position, dtype=np.float64), (k, 1)),
                np.tile(np.asarray(message.velocity, dtype=np.float64), (k, 1)),
                np.full(k, message.sample_time),
                np.full(k, int(message.status), dtype=np.int8),
                np.array([pk.deliver_at for pk in packets])))
        return packets

    # -- receiving --------------------------------------------------------

    def pending_count(self) -> int:
        return sum(c[0].size for lst in self._buckets.values() for c in lst)

    def drain_due(self, tick_index: int) -> Optional[_Chunk]:
        """Pop every packet due at or before tick_index, concatenated."""
        chunks: List[_Chunk] = []
        while self._bucket_heap and self._bucket_heap[0] <= tick_index:
            key = heapq.heappop(self._bucket_heap)
            chunks.extend(self._buckets.pop(key))
        if not chunks:
            return None
        if len(chunks) == 1:
            return chunks[0]
        return tuple(np.concatenate([c[i] for c in chunks])  # type: ignore[return-value]
                     for i in range(7))

    def deliver(self, receiver: int, t_now: float) -> List[InFlightPacket]:
        """Scalar helper: pop packets for one receiver due by t_now.

        Due packets addressed to other receivers are re-buffered, not lost.
        """
        tick_index = int(np.floor(t_now / self.tick + 1e-9))
        due = self.drain_due(tick_index)
        if due is None:
            return []
        keep = due[1] != receiver
        if keep.any():
            back: _Chunk = tuple(a[keep] for a in due)  # type: ignore[assignment]
            if tick_index not in self._buckets:
                self._buckets[tick_index] = []
                heapq.heappush(self._bucket_heap, tick_index)
            self._buckets[tick_index].append(back)
        s, r, ppos, pvel, st, stat, dat = due
        out = [InFlightPacket(
            message=BroadcastMessage(sender=int(s[i]), sample_time=float(st[i]),
                                     position=ppos[i].copy(),
                                     velocity=pvel[i].copy(),
                                     status=AgentStatus(int(stat[i]))),
            receiver=receiver, deliver_at=float(dat[i]))
            for i in np.flatnonzero(~keep)]
        out.sort(key=lambda pk: pk.deliver_at)
        return out


class NeighborTable:
    """Per-receiver cache of the freshest sample heard from each sender.

    Arrays are indexed [receiver, sender]. An entry is usable when it has
    ever been written, is no older than the expiry horizon, and is not the
    receiver's own row/column diagonal.
    """

    def __init__(self, n_agents: int):
        self.n = n_agents
        self.pos = np.zeros((n_agents, n_agents, 2))
        self.vel = np.zeros((n_agents, n_agents, 2))
        self.sample_time = np.full((n_agents, n_agents), -np.inf)
        self.status = np.full((n_agents, n_agents), int(AgentStatus.AIRBORNE),
                              dtype=np.int8)

    def ingest(self, senders: np.ndarray, receivers: np.ndarray,
               pos: np.ndarray, vel: np.ndarray, sample_time: np.ndarray,
               status: np.ndarray) -> bool:
        """Merge a delivery batch; strictly newer sample times win.

        Duplicate (receiver, sender) rows within the batch are reduced to the
        freshest before writing so merge order cannot matter. Returns True
        when anything was updated.
        """
        if senders.size == 0:
            return False
        key = receivers.astype(np.int64) * self.n + senders.astype(np.int64)
        order = np.lexsort((sample_time, key))
        key_sorted = key[order]
        last_of_group = np.r_[key_sorted[1:] != key_sorted[:-1], True]
        sel = order[last_of_group]
        r, s = receivers[sel], senders[sel]
        newer = sample_time[sel] > self.sample_time[r, s]
        if not newer.any():
            return False
        r, s, sel = r[newer], s[newer], sel[newer]
        self.pos[r, s] = pos[sel]
        self.vel[r, s] = vel[sel]
        self.sample_time[r, s] = sample_time[sel]
        self.status[r, s] = status[sel]
        return True

    def ingest_packet(self, packet: InFlightPacket) -> bool:
        """Scalar convenience for tests and interactive use."""
        m = packet.message
        return self.ingest(np.array([m.sender]), np.array([packet.receiver]),
                           np.asarray(m.position, dtype=np.float64)[None, :],
                           np.asarray(m.velocity, dtype=np.float64)[None, :],
                           np.array([m.sample_time]),
                           np.array([int(m.status)], dtype=np.int8))

    def valid_mask(self, t_now: float, expiry: float) -> np.ndarray:
        """(N, N) bool of usable entries at t_now."""
        ok = (self.sample_time > -np.inf) & (t_now - self.sample_time <= expiry)
        np.fill_diagonal(ok, False)
        return ok

    def ages(self, t_now: float) -> np.ndarray:
        return t_now - self.sample_time

    def entries(self, receiver: int, t_now: float, expiry: float):
        """List of (sender, position, velocity, age) for one receiver."""
        ok = self.valid_mask(t_now, expiry)[receiver]
        out = []
        for s in np.flatnonzero(ok):
            out.append((int(s), self.pos[receiver, s].copy(),
                        self.vel[receiver, s].copy(),
                        float(t_now - self.sample_time[receiver, s])))
        return out
