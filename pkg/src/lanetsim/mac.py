"""Medium-access decision logic and the per-node runtime container.

Pure functions here compute the initiator and acceptor utilities of the
handshake MAC: an initiator scores each sector by summing, over its
backlogged sessions and the forward-progress neighbors in that sector,
backlog x normalized progress x normalized RRS; an acceptor scores each
heard initiator by the best weighted differential backlog in each
direction times link capacity, which is also how the full-duplex reverse
session gets picked.  The geographic baseline uses the same shapes with
the RRS factor pinned to 1.  Sequencing (who transmits when) lives in
engine.py; everything here is a local decision a node could make from
its own tables.
"""
from __future__ import annotations

from collections import deque

from .core import Position, distance


def normalized_progress(i_pos: Position, j_pos: Position,
                        k_pos: Position) -> float:
    """(d_ik - d_jk) / d_ij; positive only when j is closer to the sink."""
    d_ij = distance(i_pos, j_pos)
    if d_ij == 0.0:
        raise ValueError("normalized progress undefined for coincident nodes")
    return (distance(i_pos, k_pos) - distance(j_pos, k_pos)) / d_ij


def normalized_rrs(gamma_j: float, neighborhood_gammas) -> float:
    """gamma_j / max over the neighborhood; 0 when the whole set is 0."""
    best = 0.0
    for g in neighborhood_gammas:
        if g > best:
            best = g
    if best <= 0.0:
        return 0.0
    return gamma_j / best


def initiator_utility(entries) -> float:
    """Sector utility: sum of backlog * sum(progress * rrs) over sessions.

    `entries` is an iterable of (backlog, candidates) with candidates an
    iterable of (normalized_progress, normalized_rrs) for the
    forward-progress neighbors in the sector under evaluation.
    """
    total = 0.0
    for backlog, candidates in entries:
        acc = 0.0
        for prog, nrrs in candidates:
            acc += prog * nrrs
        total += backlog * acc
    return total


def select_sector(utilities) -> int | None:
    """Index of the best strictly positive sector utility; ties go low."""
    best_idx = None
    best = 0.0
    for idx, u in enumerate(utilities):
        if u > best:
            best = u
            best_idx = idx
    return best_idx


def select_session_eta(options):
    """Best weighted differential backlog among candidate sessions.

    `options` is an iterable of (session_id, weight, b_own, b_peer) with
    weight = normalized RRS x normalized progress for the direction under
    evaluation.  Returns (session_id, eta); all-nonpositive differentials
    yield (None, 0.0) meaning no useful transfer in this direction.
    Ties resolve to the lowest session id.
    """
    best_sid = None
    best_eta = 0.0
    for sid, weight, b_own, b_peer in sorted(options):
        eta = weight * (b_own - b_peer)
        if eta > best_eta:
            best_eta = eta
            best_sid = sid
    if best_sid is None:
        return None, 0.0
    return best_sid, best_eta


def acceptor_utility(eta_fwd: float, c_fwd: float, eta_rev: float,
                     c_rev: float) -> float:
    """Capacity-weighted sum of the two directional etas."""
    return eta_fwd * c_fwd + eta_rev * c_rev


def select_initiator(candidates):
    """Initiator with the largest positive utility; ties to lowest id.

    `candidates` is an iterable of (node_id, utility).  Returns None when
    no candidate offers positive utility (the degenerate case where the
    acceptor stays silent).
    """
    best_id = None
    best = 0.0
    for nid, u in sorted(candidates):
        if u > best:
            best = u
            best_id = nid
    return best_id


def backoff_slots(utility: float, cw: int, rng,
                  utility_scale: float = 25.0) -> int:
    """Priority backoff draw over [0, cw-1].

    Zero utility draws uniformly.  Positive utility tilts a truncated
    geometric distribution toward slot 0 (decay ratio 1 - p/2 with
    p = u / (u + scale)), so higher utility is stochastically earlier
    while every slot keeps positive probability; two equal-utility nodes
    on different streams still draw independently.
    """
    if cw < 1:
        raise ValueError("cw must be >= 1")
    if cw == 1:
        return 0
    if utility < 0.0:
        raise ValueError("utility must be nonnegative")
    if utility == 0.0:
        return rng.randrange(cw)
    p = utility / (utility + utility_scale)
    rho = 1.0 - 0.5 * p
    if rho == 1.0:          # utility small enough to underflow: uniform limit
        return rng.randrange(cw)
    x = rng.random() * (1.0 - rho ** cw) / (1.0 - rho)
    term = 1.0
    slot = 0
    while slot < cw - 1 and x >= term:
        x -= term
        term *= rho
        slot += 1
    return slot


def greedy_next_hop(self_pos: Position, sink_pos: Position, neighbors):
    """Neighbor geographically closest to the sink, if closer than self.

    `neighbors` is an iterable of (node_id, Position).  Returns None when
    no neighbor improves on the current distance (the packet is stuck).
    Ties resolve to the lowest node id.
    """
    d_self = distance(self_pos, sink_pos)
    best_id = None
    best_d = d_self
    for nid, pos in sorted(neighbors):
        d = distance(pos, sink_pos)
        if d < best_d:
            best_d = d
            best_id = nid
    return best_id


class MacNode:
    """Mutable per-node runtime shared by all three protocol stacks."""

    __slots__ = ("nid", "pos", "b_max", "engaged", "queues", "gr_order",
                 "pool", "total_q", "routing", "rng", "defer_until",
                 "pending", "csma_cw", "csma_residual", "beacon_sectors",
                 "sess_sink", "q_version", "_sids_cache", "_bls_cache")

    def __init__(self, nid: int, pos: Position, b_max: int, rng,
                 sess_sink: dict):
        self.nid = nid
        self.pos = pos
        self.b_max = b_max
        self.engaged = False
        self.queues: dict[int, deque] = {}
        self.gr_order: deque[int] = deque()
        self.pool: dict[int, int] = {}
        self.total_q = 0
        self.routing = None
        self.rng = rng
        self.defer_until = 0
        self.pending = None           # None | "slot" | "wake"
        self.csma_cw = 0
        self.csma_residual = None
        self.beacon_sectors: deque[int] = deque()
        self.sess_sink = sess_sink    # shared session -> sink map
        self.q_version = 0            # bumps on enqueue/dequeue
        self._sids_cache = (-1, [])
        self._bls_cache = (-1, {})

    def backlog(self, sid: int) -> int:
        q = self.queues.get(sid)
        return len(q) if q else 0

    def backlog_by_sink(self) -> dict[int, int]:
        ver, out = self._bls_cache
        if ver != self.q_version:
            out = {}
            for sid, q in self.queues.items():
                if q:
                    k = self.sess_sink[sid]
                    out[k] = out.get(k, 0) + len(q)
            self._bls_cache = (self.q_version, out)
        return out

    def backlogs_by_session(self) -> dict[int, int]:
        return {sid: len(q) for sid, q in self.queues.items() if q}

    def free_space(self) -> int:
        return self.b_max - self.total_q

    def queued_sids(self) -> list[int]:
        ver, sids = self._sids_cache
        if ver != self.q_version:
            sids = sorted(sid for sid, q in self.queues.items() if q)
            self._sids_cache = (self.q_version, sids)
        return sids

    def enqueue(self, sid: int, pkt) -> None:
        if self.total_q >= self.b_max:
            raise OverflowError(f"buffer full at node {self.nid}")
        q = self.queues.get(sid)
        if q is None:
            q = deque()
            self.queues[sid] = q
        q.append(pkt)
        self.gr_order.append(sid)
        self.total_q += 1
        self.q_version += 1

    def head(self, sid: int):
        return self.queues[sid][0]

    def dequeue(self, sid: int):
        pkt = self.queues[sid].popleft()
        self.total_q -= 1
        self.q_version += 1
        try:
            self.gr_order.remove(sid)
        except ValueError:
            pass
        return pkt

    def gr_head_sid(self) -> int | None:
        """Session of the oldest queued packet (GR-CSMA service order)."""
        while self.gr_order:
            sid = self.gr_order[0]
            q = self.queues.get(sid)
            if q:
                return sid
            self.gr_order.popleft()
        return None
