"""Per-node distributed routing state: RRS / MHC tables.

Each node keeps, per sink, its route reliability score (RRS, the
estimated probability that a packet handed to this node reaches the
sink) and minimum hop count (MHC), both learned purely from overheard
neighbor advertisements.  Sinks advertise themselves with RRS 1 and MHC
0, so first-hop seeding falls out of the general update rule.

The recomputation deliberately mirrors the fixed-point oracle in
reliability.py down to iteration order (neighbors in ascending id within
each sector) so that, on a static graph with zero estimation error, the
flooded state matches the oracle bit-for-bit.

Folding an advertisement (observe) is separated from re-deriving the
table (recompute) so a batch of overheard advertisements costs one
recomputation; `version` increments on every visible change, letting
callers cache anything derived from the table.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

from .core import Position, distance, sector_of
from .reliability import access_prob
from .rng import substream

INF = math.inf


def compute_beta(backlog: int, b_max: int) -> float:
    """Buffer-occupancy discount (b_max - b) / b_max."""
    if b_max < 1:
        raise ValueError("b_max must be >= 1")
    if not 0 <= backlog <= b_max:
        raise ValueError("backlog outside [0, b_max]")
    return (b_max - backlog) / b_max


class EstimationModel:
    """Frozen per-link relative noise on channel probability estimates.

    One draw per (link direction, quantity, run): p_hat = clamp(p * (1 +
    delta), 0, 1) with delta uniform on [-eps, +eps].  eps = 0 returns
    the true value untouched so exactness checks stay exact.
    """

    def __init__(self, relative_error: float, master_seed: int):
        if not 0.0 <= relative_error < 1.0:
            raise ValueError("relative_error must lie in [0, 1)")
        self.eps = relative_error
        self.master = master_seed

    def perturb(self, true_p: float, tx: int, rx: int, tag: str) -> float:
        if self.eps == 0.0:
            return true_p
        delta = substream(self.master, "est", tag, tx, rx).uniform(-self.eps,
                                                                   self.eps)
        return min(1.0, max(0.0, true_p * (1.0 + delta)))


@dataclass(slots=True)
class SinkEntry:
    gamma: float = 0.0
    mhc: float = INF
    sink_pos: Position | None = None
    last_beta: float | None = None


@dataclass(slots=True)
class NeighborObservation:
    """What a node has heard from one neighbor."""
    neighbor: int
    position: Position
    sector: int          # sector of the neighbor as seen from the owner
    reverse_sector: int  # sector of the owner as seen from the neighbor
    table: dict = field(default_factory=dict)   # sink -> (gamma, mhc, pos)
    sector_counts: tuple = ()
    p_link: float = 0.0  # owner's estimated hop success prob to this neighbor
    last_heard: int = 0


class RoutingState:
    """RRS/MHC bookkeeping for one node.

    `link_static` maps out-neighbor -> (1 - p_e_hat) * (1 - p_b_hat); the
    access factor is folded in per advertisement because it depends on
    the neighbor's advertised contender count.
    """

    def __init__(self, node_id: int, position: Position, sinks, n_sectors: int,
                 cw: int, b_max: int, link_static: dict[int, float]):
        self.node_id = node_id
        self.position = position
        self.sinks = sorted(sinks)
        self.n_sectors = n_sectors
        self.cw = cw
        self.b_max = b_max
        self.link_static = link_static
        self.version = 0
        self.obs: dict[int, NeighborObservation] = {}
        # ascending-id views kept in lockstep with obs for cheap iteration
        self.obs_by_sector: list[list] = [[] for _ in range(n_sectors)]
        self._fwd: dict[int, list] = {}   # sink -> [(id, obs)] forward only
        self.entries: dict[int, SinkEntry] = {}
        for k in self.sinks:
            if k == node_id:
                self.entries[k] = SinkEntry(1.0, 0, position)
            else:
                self.entries[k] = SinkEntry()
        self._dist_to_sink: dict[int, float] = {}
        self._adv_cache = None
        self._gmax_cache: dict[int, float] = {}
        # sinks whose stored observations moved since the last recompute
        self._dirty: set[int] = set()

    # -- advertisement consumption -----------------------------------

    def observe(self, advert: dict, now: int = 0) -> bool:
        """Fold one overheard advertisement in without recomputing.

        Returns True when anything the table derivation depends on
        actually moved, so callers can batch several observations and
        recompute once.
        """
        j = advert["node"]
        if j == self.node_id:
            raise ValueError("node cannot observe itself")
        ob = self.obs.get(j)
        fresh = ob is None
        if fresh:
            pos = advert["position"]
            sec = sector_of(self.position, pos, self.n_sectors)
            rsec = sector_of(pos, self.position, self.n_sectors)
            ob = NeighborObservation(j, pos, sec, rsec)
            self.obs[j] = ob
            lst = self.obs_by_sector[sec]
            lst.append((j, ob))
            lst.sort(key=lambda t: t[0])
            self._index_forward(ob)
        tbl = advert["table"]
        counts = advert["sector_counts"]
        ob.last_heard = now
        if not fresh and ob.table is tbl and ob.sector_counts is counts:
            # an unchanged sender re-serves the cached advert object
            return False
        if fresh:
            self._dirty.update(tbl)
        else:
            old = ob.table
            if old == tbl:
                if ob.sector_counts == counts:
                    ob.table = tbl
                    ob.sector_counts = counts
                    return False
                self._dirty.update(self.sinks)
            else:
                for k in old.keys() | tbl.keys():
                    if old.get(k) != tbl.get(k):
                        self._dirty.add(k)
                if ob.sector_counts != counts:
                    self._dirty.update(self.sinks)
        ob.table = tbl
        ob.sector_counts = counts
        static = self.link_static.get(j)
        if static is not None and counts:
            m = max(1, counts[ob.reverse_sector])
            ob.p_link = static * access_prob(self.cw, m)
        # adopt sink positions carried in the advertisement
        for k, rec in tbl.items():
            entry = self.entries.get(k)
            if entry is not None and entry.sink_pos is None \
                    and rec[2] is not None:
                entry.sink_pos = rec[2]
                self._reindex_sink(k)
        self.version += 1
        self._adv_cache = None
        self._gmax_cache.clear()
        return True

    def update_from_control(self, advert: dict, backlogs, now: int = 0):
        """Observe plus immediate recompute; returns (changed, worthy)."""
        if not self.observe(advert, now):
            return False, False
        return self.recompute(backlogs)

    def _index_forward(self, ob: NeighborObservation) -> None:
        """Slot one observation into the per-sink forward-progress lists."""
        for k in self.sinks:
            if k == self.node_id:
                continue
            entry = self.entries[k]
            if entry.sink_pos is None:
                continue
            if distance(ob.position, entry.sink_pos) < self._dist(k):
                lst = self._fwd.setdefault(k, [])
                lst.append((ob.neighbor, ob))
                lst.sort(key=lambda t: t[0])

    def _reindex_sink(self, k: int) -> None:
        """Rebuild the forward list for a sink whose position just arrived."""
        self._dirty.add(k)
        self._dist_to_sink.pop(k, None)
        entry = self.entries[k]
        lst = []
        for sec in self.obs_by_sector:
            for j, ob in sec:
                if distance(ob.position, entry.sink_pos) < self._dist(k):
                    lst.append((j, ob))
        lst.sort(key=lambda t: t[0])
        self._fwd[k] = lst

    # -- recomputation -----------------------------------------------

    def _dist(self, k: int) -> float:
        d = self._dist_to_sink.get(k)
        if d is None:
            d = distance(self.position, self.entries[k].sink_pos)
            self._dist_to_sink[k] = d
        return d

    def recompute(self, backlogs):
        """Re-derive (RRS, MHC) for every sink from stored observations.

        Sinks with no dirty observations recompute to the same values,
        so they are skipped unless the backlog penalty moved.
        """
        changed = False
        worthy = False
        dirty = self._dirty
        for k in self.sinks:
            if k == self.node_id:
                continue
            entry = self.entries[k]
            if entry.sink_pos is None:
                continue  # nothing heard about this sink yet
            if k not in dirty:
                if entry.mhc == INF:
                    continue
                beta = compute_beta(backlogs.get(k, 0), self.b_max)
                if beta == entry.last_beta:
                    continue
            else:
                beta = compute_beta(backlogs.get(k, 0), self.b_max)
            h_new = INF
            for j, ob in self._fwd.get(k, ()):
                rec = ob.table.get(k)
                if rec is not None and rec[1] < h_new:
                    h_new = rec[1]
            if h_new != INF:
                h_new += 1
            if h_new == INF:
                g_new = 0.0
                entry.last_beta = None
            else:
                best = 0.0
                for sec in self.obs_by_sector:
                    miss = 1.0
                    for j, ob in sec:
                        rec = ob.table.get(k)
                        if rec is not None and rec[1] < h_new:
                            miss *= 1.0 - ob.p_link * rec[0]
                    val = 1.0 - miss
                    if val > best:
                        best = val
                g_new = beta * best
                entry.last_beta = beta
            if g_new != entry.gamma or h_new != entry.mhc:
                changed = True
                if h_new != entry.mhc or (g_new == 0.0) != (entry.gamma == 0.0):
                    worthy = True
                entry.gamma = g_new
                entry.mhc = h_new
        dirty.clear()
        if changed:
            self.version += 1
            self._adv_cache = None
        return changed, worthy

    # -- outbound ----------------------------------------------------

    def advertisement(self) -> dict:
        """Snapshot other nodes may fold in via observe/update_from_control."""
        adv = self._adv_cache
        if adv is None:
            adv = {
                "node": self.node_id,
                "position": self.position,
                "table": {k: (e.gamma, e.mhc, e.sink_pos)
                          for k, e in self.entries.items()},
                "sector_counts": tuple(len(s) for s in self.obs_by_sector),
                "gamma_max": {k: self.gamma_max(k) for k in self.sinks},
            }
            self._adv_cache = adv
        return adv

    def gamma_max(self, k: int) -> float:
        """Best RRS toward k among observed neighbors (0 if none)."""
        best = self._gmax_cache.get(k)
        if best is None:
            best = 0.0
            for ob in self.obs.values():
                rec = ob.table.get(k)
                if rec is not None and rec[0] > best:
                    best = rec[0]
            self._gmax_cache[k] = best
        return best

    def snapshot(self) -> dict:
        """(RRS, MHC) per sink, for export and oracle comparison."""
        return {k: (e.gamma, e.mhc) for k, e in self.entries.items()}
