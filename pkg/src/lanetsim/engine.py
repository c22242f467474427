"""Discrete-event engine: clock, channels, handshakes, exchanges, metrics.

Time is integer microseconds.  The control channel is organized into
sector slots of `cms_per_slot` control mini-slots (CMS); all idle nodes
listen toward sector floor(t / slot) mod n_sectors, so a transmitter
beaming into sector s contends in slots where the schedule faces
opposite(s).  Within a slot the handshake runs CMS by CMS: requests in
the backoff window, accept notifications and the reservation
announcement in the tail.  Data rides a separate channel under
reservations; the engine refuses to commit a reservation that would
conflict with an active one (carrier sensing of sustained emissions is
modeled as reliable), which makes the no-conflicting-data invariant
structural.

Event ordering is deterministic: (time, kind priority, sequence).  All
randomness flows through named substreams of the master seed.
"""
from __future__ import annotations

import heapq
import time as _time
from collections import deque
from dataclasses import dataclass
from hashlib import sha256

from .config import ScenarioConfig
from .core import DataPacket, opposite_sector
from .mac import (MacNode, backoff_slots, greedy_next_hop, select_initiator,
                  select_sector, select_session_eta)
from .reliability import mhc_map
from .routing import INF, EstimationModel, RoutingState
from .rng import child_seed, substream
from .topology import (ConnectivityGraph, assign_blockage, assign_error_probs,
                       build_grid, build_random)

# event kind priorities: lower runs first at equal timestamps
_EV_DATA_END = 0
_EV_SLOT = 1
_EV_WAKE = 2

_POLL_SUPERSLOTS = 16    # re-plan interval for backlogged-but-stalled nodes
_BEACON_ROUNDS = 2       # sector sweeps per advertisement-worthy change


def ceil_div(a: int, b: int) -> int:
    return -(-a // b)


class SlotClock:
    """Sector-slot arithmetic shared by the engine and the tests."""

    def __init__(self, cms_us: int, cms_per_slot: int, n_sectors: int):
        self.cms_us = cms_us
        self.cms_per_slot = cms_per_slot
        self.n_sectors = n_sectors
        self.slot_us = cms_us * cms_per_slot
        self.super_us = self.slot_us * n_sectors

    @classmethod
    def from_config(cls, cfg: ScenarioConfig) -> "SlotClock":
        cms_us = ceil_div(cfg.control_bytes * 8 * 1_000_000, cfg.link_rate_bps)
        return cls(cms_us, cfg.cms_per_slot, cfg.n_sectors)

    def listening_sector(self, t: int) -> int:
        """Sector every idle node faces at time t."""
        return (t // self.slot_us) % self.n_sectors

    def next_aligned(self, after: int, listen_sector: int) -> int:
        """Start of the first slot at or after `after` facing the sector."""
        m = ceil_div(after, self.slot_us)
        m += (listen_sector - m) % self.n_sectors
        return m * self.slot_us


def sample_link_outcome(link, kind: str, rng) -> str:
    """One transmission over a link: blockage draw, then error draw.

    `kind` labels the frame (control or data) for callers that care;
    both kinds face the same link probabilities.  Returns "delivered",
    "lost_blockage", or "lost_error".
    """
    if link.p_b and rng.random() < link.p_b:
        return "lost_blockage"
    if link.p_e and rng.random() < link.p_e:
        return "lost_error"
    return "delivered"


def generate_sessions(cfg: ScenarioConfig, graph: ConnectivityGraph,
                      rng) -> list[dict]:
    """Sources uniform over non-sink nodes, sinks uniform over the sink set."""
    non_sinks = [i for i in range(graph.n_nodes) if not graph.is_sink(i)]
    if not non_sinks:
        raise ValueError("no non-sink nodes to act as sources")
    out = []
    for sid in range(cfg.sessions):
        out.append({
            "sid": sid,
            "source": rng.choice(non_sinks),
            "sink": rng.choice(graph.sinks),
            "packets": cfg.packets_per_session,
        })
    return out


def build_topology(cfg: ScenarioConfig) -> ConnectivityGraph:
    """Construct and channel-stamp the deployment named by the config."""
    if cfg.topology == "file":
        return ConnectivityGraph.load(cfg.graph_file)  # replayed as stored
    if cfg.topology == "grid":
        sinks = None
        if cfg.grid_sinks != "corners+center":
            sinks = [int(x) for x in cfg.grid_sinks.replace(",", " ").split()]
        graph = build_grid(cfg.rows, cfg.cols, cfg.area_side_m, cfg.range_m,
                           sinks=sinks, n_sectors=cfg.n_sectors,
                           capacity_bps=cfg.link_rate_bps)
    else:
        graph = build_random(cfg.n_nodes, cfg.area_side_m, cfg.range_m,
                             cfg.n_sinks, child_seed(cfg.seed, "topo"),
                             n_sectors=cfg.n_sectors,
                             capacity_bps=cfg.link_rate_bps)
    assign_error_probs(graph, cfg.mean_p_e, child_seed(cfg.seed, "pe"))
    assign_blockage(graph, cfg.severe_fraction, cfg.p_b_severe, cfg.p_b_mild,
                    child_seed(cfg.seed, "blockage"))
    return graph


def flood_routing_tables(graph: ConnectivityGraph, states: dict,
                         rounds_cap: int = 0) -> int:
    """Synchronous advertisement rounds until no table moves; returns rounds.

    Each round every node folds in its neighbors' previous-round
    snapshots, which converges level by level outward from the sinks.
    """
    if rounds_cap <= 0:
        rounds_cap = graph.n_nodes + 8
    rounds = 0
    for _ in range(rounds_cap):
        adverts = {i: states[i].advertisement() for i in sorted(states)}
        changed_any = False
        for i in sorted(states):
            st = states[i]
            for j in graph.out_neighbors(i):
                changed, _ = st.update_from_control(adverts[j], {}, now=rounds)
                changed_any = changed_any or changed
        rounds += 1
        if not changed_any:
            break
    return rounds


class TraceRecorder:
    """Hashes (and optionally writes) the run's protocol event stream."""

    def __init__(self, path=None):
        self._hash = sha256()
        self._fh = open(path, "w") if path else None
        self.events = 0

    def emit(self, t: int, node: int, kind: str, detail: str = ""):
        line = f"{t} {node} {kind} {detail}\n"
        self._hash.update(line.encode())
        self.events += 1
        if self._fh:
            self._fh.write(line)

    def close(self) -> str:
        if self._fh:
            self._fh.close()
            self._fh = None
        return self._hash.hexdigest()


@dataclass(slots=True)
class Reservation:
    rid: int
    initiator: int
    acceptor: int
    i_beam: int          # initiator's engaged sector (toward acceptor)
    a_beam: int          # acceptor's engaged sector (toward initiator)
    start: int
    end: int
    fwd_sid: int
    rev_sid: int | None
    res_delivered: bool = False


@dataclass
class RunMetrics:
    protocol: str
    seed: int
    n_nodes: int
    sessions: int
    generated: int
    delivered_total: int
    delivered_per_session: dict
    delivered_bits: int
    warmup_us: int
    traffic_duration_us: int
    normalized_throughput: float
    exchanges_total: int
    duplex_exchanges: int
    duplex_ratio: float
    drops: dict
    in_flight: int
    cc_collisions: int
    handshake_failures: int
    commit_aborts: int
    occupancy_conflicts: int
    stalled: bool
    conservation_ok: bool
    rrs_snapshot: dict
    trace_hash: str
    events: int
    wall_s: float

    def to_json_dict(self) -> dict:
        doc = dict(self.__dict__)
        doc["delivered_per_session"] = {str(k): v for k, v in
                                        self.delivered_per_session.items()}
        doc["rrs_snapshot"] = {
            str(n): {str(k): [g, (None if h == INF else h)]
                     for k, (g, h) in table.items()}
            for n, table in self.rrs_snapshot.items()}
        return doc


def _pair_conflict(links, x: int, x_beam: int, y: int, y_facing: int) -> bool:
    """Does x's emission toward x_beam land in y's receiver facing y_facing?"""
    lk = links.get((x, y))
    return (lk is not None and lk.sector_at_tx == x_beam
            and lk.sector_at_rx == y_facing)


def reservations_conflict(links, a: Reservation, b: Reservation) -> bool:
    """Spatial conflict between two time-overlapping reservations."""
    if a.end <= b.start or b.end <= a.start:
        return False
    ends_a = ((a.initiator, a.i_beam), (a.acceptor, a.a_beam))
    ends_b = ((b.initiator, b.i_beam), (b.acceptor, b.a_beam))
    for x, xb in ends_a:
        for y, yb in ends_b:
            if _pair_conflict(links, x, xb, y, yb) or \
               _pair_conflict(links, y, yb, x, xb):
                return True
    return False


def count_occupancy_conflicts(records: list[Reservation],
                              graph: ConnectivityGraph) -> int:
    """Post-hoc sweep over all committed reservations of a run."""
    conflicts = 0
    active: list[Reservation] = []
    for res in sorted(records, key=lambda r: (r.start, r.rid)):
        active = [r for r in active if r.end > res.start]
        for other in active:
            if reservations_conflict(graph.links, res, other):
                conflicts += 1
        active.append(res)
    return conflicts


class Simulation:
    """One seeded run of one protocol over one deployment."""

    def __init__(self, cfg: ScenarioConfig, graph: ConnectivityGraph | None = None,
                 trace_path=None):
        cfg.validate()
        if cfg.cw + cfg.acn_window + 1 > cfg.cms_per_slot:
            raise ValueError("slot too short for cw + acn_window + RES")
        self.cfg = cfg
        self.graph = graph if graph is not None else build_topology(cfg)
        self.clock = SlotClock.from_config(cfg)
        self.data_us = ceil_div(cfg.data_bytes * 8 * 1_000_000,
                                cfg.link_rate_bps)
        self.ack_us = self.clock.cms_us
        self.exchange_us = self.data_us + self.ack_us
        self.trace = TraceRecorder(trace_path)
        self.now = 0
        self._heap: list = []
        self._seq = 0
        self.slot_intents: dict[int, list] = {}
        self.active_res: dict[int, Reservation] = {}
        self.res_records: list[Reservation] = []
        self._res_seq = 0
        self.last_progress = 0
        self.stalled = False
        self._stall_us = int(cfg.stall_window_s * 1e6)
        # listener*n_sectors+facing -> latest reservation end audible
        # there; stale entries are harmless because queries ignore ends
        # in the past
        self._busy: dict[int, int] = {}
        # same shape, but folded from both ends of every reservation: a
        # node beaming into a reserved domain is a conflict even before
        # the acceptor has transmitted anything
        self._guard: dict[int, int] = {}
        self._plan_cache: dict[int, tuple] = {}
        self._payload_cache: dict[int, tuple] = {}
        self._chan_cache: dict[int, tuple] = {}
        self._pair_cache: dict[tuple[int, int], tuple] = {}
        self._audience: dict[int, list[int]] = {}
        self._ns = cfg.n_sectors
        self._nn = self.graph.n_nodes

        g = self.graph
        self.sessions = generate_sessions(cfg, g, substream(cfg.seed, "sessions"))
        self.sess_sink = {s["sid"]: s["sink"] for s in self.sessions}
        self.source_sessions: dict[int, list[int]] = {}
        for s in self.sessions:
            self.source_sessions.setdefault(s["source"], []).append(s["sid"])
        self._next_seq = {s["sid"]: 0 for s in self.sessions}
        self.pool = {s["sid"]: s["packets"] for s in self.sessions}

        self.nodes = [MacNode(i, g.positions[i], cfg.b_max,
                              substream(cfg.seed, "backoff", i), self.sess_sink)
                      for i in range(g.n_nodes)]
        for n in self.nodes:
            n.csma_cw = cfg.csma_cw_min

        self._link_rng: dict[tuple[int, int], object] = {}
        self._greedy_memo: dict[tuple[int, int], int | None] = {}
        self._build_progress_tables()

        self.warmup_us = 0
        if cfg.protocol == "VL-ROUTE":
            self._init_routing()

        # counters
        self.delivered_per_session = {s["sid"]: 0 for s in self.sessions}
        self.delivered_bits = 0
        self.exchanges_total = 0
        self.duplex_exchanges = 0
        self.drops = {"collision": 0, "retry-limit": 0, "no-route": 0,
                      "buffer-overflow": 0}
        self.cc_collisions = 0
        self.handshake_failures = 0
        self.commit_aborts = 0
        self.events = 0

    # -- setup -------------------------------------------------------

    def _build_progress_tables(self):
        """Static per-link forward progress toward every sink."""
        g = self.graph
        self.prog: dict[tuple[int, int], dict[int, float]] = {}
        for (i, j), lk in g.links.items():
            d_ij = g.link_dist[(i, j)]
            per_sink = {}
            for k in g.sinks:
                d_i = g.sink_dist[i][k]
                d_j = g.sink_dist[j][k]
                if d_j < d_i:
                    per_sink[k] = (d_i - d_j) / d_ij
            if per_sink:
                self.prog[(i, j)] = per_sink
        # candidate lists per (node, sink, sector): [(neighbor, progress)]
        self.cand: list[dict[int, list[list[tuple[int, float]]]]] = []
        for i in range(g.n_nodes):
            per_sink_lists: dict[int, list[list[tuple[int, float]]]] = {}
            for k in g.sinks:
                sectors = [[] for _ in range(g.n_sectors)]
                for s in range(g.n_sectors):
                    for j in g.neighbors_in_sector(i, s):
                        p = self.prog.get((i, j), {}).get(k)
                        if p is not None:
                            sectors[s].append((j, p))
                per_sink_lists[k] = sectors
            self.cand.append(per_sink_lists)

    def _init_routing(self):
        cfg = self.cfg
        g = self.graph
        est = EstimationModel(cfg.estimation_error, cfg.seed)
        states = {}
        for i in range(g.n_nodes):
            static = {}
            for j in g.out_neighbors(i):
                lk = g.links[(i, j)]
                pe = est.perturb(lk.p_e, i, j, "pe")
                pb = est.perturb(lk.p_b, i, j, "pb")
                static[j] = (1.0 - pe) * (1.0 - pb)
            st = RoutingState(i, g.positions[i], g.sinks, g.n_sectors,
                              cfg.cw, cfg.b_max, static)
            states[i] = st
            self.nodes[i].routing = st
        rounds = flood_routing_tables(g, states)
        self.warmup_us = rounds * self.clock.super_us
        self.trace.emit(0, -1, "warmup", f"rounds={rounds}")

    # -- plumbing ----------------------------------------------------

    def _push(self, t: int, prio: int, payload):
        self._seq += 1
        heapq.heappush(self._heap, (t, prio, self._seq, payload))

    def _link_stream(self, i: int, j: int):
        r = self._link_rng.get((i, j))
        if r is None:
            r = substream(self.cfg.seed, "chan", i, j)
            self._link_rng[(i, j)] = r
        return r

    def _chan_ok(self, i: int, j: int, kind: str = "control") -> bool:
        # inlined sample_link_outcome: same draws in the same order
        c = self._chan_cache.get(i * self._nn + j)
        if c is None:
            lk = self.graph.links[(i, j)]
            c = (self._link_stream(i, j).random, lk.p_b, lk.p_e)
            self._chan_cache[i * self._nn + j] = c
        rnd, p_b, p_e = c
        if p_b and rnd() < p_b:
            return False
        if p_e and rnd() < p_e:
            return False
        return True

    def _register_slot(self, t_slot: int, kind: str, nid: int):
        lst = self.slot_intents.get(t_slot)
        if lst is None:
            lst = []
            self.slot_intents[t_slot] = lst
            self._push(t_slot, _EV_SLOT, t_slot)
        lst.append((kind, nid))

    def _greedy(self, i: int, k: int):
        key = (i, k)
        t = self._greedy_memo.get(key, "?")
        if t == "?":
            g = self.graph
            t = greedy_next_hop(g.positions[i], g.positions[k],
                                ((j, g.positions[j])
                                 for j in g.out_neighbors(i)))
            self._greedy_memo[key] = t
        return t

    def _fold_busy(self, into: dict, x: int, xb: int, end: int):
        """Mark every receiver that can hear emitter (x, beam xb) busy."""
        src = x * self._ns + xb
        keys = self._audience.get(src)
        if keys is None:
            links = self.graph.links
            keys = [y * self._ns + links[(x, y)].sector_at_rx
                    for y in self.graph.neighbors_in_sector(x, xb)]
            self._audience[src] = keys
        for key in keys:
            if end > into.get(key, 0):
                into[key] = end

    def _dc_busy_until(self, nid: int, facing: int) -> int:
        """Latest end among active reservations audible to nid's receiver."""
        worst = self._busy.get(nid * self._ns + facing, 0)
        return worst if worst > self.now else 0

    def _commit_conflict(self, i: int, a: int, i_beam: int,
                         a_beam: int) -> bool:
        # x beaming at y while y faces x reads the same from either end,
        # so checking the new pair against the guard map covers both
        # disturbance directions
        now = self.now
        guard = self._guard
        ns = self._ns
        return guard.get(i * ns + i_beam, 0) > now or \
            guard.get(a * ns + a_beam, 0) > now

    def _refill(self, node: MacNode):
        """Top a source's queues up from its remaining-packet pools."""
        sids = self.source_sessions.get(node.nid)
        if not sids:
            return
        for sid in sids:
            while self.pool[sid] > 0 and node.free_space() > 0:
                seq = self._next_seq[sid]
                self._next_seq[sid] = seq + 1
                self.pool[sid] -= 1
                node.enqueue(sid, DataPacket(sid, seq))

    def _drop(self, node: MacNode, sid: int, cause: str, from_queue=True):
        if from_queue:
            node.dequeue(sid)
        self.drops[cause] += 1
        self.last_progress = self.now
        self.trace.emit(self.now, node.nid, "drop", f"s={sid} cause={cause}")
        self._refill(node)

    def _drop_sink_packets(self, node: MacNode, k: int):
        """No-route: shed every queued packet bound for sink k."""
        for sid in node.queued_sids():
            if self.sess_sink[sid] == k:
                while node.backlog(sid):
                    self._drop(node, sid, "no-route")

    def _queue_beacons(self, node: MacNode):
        g = self.graph
        secs = [s for s in range(g.n_sectors)
                if g.neighbors_in_sector(node.nid, s)]
        node.beacon_sectors = deque(secs * _BEACON_ROUNDS)

    # -- attempt planning -------------------------------------------

    def _vl_choose(self, node: MacNode):
        """Best sector and its utility for the next access attempt.

        Pure in the node's queues and routing tables, so results are
        memoized against their version counters.
        """
        state = node.routing
        key = (node.q_version, state.version if state else 0)
        cached = self._plan_cache.get(node.nid)
        if cached is not None and cached[0] == key:
            return cached[1]
        plan = self._vl_choose_eval(node)
        self._plan_cache[node.nid] = (key, plan)
        return plan

    def _vl_choose_eval(self, node: MacNode):
        vl_route = self.cfg.protocol == "VL-ROUTE"
        n_sectors = self.graph.n_sectors
        util = [0.0] * n_sectors
        state = node.routing
        cand_i = self.cand[node.nid]
        gmax_cache: dict[int, float] = {}
        for sid in node.queued_sids():
            k = self.sess_sink[sid]
            sectors = cand_i.get(k)
            if sectors is None:
                continue
            b = node.backlog(sid)
            if vl_route:
                gmax = gmax_cache.get(k)
                if gmax is None:
                    gmax = state.gamma_max(k)
                    gmax_cache[k] = gmax
                if gmax <= 0.0:
                    continue
            for s in range(n_sectors):
                lst = sectors[s]
                if not lst:
                    continue
                acc = 0.0
                if vl_route:
                    obs = state.obs
                    for j, prog in lst:
                        ob = obs.get(j)
                        if ob is None:
                            continue
                        rec = ob.table.get(k)
                        if rec is None or rec[0] <= 0.0:
                            continue
                        acc += prog * (rec[0] / gmax)
                else:
                    for _, prog in lst:
                        acc += prog
                util[s] += b * acc
        idx = select_sector(util)
        if idx is None:
            return None
        return idx, util[idx]

    def _fast_retry(self, node: MacNode, t_slot: int, kind: str):
        """Re-enter the same sector's slot one super-slot later.

        Skips re-planning; the intent is validated on arrival, so a plan
        that changed in the meantime just falls through to a reschedule.
        """
        self._register_slot(t_slot + self.clock.super_us, kind, node.nid)
        node.pending = "slot"

    def _schedule_attempt(self, node: MacNode):
        """Plan the node's next control-channel action, if any."""
        if node.engaged or node.pending is not None:
            return
        clock = self.clock
        not_before = max(self.now + 1, node.defer_until)
        if self.cfg.protocol == "GR-CSMA":
            sid = node.gr_head_sid()
            while sid is not None:
                k = self.sess_sink[sid]
                target = self._greedy(node.nid, k)
                if target is None:
                    self._drop_sink_packets(node, k)
                    sid = node.gr_head_sid()
                    continue
                lk = self.graph.links[(node.nid, target)]
                t = clock.next_aligned(not_before, lk.sector_at_rx)
                self._register_slot(t, "gr", node.nid)
                node.pending = "slot"
                return
            return
        plan = self._vl_choose(node)
        if plan is not None:
            s_star, _ = plan
            t = clock.next_aligned(not_before,
                                   opposite_sector(s_star, clock.n_sectors))
            self._register_slot(t, "art", node.nid)
            node.pending = "slot"
            return
        if node.beacon_sectors:
            s_b = node.beacon_sectors[0]
            t = clock.next_aligned(not_before,
                                   opposite_sector(s_b, clock.n_sectors))
            self._register_slot(t, "beacon", node.nid)
            node.pending = "slot"
            return
        if node.total_q > 0:
            # backlogged but nothing useful to do; poll for table changes
            self._push(self.now + _POLL_SUPERSLOTS * clock.super_us,
                       _EV_WAKE, node.nid)
            node.pending = "wake"

    # -- handshake payloads -----------------------------------------

    def _art_payload(self, node: MacNode) -> dict:
        state = node.routing
        key = (node.q_version, state.version if state else 0)
        cached = self._payload_cache.get(node.nid)
        if cached is not None and cached[0] == key:
            return cached[1]
        payload = {"node": node.nid, "is_art": True, "ver": key,
                   "backlogs": node.backlogs_by_session(),
                   "free": node.free_space(),
                   "adv": state.advertisement() if state else None}
        self._payload_cache[node.nid] = (key, payload)
        return payload

    def _eval_pair(self, rxn: MacNode, payload: dict):
        """Acceptance value of one decodable request at one receiver.

        Depends only on the request snapshot and the receiver's own
        queues and tables, so results are memoized per directed pair
        against both sides' version counters.
        """
        i = payload["node"]
        key = (payload["ver"], rxn.q_version,
               rxn.routing.version if rxn.routing else 0)
        memo = self._pair_cache.get((i, rxn.nid))
        if memo is not None and memo[0] == key:
            return memo[1]
        vl_route = self.cfg.protocol == "VL-ROUTE"
        sess_sink = self.sess_sink
        prog = self.prog
        result = None
        prog_fwd = prog.get((i, rxn.nid))
        if prog_fwd is not None:
            fwd_options = []
            for sid, b_i in payload["backlogs"].items():
                k = sess_sink[sid]
                p = prog_fwd.get(k)
                if p is None:
                    continue
                if vl_route:
                    gmax_i = payload["adv"]["gamma_max"].get(k, 0.0)
                    own = rxn.routing.entries[k].gamma
                    if gmax_i <= 0.0 or own <= 0.0:
                        continue
                    weight = (own / gmax_i) * p
                else:
                    weight = p
                fwd_options.append((sid, weight, b_i, rxn.backlog(sid)))
            q_i, eta_fwd = select_session_eta(fwd_options)
            if q_i is not None:
                q_j, eta_rev = None, 0.0
                if payload["free"] >= 1:
                    prog_rev = prog.get((rxn.nid, i))
                    if prog_rev:
                        rev_options = []
                        for sid in rxn.queued_sids():
                            k = sess_sink[sid]
                            p = prog_rev.get(k)
                            if p is None:
                                continue
                            if vl_route:
                                rec = payload["adv"]["table"].get(k)
                                gmax = rxn.routing.gamma_max(k)
                                if rec is None or rec[0] <= 0.0 \
                                        or gmax <= 0.0:
                                    continue
                                weight = (rec[0] / gmax) * p
                            else:
                                weight = p
                            rev_options.append(
                                (sid, weight, rxn.backlog(sid),
                                 payload["backlogs"].get(sid, 0)))
                        q_j, eta_rev = select_session_eta(rev_options)
                links = self.graph.links
                u = eta_fwd * links[(i, rxn.nid)].capacity_bps \
                    + eta_rev * links[(rxn.nid, i)].capacity_bps
                result = (q_i, q_j, u)
        self._pair_cache[(i, rxn.nid)] = (key, result)
        return result

    def _evaluate_arts(self, rxn: MacNode, payloads: list[dict]):
        """Acceptor selection among decodable requests; None to stay silent."""
        candidates = []
        details = {}
        for payload in payloads:
            r = self._eval_pair(rxn, payload)
            if r is None:
                continue
            i = payload["node"]
            candidates.append((i, r[2]))
            details[i] = r
        chosen = select_initiator(candidates)
        if chosen is None:
            return None
        q_i, q_j, u = details[chosen]
        return chosen, q_i, q_j, u

    # -- slot resolution --------------------------------------------

    def _resolve_slot(self, t_slot: int):
        intents = self.slot_intents.pop(t_slot, None)
        if not intents:
            return
        if self.cfg.protocol == "GR-CSMA":
            self._resolve_slot_gr(t_slot, intents)
        else:
            self._resolve_slot_vl(t_slot, intents)

    def _resolve_slot_vl(self, t_slot: int, intents):
        cfg = self.cfg
        clock = self.clock
        g = clock.listening_sector(t_slot)
        beam = opposite_sector(g, clock.n_sectors)
        graph = self.graph
        nodes = self.nodes
        vl_route = cfg.protocol == "VL-ROUTE"

        txs = []       # (cms, nid, payload)
        tx_ids = set()
        beacon_txs = []
        for kind, nid in intents:
            node = nodes[nid]
            node.pending = None
            if node.engaged:
                continue  # will re-plan when the exchange ends
            if node.defer_until > t_slot:
                self._schedule_attempt(node)
                continue
            if kind == "art":
                plan = self._vl_choose(node)
                if plan is None or plan[0] != beam:
                    self._schedule_attempt(node)
                    continue
                busy = self._dc_busy_until(nid, beam)
                if busy:
                    node.defer_until = busy
                    self._schedule_attempt(node)
                    continue
                cms = backoff_slots(plan[1], cfg.cw, node.rng,
                                    cfg.backoff_utility_scale)
                txs.append((cms, nid, self._art_payload(node)))
                tx_ids.add(nid)
            else:  # beacon
                if not node.beacon_sectors or node.beacon_sectors[0] != beam:
                    self._schedule_attempt(node)
                    continue
                node.beacon_sectors.popleft()
                cms = backoff_slots(0.0, cfg.cw, node.rng,
                                    cfg.backoff_utility_scale)
                payload = {"node": nid, "is_art": False,
                           "adv": node.routing.advertisement()
                           if node.routing else None}
                txs.append((cms, nid, payload))
                tx_ids.add(nid)
                beacon_txs.append(nid)

        if not txs:
            self._check_stall()
            return

        # ART window: deliver every transmission to facing idle listeners
        txs.sort()
        arrivals: dict[int, dict[int, list]] = {}
        nis = graph.neighbors_in_sector
        chan = self._chan_ok
        setd = arrivals.setdefault
        for cms, nid, payload in txs:
            for rx in nis(nid, beam):
                rxn = nodes[rx]
                if rxn.engaged or rx in tx_ids:
                    continue
                if chan(nid, rx):
                    setd(rx, {}).setdefault(cms, []).append(payload)

        heard: dict[int, list] = {}
        for rx in sorted(arrivals):
            for cms in sorted(arrivals[rx]):
                lst = arrivals[rx][cms]
                if len(lst) > 1:
                    self.cc_collisions += len(lst)
                else:
                    heard.setdefault(rx, []).append(lst[0])

        awaiting = {nid for _, nid, p in txs if p["is_art"]}
        pending_acn = []  # [acn_cms, rx, i_star, q_i, q_j, cancelled]
        for rx in sorted(heard):
            rxn = nodes[rx]
            payloads = heard[rx]
            if vl_route:
                moved = False
                for p in payloads:
                    adv = p.get("adv")
                    if adv is not None and rxn.routing.observe(adv,
                                                              now=t_slot):
                        moved = True
                if moved:
                    _, worthy = rxn.routing.recompute(rxn.backlog_by_sink())
                    if worthy:
                        self._queue_beacons(rxn)
                        self._schedule_attempt(rxn)
            arts = [p for p in payloads if p["is_art"]]
            if not arts or rxn.free_space() < 1:
                continue
            if self._dc_busy_until(rx, g):
                continue  # our data reception would be corrupted; stay out
            sel = self._evaluate_arts(rxn, arts)
            if sel is None:
                continue
            i_star, q_i, q_j, u = sel
            acn_cms = cfg.cw + backoff_slots(u / cfg.link_rate_bps,
                                             cfg.acn_window, rxn.rng,
                                             cfg.backoff_utility_scale)
            pending_acn.append([acn_cms, rx, i_star, q_i, q_j, False])

        # ACN / RES tail, one CMS at a time
        res_due: dict[int, list] = {}
        for cms in range(cfg.cw, cfg.cms_per_slot) if pending_acn else ():
            wire = []  # (tx, kind, record)
            for rec in pending_acn:
                if rec[0] == cms and not rec[5]:
                    wire.append((rec[1], "acn", rec))
            for rec in res_due.pop(cms, []):
                wire.append((rec[0], "res", rec))
            if not wire:
                continue
            hear: dict[int, list] = {}
            for tx, kind, rec in sorted(wire, key=lambda w: (w[0], w[1])):
                if kind == "acn":
                    _, rx, i_star, q_i, q_j, _ = rec
                    # reaches initiators whose receive sector covers rx;
                    # other acceptors beam the same way and cannot hear it
                    listeners = set()
                    for i2 in awaiting:
                        if graph.link(i2, rx) is not None and \
                                graph.links[(i2, rx)].sector_at_tx == beam:
                            listeners.add(i2)
                    for y in listeners:
                        if self._chan_ok(rx, y):
                            hear.setdefault(y, []).append((rx, kind, rec))
                else:  # res
                    i_star, rx, q_i, q_j = rec
                    committed = self._try_commit(t_slot, cms, i_star, rx,
                                                 beam, g, q_i, q_j)
                    if committed is None:
                        continue
                    listeners = {rx}
                    for other in pending_acn:
                        rx2 = other[1]
                        # an acceptor transmitting its own ACN this CMS
                        # cannot simultaneously receive
                        if rx2 != rx and not other[5] and other[0] != cms:
                            lk = graph.link(rx2, i_star)
                            if lk is not None and lk.sector_at_tx == g:
                                listeners.add(rx2)
                    for y in listeners:
                        if self._chan_ok(i_star, y):
                            hear.setdefault(y, []).append((i_star, "res",
                                                           (rec, committed)))
                    # idle bystanders in the beam defer until the exchange ends
                    for y in graph.neighbors_in_sector(i_star, beam):
                        yn = nodes[y]
                        if not yn.engaged and y not in tx_ids and \
                                committed.end > yn.defer_until:
                            yn.defer_until = committed.end
            for y in sorted(hear):
                msgs = hear[y]
                if len(msgs) > 1:
                    self.cc_collisions += len(msgs)
                    continue
                tx, kind, rec = msgs[0]
                yn = nodes[y]
                if kind == "acn":
                    _, rx, i_star, q_i, q_j, _ = rec
                    if y == i_star and y in awaiting:
                        awaiting.discard(y)
                        nxt = cms + 1
                        if nxt < cfg.cms_per_slot:
                            res_due.setdefault(nxt, []).append(
                                (i_star, rx, q_i, q_j))
                        else:
                            # no room left for RES; both sides time out
                            self.handshake_failures += 1
                            self._fast_retry(yn, t_slot, "art")
                    elif y in awaiting:
                        # overheard a foreign ACN: lost the contention
                        awaiting.discard(y)
                        self.handshake_failures += 1
                        self._fast_retry(yn, t_slot, "art")
                    # else: a late ACN to an already-committed initiator,
                    # which is busy transmitting its RES and ignores it
                else:
                    inner, committed = rec
                    if y == inner[1]:
                        committed.res_delivered = True
                        self._fold_busy(self._busy, committed.acceptor,
                                        committed.a_beam, committed.end)
                    else:
                        # foreign acceptor: domain is reserved, stand down
                        for other in pending_acn:
                            if other[1] == y:
                                other[5] = True
                        if committed.end > yn.defer_until:
                            yn.defer_until = committed.end

        for nid in sorted(awaiting):
            self.handshake_failures += 1
            self._fast_retry(nodes[nid], t_slot, "art")
        for nid in beacon_txs:
            node = nodes[nid]
            if not node.engaged and node.pending is None:
                self._schedule_attempt(node)
        self._check_stall()

    def _try_commit(self, t_slot: int, cms: int, i_star: int, rx: int,
                    beam: int, g: int, q_i: int, q_j):
        """Reservation gate: refuse anything conflicting with active ones."""
        node_i = self.nodes[i_star]
        node_a = self.nodes[rx]
        if self._commit_conflict(i_star, rx, beam, g):
            self.commit_aborts += 1
            busy = self._dc_busy_until(i_star, beam)
            if busy > node_i.defer_until:
                node_i.defer_until = busy
            self._schedule_attempt(node_i)
            return None
        start = t_slot + (cms + 1) * self.clock.cms_us
        self._res_seq += 1
        res = Reservation(self._res_seq, i_star, rx, beam, g, start,
                          start + self.exchange_us, q_i, q_j)
        self.active_res[res.rid] = res
        self.res_records.append(res)
        self._fold_busy(self._busy, i_star, beam, res.end)
        self._fold_busy(self._guard, i_star, beam, res.end)
        self._fold_busy(self._guard, rx, g, res.end)
        node_i.engaged = True
        node_a.engaged = True
        self._push(res.end, _EV_DATA_END, res)
        self.exchanges_total += 1
        if q_j is not None:
            self.duplex_exchanges += 1
        self.last_progress = t_slot
        self.trace.emit(t_slot, i_star, "commit",
                        f"with={rx} fwd={q_i} rev={q_j} end={res.end}")
        return res

    # -- GR-CSMA slot ------------------------------------------------

    def _resolve_slot_gr(self, t_slot: int, intents):
        cfg = self.cfg
        clock = self.clock
        g = clock.listening_sector(t_slot)
        beam = opposite_sector(g, clock.n_sectors)
        graph = self.graph
        nodes = self.nodes
        req_window = cfg.cms_per_slot - 2

        txs = []  # (cms, nid, target, sid)
        tx_ids = set()
        for kind, nid in intents:
            node = nodes[nid]
            node.pending = None
            if node.engaged:
                continue
            if node.defer_until > t_slot:
                self._schedule_attempt(node)
                continue
            sid = node.gr_head_sid()
            if sid is None:
                continue
            k = self.sess_sink[sid]
            target = self._greedy(nid, k)
            if target is None:
                self._drop_sink_packets(node, k)
                self._schedule_attempt(node)
                continue
            lk = graph.links[(nid, target)]
            if lk.sector_at_rx != g:
                self._schedule_attempt(node)  # head changed; realign
                continue
            busy = self._dc_busy_until(nid, beam)
            if busy:
                node.defer_until = busy
                self._schedule_attempt(node)
                continue
            if node.csma_residual is None:
                node.csma_residual = node.rng.randrange(node.csma_cw)
            if node.csma_residual >= req_window:
                node.csma_residual -= req_window
                self._fast_retry(node, t_slot, "gr")
                continue
            cms = node.csma_residual
            node.csma_residual = None
            txs.append((cms, nid, target, sid))
            tx_ids.add(nid)

        if not txs:
            self._check_stall()
            return

        txs.sort()
        arrivals: dict[int, dict[int, list]] = {}
        nis = graph.neighbors_in_sector
        chan = self._chan_ok
        for cms, nid, target, sid in txs:
            for rx in nis(nid, beam):
                rxn = nodes[rx]
                if rxn.engaged or rx in tx_ids:
                    continue
                if chan(nid, rx):
                    arrivals.setdefault(rx, {}).setdefault(cms, []) \
                            .append((nid, target, sid))

        granted = set()
        for cms, nid, target, sid in txs:
            got = arrivals.get(target, {}).get(cms, [])
            if len(got) != 1 or got[0][0] != nid:
                if len(got) > 1:
                    self.cc_collisions += len(got)
                continue
            rxn = nodes[target]
            if rxn.free_space() < 1 or self._dc_busy_until(target, g):
                continue
            node = nodes[nid]
            # full duplex when the receiver holds traffic routed back at us
            rev_sid = None
            if node.free_space() >= 1:
                for sid2 in rxn.queued_sids():
                    k2 = self.sess_sink[sid2]
                    if self._greedy(target, k2) == nid:
                        rev_sid = sid2
                        break
            if self._commit_conflict(nid, target, beam, g):
                self.commit_aborts += 1
                continue
            if not self._chan_ok(target, nid):
                continue  # grant lost; the sender will back off
            start = t_slot + (cms + 2) * clock.cms_us
            self._res_seq += 1
            res = Reservation(self._res_seq, nid, target, beam, g, start,
                              start + self.exchange_us, sid, rev_sid, True)
            self.active_res[res.rid] = res
            self.res_records.append(res)
            self._fold_busy(self._busy, nid, beam, res.end)
            self._fold_busy(self._busy, target, g, res.end)
            self._fold_busy(self._guard, nid, beam, res.end)
            self._fold_busy(self._guard, target, g, res.end)
            node.engaged = True
            rxn.engaged = True
            node.csma_cw = cfg.csma_cw_min
            self._push(res.end, _EV_DATA_END, res)
            self.exchanges_total += 1
            if rev_sid is not None:
                self.duplex_exchanges += 1
            granted.add(nid)
            self.last_progress = t_slot
            self.trace.emit(t_slot, nid, "commit",
                            f"with={target} fwd={sid} rev={rev_sid} "
                            f"end={res.end}")

        for cms, nid, target, sid in txs:
            if nid in granted:
                continue
            node = nodes[nid]
            self.handshake_failures += 1
            dropped = False
            q = node.queues.get(sid)
            if q:
                pkt = q[0]
                pkt.h_attempts += 1
                if pkt.h_attempts > cfg.retry_limit:
                    self._drop(node, sid, "collision")
                    node.csma_cw = cfg.csma_cw_min
                    dropped = True
                else:
                    node.csma_cw = min(node.csma_cw * 2, cfg.csma_cw_max)
            if dropped:
                self._schedule_attempt(node)  # head changed; replan
            else:
                self._fast_retry(node, t_slot, "gr")
        self._check_stall()

    # -- data phase --------------------------------------------------

    def _transfer(self, res: Reservation, src: MacNode, dst: MacNode,
                  sid: int, data_link, ack_link) -> None:
        pkt = src.queues[sid][0]
        ok = (res.res_delivered
              and self._chan_ok(data_link[0], data_link[1], "data")
              and self._chan_ok(ack_link[0], ack_link[1]))
        if ok:
            src.dequeue(sid)
            self.last_progress = self.now
            if dst.nid == self.sess_sink[sid]:
                self.delivered_per_session[sid] += 1
                self.delivered_bits += self.cfg.data_bytes * 8
                self.trace.emit(self.now, dst.nid, "deliver",
                                f"s={sid} seq={pkt.seq}")
            elif dst.free_space() >= 1:
                pkt.attempts = 0
                pkt.h_attempts = 0
                dst.enqueue(sid, pkt)
                self.trace.emit(self.now, dst.nid, "move",
                                f"s={sid} seq={pkt.seq} from={src.nid}")
            else:
                self.drops["buffer-overflow"] += 1
                self.trace.emit(self.now, dst.nid, "drop",
                                f"s={sid} cause=buffer-overflow")
            self._refill(src)
        else:
            pkt.attempts += 1
            self.trace.emit(self.now, src.nid, "data_fail",
                            f"s={sid} seq={pkt.seq} n={pkt.attempts}")
            if pkt.attempts > self.cfg.retry_limit:
                self._drop(src, sid, "retry-limit")

    def _data_end(self, res: Reservation):
        self.active_res.pop(res.rid, None)
        node_i = self.nodes[res.initiator]
        node_a = self.nodes[res.acceptor]
        self._transfer(res, node_i, node_a, res.fwd_sid,
                       (res.initiator, res.acceptor),
                       (res.acceptor, res.initiator))
        if res.rev_sid is not None and res.res_delivered:
            self._transfer(res, node_a, node_i, res.rev_sid,
                           (res.acceptor, res.initiator),
                           (res.initiator, res.acceptor))
        if self.cfg.protocol == "VL-ROUTE":
            for n in (node_i, node_a):
                _, worthy = n.routing.recompute(n.backlog_by_sink())
                if worthy:
                    self._queue_beacons(n)
        node_i.engaged = False
        node_a.engaged = False
        self._schedule_attempt(node_i)
        self._schedule_attempt(node_a)

    # -- run loop ----------------------------------------------------

    def _check_stall(self):
        if not self.active_res and \
                self.now - self.last_progress > self._stall_us:
            self.stalled = True

    def run(self) -> RunMetrics:
        wall0 = _time.perf_counter()
        cfg = self.cfg
        traffic_start = self.warmup_us
        self.now = traffic_start
        self.last_progress = traffic_start
        for s in self.sessions:
            self._refill(self.nodes[s["source"]])
        for node in self.nodes:
            if node.total_q:
                self._schedule_attempt(node)
        cap = traffic_start + int(cfg.duration_cap_s * 1e6)
        heap = self._heap
        while heap and not self.stalled:
            t, prio, _, payload = heapq.heappop(heap)
            if t > cap:
                break
            self.now = t
            self.events += 1
            if prio == _EV_DATA_END:
                self._data_end(payload)
            elif prio == _EV_SLOT:
                self._resolve_slot(payload)
            else:  # wake
                node = self.nodes[payload]
                if node.pending == "wake":
                    node.pending = None
                    self._schedule_attempt(node)
                self._check_stall()
        end = max(self.now, traffic_start)
        return self._finalize(traffic_start, end, wall0)

    def _finalize(self, traffic_start: int, end: int, wall0) -> RunMetrics:
        cfg = self.cfg
        graph = self.graph
        # classify leftovers by true reachability from the current holder
        reach = {k: mhc_map(graph, k) for k in graph.sinks}
        in_flight = 0
        for node in self.nodes:
            for sid in node.queued_sids():
                k = self.sess_sink[sid]
                n = node.backlog(sid)
                if reach[k][node.nid] == INF:
                    self.drops["no-route"] += n
                else:
                    in_flight += n
        for s in self.sessions:
            left = self.pool[s["sid"]]
            if not left:
                continue
            if reach[s["sink"]][s["source"]] == INF:
                self.drops["no-route"] += left
            else:
                in_flight += left
        generated = sum(s["packets"] for s in self.sessions)
        delivered = sum(self.delivered_per_session.values())
        conservation_ok = (generated ==
                          delivered + sum(self.drops.values()) + in_flight)
        duration = max(end - traffic_start, self.clock.super_us)
        thr = self.delivered_bits / (cfg.link_rate_bps * duration / 1e6)
        duplex_ratio = (self.duplex_exchanges / self.exchanges_total
                        if self.exchanges_total else 0.0)
        snapshot = {}
        if cfg.protocol == "VL-ROUTE":
            snapshot = {n.nid: n.routing.snapshot() for n in self.nodes}
        occupancy = count_occupancy_conflicts(self.res_records, graph)
        self.trace.emit(end, -1, "end",
                        f"delivered={delivered} drops={sum(self.drops.values())}")
        return RunMetrics(
            protocol=cfg.protocol,
            seed=cfg.seed,
            n_nodes=graph.n_nodes,
            sessions=cfg.sessions,
            generated=generated,
            delivered_total=delivered,
            delivered_per_session=dict(self.delivered_per_session),
            delivered_bits=self.delivered_bits,
            warmup_us=self.warmup_us,
            traffic_duration_us=end - traffic_start,
            normalized_throughput=thr,
            exchanges_total=self.exchanges_total,
            duplex_exchanges=self.duplex_exchanges,
            duplex_ratio=duplex_ratio,
            drops=dict(self.drops),
            in_flight=in_flight,
            cc_collisions=self.cc_collisions,
            handshake_failures=self.handshake_failures,
            commit_aborts=self.commit_aborts,
            occupancy_conflicts=occupancy,
            stalled=self.stalled,
            conservation_ok=conservation_ok,
            rrs_snapshot=snapshot,
            trace_hash=self.trace.close(),
            events=self.events,
            wall_s=_time.perf_counter() - wall0,
        )


def run(cfg: ScenarioConfig, graph: ConnectivityGraph | None = None,
        trace_path=None) -> RunMetrics:
    """Build and execute one run; the module-level entry point."""
    return Simulation(cfg, graph=graph, trace_path=trace_path).run()
