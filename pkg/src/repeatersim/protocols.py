"""Barrett-Kok link generation, entanglement swapping and chain schedulers.

Attempt timeline for a link of length ``l`` whose nodes start at ``s``
(``h`` is the travel time over ``l/2``):

    s        round-1 emission
    s + h    round-1 photons at the BSM
    s + 2h   round-1 result at the nodes, round-2 emission (qubit-photon inception)
    s + 3h   round-2 photons at the BSM, heralding draws
    s + 4h   round-2 result at the nodes
    s + 6h   nodes have exchanged the final result; next attempt may begin

A memory whose inception is older than ``tau_mem`` when its photon reaches
the BSM cannot herald, which gives the single-link cutoff ``L < 2 v tau``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Dict, List, Optional, Tuple

import numpy as np

from .analytics import p_single, sample_geometric
from .core import (
    ChainTopology,
    EntanglementRecord,
    HardwareParams,
    SimTime,
    gamma_per_km,
    km_to_ticks,
    min_expiry,
)
from .engine import Engine, Event, Kind, stream_rng

SYNCHRONOUS = "synchronous"
INDEPENDENT = "independent"
PROTOCOLS = (SYNCHRONOUS, INDEPENDENT)


class LinkState(Enum):
    IDLE = "idle"
    AWAITING_START = "awaiting_start"
    PHOTONS_IN_FLIGHT = "photons_in_flight"
    AWAITING_SECOND_ROUND = "awaiting_second_round"
    DONE = "done"


@dataclass(frozen=True)
class Timing:
    """Tick durations derived once from the chain geometry."""

    half_link: SimTime  # l/2 over v
    attempt: SimTime  # 3 l / v, one Barrett-Kok attempt
    stage: SimTime  # L/(2v), one swap stage
    start_leg: SimTime  # C-node start message to the farthest node
    sync_period: SimTime  # 3 l / v + L / v
    notify: Tuple[SimTime, ...]  # per link, closer endpoint -> C-node
    start_offset: Tuple[SimTime, ...]  # per link, C-node -> farther endpoint

    @classmethod
    def for_chain(cls, chain: ChainTopology, v_km_per_s: float) -> "Timing":
        ell = chain.link_length_km
        half = km_to_ticks(ell / 2.0, v_km_per_s)
        hop = 2 * half
        notify = tuple(chain.link_notify_hops(i) * hop for i in range(chain.num_links))
        start_offset = tuple(
            max(chain.hops_to_c_node(a) for a in chain.link_nodes(i)) * hop
            for i in range(chain.num_links)
        )
        start_leg = chain.max_hops_to_c_node() * hop
        period = km_to_ticks(3.0 * ell + chain.total_length_km, v_km_per_s)
        # tick rounding must never let a status message land after the round ends
        period = max(period, start_leg + 6 * half + max(notify))
        return cls(
            half_link=half,
            attempt=6 * half,
            stage=km_to_ticks(chain.total_length_km / 2.0, v_km_per_s),
            start_leg=start_leg,
            sync_period=period,
            notify=notify,
            start_offset=start_offset,
        )


@dataclass(frozen=True)
class SwapTree:
    """Swap nodes grouped by stage; stage ``j`` runs after stage ``j - 1``."""

    num_repeaters: int
    stages: Tuple[Tuple[int, ...], ...]

    @property
    def num_stages(self) -> int:
        return len(self.stages)

    @property
    def node_stage(self) -> Dict[int, int]:
        return {node: j for j, nodes in enumerate(self.stages) for node in nodes}


def build_swap_tree(r: int) -> SwapTree:
    """Pair adjacent segments left to right; an odd rightmost segment gets a bye."""
    if r < 0:
        raise ValueError(f"r must be >= 0, got {r}")
    segments = [(i, i + 1) for i in range(r + 1)]
    stages = []
    while len(segments) > 1:
        nodes = []
        merged = []
        for k in range(0, len(segments) - 1, 2):
            left, right = segments[k], segments[k + 1]
            nodes.append(left[1])
            merged.append((left[0], right[1]))
        if len(segments) % 2:
            merged.append(segments[-1])
        stages.append(tuple(nodes))
        segments = merged
    return SwapTree(r, tuple(stages))


def swap(
    left: EntanglementRecord,
    right: EntanglementRecord,
    at_node: int,
    rng: np.random.Generator,
    e_s: float,
    now: SimTime,
) -> Optional[EntanglementRecord]:
    """Join two records sharing ``at_node``; ``None`` means both were destroyed."""
    if left.span[1] != at_node or right.span[0] != at_node:
        raise ValueError(f"records {left.span} and {right.span} do not meet at node {at_node}")
    if left.expired(now) or right.expired(now):
        raise ValueError("cannot swap an expired record")
    if e_s < 1.0 and not rng.random() < e_s:
        return None
    return EntanglementRecord(
        memory_a=left.memory_a,
        memory_b=right.memory_b,
        created_at=min(left.created_at, right.created_at),
        expires_at=min_expiry(left.expires_at, right.expires_at),
        span=(left.span[0], right.span[1]),
        constituents=left.constituents + right.constituents,
    )


def resolve_success_probability(params: HardwareParams, link_length_km: float) -> float:
    """Product of the per-attempt draw probabilities of one link."""
    fiber = math.exp(-gamma_per_km(params) * link_length_km / 2.0)
    emit = params.e_m * params.e_m
    detect = params.e_d * params.e_d
    return emit * fiber * fiber * detect * params.e_b


class LinkGenerator:
    """Barrett-Kok state machine for one elementary link.

    ``on_result(link, record_or_None)`` is called when both nodes know the
    outcome of an attempt. With ``fast_forward`` the generator jumps over
    the failing attempts in one geometric draw and plays out only the
    attempt that passes every Bernoulli draw; memory-lifetime checks still
    run on that attempt.
    """

    def __init__(
        self,
        link_id: int,
        chain: ChainTopology,
        params: HardwareParams,
        engine: Engine,
        rng: np.random.Generator,
        timing: Timing,
        on_result: Callable[["LinkGenerator", Optional[EntanglementRecord]], None],
        fast_forward: bool = True,
    ):
        self.link_id = link_id
        self.left, self.right = chain.link_nodes(link_id)
        self.length_km = chain.link_length_km
        self.params = params
        self.engine = engine
        self.rng = rng
        self.timing = timing
        self.on_result = on_result
        self.fast_forward = fast_forward
        self.state = LinkState.IDLE
        self.attempts = 0
        self.record: Optional[EntanglementRecord] = None
        self._tau = params.tau_mem_ticks
        self._fiber = math.exp(-gamma_per_km(params) * self.length_km / 2.0)
        self.p_success = resolve_success_probability(params, self.length_km)
        self._pending: List[Event] = []
        self._ok = False
        self._inception: SimTime = 0
        self._memory_alive = True

    def success_probability(self) -> float:
        return self.p_success

    def draw_attempt(self) -> bool:
        """One attempt's Bernoulli draws in causal order: emission, fiber, detectors, herald."""
        p = self.params
        r = self.rng.random
        return (
            r() < p.e_m and r() < p.e_m
            and r() < self._fiber and r() < self._fiber
            and r() < p.e_d and r() < p.e_d
            and r() < p.e_b
        )

    def skip_failures(self) -> int:
        """Number of failed attempts before the next success (fast-forward)."""
        return sample_geometric(self.rng, self.p_success) - 1

    def begin(self, at: SimTime, skip: bool = True) -> None:
        """Start generating at ``at``; retries are up to the owner via ``on_result``."""
        if self.state not in (LinkState.IDLE, LinkState.AWAITING_START):
            raise RuntimeError(f"link {self.link_id} is busy ({self.state.value})")
        forced = False
        if skip and self.fast_forward and self.p_success > 0.0:
            failures = self.skip_failures()
            self.attempts += failures
            self.engine.stats.attempts_per_link[self.link_id] += failures
            at += failures * self.timing.attempt
            forced = True
        self.attempt(at, forced)

    def attempt(self, start: SimTime, forced: bool = False) -> None:
        """Schedule the events of a single attempt whose emission is at ``start``."""
        self.state = LinkState.AWAITING_START
        self.record = None
        self.attempts += 1
        self.engine.stats.attempts_per_link[self.link_id] += 1
        self._ok = True
        self._forced = forced
        self._pending = [
            self.engine.schedule(start, Kind.EMIT_PHOTONS, self._emit, link=self.link_id, round=1)
        ]

    def cancel(self) -> None:
        for ev in self._pending:
            Engine.cancel(ev)
        self._pending = []
        self.state = LinkState.IDLE
        self.record = None

    def release(self) -> None:
        """Give up the held record (consumed or discarded) and go idle."""
        self.record = None
        self.state = LinkState.IDLE

    def _arm_memory(self) -> None:
        self._inception = self.engine.now
        self._memory_alive = True
        if self._tau is not None:
            self._pending.append(
                self.engine.schedule(
                    self._inception + self._tau, Kind.MEMORY_EXPIRED, self._memory_expired,
                    link=self.link_id, phase="photon",
                )
            )

    def _memory_expired(self, event: Event) -> None:
        self._memory_alive = False

    def _emit(self, event: Event) -> None:
        self.state = LinkState.PHOTONS_IN_FLIGHT
        rnd = event.payload["round"]
        self._pending = []
        self._arm_memory()
        self._pending.append(
            self.engine.schedule_in(
                self.timing.half_link, Kind.PHOTON_AT_BSM, self._photons_at_bsm,
                link=self.link_id, round=rnd,
            )
        )

    def _photons_at_bsm(self, event: Event) -> None:
        rnd = event.payload["round"]
        if not self._memory_alive:
            self._ok = False
        engine = self.engine
        if rnd == 1:
            self.state = LinkState.AWAITING_SECOND_ROUND
            for ev in self._pending:
                Engine.cancel(ev)
            self._pending = [
                engine.schedule_in(
                    self.timing.half_link, Kind.EMIT_PHOTONS, self._emit, link=self.link_id, round=2
                )
            ]
            return
        if self._ok and not self._forced:
            self._ok = self.draw_attempt()
        for ev in self._pending:
            Engine.cancel(ev)
        self._pending = [
            engine.schedule_in(
                self.timing.half_link, Kind.BSM_RESULT, self._result_at_nodes,
                link=self.link_id, ok=self._ok,
            )
        ]

    def _result_at_nodes(self, event: Event) -> None:
        self._pending = [
            self.engine.schedule_in(
                2 * self.timing.half_link, Kind.CLASSICAL_MESSAGE, self._confirmed,
                link=self.link_id, ok=self._ok,
            )
        ]

    def _confirmed(self, event: Event) -> None:
        self._pending = []
        if not self._ok:
            if not self._memory_alive:
                self.engine.stats.expiry_failures += 1
            self.state = LinkState.IDLE
            self.on_result(self, None)
            return
        tau = self._tau
        self.record = EntanglementRecord(
            memory_a=(self.left, 1),
            memory_b=(self.right, 0),
            created_at=self._inception,
            expires_at=None if tau is None else self._inception + tau,
            span=(self.left, self.right),
        )
        self.state = LinkState.DONE
        self.on_result(self, self.record)


def check_end_to_end(record: EntanglementRecord, chain: ChainTopology) -> None:
    """Span and min-expiry invariants of a finished end-to-end record."""
    if record.span != (0, chain.num_nodes - 1):
        raise AssertionError(f"end-to-end record spans {record.span}")
    expected = min_expiry(*(c.expires_at for c in record.constituents))
    if record.expires_at != expected:
        raise AssertionError(f"expires_at {record.expires_at} != min of constituents {expected}")
    spans = sorted(c.span for c in record.constituents)
    if spans != [(i, i + 1) for i in range(chain.num_links)]:
        raise AssertionError(f"constituents do not tile the chain: {spans}")


class ChainProtocol:
    """Shared wiring for the two chain schedulers."""

    name = ""

    def __init__(
        self,
        chain: ChainTopology,
        params: HardwareParams,
        engine: Engine,
        seed: int = 0,
        fast_forward: bool = True,
        max_rounds: Optional[int] = None,
        check_invariants: bool = True,
    ):
        self.chain = chain
        self.params = params
        self.engine = engine
        self.timing = Timing.for_chain(chain, params.v_km_per_s)
        self.tree = build_swap_tree(chain.num_repeaters)
        self.fast_forward = fast_forward
        self.max_rounds = max_rounds
        self.check_invariants = check_invariants
        self.finished = False
        self.rng = stream_rng(seed, chain.num_links)
        self.links = [
            LinkGenerator(i, chain, params, engine, stream_rng(seed, i), self.timing,
                          self._on_link_result, fast_forward)
            for i in range(chain.num_links)
        ]
        self.success_listeners: List[Callable[[EntanglementRecord], None]] = []

    def start(self) -> None:
        self.engine.schedule(0, Kind.ROUND_START, self._round_start, round=1)

    def _round_start(self, event: Event) -> None:
        raise NotImplementedError

    def _on_link_result(self, link: LinkGenerator, record: Optional[EntanglementRecord]) -> None:
        raise NotImplementedError

    def _record_success(self, record: EntanglementRecord) -> None:
        stats = self.engine.stats
        now = self.engine.now
        if self.check_invariants:
            check_end_to_end(record, self.chain)
        stats.end_to_end_successes += 1
        stats.success_times.append(now)
        stats.oldest_memory_age_samples.append(now - record.created_at)
        for listener in self.success_listeners:
            listener(record)

    def _run_stage(self, held: Dict[int, EntanglementRecord], nodes) -> Tuple[List[int], List[int]]:
        """Swap at ``nodes`` in place on ``held`` (keyed by left endpoint).

        Returns (failed nodes, nodes whose inputs were expired or missing).
        """
        now = self.engine.now
        e_s = self.params.e_s
        stats = self.engine.stats
        failed, expired = [], []
        ends = {rec.span[1]: left for left, rec in held.items()}
        for node in nodes:
            left_key = ends.get(node)
            right = held.get(node)
            left = held.get(left_key) if left_key is not None else None
            if left is None or right is None or left.expired(now) or right.expired(now):
                expired.append(node)
                stats.expiry_failures += 1
                for key in (left_key, node):
                    if key is not None:
                        held.pop(key, None)
                continue
            merged = swap(left, right, node, self.rng, e_s, now)
            del held[left_key], held[node]
            if merged is None:
                failed.append(node)
                stats.swap_failures += 1
                continue
            held[merged.span[0]] = merged
            ends[merged.span[1]] = merged.span[0]
        return failed, expired


class SynchronousProtocol(ChainProtocol):
    """All links attempt together each round; any failure discards everything.

    The C-node clock runs rounds of ``3 l/v + L/v``. Round ``n`` starts with
    the C-node's start message; links emit together once it reaches the
    farthest node, report back to the C-node, and the next ``ROUND_START``
    evaluates the reports.
    """

    name = SYNCHRONOUS

    def __init__(self, *args, **kwargs):
        super().__init__(*args, **kwargs)
        self._status: Dict[int, Optional[EntanglementRecord]] = {}
        self._reports: Dict[int, Optional[EntanglementRecord]] = {}
        self._held: Dict[int, EntanglementRecord] = {}
        self._forced = False
        p_link = self.links[0].p_success
        self._p_round = p_link ** self.chain.num_links

    def _round_start(self, event: Event) -> None:
        if self._status or event.payload.get("evaluate"):
            if self._evaluate():
                return
        stats = self.engine.stats
        if self.max_rounds is not None and stats.rounds >= self.max_rounds:
            self.finished = True
            return
        t0 = self.engine.now
        if self.fast_forward and self._p_round > 0.0:
            failures = sample_geometric(self.rng, self._p_round) - 1
            if self.max_rounds is not None:
                remaining = self.max_rounds - stats.rounds
                if failures >= remaining:
                    failures = remaining
                    stats.rounds += failures
                    for link in self.links:
                        link.attempts += failures
                        stats.attempts_per_link[link.link_id] += failures
                    self.engine.schedule(t0 + failures * self.timing.sync_period,
                                         Kind.ROUND_START, self._round_start, round=stats.rounds + 1)
                    return
            stats.rounds += failures
            for link in self.links:
                link.attempts += failures
                stats.attempts_per_link[link.link_id] += failures
            t0 += failures * self.timing.sync_period
            forced = True
        else:
            forced = False
        stats.rounds += 1
        self._status = {}
        self._forced = forced
        self.engine.schedule(t0 + self.timing.start_leg, Kind.CLASSICAL_MESSAGE, self._start_links,
                             round=stats.rounds, msg="start")
        self.engine.schedule(t0 + self.timing.sync_period, Kind.ROUND_START, self._round_start,
                             round=stats.rounds + 1, evaluate=True)

    def _start_links(self, event: Event) -> None:
        now = self.engine.now
        for link in self.links:
            link.attempt(now, forced=self._forced)

    def _on_link_result(self, link: LinkGenerator, record: Optional[EntanglementRecord]) -> None:
        self.engine.schedule_in(
            self.timing.notify[link.link_id], Kind.CLASSICAL_MESSAGE, self._status_received,
            link=link.link_id, ok=record is not None, msg="status",
        )
        self._reports[link.link_id] = record

    def _status_received(self, event: Event) -> None:
        link_id = event.payload["link"]
        self._status[link_id] = self._reports.get(link_id)

    def _evaluate(self) -> bool:
        """Evaluate the finished round; True if a swap tree now owns the clock."""
        status, self._status = self._status, {}
        records = [status.get(i) for i in range(self.chain.num_links)]
        for link in self.links:
            link.release()
        if any(rec is None for rec in records):
            return False
        if self.chain.num_repeaters == 0:
            # heralded end-to-end pair, used as soon as it is confirmed
            self._record_success(records[0])
            return False
        self._held = {rec.span[0]: rec for rec in records}
        self.engine.schedule_in(self.timing.stage, Kind.BSM_RESULT, self._swap_stage, stage=0)
        return True

    def _swap_stage(self, event: Event) -> None:
        stage = event.payload["stage"]
        held = self._held
        failed, expired = self._run_stage(held, self.tree.stages[stage])
        if failed or expired:
            self._next_round()
            return
        if stage + 1 < self.tree.num_stages:
            self.engine.schedule_in(self.timing.stage, Kind.BSM_RESULT, self._swap_stage,
                                    stage=stage + 1)
            return
        (record,) = held.values()
        self._record_success(record)
        self._next_round()

    def _next_round(self) -> None:
        self.engine.schedule_in(0, Kind.ROUND_START, self._round_start,
                                round=self.engine.stats.rounds + 1)


class IndependentProtocol(ChainProtocol):
    """Links retry on their own until success and hold their records.

    Completed links report to the C-node, which runs the swap tree once
    every link is reported up. An expired held record is dropped and only
    its links regenerate. A failed swap discards every record unless
    ``partial_discard`` is set, in which case only the two records of the
    failed swap are dropped.
    """

    name = INDEPENDENT

    def __init__(self, *args, partial_discard: bool = False, **kwargs):
        super().__init__(*args, **kwargs)
        self.partial_discard = partial_discard
        n = self.chain.num_links
        self.up = [False] * n
        self.held: Dict[int, EntanglementRecord] = {}
        self._expiry: Dict[int, Event] = {}
        self._tree_running = False

    def _round_start(self, event: Event) -> None:
        self.engine.stats.rounds += 1
        for link in self.links:
            self.engine.schedule_in(
                self.timing.start_offset[link.link_id], Kind.CLASSICAL_MESSAGE, self._start_link,
                link=link.link_id, msg="start",
            )

    def _start_link(self, event: Event) -> None:
        self.links[event.payload["link"]].begin(self.engine.now)

    def _restart(self, link_ids) -> None:
        now = self.engine.now
        for i in link_ids:
            self.up[i] = False
            link = self.links[i]
            # a link whose record expired earlier is already regenerating
            if link.state in (LinkState.IDLE, LinkState.DONE):
                link.release()
                link.begin(now)

    def _on_link_result(self, link: LinkGenerator, record: Optional[EntanglementRecord]) -> None:
        if record is None:
            link.begin(self.engine.now)
            return
        if self.chain.num_repeaters > 0:
            if record.expired(self.engine.now):
                self.engine.stats.expiry_failures += 1
                link.release()
                link.begin(self.engine.now)
                return
            self.held[record.span[0]] = record
            self._arm_expiry(record)
        self.engine.schedule_in(
            self.timing.notify[link.link_id], Kind.CLASSICAL_MESSAGE, self._notice,
            link=link.link_id, up=True, msg="notice",
        )
        self._last_record = record

    def _arm_expiry(self, record: EntanglementRecord) -> None:
        if record.expires_at is None:
            return
        self._expiry[record.span[0]] = self.engine.schedule(
            record.expires_at, Kind.MEMORY_EXPIRED, self._record_expired,
            span=record.span,
        )

    def _record_expired(self, event: Event) -> None:
        left = event.payload["span"][0]
        record = self.held.get(left)
        if record is None or record.span != event.payload["span"] or self._tree_running:
            return
        del self.held[left]
        self._expiry.pop(left, None)
        self.engine.stats.expiry_failures += 1
        for i in record.links:
            self.engine.schedule_in(self.timing.notify[i], Kind.CLASSICAL_MESSAGE, self._notice,
                                    link=i, up=False, msg="notice")
            self.links[i].release()
            self.links[i].begin(self.engine.now)

    def _notice(self, event: Event) -> None:
        self.up[event.payload["link"]] = event.payload["up"]
        if self._tree_running or not all(self.up):
            return
        if self.chain.num_repeaters == 0:
            self._record_success(self._last_record)
            self.engine.stats.rounds += 1
            self._restart([0])
            return
        self._tree_running = True
        for ev in self._expiry.values():
            Engine.cancel(ev)
        self._expiry = {}
        self._schedule_stage(0)

    def _schedule_stage(self, stage: int) -> None:
        # stages whose swap nodes are all gone (partial discard) take no time
        while stage < self.tree.num_stages and not self._stage_nodes(stage):
            stage += 1
        if stage >= self.tree.num_stages:
            self._finish_tree()
            return
        self.engine.schedule_in(self.timing.stage, Kind.BSM_RESULT, self._swap_stage, stage=stage)

    def _stage_nodes(self, stage: int):
        # nodes already inside a surviving merged record have nothing to do;
        # any other node swaps, and a missing input there fails the tree
        inside = {n for rec in self.held.values() for n in range(rec.span[0] + 1, rec.span[1])}
        return [n for n in self.tree.stages[stage] if n not in inside]

    def _swap_stage(self, event: Event) -> None:
        stage = event.payload["stage"]
        before = dict(self.held)
        failed, expired = self._run_stage(self.held, self._stage_nodes(stage))
        if failed or expired:
            self._abort_tree(before, failed + expired)
            return
        self._schedule_stage(stage + 1)

    def _finish_tree(self) -> None:
        if len(self.held) != 1:
            # a stale up-notice let the tree start without every record
            self.engine.stats.expiry_failures += 1
            self._abort_tree(dict(self.held), [])
            return
        (record,) = self.held.values()
        self.held = {}
        self._tree_running = False
        self._record_success(record)
        self.engine.stats.rounds += 1
        self._restart(range(self.chain.num_links))

    def _abort_tree(self, before: Dict[int, EntanglementRecord], bad_nodes: List[int]) -> None:
        self._tree_running = False
        self.engine.stats.rounds += 1
        n = self.chain.num_links
        if not self.partial_discard:
            self.held = {}
            self._restart(range(n))
            return
        now = self.engine.now
        survivors = {}
        for left, rec in self.held.items():
            if rec.expired(now):
                self.engine.stats.expiry_failures += 1
                continue
            survivors[left] = rec
        self.held = survivors
        covered = {i for rec in survivors.values() for i in rec.links}
        self._restart([i for i in range(n) if i not in covered])
        for rec in survivors.values():
            self._arm_expiry(rec)


def make_protocol(name: str, chain: ChainTopology, params: HardwareParams, engine: Engine, **kwargs) -> ChainProtocol:
    if name == SYNCHRONOUS:
        if kwargs.pop("partial_discard", False):
            raise ValueError("partial discard applies to the independent protocol only")
        return SynchronousProtocol(chain, params, engine, **kwargs)
    if name == INDEPENDENT:
        return IndependentProtocol(chain, params, engine, **kwargs)
    raise ValueError(f"unknown protocol {name!r}; expected one of {PROTOCOLS}")
