"""Discrete-event transport for the kernel.

Broadcasts become timestamped deliveries; time only moves when no rule can
fire.  Deliveries are addressed to *sites* (an agent and everything it spawned
with ``&``) and are handed to every live member of the site when they arrive,
so agents spawned while a message is in flight still receive their copy.

Faults: fail-stop suspension of a site (deliveries are buffered and released
on resume), symmetric group partitions, and optional seeded message drops.
"""

from __future__ import annotations

import hashlib
import heapq
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, NamedTuple, Optional

from .kernel import KernelError, World, agent_sort_key, site_of
from .terms import render

__all__ = [
    "SimError", "Delivery", "Trigger", "TimerExpiry", "FaultCmd", "SimEvent",
    "NetPolicy", "SimWorld", "as_time",
]


class SimError(Exception):
    pass


def as_time(value) -> Fraction:
    t = value if type(value) is Fraction else Fraction(value)
    if t < 0:
        raise SimError(f"negative time {value}")
    return t


class Delivery(NamedTuple):
    site: str
    term: object
    sender: Optional[str]


class Trigger(NamedTuple):
    """A term arriving from outside the system (user interface, scenario)."""
    site: str
    term: object


class TimerExpiry(NamedTuple):
    agent_id: str
    key: object


class FaultCmd(NamedTuple):
    op: str            # suspend | resume | partition | heal
    args: tuple


@dataclass(order=True)
class SimEvent:
    due_time: Fraction
    seq: int
    payload: object = field(compare=False)


_GRID = {}


def _hash64(*parts) -> int:
    digest = hashlib.blake2b("|".join(parts).encode(), digest_size=8).digest()
    return int.from_bytes(digest, "big")


@dataclass
class NetPolicy:
    """Link behaviour.  Delay and drop are pure functions of
    (seed, sender, receiver, term), so a run is reproducible from its seed."""
    delay_min: Fraction = Fraction(1)
    delay_max: Fraction = Fraction(1)
    drop_rate: Fraction = Fraction(0)
    seed: int = 0
    partition: Optional[list] = None
    delay_fn: Optional[Callable] = None
    drop_fn: Optional[Callable] = None

    def __post_init__(self):
        self.delay_min = as_time(self.delay_min)
        self.delay_max = as_time(self.delay_max)
        self.drop_rate = Fraction(self.drop_rate)
        if self.delay_max < self.delay_min:
            raise SimError("delay max below min")
        if not 0 <= self.drop_rate <= 1:
            raise SimError("drop rate outside [0, 1]")

    def delay(self, sender, receiver, term) -> Fraction:
        if self.delay_fn is not None:
            return as_time(self.delay_fn(sender, receiver, term))
        span = self.delay_max - self.delay_min
        if not span:
            return self.delay_min
        # millisecond grid keeps the rationals small
        ms = (_hash64(str(self.seed), "delay", str(sender), receiver, render(term)) * 1001) >> 64
        key = (self.delay_min, self.delay_max, ms)
        value = _GRID.get(key)
        if value is None:
            value = _GRID[key] = self.delay_min + span * Fraction(ms, 1000)
        return value

    def dropped(self, sender, receiver, term) -> bool:
        if self.drop_fn is not None:
            return bool(self.drop_fn(sender, receiver, term))
        if not self.drop_rate:
            return False
        u = _hash64(str(self.seed), "drop", str(sender), receiver, render(term))
        return u < self.drop_rate * (1 << 64)

    def separated(self, a: str, b: str) -> bool:
        if not self.partition:
            return False
        return self._group(a) != self._group(b)

    def _group(self, site):
        for i, group in enumerate(self.partition):
            if site in group:
                return i
        return -1


class SimWorld(World):
    def __init__(self, seed: int = 0, policy: Optional[NetPolicy] = None):
        super().__init__()
        self.seed = seed
        self.policy = policy if policy is not None else NetPolicy(seed=seed)
        self.queue = []
        self.suspended = set()
        self.buffers = {}
        self.trigger_handlers = {}
        self.events_processed = 0
        self.event_log = []
        self._seq = 0
        self._sites = {}
        self._armed = {}
        self._expired = set()

    # -- site bookkeeping --------------------------------------------------
    def _agent_added(self, agent):
        self._sites.setdefault(site_of(agent.agent_id), set()).add(agent.agent_id)

    def _agent_removed(self, agent):
        site = site_of(agent.agent_id)
        members = self._sites.get(site)
        if members is not None:
            members.discard(agent.agent_id)
            if not members:
                del self._sites[site]

    def members(self, site: str):
        return sorted(self._sites.get(site, ()), key=agent_sort_key)

    def live_sites(self):
        return sorted(self._sites, key=agent_sort_key)

    def can_fire(self, agent_id):
        return agent_id in self.agents and site_of(agent_id) not in self.suspended

    # -- event queue -------------------------------------------------------
    def schedule(self, due_time, payload) -> SimEvent:
        due_time = as_time(due_time)
        if due_time < self.now:
            raise SimError(f"event at {due_time} is in the past (now {self.now})")
        return self._push(due_time, payload)

    def _push(self, due_time, payload) -> SimEvent:
        self._seq += 1
        event = SimEvent(due_time, self._seq, payload)
        # float order never contradicts exact order; ties fall back to the Fraction
        heapq.heappush(self.queue, (float(due_time), due_time, self._seq, event))
        return event

    def broadcast(self, sender, term):
        origin = site_of(sender)
        for site in self.live_sites():
            if site == origin and self._sites[site] == {sender}:
                continue
            if self.policy.separated(origin, site):
                continue
            if self.discard_inert and not self._site_wants(site, term):
                continue
            if self.policy.dropped(sender, site, term):
                continue
            # delays are non-negative, so this is never in the past
            self._push(self.now + self.policy.delay(sender, site, term),
                       Delivery(site, term, sender))

    def _site_wants(self, site, term) -> bool:
        return any(self.wants(self.agents[aid].ruleset_id, term) for aid in self._sites[site])

    def inject(self, site: str, term, at=None):
        """Schedule ``term`` to arrive at ``site`` from outside the system."""
        return self.schedule(self.now if at is None else at, Trigger(site, term))

    # -- timers --------------------------------------------------------------
    def arm_timer(self, agent_id, key, seconds):
        token = (agent_id, key)
        if token not in self._armed:
            due = self.now + as_time(seconds)
            self._armed[token] = due
            self.schedule(due, TimerExpiry(agent_id, key))

    def wait_elapsed(self, agent_id, key, seconds) -> bool:
        token = (agent_id, key)
        if token in self._expired:
            return True
        self.arm_timer(agent_id, key, seconds)
        return False

    def timer_due(self, agent_id, key):
        return self._armed.get((agent_id, key))

    # -- faults ------------------------------------------------------------
    def suspend(self, site: str):
        if site not in self._sites:
            raise SimError(f"cannot suspend {site}: no live agent")
        self.suspended.add(site)

    def resume(self, site: str):
        if site not in self.suspended:
            if site not in self._sites:
                raise SimError(f"cannot resume {site}: no live agent")
            return
        self.suspended.discard(site)
        for payload in self.buffers.pop(site, []):
            self.schedule(self.now, payload)
        for aid in self.members(site):
            self.touch(aid)

    def partition(self, groups):
        self.policy.partition = [frozenset(g) for g in groups]

    def heal(self):
        self.policy.partition = None

    # -- event loop --------------------------------------------------------
    def _apply_event(self, event: SimEvent):
        payload = event.payload
        if isinstance(payload, (Delivery, Trigger)):
            site = payload.site
            if site in self.suspended:
                self.buffers.setdefault(site, []).append(payload)
                return
            if isinstance(payload, Trigger):
                handler = self.trigger_handlers.get(site)
                if handler is not None and handler(payload.term):
                    return
                sender = None
            else:
                sender = payload.sender
            for aid in self.members(site):
                if aid != sender:
                    self.deliver(aid, payload.term)
        elif isinstance(payload, TimerExpiry):
            self._expired.add((payload.agent_id, payload.key))
            self.touch(payload.agent_id)
        elif isinstance(payload, FaultCmd):
            getattr(self, payload.op)(*payload.args)
        else:
            raise SimError(f"unknown event payload {payload!r}")

    def pending_events(self) -> int:
        return len(self.queue)

    def advance(self, max_events: Optional[int] = None) -> bool:
        """Run to completion: fire rules until quiescent, then take the next
        event.  Returns False if ``max_events`` stopped the run early."""
        processed = 0
        last = float(self.now)
        while True:
            self.run()
            if not self.queue:
                return True
            if max_events is not None and processed >= max_events:
                return False
            key, _, _, event = heapq.heappop(self.queue)
            if key < last and event.due_time < self.now:
                raise KernelError("event queue went back in time")
            last = key
            self.now = event.due_time
            self.event_log.append(event)
            self._apply_event(event)
            processed += 1
            self.events_processed += 1
