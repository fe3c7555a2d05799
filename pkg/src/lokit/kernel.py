"""Agent/resource/rule engine.

An agent is a multiset of ground resources (its *pool*) plus a rule set.  A
rule consumes its left-hand side all-or-nothing, runs its guards, then either
terminates the agent or replaces it by one continuation per right-hand-side
group (the first keeps the agent id, the others become fresh agents).
Emitted terms are handed to the world's transport.

Scheduling is deterministic: agents are scanned in canonical id order, rules
in declaration order, pool candidates in canonical term order.
"""

from __future__ import annotations

import functools
import re
from dataclasses import dataclass, field
from decimal import Decimal
from fractions import Fraction
from typing import Callable, NamedTuple, Optional

from .terms import (
    Term, Var, atom_key, is_ground, match, render, sort_key, substitute, variables,
)

__all__ = [
    "KernelError", "Guard", "GuardContext", "Rule", "Pool", "AgentState",
    "FiringEffect", "Firing", "Fired", "QUIESCENT", "World",
    "match_rule", "fire_rule", "agent_sort_key", "site_of", "format_firing",
]


class KernelError(Exception):
    pass


class GuardContext(NamedTuple):
    world: Optional["World"]
    agent: "AgentState"
    rule: "Rule"


@dataclass(frozen=True)
class Guard:
    """A host callback run after the left-hand side has matched.

    ``fn(binding, ctx)`` returns the (possibly extended) binding or None.
    ``binds`` lists the variables it may add, for rule validation.
    """
    name: str
    fn: Callable[[dict, GuardContext], Optional[dict]]
    binds: tuple = ()

    def __call__(self, binding, ctx):
        return self.fn(binding, ctx)


@dataclass(frozen=True)
class Rule:
    name: str
    lhs: tuple
    guards: tuple = ()
    rhs_groups: tuple = ((),)
    emits: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "lhs", tuple(self.lhs))
        object.__setattr__(self, "guards", tuple(self.guards))
        object.__setattr__(self, "rhs_groups", tuple(tuple(g) for g in self.rhs_groups))
        object.__setattr__(self, "emits", tuple(self.emits))
        known = set()
        for p in self.lhs:
            variables(p, known)
        for g in self.guards:
            known.update(g.binds)
        used = set()
        for group in self.rhs_groups:
            for p in group:
                variables(p, used)
        for p in self.emits:
            variables(p, used)
        unbound = used - known
        if unbound:
            raise KernelError(f"rule {self.name}: unbound variables {sorted(unbound)}")
        # index entries any match needs: (functor, arity) plus ground arguments
        keys, args = set(), set()
        for p in self.lhs:
            if isinstance(p, Term):
                keys.add((p.functor, len(p.args)))
                args.update((p.functor, len(p.args), i, a)
                            for i, a in enumerate(p.args) if is_ground(a))
            elif not isinstance(p, Var):
                keys.add(atom_key(p))
        object.__setattr__(self, "needed_keys", frozenset(keys))
        object.__setattr__(self, "needed_args", frozenset(args))

    def may_match(self, pool) -> bool:
        """Cheap necessary condition: every functor and ground argument the
        lhs mentions is present in the pool."""
        return pool._by_key.keys() >= self.needed_keys and pool._by_arg.keys() >= self.needed_args

    @property
    def terminates(self) -> bool:
        return not self.rhs_groups


class Pool:
    """Multiset of ground terms indexed by (functor, arity) and by argument."""

    __slots__ = ("_counts", "_by_key", "_by_arg", "_size")

    def __init__(self, terms=()):
        self._counts = {}
        self._by_key = {}
        self._by_arg = {}
        self._size = 0
        for term in terms:
            self.add(term)

    def add(self, term, n: int = 1):
        compound = type(term) is Term
        if not (is_ground(term) if compound else type(term) is not Var):
            raise KernelError(f"non-ground term {render(term)} cannot enter a pool")
        counts = self._counts
        c = counts.get(term, 0)
        counts[term] = c + n
        self._size += n
        if c:
            return
        if not compound:
            self._by_key.setdefault((None, term), set()).add(term)
            return
        f, args = term.functor, term.args
        n_args = len(args)
        self._by_key.setdefault((f, n_args), set()).add(term)
        by_arg = self._by_arg
        for i, a in enumerate(args):
            k = (f, n_args, i, a)
            bucket = by_arg.get(k)
            if bucket is None:
                by_arg[k] = {term}
            else:
                bucket.add(term)

    def remove(self, term, n: int = 1):
        counts = self._counts
        c = counts.get(term, 0)
        if c < n:
            raise KernelError(f"{render(term)} not in pool")
        self._size -= n
        if c > n:
            counts[term] = c - n
            return
        del counts[term]
        key = atom_key(term)
        bucket = self._by_key[key]
        bucket.discard(term)
        if not bucket:
            del self._by_key[key]
        if type(term) is Term:
            f, args = term.functor, term.args
            n_args = len(args)
            by_arg = self._by_arg
            for i, a in enumerate(args):
                k = (f, n_args, i, a)
                bucket = by_arg[k]
                if len(bucket) == 1:
                    del by_arg[k]
                else:
                    bucket.discard(term)

    def count(self, term) -> int:
        return self._counts.get(term, 0)

    def __contains__(self, term):
        return term in self._counts

    def __len__(self):
        return self._size

    def __eq__(self, other):
        return isinstance(other, Pool) and self._counts == other._counts

    def __iter__(self):
        for term in sorted(self._counts, key=sort_key):
            for _ in range(self._counts[term]):
                yield term

    def distinct(self):
        return sorted(self._counts, key=sort_key)

    def copy(self) -> "Pool":
        new = Pool.__new__(Pool)
        new._counts = dict(self._counts)
        new._by_key = {k: set(v) for k, v in self._by_key.items()}
        new._by_arg = {k: set(v) for k, v in self._by_arg.items()}
        new._size = self._size
        return new

    def clear(self):
        self._counts.clear()
        self._by_key.clear()
        self._by_arg.clear()
        self._size = 0

    def candidates(self, pattern, binding: dict) -> list:
        """Distinct pool terms that may match ``pattern`` under ``binding``,
        in canonical order."""
        if isinstance(pattern, Var):
            if pattern.name in binding:
                v = binding[pattern.name]
                return [v] if v in self._counts else []
            return sorted(self._counts, key=sort_key)
        if not isinstance(pattern, Term):
            return [pattern] if pattern in self._counts else []
        f, n_args = pattern.functor, len(pattern.args)
        best = self._by_key.get((f, n_args))
        if not best:
            return []
        for i, a in enumerate(pattern.args):
            if isinstance(a, Var):
                if a.name not in binding:
                    continue
                a = binding[a.name]
            elif not is_ground(a):
                a = substitute(a, binding)
                if not is_ground(a):
                    continue
            bucket = self._by_arg.get((f, n_args, i, a))
            if not bucket:
                return []
            if len(bucket) < len(best):
                best = bucket
        if len(best) == 1:
            return list(best)
        return sorted(best, key=sort_key)

    def __repr__(self):
        return "{" + ", ".join(render(x) for x in self) + "}"


@dataclass
class AgentState:
    agent_id: str
    pool: Pool
    ruleset_id: str
    alive: bool = True


@dataclass
class FiringEffect:
    consumed: list
    continuations: list          # one Pool per rhs group
    produced: list               # instantiated rhs groups, for tracing
    broadcasts: list
    terminated: bool


@dataclass
class Firing:
    """One executed step, as recorded in the trace."""
    index: int
    time: object
    agent_id: str
    rule: str
    consumed: list
    produced: list
    broadcasts: list
    terminated: bool
    spawned: list = field(default_factory=list)
    binding: dict = field(default_factory=dict)


class Fired(NamedTuple):
    rule: str
    agent_id: str


QUIESCENT = None


def _run_guards(rule, binding, ctx):
    for guard in rule.guards:
        binding = guard(binding, ctx)
        if binding is None:
            return None
    return binding


def _search(state: AgentState, rule: Rule, world=None):
    """First (binding, matched pool terms) in canonical candidate order."""
    pool = state.pool
    counts = pool._counts
    candidates = pool.candidates
    lhs = rule.lhs
    n = len(lhs)
    taken = {}
    chosen = []

    def search(i, binding):
        if i == n:
            if rule.guards:
                binding = _run_guards(rule, binding, GuardContext(world, state, rule))
                if binding is None:
                    return None
            return binding, list(chosen)
        pattern = lhs[i]
        for cand in candidates(pattern, binding):
            used = taken.get(cand, 0)
            if counts[cand] <= used:
                continue
            extended = match(pattern, cand, binding)
            if extended is None:
                continue
            taken[cand] = used + 1
            chosen.append(cand)
            result = search(i + 1, extended)
            if result is not None:
                return result
            chosen.pop()
            taken[cand] = used
        return None

    return search(0, {})


def match_rule(state: AgentState, rule: Rule, world=None) -> Optional[dict]:
    """Find the first binding (in canonical candidate order) under which every
    lhs pattern matches a distinct pool element and every guard succeeds."""
    if not state.alive or not rule.may_match(state.pool):
        return None
    found = _search(state, rule, world)
    return None if found is None else found[0]


def _ground(term, binding, rule):
    value = substitute(term, binding)
    if not is_ground(value):
        raise KernelError(f"rule {rule.name} produced non-ground {render(value)}")
    return value


def fire_rule(state: AgentState, rule: Rule, binding: dict,
              in_place: bool = False, consumed=None) -> FiringEffect:
    """Compute the effect of firing.  The state is left untouched unless
    ``in_place``, in which case its pool is reused as the last continuation.
    ``consumed`` may pass the pool terms the match already picked."""
    if consumed is None:
        consumed = [substitute(p, binding) for p in rule.lhs]
    produced = [[substitute(p, binding) for p in group] for group in rule.rhs_groups]
    broadcasts = [_ground(p, binding, rule) for p in rule.emits]
    if rule.terminates:
        return FiringEffect(consumed, [], [], broadcasts, True)
    remaining = state.pool if in_place else state.pool.copy()
    for term in consumed:
        remaining.remove(term)
    continuations = []
    last = len(produced) - 1
    for k, group in enumerate(produced):
        pool = remaining if k == last else remaining.copy()
        for term in group:
            pool.add(term)
        continuations.append(pool)
    return FiringEffect(consumed, continuations, produced, broadcasts, False)


_ID_PART = re.compile(r"(\d+)")


@functools.lru_cache(maxsize=1 << 16)
def agent_sort_key(agent_id: str):
    """Natural order on agent ids, so ``c1:2`` sorts before ``c1:10``."""
    return tuple((0, int(p), "") if p.isdigit() else (1, 0, p)
                 for p in _ID_PART.split(agent_id) if p)


@functools.lru_cache(maxsize=1 << 16)
def site_of(agent_id: str) -> str:
    """Agents spawned by ``&`` live at their ancestor's site: ``c1:3`` -> ``c1``."""
    return agent_id.split(":", 1)[0]


def _render_list(terms) -> str:
    return " ".join(render(x) for x in terms) if terms else "-"


def format_time(value) -> str:
    """Exact decimal when the rational has one (``9.626``), else ``n/d``."""
    value = Fraction(value)
    d = value.denominator
    while d % 2 == 0:
        d //= 2
    while d % 5 == 0:
        d //= 5
    if d != 1:
        return render(value)
    if value.denominator == 1:
        return str(value.numerator)
    return format(Decimal(value.numerator) / Decimal(value.denominator), "f")


def format_firing(f: Firing) -> str:
    if f.terminated:
        produced = "terminate"
    else:
        produced = " & ".join(_render_list(g) for g in f.produced)
    return "\t".join([
        str(f.index), format_time(f.time), f.agent_id, f.rule,
        _render_list(f.consumed), produced, _render_list(f.broadcasts),
    ])


class World:
    """Agents, rule sets and the step scheduler.

    The base transport delivers broadcasts immediately to every other live
    agent; :class:`lokit.simnet.SimWorld` replaces it with simulated links.
    """

    def __init__(self):
        self.agents = {}
        self.rulesets = {}
        self.terminated = set()
        self.now = Fraction(0)
        self.step_index = 0
        self.firings = []
        self.record = True
        self.listeners = []
        self._fresh = 0
        self._spawn = {}
        self._dirty = set()
        self._relevant = {}
        self._applicable = {}
        self._ignores = {}
        self.discard_inert = False

    # -- setup ---------------------------------------------------------
    def add_ruleset(self, ruleset_id: str, rules, ignores=None):
        """``ignores(term)`` may name terms the rules only ever absorb
        without effect; with ``discard_inert`` set they are not delivered."""
        rules = list(rules)
        names = [r.name for r in rules]
        if len(set(names)) != len(names):
            raise KernelError(f"duplicate rule names in {ruleset_id}: {names}")
        self.rulesets[ruleset_id] = rules
        self._applicable.clear()
        keys = set()
        for rule in rules:
            for p in rule.lhs:
                if isinstance(p, Var):
                    keys = None
                    break
                keys.add(atom_key(p))
            if keys is None:
                break
        self._relevant[ruleset_id] = keys
        self._ignores[ruleset_id] = ignores

    def add_agent(self, agent_id: str, terms, ruleset_id: str) -> AgentState:
        if agent_id in self.agents or agent_id in self.terminated:
            raise KernelError(f"agent {agent_id} already exists")
        if ruleset_id not in self.rulesets:
            raise KernelError(f"unknown rule set {ruleset_id}")
        agent = AgentState(agent_id, Pool(terms), ruleset_id)
        self.agents[agent_id] = agent
        self._agent_added(agent)
        self._dirty.add(agent_id)
        return agent

    def spawn_agent(self, site: str, terms, ruleset_id: str) -> AgentState:
        return self.add_agent(self._spawn_id(site), terms, ruleset_id)

    def _spawn_id(self, site):
        n = self._spawn.get(site, 0) + 1
        self._spawn[site] = n
        return f"{site}:{n}"

    def _agent_added(self, agent):
        pass

    def _agent_removed(self, agent):
        pass

    # -- services used by guards -----------------------------------------
    def fresh_id(self, kind: str, origin) -> Term:
        self._fresh += 1
        return Term(kind, (origin, self._fresh))

    def wait_elapsed(self, agent_id: str, key, seconds) -> bool:
        # no clock at this level: a wait is over as soon as it is asked for
        return True

    # -- resources ------------------------------------------------------
    def deliver(self, agent_id: str, term):
        agent = self.agents.get(agent_id)
        if agent is None:
            return False
        if not self.wants(agent.ruleset_id, term):
            # no rule of this agent can ever consume the term
            if not self.discard_inert:
                agent.pool.add(term)
            return True
        agent.pool.add(term)
        self._dirty.add(agent_id)
        return True

    def wants(self, ruleset_id, term) -> bool:
        keys = self._relevant[ruleset_id]
        if keys is not None and atom_key(term) not in keys:
            return False
        ignores = self._ignores[ruleset_id]
        return not (self.discard_inert and ignores is not None and ignores(term))

    def touch(self, agent_id: str):
        if agent_id in self.agents:
            self._dirty.add(agent_id)

    def broadcast(self, sender: str, term):
        for aid in sorted(self.agents, key=agent_sort_key):
            if aid != sender:
                self.deliver(aid, term)

    def can_fire(self, agent_id: str) -> bool:
        return agent_id in self.agents

    def live_agents(self):
        return [self.agents[a] for a in sorted(self.agents, key=agent_sort_key)]

    # -- scheduling -----------------------------------------------------
    def step(self):
        """Fire the first matching (agent, rule); return Fired or QUIESCENT."""
        for aid in sorted(self._dirty, key=agent_sort_key):
            agent = self.agents.get(aid)
            if agent is None or not self.can_fire(aid):
                self._dirty.discard(aid)
                continue
            pool = agent.pool
            # rules whose functors are all present, memoised per key set
            memo_key = (agent.ruleset_id, frozenset(pool._by_key))
            rules = self._applicable.get(memo_key)
            if rules is None:
                if len(self._applicable) > 4096:
                    self._applicable.clear()
                keys = pool._by_key.keys()
                rules = self._applicable[memo_key] = [
                    r for r in self.rulesets[agent.ruleset_id] if keys >= r.needed_keys]
            args = pool._by_arg.keys()
            for rule in rules:
                if not args >= rule.needed_args:
                    continue
                found = _search(agent, rule, self)
                if found is not None:
                    binding, chosen = found
                    effect = fire_rule(agent, rule, binding, in_place=True, consumed=chosen)
                    self.apply(agent, rule, effect, binding)
                    return Fired(rule.name, aid)
            self._dirty.discard(aid)
        return QUIESCENT

    def run(self, max_steps: Optional[int] = None) -> int:
        """Step until quiescent; returns the number of firings."""
        n = 0
        while max_steps is None or n < max_steps:
            if self.step() is QUIESCENT:
                break
            n += 1
        return n

    def apply(self, agent: AgentState, rule: Rule, effect: FiringEffect, binding=None):
        spawned = []
        if effect.terminated:
            agent.alive = False
            agent.pool.clear()
            del self.agents[agent.agent_id]
            self.terminated.add(agent.agent_id)
            self._dirty.discard(agent.agent_id)
            self._agent_removed(agent)
        else:
            agent.pool = effect.continuations[0]
            self._dirty.add(agent.agent_id)
            site = site_of(agent.agent_id)
            for pool in effect.continuations[1:]:
                child = AgentState(self._spawn_id(site), pool, agent.ruleset_id)
                self.agents[child.agent_id] = child
                self._agent_added(child)
                self._dirty.add(child.agent_id)
                spawned.append(child.agent_id)
        self.step_index += 1
        if not self.record and not self.listeners:
            for term in effect.broadcasts:
                self.broadcast(agent.agent_id, term)
            return None
        firing = Firing(self.step_index, self.now, agent.agent_id, rule.name,
                        effect.consumed, effect.produced, effect.broadcasts,
                        effect.terminated, spawned, binding or {})
        if self.record:
            self.firings.append(firing)
        for listener in self.listeners:
            listener(firing)
        for term in effect.broadcasts:
            self.broadcast(agent.agent_id, term)
        return firing

    def trace_lines(self):
        return [format_firing(f) for f in self.firings]
