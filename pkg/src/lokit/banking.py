"""Replicated remote banking built from the toolkit rule sets.

Every bank runs a fixed number of server replicas, each owning a full copy of
the bank's ledger.  Writes are RPCs broadcast to every replica (write-all) and
committed by majority at timeout; reads are queries answered by whichever
replica's stream arrives first (read-any).  A client executes its operations
one at a time:

* deposit / withdraw / create / delete: one write; an aborted write is
  followed by a ``rollback`` request that undoes it on replicas that applied it.
* transfer: withdraw leg (``transfer-out``), then deposit leg
  (``transfer-in``); if the second leg aborts the first is compensated by a
  deposit back.
* lookup, lookup(B), lookup(B, A): one query per bank; one reply per account.

``suspend(S)`` / ``resume(S)`` triggers act on the simulated world directly.
"""

from __future__ import annotations

import logging
from collections import deque
from dataclasses import dataclass, field
from typing import Optional

from .simnet import Delivery, FaultCmd, NetPolicy, SimError, SimWorld, as_time
from .terms import Term, render, t
from .toolkit import (
    ABORT, COMMIT, EMPTY, CommHooks, make_client_ruleset, majority_policy,
    make_query_server_rules, make_rpc_server_rules,
)

__all__ = [
    "StatementEntry", "Account", "Ledger", "Replica", "BankClient", "OpRecord",
    "Step", "BankingSystem", "BankingError", "parse_op", "op_name",
    "WRITE_OPS", "MONEY_DELTA",
]

log = logging.getLogger(__name__)

WRITE_OPS = ("deposit", "withdraw", "create", "delete")
MONEY_DELTA = {"deposit": 1, "transfer-in": 1, "withdraw": -1, "transfer-out": -1}
_ARITY = {"deposit": 3, "withdraw": 3, "create": 2, "delete": 2, "transfer": 5,
          "lookup": (0, 1, 2), "suspend": 1, "resume": 1}


class BankingError(Exception):
    pass


@dataclass(frozen=True)
class StatementEntry:
    kind: str
    amount: int
    correlation: object
    resulting_balance: int

    def as_term(self) -> Term:
        return t("entry", self.kind, self.amount, self.resulting_balance, self.correlation)


@dataclass
class Account:
    bank: str
    account_id: str
    balance: int = 0
    statements: list = field(default_factory=list)
    version: int = 0

    def copy(self) -> "Account":
        return Account(self.bank, self.account_id, self.balance,
                       list(self.statements), self.version)

    def as_term(self) -> Term:
        return t("account", self.bank, self.account_id, self.balance, self.version,
                 Term("statements", [e.as_term() for e in self.statements]))


@dataclass
class Ledger:
    replica_of: str
    accounts: dict = field(default_factory=dict)

    def balances(self) -> dict:
        return {a: acc.balance for a, acc in sorted(self.accounts.items())}


def op_name(op) -> str:
    name = op.functor if isinstance(op, Term) else op
    return "lookup" if name == "look-up" else name


def parse_op(op):
    """Validate a trigger term; raise BankingError when malformed."""
    name = op_name(op)
    args = op.args if isinstance(op, Term) else ()
    want = _ARITY.get(name)
    if want is None:
        raise BankingError(f"unknown trigger {render(op)}")
    if len(args) not in (want if isinstance(want, tuple) else (want,)):
        raise BankingError(f"wrong arity for {render(op)}")
    if name in ("deposit", "withdraw", "transfer"):
        amount = args[2]
        if not isinstance(amount, int) or amount <= 0:
            raise BankingError(f"amount must be a positive integer in {render(op)}")
    return name, args


def _ok(*args):
    return t("ok", *args) if args else "ok"


def _err(reason):
    return t("err", reason)


def is_err(result) -> bool:
    return isinstance(result, Term) and result.functor == "err"


class Replica:
    """One server's copy of a bank ledger, exposed as toolkit hooks."""

    def __init__(self, server_id: str, bank: str, accounts=None):
        self.server_id = server_id
        self.bank = bank
        self.ledger = Ledger(bank, {a: Account(bank, a, bal)
                                    for a, bal in sorted((accounts or {}).items())})
        self.undo = {}
        self.tombstones = set()
        self.violations = []
        self.applied = []
        self.hooks = CommHooks(accepts=self.accepts, produce=self.produce,
                               produce_stream=self.produce_stream)

    def accepts(self, server, params) -> bool:
        return isinstance(params, Term) and bool(params.args) and params.args[0] == self.bank

    def ignores(self, term) -> bool:
        # requests for other banks: R2_skip / Q2_skip would only drop them
        return (isinstance(term, Term) and term.functor in ("msg-request", "msg-query")
                and len(term.args) == 2
                and not self.accepts(self.server_id, term.args[1]))

    # -- writes ---------------------------------------------------------------
    def produce(self, server, corr, params):
        name = params.functor
        if name == "rollback":
            return self._rollback(params.args[1])
        if corr in self.tombstones:
            return _err("cancelled")
        if name in WRITE_OPS:
            try:
                parse_op(params)
            except BankingError:
                return _err("malformed")
        accounts = self.ledger.accounts
        acct_id = params.args[1]
        acct = accounts.get(acct_id)
        if name == "create":
            if acct is not None:
                return _err("exists")
            return self._mutate(corr, acct_id, "create", 0)
        if acct is None:
            return _err("no-account")
        if name == "delete":
            if acct.balance != 0:
                return _err("nonzero-balance")
            return self._mutate(corr, acct_id, "delete", 0)
        if name not in MONEY_DELTA:
            return _err("unknown-operation")
        amount = params.args[2]
        if not isinstance(amount, int) or amount <= 0:
            return _err("bad-amount")
        if MONEY_DELTA[name] < 0 and acct.balance < amount:
            acct.statements.append(StatementEntry("overdraft-attempt", amount, corr, acct.balance))
            return _err("overdraft")
        return self._mutate(corr, acct_id, name, amount)

    def _mutate(self, corr, acct_id, kind, amount):
        accounts = self.ledger.accounts
        before = accounts.get(acct_id)
        snapshot = before.copy() if before is not None else None
        if kind == "create":
            acct = Account(self.bank, acct_id, 0, [], 0)
            accounts[acct_id] = acct
        elif kind == "delete":
            acct = before
        else:
            acct = before
            acct.balance += MONEY_DELTA[kind] * amount
        old_version = before.version if before is not None else 0
        acct.version = old_version + 1
        if acct.balance < 0:
            self.violations.append(f"{self.server_id}: {acct_id} committed negative balance")
        acct.statements.append(StatementEntry(kind, amount, corr, acct.balance))
        if kind == "delete":
            del accounts[acct_id]
            post = None
        else:
            post = acct.version
        self.undo[corr] = (acct_id, snapshot, post)
        self.applied.append((corr, kind, acct_id, old_version, acct.version))
        if kind == "delete":
            return _ok()
        return _ok(acct.balance, acct.version)

    def _rollback(self, corr):
        entry = self.undo.get(corr)
        if entry is None:
            self.tombstones.add(corr)
            return _ok("nothing")
        acct_id, snapshot, post = entry
        current = self.ledger.accounts.get(acct_id)
        if (current.version if current is not None else None) != post:
            return _err("stale")
        del self.undo[corr]
        if snapshot is None:
            del self.ledger.accounts[acct_id]
        else:
            self.ledger.accounts[acct_id] = snapshot
        self.applied.append((corr, "rollback", acct_id, post, snapshot.version if snapshot else None))
        return _ok("rolled-back")

    # -- reads --------------------------------------------------------------
    def produce_stream(self, server, corr, params):
        if params.functor != "lookup":
            return None
        accounts = self.ledger.accounts
        if len(params.args) == 2:
            acct = accounts.get(params.args[1])
            return [acct.as_term()] if acct is not None else []
        return [accounts[a].as_term() for a in sorted(accounts)]


@dataclass
class Step:
    style: str                  # rpc | query
    bank: str
    params: object
    corr: object = None
    replies: dict = field(default_factory=dict)
    stream: list = field(default_factory=list)
    follow_ups: int = 0
    decision: Optional[str] = None
    done: bool = False
    issued_at: object = None
    decided_at: object = None

    @property
    def errors(self):
        return sorted(r.args[0] for r in self.replies.values() if is_err(r))

    @property
    def delta(self) -> int:
        """Committed balance change of a money step."""
        if self.style != "rpc" or self.decision != COMMIT:
            return 0
        sign = MONEY_DELTA.get(self.params.functor)
        return sign * self.params.args[2] if sign else 0


@dataclass
class OpRecord:
    seq: int
    op: object
    client: str = ""
    submitted_at: object = None
    started_at: object = None
    outcome: Optional[str] = None
    finished_at: object = None
    steps: list = field(default_factory=list)
    result: list = field(default_factory=list)

    @property
    def delta(self) -> int:
        return sum(s.delta for s in self.steps)


class BankClient:
    """Client site: toolkit client rules plus the per-operation plans that
    sequence writes, rollbacks, transfer legs and lookups."""

    def __init__(self, world: SimWorld, client_id: str, replicas: dict, timeout):
        self.world = world
        self.client_id = client_id
        self.replicas = dict(replicas)
        self.records = []
        self.pending = deque()
        self.current = None
        self.step = None
        self._plan = None
        self._trigger_seq = 0
        self._by_corr = {}
        self.hooks = CommHooks(consume=self._consume, some_policy=self._policy,
                               issued=self._issued)
        self.ruleset_id = f"client:{client_id}"
        world.add_ruleset(self.ruleset_id, make_client_ruleset(
            rpc=True, query=True, replicated=True, timeout=timeout, hooks=self.hooks))
        world.add_agent(client_id, [t("client", client_id)], self.ruleset_id)
        world.trigger_handlers[client_id] = self.on_trigger

    # -- submission -------------------------------------------------------------
    def on_trigger(self, term) -> bool:
        name = op_name(term)
        if name not in _ARITY:
            return False
        if name in ("suspend", "resume") and isinstance(term, Term) and len(term.args) == 1:
            getattr(self.world, name)(term.args[0])
            return True
        self.submit(term)
        return True

    def submit(self, op) -> OpRecord:
        record = OpRecord(len(self.records) + 1, op, self.client_id, submitted_at=self.world.now)
        self.records.append(record)
        try:
            if parse_op(op)[0] in ("suspend", "resume"):
                raise BankingError("fault triggers act on the world, not through a client")
        except BankingError as exc:
            log.warning("rejected %s: %s", render(op), exc)
            record.outcome = "rejected"
            record.finished_at = self.world.now
            return record
        self.pending.append(record)
        if self.current is None:
            self._start_next()
        return record

    @property
    def idle(self) -> bool:
        return self.current is None and not self.pending

    def _start_next(self):
        if not self.pending:
            self.current = None
            return
        self.current = self.pending.popleft()
        self.current.started_at = self.world.now
        self._plan = self._make_plan(self.current)
        self._resume(None)

    def _resume(self, value):
        record = self.current
        try:
            step = self._plan.send(value)
        except StopIteration as stop:
            record.outcome = stop.value
            record.finished_at = self.world.now
            self.current = None
            self.step = None
            self._start_next()
            return
        step.issued_at = self.world.now
        record.steps.append(step)
        self.step = step
        self._trigger_seq += 1
        trigger = t("trigger", self._trigger_seq, step.style, step.params)
        # delivered through the event queue: hooks never touch pools directly
        self.world.schedule(self.world.now, Delivery(self.client_id, trigger, None))

    def _finish(self, step, decision):
        step.decision = decision
        step.decided_at = self.world.now
        step.done = True
        self.step = None
        self._resume(step)

    # -- hooks ----------------------------------------------------------------
    def _issued(self, client, corr, params):
        step = self.step
        if step is not None and step.corr is None and params == step.params:
            step.corr = corr
            self._by_corr[corr] = step

    def _consume(self, server, corr, result, info):
        # late follow-ups still count against their (finished) step
        step = self._by_corr.get(corr)
        if step is None:
            return True
        if info.follow_up:
            step.follow_ups += 1
        if step.done or step is not self.step:
            return True
        if step.style == "rpc":
            step.replies.setdefault(server, result)
        elif not info.follow_up:
            step.stream.append(result)
            if info.tag is not None and info.tag.is_last:
                self._finish(step, COMMIT)
        return True

    def _policy(self, client, corr, seen, rule):
        step = self.step
        if step is None or step.corr != corr or step.done:
            return COMMIT if seen else ABORT
        if step.style == "query":
            decision = COMMIT if step.stream else ABORT
        else:
            decision = self._write_decision(step)
        self._finish(step, decision)
        return decision

    def _write_decision(self, step) -> str:
        n = self.replicas.get(step.bank, 0)
        if n == 0 or step.errors:
            return ABORT
        return majority_policy(n, [s for s, r in step.replies.items() if not is_err(r)])

    # -- plans ----------------------------------------------------------------
    def _make_plan(self, record):
        name, args = parse_op(record.op)
        if name == "transfer":
            return self._plan_transfer(*args)
        if name == "lookup":
            return self._plan_lookup(record, args)
        return self._plan_write(record.op)

    def _rollback(self, bank, step):
        return Step("rpc", bank, t("rollback", bank, step.corr))

    def _plan_write(self, op):
        bank = op.args[0]
        step = yield Step("rpc", bank, op)
        if step.decision == COMMIT:
            return "committed"
        yield self._rollback(bank, step)
        if "overdraft" in step.errors:
            return "aborted-overdraft"
        return "aborted"

    def _plan_transfer(self, b1, a1, amount, b2, a2):
        out = yield Step("rpc", b1, t("transfer-out", b1, a1, amount))
        if out.decision != COMMIT:
            yield self._rollback(b1, out)
            return "aborted"
        into = yield Step("rpc", b2, t("transfer-in", b2, a2, amount))
        if into.decision == COMMIT:
            return "committed"
        yield self._rollback(b2, into)
        back = yield Step("rpc", b1, t("deposit", b1, a1, amount))
        if back.decision == COMMIT:
            return "aborted"
        yield self._rollback(b1, back)
        return "aborted-uncompensated"

    def _plan_lookup(self, record, args):
        banks = [args[0]] if args else sorted(self.replicas)
        for bank in banks:
            params = t("lookup", *args) if args else t("lookup", bank)
            step = yield Step("query", bank, params)
            record.result.extend(r for r in step.stream if r != EMPTY)
        return "done"


class BankingSystem:
    """A simulated deployment: banks with replicated servers plus clients.

    ``banks`` maps a bank name to ``(replica_count, {account: balance})``.
    Server ids are ``<bank>-r<i>``.  The write timeout defaults to twice the
    maximum link delay plus one, so fault-free writes always decide after every
    replica has answered.
    """

    def __init__(self, banks: dict, clients=("c1",), seed: int = 0, delay=(1, 1),
                 drop=0, timeout=None, record: bool = True):
        lo, hi = as_time(delay[0]), as_time(delay[1])
        self.world = SimWorld(seed, NetPolicy(lo, hi, drop, seed))
        self.world.record = record
        self.world.discard_inert = True
        self.timeout = as_time(timeout) if timeout is not None else 2 * hi + 1
        if self.timeout <= 0:
            raise SimError("timeout must be positive")
        self.initial = {}
        self.replicas = {}
        for bank, (count, accounts) in sorted(banks.items()):
            if count < 1:
                raise BankingError(f"bank {bank} needs at least one replica")
            self.initial[bank] = dict(accounts)
            self.replicas[bank] = []
            for i in range(1, count + 1):
                sid = f"{bank}-r{i}"
                replica = Replica(sid, bank, accounts)
                self.world.add_ruleset(f"server:{sid}", make_rpc_server_rules(replica.hooks)
                                       + make_query_server_rules(replica.hooks),
                                       ignores=replica.ignores)
                self.world.add_agent(sid, [t("server", sid)], f"server:{sid}")
                self.replicas[bank].append(replica)
        counts = {b: len(r) for b, r in self.replicas.items()}
        self.clients = {}
        for cid in clients:
            self.add_client(cid, counts)

    def add_client(self, client_id, counts=None):
        if client_id in self.clients:
            return self.clients[client_id]
        counts = counts or {b: len(r) for b, r in self.replicas.items()}
        client = BankClient(self.world, client_id, counts, self.timeout)
        self.clients[client_id] = client
        return client

    def replica(self, server_id) -> Replica:
        for reps in self.replicas.values():
            for r in reps:
                if r.server_id == server_id:
                    return r
        raise KeyError(server_id)

    # -- scheduling -------------------------------------------------------------
    def submit(self, client_id, op, at=None):
        self.add_client(client_id)
        self.world.inject(client_id, op, at)

    def suspend(self, site, at=None):
        self.world.schedule(self.world.now if at is None else at, FaultCmd("suspend", (site,)))

    def resume(self, site, at=None):
        self.world.schedule(self.world.now if at is None else at, FaultCmd("resume", (site,)))

    def run(self, max_events=None) -> bool:
        return self.world.advance(max_events)

    # -- views ------------------------------------------------------------------
    def records(self):
        out = []
        for cid in sorted(self.clients):
            out.extend(self.clients[cid].records)
        return out

    def outcomes(self):
        return [r.outcome for r in self.records()]

    def reference(self, bank) -> Replica:
        """A replica whose state stands for the bank: the first one that is
        not suspended, else the first."""
        reps = self.replicas[bank]
        for r in reps:
            if r.server_id not in self.world.suspended:
                return r
        return reps[0]

    def balances(self) -> dict:
        out = {}
        for bank in sorted(self.replicas):
            for a, bal in self.reference(bank).ledger.balances().items():
                out[(bank, a)] = bal
        return out

    def snapshot_lines(self):
        lines = []
        for bank in sorted(self.replicas):
            for r in self.replicas[bank]:
                lines.append(f"# replica {r.server_id}")
                for a, acct in sorted(r.ledger.accounts.items()):
                    lines.append(f"{bank} {a} {acct.balance} {acct.version}")
        return lines

    def statement_lines(self):
        lines = []
        for bank in sorted(self.replicas):
            for r in self.replicas[bank]:
                lines.append(f"# replica {r.server_id}")
                for a, acct in sorted(r.ledger.accounts.items()):
                    for i, e in enumerate(acct.statements, 1):
                        lines.append(f"{bank} {a} {i} {e.kind} {e.amount} "
                                     f"{e.resulting_balance} {render(e.correlation)}")
        return lines
