"""Line-oriented scenario files.

Grammar (one directive per line, ``#`` starts a comment)::

    seed <n>
    delay <min> <max>                 link delay range, seconds
    drop <p>                          message drop probability
    timer <T>                         write/read timeout, seconds
    bank <name> replicas <n>
    account <bank> <account> <balance>
    client <name>
    trigger <agent> <term> at <t>
    suspend <agent> at <t>
    resume <agent> at <t>
    partition <a,b,...>|<c,...> at <t>
    heal at <t>

Times and probabilities accept integers, decimals or ``n/d``.  Clients named
by a trigger are created on first use.  ``trigger`` terms are the banking
tasks (``deposit(b1,a1,50)``, ``look-up(b1)``, ``suspend(b1-r2)``, ...).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from typing import Optional

from .banking import BankingSystem, op_name
from .simnet import FaultCmd
from .terms import Term, TermSyntaxError, is_ground, parse

__all__ = ["Scenario", "ScenarioError", "parse_scenario", "load_scenario"]


class ScenarioError(ValueError):
    def __init__(self, message, line_no=None):
        self.line_no = line_no
        super().__init__(f"line {line_no}: {message}" if line_no else message)


@dataclass
class Scenario:
    seed: int = 0
    delay: tuple = (Fraction(1), Fraction(1))
    drop: Fraction = Fraction(0)
    timeout: Optional[Fraction] = None
    banks: dict = field(default_factory=dict)       # name -> [replicas, {account: balance}]
    clients: list = field(default_factory=list)
    schedule: list = field(default_factory=list)    # (time, kind, target, payload)

    @property
    def fault_free(self) -> bool:
        return not self.drop and not any(
            kind in ("suspend", "resume", "partition", "heal")
            or (kind == "trigger" and op_name(payload) in ("suspend", "resume"))
            for _, kind, _, payload in self.schedule)

    def server_ids(self):
        return {f"{b}-r{i}" for b, (n, _) in self.banks.items() for i in range(1, n + 1)}

    def build(self, record: bool = True) -> BankingSystem:
        system = BankingSystem({b: (n, accts) for b, (n, accts) in self.banks.items()},
                               clients=self.clients, seed=self.seed, delay=self.delay,
                               drop=self.drop, timeout=self.timeout, record=record)
        world = system.world
        for at, kind, target, payload in self.schedule:
            if kind == "trigger":
                system.submit(target, payload, at)
            elif kind == "partition":
                world.schedule(at, FaultCmd("partition", (payload,)))
            elif kind == "heal":
                world.schedule(at, FaultCmd("heal", ()))
            else:
                world.schedule(at, FaultCmd(kind, (target,)))
        return system


def _number(text, what, line_no, cls=Fraction):
    try:
        value = cls(text)
    except (ValueError, ZeroDivisionError):
        raise ScenarioError(f"bad {what} {text!r}", line_no) from None
    if value < 0:
        raise ScenarioError(f"{what} must not be negative", line_no)
    return value


def _split_at(rest, line_no):
    head, sep, when = rest.rpartition(" at ")
    if not sep:
        raise ScenarioError("missing 'at <time>'", line_no)
    return head.strip(), _number(when.strip(), "time", line_no)


def parse_scenario(text: str) -> Scenario:
    sc = Scenario()
    for line_no, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        word, _, rest = line.partition(" ")
        rest = rest.strip()
        args = rest.split()
        if word == "seed" and len(args) == 1:
            sc.seed = _number(args[0], "seed", line_no, int)
        elif word == "delay" and len(args) == 2:
            lo, hi = (_number(a, "delay", line_no) for a in args)
            if hi < lo:
                raise ScenarioError("delay max below min", line_no)
            sc.delay = (lo, hi)
        elif word == "drop" and len(args) == 1:
            sc.drop = _number(args[0], "drop probability", line_no)
            if sc.drop > 1:
                raise ScenarioError("drop probability above 1", line_no)
        elif word == "timer" and len(args) == 1:
            sc.timeout = _number(args[0], "timer", line_no)
            if sc.timeout == 0:
                raise ScenarioError("timer must be positive", line_no)
        elif word == "bank" and len(args) == 3 and args[1] == "replicas":
            n = _number(args[2], "replica count", line_no, int)
            if n < 1:
                raise ScenarioError("a bank needs at least one replica", line_no)
            if args[0] in sc.banks:
                raise ScenarioError(f"bank {args[0]} declared twice", line_no)
            sc.banks[args[0]] = [n, {}]
        elif word == "account" and len(args) == 3:
            bank, acct = args[0], args[1]
            if bank not in sc.banks:
                raise ScenarioError(f"unknown bank {bank}", line_no)
            if acct in sc.banks[bank][1]:
                raise ScenarioError(f"account {bank} {acct} declared twice", line_no)
            sc.banks[bank][1][acct] = _number(args[2], "balance", line_no, int)
        elif word == "client" and len(args) == 1:
            if args[0] not in sc.clients:
                sc.clients.append(args[0])
        elif word == "trigger" and args:
            head, at = _split_at(rest, line_no)
            agent, _, term_text = head.partition(" ")
            try:
                term = parse(term_text.strip())
            except TermSyntaxError as exc:
                raise ScenarioError(str(exc), line_no) from None
            if not is_ground(term) or not isinstance(term, (Term, str)):
                raise ScenarioError(f"trigger term must be a ground term: {term_text}", line_no)
            sc.schedule.append((at, "trigger", agent, term))
        elif word in ("suspend", "resume") and args:
            agent, at = _split_at(rest, line_no)
            sc.schedule.append((at, word, agent, None))
        elif word == "partition" and args:
            groups_text, at = _split_at(rest, line_no)
            groups = [frozenset(g.strip() for g in part.split(",") if g.strip())
                      for part in groups_text.split("|")]
            if len(groups) < 2 or not all(groups):
                raise ScenarioError("partition needs at least two non-empty groups", line_no)
            sc.schedule.append((at, "partition", None, groups))
        elif word == "heal":
            if not rest.startswith("at "):
                raise ScenarioError("expected 'heal at <time>'", line_no)
            sc.schedule.append((_number(rest[3:].strip(), "time", line_no), "heal", None, None))
        else:
            raise ScenarioError(f"cannot parse {line!r}", line_no)
    _validate(sc)
    return sc


def _validate(sc: Scenario):
    servers = sc.server_ids()
    for name in sc.clients:
        if name in servers or name in sc.banks:
            raise ScenarioError(f"client {name} clashes with a bank or server name")
    for _, kind, target, payload in sc.schedule:
        if kind == "trigger":
            if target in servers:
                raise ScenarioError(f"trigger sent to server {target}; triggers go to clients")
            if target not in sc.clients:
                sc.clients.append(target)
    sites = servers | set(sc.clients)
    for _, kind, target, payload in sc.schedule:
        names = []
        if kind in ("suspend", "resume"):
            names = [target]
        elif kind == "trigger" and op_name(payload) in ("suspend", "resume"):
            names = [a for a in payload.args[:1]] if isinstance(payload, Term) else []
        for n in names:
            if n not in sites:
                raise ScenarioError(f"{kind} names unknown agent {n}")


def load_scenario(path) -> Scenario:
    with open(path, encoding="utf-8") as fh:
        return parse_scenario(fh.read())
