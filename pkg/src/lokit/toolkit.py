"""Generic communication rule sets: RPC and query connections, with and
without server replication, with optional timer control.

Rule names are the labels used in traces (``R1``, ``Rr3_t``, ``Qr10``, ``T``).
Application behaviour enters through :class:`CommHooks`: ``produce`` and
``produce_stream`` on servers, ``consume`` and ``some_policy`` on clients.

Resource vocabulary::

    client(C)                         ready client
    client(C, blocked, Id)            RPC client waiting for the first reply
    client(C, catch-follow-up-replies, Id)
    client(C, blocked(K), Id)         query client waiting for reply K
    client(C, blocked(S, K), Id)      ... for reply K of first server S
    client(C, blocked-other-server(1), Id)
    client(C, blocked-other-server(S, K), Id)
    trigger(Seq, rpc|query, Params)   request to start a connection
    msg-request(Id, Params)           msg-query(Id, Params)
    msg-reply(S, Id, Result)          RPC reply
    msg-reply(S, K, Id, Result)       query reply K
    msg-reply(S, last, N, Id, Result) last query reply
    timer(C, Id, T)   timeout(C, Id)
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, NamedTuple, Optional

from .kernel import Guard, Rule, site_of
from .simnet import SimError, as_time
from .terms import Term, Var, t

__all__ = [
    "COMMIT", "ABORT", "CommHooks", "ReplyInfo", "TimerSpec", "CorrelationId",
    "ReplyTag", "majority_policy", "first_reply_policy",
    "make_rpc_client_rules", "make_rpc_server_rules",
    "make_query_client_rules", "make_query_server_rules",
    "make_timer_rules", "make_cleanup_rules", "make_client_ruleset",
    "set_timer", "correlation", "EMPTY",
]

COMMIT = "commit"
ABORT = "abort"
EMPTY = "empty"

RPC_KIND = "rpc"
QUERY_KIND = "query"
CATCH = "catch-follow-up-replies"
BLOCKED = "blocked"
OTHER = "blocked-other-server"

C, Id, P, K, S, R = Var("C"), Var("Id"), Var("P"), Var("K"), Var("S"), Var("R")
N, N1, T, Stream = Var("N"), Var("N1"), Var("T"), Var("Stream")


class CorrelationId(NamedTuple):
    origin: str
    counter: int
    kind: str


def correlation(term: Term) -> CorrelationId:
    """Decode an ``rpc(C, n)`` / ``query(C, n)`` identifier."""
    return CorrelationId(term.args[0], term.args[1], term.functor)


class ReplyTag(NamedTuple):
    reply_no: int
    is_last: bool


class ReplyInfo(NamedTuple):
    rule: str
    follow_up: bool
    tag: Optional[ReplyTag] = None


def majority_policy(total_servers: int, replies) -> str:
    """Commit iff more than half of ``total_servers`` distinct servers replied."""
    if total_servers < 1:
        raise ValueError("majority needs at least one server")
    return COMMIT if 2 * len(set(replies)) > total_servers else ABORT


def first_reply_policy(client, corr, replies, rule) -> str:
    return COMMIT if replies else ABORT


@dataclass
class CommHooks:
    """Application callbacks.  Every callback is optional.

    ``accepts(server, params)``            should this server serve the request?
    ``produce(server, corr, params)``      -> result term
    ``produce_stream(server, corr, params)`` -> list of result terms
    ``consume(server, corr, result, info)``  -> bool
    ``some_policy(client, corr, seen, rule)``  -> COMMIT | ABORT, where
                                           ``seen`` lists (server, result)
    ``issued(client, corr, params)``       a fresh id was handed out

    ``replies`` maps each correlation term to the ``(server, result)`` pairs
    consumed so far; ``decisions`` logs every policy call.
    """
    accepts: Optional[Callable] = None
    produce: Optional[Callable] = None
    produce_stream: Optional[Callable] = None
    consume: Optional[Callable] = None
    some_policy: Optional[Callable] = None
    issued: Optional[Callable] = None
    replies: dict = field(default_factory=dict)
    decisions: list = field(default_factory=list)


def _hooks(hooks):
    return hooks if hooks is not None else CommHooks()


# -- guards ---------------------------------------------------------------

def _fresh_id(kind, hooks):
    def fn(b, ctx):
        b = dict(b)
        origin = b["C"]
        if ctx.world is not None:
            b["Id"] = ctx.world.fresh_id(kind, origin)
        else:
            b["Id"] = Term(kind, (origin, 0))
        if hooks.issued is not None:
            hooks.issued(origin, b["Id"], b["P"])
        return b
    name = "GET-UNIQUE-RPC-ID" if kind == RPC_KIND else "GET-UNIQUE-QUERY-ID"
    return Guard(name, fn, binds=("Id",))


def _accepts(hooks, negate=False):
    def fn(b, ctx):
        ok = hooks.accepts is None or bool(hooks.accepts(b["S"], b["P"]))
        return b if ok != negate else None
    return Guard("NOT-MINE" if negate else "ACCEPTS", fn)


def _failure(exc) -> Term:
    return t("err", str(exc) or type(exc).__name__)


def _produce(hooks):
    def fn(b, ctx):
        try:
            result = hooks.produce(b["S"], b["Id"], b["P"]) if hooks.produce else b["P"]
        except Exception as exc:  # failure travels back as err(reason)
            result = _failure(exc)
        if result is None:
            return None
        b = dict(b)
        b["R"] = result
        return b
    return Guard("PRODUCE", fn, binds=("R",))


def _produce_stream(hooks):
    def fn(b, ctx):
        try:
            results = (hooks.produce_stream(b["S"], b["Id"], b["P"])
                       if hooks.produce_stream else [b["P"]])
        except Exception as exc:
            results = [_failure(exc)]
        if results is None:
            return None
        b = dict(b)
        b["Stream"] = Term("stream", results)
        return b
    return Guard("PRODUCE", fn, binds=("Stream",))


def _stream_next(last: bool):
    def fn(b, ctx):
        k, stream = b["K"], b["Stream"]
        n = len(stream.args)
        if not 1 <= k <= n or (k == n) != last:
            return None
        b = dict(b)
        b["R"] = stream.args[k - 1]
        b["N1"] = k + 1
        return b
    return Guard("LAST-RESULT" if last else "NEXT-RESULT", fn, binds=("R", "N1"))


def _consume(hooks, follow_up, last=None, reply_no=None):
    def fn(b, ctx):
        server, corr, result = b["S"], b["Id"], b["R"]
        tag = None
        if last is not None:
            tag = ReplyTag(reply_no if reply_no is not None else b["N"], last)
        info = ReplyInfo(ctx.rule.name, follow_up, tag)
        if hooks.consume is not None and not hooks.consume(server, corr, result, info):
            return None
        hooks.replies.setdefault(corr, []).append((server, result))
        return b
    return Guard("CONSUME", fn)


def _succ():
    def fn(b, ctx):
        b = dict(b)
        b["N1"] = b["N"] + 1
        return b
    return Guard("SUCC", fn, binds=("N1",))


def _some_policy(hooks):
    def fn(b, ctx):
        corr = b["Id"]
        seen = hooks.replies.get(corr, [])
        policy = hooks.some_policy or first_reply_policy
        decision = policy(b["C"], corr, list(seen), ctx.rule.name)
        hooks.decisions.append((ctx.rule.name, corr, decision))
        b = dict(b)
        b["Decision"] = decision
        return b
    return Guard("SOME-POLICY", fn, binds=("Decision",))


def _wait():
    def fn(b, ctx):
        if ctx.world is None:
            return b
        key = (b["C"], b["Id"])
        return b if ctx.world.wait_elapsed(ctx.agent.agent_id, key, b["T"]) else None
    return Guard("WAIT", fn)


# -- client states ------------------------------------------------------------

def _ready():
    return t("client", C)


def _state(state, ident=Id):
    return t("client", C, state, ident)


def _trigger(style):
    return t("trigger", K, style, P)


def _initiate(name, kind, hooks, request, waiting, timeout):
    groups = [[waiting]]
    if timeout is not None:
        groups.append([t("timer", C, Id, as_time(timeout))])
    return Rule(name, [_ready(), _trigger(kind)], [_fresh_id(kind, hooks)],
                groups, [t(request, Id, P)])


def _check_timeout(timeout):
    if timeout is not None and as_time(timeout) <= 0:
        raise SimError("timeout must be positive")


# -- RPC ------------------------------------------------------------------

def make_rpc_client_rules(replicated: bool = False, timeout=None, hooks=None):
    """Client side of an RPC connection.

    plain: R1, R3; replicated: Rr1, Rr3, Rr4.  With ``timeout`` the
    initiation rule is the timer-setting variant (R1_t / Rr1_t) and the
    timeout handlers (R3_t / Rr3_t, Rr4_t) are added.
    """
    _check_timeout(timeout)
    hooks = _hooks(hooks)
    timed = timeout is not None
    prefix = "Rr" if replicated else "R"
    reply = t("msg-reply", S, Id, R)
    rules = [_initiate(f"{prefix}1" + ("_t" if timed else ""), RPC_KIND, hooks,
                       "msg-request", _state(BLOCKED), timeout)]
    if replicated:
        rules.append(Rule("Rr3", [_state(BLOCKED), reply], [_consume(hooks, False)],
                          [[_ready()], [_state(CATCH)]]))
        rules.append(Rule("Rr4", [_state(CATCH), reply], [_consume(hooks, True)],
                          [[_state(CATCH)]]))
    else:
        rules.append(Rule("R3", [_state(BLOCKED), reply], [_consume(hooks, False)],
                          [[_ready()]]))
    if timed:
        expired = t("timeout", C, Id)
        rules.append(Rule(f"{prefix}3_t", [_state(BLOCKED), expired],
                          [_some_policy(hooks)], [[_ready()]]))
        if replicated:
            rules.append(Rule("Rr4_t", [_state(CATCH), expired],
                              [_some_policy(hooks)], []))
    return rules


def make_rpc_server_rules(hooks=None):
    """R2: serve a request and broadcast the reply.  Requests the server
    does not accept are absorbed by R2_skip."""
    hooks = _hooks(hooks)
    server = t("server", S)
    request = t("msg-request", Id, P)
    return [
        Rule("R2", [server, request], [_accepts(hooks), _produce(hooks)],
             [[server]], [t("msg-reply", S, Id, R)]),
        Rule("R2_skip", [server, request], [_accepts(hooks, negate=True)], [[server]]),
    ]


# -- query ----------------------------------------------------------------

def make_query_client_rules(replicated: bool = False, timeout=None, hooks=None,
                            first_only: bool = False):
    """Client side of a query connection (multiple replies per server).

    Replies are consumed strictly by reply number; an early last reply waits
    in the pool until its predecessors are consumed.  ``first_only`` drops the
    blocked-other-server continuation, ignoring every server but the first.
    The ``*e`` rules handle a server whose stream is empty (last reply 0).
    """
    _check_timeout(timeout)
    hooks = _hooks(hooks)
    timed = timeout is not None
    suffix = "_t" if timed else ""
    expired = t("timeout", C, Id)
    last_reply = t("msg-reply", S, "last", N, Id, R)
    empty_reply = t("msg-reply", S, "last", 0, Id, R)

    if not replicated:
        rules = [
            _initiate("Q1" + suffix, QUERY_KIND, hooks, "msg-query",
                      _state(t(BLOCKED, 1)), timeout),
            Rule("Q3", [_state(t(BLOCKED, N)), t("msg-reply", S, N, Id, R)],
                 [_consume(hooks, False, False), _succ()], [[_state(t(BLOCKED, N1))]]),
            Rule("Q4", [_state(t(BLOCKED, N)), last_reply],
                 [_consume(hooks, False, True)], [[_ready()]]),
            Rule("Q4e", [_state(t(BLOCKED, 1)), empty_reply], [], [[_ready()]]),
        ]
        if timed:
            rules += [
                Rule("Q3_t", [_state(t(BLOCKED, 1)), expired],
                     [_some_policy(hooks)], [[_ready()]]),
                Rule("Q4_t", [_state(t(BLOCKED, N)), expired],
                     [_some_policy(hooks)], [[_ready()]]),
            ]
        return rules

    waiting_first = _state(t(BLOCKED, 1))
    waiting_other = _state(t(OTHER, 1))
    first_server = _state(t(BLOCKED, S, N))
    other_server = _state(t(OTHER, S, N))

    if first_only:
        after_first = [[_state(t(BLOCKED, S, 2))]]
        first_and_last = [[_ready()]]
    else:
        after_first = [[waiting_other], [_state(t(BLOCKED, S, 2))]]
        first_and_last = [[_ready()], [waiting_other]]

    rules = [
        _initiate("Qr1" + suffix, QUERY_KIND, hooks, "msg-query", waiting_first, timeout),
        Rule("Qr3", [waiting_first, t("msg-reply", S, 1, Id, R)],
             [_consume(hooks, False, False, 1)], after_first),
        Rule("Qr4", [waiting_first, t("msg-reply", S, "last", 1, Id, R)],
             [_consume(hooks, False, True, 1)], first_and_last),
        Rule("Qr4e", [waiting_first, empty_reply], [], first_and_last),
        Rule("Qr5", [first_server, t("msg-reply", S, N, Id, R)],
             [_consume(hooks, False, False), _succ()], [[_state(t(BLOCKED, S, N1))]]),
        Rule("Qr6", [first_server, last_reply],
             [_consume(hooks, False, True)], [[_ready()]]),
        Rule("Qr7", [waiting_other, t("msg-reply", S, 1, Id, R)],
             [_consume(hooks, True, False, 1)],
             [[waiting_other], [_state(t(OTHER, S, 2))]]),
        Rule("Qr8", [waiting_other, t("msg-reply", S, "last", 1, Id, R)],
             [_consume(hooks, True, True, 1)], [[waiting_other]]),
        Rule("Qr8e", [waiting_other, empty_reply], [], [[waiting_other]]),
        Rule("Qr9", [other_server, t("msg-reply", S, N, Id, R)],
             [_consume(hooks, True, False), _succ()], [[_state(t(OTHER, S, N1))]]),
        Rule("Qr10", [other_server, last_reply], [_consume(hooks, True, True)], []),
    ]
    if timed:
        rules += [
            Rule("Qr3_t", [waiting_first, expired], [_some_policy(hooks)], [[_ready()]]),
            Rule("Qr4_t", [first_server, expired], [_some_policy(hooks)], [[_ready()]]),
            Rule("Qr5_t", [waiting_other, expired], [_some_policy(hooks)], []),
            Rule("Qr6_t", [other_server, expired], [_some_policy(hooks)], []),
        ]
    return rules


def make_query_server_rules(hooks=None):
    """Q2 as a small rule set: compute the whole result stream, then emit
    one reply per step, the final one tagged ``last``.  An empty stream
    yields the single reply ``msg-reply(S, last, 0, Id, empty)``."""
    hooks = _hooks(hooks)
    server = t("server", S)
    query = t("msg-query", Id, P)
    producing = t("producing", S, Id, K, Stream)
    return [
        Rule("Q2", [server, query], [_accepts(hooks), _produce_stream(hooks)],
             [[server, t("producing", S, Id, 1, Stream)]]),
        Rule("Q2_skip", [server, query], [_accepts(hooks, negate=True)], [[server]]),
        Rule("Q2_next", [producing], [_stream_next(last=False)],
             [[t("producing", S, Id, N1, Stream)]], [t("msg-reply", S, K, Id, R)]),
        Rule("Q2_last", [producing], [_stream_next(last=True)],
             [[]], [t("msg-reply", S, "last", K, Id, R)]),
        Rule("Q2_empty", [t("producing", S, Id, 1, Term("stream", ()))], [],
             [[]], [t("msg-reply", S, "last", 0, Id, EMPTY)]),
    ]


# -- timers -----------------------------------------------------------------

@dataclass(frozen=True)
class TimerSpec:
    owner: str
    correlation: object
    T: Fraction

    def __post_init__(self):
        if as_time(self.T) <= 0:
            raise SimError("timer needs T > 0")


def make_timer_rules():
    """T: after waiting T, broadcast timeout(C, Id) and terminate."""
    return [Rule("T", [t("timer", C, Id, T)], [_wait()], [], [t("timeout", C, Id)])]


def set_timer(world, timer: TimerSpec, ruleset_id: str = "timer"):
    """Start a timer agent at the owner's site; it expires at now + T."""
    if ruleset_id not in world.rulesets:
        world.add_ruleset(ruleset_id, make_timer_rules())
    T_ = as_time(timer.T)
    agent = world.spawn_agent(site_of(timer.owner),
                              [t("timer", timer.owner, timer.correlation, T_)], ruleset_id)
    if hasattr(world, "arm_timer"):
        world.arm_timer(agent.agent_id, (timer.owner, timer.correlation), T_)
    return agent


def make_cleanup_rules(styles=("rpc", "query")):
    """Garbage collection for a ready client: stale timeouts and replies
    that no ready client can ever use (identifiers are never reused)."""
    rules = [Rule("gc_timeout", [_ready(), t("timeout", C, Id)], [], [[_ready()]])]
    if "rpc" in styles:
        rules.append(Rule("gc_reply", [_ready(), t("msg-reply", S, Id, R)], [], [[_ready()]]))
    if "query" in styles:
        rules.append(Rule("gc_qreply", [_ready(), t("msg-reply", S, N, Id, R)], [], [[_ready()]]))
        rules.append(Rule("gc_qlast", [_ready(), t("msg-reply", S, "last", N, Id, R)],
                          [], [[_ready()]]))
    return rules


def make_client_ruleset(rpc: bool = True, query: bool = False, replicated: bool = False,
                        timeout=None, hooks=None, first_only: bool = False,
                        cleanup: bool = True):
    """Deployable client rule set: the chosen connection styles, the timer
    rule when timed, and the cleanup rules."""
    rules = []
    styles = []
    if rpc:
        rules += make_rpc_client_rules(replicated, timeout, hooks)
        styles.append("rpc")
    if query:
        rules += make_query_client_rules(replicated, timeout, hooks, first_only)
        styles.append("query")
    if timeout is not None:
        rules += make_timer_rules()
    if cleanup:
        rules += make_cleanup_rules(styles)
    return rules
