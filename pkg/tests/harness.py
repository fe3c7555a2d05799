"""Small builders shared by the tests: servers, clients, a consume recorder."""

from dataclasses import dataclass, field

from lokit.kernel import site_of

ACCEPTANCE = []     # one "PASS/FAIL criterion ..." line per acceptance test
from lokit.simnet import NetPolicy, SimWorld
from lokit.terms import t
from lokit.toolkit import (
    CommHooks, make_client_ruleset, make_query_server_rules, make_rpc_server_rules,
)


@dataclass
class Recorder:
    """Client-side hooks that log every consume and policy call."""
    consumes: list = field(default_factory=list)     # (server, corr, result, info)
    positions: list = field(default_factory=list)    # firing index of each consume
    policies: list = field(default_factory=list)     # (rule, corr, seen, time)
    policy: object = None
    world: object = None

    def hooks(self) -> CommHooks:
        def consume(server, corr, result, info):
            self.consumes.append((server, corr, result, info))
            self.positions.append(len(self.world.firings) if self.world else None)
            return True

        def some_policy(client, corr, seen, rule):
            self.policies.append((rule, corr, list(seen), self.world.now if self.world else None))
            if self.policy is not None:
                return self.policy(client, corr, seen, rule)
            return "commit" if seen else "abort"

        return CommHooks(consume=consume, some_policy=some_policy)

    def main(self):
        return [c for c in self.consumes if not c[3].follow_up]

    def follow_ups(self):
        return [c for c in self.consumes if c[3].follow_up]


def make_world(seed=0, delay=(1, 1), delay_fn=None, drop=0) -> SimWorld:
    return SimWorld(seed, NetPolicy(delay[0], delay[1], drop, seed, delay_fn=delay_fn))


def add_servers(world, n, produce=None, produce_stream=None, prefix="s", start=0):
    """``n`` servers sharing one rule set.  Default RPC result: the last
    parameter; default stream: the parameter's arguments."""
    if produce is None:
        def produce(server, corr, params):
            return params.args[-1] if getattr(params, "args", None) else params
    if produce_stream is None:
        def produce_stream(server, corr, params):
            return list(params.args) if getattr(params, "args", None) else [params]
    hooks = CommHooks(produce=produce, produce_stream=produce_stream)
    rs = f"server-{prefix}"
    if rs not in world.rulesets:
        world.add_ruleset(rs, make_rpc_server_rules(hooks) + make_query_server_rules(hooks))
    ids = []
    for i in range(start, start + n):
        sid = f"{prefix}{i}"
        world.add_agent(sid, [t("server", sid)], rs)
        ids.append(sid)
    return ids


def add_client(world, cid="c1", rpc=True, query=False, replicated=False, timeout=None,
               first_only=False, cleanup=True):
    rec = Recorder(world=world)
    rules = make_client_ruleset(rpc=rpc, query=query, replicated=replicated, timeout=timeout,
                                hooks=rec.hooks(), first_only=first_only, cleanup=cleanup)
    world.add_ruleset(f"client-{cid}", rules)
    world.add_agent(cid, [t("client", cid)], f"client-{cid}")
    return rec


def trigger(world, cid, style, params, seq=1, at=None):
    world.inject(cid, t("trigger", seq, style, params), at)


def client_agents(world, cid="c1"):
    return [a for a in world.live_agents() if site_of(a.agent_id) == cid]


def states(world, cid="c1"):
    """Client state terms (``client(...)``) held by agents at ``cid``'s site."""
    out = []
    for a in client_agents(world, cid):
        out.extend(x for x in a.pool.distinct() if getattr(x, "functor", None) == "client")
    return out


def reply_key(term):
    """(server, reply number) of a query reply term, else None."""
    if getattr(term, "functor", None) != "msg-reply" or len(term.args) < 4:
        return None
    if term.args[1] == "last":
        return term.args[0], term.args[2]
    return term.args[0], term.args[1]


def query_run(arrival, n_servers=1, n_replies=3, replicated=False, timeout=None,
              seed=0, first_only=False):
    """One query against ``n_servers`` servers streaming ``n_replies`` results
    each.  ``arrival[(server, k)]`` is the delay of reply k of that server;
    every other message takes one second."""
    def delay_fn(sender, receiver, term):
        key = reply_key(term)
        return arrival.get(key, 1) if key else 1

    world = make_world(seed=seed, delay_fn=delay_fn)

    def stream(server, corr, params):
        return [t("r", server, k) for k in range(1, n_replies + 1)]

    add_servers(world, n_servers, produce_stream=stream)
    rec = add_client(world, rpc=False, query=True, replicated=replicated, timeout=timeout,
                     first_only=first_only)
    trigger(world, "c1", "query", t("q"))
    world.advance()
    return world, rec


def consume_orders(rec):
    """Reply numbers consumed, per server, in consumption order."""
    out = {}
    for server, _, _, info in rec.consumes:
        out.setdefault(server, []).append(info.tag.reply_no)
    return out


UNBLOCK_RULES = {"Q4", "Q4e", "Qr4", "Qr4e", "Qr6"}


def unblock_ok(world, rec, n_replies):
    """The ready client reappears exactly once, and only after a complete
    stream (replies 1..n of one server) went through the main client."""
    unblocks = [i for i, f in enumerate(world.firings) if f.rule in UNBLOCK_RULES]
    if len(unblocks) != 1:
        return False
    main = [c for c, pos in zip(rec.consumes, rec.positions)
            if not c[3].follow_up and pos <= unblocks[0]]
    return (len({c[0] for c in main}) == 1
            and [c[3].tag.reply_no for c in main] == list(range(1, n_replies + 1)))
