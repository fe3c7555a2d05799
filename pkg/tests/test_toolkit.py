from fractions import Fraction
from itertools import permutations

import pytest

from lokit.kernel import site_of
from lokit.simnet import SimError
from lokit.terms import t
from lokit.toolkit import (
    ABORT, COMMIT, CommHooks, TimerSpec, majority_policy, make_query_client_rules,
    make_query_server_rules, make_rpc_client_rules, make_rpc_server_rules, set_timer,
)

from harness import (
    add_client, add_servers, consume_orders, make_world, query_run, states, trigger,
    unblock_ok,
)


def names(rules):
    return [r.name for r in rules]


# -- factories ------------------------------------------------------------------

def test_rpc_factory_rule_names():
    assert names(make_rpc_client_rules()) == ["R1", "R3"]
    assert names(make_rpc_client_rules(replicated=True)) == ["Rr1", "Rr3", "Rr4"]
    assert set(names(make_rpc_client_rules(replicated=True, timeout=5))) == \
        {"Rr1_t", "Rr3", "Rr4", "Rr3_t", "Rr4_t"}
    assert names(make_rpc_client_rules(timeout=5)) == ["R1_t", "R3", "R3_t"]
    assert names(make_rpc_server_rules())[0] == "R2"


def test_query_factory_rule_names():
    assert names(make_query_client_rules())[:3] == ["Q1", "Q3", "Q4"]
    rep = names(make_query_client_rules(replicated=True, timeout=3))
    for n in ["Qr1_t", "Qr3", "Qr4", "Qr5", "Qr6", "Qr7", "Qr8", "Qr9", "Qr10",
              "Qr3_t", "Qr4_t", "Qr5_t", "Qr6_t"]:
        assert n in rep
    assert names(make_query_server_rules())[0] == "Q2"


def test_timeout_must_be_positive():
    with pytest.raises(SimError):
        make_rpc_client_rules(timeout=0)
    with pytest.raises(SimError):
        TimerSpec("c1", "x", 0)


# -- RPC --------------------------------------------------------------------------

def test_plain_rpc_echo():
    w = make_world()
    add_servers(w, 1)
    rec = add_client(w)
    trigger(w, "c1", "rpc", t("echo", 5))
    w.advance()
    assert [(c[0], c[2]) for c in rec.consumes] == [("s0", 5)]
    assert [f.rule for f in w.firings] == ["R1", "R2", "R3"]
    assert states(w) == [t("client", "c1")]
    reply = w.firings[1].broadcasts[0]
    assert reply == t("msg-reply", "s0", rec.consumes[0][1], 5)


def test_concurrent_requests_bind_by_id():
    w = make_world(delay=(1, 3), seed=4)
    add_servers(w, 1)
    recs = {}
    for cid in ("c1", "c2"):
        recs[cid] = add_client(w, cid)
        trigger(w, cid, "rpc", t("echo", cid))
    w.advance()
    for cid, rec in recs.items():
        assert len(rec.consumes) == 1
        server, corr, result, _ = rec.consumes[0]
        assert result == cid and corr.args[0] == cid


def test_suspended_server_replies_after_resume():
    w = make_world()
    add_servers(w, 1)
    rec = add_client(w)
    w.suspend("s0")
    trigger(w, "c1", "rpc", t("echo", 1))
    w.advance()
    assert rec.consumes == []
    w.resume("s0")
    w.advance()
    assert len(rec.consumes) == 1 and w.now == 2


def test_produce_failure_becomes_err_reply():
    w = make_world()

    def boom(server, corr, params):
        raise ValueError("broken")
    add_servers(w, 1, produce=boom)
    rec = add_client(w)
    trigger(w, "c1", "rpc", t("x"))
    w.advance()
    assert rec.consumes[0][2] == t("err", "broken")


def test_replicated_rpc_main_and_follow_ups():
    w = make_world()
    add_servers(w, 3)
    rec = add_client(w, replicated=True)
    trigger(w, "c1", "rpc", t("echo", 5))
    w.advance()
    assert len(rec.main()) == 1 and len(rec.follow_ups()) == 2
    catch = [s for s in states(w) if len(s.args) > 1 and s.args[1] == "catch-follow-up-replies"]
    assert len(catch) == 1                       # the untimed leak
    assert t("client", "c1") in states(w)


def test_replicated_rpc_timer_terminates_catch_agent():
    w = make_world()
    add_servers(w, 3)
    rec = add_client(w, replicated=True, timeout=10)
    trigger(w, "c1", "rpc", t("echo", 5))
    w.advance()
    assert len(rec.main()) == 1 and len(rec.follow_ups()) == 2
    assert states(w) == [t("client", "c1")]
    assert "Rr4_t" in [f.rule for f in w.firings]


def test_zero_replies_timeout_aborts():
    w = make_world()
    add_servers(w, 3)
    rec = add_client(w, replicated=True, timeout=4)
    for s in ("s0", "s1", "s2"):
        w.suspend(s)
    trigger(w, "c1", "rpc", t("echo", 5))
    w.advance()
    assert rec.consumes == []
    assert [(p[0], p[2]) for p in rec.policies] == [("Rr3_t", [])]
    assert rec.policies[0][3] >= 4
    assert states(w) == [t("client", "c1")]


# -- query ------------------------------------------------------------------------

def test_query_early_last_reply_waits():
    arrival = {("s0", 1): 5, ("s0", 2): 1, ("s0", 3): 2}
    w, rec = query_run(arrival)
    assert consume_orders(rec) == {"s0": [1, 2, 3]}
    client_rules = [f.rule for f in w.firings if site_of(f.agent_id) == "c1"]
    assert client_rules == ["Q1", "Q3", "Q3", "Q4"]
    assert unblock_ok(w, rec, 3)
    assert states(w) == [t("client", "c1")]


def test_query_single_reply():
    w, rec = query_run({}, n_replies=1)
    assert consume_orders(rec) == {"s0": [1]}
    assert rec.consumes[0][3].rule == "Q4"
    assert states(w) == [t("client", "c1")]


def test_query_server_stream_format():
    w, rec = query_run({}, n_replies=3)
    replies = [b for f in w.firings for b in f.broadcasts if b.functor == "msg-reply"]
    qid = rec.consumes[0][1]
    assert replies == [t("msg-reply", "s0", 1, qid, t("r", "s0", 1)),
                       t("msg-reply", "s0", 2, qid, t("r", "s0", 2)),
                       t("msg-reply", "s0", "last", 3, qid, t("r", "s0", 3))]


def test_query_empty_stream_unblocks_without_consume():
    w, rec = query_run({}, n_replies=0)
    replies = [b for f in w.firings for b in f.broadcasts if b.functor == "msg-reply"]
    assert replies == [t("msg-reply", "s0", "last", 0, replies[0].args[3], "empty")]
    assert rec.consumes == []
    assert states(w) == [t("client", "c1")]


@pytest.mark.parametrize("n", [1, 2, 3])
def test_query_all_permutations_single_server(n):
    for order in permutations(range(1, n + 1)):
        arrival = {("s0", k): 1 + order.index(k) for k in range(1, n + 1)}
        w, rec = query_run(arrival, n_replies=n)
        assert consume_orders(rec) == {"s0": list(range(1, n + 1))}
        assert unblock_ok(w, rec, n)


def test_replicated_query_catch_agents():
    w, rec = query_run({}, n_servers=3, n_replies=2, replicated=True)
    rules = [f.rule for f in w.firings]
    assert rules.count("Qr7") == 2               # one per newly seen server
    assert rules.count("Qr10") == 2              # each terminates on its last reply
    orders = consume_orders(rec)
    assert all(o == [1, 2] for o in orders.values()) and len(orders) == 3
    assert len(rec.main()) == 2
    # only the ready client and the blocked-other-server(1) agent remain
    left = states(w)
    assert t("client", "c1") in left and len(left) == 2


def test_replicated_query_timer_leaves_only_ready_client():
    w, rec = query_run({}, n_servers=3, n_replies=2, replicated=True, timeout=20)
    assert states(w) == [t("client", "c1")]
    assert len(w.live_agents()) == 4


def test_first_only_ignores_other_servers():
    w, rec = query_run({}, n_servers=3, n_replies=2, replicated=True, first_only=True)
    assert len(consume_orders(rec)) == 1
    assert states(w) == [t("client", "c1")]


# -- timers -----------------------------------------------------------------------

def test_timer_lower_bound():
    w = make_world()
    add_client(w, timeout=5)
    w.now = Fraction(10)
    set_timer(w, TimerSpec("c1", t("rpc", "c1", 99), 5))
    w.advance()
    fired = {f.rule: f.time for f in w.firings}
    assert fired["T"] == 15
    assert fired["gc_timeout"] >= 15


def test_stale_timeout_absorbed():
    w = make_world()
    add_servers(w, 1)
    rec = add_client(w, timeout=10)
    trigger(w, "c1", "rpc", t("echo", 1))
    w.advance()
    rules = [f.rule for f in w.firings]
    assert rules.index("R3") < rules.index("T") < rules.index("gc_timeout")
    assert rec.policies == []                 # no timeout handling happened
    assert states(w) == [t("client", "c1")]
    assert all(len(a.pool) == 1 for a in w.live_agents() if site_of(a.agent_id) == "c1")


# -- majority -------------------------------------------------------------------

@pytest.mark.parametrize("n,r,expected", [(3, 2, COMMIT), (3, 1, ABORT), (1, 1, COMMIT),
                                          (4, 2, ABORT), (2, 0, ABORT)])
def test_majority_examples(n, r, expected):
    assert majority_policy(n, [f"s{i}" for i in range(r)]) == expected


def test_majority_counts_distinct_servers():
    assert majority_policy(3, ["s1", "s1"]) == ABORT
    with pytest.raises(ValueError):
        majority_policy(0, [])


def test_accepts_hook_routes_requests():
    w = make_world()
    hooks = CommHooks(accepts=lambda server, params: server == "x1")
    w.add_ruleset("srv", make_rpc_server_rules(hooks))
    for sid in ("x1", "x2"):
        w.add_agent(sid, [t("server", sid)], "srv")
    rec = add_client(w, replicated=True)
    trigger(w, "c1", "rpc", t("p", 1))
    w.advance()
    assert [c[0] for c in rec.consumes] == ["x1"]
    assert "R2_skip" in [f.rule for f in w.firings]
