from hypothesis import HealthCheck, given, settings, strategies as st

from lokit.checks import check_system
from lokit.oracle import replay_oracle
from lokit.terms import t
from lokit.workload import random_schedule, simulate


def test_create_deposit_withdraw():
    r = replay_oracle([t("create", "b", "a"), t("deposit", "b", "a", 10), t("withdraw", "b", "a", 3)])
    assert r.outcomes == ["committed"] * 3
    assert r.balances() == {("b", "a"): 7}


def test_withdraw_on_fresh_ledger():
    r = replay_oracle([t("withdraw", "b", "a", 1)])
    assert r.outcomes == ["aborted"]
    assert r.balances() == {}


def test_transfer_semantics():
    banks = {"b1": {"x": 50}, "b2": {"y": 0}}
    r = replay_oracle([t("transfer", "b1", "x", 30, "b2", "y"),
                       t("transfer", "b1", "x", 30, "b2", "y"),
                       t("transfer", "b1", "x", 10, "b2", "nope")], banks)
    assert r.outcomes == ["committed", "aborted", "aborted"]
    assert r.balances() == {("b1", "x"): 20, ("b2", "y"): 30}


def test_unknown_bank_and_rejections():
    r = replay_oracle([t("deposit", "zz", "a", 1), t("deposit", "b1", "a", 0), "lookup"],
                      {"b1": {"a": 1}})
    assert r.outcomes == ["aborted", "rejected", "done"]


def test_overdraft_and_delete():
    r = replay_oracle([t("withdraw", "b", "a", 9), t("delete", "b", "a"),
                       t("withdraw", "b", "a", 5), t("delete", "b", "a")], {"b": {"a": 5}})
    assert r.outcomes == ["aborted-overdraft", "aborted", "committed", "committed"]
    assert r.balances() == {}


@settings(max_examples=25, deadline=None, suppress_health_check=[HealthCheck.too_slow])
@given(st.integers(0, 10_000))
def test_simulation_matches_oracle(seed):
    sched = random_schedule(seed)
    system = simulate(sched, record=False)
    replay = replay_oracle(sched.ops, sched.initial())
    assert system.outcomes() == replay.outcomes
    assert system.balances() == replay.balances()
    assert all(r.ok for r in check_system(system, fault_free=True))
