"""Invariant suite for a finished banking run."""

from __future__ import annotations

from dataclasses import dataclass

from .banking import BankingSystem
from .oracle import replay_oracle

__all__ = ["CheckResult", "check_system", "serial_schedule"]


@dataclass
class CheckResult:
    name: str
    ok: bool
    detail: str = ""

    def line(self) -> str:
        status = "PASS" if self.ok else "FAIL"
        return f"{status} {self.name}" + (f": {self.detail}" if self.detail else "")


def _convergence(system: BankingSystem) -> CheckResult:
    suspended = system.world.suspended
    bad = []
    for bank, reps in sorted(system.replicas.items()):
        views = {r.server_id: {a: (acc.balance, acc.version)
                               for a, acc in r.ledger.accounts.items()}
                 for r in reps if r.server_id not in suspended}
        distinct = {repr(sorted(v.items())) for v in views.values()}
        if len(distinct) > 1:
            bad.append(f"{bank} replicas disagree: {views}")
    return CheckResult("replica-convergence", not bad, "; ".join(bad))


def _no_overdraft(system: BankingSystem) -> CheckResult:
    bad = []
    for reps in system.replicas.values():
        for r in reps:
            bad.extend(r.violations)
            bad.extend(f"{r.server_id}: {a} at {acc.balance}"
                       for a, acc in r.ledger.accounts.items() if acc.balance < 0)
    return CheckResult("no-overdraft", not bad, "; ".join(bad))


def _versions(system: BankingSystem) -> CheckResult:
    bad = []
    for reps in system.replicas.values():
        for r in reps:
            for corr, kind, acct, old, new in r.applied:
                if kind != "rollback" and new != old + 1:
                    bad.append(f"{r.server_id} {acct} {kind}: {old} -> {new}")
    return CheckResult("version-increments", not bad, "; ".join(bad))


def _conservation(system: BankingSystem) -> CheckResult:
    expected = {b: sum(accts.values()) for b, accts in system.initial.items()}
    for rec in system.records():
        for step in rec.steps:
            if step.bank in expected:
                expected[step.bank] += step.delta
    bad = []
    for bank, want in sorted(expected.items()):
        have = sum(system.reference(bank).ledger.balances().values())
        if have != want:
            bad.append(f"{bank}: total {have}, committed history says {want}")
    for rec in system.records():
        if getattr(rec.op, "functor", None) == "transfer" and rec.outcome != "aborted-uncompensated":
            if rec.delta:
                bad.append(f"transfer #{rec.seq} of {rec.client} left net {rec.delta}")
    return CheckResult("conservation", not bad, "; ".join(bad))


def _settled(system: BankingSystem) -> CheckResult:
    bad = [f"{r.client} #{r.seq} {r.op}" for r in system.records() if r.outcome is None]
    bad += [f"{r.client} #{r.seq} uncompensated" for r in system.records()
            if r.outcome == "aborted-uncompensated"]
    return CheckResult("operations-settled", not bad, "; ".join(bad))


def serial_schedule(system: BankingSystem):
    """Operations in execution order, or None when two clients' operations
    overlapped in time (no single sequential order exists)."""
    def start(r):
        return r.started_at if r.started_at is not None else r.submitted_at

    # malformed triggers never start; they cannot interleave with anything
    recs = sorted((r for r in system.records() if r.outcome != "rejected"),
                  key=lambda r: (start(r), r.client, r.seq))
    last_end = None
    for r in recs:
        if last_end is not None and start(r) < last_end:
            return None
        last_end = r.finished_at if r.finished_at is not None else start(r)
    return recs


def _oracle(system: BankingSystem) -> CheckResult:
    recs = serial_schedule(system)
    if recs is None:
        return CheckResult("oracle-equivalence", True, "skipped: concurrent clients")
    replay = replay_oracle([r.op for r in recs], system.initial)
    bad = []
    for r, want in zip(recs, replay.outcomes):
        if r.outcome != want:
            bad.append(f"{r.client} #{r.seq} {r.op}: {r.outcome}, oracle {want}")
    for r in system.records():
        if r.outcome == "rejected" and replay_oracle([r.op]).outcomes != ["rejected"]:
            bad.append(f"{r.client} #{r.seq} {r.op} rejected but well-formed")
    if replay.balances() != system.balances():
        bad.append(f"balances {system.balances()} vs oracle {replay.balances()}")
    return CheckResult("oracle-equivalence", not bad, "; ".join(bad))


def check_system(system: BankingSystem, fault_free: bool = False) -> list:
    """Run every invariant; add the oracle comparison for fault-free runs."""
    results = [_convergence(system), _no_overdraft(system), _versions(system),
               _conservation(system), _settled(system)]
    if fault_free:
        results.append(_oracle(system))
    return results
