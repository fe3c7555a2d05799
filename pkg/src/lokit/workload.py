"""Seeded random banking schedules for property tests and benchmarks."""

from __future__ import annotations

import random
from dataclasses import dataclass, field

from .banking import BankingSystem
from .terms import t

__all__ = ["Schedule", "random_schedule", "simulate"]

KINDS = ("deposit", "withdraw", "transfer", "create", "delete", "lookup")
WEIGHTS = (5, 5, 4, 2, 2, 1)


@dataclass
class Schedule:
    seed: int
    banks: dict                              # bank -> (replicas, {account: balance})
    ops: list = field(default_factory=list)

    def initial(self) -> dict:
        return {b: dict(accts) for b, (_, accts) in self.banks.items()}


def random_schedule(seed: int, max_ops: int = 100, banks=("b1", "b2"), replicas: int = 3,
                    accounts=("a1", "a2", "a3", "a4"), max_amount: int = 80) -> Schedule:
    """Ops hit existing and missing accounts alike, so every abort path
    (no-account, overdraft, exists, nonzero-balance) shows up."""
    rng = random.Random(seed)
    setup = {}
    for b in banks:
        opened = [a for a in accounts if rng.random() < 0.6]
        setup[b] = (replicas, {a: rng.randint(0, 100) for a in opened})
    ops = []
    for _ in range(rng.randint(1, max_ops)):
        kind = rng.choices(KINDS, WEIGHTS)[0]
        b, a = rng.choice(banks), rng.choice(accounts)
        amount = rng.randint(1, max_amount)
        if kind in ("deposit", "withdraw"):
            ops.append(t(kind, b, a, amount))
        elif kind == "transfer":
            ops.append(t(kind, b, a, amount, rng.choice(banks), rng.choice(accounts)))
        elif kind in ("create", "delete"):
            ops.append(t(kind, b, a))
        else:
            ops.append(rng.choice([t("lookup", b), t("lookup", b, a), "lookup"]))
    return Schedule(seed, setup, ops)


def simulate(schedule: Schedule, record: bool = True, client: str = "c1") -> BankingSystem:
    """Run every op of ``schedule`` through one client, in order, to completion."""
    system = BankingSystem(schedule.banks, clients=(client,), seed=schedule.seed, record=record)
    for op in schedule.ops:
        system.submit(client, op, 0)
    system.run()
    return system
