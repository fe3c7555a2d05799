"""Sequential reference semantics for the banking triggers.

One in-memory ledger, no replication, no network: every operation is applied
atomically in schedule order.  Used as ground truth for fault-free runs.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

from .terms import Term

__all__ = ["Replay", "replay_oracle", "apply_op"]


@dataclass
class Replay:
    ledgers: dict = field(default_factory=dict)      # bank -> {account: balance}
    outcomes: list = field(default_factory=list)

    def balances(self) -> dict:
        return {(b, a): bal for b, accts in sorted(self.ledgers.items())
                for a, bal in sorted(accts.items())}


def _name(op):
    name = op.functor if isinstance(op, Term) else op
    return "lookup" if name == "look-up" else name


def _positive(x):
    return isinstance(x, int) and not isinstance(x, bool) and x > 0


def apply_op(ledgers: dict, op, open_banks: bool = True) -> str:
    """Apply one trigger to ``ledgers`` in place and return its outcome."""
    name = _name(op)
    args = op.args if isinstance(op, Term) else ()

    def bank(b):
        if b not in ledgers and open_banks:
            ledgers[b] = {}
        return ledgers.get(b)

    if name == "lookup":
        return "done" if len(args) <= 2 else "rejected"
    if name == "deposit" and len(args) == 3:
        b, a, am = args
        if not _positive(am):
            return "rejected"
        accts = bank(b)
        if accts is None or a not in accts:
            return "aborted"
        accts[a] += am
        return "committed"
    if name == "withdraw" and len(args) == 3:
        b, a, am = args
        if not _positive(am):
            return "rejected"
        accts = bank(b)
        if accts is None or a not in accts:
            return "aborted"
        if accts[a] < am:
            return "aborted-overdraft"
        accts[a] -= am
        return "committed"
    if name == "transfer" and len(args) == 5:
        b1, a1, am, b2, a2 = args
        if not _positive(am):
            return "rejected"
        src, dst = bank(b1), bank(b2)
        if src is None or a1 not in src or src[a1] < am:
            return "aborted"
        if dst is None or a2 not in dst:
            return "aborted"
        src[a1] -= am
        dst[a2] += am
        return "committed"
    if name == "create" and len(args) == 2:
        accts = bank(args[0])
        if accts is None or args[1] in accts:
            return "aborted"
        accts[args[1]] = 0
        return "committed"
    if name == "delete" and len(args) == 2:
        accts = bank(args[0])
        if accts is None or args[1] not in accts or accts[args[1]] != 0:
            return "aborted"
        del accts[args[1]]
        return "committed"
    return "rejected"


def replay_oracle(schedule, banks: Optional[dict] = None) -> Replay:
    """Replay ``schedule`` (a list of trigger terms) sequentially.

    ``banks`` maps bank -> {account: balance}.  When given, operations on
    other banks abort (no server would answer them); when omitted every bank
    exists and starts empty.
    """
    ledgers = {b: dict(accts) for b, accts in (banks or {}).items()}
    replay = Replay(ledgers)
    for op in schedule:
        replay.outcomes.append(apply_op(ledgers, op, open_banks=banks is None))
    return replay
