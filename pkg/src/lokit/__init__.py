"""lokit: a deterministic multiset-rewriting coordination kernel, a simulated
network, generic RPC/query rule sets and a replicated banking application."""

from .terms import Term, Var, t, parse, render
from .kernel import Rule, Guard, World, match_rule, fire_rule
from .simnet import SimWorld, NetPolicy
from .toolkit import (
    CommHooks, majority_policy, make_client_ruleset, make_rpc_client_rules,
    make_rpc_server_rules, make_query_client_rules, make_query_server_rules,
    make_timer_rules, set_timer,
)
from .banking import BankingSystem

__version__ = "0.1.0"
