"""Resources and patterns: ground terms, variables, matching and text form.

Values are one of:

* ``int`` or ``Fraction`` numbers,
* ``str`` atoms (``client``, ``blocked``, ``b1-r2``),
* :class:`Term` compounds ``functor(arg, ...)``,
* :class:`Var` pattern variables (never stored in a pool).

The text form is canonical prefix notation without spaces, e.g.
``msg-reply(srv1,7,42)``.  Atoms that are not plain lower-case identifiers
are double-quoted.  :func:`parse` reads the same notation back, with
capitalised identifiers read as variables.
"""

from __future__ import annotations

import json
import re
from fractions import Fraction

__all__ = [
    "Term", "Var", "t", "atom_key", "sort_key", "is_ground", "variables",
    "match", "substitute", "render", "parse", "TermSyntaxError",
]


class Var:
    __slots__ = ("name",)

    def __init__(self, name: str):
        self.name = name

    def __eq__(self, other):
        return isinstance(other, Var) and other.name == self.name

    def __hash__(self):
        return hash(("?var", self.name))

    def __repr__(self):
        return self.name


class Term:
    """An immutable compound ``functor(args...)``; hash and order key are cached."""

    __slots__ = ("functor", "args", "_hash", "_key", "_ground", "_text")

    def __init__(self, functor: str, args=()):
        self.functor = functor
        self.args = tuple(args)
        self._hash = None
        self._key = None
        self._ground = None
        self._text = None

    @property
    def arity(self) -> int:
        return len(self.args)

    @property
    def index_key(self):
        return (self.functor, len(self.args))

    def __eq__(self, other):
        if self is other:
            return True
        if not isinstance(other, Term):
            return False
        return (self.functor == other.functor and self.args == other.args)

    def __hash__(self):
        h = self._hash
        if h is None:
            h = self._hash = hash((self.functor, self.args))
        return h

    def __lt__(self, other):
        return sort_key(self) < sort_key(other)

    def __repr__(self):
        return render(self)


def t(functor: str, *args) -> Term:
    """Shorthand constructor: ``t("msg-reply", "srv1", 7, 42)``."""
    return Term(functor, args)


def atom_key(value):
    """Pool index key: ``(functor, arity)`` for compounds, the value otherwise."""
    if isinstance(value, Term):
        return (value.functor, len(value.args))
    return (None, value)


def sort_key(value):
    """Canonical total order: numbers < atoms < compounds; compounds by
    functor, arity, then argument-wise."""
    if isinstance(value, Term):
        k = value._key
        if k is None:
            k = value._key = (2, value.functor, len(value.args),
                              tuple(sort_key(a) for a in value.args))
        return k
    if isinstance(value, str):
        return (1, value)
    if isinstance(value, (int, Fraction)) and not isinstance(value, bool):
        return (0, value)
    raise TypeError(f"no canonical order for {value!r}")


def is_ground(value) -> bool:
    if isinstance(value, Term):
        g = value._ground
        if g is None:
            g = value._ground = all(is_ground(a) for a in value.args)
        return g
    return not isinstance(value, Var)


def variables(value, acc=None) -> set:
    if acc is None:
        acc = set()
    if isinstance(value, Var):
        acc.add(value.name)
    elif isinstance(value, Term) and not is_ground(value):
        for a in value.args:
            variables(a, acc)
    return acc


_MISSING = object()


def match(pattern, value, binding: dict):
    """One-way match of ``pattern`` against ground ``value``.

    Returns the (possibly extended) binding, or None.  The input binding is
    never mutated.
    """
    kind = type(pattern)
    if kind is Var:
        bound = binding.get(pattern.name, _MISSING)
        if bound is _MISSING:
            extended = dict(binding)
            extended[pattern.name] = value
            return extended
        return binding if bound == value else None
    if kind is not Term:
        return binding if pattern == value else None
    if type(value) is not Term or pattern.functor != value.functor \
            or len(pattern.args) != len(value.args):
        return None
    if is_ground(pattern):
        return binding if pattern == value else None
    out, owned = binding, False
    for p, v in zip(pattern.args, value.args):
        kind = type(p)
        if kind is Var:
            bound = out.get(p.name, _MISSING)
            if bound is _MISSING:
                if not owned:
                    out, owned = dict(out), True
                out[p.name] = v
            elif bound != v:
                return None
        elif kind is Term:
            nested = match(p, v, out)
            if nested is None:
                return None
            if nested is not out:
                out, owned = nested, True
        elif p != v:
            return None
    return out


def substitute(pattern, binding: dict):
    """Instantiate ``pattern``; unbound variables are left in place."""
    if isinstance(pattern, Var):
        return binding.get(pattern.name, pattern)
    if isinstance(pattern, Term) and not is_ground(pattern):
        return Term(pattern.functor, [substitute(a, binding) for a in pattern.args])
    return pattern


_BARE_ATOM = re.compile(r"[a-z][A-Za-z0-9_.:\-]*\Z")


def _render_atom(name: str) -> str:
    if _BARE_ATOM.match(name):
        return name
    return json.dumps(name)


def render(value) -> str:
    if isinstance(value, Term):
        text = value._text
        if text is None:
            text = value._text = (f"{_render_atom(value.functor)}"
                                  f"({','.join(render(a) for a in value.args)})")
        return text
    if isinstance(value, str):
        return _render_atom(value)
    if isinstance(value, Var):
        return value.name
    if isinstance(value, Fraction):
        if value.denominator == 1:
            return str(value.numerator)
        return f"{value.numerator}/{value.denominator}"
    if isinstance(value, int) and not isinstance(value, bool):
        return str(value)
    raise TypeError(f"cannot render {value!r}")


class TermSyntaxError(ValueError):
    pass


_TOKEN = re.compile(r"""
    \s*(?:
      (?P<num>-?\d+(?:/\d+)?)
    | (?P<atom>[a-z][A-Za-z0-9_.:\-]*)
    | (?P<var>[A-Z_][A-Za-z0-9_]*)
    | (?P<str>"(?:[^"\\]|\\.)*")
    | (?P<punct>[(),])
    )""", re.VERBOSE)


def _tokens(text: str):
    pos = 0
    text = text.rstrip()
    while pos < len(text):
        m = _TOKEN.match(text, pos)
        if m is None or m.end() == pos:
            raise TermSyntaxError(f"unexpected input at {pos}: {text[pos:pos + 12]!r}")
        pos = m.end()
        kind = m.lastgroup
        yield kind, m.group(kind)


def parse(text: str):
    """Parse one value in canonical text form."""
    toks = list(_tokens(text))
    value, i = _parse_value(toks, 0, text)
    if i != len(toks):
        raise TermSyntaxError(f"trailing input in {text!r}")
    return value


def _parse_value(toks, i, text):
    if i >= len(toks):
        raise TermSyntaxError(f"unexpected end of {text!r}")
    kind, tok = toks[i]
    if kind == "num":
        if "/" in tok:
            return Fraction(tok), i + 1
        return int(tok), i + 1
    if kind == "var":
        return Var(tok), i + 1
    if kind in ("atom", "str"):
        name = tok if kind == "atom" else json.loads(tok)
        if i + 1 < len(toks) and toks[i + 1] == ("punct", "("):
            return _parse_args(name, toks, i + 2, text)
        return name, i + 1
    raise TermSyntaxError(f"unexpected {tok!r} in {text!r}")


def _parse_args(functor, toks, i, text):
    args = []
    if i < len(toks) and toks[i] == ("punct", ")"):
        return Term(functor, args), i + 1
    while True:
        value, i = _parse_value(toks, i, text)
        args.append(value)
        if i >= len(toks):
            raise TermSyntaxError(f"unclosed argument list in {text!r}")
        if toks[i] == ("punct", ","):
            i += 1
            continue
        if toks[i] == ("punct", ")"):
            return Term(functor, args), i + 1
        raise TermSyntaxError(f"expected ',' or ')' in {text!r}")
