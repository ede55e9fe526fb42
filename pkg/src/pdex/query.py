"""Single-table queries and their text grammar.

    SELECT <col[,col...] | COUNT(*) | SUM(col)> FROM <table>
        [WHERE atom [AND atom]...]
    atom := col (=|<|>) literal | col BETWEEN literal AND literal
          | col IS [NOT] NULL

Literals are integers, decimal floats and single-quoted strings ('' escapes
a quote). ``parse_query(render_query(q)) == q`` for every query.
"""
from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Any

from .errors import QuerySyntaxError
from .predicate import BETWEEN, EQ, GT, IS_NULL, LT, NOT_NULL, Atom

_TOKEN = re.compile(r"""
    \s*(?:
      (?P<str>'(?:[^']|'')*')
    | (?P<num>-?\d+(?:\.\d*)?(?:[eE][+-]?\d+)?)
    | (?P<ident>[A-Za-z_][A-Za-z0-9_]*)
    | (?P<sym>\(\*\)|[(),=<>*])
    )""", re.VERBOSE)

_KEYWORDS = {"SELECT", "FROM", "WHERE", "AND", "BETWEEN", "IS", "NOT", "NULL", "COUNT", "SUM"}


@dataclass(frozen=True)
class Aggregate:
    fn: str  # "count" or "sum"
    column: str | None = None


@dataclass(frozen=True)
class Query:
    table: str
    projected: tuple[str, ...] = ()
    predicate: tuple[Atom, ...] = ()
    aggregate: Aggregate | None = None

    @property
    def referenced_columns(self) -> set[str]:
        cols = set(self.projected) | {a.column for a in self.predicate}
        if self.aggregate and self.aggregate.column:
            cols.add(self.aggregate.column)
        return cols

    def __str__(self) -> str:
        return render_query(self)


@dataclass
class _Tokens:
    items: list[tuple[str, Any]]
    pos: int = field(default=0)

    def peek(self) -> tuple[str, Any] | None:
        return self.items[self.pos] if self.pos < len(self.items) else None

    def next(self) -> tuple[str, Any]:
        tok = self.peek()
        if tok is None:
            raise QuerySyntaxError("unexpected end of input")
        self.pos += 1
        return tok

    def keyword(self, word: str) -> None:
        kind, val = self.next()
        if kind != "kw" or val != word:
            raise QuerySyntaxError(f"expected {word}, got {val!r}")

    def at_keyword(self, word: str) -> bool:
        tok = self.peek()
        return tok is not None and tok[0] == "kw" and tok[1] == word

    def ident(self) -> str:
        kind, val = self.next()
        if kind != "ident":
            raise QuerySyntaxError(f"expected a column or table name, got {val!r}")
        return val

    def symbol(self, sym: str) -> None:
        kind, val = self.next()
        if kind != "sym" or val != sym:
            raise QuerySyntaxError(f"expected {sym!r}, got {val!r}")

    def literal(self) -> Any:
        kind, val = self.next()
        if kind != "lit":
            raise QuerySyntaxError(f"expected a literal, got {val!r}")
        return val


def _tokenize(text: str) -> _Tokens:
    items: list[tuple[str, Any]] = []
    pos = 0
    text = text.strip().rstrip(";").rstrip()
    while pos < len(text):
        m = _TOKEN.match(text, pos)
        if not m or m.end() == pos:
            raise QuerySyntaxError(f"unexpected character at {pos}: {text[pos:pos + 10]!r}")
        pos = m.end()
        if m.group("str") is not None:
            items.append(("lit", m.group("str")[1:-1].replace("''", "'")))
        elif m.group("num") is not None:
            s = m.group("num")
            items.append(("lit", float(s) if any(c in s for c in ".eE") else int(s)))
        elif m.group("ident") is not None:
            word = m.group("ident")
            if word.upper() in _KEYWORDS:
                items.append(("kw", word.upper()))
            else:
                items.append(("ident", word))
        else:
            items.append(("sym", m.group("sym")))
    return _Tokens(items)


def _atom(toks: _Tokens) -> Atom:
    col = toks.ident()
    kind, val = toks.next()
    if kind == "sym" and val in (EQ, LT, GT):
        return Atom(col, val, toks.literal())
    if kind == "kw" and val == "BETWEEN":
        lo = toks.literal()
        toks.keyword("AND")
        return Atom(col, BETWEEN, lo, toks.literal())
    if kind == "kw" and val == "IS":
        if toks.at_keyword("NOT"):
            toks.next()
            toks.keyword("NULL")
            return Atom(col, NOT_NULL)
        toks.keyword("NULL")
        return Atom(col, IS_NULL)
    raise QuerySyntaxError(f"expected an operator after {col}, got {val!r}")


def parse_conjunction(text: str) -> tuple[Atom, ...]:
    """Parse ``atom [AND atom]...`` (used for index filters)."""
    toks = _tokenize(text)
    atoms = _conjunction(toks)
    if toks.peek() is not None:
        raise QuerySyntaxError(f"trailing input: {toks.peek()[1]!r}")
    return atoms


def _conjunction(toks: _Tokens) -> tuple[Atom, ...]:
    atoms = [_atom(toks)]
    while toks.at_keyword("AND"):
        toks.next()
        atoms.append(_atom(toks))
    return tuple(atoms)


def parse_query(text: str) -> Query:
    toks = _tokenize(text)
    toks.keyword("SELECT")
    aggregate = None
    projected: list[str] = []
    if toks.at_keyword("COUNT"):
        toks.next()
        toks.symbol("(*)")
        aggregate = Aggregate("count")
    elif toks.at_keyword("SUM"):
        toks.next()
        toks.symbol("(")
        aggregate = Aggregate("sum", toks.ident())
        toks.symbol(")")
    else:
        projected.append(toks.ident())
        while (tok := toks.peek()) is not None and tok == ("sym", ","):
            toks.next()
            projected.append(toks.ident())
    toks.keyword("FROM")
    table = toks.ident()
    predicate: tuple[Atom, ...] = ()
    if toks.at_keyword("WHERE"):
        toks.next()
        predicate = _conjunction(toks)
    if toks.peek() is not None:
        raise QuerySyntaxError(f"trailing input: {toks.peek()[1]!r}")
    return Query(table, tuple(projected), predicate, aggregate)


def render_literal(v: Any) -> str:
    if isinstance(v, str):
        return "'" + v.replace("'", "''") + "'"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def render_atom(a: Atom) -> str:
    if a.op in (IS_NULL, NOT_NULL):
        return f"{a.column} {a.op}"
    if a.op == BETWEEN:
        return f"{a.column} BETWEEN {render_literal(a.value)} AND {render_literal(a.value2)}"
    return f"{a.column} {a.op} {render_literal(a.value)}"


def render_conjunction(atoms) -> str:
    return " AND ".join(render_atom(a) for a in atoms)


def render_query(q: Query) -> str:
    if q.aggregate is None:
        head = ", ".join(q.projected)
    elif q.aggregate.fn == "count":
        head = "COUNT(*)"
    else:
        head = f"SUM({q.aggregate.column})"
    text = f"SELECT {head} FROM {q.table}"
    if q.predicate:
        text += " WHERE " + render_conjunction(q.predicate)
    return text
