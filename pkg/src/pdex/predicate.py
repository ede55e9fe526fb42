"""Conjunctive predicates over single columns.

An atom is ``col = v``, ``col < v``, ``col > v``, ``col BETWEEN a AND b``,
``col IS NULL`` or ``col IS NOT NULL``. NULL never satisfies a comparison.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Any, Callable, Sequence

from .encoding import ColumnType, coerce, encode_value, prefix_successor
from .errors import TypeMismatch

EQ = "="
LT = "<"
GT = ">"
BETWEEN = "BETWEEN"
IS_NULL = "IS NULL"
NOT_NULL = "IS NOT NULL"

OPS = (EQ, LT, GT, BETWEEN, IS_NULL, NOT_NULL)
RANGE_OPS = (LT, GT, BETWEEN, NOT_NULL)


@dataclass(frozen=True)
class Atom:
    column: str
    op: str
    value: Any = None
    value2: Any = None

    def __post_init__(self):
        if self.op not in OPS:
            raise ValueError(f"unknown operator {self.op!r}")

    @property
    def is_equality(self) -> bool:
        return self.op in (EQ, IS_NULL)

    def matches(self, v: Any) -> bool:
        op = self.op
        if op == IS_NULL:
            return v is None
        if v is None:
            return False
        if op == NOT_NULL:
            return True
        if op == EQ:
            return v == self.value
        if op == LT:
            return v < self.value
        if op == GT:
            return v > self.value
        return self.value <= v <= self.value2

    def coerced(self, ctype: ColumnType) -> "Atom":
        """Check literal types against the column, normalizing numerics."""
        if self.op in (IS_NULL, NOT_NULL):
            return self
        if ctype.is_large_object:
            raise TypeMismatch(f"{self.column}: blob columns cannot be compared")
        v = coerce(self.value, ctype, self.column)
        v2 = coerce(self.value2, ctype, self.column) if self.op == BETWEEN else None
        if v is None or (self.op == BETWEEN and v2 is None):
            raise TypeMismatch(f"{self.column}: NULL literal in comparison")
        if self.op == BETWEEN and v > v2:
            raise TypeMismatch(f"{self.column}: BETWEEN bounds out of order")
        return Atom(self.column, self.op, v, v2)


Predicate = tuple  # tuple[Atom, ...], a conjunction


def columns_of(pred: Sequence[Atom]) -> set[str]:
    return {a.column for a in pred}


def _atom_test(i: int, a: Atom) -> Callable[[Sequence[Any]], bool]:
    op, v, v2 = a.op, a.value, a.value2
    if op == IS_NULL:
        return lambda row: row[i] is None
    if op == NOT_NULL:
        return lambda row: row[i] is not None
    if op == EQ:
        if v is None:
            return lambda row: False
        return lambda row: row[i] == v
    if op == LT:
        return lambda row: row[i] is not None and row[i] < v
    if op == GT:
        return lambda row: row[i] is not None and row[i] > v
    return lambda row: row[i] is not None and v <= row[i] <= v2


def compile_predicate(pred: Sequence[Atom], positions: dict[str, int]) -> Callable[[Sequence[Any]], bool]:
    """Row-tuple test for ``pred``; ``positions`` maps column name to index."""
    tests = [_atom_test(positions[a.column], a) for a in pred]
    if not tests:
        return lambda row: True
    if len(tests) == 1:
        return tests[0]
    if len(tests) == 2:
        f, g = tests
        return lambda row: f(row) and g(row)
    return lambda row: all(f(row) for f in tests)


# intervals and implication

@dataclass(frozen=True)
class Interval:
    """Set of non-NULL values between optional bounds (or only NULL)."""

    lo: Any = None
    lo_incl: bool = True
    hi: Any = None
    hi_incl: bool = True
    null_only: bool = False
    empty: bool = False

    @classmethod
    def of(cls, a: Atom) -> "Interval":
        if a.op == IS_NULL:
            return cls(null_only=True)
        if a.op == NOT_NULL:
            return cls()
        if a.op == EQ:
            return cls(a.value, True, a.value, True)
        if a.op == LT:
            return cls(hi=a.value, hi_incl=False)
        if a.op == GT:
            return cls(lo=a.value, lo_incl=False)
        return cls(a.value, True, a.value2, True)

    def intersect(self, other: "Interval") -> "Interval":
        if self.empty or other.empty:
            return Interval(empty=True)
        if self.null_only or other.null_only:
            if self.null_only and other.null_only:
                return self
            return Interval(empty=True)
        lo, lo_incl = self.lo, self.lo_incl
        if other.lo is not None and (lo is None or other.lo > lo or (other.lo == lo and not other.lo_incl)):
            lo, lo_incl = other.lo, other.lo_incl
        hi, hi_incl = self.hi, self.hi_incl
        if other.hi is not None and (hi is None or other.hi < hi or (other.hi == hi and not other.hi_incl)):
            hi, hi_incl = other.hi, other.hi_incl
        if lo is not None and hi is not None and (lo > hi or (lo == hi and not (lo_incl and hi_incl))):
            return Interval(empty=True)
        return Interval(lo, lo_incl, hi, hi_incl)

    def within(self, outer: "Interval") -> bool:
        if self.empty:
            return True
        if outer.empty:
            return False
        if self.null_only or outer.null_only:
            return self.null_only and outer.null_only
        if outer.lo is not None:
            if self.lo is None or self.lo < outer.lo:
                return False
            if self.lo == outer.lo and self.lo_incl and not outer.lo_incl:
                return False
        if outer.hi is not None:
            if self.hi is None or self.hi > outer.hi:
                return False
            if self.hi == outer.hi and self.hi_incl and not outer.hi_incl:
                return False
        return True


def column_interval(pred: Sequence[Atom], column: str) -> Interval | None:
    atoms = [a for a in pred if a.column == column]
    if not atoms:
        return None
    iv = Interval.of(atoms[0])
    for a in atoms[1:]:
        iv = iv.intersect(Interval.of(a))
    return iv


def implies(pred: Sequence[Atom], required: Sequence[Atom]) -> bool:
    """Syntactic test that ``pred`` implies every atom of ``required``.

    Equality implies IS NOT NULL, and range atoms are implied by interval
    containment on the same column; nothing else is inferred.
    """
    for r in required:
        iv = column_interval(pred, r.column)
        if iv is None or not iv.within(Interval.of(r)):
            return False
    return True


# seek ranges

@dataclass(frozen=True)
class SeekRange:
    lo: bytes | None
    hi: bytes | None
    used: tuple[Atom, ...]
    equality_prefix: int  # key columns fixed by equality

    @property
    def is_empty(self) -> bool:
        return self.lo is not None and self.hi is not None and self.lo >= self.hi


def _max(a: bytes | None, b: bytes | None) -> bytes | None:
    if a is None:
        return b
    if b is None:
        return a
    return max(a, b)


def _min_hi(a: bytes | None, b: bytes | None) -> bytes | None:
    # None is +infinity here
    if a is None:
        return b
    if b is None:
        return a
    return min(a, b)


def seek_range(pred: Sequence[Atom], key_columns: Sequence[str],
               key_types: Sequence[ColumnType]) -> SeekRange | None:
    """Byte range over an index key for the sargable prefix of ``pred``.

    Leading key columns with an equality atom extend the prefix; the first
    column without one may contribute a range. None when the leading key
    column has no usable atom.
    """
    prefix = b""
    used: list[Atom] = []
    eq_cols = 0
    for col, ctype in zip(key_columns, key_types):
        atoms = [a for a in pred if a.column == col]
        eq = next((a for a in atoms if a.is_equality), None)
        if eq is not None:
            prefix += encode_value(None if eq.op == IS_NULL else eq.value, ctype)
            used.append(eq)
            eq_cols += 1
            continue
        ranges = [a for a in atoms if a.op in RANGE_OPS]
        if not ranges:
            break
        lo: bytes | None = prefix + b"\x01"
        hi = prefix_successor(prefix) if prefix else None
        for a in ranges:
            if a.op == GT:
                lo = _max(lo, prefix_successor(prefix + encode_value(a.value, ctype)))
            elif a.op == LT:
                hi = _min_hi(hi, prefix + encode_value(a.value, ctype))
            elif a.op == BETWEEN:
                lo = _max(lo, prefix + encode_value(a.value, ctype))
                hi = _min_hi(hi, prefix_successor(prefix + encode_value(a.value2, ctype)))
        used.extend(ranges)
        return SeekRange(lo, hi, tuple(used), eq_cols)
    if not used:
        return None
    return SeekRange(prefix, prefix_successor(prefix), tuple(used), eq_cols)
