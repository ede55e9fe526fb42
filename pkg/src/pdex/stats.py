"""Exact statistics: density, selectivity and index shape.

Everything here is computed from full scans; no sampling. Fractions are
returned as ``fractions.Fraction`` so callers can compare them exactly.
"""
from __future__ import annotations

import bisect
from dataclasses import dataclass
from fractions import Fraction
from typing import Any, Iterable, Sequence

from .errors import EmptyTable
from .predicate import BETWEEN, EQ, GT, IS_NULL, LT, NOT_NULL, Atom, compile_predicate

# a predicate matching at most this fraction of rows counts as highly selective
HIGH_SELECTIVITY = Fraction(1, 10)
# columns whose density reaches this are "dense" (few distinct values)
DENSE_THRESHOLD = Fraction(1, 10)


@dataclass(frozen=True)
class IndexStats:
    depth: int
    leaf_pages: int
    density: Fraction
    row_count: int


@dataclass(frozen=True)
class SelectivityReport:
    predicate: tuple[Atom, ...]
    matched: int
    total: int

    @property
    def fraction(self) -> Fraction:
        return Fraction(self.matched, self.total) if self.total else Fraction(0)

    @property
    def highly_selective(self) -> bool:
        return self.fraction <= HIGH_SELECTIVITY


def distinct_count(rows: Iterable[Sequence[Any]], positions: Sequence[int]) -> int:
    return len({tuple(r[i] for i in positions) for r in rows})


def density(rows: Sequence[Sequence[Any]], positions: Sequence[int]) -> Fraction:
    """1 / number of distinct value tuples over ``positions``."""
    distinct = distinct_count(rows, positions)
    if distinct == 0:
        raise EmptyTable("density of an empty table is undefined")
    return Fraction(1, distinct)


def is_dense(d: Fraction) -> bool:
    return d >= DENSE_THRESHOLD


def selectivity(rows: Sequence[Sequence[Any]], predicate: Sequence[Atom],
                positions: dict[str, int]) -> SelectivityReport:
    test = compile_predicate(predicate, positions)
    matched = sum(1 for r in rows if test(r))
    return SelectivityReport(tuple(predicate), matched, len(rows))


class TableSnapshot:
    """Materialized rows of one table version with cached per-atom match sets.

    Match sets are Python ints used as bitsets, so the row count of any
    conjunction of already-seen atoms is an AND plus a popcount. Comparison
    atoms find their positions through a per-column sorted index, so a
    selective atom costs a bisect plus its matches rather than a full pass.
    """

    def __init__(self, rows: Sequence[Sequence[Any]], positions: dict[str, int]):
        self.rows = list(rows)
        self.positions = positions
        self._masks: dict[Atom, int] = {}
        self._columns: dict[str, list] = {}
        self._density: dict[tuple[str, ...], Fraction] = {}
        self._sorted: dict[str, tuple[list, list[int], list[int]] | None] = {}

    @property
    def row_count(self) -> int:
        return len(self.rows)

    def column(self, name: str) -> list:
        col = self._columns.get(name)
        if col is None:
            i = self.positions[name]
            col = self._columns[name] = [r[i] for r in self.rows]
        return col

    def _sorted_index(self, name: str):
        """(sorted non-null values, their row positions, NULL positions), or None
        when the column cannot be totally ordered (NaN present)."""
        if name not in self._sorted:
            col = self.column(name)
            nulls = [i for i, v in enumerate(col) if v is None]
            present = [(v, i) for i, v in enumerate(col) if v is not None]
            if any(v != v for v, _ in present):
                self._sorted[name] = None
            else:
                present.sort()
                self._sorted[name] = ([v for v, _ in present], [i for _, i in present], nulls)
        return self._sorted[name]

    def _positions(self, atom: Atom):
        idx = self._sorted_index(atom.column)
        if idx is None:
            return None
        keys, pos, nulls = idx
        op = atom.op
        if op == IS_NULL:
            return nulls
        if op == NOT_NULL:
            return pos
        if op == EQ:
            lo, hi = bisect.bisect_left(keys, atom.value), bisect.bisect_right(keys, atom.value)
        elif op == LT:
            lo, hi = 0, bisect.bisect_left(keys, atom.value)
        elif op == GT:
            lo, hi = bisect.bisect_right(keys, atom.value), len(keys)
        elif op == BETWEEN:
            lo, hi = bisect.bisect_left(keys, atom.value), bisect.bisect_right(keys, atom.value2)
        else:
            return None
        return pos[lo:max(lo, hi)]

    def mask(self, atom: Atom) -> int:
        m = self._masks.get(atom)
        if m is None:
            bits = bytearray((len(self.rows) + 7) // 8)
            positions = self._positions(atom)
            if positions is None:
                test = atom.matches
                positions = [i for i, v in enumerate(self.column(atom.column)) if test(v)]
            for i in positions:
                bits[i >> 3] |= 1 << (i & 7)
            m = self._masks[atom] = int.from_bytes(bits, "little")
        return m

    def count(self, predicate: Iterable[Atom]) -> int:
        m = (1 << len(self.rows)) - 1
        for a in predicate:
            m &= self.mask(a)
            if not m:
                return 0
        return m.bit_count()

    def selectivity(self, predicate: Sequence[Atom]) -> SelectivityReport:
        return SelectivityReport(tuple(predicate), self.count(predicate), len(self.rows))

    def density(self, columns: Sequence[str]) -> Fraction:
        key = tuple(columns)
        d = self._density.get(key)
        if d is None:
            d = self._density[key] = density(self.rows, [self.positions[c] for c in columns])
        return d

    def null_fraction(self, column: str) -> Fraction:
        if not self.rows:
            return Fraction(0)
        return Fraction(sum(1 for v in self.column(column) if v is None), len(self.rows))
