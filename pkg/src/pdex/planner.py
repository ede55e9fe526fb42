"""Access-path enumeration and costing in logical page reads.

The planner works on snapshots: a ``TableInfo`` describing the physical
shape of one table and its indexes, plus a ``TableSnapshot`` giving exact
matched-row counts. Costs are estimates of pages read; executing a plan
reports the actual count, which the EXPLAIN output shows alongside.

Cost model (m = estimated matched entries, epl = entries per leaf):

* scans: every data page (clustered scans add the descent to the first leaf)
* seeks: ``depth + max(0, ceil(m / epl) - 1)``
* lookups: one per surviving entry, ``clustered depth`` or
  ``1 + stubs / live`` reads each
* hash probe: ``1 + m + (entries - m) / buckets`` (bucket plus expected
  chain), plus lookups when not covering
* columnstore: pages of segments surviving elimination, plus the deltastore
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, Sequence

from .catalog import IndexDef, IndexKind, TableSchema
from .errors import MissingStats
from .predicate import Atom, SeekRange, implies, seek_range
from .query import Query
from .stats import TableSnapshot


class PlanKind(str, enum.Enum):
    HEAP_SCAN = "heap_scan"
    CLUSTERED_SCAN = "clustered_scan"
    CLUSTERED_SEEK = "clustered_seek"
    NC_SEEK_LOOKUP = "nc_seek_lookup"
    NC_COVERING_SEEK = "nc_covering_seek"
    HASH_PROBE = "hash_probe"
    COLUMNSTORE_SCAN = "columnstore_scan"


# tie-break order among equal estimates
KIND_RANK = {
    PlanKind.NC_COVERING_SEEK: 0,
    PlanKind.CLUSTERED_SEEK: 1,
    PlanKind.NC_SEEK_LOOKUP: 2,
    PlanKind.HASH_PROBE: 3,
    PlanKind.COLUMNSTORE_SCAN: 4,
    PlanKind.HEAP_SCAN: 5,
    PlanKind.CLUSTERED_SCAN: 5,
}


@dataclass
class IndexInfo:
    """Physical shape of one index as the planner sees it."""

    definition: IndexDef
    depth: int = 1
    leaf_pages: int = 1
    entries: int = 0
    hash_entries: int = 0
    bucket_count: int = 1
    columnstore_reads: Callable[[Sequence[str], Sequence[Atom]], int] | None = None

    @property
    def entries_per_leaf(self) -> Fraction:
        return Fraction(max(self.entries, 1), max(self.leaf_pages, 1))


@dataclass
class TableInfo:
    schema: TableSchema
    data_pages: int
    clustered: IndexInfo | None = None
    indexes: list[IndexInfo] = field(default_factory=list)
    forwarded: int = 0
    live: int = 0
    snapshot: TableSnapshot | None = None

    @property
    def lookup_cost(self) -> Fraction:
        if self.clustered is not None:
            return Fraction(self.clustered.depth)
        return 1 + Fraction(self.forwarded, max(self.live, 1))


@dataclass
class AccessPlan:
    kind: PlanKind
    index: IndexDef | None
    estimated_reads: int
    covering: bool
    seek: SeekRange | None = None
    # atoms the index guarantees (implied by its filter), skipped at execution
    guaranteed: tuple[Atom, ...] = ()
    matched: int = 0

    @property
    def index_name(self) -> str:
        return self.index.name if self.index is not None else "-"

    def sort_key(self) -> tuple:
        return (self.estimated_reads, KIND_RANK[self.kind], self.index_name)

    def describe(self, chosen: bool) -> str:
        return (f"{self.kind.value} index={self.index_name} est_reads={self.estimated_reads} "
                f"covering={'y' if self.covering else 'n'} chosen={'y' if chosen else 'n'}")


@dataclass
class PlanExplain:
    chosen: AccessPlan
    candidates: list[AccessPlan]
    actual_reads: int | None = None

    @property
    def rendered(self) -> str:
        lines = [p.describe(p is self.chosen) for p in self.candidates]
        if self.actual_reads is not None:
            lines.append(f"actual_reads={self.actual_reads}")
        return "\n".join(lines)

    def __str__(self) -> str:
        return self.rendered


def _ceil(x) -> int:
    return int(math.ceil(x))


def needed_columns(query: Query, guaranteed: Sequence[Atom] = ()) -> set[str]:
    cols = set(query.projected)
    if query.aggregate and query.aggregate.column:
        cols.add(query.aggregate.column)
    cols |= {a.column for a in query.predicate if a not in guaranteed}
    return cols


def _guaranteed(query: Query, idx: IndexDef) -> tuple[Atom, ...]:
    if not idx.filter:
        return ()
    return tuple(a for a in query.predicate if implies(idx.filter, (a,)))


def _seek_cost(info: IndexInfo, matched: int) -> Fraction:
    extra = max(0, _ceil(Fraction(matched) / info.entries_per_leaf) - 1)
    return Fraction(info.depth + extra)


def enumerate_plans(query: Query, table: TableInfo) -> list[AccessPlan]:
    """Every applicable access path for ``query``, costed, in tie-break order."""
    snap = table.snapshot
    if snap is None:
        raise MissingStats(f"no statistics snapshot for table {table.schema.name}")
    pred = query.predicate
    types = {c.name: c.type for c in table.schema.columns}
    plans: list[AccessPlan] = []

    if table.clustered is None:
        plans.append(AccessPlan(PlanKind.HEAP_SCAN, None, table.data_pages, False,
                                matched=snap.count(pred)))
    else:
        ci = table.clustered
        plans.append(AccessPlan(PlanKind.CLUSTERED_SCAN, ci.definition,
                                ci.depth - 1 + ci.leaf_pages, True, matched=snap.count(pred)))
        cdef = ci.definition
        rng = seek_range(pred, cdef.key_columns, [types[c] for c in cdef.key_columns])
        if rng is not None:
            m = snap.count(rng.used)
            plans.append(AccessPlan(PlanKind.CLUSTERED_SEEK, cdef, _ceil(_seek_cost(ci, m)),
                                    True, seek=rng, matched=m))

    for info in table.indexes:
        idx = info.definition
        if idx.filter and not implies(pred, idx.filter):
            continue
        guaranteed = _guaranteed(query, idx)
        need = needed_columns(query, guaranteed)
        filt = tuple(idx.filter or ())
        if idx.kind is IndexKind.NONCLUSTERED:
            rng = seek_range(pred, idx.key_columns, [types[c] for c in idx.key_columns])
            if rng is None:
                continue
            m_seek = snap.count(rng.used + filt)
            cost = _seek_cost(info, m_seek)
            covering = need <= set(idx.columns)
            if covering:
                plans.append(AccessPlan(PlanKind.NC_COVERING_SEEK, idx, _ceil(cost), True,
                                        seek=rng, guaranteed=guaranteed, matched=m_seek))
            else:
                resident = tuple(a for a in pred if a.column in idx.columns)
                m_look = snap.count(rng.used + filt + resident)
                cost += m_look * table.lookup_cost
                plans.append(AccessPlan(PlanKind.NC_SEEK_LOOKUP, idx, _ceil(cost), False,
                                        seek=rng, guaranteed=guaranteed, matched=m_look))
        elif idx.kind is IndexKind.HASH:
            eq = [next((a for a in pred if a.column == c and a.is_equality), None)
                  for c in idx.key_columns]
            if any(a is None for a in eq):
                continue
            m = snap.count(eq)
            covering = need <= set(idx.key_columns)
            # the probed chain holds every match plus its share of other keys
            cost = 1 + m + Fraction(info.hash_entries - m, info.bucket_count)
            if not covering:
                cost += m * table.lookup_cost
            plans.append(AccessPlan(PlanKind.HASH_PROBE, idx, _ceil(cost), covering,
                                    seek=SeekRange(None, None, tuple(eq), len(eq)), matched=m))
        elif idx.kind is IndexKind.COLUMNSTORE:
            if query.aggregate is None or not need <= set(idx.key_columns):
                continue
            residual = tuple(a for a in pred if a not in guaranteed)
            cols = [query.aggregate.column] if query.aggregate.column else []
            cost = info.columnstore_reads(cols, residual)
            plans.append(AccessPlan(PlanKind.COLUMNSTORE_SCAN, idx, cost, True,
                                    guaranteed=guaranteed, matched=snap.count(pred)))

    plans.sort(key=AccessPlan.sort_key)
    return plans


def choose(plans: Sequence[AccessPlan]) -> AccessPlan:
    return min(plans, key=AccessPlan.sort_key)


def explain(query: Query, table: TableInfo) -> PlanExplain:
    plans = enumerate_plans(query, table)
    return PlanExplain(choose(plans), plans)
