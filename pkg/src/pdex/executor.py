"""Runs an ``AccessPlan`` and counts the pages it actually read."""
from __future__ import annotations

from dataclasses import dataclass
from typing import TYPE_CHECKING, Any, Iterator

from .catalog import IndexKind
from .columnstore import aggregate
from .encoding import decode_key, encode_key
from .planner import AccessPlan, PlanExplain, PlanKind
from .predicate import IS_NULL, compile_predicate
from .query import Query

if TYPE_CHECKING:
    from .engine import Database, IndexRuntime, TableRuntime


@dataclass
class QueryResult:
    columns: list[str]
    rows: list[tuple]
    actual_reads: int
    plan: AccessPlan
    explain: PlanExplain | None = None

    @property
    def scalar(self) -> Any:
        return self.rows[0][0]


def _hash_work(t: "TableRuntime") -> int:
    return sum(ix.hash.bucket_probes + ix.hash.chain_hops for ix in t.secondary if ix.hash is not None)


def run_plan(db: "Database", query: Query, plan: AccessPlan) -> QueryResult:
    """Execute ``query`` (already bound) through ``plan``.

    Actual reads are logical page reads plus, for hash probes, buckets probed
    and chain entries visited.
    """
    t = db.table(query.table)
    reads0 = db.counters.logical_reads
    hash0 = _hash_work(t)
    agg = query.aggregate
    if plan.kind is PlanKind.COLUMNSTORE_SCAN:
        ix = db.index(plan.index.name)
        residual = tuple(a for a in query.predicate if a not in plan.guaranteed)
        value = ix.cs.cs_aggregate(agg.column, agg.fn, residual)
        rows = [(value,)]
    else:
        residual = tuple(a for a in query.predicate if a not in plan.guaranteed)
        test = compile_predicate(residual, t.positions)
        matching = (r for r in _candidate_rows(db, t, query, plan) if test(r))
        if agg is None:
            idx = [t.positions[c] for c in query.projected]
            rows = [tuple(r[i] for i in idx) for r in matching]
        elif agg.column is None:
            rows = [(sum(1 for _ in matching),)]
        else:
            i = t.positions[agg.column]
            rows = [(aggregate(agg.fn, (r[i] for r in matching), t.schema.types[i], agg.column),)]
    actual = db.counters.logical_reads - reads0 + _hash_work(t) - hash0
    return QueryResult(_columns(query), rows, actual, plan)


def _columns(query: Query) -> list[str]:
    if query.aggregate is None:
        return list(query.projected)
    if query.aggregate.fn == "count":
        return ["COUNT(*)"]
    return [f"SUM({query.aggregate.column})"]


def _candidate_rows(db: "Database", t: "TableRuntime", query: Query, plan: AccessPlan) -> Iterator[tuple]:
    """Rows the plan produces before the residual predicate.

    Covering plans yield partial rows: columns the index does not hold are None.
    """
    kind = plan.kind
    if kind in (PlanKind.HEAP_SCAN, PlanKind.CLUSTERED_SCAN):
        for _, row in db._base_rows(t):
            yield row
        return
    if kind is PlanKind.CLUSTERED_SEEK:
        decode = t.codec.decode
        for e in t.clustered.tree.range_scan(plan.seek.lo, plan.seek.hi):
            yield decode(e.payload)
        return
    ix = db.index(plan.index.name)
    width = len(t.schema.columns)
    if kind is PlanKind.HASH_PROBE:
        values = [None if a.op == IS_NULL else a.value for a in plan.seek.used]
        locators = ix.hash.lookup_equal(encode_key(values, ix.key_types))
        if plan.covering:
            partial = [None] * width
            for i, v in zip(ix.key_pos, values):
                partial[i] = v
            for _ in locators:
                yield tuple(partial)
        else:
            for loc in locators:
                yield db._fetch(t, loc)
        return
    yield from _nc_rows(db, t, ix, query, plan, width)


def _nc_rows(db: "Database", t: "TableRuntime", ix: "IndexRuntime", query: Query,
             plan: AccessPlan, width: int) -> Iterator[tuple]:
    assert ix.kind is IndexKind.NONCLUSTERED
    # atoms answerable from the leaf are tested before paying for a lookup
    resident = tuple(a for a in query.predicate
                     if a.column in ix.definition.columns and a not in plan.guaranteed)
    early = compile_predicate(resident, t.positions)
    incl = ix.incl_codec
    for e in ix.tree.range_scan(plan.seek.lo, plan.seek.hi):
        partial = [None] * width
        for i, v in zip(ix.key_pos, decode_key(e.key, ix.key_types)):
            partial[i] = v
        if incl is not None:
            for i, v in zip(ix.incl_pos, incl.decode(e.payload)):
                partial[i] = v
        if plan.covering:
            yield tuple(partial)
        elif early(partial):
            yield db._fetch(t, e.locator)
