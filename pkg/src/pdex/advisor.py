"""Workload-driven index recommendations.

Rules:

R1  key order: equality columns first, then range columns, each group by
    descending distinctness
R2  covering: remaining referenced columns become included columns
R3  filtered: mostly-NULL predicate column gets ``col IS NOT NULL``
R4  over-indexing guard: at most ``max_creates`` creates on a heavily
    updated table; unused indexes become drop candidates
R5  small-table guard: no creates on tables of ``small_table_pages`` or fewer
R6  large-object columns are never key columns
R7  clustered key: narrowest unique non-null column for a heap, preferring
    columns the workload filters on
R8  unique when the key data has no duplicates

Candidates are scored by ``sum(weight * estimated read reduction)`` over the
whole workload minus ``dml weight * 1`` for the maintenance of one more
index. Read reductions come from the planner run against the hypothetical
index shape.
"""
from __future__ import annotations

import dataclasses
import math
import os
import re
import shutil
import tempfile
from dataclasses import dataclass, field
from fractions import Fraction

from .btree import estimate_shape
from .catalog import IndexDef, IndexKind, validate_index_def
from .encoding import RowCodec, encode_key
from .errors import EmptyWorkload, QuerySyntaxError
from .planner import IndexInfo, TableInfo, enumerate_plans
from .predicate import EQ, IS_NULL, NOT_NULL, RANGE_OPS, Atom, compile_predicate
from .query import Query, parse_query, render_conjunction

FILTER_NULL_FRACTION = Fraction(9, 10)
RULES = ("R1", "R2", "R3", "R4", "R5", "R6", "R7", "R8")


@dataclass(frozen=True)
class DmlMix:
    inserts: float = 0
    updates: float = 0
    deletes: float = 0

    @property
    def total(self) -> float:
        return self.inserts + self.updates + self.deletes


@dataclass
class Workload:
    entries: list[tuple[Query, float]] = field(default_factory=list)
    dml: dict[str, DmlMix] = field(default_factory=dict)
    updated_columns: dict[str, dict[str, float]] = field(default_factory=dict)

    def query_weight(self, table: str) -> float:
        return sum(w for q, w in self.entries if q.table == table)

    def tables(self) -> list[str]:
        return sorted({q.table for q, _ in self.entries})


_WEIGHT = re.compile(r"^weight:(\S+)\s+(.*)$", re.IGNORECASE)
_DML = re.compile(r"^dml:(\w+):([^,]+),([^,]+),([^,]+)$", re.IGNORECASE)


def parse_workload(text: str) -> Workload:
    """One query per line with an optional ``weight:<n>`` prefix, plus
    ``dml:<table>:<ins>,<upd>,<del>`` lines. Lines starting with ``#`` are comments."""
    wl = Workload()
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        try:
            m = _DML.match(line)
            if m:
                ins, upd, dele = (float(x) for x in m.groups()[1:])
                if min(ins, upd, dele) < 0:
                    raise ValueError("negative weight")
                wl.dml[m.group(1)] = DmlMix(ins, upd, dele)
                continue
            m = _WEIGHT.match(line)
            weight, text_q = (float(m.group(1)), m.group(2)) if m else (1.0, line)
            if weight < 0:
                raise ValueError("negative weight")
            wl.entries.append((parse_query(text_q), weight))
        except (ValueError, QuerySyntaxError) as exc:
            raise QuerySyntaxError(f"workload line {lineno}: {exc}") from None
    return wl


@dataclass(frozen=True)
class Recommendation:
    action: str  # create, avoid or drop-candidate
    index: IndexDef
    rules_fired: tuple[str, ...]
    rationale: str
    score: float

    def render(self) -> str:
        d = self.index
        kind = ("unique " if d.unique else "") + d.kind.value
        filt = render_conjunction(d.filter) if d.filter else ""
        return (f"{self.action} {kind} ({', '.join(d.key_columns)}) "
                f"include ({', '.join(d.included_columns)}) filter ({filt}) "
                f"rules=[{','.join(self.rules_fired)}] score={_fmt(self.score)}")


def _fmt(x: float) -> str:
    x = float(x)
    return str(int(x)) if x == int(x) else f"{x:.2f}"


@dataclass
class _Candidate:
    index: IndexDef
    rules: set[str]
    notes: list[str]


class Advisor:
    def __init__(self, db, small_table_pages: int = 8, max_creates: int = 3,
                 heavy_update_ratio: float = 2.0):
        self.db = db
        self.small_table_pages = small_table_pages
        self.max_creates = max_creates
        self.heavy_update_ratio = heavy_update_ratio

    # candidate generation

    def _candidate_for(self, q: Query) -> _Candidate | None:
        t = self.db.table(q.table)
        snap = self.db.snapshot(q.table)
        schema = t.schema
        rules: set[str] = set()
        notes: list[str] = []

        def distinctness(c: str):
            return (-len(set(snap.column(c))), c)

        eq = sorted({a.column for a in q.predicate if a.op in (EQ, IS_NULL)}, key=distinctness)
        rng = sorted({a.column for a in q.predicate if a.op in RANGE_OPS} - set(eq), key=distinctness)
        blobs = [c for c in eq + rng if schema.column(c).type.is_large_object]
        if blobs:
            rules.add("R6")
            notes.append(f"large-object column(s) {', '.join(blobs)} kept out of the key")
        key = [c for c in eq + rng if c not in blobs]
        if not key:
            return None
        rules.add("R1")
        if eq and rng:
            notes.append(f"equality column(s) {', '.join(eq)} lead, then {', '.join(rng)}")
        referenced = [c for c in schema.names if c in q.referenced_columns and c not in key]
        if referenced:
            rules.add("R2")
            notes.append(f"include {', '.join(referenced)} to cover the query")
        filt = None
        for c in key:
            nulls = snap.null_fraction(c)
            if nulls >= FILTER_NULL_FRACTION and any(
                    a.column == c and a.op != IS_NULL for a in q.predicate):
                filt = (Atom(c, NOT_NULL),)
                rules.add("R3")
                notes.append(f"{c} is {float(nulls):.0%} NULL: index only non-NULL rows")
                break
        unique = False
        if snap.row_count and filt is None and snap.density(key) == Fraction(1, snap.row_count):
            unique = True
            rules.add("R8")
            notes.append("key values are distinct")
        name = "ix_" + q.table + "_" + "_".join(key) + ("_inc" if referenced else "") + ("_nn" if filt else "")
        return _Candidate(IndexDef(name, q.table, IndexKind.NONCLUSTERED, tuple(key),
                                   tuple(referenced), unique, filt), rules, notes)

    def _clustered_candidate(self, table: str, filtered: set[str] = frozenset()) -> _Candidate | None:
        t = self.db.table(table)
        if t.clustered is not None:
            return None
        snap = self.db.snapshot(table)
        if not snap.row_count:
            return None
        best = None
        for c in t.schema.columns:
            if c.type.is_large_object:
                continue
            col = snap.column(c.name)
            if any(v is None for v in col) or len(set(col)) != len(col):
                continue
            width = sum(len(encode_key([v], [c.type])) for v in col) / len(col)
            # columns the workload filters on win over merely narrow ones
            rank = (c.name not in filtered, width)
            if best is None or rank < best[2]:
                best = (width, c.name, rank)
        if best is None:
            return None
        which = "filtered" if best[1] in filtered else "narrowest"
        notes = [f"{best[1]} is the {which} unique non-NULL column ({best[0]:.1f} key bytes)"]
        if any(c.type.is_large_object for c in t.schema.columns):
            notes.append("large-object columns excluded")
        return _Candidate(IndexDef(f"cx_{table}_{best[1]}", table, IndexKind.CLUSTERED, (best[1],),
                                   unique=True), {"R7", "R8"}, notes)

    # costing

    def _hypothetical_info(self, idx: IndexDef) -> IndexInfo:
        t = self.db.table(idx.table)
        snap = self.db.snapshot(idx.table)
        pos = t.positions
        types = t.schema.types
        key_pos = [pos[c] for c in idx.key_columns]
        key_types = [types[i] for i in key_pos]
        incl = RowCodec([types[pos[c]] for c in idx.included_columns]) if idx.included_columns else None
        if idx.kind is IndexKind.CLUSTERED:
            loc_len = 0
        elif t.clustered is not None:
            loc_len = len(t.clustered.key_of(snap.rows[0])) if snap.rows else 9
        else:
            loc_len = 8
        test = compile_predicate(idx.filter or (), pos)
        rows = [r for r in snap.rows if test(r)]
        n = len(rows)
        if n:
            keys = sum(len(encode_key([r[i] for i in key_pos], key_types)) for r in rows) / n
            payload = (sum(len(t.codec.encode(r)) for r in rows) / n if idx.kind is IndexKind.CLUSTERED
                       else sum(len(incl.encode([r[pos[c]] for c in idx.included_columns])) for r in rows) / n
                       if incl else 0)
        else:
            keys, payload = 1, 0
        leaf_rec = 4 + keys + loc_len + payload
        depth, leaves = estimate_shape(n, math.ceil(leaf_rec), math.ceil(2 + keys + 4))
        return IndexInfo(idx, depth, leaves, n)

    def _best_cost(self, q: Query, info: TableInfo) -> int:
        return min(p.estimated_reads for p in enumerate_plans(q, info))

    def _with_index(self, info: TableInfo, idx: IndexDef) -> TableInfo:
        hyp = self._hypothetical_info(idx)
        if idx.kind is IndexKind.CLUSTERED:
            return dataclasses.replace(info, clustered=hyp, data_pages=hyp.leaf_pages,
                                       forwarded=0)
        return dataclasses.replace(info, indexes=info.indexes + [hyp])

    def _reduction(self, wl: Workload, idx: IndexDef) -> float:
        info = self.db.table_info(idx.table)
        after = self._with_index(info, idx)
        total = 0.0
        for q, w in wl.entries:
            if q.table != idx.table:
                continue
            total += w * (self._best_cost(q, info) - self._best_cost(q, after))
        return total

    def _data_pages(self, table: str) -> int:
        return self.db.table_info(table).data_pages

    # main entry point

    def recommend(self, wl: Workload) -> list[Recommendation]:
        if not wl.entries:
            raise EmptyWorkload("workload has no queries")
        wl = Workload([(self.db.bind(q), w) for q, w in wl.entries], wl.dml, wl.updated_columns)
        existing = self.db.index_defs()
        recs: list[Recommendation] = []
        for table in wl.tables():
            recs += self._recommend_table(wl, table, existing)
        recs.sort(key=lambda r: (-r.score, r.index.name, r.action))
        return recs

    def _recommend_table(self, wl: Workload, table: str, existing: list[IndexDef]) -> list[Recommendation]:
        schema = self.db.table(table).schema
        merged: dict[tuple, _Candidate] = {}
        for q, w in wl.entries:
            if q.table != table or w <= 0:
                continue
            cand = self._candidate_for(q)
            if cand is None:
                continue
            d = cand.index
            sig = (d.key_columns, d.filter)
            if sig in merged:
                prev = merged[sig]
                incl = tuple(c for c in schema.names if c in set(prev.index.included_columns) | set(d.included_columns))
                name = prev.index.name if incl == prev.index.included_columns else d.name if incl == d.included_columns \
                    else prev.index.name.removesuffix("_inc") + "_inc"
                prev.index = dataclasses.replace(prev.index, included_columns=incl, name=name,
                                                 unique=prev.index.unique and d.unique)
                prev.rules |= cand.rules
                prev.notes += [n for n in cand.notes if n not in prev.notes]
            else:
                merged[sig] = cand
        filtered = {a.column for q, w in wl.entries if q.table == table and w > 0 for a in q.predicate}
        cx = self._clustered_candidate(table, filtered)
        if cx is not None:
            merged[("clustered",)] = cx

        # drop anything an existing index already provides
        names = {d.name for d in existing}
        fresh = []
        for cand in merged.values():
            d = cand.index
            if any(e.table == table and e.kind is d.kind and e.key_columns == d.key_columns
                   and set(d.included_columns) <= set(e.included_columns) and e.filter == d.filter
                   for e in existing):
                continue
            while d.name in names:
                d = dataclasses.replace(d, name=d.name + "_2")
            validate_index_def(d, schema, existing)
            cand.index = d
            fresh.append(cand)

        dml = wl.dml.get(table, DmlMix())
        scored = []
        for cand in fresh:
            gain = self._reduction(wl, cand.index)
            if gain <= 0:
                continue
            score = max(0.0, gain - dml.total)
            scored.append((score, cand))
        scored.sort(key=lambda sc: (-sc[0], sc[1].index.name))

        out: list[Recommendation] = []
        pages = self._data_pages(table)
        if pages <= self.small_table_pages:
            for score, cand in scored or [(0.0, c) for c in fresh[:1]]:
                out.append(Recommendation(
                    "avoid", cand.index, ("R5",),
                    f"{table} has {pages} page(s) (<= {self.small_table_pages}); a scan is already cheap", 0.0))
            return out

        heavy = dml.updates > self.heavy_update_ratio * wl.query_weight(table)
        creates = 0
        for score, cand in scored:
            rules = tuple(r for r in RULES if r in cand.rules)
            if heavy and creates >= self.max_creates:
                out.append(Recommendation("avoid", cand.index, tuple(sorted({"R4", *rules})),
                                          f"{table} is heavily updated; already {creates} creates", 0.0))
                continue
            if heavy:
                rules = tuple(sorted(set(rules) | {"R4"}))
            creates += 1
            out.append(Recommendation("create", cand.index, rules, "; ".join(cand.notes), score))

        out += self._drop_candidates(wl, table, existing, [r for r in out if r.action == "create"])
        return out

    def _drop_candidates(self, wl: Workload, table: str, existing: list[IndexDef],
                         creates: list[Recommendation]) -> list[Recommendation]:
        info = self.db.table_info(table)
        used = set()
        for q, w in wl.entries:
            if q.table == table and w > 0:
                plans = enumerate_plans(q, info)
                used.add(plans[0].index_name)
        dml = wl.dml.get(table, DmlMix())
        out = []
        for d in existing:
            if d.table != table or d.unique or d.kind in (IndexKind.CLUSTERED, IndexKind.COLUMNSTORE):
                continue
            superseded = next((r for r in creates if r.index.kind is IndexKind.NONCLUSTERED
                               and d.kind is IndexKind.NONCLUSTERED
                               and r.index.key_columns[:len(d.key_columns)] == d.key_columns
                               and set(d.included_columns) <= set(r.index.included_columns)
                               and r.index.filter == d.filter), None)
            if superseded is not None:
                out.append(Recommendation("drop-candidate", d, ("R2",),
                                          f"superseded by {superseded.index.name}", float(dml.total)))
            elif d.name not in used:
                out.append(Recommendation("drop-candidate", d, ("R4",),
                                          "no workload query uses it", float(dml.total)))
        return out


def recommend(db, workload: Workload, **options) -> list[Recommendation]:
    return Advisor(db, **options).recommend(workload)


def weighted_reads(db, workload: Workload) -> float:
    total = 0.0
    for q, w in workload.entries:
        if w:
            total += w * db.execute(q).actual_reads
    return total


def evaluate(db, rec: Recommendation, workload: Workload) -> dict:
    """Replay ``workload`` on a scratch copy before and after applying ``rec``."""
    from .engine import Database

    db._finish()
    fd, scratch = tempfile.mkstemp(suffix=".pdex", dir=os.path.dirname(os.path.abspath(db.path)))
    os.close(fd)
    try:
        shutil.copyfile(db.path, scratch)
        with Database.open(scratch, trace=False, lock=False) as copy:
            before = weighted_reads(copy, workload)
            if rec.action == "create":
                copy.create_index(rec.index)
            elif rec.action == "drop-candidate":
                copy.drop_index(rec.index.name)
            after = weighted_reads(copy, workload)
    finally:
        os.unlink(scratch)
    return {"reads_before": before, "reads_after": after}
