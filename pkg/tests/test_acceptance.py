"""Acceptance gate: one test group per criterion, tagged with ``criterion(n)``.

Expected numbers come from ``oracles.py`` (independent arithmetic) or are
frozen values that the oracle produced; see the comments at each constant.
"""
from __future__ import annotations

import math
import random
from collections import Counter
from fractions import Fraction

import pytest

import oracles
from pdex import ColumnDef, Database, IndexDef, parse_workload, recommend, evaluate
from pdex.advisor import Advisor
from pdex.btree import BTree, Entry
from pdex.errors import DuplicateKey, PdexError
from pdex.planner import PlanKind
from pdex.storage import Pager, PageKind

SCAN_KINDS = {PlanKind.HEAP_SCAN, PlanKind.CLUSTERED_SCAN}

# oracles.max_chain([oracles.int_key(k) for k in range(100_000)], 65_536)
FROZEN_MAX_CHAIN_SEQUENTIAL = 3
# oracles.btree_depth(100_000, 21, 15): unique nonclustered int64 key over a heap,
# leaf record 2+9+2+8 bytes, widest separator record 2+9+4 bytes
FROZEN_DEPTH_100K = 2
FROZEN_LEAVES_100K = 307


def _multiset(rows):
    return Counter(tuple(rows))


# 1 -----------------------------------------------------------------------

@pytest.mark.criterion(1)
def test_depth_oracle_matches_frozen_values():
    # the widest and narrowest separator give the same answer, so truncation cannot matter
    assert oracles.btree_depth(100_000, 21, 2 + 9 + 4) == (FROZEN_DEPTH_100K, FROZEN_LEAVES_100K)
    assert oracles.btree_depth(100_000, 21, 2 + 1 + 4) == (FROZEN_DEPTH_100K, FROZEN_LEAVES_100K)


@pytest.mark.criterion(1)
def test_bulk_built_depth_and_point_seek_reads(dbpath):
    rng = random.Random(1)
    keys = rng.sample(range(-10**12, 10**12), 100_000)
    with Database.create(dbpath, trace=False) as db:
        db.create_table("t", [("k", "int64"), ("v", "int64")])
        db.insert_many("t", [(k, i) for i, k in enumerate(keys)])
        db.create_index(IndexDef("ix_k", "t", "nonclustered", ("k",), unique=True))
        st = db.index_stats("ix_k")
        assert (st.depth, st.leaf_pages) == (FROZEN_DEPTH_100K, FROZEN_LEAVES_100K)
        present = set(keys)
        probes = [rng.choice(keys) if i % 2 else rng.randrange(-10**12, 10**12) for i in range(1000)]
        for k in probes:
            res = db.execute(f"SELECT k FROM t WHERE k = {k}")
            assert res.plan.kind is PlanKind.NC_COVERING_SEEK
            assert res.actual_reads == st.depth
            assert res.plan.estimated_reads == st.depth
            assert res.rows == ([(k,)] if k in present else [])


@pytest.mark.criterion(1)
def test_raw_btree_seek_reads_equal_depth(tmp_path):
    pager = Pager(tmp_path / "raw.pdex", create=True)
    pager.allocate_page(PageKind.CATALOG)
    entries = [Entry(oracles.int_key(k), (k).to_bytes(8, "big"), b"") for k in range(100_000)]
    tree = BTree.bulk_build(pager, entries, unique=True)
    assert tree.depth() == FROZEN_DEPTH_100K
    assert tree.leaf_page_count() == FROZEN_LEAVES_100K
    rng = random.Random(2)
    for _ in range(1000):
        k = rng.randrange(-50, 100_050)
        before = pager.counters.logical_reads
        found = tree.seek(oracles.int_key(k))
        assert pager.counters.logical_reads - before == FROZEN_DEPTH_100K
        assert len(found) == (1 if 0 <= k < 100_000 else 0)
    pager.close()


# 2 -----------------------------------------------------------------------

def _random_table(db, name, rng, n, heap=False):
    db.create_table(name, [("id", "int64", False), ("a", "int64"), ("b", "int64"),
                           ("f", "float64"), ("s", "string")])
    words = ["ash", "birch", "cedar", "elm", "fir", "oak", "pine", "yew", "it's"]
    ids = rng.sample(range(n * 10), n)
    rows = []
    for i in ids:
        rows.append((i,
                     rng.randrange(40) if rng.random() > 0.05 else None,
                     rng.randrange(3000) if rng.random() > 0.2 else None,
                     round(rng.uniform(-500, 500), 2) if rng.random() > 0.1 else None,
                     rng.choice(words) if rng.random() > 0.1 else None))
    db.insert_many(name, rows)
    choices = [
        IndexDef(f"{name}_cx_id", name, "clustered", ("id",), unique=True),
        IndexDef(f"{name}_cx_a", name, "clustered", ("a",)),
        IndexDef(f"{name}_nc_ab", name, "nonclustered", ("a", "b"), ("f",)),
        IndexDef(f"{name}_nc_b_filtered", name, "nonclustered", ("b",), ("s",),
                 filter=oracles_filter_b()),
        IndexDef(f"{name}_nc_s", name, "nonclustered", ("s",)),
        IndexDef(f"{name}_nc_id", name, "nonclustered", ("id",), unique=True),
        IndexDef(f"{name}_h_a", name, "hash", ("a",), bucket_count=64),
        IndexDef(f"{name}_h_as", name, "hash", ("a", "s"), bucket_count=256),
        IndexDef(f"{name}_cs", name, "columnstore", ("a", "b", "f", "id")),
    ]
    picked = [c for c in choices if rng.random() < 0.6]
    clustered = [c for c in picked if c.kind.value == "clustered"][:1]
    if heap:
        clustered = []
    for c in picked:
        if c.kind.value != "clustered" or c in clustered:
            db.create_index(c)
    return rows


def oracles_filter_b():
    from pdex import parse_conjunction
    return parse_conjunction("b IS NOT NULL")


_COLS = ["id", "a", "b", "f", "s"]


def _random_atom(rng, rows):
    col = rng.choice(_COLS)
    pos = _COLS.index(col)
    sample = rng.choice(rows)[pos]
    op = rng.choice(["=", "=", "<", ">", "BETWEEN", "IS NULL", "IS NOT NULL"])
    if col == "id" and op.startswith("IS"):
        op = "="
    if op.startswith("IS"):
        return f"{col} {op}", (pos, op, None)
    if sample is None:
        sample = {"id": 5, "a": 7, "b": 1500, "f": 0.5, "s": "fir"}[col]
    if op == "BETWEEN":
        other = rng.choice(rows)[pos]
        if other is None:
            other = sample
        lo, hi = sorted([sample, other])
        return f"{col} BETWEEN {_lit(lo)} AND {_lit(hi)}", (pos, op, (lo, hi))
    return f"{col} {op} {_lit(sample)}", (pos, op, sample)


def _lit(v):
    if isinstance(v, str):
        return "'" + v.replace("'", "''") + "'"
    return repr(v)


def _random_query(rng, table, rows):
    atoms = [_random_atom(rng, rows) for _ in range(rng.choice([0, 1, 1, 2, 2, 3]))]
    where = (" WHERE " + " AND ".join(a[0] for a in atoms)) if atoms else ""
    matched = oracles.filter_rows(rows, [a[1] for a in atoms])
    shape = rng.random()
    if shape < 0.15:
        return f"SELECT COUNT(*) FROM {table}{where}", [(len(matched),)]
    if shape < 0.3:
        col = rng.choice(["id", "a", "b", "f"])
        pos = _COLS.index(col)
        return f"SELECT SUM({col}) FROM {table}{where}", [(oracles.exact_sum(r[pos] for r in matched),)]
    cols = rng.sample(_COLS, rng.randint(1, 3))
    pos = [_COLS.index(c) for c in cols]
    return (f"SELECT {', '.join(cols)} FROM {table}{where}",
            [tuple(r[p] for p in pos) for r in matched])


@pytest.mark.criterion(2)
def test_every_plan_matches_heap_scan_oracle(dbpath):
    rng = random.Random(20)
    mismatches = []
    kinds = Counter()
    with Database.create(dbpath, trace=False) as db:
        # the first table always stays a heap so both base organizations are covered
        tables = {f"t{i}": _random_table(db, f"t{i}", rng, 10_000, heap=i == 0) for i in range(3)}
        for qi in range(1000):
            name = f"t{qi % 3}"
            sql, expected = _random_query(rng, name, tables[name])
            want = _multiset(expected)
            for plan in db.plans(sql):
                kinds[plan.kind] += 1
                got = db.execute_plan(sql, plan)
                if _multiset(got.rows) != want:
                    mismatches.append((sql, plan.kind, plan.index_name))
    assert mismatches == []
    # the random mix really exercised every access path
    assert set(kinds) == set(PlanKind)


# 3 -----------------------------------------------------------------------

@pytest.mark.criterion(3)
def test_filtered_index_is_smaller(dbpath):
    rng = random.Random(3)
    with Database.create(dbpath, trace=False) as db:
        db.create_table("t", [("id", "int64"), ("c", "int64"), ("v", "string")])
        db.insert_many("t", [(i, rng.randrange(10**6) if i % 10 == 0 else None, "x" * 20)
                             for i in range(100_000)])
        db.create_index(IndexDef("full_c", "t", "nonclustered", ("c",)))
        db.create_index(IndexDef("filt_c", "t", "nonclustered", ("c",),
                                 filter=oracles_filter_not_null("c")))
        full, filt = db.index_stats("full_c"), db.index_stats("filt_c")
        assert filt.row_count == 10_000 and full.row_count == 100_000
        assert filt.leaf_pages <= Fraction(15, 100) * full.leaf_pages
        # the filtered index still answers queries its filter implies, no worse than the full one
        sql = "SELECT c FROM t WHERE c > 500000"
        by_index = {p.index_name: p for p in db.plans(sql)}
        via_filt = db.execute_plan(sql, by_index["filt_c"])
        via_full = db.execute_plan(sql, by_index["full_c"])
        assert _multiset(via_filt.rows) == _multiset(via_full.rows)
        assert via_filt.actual_reads <= via_full.actual_reads
        assert "filt_c" not in {p.index_name for p in db.plans("SELECT c FROM t WHERE c IS NULL")}


def oracles_filter_not_null(col):
    from pdex import parse_conjunction
    return parse_conjunction(f"{col} IS NOT NULL")


# 4 -----------------------------------------------------------------------

@pytest.mark.criterion(4)
def test_covering_beats_lookup(dbpath):
    rng = random.Random(4)
    n = 20_000
    with Database.create(dbpath, trace=False) as db:
        db.create_table("t", [("id", "int64"), ("k", "int64"), ("v", "string"), ("pad", "string")])
        ks = list(range(n))
        rng.shuffle(ks)
        db.insert_many("t", [(i, k, f"v{k}", "p" * 60) for i, k in enumerate(ks)])
        db.create_index(IndexDef("ix_k", "t", "nonclustered", ("k",)))
        db.create_index(IndexDef("ix_k_v", "t", "nonclustered", ("k",), ("v",)))
        sql = "SELECT k, v FROM t WHERE k BETWEEN 1000 AND 1999"  # 5% of rows
        assert db.selectivity("t", "k BETWEEN 1000 AND 1999").fraction == Fraction(1, 20)
        plans = {p.kind: p for p in db.plans(sql)}
        cover = db.execute_plan(sql, plans[PlanKind.NC_COVERING_SEEK])
        lookup = db.execute_plan(sql, plans[PlanKind.NC_SEEK_LOOKUP])
        assert _multiset(cover.rows) == _multiset(lookup.rows) == _multiset(
            (k, f"v{k}") for k in range(1000, 2000))
        assert cover.actual_reads < lookup.actual_reads
        chosen = db.execute(sql)
        assert chosen.plan.kind is PlanKind.NC_COVERING_SEEK
        assert chosen.plan.index_name == "ix_k_v"


# 5 -----------------------------------------------------------------------

@pytest.fixture(scope="module")
def hash_db(tmp_path_factory):
    path = str(tmp_path_factory.mktemp("hash") / "h.pdex")
    db = Database.create(path, trace=False)
    db.create_table("t", [("k", "int64"), ("g", "int64"), ("v", "int64")])
    db.insert_many("t", [(k, k % 100, k * 7) for k in range(100_000)])
    db.create_index(IndexDef("h_k", "t", "hash", ("k",), bucket_count=65_536))
    db.create_index(IndexDef("h_gv", "t", "hash", ("g", "v"), bucket_count=65_536))
    yield db
    db.close()


@pytest.mark.criterion(5)
def test_hash_bound_oracle():
    keys = [oracles.int_key(k) for k in range(100_000)]
    assert oracles.max_chain(keys, 65_536) == FROZEN_MAX_CHAIN_SEQUENTIAL


@pytest.mark.criterion(5)
def test_hash_full_key_probe(hash_db):
    h = hash_db.index("h_k").hash
    assert h.bucket_count == 65_536 and h.size == 100_000
    assert h.chain_stats().max_chain <= FROZEN_MAX_CHAIN_SEQUENTIAL
    rng = random.Random(5)
    for _ in range(200):
        k = rng.randrange(-100, 100_100)
        probes, hops = h.bucket_probes, h.chain_hops
        res = hash_db.execute(f"SELECT v FROM t WHERE k = {k}")
        assert res.plan.kind is PlanKind.HASH_PROBE
        assert h.bucket_probes - probes == 1
        assert h.chain_hops - hops <= FROZEN_MAX_CHAIN_SEQUENTIAL
        assert res.rows == ([(k * 7,)] if 0 <= k < 100_000 else [])


@pytest.mark.criterion(5)
def test_hash_range_falls_back_to_scan(hash_db):
    plans = hash_db.plans("SELECT v FROM t WHERE k > 99990")
    assert all(p.kind is not PlanKind.HASH_PROBE for p in plans)
    res = hash_db.execute("SELECT v FROM t WHERE k > 99990")
    assert res.plan.kind in SCAN_KINDS
    assert sorted(res.rows) == [(k * 7,) for k in range(99_991, 100_000)]


@pytest.mark.criterion(5)
def test_hash_partial_key_falls_back_to_scan(hash_db):
    sql = "SELECT v FROM t WHERE g = 42"
    assert all(p.index_name != "h_gv" for p in hash_db.plans(sql))
    res = hash_db.execute(sql)
    assert res.plan.kind in SCAN_KINDS
    assert len(res.rows) == 1000
    full = hash_db.execute("SELECT v FROM t WHERE g = 42 AND v = 294")
    assert full.plan.kind is PlanKind.HASH_PROBE and full.plan.index_name == "h_gv"
    assert full.rows == [(294,)]


# 6 -----------------------------------------------------------------------

@pytest.mark.criterion(6)
def test_columnstore_matches_rowstore(dbpath):
    rng = random.Random(6)
    rows = [(i, rng.randrange(50), rng.randrange(-10**9, 10**9) if rng.random() > 0.05 else None,
             rng.uniform(-1e6, 1e6))
            for i in range(100_000)]
    with Database.create(dbpath, trace=False) as db:
        db.create_table("t", [("id", "int64"), ("grp", "int64"), ("amt", "int64"), ("price", "float64")])
        db.create_index(IndexDef("cs", "t", "columnstore", ("id", "grp", "amt", "price")))
        for i in range(0, len(rows), 7_000):
            db.insert_many("t", rows[i:i + 7_000])
        cs = db.index("cs").cs
        assert cs.threshold == 4096
        assert cs.delta_rows < 4096
        assert len(cs.rowgroups) == 100_000 // 4096
        assert cs.row_count == 100_000

        checks = [
            ("SELECT COUNT(*) FROM t", 100_000),
            ("SELECT SUM(amt) FROM t", oracles.exact_sum(r[2] for r in rows)),
            ("SELECT SUM(price) FROM t", oracles.exact_sum(r[3] for r in rows)),
            ("SELECT COUNT(*) FROM t WHERE grp = 7", sum(1 for r in rows if r[1] == 7)),
            ("SELECT SUM(amt) FROM t WHERE grp BETWEEN 10 AND 19",
             oracles.exact_sum(r[2] for r in rows if 10 <= r[1] <= 19)),
            ("SELECT COUNT(*) FROM t WHERE amt IS NULL", sum(1 for r in rows if r[2] is None)),
        ]
        for sql, want in checks:
            res = db.execute(sql)
            assert res.plan.kind is PlanKind.COLUMNSTORE_SCAN, sql
            assert res.scalar == want, sql
            heap = next(p for p in db.plans(sql) if p.kind is PlanKind.HEAP_SCAN)
            assert db.execute_plan(sql, heap).scalar == want, sql

        # ids arrive in order, so this range lies outside every rowgroup but the first
        pred = db.bind("SELECT SUM(amt) FROM t WHERE id < 1000").predicate
        skipped = cs.segments_skipped
        with_elim = cs.cs_aggregate("amt", "sum", pred, eliminate=True)
        assert cs.segments_skipped > skipped
        before = cs.segments_skipped
        without = cs.cs_aggregate("amt", "sum", pred, eliminate=False)
        assert cs.segments_skipped == before
        assert with_elim == without == oracles.exact_sum(r[2] for r in rows if r[0] < 1000)
        assert db.execute("SELECT SUM(amt) FROM t WHERE id < 1000").scalar == with_elim


# 7 -----------------------------------------------------------------------

@pytest.mark.criterion(7)
@pytest.mark.parametrize("unique", [True, False])
def test_clustered_key_update_is_delete_insert(dbpath, unique):
    with Database.create(dbpath, trace=True) as db:
        db.create_table("t", [("id", "int64"), ("grp", "int64"), ("v", "string")])
        db.insert_many("t", [(i, i % 10, f"r{i}") for i in range(500)])
        key = "id" if unique else "grp"
        db.create_index(IndexDef("cx", "t", "clustered", (key,), unique=unique))
        db.create_index(IndexDef("nc_v", "t", "nonclustered", ("v",)))
        mark = len(db.events)
        if unique:
            n = db.update("t", {"id": 10_000}, "id = 42")
            old_q, new_q = "SELECT v FROM t WHERE id = 42", "SELECT v FROM t WHERE id = 10000"
        else:
            n = db.update("t", {"grp": 77}, "grp = 3")
            old_q, new_q = "SELECT v FROM t WHERE grp = 3", "SELECT v FROM t WHERE grp = 77"
        events = db.events[mark:]
        assert [e.kind for e in events] == ["DELETE", "INSERT"] * n
        assert n == (1 if unique else 50)
        for d, i in zip(events[::2], events[1::2]):
            before, after = d.data["row"], i.data["row"]
            assert before[2] == after[2]
        assert db.execute("SELECT COUNT(*) FROM t").scalar == 500
        assert db.execute(old_q).rows == []
        assert len(db.execute(new_q).rows) == n
        assert db.audit().ok
        # the trace file holds the same events
        assert [e.kind for e in db.read_trace()[mark:mark + 2 * n]] == ["DELETE", "INSERT"] * n


# 8 -----------------------------------------------------------------------

@pytest.mark.criterion(8)
def test_primary_key_unique_clustered_and_atomic_duplicates(dbpath):
    with Database.create(dbpath, trace=False) as db:
        db.create_table("t", [("id", "int64"), ("email", "string"), ("v", "int64")],
                        primary_key=["id"])
        [pk] = db.index_defs("t")
        assert pk.kind.value == "clustered" and pk.unique and pk.key_columns == ("id",)
        db.create_index(IndexDef("u_email", "t", "nonclustered", ("email",), unique=True))
        db.create_index(IndexDef("h_v", "t", "hash", ("v",)))
        db.create_index(IndexDef("cs", "t", "columnstore", ("id", "v")))
        db.insert_many("t", [(i, f"u{i}@x", i % 7) for i in range(300)])
        assert db.audit().ok
        snapshot = sorted(db.rows("t"))
        for bad in ([(5, "new@x", 1)],                        # duplicate primary key
                    [(900, "u7@x", 1)],                       # duplicate unique column
                    [(901, "a@x", 1), (902, "b@x", 2), (901, "c@x", 3)]):  # duplicate inside batch
            with pytest.raises(DuplicateKey):
                db.insert_many("t", bad)
            assert sorted(db.rows("t")) == snapshot
            assert db.audit().ok
        with pytest.raises(DuplicateKey):
            db.update("t", {"id": 1}, "id = 2")
        assert sorted(db.rows("t")) == snapshot
        assert db.audit().ok
    with Database.open(dbpath, trace=False) as db:
        assert sorted(db.rows("t")) == snapshot
        assert db.audit().ok


# 9 -----------------------------------------------------------------------

@pytest.mark.criterion(9)
def test_statistics_exact_on_random_tables(dbpath):
    rng = random.Random(9)
    with Database.create(dbpath, trace=False) as db:
        for ti in range(100):
            n = 10_000 if ti == 0 else rng.randint(1, 1500)
            name = f"s{ti}"
            db.create_table(name, [("x", "int64"), ("y", "string"), ("z", "float64")])
            xr, yr = rng.randint(1, 500), rng.randint(1, 30)
            rows = [(rng.randrange(xr) if rng.random() > 0.1 else None,
                     f"w{rng.randrange(yr)}",
                     float(rng.randrange(20)) / 4 if rng.random() > 0.3 else None)
                    for _ in range(n)]
            db.insert_many(name, rows)
            if rng.random() < 0.5:
                db.create_index(IndexDef(f"{name}_ix", name, "nonclustered", ("x", "y")))
            for cols in (["x"], ["y"], ["z"], ["x", "y"], ["x", "y", "z"]):
                pos = [["x", "y", "z"].index(c) for c in cols]
                assert db.density(name, cols) == oracles.density(rows, pos)
            for _ in range(5):
                lo = rng.randrange(xr)
                hi = lo + rng.randrange(50)
                preds = [
                    (f"x BETWEEN {lo} AND {hi}", [(0, "BETWEEN", (lo, hi))]),
                    (f"x = {lo} AND y = 'w{lo % yr}'", [(0, "=", lo), (1, "=", f"w{lo % yr}")]),
                    ("z IS NULL", [(2, "IS NULL", None)]),
                    (f"z > {lo / 100!r}", [(2, ">", lo / 100)]),
                    (f"x < {hi} AND z IS NOT NULL", [(0, "<", hi), (2, "IS NOT NULL", None)]),
                ]
                for text, oracle_atoms in preds:
                    rep = db.selectivity(name, text)
                    matched = len(oracles.filter_rows(rows, oracle_atoms))
                    assert (rep.matched, rep.total) == (matched, n)
                    assert rep.fraction == Fraction(matched, n)


# 10 ----------------------------------------------------------------------

@pytest.fixture(scope="module")
def advisor_db(tmp_path_factory):
    path = str(tmp_path_factory.mktemp("adv") / "a.pdex")
    rng = random.Random(10)
    db = Database.create(path, trace=False)
    db.create_table("big", [("id", "int64"), ("a", "int64"), ("b", "int64"), ("c", "int64"),
                            ("doc", "blob"), ("v", "string")])
    db.insert_many("big", [(i, rng.randrange(20), rng.randrange(5000), rng.randrange(200),
                            bytes([i % 256]) * 16, f"val{i}") for i in range(20_000)])
    db.create_table("tiny", [("id", "int64"), ("a", "int64"), ("v", "string")])
    db.insert_many("tiny", [(i, i % 5, "t") for i in range(50)])
    db.create_table("kv", [("k", "int64"), ("v", "string"), ("pad", "string")])
    db.insert_many("kv", [(k, f"value-{k}", "z" * 40) for k in range(20_000)])
    db.create_index(IndexDef("kv_k", "kv", "nonclustered", ("k",)))
    yield db
    db.close()


@pytest.mark.criterion(10)
def test_advisor_equality_first_then_distinctness(advisor_db):
    d = {c: advisor_db.density("big", [c]) for c in "abc"}
    assert d["a"] > d["c"] > d["b"]  # a least distinct, b most distinct
    wl = parse_workload("weight:10 SELECT v FROM big WHERE a = 3 AND c > 20 AND b BETWEEN 100 AND 900\n")
    recs = [r for r in recommend(advisor_db, wl) if r.action == "create"]
    composite = [r for r in recs if r.index.kind.value == "nonclustered"]
    assert composite, recs
    top = composite[0]
    assert top.index.key_columns == ("a", "b", "c")
    assert "R1" in top.rules_fired


@pytest.mark.criterion(10)
def test_advisor_two_entry_r1_workload(advisor_db):
    wl = parse_workload("weight:10 SELECT v FROM big WHERE a = 3 AND b BETWEEN 10 AND 400\n")
    top = [r for r in recommend(advisor_db, wl) if r.action == "create"][0]
    assert top.index.key_columns[:2] == ("a", "b")


@pytest.mark.criterion(10)
def test_advisor_small_table_guard(advisor_db):
    assert advisor_db.table_info("tiny").data_pages <= 8
    wl = parse_workload("weight:100 SELECT v FROM tiny WHERE a = 1\nweight:50 SELECT id FROM tiny WHERE id = 4\n")
    recs = recommend(advisor_db, wl)
    assert not [r for r in recs if r.action == "create"]
    assert recs and all("R5" in r.rules_fired for r in recs)


@pytest.mark.criterion(10)
def test_advisor_never_keys_on_blobs(advisor_db):
    wl = parse_workload(
        "weight:5 SELECT id FROM big WHERE doc IS NOT NULL AND a = 2\n"
        "weight:5 SELECT doc FROM big WHERE doc IS NULL\n"
        "weight:5 SELECT v, doc FROM big WHERE b = 17\n")
    recs = recommend(advisor_db, wl)
    assert recs
    blob_cols = {"doc"}
    for r in recs:
        if r.index.kind.value != "columnstore":
            assert not blob_cols & set(r.index.key_columns), r.render()


@pytest.mark.criterion(10)
def test_advisor_covering_recommendation_reduces_reads(advisor_db):
    wl = parse_workload("weight:20 SELECT k, v FROM kv WHERE k BETWEEN 500 AND 1500\n")
    recs = recommend(advisor_db, wl)
    cover = [r for r in recs if r.action == "create" and "R2" in r.rules_fired]
    assert cover, [r.render() for r in recs]
    rec = cover[0]
    assert rec.index.key_columns[0] == "k" and "v" in rec.index.included_columns
    ev = evaluate(advisor_db, rec, wl)
    assert ev["reads_after"] < ev["reads_before"]


# 11 ----------------------------------------------------------------------

class _Model:
    """Plain-list model of one table plus its unique constraints."""

    def __init__(self, cols, uniques):
        self.cols = cols
        self.rows: list[tuple] = []
        self.uniques = uniques  # list of (positions, filter positions that must be non-null)

    def violates(self, rows) -> bool:
        for pos, guard in self.uniques:
            seen = set()
            for r in rows:
                if any(r[g] is None for g in guard):
                    continue
                key = tuple(r[p] for p in pos)
                if key in seen:
                    return True
                seen.add(key)
        return False


def _soak_row(rng, nid):
    return (nid, rng.randrange(30), rng.choice(["ant", "bee", "cat", "dog", None]),
            rng.randrange(1000) if rng.random() < 0.3 else None,
            bytes(rng.randrange(256) for _ in range(rng.randrange(0, 40))) if rng.random() < 0.5 else None,
            "p" * rng.randrange(0, 300))


@pytest.mark.criterion(11)
def test_randomized_dml_soak(dbpath):
    rng = random.Random(11)
    cols = [("id", "int64", False), ("g", "int64", False), ("s", "string"), ("n", "int64"),
            ("blob", "blob"), ("pad", "string")]
    names = [c[0] for c in cols]
    models = {}
    with Database.create(dbpath, trace=False, columnstore_threshold=64) as db:
        # heap with every secondary kind
        db.create_table("h", cols)
        db.create_index(IndexDef("h_id", "h", "nonclustered", ("id",), unique=True))
        db.create_index(IndexDef("h_gs", "h", "nonclustered", ("g", "s"), ("n",)))
        db.create_index(IndexDef("h_n", "h", "nonclustered", ("n",), filter=oracles_filter_not_null("n")))
        db.create_index(IndexDef("h_hash", "h", "hash", ("g",), bucket_count=16))
        db.create_index(IndexDef("h_cs", "h", "columnstore", ("id", "g", "n", "blob")))
        models["h"] = _Model(names, [([0], [])])
        # non-unique clustered table with secondaries
        db.create_table("c", cols)
        db.create_index(IndexDef("c_cx", "c", "clustered", ("g",), fill_factor=0.7))
        db.create_index(IndexDef("c_id", "c", "nonclustered", ("id",), unique=True))
        db.create_index(IndexDef("c_sn", "c", "nonclustered", ("s", "n"), ("pad",)))
        db.create_index(IndexDef("c_hash", "c", "hash", ("id", "s"), unique=True, bucket_count=8))
        db.create_index(IndexDef("c_cs", "c", "columnstore", ("g", "s")))
        models["c"] = _Model(names, [([0], []), ([0, 2], [])])
        # unique clustered on a string key
        db.create_table("u", cols, primary_key=["id"])
        db.create_index(IndexDef("u_s", "u", "nonclustered", ("s",), ("g",)))
        models["u"] = _Model(names, [([0], [])])

        nid = 0
        for step in range(10_000):
            tname = rng.choice("hcu")
            m = models[tname]
            r = rng.random()
            if r < 0.45 or len(m.rows) < 20:
                batch = []
                for _ in range(rng.choice([1, 1, 1, 3])):
                    nid += 1
                    batch.append(_soak_row(rng, nid if rng.random() > 0.05 else rng.randrange(1, nid + 1)))
                expect_fail = m.violates(m.rows + batch)
                try:
                    db.insert_many(tname, batch)
                    assert not expect_fail, (step, batch)
                    m.rows += batch
                except DuplicateKey:
                    assert expect_fail, (step, batch)
            elif r < 0.65:
                g = rng.randrange(30)
                text, atoms = (f"g = {g}", [(1, "=", g)]) if rng.random() < 0.5 else \
                    (f"id BETWEEN {g * 10} AND {g * 10 + 5}", [(0, "BETWEEN", (g * 10, g * 10 + 5))])
                gone = oracles.filter_rows(m.rows, atoms)
                assert db.delete(tname, text) == len(gone)
                keep = Counter(m.rows) - Counter(gone)
                m.rows = list(keep.elements())
            else:
                target = rng.choice(m.rows)
                assign_col = rng.choice(["g", "s", "n", "pad", "id", "blob"])
                value = _soak_row(rng, rng.randrange(1, nid + 10))[names.index(assign_col)]
                if assign_col == "g" and value is None:
                    value = 0
                text, atoms = f"id = {target[0]}", [(0, "=", target[0])]
                if rng.random() < 0.3:
                    text, atoms = f"g = {target[1]}", [(1, "=", target[1])]
                hit = oracles.filter_rows(m.rows, atoms)
                pos = names.index(assign_col)
                new = [tuple(value if i == pos else v for i, v in enumerate(row)) for row in hit]
                rest = list((Counter(m.rows) - Counter(hit)).elements())
                expect_fail = m.violates(rest + new)
                try:
                    n = db.update(tname, {assign_col: value}, text)
                    assert not expect_fail and n == len(hit), (step, text, assign_col)
                    m.rows = rest + new
                except DuplicateKey:
                    assert expect_fail, (step, text, assign_col, value)
            report = db.validate_indexes()
            assert report.ok, (step, report.problems)
        report = db.audit()
        assert report.ok, report.problems
        for tname, m in models.items():
            assert _multiset(db.rows(tname)) == _multiset(m.rows), tname
    with Database.open(dbpath, trace=False, columnstore_threshold=64) as db:
        assert db.audit().ok
        for tname, m in models.items():
            assert _multiset(db.rows(tname)) == _multiset(m.rows), tname
