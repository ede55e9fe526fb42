import csv
import io
import os
import random
import subprocess
import sys

import pytest

from pdex import Database
from pdex.cli import run


def cli(*argv):
    out, err = io.StringIO(), io.StringIO()
    code = run([str(a) for a in argv], out, err)
    return code, out.getvalue(), err.getvalue()


def ok(*argv):
    code, out, err = cli(*argv)
    assert code == 0, err
    return out


@pytest.fixture
def db(tmp_path):
    path = tmp_path / "test.pdex"
    ok("create-db", path)
    return path


def _write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)
    return path


def test_fresh_db_has_no_tables(db):
    assert ok("stats", db).splitlines() == ["tables=0"]


def test_create_db_refuses_existing_file(db):
    code, _, err = cli("create-db", db)
    assert code == 1 and "exists" in err


def test_import_then_count(db, tmp_path):
    ok("create-table", db, "t", "id:int64", "name:string", "score:float64")
    src = _write_csv(tmp_path / "t.csv", ["id", "name", "score"], [(1, "a", 1.5), (2, "b", ""), (3, "c", -2)])
    assert ok("import", db, "t", src) == "imported 3 rows into t\n"
    assert ok("query", db, "SELECT COUNT(*) FROM t") == "COUNT(*)\n3\n"
    assert ok("query", db, "SELECT id, score FROM t WHERE score IS NULL") == "id\tscore\n2\tNULL\n"


def test_header_only_csv_imports_nothing(db, tmp_path):
    ok("create-table", db, "t", "id:int64")
    src = _write_csv(tmp_path / "h.csv", ["id"], [])
    assert ok("import", db, "t", src) == "imported 0 rows into t\n"


def test_quoted_comma_is_one_field(db, tmp_path):
    ok("create-table", db, "t", "id:int64", "name:string")
    src = tmp_path / "q.csv"
    src.write_text('id,name\n1,"Smith, Jane"\n')
    ok("import", db, "t", src)
    assert ok("query", db, "SELECT name FROM t WHERE id = 1") == "name\nSmith, Jane\n"


def test_import_errors(db, tmp_path):
    ok("create-table", db, "t", "id:int64", "name:string")
    bad_header = _write_csv(tmp_path / "b.csv", ["id", "nom"], [(1, "x")])
    code, _, err = cli("import", db, "t", bad_header)
    assert code == 1 and "header" in err
    bad_value = tmp_path / "v.csv"
    bad_value.write_text("id,name\n1,x\n2,y\nthree,z\n")
    code, _, err = cli("import", db, "t", bad_value)
    assert code == 1 and "line 4" in err
    assert ok("query", db, "SELECT COUNT(*) FROM t") == "COUNT(*)\n0\n"


def test_ten_thousand_row_import_passes_audit(db, tmp_path):
    ok("create-table", db, "t", "id:int64", "g:int64", "tag:string", "--primary-key", "id")
    ok("create-index", db, "ix_g", "t", "--key", "g", "--include", "tag")
    ok("create-index", db, "h_tag", "t", "--key", "tag", "--hash", "--buckets", "1024")
    rng = random.Random(5)
    src = _write_csv(tmp_path / "big.csv", ["id", "g", "tag"],
                     [(i, rng.randrange(100), f"t{rng.randrange(500)}") for i in range(10_000)])
    ok("import", db, "t", src)
    with Database.open(db) as d:
        assert d.audit()
        assert len(d.rows("t")) == 10_000
    stats = dict(line.split("=", 1) for line in ok("stats", db).splitlines())
    assert stats["table.t.rows"] == "10000" and stats["index.ix_g.entries"] == "10000"
    assert stats["index.h_tag.buckets"] == "1024"


def _loaded(db, n=3000):
    ok("create-table", db, "t", "id:int64", "v:string", "--primary-key", "id")
    with Database.open(db) as d:
        d.insert_many("t", [(i, "x" * 60) for i in range(n)])


def test_explain_is_byte_identical(db):
    _loaded(db)
    ok("create-index", db, "ix_v", "t", "--key", "v")
    first = ok("explain", db, "SELECT v FROM t WHERE id BETWEEN 5 AND 90", "--analyze")
    assert first == ok("explain", db, "SELECT v FROM t WHERE id BETWEEN 5 AND 90", "--analyze")
    assert first.splitlines()[-1].startswith("actual_reads=")


def test_page_dump_catalog_page(db):
    text = ok("page-dump", db, 0)
    assert text.splitlines()[:2] == ["page=0 kind=catalog level=0", "magic=PDEXv1"]


def test_page_dump_btree_root(db):
    _loaded(db, n=20_000)
    with Database.open(db) as d:
        ix = d.table("t").clustered
        root, depth = ix.tree.root, ix.tree.depth()
    assert depth >= 2
    head = ok("page-dump", db, root).splitlines()[0]
    assert head == f"page={root} kind=btree-internal level={depth - 1}"


def test_page_dump_out_of_range(db):
    code, _, err = cli("page-dump", db, 999)
    assert code == 1 and "PageOutOfRange" in err


@pytest.mark.parametrize("argv", [
    ["frobnicate"],
    [],
    ["create-index", "x.pdex", "i", "t"],
    ["create-index", "x.pdex", "i", "t", "--key", "a", "--fill-factor", "0.3"],
])
def test_usage_errors_exit_1(argv):
    code, _, err = cli(*argv)
    assert code == 1 and "usage" in err


def test_user_errors_exit_1(db):
    ok("create-table", db, "t", "id:int64", "b:blob")
    for argv in (["query", db, "SELECT nope FROM t"],
                 ["create-index", db, "ix_b", "t", "--key", "b"],
                 ["create-table", db, "u", "id:int65"],
                 ["create-index", db, "i", "t", "--key", "id", "--buckets", "8"],
                 ["query", str(db) + ".missing", "SELECT id FROM t"]):
        code, _, err = cli(*argv)
        assert code == 1, argv
        assert err


def test_internal_error_exits_2(db, monkeypatch):
    import pdex.cli as mod

    def boom(*_):
        raise RuntimeError("unexpected")

    monkeypatch.setitem(mod.COMMANDS, "stats", boom)
    code, _, err = cli("stats", db)
    assert code == 2 and "internal error" in err


def test_advise_and_trace(db, tmp_path, monkeypatch):
    monkeypatch.setenv("PDEX_TRACE", "1")
    ok("create-table", db, "t", "id:int64", "v:int64")
    src = _write_csv(tmp_path / "t.csv", ["id", "v"], [(i, i % 7) for i in range(5)])
    ok("import", db, "t", src)
    wl = tmp_path / "wl.txt"
    wl.write_text("weight:5 SELECT v FROM t WHERE id = 3\n")
    out = ok("advise", db, wl)
    assert out.startswith("avoid ") and "rules=[R5]" in out
    lines = ok("trace", db).splitlines()
    assert lines[0] == "seq\tkind\ttable\tdetail"
    assert [l.split("\t")[1] for l in lines[1:]] == ["INSERT"] * 5


def test_console_script_entry_point(db):
    proc = subprocess.run([sys.executable, "-m", "pdex.cli", "stats", str(db)],
                          capture_output=True, text=True, env={**os.environ, "PDEX_TRACE": "0"})
    assert proc.returncode == 0 and proc.stdout == "tables=0\n"
