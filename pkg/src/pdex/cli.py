"""``pdex`` command-line front end.

Every verb is a thin adapter over :class:`pdex.engine.Database`. Exit codes:
0 on success, 1 on user error (bad arguments, any ``PdexError``), 2 on an
internal error.
"""
from __future__ import annotations

import argparse
import csv
import os
import struct
import sys
from typing import Any, Sequence, TextIO

from .advisor import Advisor, evaluate, parse_workload
from .btree import parse_internal, parse_leaf
from .catalog import ColumnDef, IndexDef, IndexKind
from .encoding import ColumnType
from .engine import Database
from .errors import PdexError, SchemaMismatch, TypeMismatch
from .heap import MOVED, ROW, SHORT, STUB
from .query import parse_conjunction
from .storage import MAGIC, NO_PAGE, Page, PageKind, Rid, pid

EXIT_OK = 0
EXIT_USER = 1
EXIT_INTERNAL = 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse exits with status 2 on bad usage; we want 1
    def error(self, message: str):
        raise UsageError(f"{self.prog}: {message}\n{self.format_usage()}")


def _csv_list(text: str) -> tuple[str, ...]:
    return tuple(p.strip() for p in text.split(",") if p.strip())


def _fill_factor(text: str) -> float:
    v = float(text)
    if not 0.5 <= v <= 1.0:
        raise argparse.ArgumentTypeError("fill factor must be within 0.5..1.0")
    return v


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="pdex", description="Page-based storage engine with index advisor.")
    sub = p.add_subparsers(dest="verb", metavar="verb", parser_class=_Parser)
    sub.required = True

    s = sub.add_parser("create-db", help="create an empty database file")
    s.add_argument("db")

    s = sub.add_parser("create-table", help="create a table from name:type column specs")
    s.add_argument("db")
    s.add_argument("table")
    s.add_argument("columns", nargs="+", metavar="name:type",
                   help="types: int64, float64, string, blob")
    s.add_argument("--not-null", type=_csv_list, default=(), metavar="c1,c2")
    s.add_argument("--primary-key", type=_csv_list, default=(), metavar="c1,c2")

    s = sub.add_parser("create-index", help="create an index")
    s.add_argument("db")
    s.add_argument("name")
    s.add_argument("table")
    s.add_argument("--key", type=_csv_list, required=True, metavar="c1,c2",
                   help="key columns (stored columns for --columnstore)")
    kind = s.add_mutually_exclusive_group()
    for k in IndexKind:
        kind.add_argument(f"--{k.value}", dest="kind", action="store_const", const=k)
    s.add_argument("--unique", action="store_true")
    s.add_argument("--include", type=_csv_list, default=(), metavar="c1,c2")
    s.add_argument("--filter", metavar="PREDICATE")
    s.add_argument("--fill-factor", type=_fill_factor, default=1.0)
    s.add_argument("--buckets", type=int)

    s = sub.add_parser("drop-index", help="drop an index")
    s.add_argument("db")
    s.add_argument("name")

    s = sub.add_parser("import", help="load rows from a CSV file with a header row")
    s.add_argument("db")
    s.add_argument("table")
    s.add_argument("csv")

    s = sub.add_parser("query", help="run a SELECT")
    s.add_argument("db")
    s.add_argument("sql")

    s = sub.add_parser("explain", help="show candidate plans with estimated reads")
    s.add_argument("db")
    s.add_argument("sql")
    s.add_argument("--analyze", action="store_true", help="also execute and report actual reads")

    s = sub.add_parser("stats", help="print name=value statistics")
    s.add_argument("db")
    s.add_argument("--table", help="restrict to one table")
    s.add_argument("--density", metavar="table:c1,c2", action="append", default=[])
    s.add_argument("--selectivity", nargs=2, metavar=("table", "predicate"), action="append",
                   default=[])

    s = sub.add_parser("page-dump", help="print one page's header and slots")
    s.add_argument("db")
    s.add_argument("page", type=int)

    s = sub.add_parser("advise", help="recommend indexes for a workload file")
    s.add_argument("db")
    s.add_argument("workload")
    s.add_argument("--evaluate", action="store_true",
                   help="replay the workload before/after each create recommendation")
    s.add_argument("--small-table-pages", type=int, default=8)
    s.add_argument("--max-creates", type=int, default=3)

    s = sub.add_parser("trace", help="print the trace log")
    s.add_argument("db")
    return p


# rendering

def render_value(v: Any) -> str:
    if v is None:
        return "NULL"
    if isinstance(v, bytes):
        return "0x" + v.hex()
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _write_table(out: TextIO, header: Sequence[str], rows) -> None:
    out.write("\t".join(header) + "\n")
    for r in rows:
        out.write("\t".join(render_value(v) for v in r) + "\n")


def _frac(f) -> str:
    return f"{f.numerator}/{f.denominator}" if f.denominator != 1 else str(f.numerator)


# verbs

def _open(path: str) -> Database:
    return Database.open(path)


def cmd_create_db(a, out) -> None:
    if os.path.exists(a.db):
        raise UsageError(f"{a.db} already exists")
    Database.create(a.db).close()
    out.write(f"created {a.db}\n")


def cmd_create_table(a, out) -> None:
    cols = []
    for spec in a.columns:
        name, sep, type_name = spec.partition(":")
        if not sep or not name:
            raise UsageError(f"column spec {spec!r} is not name:type")
        try:
            ctype = ColumnType(type_name)
        except ValueError:
            raise UsageError(f"unknown column type {type_name!r} in {spec!r}") from None
        cols.append(ColumnDef(name, ctype, name not in a.not_null))
    names = {c.name for c in cols}
    for c in a.not_null:
        if c not in names:
            raise SchemaMismatch(f"--not-null column {c} not in table {a.table}")
    with _open(a.db) as db:
        db.create_table(a.table, cols, primary_key=a.primary_key)
    out.write(f"created table {a.table}\n")


def cmd_create_index(a, out) -> None:
    kind = a.kind or IndexKind.NONCLUSTERED
    if a.buckets is not None and kind is not IndexKind.HASH:
        raise UsageError("--buckets applies to --hash indexes only")
    filt = parse_conjunction(a.filter) if a.filter else None
    idx = IndexDef(a.name, a.table, kind, a.key, a.include, a.unique, filt, a.fill_factor, a.buckets)
    with _open(a.db) as db:
        made = db.create_index(idx)
    out.write(f"created {made.name}: {made.describe()}\n")


def cmd_drop_index(a, out) -> None:
    with _open(a.db) as db:
        db.drop_index(a.name)
    out.write(f"dropped {a.name}\n")


def _parse_field(text: str, ctype: ColumnType) -> Any:
    if text == "":
        return None
    if ctype is ColumnType.INT64:
        return int(text)
    if ctype is ColumnType.FLOAT64:
        return float(text)
    if ctype is ColumnType.BLOB:
        return bytes.fromhex(text[2:] if text.startswith("0x") else text)
    return text


def import_csv(db: Database, table: str, path: str) -> int:
    """Insert every CSV row into ``table`` as one statement; empty fields are NULL."""
    schema = db.table(table).schema
    rows = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise SchemaMismatch(f"{path}: missing header row")
        if header != schema.names:
            raise SchemaMismatch(f"{path}: header {header} does not match columns {schema.names}")
        for rec in reader:
            line = reader.line_num
            if not rec:
                continue
            if len(rec) != len(schema.columns):
                raise SchemaMismatch(f"{path}: line {line}: expected {len(schema.columns)} fields, "
                                     f"got {len(rec)}")
            try:
                rows.append(tuple(_parse_field(v, c.type) for v, c in zip(rec, schema.columns)))
            except ValueError as exc:
                raise TypeMismatch(f"{path}: line {line}: {exc}") from None
    return db.insert_many(table, rows)


def cmd_import(a, out) -> None:
    with _open(a.db) as db:
        n = import_csv(db, a.table, a.csv)
    out.write(f"imported {n} rows into {a.table}\n")


def cmd_query(a, out) -> None:
    with _open(a.db) as db:
        res = db.execute(a.sql)
    _write_table(out, res.columns, res.rows)


def cmd_explain(a, out) -> None:
    with _open(a.db) as db:
        ex = db.explain(a.sql, analyze=a.analyze)
    out.write(ex.rendered + "\n")


def stats_lines(db: Database, table: str | None = None) -> list[str]:
    names = [table] if table else sorted(db.tables)
    if table:
        db.table(table)
    lines = [f"tables={len(db.tables)}"]
    for name in names:
        t = db.table(name)
        info = db.table_info(name)
        lines += [f"table.{name}.rows={t.row_count}",
                  f"table.{name}.organization={t.organization}",
                  f"table.{name}.data_pages={info.data_pages}"]
        for d in sorted(db.index_defs(name), key=lambda d: d.name):
            p = f"index.{d.name}"
            lines += [f"{p}.table={name}", f"{p}.kind={d.kind.value}",
                      f"{p}.unique={'y' if d.unique else 'n'}"]
            if d.kind is IndexKind.COLUMNSTORE:
                cs = db.index(d.name).cs
                lines += [f"{p}.rowgroups={len(cs.rowgroups)}", f"{p}.delta_rows={cs.delta_rows}",
                          f"{p}.segments={cs.segment_count()}"]
                continue
            st = db.index_stats(d.name)
            if d.is_btree:
                lines += [f"{p}.depth={st.depth}", f"{p}.leaf_pages={st.leaf_pages}"]
            else:
                lines.append(f"{p}.buckets={db.index(d.name).hash.bucket_count}")
            lines += [f"{p}.entries={st.row_count}", f"{p}.density={_frac(st.density)}"]
    return lines


def cmd_stats(a, out) -> None:
    with _open(a.db) as db:
        lines = stats_lines(db, a.table)
        for spec in a.density:
            tname, sep, cols = spec.partition(":")
            if not sep:
                raise UsageError(f"--density expects table:c1,c2, got {spec!r}")
            d = db.density(tname, _csv_list(cols))
            lines.append(f"density.{tname}.{','.join(_csv_list(cols))}={_frac(d)}")
        for tname, pred in a.selectivity:
            r = db.selectivity(tname, pred)
            lines += [f"selectivity.{tname}.matched={r.matched}",
                      f"selectivity.{tname}.total={r.total}",
                      f"selectivity.{tname}.fraction={_frac(r.fraction)}",
                      f"selectivity.{tname}.highly_selective={'y' if r.highly_selective else 'n'}"]
    out.write("\n".join(lines) + "\n")


def _hexcut(b: bytes, limit: int = 24) -> str:
    h = b[:limit].hex()
    return h + ("..." if len(b) > limit else "")


def _slot_summary(kind: PageKind, rec: bytes) -> str:
    if kind is PageKind.BTREE_LEAF:
        e = parse_leaf(rec)
        return f"key={_hexcut(e.key)} locator={_hexcut(e.locator)} payload_bytes={len(e.payload)}"
    if kind is PageKind.BTREE_INTERNAL:
        key, child = parse_internal(rec)
        return f"key={_hexcut(key)} child={child}"
    if kind is PageKind.HEAP:
        tag = rec[0]
        if tag == STUB:
            return f"tag=stub forward={Rid.from_bytes(rec[1:1 + Rid.SIZE])}"
        if tag == MOVED:
            return f"tag=moved home={Rid.from_bytes(rec[1:1 + Rid.SIZE])} bytes={len(rec) - 1 - Rid.SIZE}"
        if tag == SHORT:
            return f"tag=short bytes={rec[1]}"
        if tag == ROW:
            return f"tag=row bytes={len(rec) - 1}"
        return f"tag={tag} bytes={len(rec)}"
    return f"bytes={len(rec)}"


def page_dump(db: Database, page_number: int) -> str:
    buf = db.pager.read_raw(pid(page_number))
    if page_number == 0:
        magic, version, length, overflow = struct.unpack_from("<8sIII", buf, 0)
        ok = magic == MAGIC
        return "\n".join([
            "page=0 kind=catalog level=0",
            f"magic={magic.rstrip(bytes(1)).decode('ascii', 'replace')}" + ("" if ok else " (bad)"),
            f"format_version={version}",
            f"catalog_bytes={length}",
            f"overflow_page={'-' if overflow == NO_PAGE else overflow}",
            f"tables={len(db.tables)}",
            f"indexes={len(db.index_by_name)}",
        ]) + "\n"
    page = Page(buf)
    sib = page.right_sibling
    lines = [f"page={page_number} kind={page.kind.label} level={page.level}",
             f"slot_count={page.slot_count}",
             f"free_space={page.free_space}",
             f"right_sibling={sib.page_number if sib is not None else '-'}"]
    if page.kind in (PageKind.CATALOG, PageKind.COLUMNSTORE_META):
        lines.append(f"payload_bytes={page.free_space_offset - 32}")
        return "\n".join(lines) + "\n"
    lines.append("slot\toffset\tlength\tsummary")
    for i in range(page.slot_count):
        off, length = page.slot_entry(i)
        rec = page.record(i)
        summary = "deleted" if rec is None else _slot_summary(page.kind, rec)
        lines.append(f"{i}\t{off}\t{length}\t{summary}")
    return "\n".join(lines) + "\n"


def cmd_page_dump(a, out) -> None:
    with _open(a.db) as db:
        out.write(page_dump(db, a.page))


def cmd_advise(a, out) -> None:
    with open(a.workload) as fh:
        wl = parse_workload(fh.read())
    with _open(a.db) as db:
        recs = Advisor(db, small_table_pages=a.small_table_pages,
                       max_creates=a.max_creates).recommend(wl)
        for r in recs:
            line = r.render()
            if a.evaluate and r.action == "create":
                ev = evaluate(db, r, wl)
                line += f" reads_before={ev['reads_before']:g} reads_after={ev['reads_after']:g}"
            out.write(line + "\n")
        if not recs:
            out.write("no recommendations\n")


def cmd_trace(a, out) -> None:
    if not os.path.exists(a.db):
        raise FileNotFoundError(a.db)
    out.write("seq\tkind\ttable\tdetail\n")
    path = a.db + ".trace"
    if os.path.exists(path):
        with open(path) as fh:
            for line in fh:
                if line.strip():
                    out.write(line if line.endswith("\n") else line + "\n")


COMMANDS = {
    "create-db": cmd_create_db,
    "create-table": cmd_create_table,
    "create-index": cmd_create_index,
    "drop-index": cmd_drop_index,
    "import": cmd_import,
    "query": cmd_query,
    "explain": cmd_explain,
    "stats": cmd_stats,
    "page-dump": cmd_page_dump,
    "advise": cmd_advise,
    "trace": cmd_trace,
}


def run(argv: Sequence[str], out: TextIO | None = None, err: TextIO | None = None) -> int:
    out = out if out is not None else sys.stdout
    err = err if err is not None else sys.stderr
    try:
        args = build_parser().parse_args(list(argv))
        COMMANDS[args.verb](args, out)
        return EXIT_OK
    except UsageError as exc:
        err.write(f"{exc}\n")
        return EXIT_USER
    except (PdexError, FileNotFoundError, IsADirectoryError, UnicodeDecodeError) as exc:
        err.write(f"error: {type(exc).__name__}: {exc}\n")
        return EXIT_USER
    except SystemExit as exc:  # --help
        return EXIT_OK if not exc.code else EXIT_USER
    except Exception as exc:
        err.write(f"internal error: {type(exc).__name__}: {exc}\n")
        return EXIT_INTERNAL


def main() -> None:
    sys.exit(run(sys.argv[1:]))


if __name__ == "__main__":
    main()
