"""The database: catalog, DDL, index-maintaining DML and query execution.

A ``Database`` owns one file. Tables are heaps until they get a clustered
index, whose leaves then hold the rows. Secondary indexes (nonclustered
B-trees, hash, columnstore) store a *locator* for each row: the 8-byte RID
on a heap, or the clustered key on a clustered table (the encoded key
columns, plus a 4-byte uniquifier when the clustered index is not unique).

Statements are atomic by pre-validation: every constraint a statement could
violate is checked before the first page is touched.
"""
from __future__ import annotations

import dataclasses
import json
import os
import struct
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Any, Iterable, Iterator, Mapping, Sequence

from .btree import MAX_ENTRY, BTree, Entry, leaf_record
from .catalog import (
    ColumnDef,
    IndexDef,
    IndexKind,
    TableSchema,
    normalize_filter,
    row_from,
    validate_index_def,
)
from .columnstore import DEFAULT_THRESHOLD, ColumnStore
from .encoding import ColumnType, RowCodec, coerce, decode_key, encode_key
from .errors import (
    BadMagic,
    DatabaseLocked,
    DuplicateKey,
    DuplicateName,
    EntryTooLarge,
    NullViolation,
    RecordTooLarge,
    SchemaMismatch,
    TypeMismatch,
    UnknownObject,
)
from .hash_index import HashIndex
from .heap import MAX_PAYLOAD, Heap
from .planner import AccessPlan, IndexInfo, PlanExplain, TableInfo, enumerate_plans
from .planner import explain as plan_explain
from .predicate import Atom, compile_predicate
from .executor import QueryResult, run_plan
from .query import Query, parse_conjunction, parse_query
from .stats import IndexStats, SelectivityReport, TableSnapshot, density
from .storage import HEADER_SIZE, MAGIC, NO_PAGE, PAGE_SIZE, USABLE, Page, PageKind, Pager, Rid, pid

CATALOG_VERSION = 1
DEFAULT_BUCKETS = 1024
_ROOT = struct.Struct("<8sIII")  # magic, version, catalog length, first overflow page
_UNIQ = struct.Struct(">I")

TRACE_KINDS = ("INSERT", "DELETE", "UPDATE_IN_PLACE", "INDEX_MAINTAIN", "TUPLE_MOVE", "PLAN_CHOSEN")


# trace events

@dataclass(frozen=True)
class TraceEvent:
    seq: int
    kind: str
    table: str
    detail: str

    def line(self) -> str:
        return f"{self.seq}\t{self.kind}\t{self.table}\t{self.detail}"

    @classmethod
    def parse(cls, line: str) -> "TraceEvent":
        seq, kind, table, detail = line.rstrip("\n").split("\t", 3)
        return cls(int(seq), kind, table, detail)

    @property
    def data(self) -> dict:
        return json.loads(self.detail)


def _json_value(v: Any) -> Any:
    return {"$blob": v.hex()} if isinstance(v, (bytes, bytearray)) else v


def _from_json_value(v: Any) -> Any:
    return bytes.fromhex(v["$blob"]) if isinstance(v, dict) else v


def row_to_json(row: Sequence[Any]) -> list:
    return [_json_value(v) for v in row]


def row_from_json(values: Sequence[Any]) -> tuple:
    return tuple(_from_json_value(v) for v in values)


# runtime structures

@dataclass
class IndexRuntime:
    definition: IndexDef
    schema: TableSchema
    tree: BTree | None = None
    hash: HashIndex | None = None
    cs: ColumnStore | None = None

    def __post_init__(self):
        d = self.definition
        pos = self.schema.positions()
        types = self.schema.types
        self.key_pos = [pos[c] for c in d.key_columns]
        self.key_types = [types[i] for i in self.key_pos]
        self.incl_pos = [pos[c] for c in d.included_columns]
        self.incl_codec = RowCodec([types[i] for i in self.incl_pos]) if self.incl_pos else None
        self.filter_test = compile_predicate(d.filter or (), pos)
        # columns whose change requires touching this index
        relevant = set(d.columns) | {a.column for a in (d.filter or ())}
        self.relevant_pos = sorted(pos[c] for c in relevant)

    @property
    def name(self) -> str:
        return self.definition.name

    @property
    def kind(self) -> IndexKind:
        return self.definition.kind

    def key_of(self, row: Sequence[Any]) -> bytes:
        return encode_key([row[i] for i in self.key_pos], self.key_types)

    def payload_of(self, row: Sequence[Any]) -> bytes:
        if self.incl_codec is None:
            return b""
        return self.incl_codec.encode([row[i] for i in self.incl_pos])

    def covers(self, row: Sequence[Any]) -> bool:
        return self.filter_test(row)

    def changed(self, old: Sequence[Any], new: Sequence[Any]) -> bool:
        return any(old[i] != new[i] or (old[i] is None) != (new[i] is None) for i in self.relevant_pos)


@dataclass
class TableRuntime:
    schema: TableSchema
    heap: Heap | None
    clustered: IndexRuntime | None = None
    secondary: list[IndexRuntime] = field(default_factory=list)
    uniquifier: int = 0
    row_count: int = 0
    version: int = 0

    def __post_init__(self):
        self.codec = RowCodec(self.schema.types)
        self.positions = self.schema.positions()
        self.leaf_cache: dict[int, tuple[int, list]] = {}
        self.decoded: dict[bytes, tuple] = {}
        self.snapshot: tuple[int, TableSnapshot] | None = None
        self.info: tuple[int, TableInfo] | None = None

    @property
    def name(self) -> str:
        return self.schema.name

    @property
    def organization(self) -> str:
        return "heap" if self.clustered is None else "clustered"

    def indexes(self) -> list[IndexRuntime]:
        return ([self.clustered] if self.clustered else []) + self.secondary


@dataclass
class AuditReport:
    problems: list[str]

    @property
    def ok(self) -> bool:
        return not self.problems

    def __bool__(self) -> bool:
        return self.ok


class _Lock:
    """Exclusive ``<db>.lock`` file holding the owner's pid."""

    def __init__(self, path: str):
        self.path = path + ".lock"
        self.held = False

    def acquire(self) -> None:
        for _ in range(2):
            try:
                fd = os.open(self.path, os.O_CREAT | os.O_EXCL | os.O_WRONLY, 0o644)
            except FileExistsError:
                if self._stale():
                    os.unlink(self.path)
                    continue
                raise DatabaseLocked(f"{self.path} exists: database in use")
            os.write(fd, str(os.getpid()).encode())
            os.close(fd)
            self.held = True
            return
        raise DatabaseLocked(f"cannot lock {self.path}")

    def _stale(self) -> bool:
        try:
            owner = int(open(self.path).read().strip() or "0")
        except (OSError, ValueError):
            return True
        if owner == os.getpid():
            return False
        try:
            os.kill(owner, 0)
        except ProcessLookupError:
            return True
        except PermissionError:
            return False
        return False

    def release(self) -> None:
        if self.held:
            try:
                os.unlink(self.path)
            except FileNotFoundError:
                pass
            self.held = False


class Database:
    """One open database file.

    ``trace`` enables the ``<db>.trace`` side file; by default it follows
    the ``PDEX_TRACE`` environment variable. Events are also kept in
    ``events`` for the lifetime of the instance.
    """

    def __init__(self, path: str | os.PathLike, *, create: bool = False, trace: bool | None = None,
                 columnstore_threshold: int = DEFAULT_THRESHOLD, lock: bool = True):
        self.path = os.fspath(path)
        self._lock = _Lock(self.path)
        if lock:
            self._lock.acquire()
        try:
            if not create and not os.path.exists(self.path):
                raise FileNotFoundError(self.path)
            self.pager = Pager(self.path, create=create)
            self.tables: dict[str, TableRuntime] = {}
            self.index_by_name: dict[str, IndexRuntime] = {}
            self.columnstore_threshold = columnstore_threshold
            self._overflow: list[int] = []
            self._dirty = False
            self.events: list[TraceEvent] = []
            if trace is None:
                trace = os.environ.get("PDEX_TRACE") == "1"
            self.trace_path = self.path + ".trace" if trace else None
            self._seq = 0
            if create:
                self.pager.allocate_page(PageKind.CATALOG)
                self._save_catalog()
                if self.trace_path and os.path.exists(self.trace_path):
                    os.unlink(self.trace_path)
            else:
                self._load_catalog()
                if self.trace_path and os.path.exists(self.trace_path):
                    with open(self.trace_path) as fh:
                        for line in fh:
                            if line.strip():
                                self._seq = TraceEvent.parse(line).seq
        except BaseException:
            self._lock.release()
            raise

    @classmethod
    def create(cls, path, **kw) -> "Database":
        return cls(path, create=True, **kw)

    @classmethod
    def open(cls, path, **kw) -> "Database":
        return cls(path, create=False, **kw)

    def close(self) -> None:
        if self.pager.fd is not None:
            self._finish()
            self.pager.close()
        self._lock.release()

    def __enter__(self) -> "Database":
        return self

    def __exit__(self, *exc) -> None:
        self.close()

    @property
    def counters(self):
        return self.pager.counters

    # catalog persistence

    def _catalog_json(self) -> dict:
        tables = []
        for t in self.tables.values():
            tables.append({"schema": t.schema.to_json(),
                           "heap_pages": t.heap.pages if t.heap is not None else None})
        indexes = []
        for t in self.tables.values():
            for ix in t.indexes():
                indexes.append({"def": ix.definition.to_json(),
                                "root": ix.tree.root if ix.tree is not None else None,
                                "columnstore": ix.cs.to_meta() if ix.cs is not None else None})
        return {"version": CATALOG_VERSION, "tables": tables, "indexes": indexes,
                "columnstore_threshold": self.columnstore_threshold}

    def _save_catalog(self) -> None:
        data = json.dumps(self._catalog_json(), separators=(",", ":"), sort_keys=True).encode()
        head = PAGE_SIZE - HEADER_SIZE
        rest = [data[i:i + USABLE] for i in range(head, len(data), USABLE)]
        while len(self._overflow) < len(rest):
            self._overflow.append(self.pager.allocate_page(PageKind.CATALOG).page_number)
        for i, chunk in enumerate(rest):
            page = Page.new(pid(self._overflow[i]), PageKind.CATALOG)
            page.buf[HEADER_SIZE:HEADER_SIZE + len(chunk)] = chunk
            struct.pack_into("<H", page.buf, 10, HEADER_SIZE + len(chunk))
            if i + 1 < len(rest):
                page.right_sibling = pid(self._overflow[i + 1])
            self.pager.write_page(page)
        buf = bytearray(PAGE_SIZE)
        _ROOT.pack_into(buf, 0, MAGIC, CATALOG_VERSION, len(data),
                        self._overflow[0] if rest else NO_PAGE)
        buf[HEADER_SIZE:HEADER_SIZE + min(len(data), head)] = data[:head]
        self.pager.write_raw(0, buf)
        self._dirty = False

    def _read_catalog(self) -> dict:
        if self.pager.page_count == 0:
            raise BadMagic(f"{self.path}: empty file")
        buf = self.pager.read_raw(pid(0))
        magic, version, length, overflow = _ROOT.unpack_from(buf, 0)
        if magic != MAGIC:
            raise BadMagic(f"{self.path}: not a pdex database")
        data = bytearray(buf[HEADER_SIZE:HEADER_SIZE + min(length, PAGE_SIZE - HEADER_SIZE)])
        nxt = overflow
        while len(data) < length and nxt != NO_PAGE:
            self._overflow.append(nxt)
            page = self.pager.read_page(pid(nxt))
            data += page.buf[HEADER_SIZE:page.free_space_offset]
            sib = page.right_sibling
            nxt = sib.page_number if sib is not None else NO_PAGE
        return json.loads(bytes(data[:length]))

    def _load_catalog(self) -> None:
        cat = self._read_catalog()
        self.columnstore_threshold = cat.get("columnstore_threshold", self.columnstore_threshold)
        for tj in cat["tables"]:
            schema = TableSchema.from_json(tj["schema"])
            heap = None
            if tj["heap_pages"] is not None:
                heap = Heap(self.pager, tj["heap_pages"], on_grow=self._mark_dirty)
                heap.load()
            self.tables[schema.name] = TableRuntime(schema, heap)
        deferred_hash = []
        for ij in cat["indexes"]:
            d = IndexDef.from_json(ij["def"])
            t = self.tables[d.table]
            ix = IndexRuntime(d, t.schema)
            if d.is_btree:
                ix.tree = BTree(self.pager, ij["root"], unique=d.unique or d.kind is IndexKind.CLUSTERED)
            elif d.kind is IndexKind.COLUMNSTORE:
                ix.cs = ColumnStore(self.pager, self._cs_columns(t, d), meta=ij["columnstore"])
            else:
                deferred_hash.append((t, ix))
            if d.kind is IndexKind.CLUSTERED:
                t.clustered = ix
            else:
                t.secondary.append(ix)
            self.index_by_name[d.name] = ix
        for t in self.tables.values():
            if t.clustered is not None:
                uniq = -1
                n = 0
                for e in t.clustered.tree.entries():
                    n += 1
                    if not t.clustered.definition.unique:
                        uniq = max(uniq, _UNIQ.unpack(e.key[-4:])[0])
                t.uniquifier = uniq + 1
                t.row_count = n
            else:
                t.row_count = t.heap.live
        for t, ix in deferred_hash:
            ix.hash = self._build_hash(t, ix.definition)

    def _mark_dirty(self) -> None:
        self._dirty = True

    def _finish(self) -> None:
        """End of statement: persist the catalog if its content changed."""
        if self._dirty:
            self._save_catalog()

    # tracing

    def _emit(self, kind: str, table: str, detail: dict) -> None:
        self._seq += 1
        ev = TraceEvent(self._seq, kind, table, json.dumps(detail, separators=(",", ":")))
        self.events.append(ev)
        if self.trace_path:
            with open(self.trace_path, "a") as fh:
                fh.write(ev.line() + "\n")

    def read_trace(self) -> list[TraceEvent]:
        if not self.trace_path or not os.path.exists(self.trace_path):
            return []
        with open(self.trace_path) as fh:
            return [TraceEvent.parse(line) for line in fh if line.strip()]

    # lookup helpers

    def table(self, name: str) -> TableRuntime:
        try:
            return self.tables[name]
        except KeyError:
            raise UnknownObject(f"no table {name}") from None

    def index(self, name: str) -> IndexRuntime:
        try:
            return self.index_by_name[name]
        except KeyError:
            raise UnknownObject(f"no index {name}") from None

    def index_defs(self, table: str | None = None) -> list[IndexDef]:
        return [ix.definition for t in self.tables.values() for ix in t.indexes()
                if table is None or t.name == table]

    # DDL

    def create_table(self, name: str, columns: Sequence[Any], primary_key: Sequence[str] = ()) -> TableSchema:
        """Create a heap table; a primary key adds a unique clustered index."""
        if name in self.tables:
            raise DuplicateName(f"table {name} already exists")
        cols = []
        for c in columns:
            if isinstance(c, ColumnDef):
                cols.append(c)
            else:
                cols.append(ColumnDef(*c))
        pk = tuple(primary_key)
        # primary key columns are implicitly NOT NULL
        cols = [dataclasses.replace(c, nullable=False) if c.name in pk else c for c in cols]
        schema = TableSchema(name, tuple(cols), pk)
        for c in schema.columns:
            if c.name.startswith("__"):
                raise SchemaMismatch(f"column names starting with __ are reserved: {c.name}")
        t = TableRuntime(schema, Heap(self.pager, on_grow=self._mark_dirty))
        self.tables[name] = t
        self._dirty = True
        if pk:
            try:
                self._add_primary_key(t, pk)
            except BaseException:
                del self.tables[name]
                raise
        self._finish()
        return schema

    def add_primary_key(self, table: str, columns: Sequence[str]) -> IndexDef:
        """Declare a primary key on an existing table."""
        t = self.table(table)
        idx = self._add_primary_key(t, tuple(columns))
        self._finish()
        return idx

    def _add_primary_key(self, t: TableRuntime, columns: tuple[str, ...]) -> IndexDef:
        kind = IndexKind.CLUSTERED if t.clustered is None else IndexKind.NONCLUSTERED
        name = f"pk_{t.name}"
        for c in columns:
            col = t.schema.column(c)
            if col.nullable and t.row_count:
                if any(row[t.positions[c]] is None for _, row in self._base_rows(t)):
                    raise NullViolation(f"primary key column {c} contains NULL")
        idx = IndexDef(name, t.name, kind, columns, unique=True)
        self._create_index(idx)
        if t.schema.primary_key != columns:
            cols = tuple(dataclasses.replace(c, nullable=False) if c.name in columns else c
                         for c in t.schema.columns)
            self._set_schema(t, TableSchema(t.name, cols, columns))
        return idx

    def _set_schema(self, t: TableRuntime, schema: TableSchema) -> None:
        t.schema = schema
        for ix in t.indexes():
            ix.schema = schema
        self._dirty = True

    def create_index(self, idx: IndexDef) -> IndexDef:
        """Validate and bulk-build an index from the table's current rows."""
        idx = self._create_index(idx)
        self._finish()
        return idx

    def _create_index(self, idx: IndexDef) -> IndexDef:
        t = self.table(idx.table)
        validate_index_def(idx, t.schema, self.index_defs())
        if idx.filter:
            idx = dataclasses.replace(idx, filter=normalize_filter(idx.filter, t.schema))
        if idx.kind is IndexKind.HASH and idx.bucket_count is None:
            idx = dataclasses.replace(idx, bucket_count=DEFAULT_BUCKETS)
        if idx.kind is IndexKind.CLUSTERED:
            self._cluster(t, idx)
        else:
            ix = self._build_secondary(t, idx, list(self._base_rows(t)))
            t.secondary.append(ix)
            self.index_by_name[idx.name] = ix
        self._touch(t)
        self._dirty = True
        return idx

    def _build_secondary(self, t: TableRuntime, idx: IndexDef,
                         rows: list[tuple[bytes, tuple]]) -> IndexRuntime:
        ix = IndexRuntime(idx, t.schema)
        if idx.kind is IndexKind.NONCLUSTERED:
            entries = []
            for loc, row in rows:
                if ix.covers(row):
                    entries.append(Entry(ix.key_of(row), loc, ix.payload_of(row)))
            entries.sort(key=(lambda e: e.key) if idx.unique else (lambda e: (e.key, e.locator)))
            _check_entries(entries, idx.unique)
            ix.tree = BTree.bulk_build(self.pager, entries, idx.unique, idx.fill_factor)
        elif idx.kind is IndexKind.HASH:
            ix.hash = self._build_hash(t, idx, rows)
        else:
            ix.cs = ColumnStore(self.pager, self._cs_columns(t, idx), self.columnstore_threshold)
            kept = [(loc, row) for loc, row in rows if ix.covers(row)]
            for loc, row in kept:
                self._check_cs_row(ix, row, loc)
            ix.cs.cs_append([_project(row, ix.key_pos) for _, row in kept], [loc for loc, _ in kept])
        return ix

    def _cs_columns(self, t: TableRuntime, idx: IndexDef) -> list[tuple[str, ColumnType]]:
        return [(c, t.schema.column(c).type) for c in idx.key_columns]

    def _build_hash(self, t: TableRuntime, idx: IndexDef, rows=None) -> HashIndex:
        ix = IndexRuntime(idx, t.schema)
        h = HashIndex(idx.bucket_count or DEFAULT_BUCKETS, idx.unique)
        for loc, row in (rows if rows is not None else self._base_rows(t)):
            h.insert(ix.key_of(row), loc)
        return h

    def _cluster(self, t: TableRuntime, idx: IndexDef) -> None:
        """Turn a heap into a clustered table and rebuild its secondary indexes."""
        ix = IndexRuntime(idx, t.schema)
        rows = [row for _, row in self._base_rows(t)]
        uniq = 0
        entries = []
        for row in rows:
            key = ix.key_of(row)
            if not idx.unique:
                key += _UNIQ.pack(uniq)
                uniq += 1
            entries.append(Entry(key, b"", t.codec.encode(row)))
        entries.sort(key=lambda e: e.key)
        _check_entries(entries, True)
        rebuilt = []
        new_rows = [(e.key, t.codec.decode(e.payload)) for e in entries]
        tree = BTree.bulk_build(self.pager, entries, True, idx.fill_factor)
        for old in t.secondary:
            rebuilt.append(self._build_secondary(t, old.definition, new_rows))
        ix.tree = tree
        t.clustered = ix
        t.heap = None
        t.uniquifier = uniq
        t.secondary = rebuilt
        self.index_by_name[idx.name] = ix
        for r in rebuilt:
            self.index_by_name[r.name] = r
        t.leaf_cache.clear()

    def drop_index(self, name: str) -> None:
        ix = self.index(name)
        t = self.table(ix.definition.table)
        if ix is t.clustered:
            rows = [row for _, row in self._base_rows(t)]
            heap = Heap(self.pager, on_grow=self._mark_dirty)
            rids = heap.insert_many([t.codec.encode(r) for r in rows])
            new_rows = [(rid.to_bytes(), r) for rid, r in zip(rids, rows)]
            rebuilt = [self._build_secondary(t, s.definition, new_rows) for s in t.secondary]
            t.clustered = None
            t.heap = heap
            t.secondary = rebuilt
            for r in rebuilt:
                self.index_by_name[r.name] = r
            t.leaf_cache.clear()
        else:
            t.secondary.remove(ix)
        del self.index_by_name[name]
        self._touch(t)
        self._dirty = True
        self._finish()

    # base storage

    def _base_rows(self, t: TableRuntime) -> Iterator[tuple[bytes, tuple]]:
        """(locator, row) for every row of the table."""
        if t.heap is not None:
            for rid, row in t.heap.scan_decoded(t.codec.decode):
                yield rid.to_bytes(), row
        else:
            yield from self._clustered_rows(t)

    def _clustered_rows(self, t: TableRuntime) -> Iterator[tuple[bytes, tuple]]:
        cache = t.leaf_cache
        decode = t.codec.decode
        for leaf in t.clustered.tree.leaves():
            n = leaf.id.page_number
            ver = self.pager.version(n)
            hit = cache.get(n)
            if hit is None or hit[0] != ver:
                rows = []
                for rec in leaf.records():
                    e = _parse_clustered(rec)
                    rows.append((e[0], decode(e[1])))
                hit = cache[n] = (ver, rows)
            yield from hit[1]

    def _fetch(self, t: TableRuntime, loc: bytes) -> tuple:
        if t.heap is not None:
            payload = t.heap.fetch(Rid.from_bytes(loc))
        else:
            payload = t.clustered.tree.get(loc).payload
        # decoding is a pure function of the bytes, so memoize it
        row = t.decoded.get(payload)
        if row is None:
            if len(t.decoded) >= _DECODE_MEMO:
                t.decoded.clear()
            row = t.decoded[payload] = t.codec.decode(payload)
        return row

    def _clustered_key(self, t: TableRuntime, row: Sequence[Any], uniq: int | None = None) -> bytes:
        key = t.clustered.key_of(row)
        if not t.clustered.definition.unique:
            key += _UNIQ.pack(t.uniquifier if uniq is None else uniq)
        return key

    # validation

    def _check_row(self, t: TableRuntime, values: Any) -> tuple:
        row = row_from(values, t.schema)
        out = []
        for v, c in zip(row, t.schema.columns):
            v = coerce(v, c.type, c.name)
            if v is None and not c.nullable:
                raise NullViolation(f"{t.name}.{c.name} is NOT NULL")
            out.append(v)
        row = tuple(out)
        size = len(t.codec.encode(row))
        if t.clustered is None:
            if size > MAX_PAYLOAD:
                raise RecordTooLarge(f"row of {size} bytes exceeds the heap limit {MAX_PAYLOAD}")
        else:
            rec = len(leaf_record(self._clustered_key(t, row), b"", b"")) + size
            if rec > MAX_ENTRY:
                raise EntryTooLarge(f"row of {size} bytes does not fit a clustered leaf entry")
        for ix in t.secondary:
            if ix.kind is IndexKind.NONCLUSTERED and ix.covers(row):
                n = len(leaf_record(ix.key_of(row), _LOC_BOUND, ix.payload_of(row)))
                if n > MAX_ENTRY:
                    raise EntryTooLarge(f"entry of {n} bytes too large for index {ix.name}")
            elif ix.kind is IndexKind.COLUMNSTORE and ix.covers(row):
                self._check_cs_row(ix, row, _LOC_BOUND)
        return row

    def _check_cs_row(self, ix: IndexRuntime, row: Sequence[Any], loc: bytes) -> None:
        n = len(ix.cs.codec.encode(_project(row, ix.key_pos))) + len(loc) + 10
        if n > MAX_PAYLOAD:
            raise RecordTooLarge(f"row too large for the deltastore of {ix.name}")

    def _unique_indexes(self, t: TableRuntime) -> list[IndexRuntime]:
        out = []
        if t.clustered is not None and t.clustered.definition.unique:
            out.append(t.clustered)
        out += [ix for ix in t.secondary if ix.definition.unique]
        return out

    def _holders(self, t: TableRuntime, ix: IndexRuntime, key: bytes) -> list[bytes]:
        """Locators currently stored under ``key`` in a unique index."""
        if ix is t.clustered:
            return [e.key for e in ix.tree.seek(key)]
        if ix.tree is not None:
            return [e.locator for e in ix.tree.seek(key)]
        # constraint checks are not query work; keep the probe counters clean
        probes, hops = ix.hash.bucket_probes, ix.hash.chain_hops
        holders = ix.hash.lookup_equal(key)
        ix.hash.bucket_probes, ix.hash.chain_hops = probes, hops
        return holders

    def _check_unique(self, t: TableRuntime, ix: IndexRuntime, new_rows: Sequence[tuple],
                      leaving: set[bytes] = frozenset()) -> None:
        """Raise DuplicateKey if ``new_rows`` collide in ``ix`` with each other
        or with a stored entry whose row is not in ``leaving``."""
        seen: set[bytes] = set()
        for row in new_rows:
            if not ix.covers(row):
                continue
            key = ix.key_of(row)
            if key in seen:
                raise DuplicateKey(f"duplicate key in statement for unique index {ix.name}")
            seen.add(key)
            if any(h not in leaving for h in self._holders(t, ix, key)):
                raise DuplicateKey(f"duplicate key for unique index {ix.name}: {_render_key(row, ix)}")

    # index maintenance

    def _index_add(self, ix: IndexRuntime, row: tuple, loc: bytes) -> None:
        if not ix.covers(row):
            return
        if ix.tree is not None:
            ix.tree.insert(ix.key_of(row), loc, ix.payload_of(row))
        elif ix.hash is not None:
            ix.hash.insert(ix.key_of(row), loc)
        else:
            before = len(ix.cs.rowgroups)
            ix.cs.cs_append([_project(row, ix.key_pos)], [loc])
            self._dirty = True
            if len(ix.cs.rowgroups) > before:
                self._emit("TUPLE_MOVE", ix.definition.table,
                           {"index": ix.name, "rowgroups": len(ix.cs.rowgroups) - before})

    def _index_remove(self, ix: IndexRuntime, row: tuple, loc: bytes) -> None:
        if not ix.covers(row):
            return
        if ix.tree is not None:
            ix.tree.delete(ix.key_of(row), loc)
        elif ix.hash is not None:
            ix.hash.delete(ix.key_of(row), loc)
        else:
            ix.cs.delete_locator(loc)
            self._dirty = True

    def _touch(self, t: TableRuntime) -> None:
        t.version += 1

    # row-level mutations (no validation)

    def _insert_row(self, t: TableRuntime, row: tuple) -> bytes:
        if t.heap is not None:
            loc = t.heap.insert(t.codec.encode(row)).to_bytes()
        else:
            loc = self._clustered_key(t, row)
            if not t.clustered.definition.unique:
                t.uniquifier += 1
            t.clustered.tree.insert(loc, b"", t.codec.encode(row))
        for ix in t.secondary:
            self._index_add(ix, row, loc)
        t.row_count += 1
        self._emit("INSERT", t.name, {"row": row_to_json(row)})
        return loc

    def _delete_row(self, t: TableRuntime, loc: bytes, row: tuple) -> None:
        for ix in t.secondary:
            self._index_remove(ix, row, loc)
        if t.heap is not None:
            t.heap.delete(Rid.from_bytes(loc))
        else:
            t.clustered.tree.delete(loc, b"")
        t.row_count -= 1
        self._emit("DELETE", t.name, {"row": row_to_json(row)})

    def _update_rows(self, t: TableRuntime, changes: list[tuple[bytes, tuple, tuple]]) -> None:
        """Apply validated updates.

        A row whose clustered key changes moves: DELETE then INSERT, row by
        row. Assignments are constants, so two moving rows can never trade
        keys and the pairwise order cannot collide. Rows updated in place
        drop their stale secondary entries before any base row is rewritten,
        so secondary keys can move between those rows.
        """
        moving = []
        in_place = []
        for loc, old, new in changes:
            if t.clustered is not None and t.clustered.changed(old, new) \
                    and t.clustered.key_of(old) != t.clustered.key_of(new):
                moving.append((loc, old, new))
                continue
            touched = [ix for ix in t.secondary if ix.changed(old, new)]
            for ix in touched:
                self._index_remove(ix, old, loc)
            in_place.append((loc, old, new, touched))
        for loc, old, new in moving:
            self._delete_row(t, loc, old)
            self._insert_row(t, new)
        for loc, old, new, touched in in_place:
            if t.heap is not None:
                t.heap.update(Rid.from_bytes(loc), t.codec.encode(new))
            else:
                t.clustered.tree.replace_payload(loc, b"", t.codec.encode(new))
            self._emit("UPDATE_IN_PLACE", t.name, {"old": row_to_json(old), "new": row_to_json(new)})
            for ix in touched:
                self._index_add(ix, new, loc)
                self._emit("INDEX_MAINTAIN", t.name, {"index": ix.name})

    # DML

    def insert(self, table: str, row: Any) -> int:
        return self.insert_many(table, [row])

    def insert_many(self, table: str, rows: Iterable[Any]) -> int:
        """Insert rows as one statement: all or none."""
        t = self.table(table)
        checked = [self._check_row(t, r) for r in rows]
        for ix in self._unique_indexes(t):
            self._check_unique(t, ix, checked)
        if not checked:
            return 0
        if t.heap is not None and len(checked) > 1:
            rids = t.heap.insert_many([t.codec.encode(r) for r in checked])
            for rid, row in zip(rids, checked):
                loc = rid.to_bytes()
                for ix in t.secondary:
                    self._index_add(ix, row, loc)
                t.row_count += 1
                self._emit("INSERT", t.name, {"row": row_to_json(row)})
        else:
            for row in checked:
                self._insert_row(t, row)
        self._touch(t)
        self._finish()
        return len(checked)

    def _targets(self, t: TableRuntime, predicate: Sequence[Atom]) -> list[tuple[bytes, tuple]]:
        pred = self._bind_predicate(t, predicate)
        test = compile_predicate(pred, t.positions)
        return [(loc, row) for loc, row in self._base_rows(t) if test(row)]

    def delete(self, table: str, predicate: Sequence[Atom] | str = ()) -> int:
        t = self.table(table)
        targets = self._targets(t, predicate)
        for loc, row in targets:
            self._delete_row(t, loc, row)
        if targets:
            self._touch(t)
        self._finish()
        return len(targets)

    def update(self, table: str, assignments: Mapping[str, Any],
               predicate: Sequence[Atom] | str = ()) -> int:
        t = self.table(table)
        unknown = set(assignments) - set(t.positions)
        if unknown:
            raise UnknownObject(f"table {table} has no column(s) {sorted(unknown)}")
        targets = self._targets(t, predicate)
        changes = []
        for loc, old in targets:
            new = list(old)
            for c, v in assignments.items():
                new[t.positions[c]] = v
            changes.append((loc, old, self._check_row(t, new)))
        self._validate_update(t, changes)
        self._update_rows(t, changes)
        if changes:
            self._touch(t)
        self._finish()
        return len(changes)

    def _validate_update(self, t: TableRuntime, changes: list[tuple[bytes, tuple, tuple]]) -> None:
        relocated = t.clustered is not None and any(t.clustered.changed(o, n) for _, o, n in changes)
        for ix in self._unique_indexes(t):
            # rows whose entry in ix is rewritten vacate their old key first
            moving = [(loc, new) for loc, old, new in changes
                      if ix.changed(old, new) or (relocated and t.clustered.changed(old, new))]
            if moving:
                self._check_unique(t, ix, [new for _, new in moving], {loc for loc, _ in moving})

    # queries

    def _bind_predicate(self, t: TableRuntime, predicate: Sequence[Atom] | str) -> tuple[Atom, ...]:
        if isinstance(predicate, str):
            predicate = parse_conjunction(predicate) if predicate.strip() else ()
        out = []
        for a in predicate:
            if a.column not in t.positions:
                raise UnknownObject(f"table {t.name} has no column {a.column}")
            out.append(a.coerced(t.schema.column(a.column).type))
        return tuple(out)

    def bind(self, query: Query | str) -> Query:
        """Parse if needed and check the query against the catalog."""
        if isinstance(query, str):
            query = parse_query(query)
        t = self.table(query.table)
        for c in query.projected:
            if c not in t.positions:
                raise UnknownObject(f"table {t.name} has no column {c}")
        if not query.projected and query.aggregate is None:
            raise SchemaMismatch("query selects nothing")
        agg = query.aggregate
        if agg is not None and agg.column is not None:
            if agg.column not in t.positions:
                raise UnknownObject(f"table {t.name} has no column {agg.column}")
            if agg.fn == "sum" and not t.schema.column(agg.column).type.is_numeric:
                raise TypeMismatch(f"SUM needs a numeric column, {agg.column} is "
                                   f"{t.schema.column(agg.column).type.value}")
        return dataclasses.replace(query, predicate=self._bind_predicate(t, query.predicate))

    def snapshot(self, table: str) -> TableSnapshot:
        t = self.table(table)
        if t.snapshot is None or t.snapshot[0] != t.version:
            rows = [row for _, row in self._base_rows(t)]
            t.snapshot = (t.version, TableSnapshot(rows, t.positions))
        return t.snapshot[1]

    def table_info(self, table: str) -> TableInfo:
        t = self.table(table)
        if t.info is not None and t.info[0] == t.version:
            return t.info[1]
        snap = self.snapshot(table)
        clustered = None
        if t.clustered is not None:
            clustered = self._index_info(t, t.clustered, snap)
            data_pages = clustered.leaf_pages
        else:
            data_pages = len(t.heap.pages)
        info = TableInfo(t.schema, data_pages, clustered,
                         [self._index_info(t, ix, snap) for ix in t.secondary],
                         t.heap.stubs if t.heap is not None else 0,
                         t.heap.live if t.heap is not None else t.row_count, snap)
        t.info = (t.version, info)
        return info

    def _index_info(self, t: TableRuntime, ix: IndexRuntime, snap: TableSnapshot) -> IndexInfo:
        d = ix.definition
        if ix.tree is not None:
            return IndexInfo(d, ix.tree.depth(), ix.tree.leaf_page_count(), snap.count(d.filter or ()))
        if ix.hash is not None:
            return IndexInfo(d, 1, 0, ix.hash.size, ix.hash.size, ix.hash.bucket_count)
        return IndexInfo(d, 1, sum(s.page_count for rg in ix.cs.rowgroups for s in rg.segments.values()),
                         ix.cs.row_count, columnstore_reads=ix.cs.estimate_reads)

    def plans(self, query: Query | str) -> list[AccessPlan]:
        q = self.bind(query)
        return enumerate_plans(q, self.table_info(q.table))

    def explain(self, query: Query | str, analyze: bool = False) -> PlanExplain:
        q = self.bind(query)
        exp = plan_explain(q, self.table_info(q.table))
        if analyze:
            exp.actual_reads = run_plan(self, q, exp.chosen).actual_reads
        return exp

    def execute(self, query: Query | str) -> QueryResult:
        """Choose the cheapest plan, run it and return a ``QueryResult``."""
        q = self.bind(query)
        exp = plan_explain(q, self.table_info(q.table))
        self._emit("PLAN_CHOSEN", q.table, {"plan": exp.chosen.kind.value,
                                            "index": exp.chosen.index_name,
                                            "est_reads": exp.chosen.estimated_reads})
        result = run_plan(self, q, exp.chosen)
        exp.actual_reads = result.actual_reads
        result.explain = exp
        return result

    def execute_plan(self, query: Query | str, plan: AccessPlan) -> QueryResult:
        """Run ``query`` through a specific (e.g. non-chosen) plan."""
        return run_plan(self, self.bind(query), plan)

    # statistics

    def density(self, table: str, columns: Sequence[str]) -> Fraction:
        t = self.table(table)
        for c in columns:
            t.schema.column(c)
        return self.snapshot(table).density(columns)

    def selectivity(self, table: str, predicate: Sequence[Atom] | str) -> SelectivityReport:
        t = self.table(table)
        return self.snapshot(table).selectivity(self._bind_predicate(t, predicate))

    def index_stats(self, name: str) -> IndexStats:
        ix = self.index(name)
        t = self.table(ix.definition.table)
        snap = self.snapshot(t.name)
        info = self._index_info(t, ix, snap)
        pos = [t.positions[c] for c in ix.definition.key_columns]
        covered = [r for r in snap.rows if ix.covers(r)]
        d = density(covered, pos) if covered else Fraction(1)
        return IndexStats(info.depth, info.leaf_pages, d, len(covered))

    # consistency checks

    def validate_indexes(self) -> AuditReport:
        problems = []
        for t in self.tables.values():
            for ix in t.indexes():
                if ix.tree is not None:
                    rep = ix.tree.validate()
                    if not rep.ok:
                        problems.append(f"{ix.name}: {rep.violation}: {rep.detail}")
        return AuditReport(problems)

    def audit(self) -> AuditReport:
        """Compare every index's content with what the base rows imply."""
        problems = list(self.validate_indexes().problems)
        for t in self.tables.values():
            base = list(self._base_rows(t))
            if len(base) != t.row_count:
                problems.append(f"{t.name}: row_count {t.row_count} but {len(base)} rows stored")
            for ix in t.secondary:
                expected = sorted(self._expected_entries(ix, base))
                actual = sorted(self._actual_entries(ix))
                if expected != actual:
                    problems.append(f"{ix.name}: {len(actual)} entries, expected {len(expected)}"
                                    if len(expected) != len(actual) else f"{ix.name}: entries differ")
        return AuditReport(problems)

    def _expected_entries(self, ix: IndexRuntime, base) -> list[tuple]:
        out = []
        for loc, row in base:
            if not ix.covers(row):
                continue
            if ix.kind is IndexKind.NONCLUSTERED:
                out.append((ix.key_of(row), loc, ix.payload_of(row)))
            elif ix.kind is IndexKind.HASH:
                out.append((ix.key_of(row), loc))
            else:
                out.append((loc, _sortable(_project(row, ix.key_pos))))
        return out

    def _actual_entries(self, ix: IndexRuntime) -> list[tuple]:
        if ix.tree is not None:
            return [tuple(e) for e in ix.tree.entries()]
        if ix.hash is not None:
            return list(ix.hash.items())
        return [(loc, _sortable(row)) for loc, row in ix.cs.rows()]

    def rows(self, table: str) -> list[tuple]:
        """Every row of ``table`` (unordered for heaps, key order when clustered)."""
        return [row for _, row in self._base_rows(self.table(table))]


# module helpers

_DECODE_MEMO = 200_000
_LOC_BOUND = bytes(8)  # locator length used for size checks on heaps


def _parse_clustered(rec: bytes) -> tuple[bytes, bytes]:
    kl = int.from_bytes(rec[0:2], "little")
    # clustered leaves store an empty locator
    return rec[2:2 + kl], rec[2 + kl + 2:]


def _project(row: Sequence[Any], positions: Sequence[int]) -> tuple:
    return tuple(row[i] for i in positions)


def _sortable(row: Sequence[Any]) -> tuple:
    return tuple((v is not None, v) if v is not None else (False, 0) for v in row)


def _check_entries(entries: list[Entry], unique: bool) -> None:
    for a, b in zip(entries, entries[1:]):
        if unique and a.key == b.key:
            raise DuplicateKey(f"duplicate key {a.key.hex()} while building a unique index")
    for e in entries:
        n = len(leaf_record(*e))
        if n > MAX_ENTRY:
            raise EntryTooLarge(f"entry of {n} bytes exceeds {MAX_ENTRY}")


def _render_key(row: Sequence[Any], ix: IndexRuntime) -> str:
    return ", ".join(f"{c}={row[i]!r}" for c, i in zip(ix.definition.key_columns, ix.key_pos))


def replay_trace(db: Database, events: Iterable[TraceEvent]) -> None:
    """Apply the row events of a trace (INSERT, DELETE, UPDATE_IN_PLACE) to ``db``."""
    for ev in events:
        if ev.kind not in ("INSERT", "DELETE", "UPDATE_IN_PLACE"):
            continue
        t = db.table(ev.table)
        data = ev.data
        if ev.kind == "INSERT":
            db.insert(ev.table, row_from_json(data["row"]))
            continue
        old = row_from_json(data["row"] if ev.kind == "DELETE" else data["old"])
        loc = next((l for l, r in db._base_rows(t) if r == old), None)
        if loc is None:
            raise SchemaMismatch(f"trace event {ev.seq}: row {old!r} not found")
        if ev.kind == "DELETE":
            db._delete_row(t, loc, old)
        else:
            new = db._check_row(t, row_from_json(data["new"]))
            db._validate_update(t, [(loc, old, new)])
            db._update_rows(t, [(loc, old, new)])
        db._touch(t)
        db._finish()
