"""Column-wise storage: immutable rowgroups plus a rowstore deltastore.

Rows land in the deltastore (a heap of complete rows). When it reaches
``threshold`` rows the tuple mover compresses full batches into rowgroups,
one segment per column. Every segment records its value bounds so scans can
skip it without decoding when a predicate cannot match.

Segment payloads are written to chains of ``columnstore-meta`` pages; the
rowgroup directory (extents, bounds, encodings, delete bitmaps) is returned
by ``to_meta`` for the owner to persist.
"""
from __future__ import annotations

import enum
import math
import struct
from dataclasses import dataclass, field
from typing import Any, Iterator, Sequence

from .encoding import ColumnType, RowCodec, coerce
from .errors import AggregateOverflow, SchemaMismatch, TypeMismatch
from .heap import Heap
from .predicate import BETWEEN, EQ, GT, IS_NULL, LT, NOT_NULL, Atom, compile_predicate
from .storage import HEADER_SIZE, USABLE, Page, PageKind, Pager, Rid, pid

DEFAULT_THRESHOLD = 4096
ORDINAL = "__ord"
LOCATOR = "__loc"

_U32 = struct.Struct("<I")


class Encoding(str, enum.Enum):
    RAW = "raw"
    RLE = "rle"
    DICTIONARY = "dictionary"


# value serialization shared by the encodings

def _put(value: Any, ctype: ColumnType, out: list[bytes]) -> None:
    if value is None:
        out.append(b"\x00")
    elif ctype is ColumnType.INT64:
        out.append(b"\x01" + struct.pack("<q", value))
    elif ctype is ColumnType.FLOAT64:
        out.append(b"\x01" + struct.pack("<d", value))
    else:
        raw = value.encode("utf-8") if ctype is ColumnType.STRING else bytes(value)
        out.append(b"\x01" + _U32.pack(len(raw)) + raw)


def _get(buf: bytes, pos: int, ctype: ColumnType) -> tuple[Any, int]:
    if buf[pos] == 0:
        return None, pos + 1
    pos += 1
    if ctype is ColumnType.INT64:
        return struct.unpack_from("<q", buf, pos)[0], pos + 8
    if ctype is ColumnType.FLOAT64:
        return struct.unpack_from("<d", buf, pos)[0], pos + 8
    (n,) = _U32.unpack_from(buf, pos)
    raw = buf[pos + 4:pos + 4 + n]
    return (raw.decode("utf-8") if ctype is ColumnType.STRING else bytes(raw)), pos + 4 + n


def _runs(values: Sequence[Any]) -> list[tuple[Any, int]]:
    runs: list[tuple[Any, int]] = []
    for v in values:
        if runs and runs[-1][0] == v and (v is None) == (runs[-1][0] is None):
            runs[-1] = (v, runs[-1][1] + 1)
        else:
            runs.append((v, 1))
    return runs


def choose_encoding(values: Sequence[Any], ctype: ColumnType) -> Encoding:
    """rle when runs average >= 4, dictionary for low-cardinality strings, else raw."""
    n = len(values)
    if n and n / len(_runs(values)) >= 4:
        return Encoding.RLE
    if ctype in (ColumnType.STRING, ColumnType.BLOB) and n and len(set(values)) / n <= 0.5:
        return Encoding.DICTIONARY
    return Encoding.RAW


def encode_segment(values: Sequence[Any], ctype: ColumnType, encoding: Encoding | None = None) -> tuple[Encoding, bytes]:
    encoding = choose_encoding(values, ctype) if encoding is None else Encoding(encoding)
    out: list[bytes] = []
    n = len(values)
    if encoding is Encoding.RLE:
        runs = _runs(values)
        out.append(_U32.pack(len(runs)))
        for v, length in runs:
            out.append(_U32.pack(length))
            _put(v, ctype, out)
    elif encoding is Encoding.DICTIONARY:
        dictionary = sorted({v for v in values if v is not None})
        codes = {v: i + 1 for i, v in enumerate(dictionary)}  # 0 = NULL
        out.append(_U32.pack(len(dictionary)))
        for v in dictionary:
            _put(v, ctype, out)
        width = 1 if len(dictionary) < 0xFF else 2 if len(dictionary) < 0xFFFF else 4
        code = {1: "B", 2: "H", 4: "I"}[width]
        out.append(_U32.pack(n) + bytes([width]))
        out.append(struct.pack(f"<{n}{code}", *(0 if v is None else codes[v] for v in values)))
    else:
        out.append(_U32.pack(n))
        bits = 0
        for i, v in enumerate(values):
            if v is None:
                bits |= 1 << i
        out.append(bits.to_bytes((n + 7) // 8, "little"))
        if ctype is ColumnType.INT64:
            out.append(struct.pack(f"<{n}q", *(0 if v is None else v for v in values)))
        elif ctype is ColumnType.FLOAT64:
            out.append(struct.pack(f"<{n}d", *(0.0 if v is None else v for v in values)))
        else:
            for v in values:
                raw = b"" if v is None else (v.encode("utf-8") if ctype is ColumnType.STRING else bytes(v))
                out.append(_U32.pack(len(raw)) + raw)
    return encoding, b"".join(out)


def decode_segment(payload: bytes, ctype: ColumnType, encoding: Encoding) -> list[Any]:
    encoding = Encoding(encoding)
    if encoding is Encoding.RLE:
        (nruns,) = _U32.unpack_from(payload, 0)
        pos = 4
        values: list[Any] = []
        for _ in range(nruns):
            (length,) = _U32.unpack_from(payload, pos)
            v, pos = _get(payload, pos + 4, ctype)
            values.extend([v] * length)
        return values
    if encoding is Encoding.DICTIONARY:
        (size,) = _U32.unpack_from(payload, 0)
        pos = 4
        dictionary: list[Any] = [None]
        for _ in range(size):
            v, pos = _get(payload, pos, ctype)
            dictionary.append(v)
        (n,) = _U32.unpack_from(payload, pos)
        width = payload[pos + 4]
        code = {1: "B", 2: "H", 4: "I"}[width]
        codes = struct.unpack_from(f"<{n}{code}", payload, pos + 5)
        return [dictionary[c] for c in codes]
    (n,) = _U32.unpack_from(payload, 0)
    nb = (n + 7) // 8
    bits = int.from_bytes(payload[4:4 + nb], "little")
    pos = 4 + nb
    if ctype in (ColumnType.INT64, ColumnType.FLOAT64):
        values = list(struct.unpack_from(f"<{n}{'q' if ctype is ColumnType.INT64 else 'd'}", payload, pos))
    else:
        values = []
        for _ in range(n):
            (ln,) = _U32.unpack_from(payload, pos)
            raw = payload[pos + 4:pos + 4 + ln]
            values.append(raw.decode("utf-8") if ctype is ColumnType.STRING else bytes(raw))
            pos += 4 + ln
    if bits:
        for i in range(n):
            if bits >> i & 1:
                values[i] = None
    return values


# page extents

def write_extent(pager: Pager, payload: bytes) -> tuple[int, int]:
    """Store ``payload`` across fresh chained pages; returns (first page, page count)."""
    chunks = [payload[i:i + USABLE] for i in range(0, len(payload), USABLE)] or [b""]
    ids = [pager.allocate_page(PageKind.COLUMNSTORE_META) for _ in chunks]
    for i, (page_id, chunk) in enumerate(zip(ids, chunks)):
        page = Page.new(page_id, PageKind.COLUMNSTORE_META)
        page.buf[HEADER_SIZE:HEADER_SIZE + len(chunk)] = chunk
        struct.pack_into("<H", page.buf, 10, HEADER_SIZE + len(chunk))
        if i + 1 < len(ids):
            page.right_sibling = ids[i + 1]
        pager.write_page(page)
    return ids[0].page_number, len(ids)


def read_extent(pager: Pager, first: int, page_count: int, length: int) -> bytes:
    out = bytearray()
    page_id = pid(first)
    for _ in range(page_count):
        page = pager.read_page(page_id)
        used = page.free_space_offset - HEADER_SIZE
        out += page.buf[HEADER_SIZE:HEADER_SIZE + used]
        page_id = page.right_sibling
    return bytes(out[:length])


# rowgroups

@dataclass
class ColumnSegment:
    """Directory entry for one column of one rowgroup.

    ``bounded`` is False for blob columns, whose bounds are not tracked; an
    all-NULL segment is bounded with ``min_value is None``.
    """

    column: str
    encoding: Encoding
    min_value: Any
    max_value: Any
    has_nulls: bool
    bounded: bool
    first_page: int
    page_count: int
    length: int

    def to_json(self) -> list:
        return [self.column, self.encoding.value, self.min_value, self.max_value,
                self.has_nulls, self.bounded, self.first_page, self.page_count, self.length]

    @classmethod
    def from_json(cls, d: list) -> "ColumnSegment":
        c, e, lo, hi, nulls, bounded, first, count, length = d
        return cls(c, Encoding(e), lo, hi, nulls, bounded, first, count, length)

    def may_match(self, atom: Atom) -> bool:
        """False only when no value in the segment can satisfy ``atom``."""
        op = atom.op
        if op == IS_NULL:
            return self.has_nulls
        if not self.bounded:
            return True
        lo, hi = self.min_value, self.max_value
        if lo is None:
            return False  # only NULLs
        if op == NOT_NULL:
            return True
        if op == EQ:
            return lo <= atom.value <= hi
        if op == LT:
            return lo < atom.value
        if op == GT:
            return hi > atom.value
        return not (atom.value2 < lo or atom.value > hi)


@dataclass
class RowGroup:
    id: int
    row_count: int
    segments: dict[str, ColumnSegment]
    deleted: set[int] = field(default_factory=set)

    @property
    def live_rows(self) -> int:
        return self.row_count - len(self.deleted)

    def to_json(self) -> dict:
        return {"id": self.id, "row_count": self.row_count,
                "segments": [s.to_json() for s in self.segments.values()],
                "deleted": sorted(self.deleted)}

    @classmethod
    def from_json(cls, d: dict) -> "RowGroup":
        segs = [ColumnSegment.from_json(s) for s in d["segments"]]
        return cls(d["id"], d["row_count"], {s.column: s for s in segs}, set(d["deleted"]))


_DELTA_HEAD = struct.Struct("<QH")


class ColumnStore:
    """Rowgroups plus deltastore over a fixed list of ``(name, type)`` columns.

    Each appended row gets an ordinal and may carry a locator (the base
    table row it mirrors). Both are kept as hidden columns so the in-memory
    lookup maps can be rebuilt by ``load``.
    """

    def __init__(self, pager: Pager, columns: Sequence[tuple[str, ColumnType]],
                 threshold: int = DEFAULT_THRESHOLD, meta: dict | None = None):
        if threshold < 1:
            raise ValueError("threshold must be >= 1")
        self.pager = pager
        self.names = [c for c, _ in columns]
        self.types = [ColumnType(t) for _, t in columns]
        self._type_of = dict(zip(self.names, self.types))
        self._type_of[ORDINAL] = ColumnType.INT64
        self._type_of[LOCATOR] = ColumnType.BLOB
        self.codec = RowCodec(self.types)
        self.threshold = threshold
        self.rowgroups: list[RowGroup] = []
        self.next_ordinal = 0
        self.delta = Heap(pager)
        self.segments_skipped = 0
        self._delta_rid: dict[int, Rid] = {}
        self._by_locator: dict[bytes, int] = {}
        self._in_group: dict[int, tuple[int, int]] = {}
        self._decoded: dict[int, list] = {}
        if meta is not None:
            self.threshold = meta["threshold"]
            self.next_ordinal = meta["next_ordinal"]
            self.delta.pages = list(meta["delta_pages"])
            self.rowgroups = [RowGroup.from_json(r) for r in meta["rowgroups"]]
            self.load()

    # persistence

    def to_meta(self) -> dict:
        return {"threshold": self.threshold, "next_ordinal": self.next_ordinal,
                "delta_pages": list(self.delta.pages),
                "rowgroups": [r.to_json() for r in self.rowgroups]}

    def load(self) -> None:
        """Rebuild the deltastore free map and the ordinal/locator maps."""
        self.delta.load()
        self._delta_rid.clear()
        self._by_locator.clear()
        self._in_group.clear()
        for rid, payload in self.delta.scan():
            ordinal, loc, _ = self._parse_delta(payload)
            self._delta_rid[ordinal] = rid
            if loc:
                self._by_locator[loc] = ordinal
        for gi, rg in enumerate(self.rowgroups):
            ords = self._segment_values(rg.segments[ORDINAL])
            locs = self._segment_values(rg.segments[LOCATOR])
            for pos, (o, loc) in enumerate(zip(ords, locs)):
                if pos in rg.deleted:
                    continue
                self._in_group[o] = (gi, pos)
                if loc:
                    self._by_locator[loc] = o

    # sizes

    @property
    def delta_rows(self) -> int:
        return len(self._delta_rid)

    @property
    def rowgroup_rows(self) -> int:
        return sum(rg.live_rows for rg in self.rowgroups)

    @property
    def row_count(self) -> int:
        return self.delta_rows + self.rowgroup_rows

    def segment_count(self) -> int:
        return len(self.rowgroups) * len(self.names)

    # ingestion

    def _check_row(self, row: Sequence[Any]) -> tuple:
        if len(row) != len(self.names):
            raise SchemaMismatch(f"columnstore expects {len(self.names)} values, got {len(row)}")
        return tuple(coerce(v, t, c) for v, t, c in zip(row, self.types, self.names))

    def _delta_record(self, ordinal: int, loc: bytes, row: Sequence[Any]) -> bytes:
        return _DELTA_HEAD.pack(ordinal, len(loc)) + loc + self.codec.encode(row)

    def _parse_delta(self, payload: bytes) -> tuple[int, bytes, bytes]:
        ordinal, ll = _DELTA_HEAD.unpack_from(payload, 0)
        start = _DELTA_HEAD.size
        return ordinal, payload[start:start + ll], payload[start + ll:]

    def cs_append(self, rows: Sequence[Sequence[Any]], locators: Sequence[bytes] | None = None) -> list[int]:
        """Append rows to the deltastore, running the tuple mover at the threshold."""
        checked = [self._check_row(r) for r in rows]
        if locators is None:
            locators = [b""] * len(checked)
        elif len(locators) != len(checked):
            raise ValueError("one locator per row")
        ordinals: list[int] = []
        i = 0
        while i < len(checked):
            room = max(1, self.threshold - self.delta_rows)
            batch = range(i, min(len(checked), i + room))
            records = []
            for j in batch:
                o = self.next_ordinal
                self.next_ordinal += 1
                ordinals.append(o)
                records.append(self._delta_record(o, locators[j], checked[j]))
            rids = self.delta.insert_many(records)
            for j, rid in zip(batch, rids):
                o = ordinals[j]
                self._delta_rid[o] = rid
                if locators[j]:
                    self._by_locator[locators[j]] = o
            i = batch.stop
            if self.delta_rows >= self.threshold:
                self.tuple_move()
        return ordinals

    def _delta_entries(self) -> list[tuple[int, bytes, tuple]]:
        out = []
        for _, payload in self.delta.scan():
            ordinal, loc, row = self._parse_delta(payload)
            out.append((ordinal, loc, self.codec.decode(row)))
        return out

    def tuple_move(self) -> int:
        """Compress full batches of ``threshold`` delta rows into rowgroups."""
        groups = self.delta_rows // self.threshold
        if groups == 0:
            return 0
        rows = sorted(self._delta_entries())
        moved, rest = rows[:groups * self.threshold], rows[groups * self.threshold:]
        for g in range(groups):
            self._build_rowgroup(moved[g * self.threshold:(g + 1) * self.threshold])
        self.delta.reset()
        self._delta_rid.clear()
        rids = self.delta.insert_many([self._delta_record(o, loc, row) for o, loc, row in rest])
        for (o, _, _), rid in zip(rest, rids):
            self._delta_rid[o] = rid
        return groups

    def _build_rowgroup(self, batch: list[tuple[int, bytes, tuple]]) -> None:
        gi = len(self.rowgroups)
        columns = {ORDINAL: [o for o, _, _ in batch], LOCATOR: [loc for _, loc, _ in batch]}
        for k, name in enumerate(self.names):
            columns[name] = [row[k] for _, _, row in batch]
        segments = {}
        for name, values in columns.items():
            ctype = self._type_of[name]
            encoding, payload = encode_segment(values, ctype)
            first, count = write_extent(self.pager, payload)
            present = [v for v in values if v is not None]
            bounded = ctype is not ColumnType.BLOB
            segments[name] = ColumnSegment(
                name, encoding,
                min(present) if bounded and present else None,
                max(present) if bounded and present else None,
                len(present) < len(values), bounded, first, count, len(payload))
            self._decoded[first] = values
        self.rowgroups.append(RowGroup(gi, len(batch), segments))
        for pos, (o, _, _) in enumerate(batch):
            self._in_group[o] = (gi, pos)

    # deletion

    def ordinal_of(self, locator: bytes) -> int | None:
        return self._by_locator.get(locator)

    def delete_ordinal(self, ordinal: int) -> None:
        rid = self._delta_rid.pop(ordinal, None)
        if rid is not None:
            self.delta.delete(rid)
        elif ordinal in self._in_group:
            gi, pos = self._in_group.pop(ordinal)
            self.rowgroups[gi].deleted.add(pos)
        else:
            raise KeyError(f"no live columnstore row with ordinal {ordinal}")

    def delete_locator(self, locator: bytes) -> None:
        ordinal = self._by_locator.pop(locator)
        self.delete_ordinal(ordinal)

    # reading

    def _segment_values(self, seg: ColumnSegment) -> list:
        payload = read_extent(self.pager, seg.first_page, seg.page_count, seg.length)
        values = self._decoded.get(seg.first_page)
        if values is None:
            values = decode_segment(payload, self._type_of[seg.column], seg.encoding)
            self._decoded[seg.first_page] = values
        return values

    def _check_columns(self, columns: Sequence[str]) -> None:
        for c in columns:
            if c not in self._type_of or c == LOCATOR:
                raise SchemaMismatch(f"columnstore has no column {c}")

    def _eliminated(self, rg: RowGroup, predicate: Sequence[Atom]) -> bool:
        return any(not rg.segments[a.column].may_match(a) for a in predicate)

    def needed_columns(self, columns: Sequence[str], predicate: Sequence[Atom]) -> list[str]:
        need = list(dict.fromkeys(list(columns) + [a.column for a in predicate]))
        self._check_columns(need)
        return need

    def estimate_reads(self, columns: Sequence[str], predicate: Sequence[Atom] = (),
                       eliminate: bool = True) -> int:
        """Pages a ``scan`` with these arguments reads: surviving segments plus the deltastore."""
        need = self.needed_columns(columns, predicate)
        total = len(self.delta.pages)
        for rg in self.rowgroups:
            if rg.live_rows == 0 or (eliminate and self._eliminated(rg, predicate)):
                continue
            total += sum(rg.segments[c].page_count for c in need)
        return total

    def scan(self, columns: Sequence[str], predicate: Sequence[Atom] = (),
             eliminate: bool = True) -> Iterator[tuple]:
        """Yield the requested column values of every live matching row.

        Rowgroups come first in creation order, then the deltastore.
        """
        need = self.needed_columns(columns, predicate)
        pos_of = {c: i for i, c in enumerate(need)}
        test = compile_predicate(predicate, pos_of)
        out_idx = [pos_of[c] for c in columns]
        user_need = [c for c in need if c != ORDINAL]
        for rg in self.rowgroups:
            if rg.live_rows == 0:
                continue
            if eliminate and self._eliminated(rg, predicate):
                self.segments_skipped += len(user_need)
                continue
            cols = [self._segment_values(rg.segments[c]) for c in need]
            deleted = rg.deleted
            # with no columns needed, row count comes from the directory alone
            rows = zip(*cols) if cols else ((),) * rg.row_count
            for i, vals in enumerate(rows):
                if i in deleted or not test(vals):
                    continue
                yield tuple(vals[k] for k in out_idx)
        delta_pos = {c: self.names.index(c) for c in need if c != ORDINAL}
        for _, payload in self.delta.scan():
            ordinal, _, raw = self._parse_delta(payload)
            row = self.codec.decode(raw)
            vals = tuple(ordinal if c == ORDINAL else row[delta_pos[c]] for c in need)
            if test(vals):
                yield tuple(vals[k] for k in out_idx)

    def cs_scan(self, column: str, predicate: Sequence[Atom] = (),
                eliminate: bool = True) -> Iterator[tuple[int, Any]]:
        """(ordinal, value) for every live row matching ``predicate``."""
        return self.scan([ORDINAL, column], predicate, eliminate)

    def cs_aggregate(self, column: str | None, fn: str, predicate: Sequence[Atom] = (),
                     eliminate: bool = True) -> Any:
        """COUNT(*) when ``column`` is None, else SUM(column) (None over no rows)."""
        if fn == "count" and column is None:
            return sum(1 for _ in self.scan([], predicate, eliminate))
        self._check_columns([column])
        ctype = self._type_of[column]
        values = (v for (v,) in self.scan([column], predicate, eliminate))
        return aggregate(fn, values, ctype, column)

    def rows(self) -> Iterator[tuple[bytes, tuple]]:
        """(locator, row) for every live row, for audits."""
        for rg in self.rowgroups:
            if rg.live_rows == 0:
                continue
            locs = self._segment_values(rg.segments[LOCATOR])
            cols = [self._segment_values(rg.segments[c]) for c in self.names]
            for i, loc in enumerate(locs):
                if i not in rg.deleted:
                    yield loc, tuple(col[i] for col in cols)
        for _, payload in self.delta.scan():
            _, loc, raw = self._parse_delta(payload)
            yield loc, self.codec.decode(raw)


INT64_MIN = -(1 << 63)
INT64_MAX = (1 << 63) - 1


def aggregate(fn: str, values, ctype: ColumnType, column: str = "?") -> Any:
    """COUNT of non-NULL values, or an exact SUM that rejects int64 overflow."""
    if fn == "count":
        return sum(1 for v in values if v is not None)
    if fn != "sum":
        raise ValueError(f"unknown aggregate {fn!r}")
    if not ctype.is_numeric:
        raise TypeMismatch(f"SUM needs a numeric column, {column} is {ctype.value}")
    present = [v for v in values if v is not None]
    if not present:
        return None
    if ctype is ColumnType.FLOAT64:
        return math.fsum(present)
    total = sum(present)
    if not INT64_MIN <= total <= INT64_MAX:
        raise AggregateOverflow(f"SUM({column}) = {total} overflows int64")
    return total
