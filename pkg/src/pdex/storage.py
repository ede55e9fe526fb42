"""Fixed-size slotted pages and the single-file pager.

Page layout (all integers little-endian)::

    0   u32  page_number
    4   u16  file_id
    6   u8   kind
    7   u8   level            (0 = leaf)
    8   u16  slot_count
    10  u16  free_space_offset
    12  u16  right sibling file_id
    14  u32  right sibling page_number (0xFFFFFFFF = none)
    18  ...  reserved
    28  u32  crc32 of the page with this field zeroed
    32  ...  records, growing upward
    ... slot directory, 4 bytes per slot (u16 offset, u16 length), growing
        downward from the last byte; slot i lives at PAGE_SIZE - 4*(i+1)

Page 0 is the file header / catalog root and starts with the magic bytes
instead of the generic header; only its checksum field is shared.
"""
from __future__ import annotations

import enum
import os
import struct
import zlib
from dataclasses import dataclass
from typing import NamedTuple

from .errors import (
    BadMagic,
    ChecksumMismatch,
    PageFull,
    PageOutOfRange,
    RecordTooLarge,
    StorageFull,
)

PAGE_SIZE = 8192
HEADER_SIZE = 32
SLOT_SIZE = 4
USABLE = PAGE_SIZE - HEADER_SIZE
MAX_RECORD = PAGE_SIZE - HEADER_SIZE - SLOT_SIZE

FILE_ID = 1
NO_PAGE = 0xFFFFFFFF
MAGIC = b"PDEXv1\x00\x00"
FORMAT_VERSION = 1

CHECKSUM_OFFSET = 28
_HEADER = struct.Struct("<IHBBHHHI")  # through right sibling, 18 bytes
_SLOT = struct.Struct("<HH")
_U16 = struct.Struct("<H")


class PageKind(enum.IntEnum):
    CATALOG = 0
    HEAP = 1
    BTREE_INTERNAL = 2
    BTREE_LEAF = 3
    COLUMNSTORE_META = 4

    @property
    def label(self) -> str:
        return self.name.lower().replace("_", "-")


class PageId(NamedTuple):
    file_id: int
    page_number: int

    def __str__(self) -> str:
        return f"{self.file_id}:{self.page_number}"


def pid(page_number: int) -> PageId:
    return PageId(FILE_ID, page_number)


class Rid(NamedTuple):
    """Heap row locator: page plus slot ordinal."""

    page: PageId
    slot: int

    SIZE = 8

    def to_bytes(self) -> bytes:
        # big-endian so locator bytes sort in (page, slot) order
        return struct.pack(">HIH", self.page.file_id, self.page.page_number, self.slot)

    @classmethod
    def from_bytes(cls, b: bytes) -> "Rid":
        f, p, s = struct.unpack(">HIH", b)
        return cls(PageId(f, p), s)

    def __str__(self) -> str:
        return f"{self.page}/{self.slot}"


@dataclass
class IoCounters:
    logical_reads: int = 0
    logical_writes: int = 0

    def snapshot(self) -> tuple[int, int]:
        return self.logical_reads, self.logical_writes


class Page:
    """An 8192-byte page frame with a slot directory.

    Slot ordinals are stable under ``slot_insert``/``slot_delete``; the
    ``*_at`` variants shift the directory and are used by ordered pages.
    """

    __slots__ = ("buf",)

    def __init__(self, buf: bytearray):
        if len(buf) != PAGE_SIZE:
            raise ValueError(f"page buffer must be {PAGE_SIZE} bytes, got {len(buf)}")
        self.buf = buf

    @classmethod
    def new(cls, page_id: PageId, kind: PageKind, level: int = 0) -> "Page":
        page = cls(bytearray(PAGE_SIZE))
        _HEADER.pack_into(page.buf, 0, page_id.page_number, page_id.file_id, int(kind), level,
                          0, HEADER_SIZE, 0, NO_PAGE)
        return page

    def reset(self, kind: PageKind | None = None, level: int | None = None) -> None:
        """Drop every record, keeping identity (and kind/level unless given)."""
        page_id = self.id
        kind = self.kind if kind is None else kind
        level = self.level if level is None else level
        self.buf[:] = bytes(PAGE_SIZE)
        _HEADER.pack_into(self.buf, 0, page_id.page_number, page_id.file_id, int(kind), level,
                          0, HEADER_SIZE, 0, NO_PAGE)

    # header fields

    @property
    def id(self) -> PageId:
        n, f = struct.unpack_from("<IH", self.buf, 0)
        return PageId(f, n)

    @property
    def kind(self) -> PageKind:
        return PageKind(self.buf[6])

    @property
    def level(self) -> int:
        return self.buf[7]

    @level.setter
    def level(self, value: int) -> None:
        self.buf[7] = value

    @property
    def slot_count(self) -> int:
        return _U16.unpack_from(self.buf, 8)[0]

    @property
    def free_space_offset(self) -> int:
        return _U16.unpack_from(self.buf, 10)[0]

    @property
    def free_space(self) -> int:
        return PAGE_SIZE - SLOT_SIZE * self.slot_count - self.free_space_offset

    @property
    def right_sibling(self) -> PageId | None:
        f, n = struct.unpack_from("<HI", self.buf, 12)
        return None if n == NO_PAGE else PageId(f, n)

    @right_sibling.setter
    def right_sibling(self, value: PageId | None) -> None:
        if value is None:
            struct.pack_into("<HI", self.buf, 12, 0, NO_PAGE)
        else:
            struct.pack_into("<HI", self.buf, 12, value.file_id, value.page_number)

    def _set_counts(self, slot_count: int, fso: int) -> None:
        struct.pack_into("<HH", self.buf, 8, slot_count, fso)

    # slot directory

    @staticmethod
    def _slot_pos(i: int) -> int:
        return PAGE_SIZE - SLOT_SIZE * (i + 1)

    def slot_entry(self, i: int) -> tuple[int, int]:
        return _SLOT.unpack_from(self.buf, self._slot_pos(i))

    def record(self, i: int) -> bytes | None:
        """Record bytes in slot ``i``; None for a tombstoned slot."""
        if not 0 <= i < self.slot_count:
            raise IndexError(f"slot {i} out of range (slot_count={self.slot_count})")
        off, ln = _SLOT.unpack_from(self.buf, PAGE_SIZE - SLOT_SIZE * (i + 1))
        if off == 0:
            return None
        return bytes(self.buf[off:off + ln])

    def records(self) -> list[bytes | None]:
        n = self.slot_count
        buf = self.buf
        out = []
        for i in range(n):
            off, ln = _SLOT.unpack_from(buf, PAGE_SIZE - SLOT_SIZE * (i + 1))
            out.append(None if off == 0 else bytes(buf[off:off + ln]))
        return out

    def live_bytes(self) -> int:
        total = 0
        for i in range(self.slot_count):
            off, ln = self.slot_entry(i)
            if off:
                total += ln
        return total

    def _append_bytes(self, record: bytes, new_slots: int) -> int:
        if len(record) > MAX_RECORD:
            raise RecordTooLarge(f"record of {len(record)} bytes exceeds {MAX_RECORD}")
        if self.free_space < len(record) + SLOT_SIZE * new_slots:
            raise PageFull(f"page {self.id} has {self.free_space} free bytes, "
                           f"needs {len(record) + SLOT_SIZE * new_slots}")
        off = self.free_space_offset
        self.buf[off:off + len(record)] = record
        return off

    def slot_insert(self, record: bytes) -> int:
        """Append a record under a new slot ordinal."""
        off = self._append_bytes(record, 1)
        n = self.slot_count
        _SLOT.pack_into(self.buf, self._slot_pos(n), off, len(record))
        self._set_counts(n + 1, off + len(record))
        return n

    def slot_delete(self, i: int) -> None:
        """Tombstone slot ``i``; its bytes are not reclaimed."""
        if self.record(i) is None:
            raise IndexError(f"slot {i} already deleted")
        _SLOT.pack_into(self.buf, self._slot_pos(i), 0, 0)

    def slot_replace(self, i: int, record: bytes) -> bool:
        """Overwrite slot ``i`` in place or in free space. False if it cannot fit."""
        off, ln = self.slot_entry(i)
        if len(record) <= ln and off:
            self.buf[off:off + len(record)] = record
            _SLOT.pack_into(self.buf, self._slot_pos(i), off, len(record))
            return True
        if len(record) > MAX_RECORD or self.free_space < len(record):
            return False
        new_off = self._append_bytes(record, 0)
        _SLOT.pack_into(self.buf, self._slot_pos(i), new_off, len(record))
        self._set_counts(self.slot_count, new_off + len(record))
        return True

    def slot_insert_at(self, pos: int, record: bytes) -> None:
        """Insert a record so that it becomes slot ``pos``, shifting later slots."""
        n = self.slot_count
        if not 0 <= pos <= n:
            raise IndexError(pos)
        off = self._append_bytes(record, 1)
        lo = PAGE_SIZE - SLOT_SIZE * n
        hi = PAGE_SIZE - SLOT_SIZE * pos
        self.buf[lo - SLOT_SIZE:hi] = self.buf[lo:hi] + _SLOT.pack(off, len(record))
        self._set_counts(n + 1, off + len(record))

    def slot_remove_at(self, pos: int) -> None:
        """Remove slot ``pos`` from the directory, shifting later slots up."""
        n = self.slot_count
        if not 0 <= pos < n:
            raise IndexError(pos)
        lo = PAGE_SIZE - SLOT_SIZE * n
        hi = PAGE_SIZE - SLOT_SIZE * pos
        self.buf[lo:hi] = bytes(SLOT_SIZE) + self.buf[lo:hi - SLOT_SIZE]
        self._set_counts(n - 1, self.free_space_offset)

    def rewrite(self, records: list[bytes]) -> None:
        """Replace the page content with ``records`` in slot order (compaction)."""
        sibling = self.right_sibling
        self.reset()
        self.right_sibling = sibling
        buf = self.buf
        off = HEADER_SIZE
        total = sum(len(r) for r in records) + SLOT_SIZE * len(records)
        if total > USABLE:
            raise PageFull(f"{total} bytes do not fit page {self.id}")
        for i, r in enumerate(records):
            buf[off:off + len(r)] = r
            _SLOT.pack_into(buf, PAGE_SIZE - SLOT_SIZE * (i + 1), off, len(r))
            off += len(r)
        self._set_counts(len(records), off)


def page_checksum(buf) -> int:
    mv = memoryview(buf)
    crc = zlib.crc32(mv[:CHECKSUM_OFFSET])
    crc = zlib.crc32(b"\x00\x00\x00\x00", crc)
    return zlib.crc32(mv[CHECKSUM_OFFSET + 4:], crc)


class Pager:
    """Owns the database file; every page access goes through here.

    Writes go straight to the file. Page images that passed checksum
    verification are kept in memory, so rereading a page skips the file and
    the checksum; every read still counts as one logical read. ``version``
    lets callers cache derived data per page safely.
    """

    MAX_FRAMES = 32768

    def __init__(self, path: str | os.PathLike, create: bool = False, max_pages: int | None = None):
        self.path = os.fspath(path)
        flags = os.O_RDWR | (os.O_CREAT | os.O_TRUNC if create else 0)
        self.fd = os.open(self.path, flags, 0o644)
        size = os.fstat(self.fd).st_size
        if size % PAGE_SIZE:
            os.close(self.fd)
            raise BadMagic(f"{self.path}: size {size} is not a multiple of {PAGE_SIZE}")
        self.page_count = size // PAGE_SIZE
        self.max_pages = max_pages
        self.counters = IoCounters()
        self._versions: dict[int, int] = {}
        self._frames: dict[int, bytes] = {}

    def close(self) -> None:
        self._frames.clear()
        if self.fd is not None:
            os.close(self.fd)
            self.fd = None

    def _check(self, page_id: PageId) -> None:
        if page_id.file_id != FILE_ID or not 0 <= page_id.page_number < self.page_count:
            raise PageOutOfRange(f"page {page_id} not allocated (file has {self.page_count} pages)")

    def allocate_page(self, kind: PageKind, level: int = 0) -> PageId:
        n = self.page_count
        if self.max_pages is not None and n >= self.max_pages:
            raise StorageFull(f"{self.path}: page limit {self.max_pages} reached")
        page_id = pid(n)
        page = Page.new(page_id, kind, level)
        struct.pack_into("<I", page.buf, CHECKSUM_OFFSET, page_checksum(page.buf))
        try:
            os.pwrite(self.fd, page.buf, n * PAGE_SIZE)
        except OSError as exc:
            raise StorageFull(f"{self.path}: cannot grow file: {exc}") from exc
        self.page_count = n + 1
        return page_id

    def _remember(self, page_number: int, buf) -> None:
        if len(self._frames) >= self.MAX_FRAMES:
            self._frames.clear()
        self._frames[page_number] = bytes(buf)

    def read_raw(self, page_id: PageId) -> bytearray:
        self._check(page_id)
        self.counters.logical_reads += 1
        n = page_id.page_number
        frame = self._frames.get(n)
        if frame is not None:
            return bytearray(frame)
        buf = bytearray(os.pread(self.fd, PAGE_SIZE, n * PAGE_SIZE))
        stored = struct.unpack_from("<I", buf, CHECKSUM_OFFSET)[0]
        if stored != page_checksum(buf):
            raise ChecksumMismatch(f"page {page_id}: checksum mismatch")
        self._remember(n, buf)
        return buf

    def note_read(self, page_number: int) -> None:
        """Count a logical read of a page whose content the caller has cached."""
        self._check(pid(page_number))
        self.counters.logical_reads += 1

    def read_page(self, page_id: PageId) -> Page:
        return Page(self.read_raw(page_id))

    def write_raw(self, page_number: int, buf: bytearray) -> None:
        self._check(pid(page_number))
        struct.pack_into("<I", buf, CHECKSUM_OFFSET, page_checksum(buf))
        os.pwrite(self.fd, buf, page_number * PAGE_SIZE)
        self._remember(page_number, buf)
        self.counters.logical_writes += 1
        self._versions[page_number] = self._versions.get(page_number, 0) + 1

    def write_page(self, page: Page) -> None:
        self.write_raw(page.id.page_number, page.buf)

    def version(self, page_number: int) -> int:
        return self._versions.get(page_number, 0)
