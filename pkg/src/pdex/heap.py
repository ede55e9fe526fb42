"""Unordered heap row store with stable RIDs.

Every heap record starts with a one-byte tag:

* ``ROW``: a row living at its home slot.
* ``STUB``: forwarding stub at the home slot, followed by the 8-byte RID of
  the relocated record.
* ``MOVED``: a relocated row, prefixed with the 8-byte RID of its home slot
  (the back pointer lets scans report the home RID).
* ``SHORT``: a row whose payload is under 8 bytes, stored as tag, length and
  zero padding so that any home record can become a stub in place.

Forwarding chains never exceed one hop: moving an already-moved row rewrites
the home stub instead of chaining.
"""
from __future__ import annotations

from typing import Callable, Iterator

from .errors import RowNotFound, RecordTooLarge
from .storage import MAX_RECORD, Page, PageKind, Pager, Rid, pid

ROW = 1
STUB = 2
MOVED = 3
SHORT = 4

STUB_SIZE = 1 + Rid.SIZE
_TAG_ROW = bytes([ROW])
_TAG_STUB = bytes([STUB])
_TAG_MOVED = bytes([MOVED])

# largest payload that still fits as a relocated record
MAX_PAYLOAD = MAX_RECORD - 1 - Rid.SIZE


def _home_record(payload: bytes) -> bytes:
    if len(payload) < STUB_SIZE - 1:
        return bytes([SHORT, len(payload)]) + payload + bytes(STUB_SIZE - 2 - len(payload))
    return _TAG_ROW + payload


def _home_payload(rec: bytes) -> bytes:
    if rec[0] == SHORT:
        return rec[2:2 + rec[1]]
    return rec[1:]


class Heap:
    """Heap file for one table (or a deltastore), addressed by ``Rid``.

    ``pages`` is the ordered list of page numbers owned by the heap; it is
    persisted by the owner. ``on_grow`` is called after a page is added.
    """

    def __init__(self, pager: Pager, pages: list[int] | None = None,
                 on_grow: Callable[[], None] | None = None):
        self.pager = pager
        self.pages: list[int] = list(pages or [])
        self.on_grow = on_grow
        self.free: dict[int, int] = {}
        self.stubs = 0
        self.live = 0
        self._decoded: dict[int, tuple[int, list]] = {}

    def load(self) -> None:
        """Rebuild the free-space map and counters by reading every page."""
        self.free.clear()
        self.stubs = 0
        self.live = 0
        for n in self.pages:
            page = self.pager.read_page(pid(n))
            self.free[n] = page.free_space
            for rec in page.records():
                if rec is None:
                    continue
                if rec[0] == STUB:
                    self.stubs += 1
                else:
                    self.live += 1

    # placement

    def _new_page(self) -> Page:
        page_id = self.pager.allocate_page(PageKind.HEAP)
        self.pages.append(page_id.page_number)
        self.free[page_id.page_number] = Page.new(page_id, PageKind.HEAP).free_space
        if self.on_grow:
            self.on_grow()
        return self.pager.read_page(page_id)

    def _page_with_room(self, need: int, exclude: int = -1) -> Page:
        for n in self.pages:
            if n != exclude and self.free[n] >= need:
                return self.pager.read_page(pid(n))
        return self._new_page()

    def _place(self, record: bytes, exclude: int = -1) -> Rid:
        page = self._page_with_room(len(record) + 4, exclude)
        slot = page.slot_insert(record)
        self._write(page)
        return Rid(page.id, slot)

    def _write(self, page: Page) -> None:
        self.pager.write_page(page)
        self.free[page.id.page_number] = page.free_space

    def _check_payload(self, payload: bytes) -> None:
        if len(payload) > MAX_PAYLOAD:
            raise RecordTooLarge(f"row of {len(payload)} bytes exceeds heap limit {MAX_PAYLOAD}")

    # operations

    def insert(self, payload: bytes) -> Rid:
        self._check_payload(payload)
        rid = self._place(_home_record(payload))
        self.live += 1
        return rid

    def insert_many(self, payloads: list[bytes]) -> list[Rid]:
        """Batch insert: fills each page in memory and writes it once."""
        rids = []
        page = None
        for payload in payloads:
            self._check_payload(payload)
            record = _home_record(payload)
            if page is None or page.free_space < len(record) + 4:
                if page is not None:
                    self._write(page)
                page = self._page_with_room(len(record) + 4)
            rids.append(Rid(page.id, page.slot_insert(record)))
        if page is not None:
            self._write(page)
        self.live += len(rids)
        return rids

    def _home(self, rid: Rid) -> tuple[Page, bytes]:
        if rid.page.page_number not in self.free:
            raise RowNotFound(f"rid {rid} not in this heap")
        page = self.pager.read_page(rid.page)
        if not 0 <= rid.slot < page.slot_count:
            raise RowNotFound(f"rid {rid} has no such slot")
        rec = page.record(rid.slot)
        if rec is None or rec[0] == MOVED:
            raise RowNotFound(f"rid {rid} does not resolve to a row")
        return page, rec

    def fetch(self, rid: Rid) -> bytes:
        page, rec = self._home(rid)
        if rec[0] != STUB:
            return _home_payload(rec)
        target = Rid.from_bytes(rec[1:STUB_SIZE])
        moved = self.pager.read_page(target.page).record(target.slot)
        return moved[STUB_SIZE:]

    def update(self, rid: Rid, payload: bytes) -> None:
        self._check_payload(payload)
        page, rec = self._home(rid)
        if rec[0] != STUB:
            if page.slot_replace(rid.slot, _home_record(payload)):
                self._write(page)
                return
            new = self._place(_TAG_MOVED + rid.to_bytes() + payload, exclude=page.id.page_number)
            page.slot_replace(rid.slot, _TAG_STUB + new.to_bytes())
            self._write(page)
            self.stubs += 1
            return
        target = Rid.from_bytes(rec[1:STUB_SIZE])
        tpage = self.pager.read_page(target.page)
        moved = _TAG_MOVED + rid.to_bytes() + payload
        if tpage.slot_replace(target.slot, moved):
            self._write(tpage)
            return
        tpage.slot_delete(target.slot)
        self._write(tpage)
        new = self._place(moved, exclude=tpage.id.page_number)
        # re-read: placement may have landed on the home page
        page = self.pager.read_page(rid.page)
        page.slot_replace(rid.slot, _TAG_STUB + new.to_bytes())
        self._write(page)

    def delete(self, rid: Rid) -> None:
        page, rec = self._home(rid)
        if rec[0] == STUB:
            target = Rid.from_bytes(rec[1:STUB_SIZE])
            tpage = self.pager.read_page(target.page)
            tpage.slot_delete(target.slot)
            self._write(tpage)
            page = self.pager.read_page(rid.page)
            self.stubs -= 1
        page.slot_delete(rid.slot)
        self._write(page)
        self.live -= 1

    def scan(self) -> Iterator[tuple[Rid, bytes]]:
        """Every live row once, reporting home RIDs; one read per page."""
        for n in self.pages:
            page = self.pager.read_page(pid(n))
            yield from self._page_rows(page)

    def _page_rows(self, page: Page) -> list[tuple[Rid, bytes]]:
        out = []
        page_id = page.id
        for slot, rec in enumerate(page.records()):
            if rec is None:
                continue
            tag = rec[0]
            if tag == ROW or tag == SHORT:
                out.append((Rid(page_id, slot), _home_payload(rec)))
            elif tag == MOVED:
                out.append((Rid.from_bytes(rec[1:STUB_SIZE]), rec[STUB_SIZE:]))
        return out

    def scan_decoded(self, decode: Callable[[bytes], tuple]) -> Iterator[tuple[Rid, tuple]]:
        """Like ``scan`` but yields decoded rows, memoized per page version."""
        cache = self._decoded
        pager = self.pager
        for n in self.pages:
            buf = pager.read_raw(pid(n))
            ver = pager.version(n)
            hit = cache.get(n)
            if hit is None or hit[0] != ver:
                hit = (ver, [(rid, decode(p)) for rid, p in self._page_rows(Page(buf))])
                cache[n] = hit
            yield from hit[1]

    def reset(self) -> None:
        """Empty every page (used by the deltastore after a full drain)."""
        for n in self.pages:
            page = self.pager.read_page(pid(n))
            page.reset()
            self._write(page)
        self._decoded.clear()
        self.stubs = 0
        self.live = 0
