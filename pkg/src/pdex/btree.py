"""Paged B+tree used for clustered and nonclustered indexes.

Leaf record::

    u16 key_len | key | u16 loc_len | locator | payload

Internal record::

    u16 key_len | key | u32 child page

Entries are ordered by their *sort key*: the key for unique trees, the key
followed by the locator otherwise (the locator acts as a uniquifier). An
internal node's first entry routes everything below the second separator,
so its key is never consulted.

The root page never moves: a root split copies the root's content into two
new pages and turns the root into their parent.
"""
from __future__ import annotations

import bisect
import math
import struct
from dataclasses import dataclass
from typing import Iterable, Iterator, NamedTuple

from .encoding import prefix_successor
from .errors import DuplicateKey, EntryNotFound, EntryTooLarge
from .storage import PAGE_SIZE, SLOT_SIZE, USABLE, Page, PageKind, PageId, Pager, pid

_U16 = struct.Struct("<H")
_U32 = struct.Struct("<I")
_SLOT = struct.Struct("<HH")

# a leaf must hold at least two entries
MAX_ENTRY = USABLE // 2 - SLOT_SIZE


class Entry(NamedTuple):
    key: bytes
    locator: bytes
    payload: bytes


def leaf_record(key: bytes, locator: bytes, payload: bytes) -> bytes:
    return _U16.pack(len(key)) + key + _U16.pack(len(locator)) + locator + payload


def internal_record(key: bytes, child: int) -> bytes:
    return _U16.pack(len(key)) + key + _U32.pack(child)


def parse_leaf(rec: bytes) -> Entry:
    kl = _U16.unpack_from(rec, 0)[0]
    p = 2 + kl
    ll = _U16.unpack_from(rec, p)[0]
    return Entry(rec[2:p], rec[p + 2:p + 2 + ll], rec[p + 2 + ll:])


def parse_internal(rec: bytes) -> tuple[bytes, int]:
    kl = _U16.unpack_from(rec, 0)[0]
    return rec[2:2 + kl], _U32.unpack_from(rec, 2 + kl)[0]


def leaf_capacity(record_size: int, fill_factor: float = 1.0) -> int:
    """Fixed-size records per leaf at ``fill_factor``."""
    return max(1, math.floor(fill_factor * USABLE) // (record_size + SLOT_SIZE))


def internal_fanout(record_size: int) -> int:
    return USABLE // (record_size + SLOT_SIZE)


def estimate_shape(n_entries: int, leaf_record_size: float, internal_record_size: float,
                   fill_factor: float = 1.0) -> tuple[int, int]:
    """(depth, leaf pages) of a bulk-built tree over ``n_entries`` records."""
    per_leaf = max(1, int(math.floor(fill_factor * USABLE) // (leaf_record_size + SLOT_SIZE)))
    fanout = max(2, int(USABLE // (internal_record_size + SLOT_SIZE)))
    leaves = max(1, math.ceil(n_entries / per_leaf))
    depth, level = 1, leaves
    while level > 1:
        level = math.ceil(level / fanout)
        depth += 1
    return depth, leaves


class _PageKeys:
    """Sequence view over a page's sort keys, for ``bisect``."""

    __slots__ = ("buf", "n", "leaf", "unique")

    def __init__(self, page: Page, unique: bool):
        self.buf = page.buf
        self.n = page.slot_count
        self.leaf = page.level == 0
        self.unique = unique

    def __len__(self) -> int:
        return self.n

    def __getitem__(self, i: int) -> bytes:
        buf = self.buf
        off, _ = _SLOT.unpack_from(buf, PAGE_SIZE - SLOT_SIZE * (i + 1))
        kl = _U16.unpack_from(buf, off)[0]
        end = off + 2 + kl
        if self.leaf and not self.unique:
            ll = _U16.unpack_from(buf, end)[0]
            return bytes(buf[off + 2:end]) + bytes(buf[end + 2:end + 2 + ll])
        return bytes(buf[off + 2:end])


def _child_at(page: Page, i: int) -> int:
    buf = page.buf
    off, ln = _SLOT.unpack_from(buf, PAGE_SIZE - SLOT_SIZE * (i + 1))
    return _U32.unpack_from(buf, off + ln - 4)[0]


@dataclass
class ValidationReport:
    ok: bool
    violation: str | None = None
    detail: str = ""

    def __bool__(self) -> bool:
        return self.ok


class BTree:
    """A B+tree rooted at a fixed page.

    ``unique`` makes the key alone the sort key and rejects duplicates;
    otherwise the locator is appended to the key as a uniquifier.
    """

    def __init__(self, pager: Pager, root: int, unique: bool = False):
        self.pager = pager
        self.root = root
        self.unique = unique
        # page -> (version, level, sort keys, children or entries, right sibling, kind)
        self._nodes: dict[int, tuple] = {}

    # construction

    @classmethod
    def create(cls, pager: Pager, unique: bool = False) -> "BTree":
        root = pager.allocate_page(PageKind.BTREE_LEAF)
        return cls(pager, root.page_number, unique)

    @classmethod
    def bulk_build(cls, pager: Pager, entries: Iterable[Entry], unique: bool = False,
                   fill_factor: float = 1.0) -> "BTree":
        """Build bottom-up from entries already sorted by sort key.

        Leaves are packed to ``fill_factor`` of their usable bytes; internal
        levels are packed full.
        """
        if not 0.5 <= fill_factor <= 1.0:
            raise ValueError(f"fill_factor {fill_factor} outside [0.5, 1.0]")
        limit = math.floor(fill_factor * USABLE)
        tree = cls(pager, -1, unique)

        level_items: list[tuple[bytes, int]] = []  # (low sort key, page)
        page: Page | None = None
        used = 0
        prev_sort: bytes | None = None
        prev_key: bytes | None = None
        prev: Entry | None = None
        for e in entries:
            rec = leaf_record(*e)
            if len(rec) > MAX_ENTRY:
                raise EntryTooLarge(f"entry of {len(rec)} bytes exceeds {MAX_ENTRY}")
            sk = e.key if unique else e.key + e.locator
            if prev_sort is not None:
                if unique and e.key == prev_key:
                    raise DuplicateKey(f"duplicate key {e.key.hex()}")
                if sk <= prev_sort:
                    if sk == prev_sort:
                        raise DuplicateKey(f"duplicate entry {sk.hex()}")
                    raise ValueError("bulk_build input is not sorted")
            prev_sort, prev_key = sk, e.key
            if page is None or (used + len(rec) + SLOT_SIZE > limit and page.slot_count > 0):
                new_id = pager.allocate_page(PageKind.BTREE_LEAF)
                if page is not None:
                    page.right_sibling = new_id
                    pager.write_page(page)
                page = Page.new(new_id, PageKind.BTREE_LEAF, 0)
                low = sk if prev is None else tree.separator(prev, e)
                level_items.append((low, new_id.page_number))
                used = 0
            page.slot_insert(rec)
            prev = e
            used += len(rec) + SLOT_SIZE
        if page is None:
            return cls.create(pager, unique)
        pager.write_page(page)

        level = 0
        while len(level_items) > 1:
            level += 1
            parents: list[tuple[bytes, int]] = []
            page = None
            for low, child in level_items:
                rec = internal_record(low, child)
                if page is None or page.free_space < len(rec) + SLOT_SIZE:
                    if page is not None:
                        pager.write_page(page)
                    new_id = pager.allocate_page(PageKind.BTREE_INTERNAL, level)
                    page = Page.new(new_id, PageKind.BTREE_INTERNAL, level)
                    parents.append((low, new_id.page_number))
                page.slot_insert(rec)
            pager.write_page(page)
            level_items = parents
        tree.root = level_items[0][1]
        return tree

    # helpers

    def _read(self, n: int) -> Page:
        return self.pager.read_page(pid(n))

    def sort_key(self, key: bytes, locator: bytes) -> bytes:
        return key if self.unique else key + locator

    def depth(self) -> int:
        return self._read(self.root).level + 1

    def _descend(self, target: bytes) -> tuple[Page, list[tuple[Page, int]], bytes | None]:
        """Walk root to leaf for ``target``; returns leaf, path and high key.

        The high key is the nearest separator to the right of the path: every
        entry >= it lives in a later leaf.
        """
        page = self._read(self.root)
        path: list[tuple[Page, int]] = []
        high: bytes | None = None
        while page.level > 0:
            keys = _PageKeys(page, self.unique)
            i = max(0, bisect.bisect_right(keys, target, 1) - 1)
            if i + 1 < keys.n:
                high = keys[i + 1]
            path.append((page, i))
            page = self._read(_child_at(page, i))
        return page, path, high

    MAX_CACHED = 20000

    def _node(self, n: int) -> tuple:
        """Parsed page ``n``; a cache hit still counts as a logical read."""
        version = self.pager.version(n)
        node = self._nodes.get(n)
        if node is not None and node[0] == version:
            self.pager.note_read(n)
            return node
        page = self._read(n)
        if page.level > 0:
            recs = [parse_internal(r) for r in page.records()]
            node = (version, page.level, [k for k, _ in recs], [c for _, c in recs], None, page.kind)
        else:
            entries = [parse_leaf(r) for r in page.records()]
            keys = [e.key for e in entries] if self.unique else [e.key + e.locator for e in entries]
            node = (version, 0, keys, entries, page.right_sibling, page.kind)
        if len(self._nodes) >= self.MAX_CACHED:
            self._nodes.clear()
        self._nodes[n] = node
        return node

    def _find_leaf(self, target: bytes) -> tuple[tuple, bytes | None]:
        """Read-only descent: the parsed leaf for ``target`` and the high key."""
        node = self._node(self.root)
        high: bytes | None = None
        while node[1] > 0:
            keys = node[2]
            i = max(0, bisect.bisect_right(keys, target, 1) - 1)
            if i + 1 < len(keys):
                high = keys[i + 1]
            node = self._node(node[3][i])
        return node, high

    # mutation

    def insert(self, key: bytes, locator: bytes = b"", payload: bytes = b"") -> None:
        rec = leaf_record(key, locator, payload)
        if len(rec) > MAX_ENTRY:
            raise EntryTooLarge(f"entry of {len(rec)} bytes exceeds {MAX_ENTRY}")
        sk = self.sort_key(key, locator)
        leaf, path, _ = self._descend(sk)
        keys = _PageKeys(leaf, self.unique)
        pos = bisect.bisect_left(keys, sk)
        if pos < keys.n and keys[pos] == sk:
            raise DuplicateKey(f"duplicate key {key.hex()}" if self.unique
                               else f"duplicate entry {sk.hex()}")
        self._insert_into(leaf, pos, rec, path)

    def _insert_into(self, page: Page, pos: int, rec: bytes, path: list[tuple[Page, int]]) -> None:
        need = len(rec) + SLOT_SIZE
        if page.free_space < need and USABLE - SLOT_SIZE * page.slot_count - page.live_bytes() >= need:
            page.rewrite([r for r in page.records()])
        if page.free_space >= need:
            page.slot_insert_at(pos, rec)
            self.pager.write_page(page)
            return
        records = page.records()
        records.insert(pos, rec)
        self._split(page, records, path)

    @staticmethod
    def _split_point(records: list[bytes]) -> int:
        sizes = [len(r) + SLOT_SIZE for r in records]
        total = sum(sizes)
        best, best_cost = 1, None
        left = 0
        for s in range(1, len(records)):
            left += sizes[s - 1]
            cost = max(left, total - left)
            if best_cost is None or cost < best_cost:
                best, best_cost = s, cost
        return best

    def _low_key(self, rec: bytes, leaf: bool) -> bytes:
        if leaf:
            e = parse_leaf(rec)
            return self.sort_key(e.key, e.locator)
        return parse_internal(rec)[0]

    def separator(self, left_last: Entry, right_first: Entry) -> bytes:
        """Shortest sort-key bound between two adjacent leaf entries.

        When the keys differ the bare key of the right entry suffices, which
        keeps seeks on a key (without locator) out of the left leaf.
        """
        if self.unique or left_last.key != right_first.key:
            return right_first.key
        return right_first.key + right_first.locator

    def _split(self, page: Page, records: list[bytes], path: list[tuple[Page, int]]) -> None:
        s = self._split_point(records)
        left, right = records[:s], records[s:]
        leaf = page.level == 0
        if leaf:
            sep = self.separator(parse_leaf(left[-1]), parse_leaf(right[0]))
        else:
            sep = parse_internal(right[0])[0]
        kind = PageKind.BTREE_LEAF if leaf else PageKind.BTREE_INTERNAL
        pager = self.pager
        if page.id.page_number == self.root:
            a_id = pager.allocate_page(kind, page.level)
            b_id = pager.allocate_page(kind, page.level)
            a = Page.new(a_id, kind, page.level)
            b = Page.new(b_id, kind, page.level)
            a.rewrite(left)
            b.rewrite(right)
            if leaf:
                a.right_sibling = b_id
            pager.write_page(a)
            pager.write_page(b)
            first = self._low_key(left[0], leaf)
            page.reset(PageKind.BTREE_INTERNAL, page.level + 1)
            page.rewrite([internal_record(first, a_id.page_number),
                          internal_record(sep, b_id.page_number)])
            pager.write_page(page)
            return
        new_id = pager.allocate_page(kind, page.level)
        new = Page.new(new_id, kind, page.level)
        new.rewrite(right)
        if leaf:
            new.right_sibling = page.right_sibling
        page.rewrite(left)
        if leaf:
            page.right_sibling = new_id
        pager.write_page(new)
        pager.write_page(page)
        parent, idx = path.pop()
        self._insert_into(parent, idx + 1, internal_record(sep, new_id.page_number), path)

    def _locate(self, key: bytes, locator: bytes) -> tuple[Page, int]:
        sk = self.sort_key(key, locator)
        leaf, _, _ = self._descend(sk)
        keys = _PageKeys(leaf, self.unique)
        pos = bisect.bisect_left(keys, sk)
        if pos >= keys.n or keys[pos] != sk:
            raise EntryNotFound(f"no entry {sk.hex()}")
        if self.unique and parse_leaf(leaf.record(pos)).locator != locator:
            raise EntryNotFound(f"key {key.hex()} present with a different locator")
        return leaf, pos

    def delete(self, key: bytes, locator: bytes = b"") -> None:
        """Remove exactly one entry. Pages are never merged."""
        leaf, pos = self._locate(key, locator)
        leaf.slot_remove_at(pos)
        self.pager.write_page(leaf)

    def replace_payload(self, key: bytes, locator: bytes, payload: bytes) -> None:
        rec = leaf_record(key, locator, payload)
        if len(rec) > MAX_ENTRY:
            raise EntryTooLarge(f"entry of {len(rec)} bytes exceeds {MAX_ENTRY}")
        self.delete(key, locator)
        self.insert(key, locator, payload)

    # reads

    def range_scan(self, lo: bytes | None = None, hi: bytes | None = None) -> Iterator[Entry]:
        """Entries with ``lo <= sort key < hi`` in order (None = unbounded).

        Costs one read per level plus one per additional leaf touched.
        """
        leaf, high = self._find_leaf(lo or b"")
        keys, entries, sib = leaf[2], leaf[3], leaf[4]
        pos = bisect.bisect_left(keys, lo) if lo else 0
        first = True
        while True:
            for i in range(pos, len(keys)):
                if hi is not None and keys[i] >= hi:
                    return
                yield entries[i]
            if sib is None:
                return
            if first and high is not None and hi is not None and high >= hi:
                return
            first = False
            leaf = self._node(sib.page_number)
            keys, entries, sib = leaf[2], leaf[3], leaf[4]
            pos = 0

    def get(self, key: bytes) -> Entry | None:
        """Exact-key lookup in a unique tree: ``depth`` reads."""
        leaf, _ = self._find_leaf(key)
        keys = leaf[2]
        i = bisect.bisect_left(keys, key)
        return leaf[3][i] if i < len(keys) and keys[i] == key else None

    def seek(self, key: bytes) -> list[Entry]:
        """Every entry whose key starts with ``key`` (a full or leading-column key)."""
        return list(self.range_scan(key, prefix_successor(key)))

    def leaves(self) -> Iterator[Page]:
        page = self._read(self.root)
        while page.level > 0:
            page = self._read(_child_at(page, 0))
        while True:
            yield page
            sib = page.right_sibling
            if sib is None:
                return
            page = self.pager.read_page(sib)

    def entries(self) -> Iterator[Entry]:
        for leaf in self.leaves():
            for rec in leaf.records():
                yield parse_leaf(rec)

    def leaf_page_count(self) -> int:
        return sum(1 for _ in self.leaves())

    # structural checks

    def validate(self) -> ValidationReport:
        """Check ordering, separators, balance, sibling chain and uniqueness."""
        leaves: list[tuple[int, tuple]] = []
        root = self._node(self.root)

        def check(n: int, node: tuple, lo: bytes | None, hi: bytes | None, expect_level: int):
            _, level, ks, below, _, kind = node
            if level != expect_level:
                return ValidationReport(False, "balance-violation",
                                        f"page {n} at level {level}, expected {expect_level}")
            leaf = level == 0
            want_kind = PageKind.BTREE_LEAF if leaf else PageKind.BTREE_INTERNAL
            if kind is not want_kind:
                return ValidationReport(False, "balance-violation",
                                        f"page {n} kind {kind.label} at level {level}")
            start = 0 if leaf else 1
            for a, b in zip(ks[start:], ks[start + 1:]):
                if not a < b:
                    return ValidationReport(False, "ordering-violation", f"page {n}: {a.hex()} !< {b.hex()}")
            bounded = ks[start:]
            if bounded and lo is not None and bounded[0] < lo:
                return ValidationReport(False, "separator-violation",
                                        f"page {n}: {bounded[0].hex()} below bound {lo.hex()}")
            if bounded and hi is not None and bounded[-1] >= hi:
                return ValidationReport(False, "separator-violation",
                                        f"page {n}: {bounded[-1].hex()} not below bound {hi.hex()}")
            if leaf:
                leaves.append((n, node))
                return None
            if not ks:
                return ValidationReport(False, "balance-violation", f"empty internal page {n}")
            for i, child in enumerate(below):
                c_lo = lo if i == 0 else ks[i]
                c_hi = ks[i + 1] if i + 1 < len(ks) else hi
                bad = check(child, self._node(child), c_lo, c_hi, expect_level - 1)
                if bad is not None:
                    return bad
            return None

        bad = check(self.root, root, None, None, root[1])
        if bad is not None:
            return bad
        # the sibling chain must visit the same leaves in key order
        for (a, node), (b, _) in zip(leaves, leaves[1:]):
            sib = node[4]
            if sib is None or sib.page_number != b:
                return ValidationReport(False, "sibling-violation", f"leaf {a} does not link to {b}")
        if leaves[-1][1][4] is not None:
            return ValidationReport(False, "sibling-violation", "last leaf has a right sibling")
        if self.unique:
            # within a leaf strict ordering already rules out duplicates
            prev = None
            for n, node in leaves:
                ks = node[2]
                if ks:
                    if prev is not None and ks[0] == prev:
                        return ValidationReport(False, "unique-violation", f"leaf {n}")
                    prev = ks[-1]
        return ValidationReport(True)
