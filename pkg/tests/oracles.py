"""Independent reference computations used to freeze expected values.

Nothing here imports from ``pdex``: each function re-derives its answer
from first principles so that tests compare two separate routes.
"""
from __future__ import annotations

import math
import struct
from collections import Counter
from fractions import Fraction

PAGE = 8192
HEADER = 32
SLOT = 4


def int_key(v: int) -> bytes:
    """Order-preserving key bytes of one non-null int64."""
    return b"\x01" + struct.pack(">Q", (v + (1 << 63)) % (1 << 64))


def fnv1a(data: bytes) -> int:
    h = 14695981039346656037
    for b in data:
        h ^= b
        h = (h * 1099511628211) % (1 << 64)
    return h


def max_chain(keys, buckets: int) -> int:
    """Longest bucket chain when ``keys`` hash into ``buckets`` (a power of two)."""
    return max(Counter(fnv1a(k) % buckets for k in keys).values())


def btree_depth(n: int, leaf_entry: int, internal_entry: int, fill: float = 1.0) -> tuple[int, int]:
    """(levels, leaf pages) of a bottom-up packed tree.

    ``leaf_entry`` and ``internal_entry`` are record sizes in bytes without
    the slot; leaves are packed to ``fill`` of the bytes after the header,
    internal pages completely.
    """
    room = PAGE - HEADER
    per_leaf = int(fill * room) // (leaf_entry + SLOT)
    fanout = room // (internal_entry + SLOT)
    pages = -(-n // per_leaf)
    leaves, levels = pages, 1
    while pages > 1:
        pages = -(-pages // fanout)
        levels += 1
    return levels, leaves


def density(rows, cols) -> Fraction:
    return Fraction(1, len({tuple(r[c] for c in cols) for r in rows}))


def matches(value, op, arg) -> bool:
    """SQL-style atom semantics: comparisons with NULL are false."""
    if op == "IS NULL":
        return value is None
    if op == "IS NOT NULL":
        return value is not None
    if value is None:
        return False
    if op == "=":
        return value == arg
    if op == "<":
        return value < arg
    if op == ">":
        return value > arg
    lo, hi = arg
    return lo <= value <= hi


def filter_rows(rows, atoms):
    """``atoms`` is a list of (column position, op, arg)."""
    out = list(rows)
    for c, op, arg in atoms:
        out = [r for r in out if matches(r[c], op, arg)]
    return out


def exact_sum(values):
    vals = [v for v in values if v is not None]
    if not vals:
        return None
    if all(isinstance(v, int) for v in vals):
        return sum(vals)
    return math.fsum(vals)
