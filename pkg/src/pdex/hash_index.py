"""Memory-resident hash index: a bucket array of chain heads.

Each bucket is one signed 64-bit slot in an ``array('q')`` holding the
position of the first entry of its chain (-1 when empty). Entries live in
parallel arrays and are linked through ``next``; new entries are prepended.
"""
from __future__ import annotations

from array import array
from dataclasses import dataclass

from .errors import DuplicateKey, EntryNotFound, InvalidBucketCount

FNV_OFFSET = 0xCBF29CE484222325
FNV_PRIME = 0x100000001B3
_MASK64 = (1 << 64) - 1


def fnv1a64(data: bytes) -> int:
    h = FNV_OFFSET
    for b in data:
        h = ((h ^ b) * FNV_PRIME) & _MASK64
    return h


def next_power_of_two(n: int) -> int:
    return 1 << (n - 1).bit_length()


@dataclass(frozen=True)
class ChainStats:
    avg_chain: float
    max_chain: int
    empty_buckets: int


class HashIndex:
    """Equality-only index over a full encoded key.

    ``bucket_probes`` and ``chain_hops`` count work done by lookups, the
    in-memory analogue of logical reads.
    """

    def __init__(self, bucket_count: int, unique: bool = False):
        if bucket_count < 1:
            raise InvalidBucketCount(f"bucket count must be >= 1, got {bucket_count}")
        self.bucket_count = next_power_of_two(bucket_count)
        self.unique = unique
        self.buckets = array("q", [-1]) * self.bucket_count
        self.keys: list[bytes | None] = []
        self.locators: list[bytes | None] = []
        self.next = array("q")
        self._free: list[int] = []
        self.size = 0
        self.bucket_probes = 0
        self.chain_hops = 0

    def bucket_of(self, key: bytes) -> int:
        return fnv1a64(key) & (self.bucket_count - 1)

    def _walk(self, b: int):
        i = self.buckets[b]
        while i != -1:
            yield i
            i = self.next[i]

    def insert(self, key: bytes, locator: bytes) -> None:
        b = self.bucket_of(key)
        if self.unique:
            for i in self._walk(b):
                if self.keys[i] == key:
                    raise DuplicateKey(f"duplicate hash key {key.hex()}")
        if self._free:
            i = self._free.pop()
            self.keys[i] = key
            self.locators[i] = locator
            self.next[i] = self.buckets[b]
        else:
            i = len(self.keys)
            self.keys.append(key)
            self.locators.append(locator)
            self.next.append(self.buckets[b])
        self.buckets[b] = i
        self.size += 1

    def delete(self, key: bytes, locator: bytes) -> None:
        b = self.bucket_of(key)
        prev = -1
        for i in self._walk(b):
            if self.keys[i] == key and self.locators[i] == locator:
                if prev == -1:
                    self.buckets[b] = self.next[i]
                else:
                    self.next[prev] = self.next[i]
                self.keys[i] = self.locators[i] = None
                self.next[i] = -1
                self._free.append(i)
                self.size -= 1
                return
            prev = i
        raise EntryNotFound(f"no hash entry {key.hex()}")

    def lookup_equal(self, key: bytes) -> list[bytes]:
        """Locators stored under exactly ``key``: one bucket, one chain walk."""
        self.bucket_probes += 1
        out = []
        for i in self._walk(self.bucket_of(key)):
            self.chain_hops += 1
            if self.keys[i] == key:
                out.append(self.locators[i])
        return out

    def chain_length(self, b: int) -> int:
        return sum(1 for _ in self._walk(b))

    def chain_stats(self) -> ChainStats:
        lengths = [0] * self.bucket_count
        for i, k in enumerate(self.keys):
            if k is not None:
                lengths[self.bucket_of(k)] += 1
        return ChainStats(
            avg_chain=self.size / self.bucket_count,
            max_chain=max(lengths),
            empty_buckets=lengths.count(0),
        )

    def items(self):
        for k, loc in zip(self.keys, self.locators):
            if k is not None:
                yield k, loc
