"""Exception hierarchy shared by every layer of the engine."""


class PdexError(Exception):
    """Base class for all user-facing engine errors."""


class StorageError(PdexError):
    pass


class StorageFull(StorageError):
    pass


class PageOutOfRange(StorageError):
    pass


class PageFull(StorageError):
    pass


class RecordTooLarge(StorageError):
    pass


class ChecksumMismatch(StorageError):
    pass


class BadMagic(StorageError):
    pass


class RowNotFound(PdexError):
    pass


class SchemaMismatch(PdexError):
    pass


class NullViolation(SchemaMismatch):
    """NULL supplied for a NOT NULL column."""


class TypeMismatch(PdexError):
    pass


class DuplicateKey(PdexError):
    pass


class EntryTooLarge(PdexError):
    pass


class EntryNotFound(PdexError):
    pass


class InvalidBucketCount(PdexError):
    pass


class AggregateOverflow(PdexError):
    pass


class EmptyTable(PdexError):
    pass


class EmptyWorkload(PdexError):
    pass


class MissingStats(PdexError):
    pass


class CatalogError(PdexError):
    """DDL rejected: duplicate names, a second clustered index, bad key columns."""


class DuplicateName(CatalogError):
    pass


class SecondClusteredIndex(CatalogError):
    pass


class BlobKeyColumn(CatalogError):
    pass


class QuerySyntaxError(PdexError):
    pass


class UnknownObject(PdexError):
    """No table, column or index by that name."""


class DatabaseLocked(PdexError):
    pass
