"""Schema and index definitions, with the DDL validity rules."""
from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Any, Sequence

from .encoding import ColumnType
from .errors import BlobKeyColumn, CatalogError, DuplicateName, SchemaMismatch, SecondClusteredIndex
from .predicate import Atom
from .query import parse_conjunction, render_conjunction


class IndexKind(str, enum.Enum):
    CLUSTERED = "clustered"
    NONCLUSTERED = "nonclustered"
    HASH = "hash"
    COLUMNSTORE = "columnstore"


@dataclass(frozen=True)
class ColumnDef:
    name: str
    type: ColumnType
    nullable: bool = True

    def __post_init__(self):
        object.__setattr__(self, "type", ColumnType(self.type))


@dataclass(frozen=True)
class TableSchema:
    name: str
    columns: tuple[ColumnDef, ...]
    primary_key: tuple[str, ...] = ()

    def __post_init__(self):
        names = [c.name for c in self.columns]
        if not names:
            raise SchemaMismatch(f"table {self.name} has no columns")
        if len(set(names)) != len(names):
            raise SchemaMismatch(f"table {self.name} repeats a column name")
        for c in self.primary_key:
            if c not in names:
                raise SchemaMismatch(f"primary key column {c} not in {self.name}")

    @property
    def names(self) -> list[str]:
        return [c.name for c in self.columns]

    @property
    def types(self) -> list[ColumnType]:
        return [c.type for c in self.columns]

    def column(self, name: str) -> ColumnDef:
        for c in self.columns:
            if c.name == name:
                return c
        raise SchemaMismatch(f"table {self.name} has no column {name}")

    def positions(self) -> dict[str, int]:
        return {c.name: i for i, c in enumerate(self.columns)}

    def to_json(self) -> dict:
        return {"name": self.name,
                "columns": [[c.name, c.type.value, c.nullable] for c in self.columns],
                "primary_key": list(self.primary_key)}

    @classmethod
    def from_json(cls, d: dict) -> "TableSchema":
        return cls(d["name"], tuple(ColumnDef(n, t, nl) for n, t, nl in d["columns"]),
                   tuple(d.get("primary_key", ())))


@dataclass(frozen=True)
class IndexDef:
    """Declarative index description.

    For columnstore indexes ``key_columns`` lists the stored columns.
    """

    name: str
    table: str
    kind: IndexKind
    key_columns: tuple[str, ...]
    included_columns: tuple[str, ...] = ()
    unique: bool = False
    filter: tuple[Atom, ...] | None = None
    fill_factor: float = 1.0
    bucket_count: int | None = None

    def __post_init__(self):
        object.__setattr__(self, "kind", IndexKind(self.kind))
        object.__setattr__(self, "key_columns", tuple(self.key_columns))
        object.__setattr__(self, "included_columns", tuple(self.included_columns))
        if self.filter is not None:
            object.__setattr__(self, "filter", tuple(self.filter) or None)

    @property
    def is_btree(self) -> bool:
        return self.kind in (IndexKind.CLUSTERED, IndexKind.NONCLUSTERED)

    @property
    def columns(self) -> tuple[str, ...]:
        return self.key_columns + self.included_columns

    def to_json(self) -> dict:
        return {"name": self.name, "table": self.table, "kind": self.kind.value,
                "key_columns": list(self.key_columns),
                "included_columns": list(self.included_columns),
                "unique": self.unique,
                "filter": render_conjunction(self.filter) if self.filter else None,
                "fill_factor": self.fill_factor, "bucket_count": self.bucket_count}

    @classmethod
    def from_json(cls, d: dict) -> "IndexDef":
        return cls(d["name"], d["table"], d["kind"], tuple(d["key_columns"]),
                   tuple(d["included_columns"]), d["unique"],
                   parse_conjunction(d["filter"]) if d["filter"] else None,
                   d["fill_factor"], d.get("bucket_count"))

    def describe(self) -> str:
        parts = [self.kind.value]
        if self.unique:
            parts.insert(0, "unique")
        text = f"{' '.join(parts)} ({', '.join(self.key_columns)})"
        if self.included_columns:
            text += f" include ({', '.join(self.included_columns)})"
        if self.filter:
            text += f" filter ({render_conjunction(self.filter)})"
        return text


def validate_index_def(idx: IndexDef, schema: TableSchema, existing: Sequence[IndexDef] = ()) -> None:
    """Raise if ``idx`` is not acceptable DDL for ``schema``."""
    if not idx.key_columns:
        raise CatalogError(f"index {idx.name}: no key columns")
    if len(set(idx.key_columns)) != len(idx.key_columns):
        raise CatalogError(f"index {idx.name}: repeated key column")
    for c in idx.columns:
        schema.column(c)
    if set(idx.key_columns) & set(idx.included_columns):
        raise CatalogError(f"index {idx.name}: included columns overlap the key")
    if idx.included_columns and idx.kind is not IndexKind.NONCLUSTERED:
        raise CatalogError(f"index {idx.name}: included columns need a nonclustered index")
    if idx.kind is not IndexKind.COLUMNSTORE:
        for c in idx.key_columns:
            if schema.column(c).type.is_large_object:
                raise BlobKeyColumn(f"index {idx.name}: {c} is a large-object column "
                                    f"and cannot be an index key column")
    if idx.filter is not None:
        if idx.kind not in (IndexKind.NONCLUSTERED, IndexKind.COLUMNSTORE):
            raise CatalogError(f"index {idx.name}: filters need a nonclustered or columnstore index")
        for a in idx.filter:
            a.coerced(schema.column(a.column).type)
    if not 0.5 <= idx.fill_factor <= 1.0:
        raise CatalogError(f"index {idx.name}: fill factor {idx.fill_factor} outside [0.5, 1.0]")
    if idx.kind is IndexKind.HASH:
        if idx.bucket_count is not None and idx.bucket_count < 1:
            raise CatalogError(f"index {idx.name}: bucket count must be >= 1")
    elif idx.bucket_count is not None:
        raise CatalogError(f"index {idx.name}: bucket count applies to hash indexes only")
    if idx.kind is IndexKind.COLUMNSTORE and idx.unique:
        raise CatalogError(f"index {idx.name}: a columnstore index cannot be unique")
    for other in existing:
        if other.name == idx.name:
            raise DuplicateName(f"index {idx.name} already exists")
        if (other.table == idx.table and other.kind is IndexKind.CLUSTERED
                and idx.kind is IndexKind.CLUSTERED):
            raise SecondClusteredIndex(f"table {idx.table} already has clustered index {other.name}")


def normalize_filter(filter_: Sequence[Atom] | None, schema: TableSchema) -> tuple[Atom, ...] | None:
    if not filter_:
        return None
    return tuple(a.coerced(schema.column(a.column).type) for a in filter_)


def row_from(values: Any, schema: TableSchema) -> tuple:
    """Accept a mapping or sequence and return a tuple in schema order."""
    if isinstance(values, dict):
        unknown = set(values) - set(schema.names)
        if unknown:
            raise SchemaMismatch(f"table {schema.name} has no column(s) {sorted(unknown)}")
        return tuple(values.get(n) for n in schema.names)
    values = tuple(values)
    if len(values) != len(schema.columns):
        raise SchemaMismatch(f"table {schema.name} expects {len(schema.columns)} values, got {len(values)}")
    return values
