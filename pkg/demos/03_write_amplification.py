"""Count the index work behind a single UPDATE as indexes pile up.

Run: python demos/03_write_amplification.py
"""
import tempfile
from collections import Counter
from pathlib import Path

from pdex import Database, IndexDef, IndexKind

with tempfile.TemporaryDirectory() as tmp:
    db = Database.create(str(Path(tmp) / "w.pdex"))
    db.create_table("items", [("sku", "int64"), ("price", "int64"), ("qty", "int64"), ("name", "string")],
                    primary_key=["sku"])
    db.insert_many("items", [(i, i % 97, i % 13, f"item{i}") for i in range(5000)])

    def events_for(statement):
        mark = len(db.events)
        statement()
        return dict(Counter(e.kind for e in db.events[mark:]))

    print("update price, no secondary index:   ", events_for(lambda: db.update("items", {"price": 5}, "sku = 10")))
    db.create_index(IndexDef("ix_price", "items", IndexKind.NONCLUSTERED, ("price",)))
    db.create_index(IndexDef("ix_price_qty", "items", IndexKind.NONCLUSTERED, ("price", "qty")))
    db.create_index(IndexDef("h_price", "items", IndexKind.HASH, ("price",), bucket_count=1024))
    print("update price, three indexes on it:  ", events_for(lambda: db.update("items", {"price": 6}, "sku = 10")))
    print("update qty, one index on it:        ", events_for(lambda: db.update("items", {"qty": 1}, "sku = 10")))
    print("change the clustered key itself:    ", events_for(lambda: db.update("items", {"sku": 9999}, "sku = 10")))
    assert db.audit()
    db.close()
