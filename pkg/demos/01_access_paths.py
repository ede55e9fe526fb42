"""Watch the planner pick between a scan, a seek with lookups and a covering seek.

Run: python demos/01_access_paths.py
"""
import random
import tempfile
from pathlib import Path

from pdex import Database, IndexDef, IndexKind

QUERY = "SELECT email, city FROM customers WHERE city = 'Oslo'"

with tempfile.TemporaryDirectory() as tmp:
    db = Database.create(str(Path(tmp) / "shop.pdex"))
    db.create_table("customers", [("id", "int64"), ("email", "string"), ("city", "string")],
                    primary_key=["id"])
    rng = random.Random(7)
    cities = ["Oslo", "Lima", "Pune", "Kyiv", "Accra"] + [f"town{i}" for i in range(195)]
    db.insert_many("customers", [(i, f"user{i}@example.com", rng.choice(cities)) for i in range(20_000)])

    print("1. only the clustered primary key exists, so city needs a full scan\n")
    print(db.explain(QUERY, analyze=True).rendered, "\n")

    db.create_index(IndexDef("ix_city", "customers", IndexKind.NONCLUSTERED, ("city",)))
    print("2. a city index: seek, then fetch each email through the clustered key\n")
    print(db.explain(QUERY, analyze=True).rendered, "\n")

    db.create_index(IndexDef("ix_city_cov", "customers", IndexKind.NONCLUSTERED, ("city",), ("email",)))
    print("3. include email in the index and the lookups disappear\n")
    print(db.explain(QUERY, analyze=True).rendered)
    db.close()
