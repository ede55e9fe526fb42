"""Feed a weighted workload to the advisor and check its advice by replaying the workload.

Run: python demos/02_advisor.py
"""
import random
import tempfile
from pathlib import Path

from pdex import Database, evaluate, parse_workload, recommend

WORKLOAD = """
# order lookups dominate
weight:50 SELECT total FROM orders WHERE customer = 42
weight:20 SELECT id, total FROM orders WHERE status = 'open' AND placed BETWEEN 100 AND 200
# rare refunds column: mostly NULL
weight:5 SELECT id FROM orders WHERE refund = 3
dml:orders:10,5,1
"""

with tempfile.TemporaryDirectory() as tmp:
    db = Database.create(str(Path(tmp) / "orders.pdex"))
    db.create_table("orders", [("id", "int64"), ("customer", "int64"), ("status", "string"),
                               ("placed", "int64"), ("total", "float64"), ("refund", "int64")])
    rng = random.Random(3)
    db.insert_many("orders", [
        (i, rng.randrange(2000), rng.choice(["open", "paid", "shipped", "closed"]), rng.randrange(1000),
         round(rng.uniform(1, 500), 2), i if rng.random() < 0.03 else None)
        for i in range(30_000)])

    wl = parse_workload(WORKLOAD)
    recs = recommend(db, wl)
    print("recommendations, best first:\n")
    for r in recs:
        print(" ", r.render())

    print("\nlogical reads for the weighted workload, before and after each create:\n")
    for r in recs:
        if r.action == "create":
            res = evaluate(db, r, wl)
            print(f"  {r.index.name:<32} {res['reads_before']:>12.0f} -> {res['reads_after']:>10.0f}")
    db.close()
