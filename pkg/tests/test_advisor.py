import random

import pytest

from pdex import Database, IndexDef, IndexKind, Recommendation, evaluate, parse_workload, recommend
from pdex.advisor import DmlMix
from pdex.errors import EmptyWorkload, QuerySyntaxError


@pytest.fixture(scope="module")
def adv_db(tmp_path_factory):
    path = str(tmp_path_factory.mktemp("adv") / "adv.pdex")
    db = Database.create(path)
    db.create_table("t", [("id", "int64"), ("a", "int64"), ("b", "int64"), ("c", "int64"),
                          ("s", "string"), ("pic", "blob")])
    rng = random.Random(1)
    db.insert_many("t", [(i, i % 5, rng.randrange(5000), None if rng.random() < 0.95 else i,
                          f"s{i % 40}", b"x") for i in range(20_000)])
    db.create_index(IndexDef("ix_s", "t", IndexKind.NONCLUSTERED, ("s",)))
    yield db
    db.close()


def test_parse_workload():
    wl = parse_workload("# comment\nweight:2.5 SELECT a FROM t WHERE a = 1\n\nSELECT b FROM t\n"
                        "dml:t:1,2,3\n")
    assert [w for _, w in wl.entries] == [2.5, 1.0]
    assert wl.dml["t"] == DmlMix(1, 2, 3)
    assert wl.query_weight("t") == 3.5


@pytest.mark.parametrize("text,line", [
    ("SELECT a FROM t\nSELEKT b FROM t", 2),
    ("weight:-1 SELECT a FROM t", 1),
    ("weight:x SELECT a FROM t", 1),
    ("SELECT a FROM t\n\ndml:t:1,-2,0", 3),
])
def test_parse_workload_errors_name_the_line(text, line):
    with pytest.raises(QuerySyntaxError, match=f"line {line}"):
        parse_workload(text)


def test_empty_workload(adv_db):
    with pytest.raises(EmptyWorkload):
        recommend(adv_db, parse_workload("# nothing"))


def _by_name(recs):
    return {r.index.name: r for r in recs}


def test_filtered_covering_and_unique_rules(adv_db):
    wl = parse_workload("weight:10 SELECT id FROM t WHERE c = 5\nweight:5 SELECT b, s FROM t WHERE id = 7")
    recs = recommend(adv_db, wl)
    filt = next(r for r in recs if r.index.key_columns == ("c",))
    assert filt.action == "create" and "R3" in filt.rules_fired and "R2" in filt.rules_fired
    assert filt.index.included_columns == ("id",)
    assert [(a.column, a.op) for a in filt.index.filter] == [("c", "IS NOT NULL")]
    uniq = next(r for r in recs if r.index.key_columns == ("id",) and r.index.kind is IndexKind.NONCLUSTERED)
    assert uniq.index.unique and "R8" in uniq.rules_fired
    clustered = next(r for r in recs if r.index.kind is IndexKind.CLUSTERED)
    assert "R7" in clustered.rules_fired and clustered.index.key_columns == ("id",)
    # ix_s is never used by this workload
    assert _by_name(recs)["ix_s"].action == "drop-candidate"
    assert [r.score for r in recs] == sorted((r.score for r in recs), reverse=True)


def test_heavy_updates_cap_creates(adv_db):
    queries = "\n".join(f"weight:1 SELECT s FROM t WHERE {c} = 1" for c in ("a", "b", "c", "id"))
    recs = recommend(adv_db, parse_workload(queries + "\ndml:t:0,100,0"), max_creates=3)
    creates = [r for r in recs if r.action == "create"]
    avoided = [r for r in recs if r.action == "avoid"]
    assert len(creates) == 3 and avoided
    assert all("R4" in r.rules_fired for r in creates + avoided)
    assert all(list(r.rules_fired) == sorted(r.rules_fired) for r in recs)


def test_recommendations_are_deterministic_and_valid_ddl(adv_db, tmp_path):
    wl = parse_workload("weight:3 SELECT id, pic FROM t WHERE a = 2 AND b BETWEEN 5 AND 50\n"
                        "weight:1 SELECT COUNT(*) FROM t WHERE s = 's3'")
    first = [r.render() for r in recommend(adv_db, wl)]
    assert first == [r.render() for r in recommend(adv_db, wl)]
    creates = [r for r in recommend(adv_db, wl) if r.action == "create"]
    assert creates
    for r in creates:
        assert "pic" not in r.index.key_columns
        res = evaluate(adv_db, r, wl)
        assert res["reads_after"] <= res["reads_before"]


def test_evaluate_on_zero_weight_slice_is_neutral(adv_db):
    rec = Recommendation("create", IndexDef("ix_b", "t", IndexKind.NONCLUSTERED, ("b",)), ("R1",), "", 1.0)
    res = evaluate(adv_db, rec, parse_workload("weight:0 SELECT s FROM t WHERE b = 3"))
    assert res["reads_before"] == res["reads_after"] == 0


def test_evaluate_unused_index_changes_nothing(adv_db):
    rec = Recommendation("create", IndexDef("ix_b", "t", IndexKind.NONCLUSTERED, ("b",)), ("R1",), "", 1.0)
    res = evaluate(adv_db, rec, parse_workload("SELECT s FROM t WHERE a = 3"))
    assert res["reads_before"] == res["reads_after"] > 0
    assert "ix_b" not in adv_db.index_by_name


def test_small_table_gets_only_avoid(tmp_path):
    with Database.create(str(tmp_path / "small.pdex")) as db:
        db.create_table("tiny", [("k", "int64"), ("v", "int64")])
        db.insert_many("tiny", [(i, i) for i in range(100)])
        recs = recommend(db, parse_workload("weight:100 SELECT v FROM tiny WHERE k = 5"))
        assert recs and all(r.action == "avoid" and r.rules_fired == ("R5",) for r in recs)
