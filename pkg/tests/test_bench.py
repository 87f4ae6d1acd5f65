import math

from pjheap import bench


def test_micro_rows():
    rows = bench.micro(ops=200)
    ops = {(r["structure"], r["op"]) for r in rows}
    assert len(ops) == len(rows) >= 6
    assert all(r["us_per_op"] > 0 for r in rows)


def test_load_trend_small():
    rows = bench.load((2000, 4000, 8000), types=5, repeat=1)
    summary = bench.load_summary(rows)
    assert {r["safety"] for r in rows} == {"ug", "zero"}
    assert math.isfinite(summary["ug_spread"]) and summary["ug_spread"] > 0


def test_linear_fit_exact():
    slope, icept, r2 = bench.linear_fit([1, 2, 3, 4], [3, 5, 7, 9])
    assert abs(slope - 2) < 1e-12 and abs(icept - 1) < 1e-12 and abs(r2 - 1) < 1e-12


def test_jpab_small():
    rows = bench.jpab(objects=60, batch=20)
    tests = {r["test"] for r in rows}
    assert tests == {"basic", "ext", "collection", "node"}
    assert all(r["fences_issued"] >= 0 for r in rows)


def test_gc_overhead_small():
    r = bench.gc_overhead(size=2 << 20)
    assert r["isomorphic"]
    assert r["fences_issued"] > 0 and r["fences_issued_nofence"] == 0
    assert math.isfinite(r["pause_ratio"])
