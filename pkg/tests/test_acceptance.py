"""The ten acceptance criteria, each at its stated size and tolerance.

Every test prints one ``criterion N: PASS|FAIL ...`` line to the terminal
(also when pytest captures output).  Run alone with::

    pytest tests/test_acceptance.py -v
"""

import math
import random
import sys
import time
from collections import deque

import numpy as np
import pytest

from pjheap import bench, crashtest, gc, pjo
from pjheap import layout as L
from pjheap.device import PersistentDevice, create_device
from pjheap.errors import TooWide
from pjheap.heap import Heap, descriptor_of, is_instance_of
from pjheap.klass import PERSISTENT, VOLATILE, TypeDescriptor, alias_of
from pjheap.validate import validate_heap
from pjheap.volatile import companion


@pytest.fixture
def report(capsys):
    def emit(n, ok, detail):
        with capsys.disabled():
            sys.stdout.write("\ncriterion %d: %s %s\n" % (n, "PASS" if ok else "FAIL", detail))
        assert ok, detail
    return emit


# 1. allocation crash sweep

def test_01_alloc_crash_sweep(report):
    t0 = time.perf_counter()
    res = crashtest.run_sweep("alloc10k")
    secs = time.perf_counter() - t0
    ok = res.ok and res.points == res.total and secs < 300
    report(1, ok, "alloc10k points=%d passed=%d failed=%d seconds=%.1f (limit 300)"
           % (res.points, res.passed, len(res.failures), secs))


# 2. GC crash sweep

def test_02_gc_crash_sweep(report):
    res = crashtest.run_sweep("gc5k")
    ok = res.ok and res.points == res.total
    report(2, ok, "gc5k points=%d passed=%d failed=%d seconds=%.1f"
           % (res.points, res.passed, len(res.failures), res.seconds))


# 3. summary idempotence

def _random_marks(rng, geom):
    """Random objects tiled over the data heap, a random subset marked."""
    sizes = rng.integers(2, 48, size=geom.words // 2)
    ends = np.cumsum(sizes)
    keep = ends <= geom.words
    sizes, ends = sizes[keep], ends[keep]
    starts = ends - sizes
    live = rng.random(len(starts)) < rng.random()
    bm = gc.MarkBitmap.empty(geom.words)
    bm.begin[starts[live]] = True
    bm.end[ends[live] - 1] = True
    return bm


def test_03_summary_idempotence(report):
    rng = np.random.default_rng(0)
    geom = gc.Geometry(64 * 1024, 64 * 1024 + 16 * 64 * 1024, 64 * 1024)
    mismatches = 0
    for _ in range(1000):
        bm = _random_marks(rng, geom)
        first = gc.summarize(bm, geom).to_bytes()
        # the second run starts from the persisted (packed) bits, as recovery does
        again = gc.summarize(gc.MarkBitmap.unpack(*bm.packed(), geom.words), geom).to_bytes()
        mismatches += first != again
    report(3, mismatches == 0, "bitmaps=1000 mismatches=%d" % mismatches)


# 4. mark vs BFS

GNODE = TypeDescriptor.define("AccNode", [("key", "q"), ("a", "ref"), ("b", "ref")])
GARR = TypeDescriptor.define_array("AccNode[]", "ref")


def bulk_graph(heap, n, rng):
    """Lay out ``n`` random objects directly in the image (no per-object fences).

    Returns (offsets, adjacency, root indices); adjacency comes from the
    generator, so the BFS oracle never reads the heap.
    """
    node_k = heap.register_type(GNODE)
    arr_k = heap.register_type(GARR)
    is_arr = rng.random(n) < 0.1
    lens = np.where(is_arr, rng.integers(0, 7, n), 0)
    sizes = np.where(is_arr, 24 + 8 * lens, GNODE.instance_size)
    start = heap.meta.data_heap_location
    offs = start + np.concatenate([[0], np.cumsum(sizes)[:-1]])
    top = int(start + sizes.sum())
    words = np.zeros((top - start) // 8, np.uint64)
    w = (offs - start) // 8
    words[w] = np.where(is_arr, arr_k, node_k).astype(np.uint64)
    words[w + 1] = heap.meta.global_timestamp
    density = rng.random() * 2.5 / 2
    adj = [[] for _ in range(n)]
    for i in range(n):
        if is_arr[i]:
            words[w[i] + 2] = lens[i]
            slots = [w[i] + 3 + k for k in range(lens[i])]
        else:
            words[w[i] + 2] = i
            slots = [w[i] + 3, w[i] + 4]
        for s in slots:
            if rng.random() < density:
                j = int(rng.integers(n))
                words[s] = heap.base + int(offs[j])
                adj[i].append(j)
    dev = heap.device
    dev.write(start, words.tobytes())
    old = heap.meta.top
    if old > top:
        dev.write(top, bytes(old - top))
    dev.write_u64(L.OFF_TOP, top)
    heap.meta.top = top
    roots = [int(x) for x in rng.choice(n, size=min(n, int(rng.integers(1, 6))), replace=False)]
    return offs.tolist(), adj, roots


def bfs(adj, roots):
    seen = set(roots)
    q = deque(roots)
    while q:
        for j in adj[q.popleft()]:
            if j not in seen:
                seen.add(j)
                q.append(j)
    return seen


def test_04_mark_matches_bfs(report):
    rng = np.random.default_rng(4)
    heap = Heap.format(create_device(2 << 20))
    mismatches = 0
    largest = 0
    try:
        for g in range(1000):
            n = int(rng.integers(1, 10001))
            largest = max(largest, n)
            offs, adj, roots = bulk_graph(heap, n, rng)
            if g == 0:
                assert validate_heap(heap).ok
            bm = gc.mark(heap, [heap.base + offs[r] for r in roots], persist=False)
            marked = set((np.flatnonzero(bm.begin) * 8 + heap.meta.data_heap_location).tolist())
            want = {offs[i] for i in bfs(adj, roots)}
            mismatches += marked != want
    finally:
        heap.abandon()
    report(4, mismatches == 0, "graphs=1000 max_nodes=%d mismatches=%d" % (largest, mismatches))


# 5. load scaling trend

def test_05_load_scaling(report):
    rows = bench.load((50_000, 100_000, 200_000, 400_000), types=20, repeat=5)
    s = bench.load_summary(rows)
    ok = s["ug_spread"] < 2 and s["zero_r2"] > 0.9
    report(5, ok, "ug_spread=%.3f (<2) zero_r2=%.4f (>0.9) zero_slope_us_per_object=%.3f"
           % (s["ug_spread"], s["zero_r2"], s["zero_slope_us_per_object"]))


# 6. recoverable-GC flush overhead

def test_06_gc_flush_overhead(report):
    r = bench.gc_overhead(size=64 << 20)
    ok = r["isomorphic"] and math.isfinite(r["pause_ratio"]) and r["pause_ratio"] > 0
    report(6, ok, "heap=64MiB isomorphic=%s pause_ratio=%.3f fences_issued=%d live_objects=%d"
           % (r["isomorphic"], r["pause_ratio"], r["fences_issued"], r["live_objects"]))


# 7. transaction atomicity

def _field_diff_violations(commits=200, seed=7):
    """Update commits on random dirty subsets; bytes changed outside the undo
    log must fall inside the dirty fields' words."""
    rng = random.Random(seed)
    reg = pjo.EntityRegistry()
    Person = pjo.enhance(pjo.EntityDescriptor(
        "acc.Person", [("id", "q"), ("first", "str"), ("last", "str"), ("age", "i"), ("score", "d")]), reg)
    heap = Heap.format(create_device(8 << 20))
    em = pjo.EntityManager(heap, registry=reg)
    people = [Person(id=i, first="f%d" % i, last="l%d" % i, age=i, score=0.5) for i in range(50)]
    txn = em.begin()
    for p in people:
        txn.persist(p)
    txn.commit()
    dev = heap.device
    bad = 0
    for _ in range(commits):
        img0 = np.frombuffer(dev.durable_image(), np.uint8)
        top0 = heap.meta.top
        allowed = set()
        txn = em.begin()
        for p in rng.sample(people, rng.randint(1, 4)):
            for f in rng.sample(["age", "score", "last"], rng.randint(1, 3)):
                p.set(f, rng.randrange(100) if f == "age" else rng.random() if f == "score" else "x%d" % rng.random())
                fd = p.desc.type_descriptor.field(f)
                at = heap._offset(p.binding) + fd.offset
                allowed.update(range(at & ~7, (at & ~7) + 8))
            txn.persist(p)
        txn.commit()
        log_lo = heap._offset(em.log)
        log_hi = log_lo + heap.object_size(em.log)
        diff = np.flatnonzero(img0 != np.frombuffer(dev.durable_image(), np.uint8))
        # new string payloads are fresh allocations above the old top
        diff = diff[((diff < log_lo) | (diff >= log_hi)) & (diff >= 64) & (diff < top0)]
        bad += not set(diff.tolist()) <= allowed
    heap.abandon()
    return bad


def test_07_transaction_atomicity(report):
    w = crashtest.TxnWorkload(commits=1000, sample=50)
    res = crashtest.sweep_txn(w)
    field_bad = _field_diff_violations()
    ok = res.ok and field_bad == 0
    report(7, ok, "commits=1000 sampled=50 crash_points=%d passed=%d failed=%d field_diff_violations=%d/200"
           % (res.points, res.passed, len(res.failures), field_bad))


# 8. dedup / copy-on-write

def test_08_dedup_and_cow(report):
    reg = pjo.EntityRegistry()
    phone_d = pjo.EntityDescriptor("acc.Phone", [("id", "q"), ("number", "str")])
    owner_d = pjo.EntityDescriptor("acc.Owner", [("id", "q"), ("name", "str"), ("phones", "list:acc.Phone"),
                                                 ("best", "ref:acc.Phone"), ("age", "i")])
    reg.register(phone_d, owner_d)
    Phone, Owner = pjo.enhance(phone_d, reg), pjo.enhance(owner_d, reg)
    heap = Heap.format(create_device(16 << 20))
    em = pjo.EntityManager(heap, registry=reg)
    owners = []
    txn = em.begin()
    for i in range(500):
        phones = [Phone(id=10 * i + k, number="555-%05d" % (10 * i + k)) for k in range(2)]
        o = Owner(id=i, name="owner%d" % i, phones=phones, best=phones[0], age=i % 90)
        owners.append(o)
        txn.persist(o)
    txn.commit()
    everyone = owners + [p for o in owners for p in o.get("phones")]
    good = 0
    for e in everyone:
        ok = em.find(type("F", (), {"descriptor": e.desc}), e.key) is e
        for f, (kind, _) in e.desc.kinds.items():
            if kind in ("str", "list"):
                ok = ok and e.field_ref(f) is heap.get_field(e.binding, f) and e._values[f] in (None, [])
            elif kind == "ref":
                t = e.get(f)
                ok = ok and t is not None and t.binding is heap.get_field(e.binding, f)
        good += ok
    # copy-on-write: writes after commit leave the durable image alone
    dev = heap.device
    dev.flush_all()
    dev.fence()
    img = dev.durable_image()
    for o in owners:
        o.set("name", "renamed")
        o.set("age", 1)
        o.set("phones", [])
    unchanged = dev.durable_image() == img and not dev.is_dirty()
    txn = em.begin()
    for o in owners:
        txn.persist(o)
    txn.commit()
    after = Heap.open(PersistentDevice.from_image(dev.durable_image()), deny_hint=True)
    em2 = pjo.EntityManager(after, registry=reg)
    landed = all(em2.find(Owner, i).get("name") == "renamed" for i in range(0, 500, 37))
    after.abandon()
    heap.abandon()
    total = len(everyone)
    ok = good == total and unchanged and landed
    report(8, ok, "identity=%d/%d (%.0f%%) durable_unchanged_before_commit=%s next_commit_durable=%s"
           % (good, total, 100.0 * good / total, unchanged, landed))


# 9. alias type check

def test_09_alias_cast(report):
    rng = random.Random(9)
    fmts = ["b", "B", "h", "H", "i", "I", "q", "Q", "f", "d", "?", "ref", "24s"]
    heap = Heap.format(create_device(4 << 20))
    vol = companion()
    spurious = 0
    checks = 0
    made = []
    for t in range(200):
        fields = [("f%d" % k, rng.choice(fmts)) for k in range(rng.randint(1, 10))]
        d = TypeDescriptor.define("acc.T%d" % t, fields)
        v, p = vol.allocate(d), heap.allocate(d)
        made.append((d.logical_name, v, p))
    for name, v, p in made:
        dv, dp = descriptor_of(v), descriptor_of(p)
        for cond in (is_instance_of(v, name), is_instance_of(p, name), alias_of(dv, dp), alias_of(dp, dv),
                     dv.space == VOLATILE, dp.space == PERSISTENT):
            checks += 1
            spurious += not cond
        other, ov, op = made[rng.randrange(len(made))]
        if other != name:
            for cond in (not is_instance_of(v, other), not is_instance_of(p, other),
                         not alias_of(dp, descriptor_of(ov))):
                checks += 1
                spurious += not cond
    heap.abandon()
    report(9, spurious == 0, "types=200 checks=%d spurious_type_errors=%d" % (checks, spurious))


# 10. 8-byte flush rule

def test_10_flush_atomicity_rule(report):
    rng = random.Random(10)
    heap = Heap.format(create_device(8 << 20), klass_segment_size=1 << 20)
    wide_cases = rejected = narrow_cases = narrow_ok = 0
    objects = one_fence = 0
    try:
        for t in range(300):
            fields = []
            for k in range(rng.randint(1, 64)):
                if rng.random() < 0.3:
                    fields.append(("w%d" % k, "%ds" % rng.randint(9, 64)))
                else:
                    fields.append(("n%d" % k, rng.choice(["B", "h", "i", "q", "d", "ref", "%ds" % rng.randint(1, 8)])))
            d = TypeDescriptor.define("acc.F%d" % t, fields)
            r = heap.allocate(d)
            for f in d.fields:
                if f.width > 8:
                    wide_cases += 1
                    try:
                        heap.flush_scalar(r, f.name)
                    except TooWide:
                        rejected += 1
                else:
                    narrow_cases += 1
                    heap.flush_scalar(r, f.name)
                    narrow_ok += 1
            for f in d.fields:
                if f.fmt.endswith("s"):
                    heap.set_field(r, f.name, bytes([rng.randrange(256)]) * f.width)
                elif f.fmt != "ref":
                    heap.set_field(r, f.name, 1)
            n = heap.device.persist_point_count()
            heap.flush_object(r)
            objects += 1
            one_fence += heap.device.persist_point_count() - n == 1
    finally:
        heap.abandon()
    ok = wide_cases > 0 and rejected == wide_cases and narrow_ok == narrow_cases and one_fence == objects
    report(10, ok, "wide_fields_rejected=%d/%d narrow_accepted=%d/%d flush_object_single_fence=%d/%d"
           % (rejected, wide_cases, narrow_ok, narrow_cases, one_fence, objects))


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-v"]))
