import random

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import reopen
from oracles import canon, naive_summary, reachable
from pjheap import gc
from pjheap import layout as L
from pjheap.crashtest import GCWorkload, build_garbage_graph, graph_signature, sweep
from pjheap.device import PersistentDevice, create_device
from pjheap.errors import CorruptImage, GCInProgress, InjectedCrash
from pjheap.heap import Heap
from pjheap.klass import TypeDescriptor
from pjheap.validate import validate_heap

NODE = TypeDescriptor.define("Node", [("value", "q"), ("next", "ref")])
PAIR = TypeDescriptor.define("Pair", [("a", "ref"), ("b", "ref"), ("k", "q")])
REFS = TypeDescriptor.define_array("Node[]", "ref")


# summary

def random_bitmap(rng, words, density=0.3, max_len=40):
    bm = gc.MarkBitmap.empty(words)
    w = 0
    while w < words:
        n = rng.randint(2, max_len)
        if w + n > words:
            break
        if rng.random() < density:
            bm.set(w, n)
        w += n + rng.randint(0, 3)
    return bm


@settings(max_examples=200, deadline=None)
@given(st.integers(0, 2 ** 32), st.floats(0, 1))
def test_summary_matches_naive(seed, density):
    rng = random.Random(seed)
    geom = gc.Geometry(4096, 4096 + 16 * 512, 512)
    bm = random_bitmap(rng, geom.words, density)
    s = gc.summarize(bm, geom)
    src, dest, size = naive_summary(bm.begin, bm.end, geom.data_start)
    assert s.src.tolist() == src and s.dest.tolist() == dest and s.size.tolist() == size
    assert s.new_top == geom.data_start + sum(size)
    for r in range(geom.region_count):
        lo, hi = s.region_objects(r)
        for k in range(lo, hi):
            assert (s.src[k] - geom.data_start) // geom.region_size == r
    assert s.to_bytes() == gc.summarize(bm, geom).to_bytes()


def test_summary_roundtrip_through_packed_bits():
    rng = random.Random(3)
    geom = gc.Geometry(0, 8 * 4096, 4096)
    bm = random_bitmap(rng, geom.words)
    b, e = bm.packed()
    again = gc.MarkBitmap.unpack(b, e, geom.words)
    assert gc.summarize(again, geom).to_bytes() == gc.summarize(bm, geom).to_bytes()


def test_summary_rejects_unpaired_bits():
    geom = gc.Geometry(0, 4096, 4096)
    bm = gc.MarkBitmap.empty(geom.words)
    bm.begin[3] = True
    with pytest.raises(CorruptImage):
        gc.summarize(bm, geom)
    bm.end[1] = True
    with pytest.raises(CorruptImage):
        gc.summarize(bm, geom)


def test_summary_empty():
    geom = gc.Geometry(64, 64 + 4096, 4096)
    s = gc.summarize(gc.MarkBitmap.empty(geom.words), geom)
    assert len(s) == 0 and s.new_top == 64


# mark

def _random_graph(h, n, edges, rng, roots=3):
    nodes = []
    for i in range(n):
        if rng.random() < 0.1:
            nodes.append(h.allocate(REFS, rng.randrange(4)))
        else:
            nodes.append(h.new(PAIR, k=i))
    for _ in range(edges):
        a, b = rng.choice(nodes), rng.choice(nodes + [None])
        d = h.descriptor_of(a)
        if d.is_array:
            if h.array_length(a):
                h.set_element(a, rng.randrange(h.array_length(a)), b)
        else:
            h.set_field(a, rng.choice("ab"), b)
    for k in range(roots):
        h.set_root("r%d" % k, rng.choice(nodes + [None]))
    return nodes


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2 ** 32), st.integers(1, 300), st.floats(0, 3))
def test_mark_matches_bfs(seed, n, fanout):
    rng = random.Random(seed)
    h = Heap.format(create_device(1 << 20))
    try:
        _random_graph(h, n, int(n * fanout), rng)
        roots = [r.address for r in h.roots().values() if r is not None]
        bm = gc.mark(h, roots, persist=False)
        marked = {h.meta.data_heap_location + 8 * int(w) for w in np.flatnonzero(bm.begin)}
        assert marked == reachable(h)
    finally:
        h.abandon()


def test_mark_persists_bitmaps(heap):
    a = heap.new(NODE, value=1)
    heap.set_root("a", a)
    heap.new(NODE, value=2)  # garbage
    bm = gc.mark(heap, [a.address])
    assert bm.count() == 1
    back = gc.read_mark_bitmap(heap)
    assert np.array_equal(back.begin, bm.begin) and np.array_equal(back.end, bm.end)


# collect

def test_collect_no_garbage(heap):
    rng = random.Random(0)
    build_garbage_graph(heap, 200, 0.0, 3, rng)
    shape, top = canon(heap), heap.meta.top
    st_ = gc.collect(heap)
    assert st_.reclaimed_bytes == 0 and st_.moved_objects == 0
    assert heap.meta.top == top
    assert canon(heap) == shape


def test_collect_all_garbage(heap):
    for i in range(100):
        heap.new(NODE, value=i)
    st_ = gc.collect(heap, extra_roots=())
    assert heap.meta.top == heap.meta.data_heap_location
    assert st_.live_objects == 0
    assert heap.object_count() == 0


def test_collect_preserves_graph_and_handles(heap):
    rng = random.Random(5)
    _random_graph(heap, 400, 700, rng)
    shape = canon(heap)
    held = heap.new(NODE, value=77)  # only a live handle keeps this one
    st_ = gc.collect(heap)
    assert canon(heap) == shape
    assert heap.get_field(held, "value") == 77
    assert validate_heap(heap).ok
    assert st_.fences_issued > 0 and st_.pause_ns > 0
    h = reopen(heap)
    assert canon(h) == shape
    h.abandon()


def test_collect_advances_epoch_and_stamps_moved(heap):
    junk = heap.new(NODE, value=0)
    keep = heap.new(NODE, value=1)
    heap.set_root("k", keep)
    del junk
    ts = heap.meta.global_timestamp
    gc.collect(heap)
    assert heap.meta.global_timestamp == ts + 1
    off = keep.address - heap.base
    assert off == heap.meta.data_heap_location
    assert heap.device.read_u64(off + 8) == ts + 1
    assert not heap.meta.gc_in_progress
    assert heap.device.read_u64(L.OFF_GC_FLAG) == 0


def test_collect_without_fences_same_result(make_heap):
    shapes = []
    for persist in (True, False):
        h = make_heap(2 << 20)
        build_garbage_graph(h, 1500, 0.4, 4, random.Random(9))
        n = h.device.persist_point_count()
        st_ = gc.collect(h, persist=persist)
        if not persist:
            assert h.device.persist_point_count() == n and st_.fences_issued == 0
        shapes.append(graph_signature(h))
    assert shapes[0] == shapes[1]


@pytest.mark.parametrize("workers", [2, 4])
def test_parallel_matches_serial(make_heap, workers):
    sigs = []
    for w in (1, workers):
        h = make_heap(2 << 20)
        build_garbage_graph(h, 3000, 0.4, 4, random.Random(11))
        st_ = gc.collect(h, workers=w)
        assert validate_heap(h).ok
        assert len(st_.region_workers) == h.meta.region_count
        sigs.append(graph_signature(h))
    assert sigs[0] == sigs[1]


def test_collect_blocked(heap):
    heap.gc_blockers = 1
    with pytest.raises(GCInProgress):
        gc.collect(heap)
    heap.gc_blockers = 0
    heap.meta.gc_in_progress = 1
    with pytest.raises(GCInProgress):
        gc.collect(heap)
    heap.meta.gc_in_progress = 0


def test_compact_region_idempotent(heap):
    build_garbage_graph(heap, 800, 0.5, 2, random.Random(2))
    roots = gc._root_addresses(heap, ())
    bm = gc.mark(heap, roots)
    s = gc.summarize(bm, gc.Geometry.of(heap))
    first = [gc.compact_region(heap, s, r) for r in range(heap.meta.region_count)]
    assert sum(first) > 0
    again = [gc.compact_region(heap, s, r) for r in range(heap.meta.region_count)]
    assert sum(again) == 0


# recovery

def test_recover_without_flag_is_noop(heap):
    assert gc.recover(heap) is None


def _collect_image(objects=600, seed=1):
    h = Heap.format(create_device(1 << 20))
    build_garbage_graph(h, objects, 0.4, 4, random.Random(seed))
    h.device.start_recording()
    base = h.device.durable_image()
    gc.collect(h)
    sig = graph_signature(h)
    hist = list(h.device.history)
    h.abandon()
    return base, hist, sig


def test_recover_after_crash_mid_compaction():
    from pjheap.device import replay
    base, hist, sig = _collect_image()
    for k in (3, len(hist) // 3, len(hist) // 2, len(hist) - 3):
        h = Heap.open(PersistentDevice.from_image(bytes(replay(base, hist, k))))
        assert h.recovered
        assert graph_signature(h) == sig
        assert validate_heap(h).ok
        h.abandon()


@settings(max_examples=15, deadline=None)
@given(st.lists(st.integers(1, 10 ** 6), min_size=1, max_size=5), st.integers(0, 10 ** 6))
def test_recovery_survives_repeated_crashes(crash_points, first):
    from pjheap.device import replay
    base, hist, sig = _collect_image(300, seed=4)
    img = bytes(replay(base, hist, 2 + first % (len(hist) - 2)))
    for p in crash_points:
        dev = PersistentDevice.from_image(img)
        dev.crash_at_point = 1 + p % 200
        try:
            h = Heap.open(dev)
        except InjectedCrash as exc:
            img = exc.report.durable_snapshot
            continue
        h.abandon()
        break
    h = Heap.open(PersistentDevice.from_image(img))
    assert graph_signature(h) == sig
    assert not h.meta.gc_in_progress
    h.abandon()


def test_small_gc_sweep():
    res = sweep(GCWorkload(objects=300, seed=3))
    assert res.ok, res.lines()[:5]
    assert res.points == res.total
