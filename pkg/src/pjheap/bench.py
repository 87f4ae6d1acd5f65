"""Benchmarks.

Every suite returns a list of flat dict rows so the CLI can print them as
key=value lines or JSON.  Wall-clock numbers are machine-specific; the
``fences_issued`` column is not, and is what overhead comparisons should use.

micro  create/get/set over a tuple object, a scalar array and a small
       persistent hash map
load   heap-load time against object count for both safety levels
jpab   persist/retrieve/update/delete phases for four entity families
gc     one collection with persistence on and off over the same image
"""

import gc as gc_module
import random
import time

import numpy as np

from . import gc
from . import pjo
from .crashtest import graph_signature
from .device import PersistentDevice, create_device
from .heap import Heap, Safety
from .klass import TypeDescriptor

MiB = 1 << 20


def _clock():
    return time.perf_counter()


class _Phase:
    """Times a block and counts the fences issued inside it."""

    def __init__(self, device):
        self.device = device

    def __enter__(self):
        self.t0 = _clock()
        self.p0 = self.device.persist_point_count()
        return self

    def __exit__(self, *exc):
        self.seconds = _clock() - self.t0
        self.fences = self.device.persist_point_count() - self.p0
        return False


# micro

TUPLE = TypeDescriptor.define("bench.Tuple", [("a", "q"), ("b", "q"), ("c", "d")])
LONGS = TypeDescriptor.define_array("bench.long[]", "q")
ENTRY = TypeDescriptor.define("bench.Entry", [("key", "q"), ("value", "q"), ("next", "ref")])
BUCKETS = TypeDescriptor.define_array("bench.Entry[]", "ref")


class PMap:
    """Chained hash map of int -> int living entirely in the heap."""

    def __init__(self, heap, buckets=1024):
        self.heap = heap
        self.n = buckets
        self.table = heap.allocate(BUCKETS, buckets)
        heap.flush_object(self.table)

    def _find(self, key):
        h = self.heap
        e = h.get_element(self.table, key % self.n)
        while e is not None and h.get_field(e, "key") != key:
            e = h.get_field(e, "next")
        return e

    def put(self, key, value):
        h = self.heap
        e = self._find(key)
        if e is not None:
            h.set_field(e, "value", value)
            h.flush_scalar(e, "value")
            return
        e = h.allocate(ENTRY)
        h.set_field(e, "key", key)
        h.set_field(e, "value", value)
        h.set_field(e, "next", h.get_element(self.table, key % self.n))
        h.flush_object(e)
        # publishing the entry is the 8-byte atomic step
        h.set_element(self.table, key % self.n, e)
        h.flush_array_element(self.table, key % self.n)

    def get(self, key):
        e = self._find(key)
        return None if e is None else self.heap.get_field(e, "value")


def micro(ops=5000, seed=0):
    rng = random.Random(seed)
    dev = create_device(max(8 * MiB, ops * 512))
    heap = Heap.format(dev)
    rows = []

    def record(structure, op, ph):
        rows.append({"suite": "micro", "structure": structure, "op": op, "n": ops,
                     "seconds": round(ph.seconds, 6), "us_per_op": round(1e6 * ph.seconds / ops, 3),
                     "fences_issued": ph.fences})

    refs = []
    with _Phase(dev) as ph:
        for i in range(ops):
            r = heap.new(TUPLE, a=i, b=-i, c=i * 0.5)
            heap.flush_object(r)
            refs.append(r)
    record("tuple", "create", ph)
    with _Phase(dev) as ph:
        for r in refs:
            heap.get_field(r, "a") + heap.get_field(r, "b")
    record("tuple", "get", ph)
    with _Phase(dev) as ph:
        for r in refs:
            heap.set_field(r, "b", rng.randrange(1 << 30))
            heap.flush_scalar(r, "b")
    record("tuple", "set", ph)

    arrays = []
    with _Phase(dev) as ph:
        for i in range(ops):
            a = heap.allocate(LONGS, 8)
            heap.write_elements(a, range(i, i + 8))
            heap.flush_object(a)
            arrays.append(a)
    record("array", "create", ph)
    with _Phase(dev) as ph:
        for a in arrays:
            heap.get_element(a, 3)
    record("array", "get", ph)
    with _Phase(dev) as ph:
        for a in arrays:
            heap.set_element(a, 5, rng.randrange(1 << 30))
            heap.flush_array_element(a, 5)
    record("array", "set", ph)

    m = PMap(heap, max(16, ops // 4))
    keys = rng.sample(range(ops * 10), ops)
    with _Phase(dev) as ph:
        for k in keys:
            m.put(k, k)
    record("map", "create", ph)
    with _Phase(dev) as ph:
        for k in keys:
            m.get(k)
    record("map", "get", ph)
    with _Phase(dev) as ph:
        for k in keys:
            m.put(k, k + 1)
    record("map", "set", ph)
    heap.abandon()
    return rows


# load

def build_load_image(objects, types=20, seed=0):
    """Image holding ``objects`` objects of ``types`` Klasses chained by refs."""
    rng = random.Random(seed)
    descs = [TypeDescriptor.define("load.T%02d" % t, [("id", "q"), ("next", "ref")]
                                   + [("x%d" % i, "q") for i in range(t % 4)])
             for t in range(types)]
    per = max(d.instance_size for d in descs)
    size = max(4 * MiB, int(objects * per * 1.1) + 2 * MiB)
    dev = create_device(-(-size // (64 * 1024)) * 64 * 1024)
    heap = Heap.format(dev)
    prev = None
    for i in range(objects):
        r = heap.allocate(descs[rng.randrange(types)])
        heap.set_field(r, "id", i)
        if prev is not None:
            heap.set_field(r, "next", prev)
        prev = r
    if prev is not None:
        heap.set_root("load.last", prev)
    dev.flush_all()
    dev.fence()
    img = dev.durable_image()
    heap.abandon()
    return img


def time_load(image, safety, repeat=3):
    """Best-of-``repeat`` seconds for opening ``image`` (device setup excluded)."""
    best = None
    for _ in range(repeat):
        dev = PersistentDevice.from_image(image)
        was = gc_module.isenabled()
        gc_module.disable()  # as timeit does: keep collector pauses out of the sample
        try:
            t0 = _clock()
            heap = Heap.open(dev, safety=safety)
            dt = _clock() - t0
        finally:
            if was:
                gc_module.enable()
        heap.abandon()
        best = dt if best is None else min(best, dt)
    return best


def load(objects=(50_000, 100_000, 200_000, 400_000), types=20, repeat=3, seed=0):
    """Load times per (object count, safety level), best of ``repeat``.

    Repetitions are interleaved round-robin over all cells, so a slow spell
    on the host costs one sample of each cell rather than a whole cell.
    """
    images = [build_load_image(n, types, seed) for n in objects]
    cells = [(n, img, s) for n, img in zip(objects, images)
             for s in (Safety.USER_GUARANTEED, Safety.ZEROING)]
    best = [None] * len(cells)
    for _ in range(repeat):
        for i, (n, img, safety) in enumerate(cells):
            dt = time_load(img, safety, 1)
            best[i] = dt if best[i] is None else min(best[i], dt)
    return [{"suite": "load", "objects": n, "types": types, "safety": safety.value,
             "heap_bytes": len(img), "seconds": round(b, 6)}
            for (n, img, safety), b in zip(cells, best)]


def linear_fit(xs, ys):
    """Least-squares line; returns (slope, intercept, r_squared)."""
    x = np.asarray(xs, float)
    y = np.asarray(ys, float)
    slope, icept = np.polyfit(x, y, 1)
    resid = y - (slope * x + icept)
    ss_tot = float(((y - y.mean()) ** 2).sum())
    r2 = 1.0 - float((resid ** 2).sum()) / ss_tot if ss_tot else 1.0
    return float(slope), float(icept), r2


def load_summary(rows):
    """Trend numbers for the load suite: UG spread and Zeroing linearity."""
    ug = [r["seconds"] for r in rows if r["safety"] == "ug"]
    zx = [r["objects"] for r in rows if r["safety"] == "zero"]
    zy = [r["seconds"] for r in rows if r["safety"] == "zero"]
    slope, _, r2 = linear_fit(zx, zy)
    return {"suite": "load", "ug_spread": round(max(ug) / min(ug), 3),
            "zero_slope_us_per_object": round(slope * 1e6, 4), "zero_r2": round(r2, 4)}


# jpab

def _families(registry):
    person = pjo.EntityDescriptor("jpab.Person", [("id", "q"), ("first", "str"), ("last", "str"),
                                                  ("age", "i"), ("score", "d")])
    employee = pjo.EntityDescriptor("jpab.Employee", [("salary", "q"), ("dept", "str")], parent=person)
    phone = pjo.EntityDescriptor("jpab.Phone", [("id", "q"), ("number", "str")])
    owner = pjo.EntityDescriptor("jpab.Owner", [("id", "q"), ("name", "str"), ("phones", "list:jpab.Phone")])
    node = pjo.EntityDescriptor("jpab.Node", [("id", "q"), ("value", "q"), ("left", "ref:jpab.Node"),
                                              ("right", "ref:jpab.Node")])
    registry.register(person, employee, phone, owner, node)
    return {d.name: pjo.enhance(d, registry) for d in (person, employee, phone, owner, node)}


def _make(fam, test, i, rng, made):
    if test == "basic":
        return [fam["jpab.Person"](id=i, first="f%d" % i, last="l%d" % i, age=i % 90, score=rng.random())]
    if test == "ext":
        return [fam["jpab.Employee"](id=i, first="f%d" % i, last="l%d" % i, age=i % 90,
                                     score=rng.random(), salary=1000 + i, dept="d%d" % (i % 7))]
    if test == "collection":
        phones = [fam["jpab.Phone"](id=i * 8 + k, number="555-%04d" % (i * 8 + k)) for k in range(3)]
        return [fam["jpab.Owner"](id=i, name="o%d" % i, phones=phones)] + phones
    # node: a binary tree built in key order
    n = fam["jpab.Node"](id=i, value=i)
    if i:
        parent = made[(i - 1) // 2]
        parent.set("left" if i % 2 else "right", n)
    return [n]


_ROOT_TYPE = {"basic": "jpab.Person", "ext": "jpab.Employee", "collection": "jpab.Owner",
              "node": "jpab.Node"}


def jpab(objects=2000, batch=100, tests=("basic", "ext", "collection", "node"), seed=0):
    rows = []
    for test in tests:
        rng = random.Random(seed)
        registry = pjo.EntityRegistry()
        fam = _families(registry)
        dev = create_device(max(16 * MiB, objects * 4096))
        heap = Heap.format(dev)
        em = pjo.EntityManager(heap, "jpab", registry)
        made = []
        top_type = fam[_ROOT_TYPE[test]]

        def phase(name, ph):
            rows.append({"suite": "jpab", "test": test, "phase": name, "n": objects,
                         "seconds": round(ph.seconds, 6), "us_per_object": round(1e6 * ph.seconds / objects, 2),
                         "fences_issued": ph.fences})

        with _Phase(dev) as ph:
            for lo in range(0, objects, batch):
                txn = em.begin()
                for i in range(lo, min(objects, lo + batch)):
                    ents = _make(fam, test, i, rng, made)
                    made.append(ents[0])
                    for e in ents:
                        txn.persist(e)
                if test == "node":
                    for e in made[lo // 2:lo]:
                        txn.persist(e)
                txn.commit()
        phase("persist", ph)
        with _Phase(dev) as ph:
            for i in range(objects):
                e = em.find(top_type, i)
                e.get("id")
        phase("retrieve", ph)
        field = {"basic": "age", "ext": "salary", "collection": "name", "node": "value"}[test]
        with _Phase(dev) as ph:
            for lo in range(0, objects, batch):
                txn = em.begin()
                for i in range(lo, min(objects, lo + batch)):
                    e = em.find(top_type, i)
                    e.set(field, ("n%d" % i) if field == "name" else i + 1)
                    txn.persist(e)
                txn.commit()
        phase("update", ph)
        with _Phase(dev) as ph:
            for lo in range(0, objects, batch):
                txn = em.begin()
                for i in range(lo, min(objects, lo + batch)):
                    e = em.find(top_type, i)
                    if test == "node":
                        for side in ("left", "right"):
                            if e.get(side) is not None:
                                e.set(side, None)
                        txn.persist(e)
                    txn.remove(e)
                txn.commit()
        phase("delete", ph)
        heap.abandon()
    return rows


# gc

def build_gc_image(size=64 * MiB, fill=0.6, garbage=0.4, seed=0):
    """A heap of ``size`` bytes filled to about ``fill`` with a random graph
    of nodes each owning a byte blob; about ``garbage`` of it is unreachable."""
    rng = random.Random(seed)
    node = TypeDescriptor.define("gcb.Node", [("key", "q"), ("a", "ref"), ("b", "ref"), ("blob", "ref")])
    blob = TypeDescriptor.define_array("gcb.bytes", "B")
    dev = create_device(size)
    heap = Heap.format(dev)
    budget = int((size - heap.meta.data_heap_location) * fill)
    live = []
    roots = []
    while heap.meta.top - heap.meta.data_heap_location < budget:
        is_live = rng.random() >= garbage
        n = heap.allocate(node)
        b = heap.allocate(blob, rng.randrange(64, 1024))
        heap.set_field(n, "key", len(live))
        heap.set_field(n, "blob", b)
        pool = live if live else None
        if pool:
            heap.set_field(n, "a", pool[rng.randrange(len(pool))])
            if rng.random() < 0.5:
                heap.set_field(n, "b", pool[-1])
        if is_live:
            live.append(n)
            if len(live) % 5000 == 1:
                roots.append(n)
    # chain every live node to a root through "b" of the next live node
    for prev, cur in zip(live, live[1:]):
        heap.set_field(cur, "b", prev)
    heap.set_root("gcb.head", live[-1])
    dev.flush_all()
    dev.fence()
    img = dev.durable_image()
    heap.abandon()
    return img


def gc_overhead(size=64 * MiB, seed=0, image=None):
    """Collect the same image with and without flushes/fences."""
    img = image if image is not None else build_gc_image(size, seed=seed)
    out = {}
    sigs = {}
    for mode, persist in (("fenced", True), ("nofence", False)):
        heap = Heap.open(PersistentDevice.from_image(img))
        st = gc.collect(heap, persist=persist)
        sigs[mode] = graph_signature(heap)
        out[mode] = st
        heap.abandon()
    f, n = out["fenced"], out["nofence"]
    return {"suite": "gc", "heap_bytes": len(img), "live_bytes": f.live_bytes,
            "reclaimed_bytes": f.reclaimed_bytes, "regions": f.regions,
            "live_objects": f.live_objects, "moved_objects": f.moved_objects,
            "pause_ns_fenced": f.pause_ns, "pause_ns_nofence": n.pause_ns,
            "fences_issued": f.fences_issued, "fences_issued_nofence": n.fences_issued,
            "pause_ratio": round(f.pause_ns / max(n.pause_ns, 1), 4),
            "isomorphic": sigs["fenced"] == sigs["nofence"]}


SUITES = ("micro", "load", "jpab", "gc")


def run_suite(name, objects=None, types=20, seed=0, size=None):
    if name == "micro":
        return micro(objects or 5000, seed)
    if name == "load":
        counts = (50_000, 100_000, 200_000, 400_000) if objects is None else \
            tuple(int(objects * k) for k in (0.125, 0.25, 0.5, 1.0))
        rows = load(counts, types, seed=seed)
        return rows + [load_summary(rows)]
    if name == "jpab":
        return jpab(objects or 2000, seed=seed)
    if name == "gc":
        return [gc_overhead(size or 64 * MiB, seed=seed)]
    raise KeyError("unknown suite %r" % name)
