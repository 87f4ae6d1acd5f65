"""Crash sweeps: run a workload, then crash at every persist point in turn.

A sweep runs the workload's setup (not swept), records the line set committed
by every fence of the swept phase, and then rebuilds the durable image at each
point 0..N.  Every image is loaded (which runs recovery), validated, and
checked against the workload's own oracle built from the uninterrupted run.
"""

import hashlib
import random
import struct
import time
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from . import gc
from . import pjo
from .device import LINE, PersistentDevice, create_device, iter_crash_images
from .heap import Heap
from .klass import TypeDescriptor
from .validate import validate_heap

_U64 = struct.Struct("<Q")


# graph oracles

def traverse(heap):
    """Root-order BFS records ``(type, payload, edges)`` with edges as visit ids.

    The payload is the object's bytes with the timestamp and every reference
    word zeroed, so the record is independent of addresses and GC epochs.
    """
    mem = heap.device._cur
    base = heap.base
    hi = base + heap.meta.heap_size
    ids = {}
    out = []
    queue = deque()

    def ident(w):
        if not w:
            return None
        if not base <= w < hi:
            return ("foreign", w)
        i = ids.get(w)
        if i is None:
            i = ids[w] = len(ids)
            queue.append(w)
        return i

    for name in sorted(heap._roots):
        rid = ident(heap.device.read_u64(heap._slot_off(heap._roots[name]) + 56))
        out.append(("root", name, rid))
        while queue:
            w = queue.popleft()
            off = w - base
            desc = heap.desc_at(off)
            size = heap.size_at(off, desc)
            payload = bytearray(mem[off:off + size])
            payload[8:16] = bytes(8)
            edges = []
            for at in heap.ref_slots(0, desc, size):
                edges.append(ident(_U64.unpack_from(payload, at)[0]))
                payload[at:at + 8] = bytes(8)
            payload[0:8] = bytes(8)
            out.append((desc.logical_name, bytes(payload), tuple(edges)))
    return out


def graph_signature(heap):
    h = hashlib.sha256()
    for rec in traverse(heap):
        h.update(repr(rec).encode())
    return h.hexdigest()


def reachable(heap, addresses):
    """Heap offsets and sizes of everything reachable from ``addresses``."""
    base = heap.base
    hi = base + heap.meta.heap_size
    seen = {}
    stack = [a for a in addresses if a and base <= a < hi]
    mem = heap.device._cur
    while stack:
        a = stack.pop()
        off = a - base
        if off in seen:
            continue
        desc = heap.desc_at(off)
        size = heap.size_at(off, desc)
        seen[off] = size
        for at in heap.ref_slots(off, desc, size):
            w = _U64.unpack_from(mem, at)[0]
            if w and base <= w < hi and w - base not in seen:
                stack.append(w)
    return seen


# harness

@dataclass
class SweepResult:
    workload: str
    points: int = 0
    passed: int = 0
    failures: list = field(default_factory=list)
    seconds: float = 0.0
    checked: list = field(default_factory=list)
    total: int = 0

    @property
    def ok(self):
        return self.points > 0 and self.passed == self.points

    def lines(self):
        out = ["workload=%s points=%d passed=%d failed=%d seconds=%.2f" % (
            self.workload, self.points, self.passed, len(self.failures), self.seconds)]
        out += ["point=%d fail=%s" % f for f in self.failures]
        return out


class Workload:
    """Base class.  ``setup`` is not swept; ``run`` is."""

    name = "?"
    heap_size = 1 << 20
    # the verdict depends only on the recovered image, so identical images
    # (very common: most points recover to the same final heap) share one
    pure = False

    def __init__(self, seed=0):
        self.rng = random.Random(seed)
        self.origin = 0

    def now(self, dev):
        """Persist points since the swept phase began."""
        return dev.persist_point_count() - self.origin

    def setup(self, heap):
        pass

    def run(self, heap):
        raise NotImplementedError

    def capture(self, heap):
        """Build the oracle from the uninterrupted run (heap still open)."""

    def check(self, heap, point, fence_lines, touched_lines):
        """Return None if the recovered heap is acceptable, else a reason."""
        return None


def _touched(dev):
    lines = set(dev._dirty) | set(dev._pending)
    for pend in dev.history or ():
        lines.update(pend)
    return lines


def sweep(workload, points=None, stop_on_failure=False, validate=True):
    """Crash ``workload`` at every persist point (or the given subset).

    ``points`` may also be a callable mapping the number of persist points in
    the run to the subset to check.
    """
    t0 = time.perf_counter()
    res = SweepResult(workload.name)
    dev = create_device(workload.heap_size)
    heap = Heap.format(dev)
    workload.setup(heap)
    dev.flush_all()
    dev.fence()
    base = dev.start_recording()
    workload.origin = dev.persist_point_count()
    workload.run(heap)
    history = dev.history
    dev.history = None
    workload.capture(heap)
    heap.abandon()
    res.total = len(history) + 1
    if callable(points):
        points = points(len(history))
    wanted = None if points is None else set(points)
    for p, img in iter_crash_images(base, history):
        if wanted is not None and p not in wanted:
            continue
        res.points += 1
        res.checked.append(p)
        reason = _check_point(workload, img, p, history[p - 1] if p else {}, validate)
        if reason is None:
            res.passed += 1
        else:
            res.failures.append((p, reason))
            if stop_on_failure:
                break
    res.seconds = time.perf_counter() - t0
    return res


def _check_point(workload, img, p, fence_lines, validate):
    workload.image = img
    # one device per workload, reset for each image
    dev = workload.__dict__.get("_device")
    if dev is None or dev.capacity != len(img):
        dev = workload._device = PersistentDevice.from_image(img)
    else:
        dev.reload(img)
    dev.history = []
    try:
        heap = Heap.open(dev)
    except Exception as exc:  # noqa: BLE001 - any load failure is a failed point
        return "load: %s: %s" % (type(exc).__name__, exc)
    key = None
    if workload.pure:
        end = min(heap.meta.top + LINE, len(dev._cur))
        key = (hashlib.sha256(memoryview(dev._cur)[:end]).digest(), heap.recovered)
        memo = workload.__dict__.setdefault("_memo", {})
        if key in memo:
            heap.abandon()
            return memo[key]
    try:
        touched = _touched(dev)
        dev.history = None
        verdict = _verdict(workload, heap, p, fence_lines, touched, validate)
    except Exception as exc:  # noqa: BLE001
        verdict = "check: %s: %s" % (type(exc).__name__, exc)
    finally:
        heap.abandon()
    if key is not None:
        memo[key] = verdict
    return verdict


def _verdict(workload, heap, p, fence_lines, touched, validate):
    if validate:
        rep = validate_heap(heap, hint=workload.__dict__.get("_walk"))
        workload._walk = rep.walk
        if not rep.ok:
            return "validate: " + "; ".join(rep.errors[:3])
    return workload.check(heap, p, fence_lines, touched)


# workloads

def _types(count, refs=2, scalars=2):
    out = []
    for t in range(count):
        fields = [("s%d" % i, "q") for i in range(scalars + t % 2)]
        fields += [("r%d" % i, "ref") for i in range(refs)]
        out.append(TypeDescriptor.define("T%d" % t, fields))
    return out


class AllocWorkload(Workload):
    """Allocate objects with random references to earlier ones, binding roots
    along the way.  Oracle: every object reachable from a root whose binding
    was durable before the crash is byte-identical to the uninterrupted run."""

    def __init__(self, objects=1000, types=3, roots=10, seed=0, heap_size=None):
        super().__init__(seed)
        self.name = "alloc%s" % (objects if objects % 1000 else "%dk" % (objects // 1000))
        self.objects = objects
        self.ntypes = types
        self.nroots = roots
        self.heap_size = heap_size or max(1 << 20, 1 << (objects * 64).bit_length())
        self.events = []

    def setup(self, heap):
        self.types = _types(self.ntypes)
        for t in self.types:
            heap.register_type(t)

    def run(self, heap):
        rng = self.rng
        refs = []
        every = max(1, self.objects // self.nroots)
        dev = heap.device
        for i in range(self.objects):
            t = self.types[rng.randrange(len(self.types))]
            r = heap.allocate(t)
            for f in t.fields:
                if f.fmt == "ref":
                    if refs and rng.random() < 0.7:
                        heap.set_field(r, f.name, refs[rng.randrange(len(refs))])
                else:
                    heap.set_field(r, f.name, rng.getrandbits(63))
            heap.flush_object(r)
            refs.append(r)
            if (i + 1) % every == 0 and len(self.events) < self.nroots:
                name = "root%d" % len(self.events)
                heap.set_root(name, r)
                self.events.append((name, r.address, self.now(dev)))
        self.refs = refs

    def capture(self, heap):
        img = heap.device.durable_image()
        self.final = np.frombuffer(img, np.uint8)
        self.base = heap.base
        self.event_masks = []
        for name, addr, t in self.events:
            spans = reachable(heap, [addr])
            mask = np.zeros(len(img), bool)
            for off, size in spans.items():
                mask[off:off + size] = True
            self.event_masks.append((name, addr, t, mask))
        self.protected = np.zeros(len(img), bool)
        self.refs = None

    def check(self, heap, point, fence_lines, touched):
        if point == 0:
            self.protected[:] = False
        img = np.frombuffer(self.image, np.uint8)
        cur = np.frombuffer(heap.device._cur, np.uint8)
        # crash images grow by one fence at a time, so protected bytes of the
        # raw image only need rechecking on the lines this fence committed
        for name, addr, t, mask in self.event_masks:
            if t > point:
                break
            if t == point:
                self.protected |= mask
                if not np.array_equal(img[mask], self.final[mask]):
                    return "closure of %s differs" % name
            got = heap.get_root(name)
            if got is None or got.address - heap.base != addr - self.base:
                return "root %s lost" % name
        for lines, data in ((fence_lines, img), (touched, cur)):
            for line in lines:
                sl = slice(line * LINE, (line + 1) * LINE)
                m = self.protected[sl]
                if m.any() and not np.array_equal(data[sl][m], self.final[sl][m]):
                    return "protected bytes changed in line %d" % line
        return None


class RootsWorkload(Workload):
    """Rebind a few roots repeatedly; a root must read as old or new value."""

    name = "roots"

    def setup(self, heap):
        t = TypeDescriptor.define("Box", [("v", "q")])
        self.objs = []
        for i in range(8):
            r = heap.new(t, v=i)
            heap.flush_object(r)
            self.objs.append(r.address)
        self.objs_refs = [heap.ref(a) for a in self.objs]

    def run(self, heap):
        self.trace = []
        dev = heap.device
        for k in range(24):
            name = "r%d" % (k % 3)
            a = self.objs_refs[self.rng.randrange(len(self.objs_refs))]
            heap.set_root(name, a)
            self.trace.append((self.now(dev), name, a.address))

    def check(self, heap, point, fence_lines, touched):
        expect = {}
        for t, name, addr in self.trace:
            if t <= point:
                expect[name] = addr
        for name, addr in expect.items():
            got = heap.get_root(name)
            if got is None or got.address != addr:
                return "root %s = %r, expected %#x" % (name, got, addr)
        for name in ("r0", "r1", "r2"):
            if name not in expect and name in heap._roots:
                got = heap.get_root(name)
                if got is not None and got.address not in self.objs:
                    return "root %s points at a stranger" % name
        return None


class GCWorkload(Workload):
    """Random graph with a garbage fraction, then one full collection.

    Oracle: the recovered heap has the same root-order traversal signature
    as the uninterrupted collection."""

    pure = True

    def __init__(self, objects=5000, garbage=0.4, roots=8, arrays=0.05, seed=0, heap_size=None):
        super().__init__(seed)
        self.name = "gc%s" % (objects if objects % 1000 else "%dk" % (objects // 1000))
        self.objects = objects
        self.garbage = garbage
        self.nroots = roots
        self.arrays = arrays
        self.heap_size = heap_size or max(1 << 20, 1 << (objects * 96).bit_length())

    def run(self, heap):
        gc.collect(heap)

    def setup(self, heap):
        build_garbage_graph(heap, self.objects, self.garbage, self.nroots, self.rng, self.arrays)
        self.top_before = heap.meta.top

    def capture(self, heap):
        self.signature = graph_signature(heap)
        self.top = heap.meta.top

    def check(self, heap, point, fence_lines, touched):
        # before the flag is durable the cycle simply never happened
        if heap.meta.top != self.top and not (heap.meta.top == self.top_before and not heap.recovered):
            return "top %#x != %#x" % (heap.meta.top, self.top)
        if graph_signature(heap) != self.signature:
            return "graph differs"
        return None


def build_garbage_graph(heap, objects, garbage, nroots, rng, arrays=0.05):
    """Allocate ``objects`` nodes; about ``garbage`` of them end up unreachable.

    Live nodes only point at live nodes; garbage nodes point anywhere.  Roots
    are a handful of live nodes chained so every live node is reachable.
    Returns the live node count.
    """
    node = TypeDescriptor.define("GNode", [("key", "q"), ("a", "ref"), ("b", "ref"), ("pad", "q")])
    arr = TypeDescriptor.define_array("GNode[]", "ref")
    blob = TypeDescriptor.define_array("bytes", "B")
    live = []
    dead = []
    for i in range(objects):
        is_live = rng.random() >= garbage
        roll = rng.random()
        pool = live if is_live else live + dead
        if roll < arrays:
            n = rng.randrange(0, 12)
            r = heap.allocate(arr, n)
            for k in range(n):
                if pool and rng.random() < 0.8:
                    heap.set_element(r, k, pool[rng.randrange(len(pool))])
        elif roll < arrays * 1.5:
            n = rng.randrange(0, 300)
            r = heap.allocate(blob, n)
            heap.write_elements(r, [rng.randrange(256) for _ in range(n)])
        else:
            r = heap.new(node, key=i, pad=rng.getrandbits(32))
            if pool:
                heap.set_field(r, "a", pool[rng.randrange(len(pool))])
            if pool and rng.random() < 0.5:
                heap.set_field(r, "b", pool[rng.randrange(len(pool))])
        (live if is_live else dead).append(r)
    # chain live nodes under the roots so each one is reachable
    hub = heap.allocate(arr, len(live))
    heap.write_elements(hub, live)
    groups = [hub] + live[:max(0, nroots - 1)]
    for k, r in enumerate(groups):
        heap.set_root("g%d" % k, r)
    heap.device.flush_all()
    heap.device.fence()
    return len(live) + 1


class RemapWorkload(Workload):
    """Relocate the heap; every crash point must reload to the same graph."""

    name = "remap"
    pure = True

    def setup(self, heap):
        build_garbage_graph(heap, 600, 0.0, 3, self.rng)

    def run(self, heap):
        from .refs import address_space
        target = address_space.find_free(heap.meta.heap_size, [(heap.base, heap.meta.heap_size)])
        heap.remap(target)

    def capture(self, heap):
        self.signature = graph_signature(heap)

    def check(self, heap, point, fence_lines, touched):
        if graph_signature(heap) != self.signature:
            return "graph differs"
        return None


class CreateWorkload(Workload):
    """Format plus type registration; each prefix must be loadable or blank."""

    name = "create"

    def check(self, heap, point, fence_lines, touched):
        return None


def sweep_create():
    """Crash inside formatting itself (the base image is all zeros)."""
    t0 = time.perf_counter()
    res = SweepResult("create")
    dev = create_device(1 << 20)
    base = dev.start_recording()
    heap = Heap.format(dev)
    for t in _types(4):
        heap.register_type(t)
    history = dev.history
    heap.abandon()
    res.total = len(history) + 1
    for p, img in iter_crash_images(base, history):
        res.points += 1
        res.checked.append(p)
        d = PersistentDevice.from_image(img)
        if not any(img[:8]):
            res.passed += 1  # nothing durable yet: not a heap, and never registered
            continue
        try:
            h = Heap.open(d)
        except Exception as exc:  # noqa: BLE001
            res.failures.append((p, "load: %s" % exc))
            continue
        rep = validate_heap(h) if len(h._klass_slots) >= 2 else None
        if rep is not None and not rep.ok:
            res.failures.append((p, "; ".join(rep.errors[:2])))
        elif h.meta.top != h.meta.data_heap_location:
            res.failures.append((p, "top moved"))
        else:
            res.passed += 1
        h.abandon()
    res.seconds = time.perf_counter() - t0
    return res


class TxnWorkload(Workload):
    """PJO commits (a JPAB Basic analog).  Oracle: after recovery the logical
    entity state equals the state just before or just after the transaction
    the crash interrupted."""

    name = "txn"

    def __init__(self, commits=100, sample=None, seed=0, entities=50):
        super().__init__(seed)
        self.commits = commits
        self.sample = sample
        self.entities = entities
        self.heap_size = 4 << 20

    def setup(self, heap):
        self.registry = pjo.EntityRegistry()
        self.Person = pjo.enhance(pjo.EntityDescriptor(
            "BasicPerson", [("id", "q"), ("first", "str"), ("last", "str"), ("age", "i"),
                            ("score", "d")]), self.registry)
        self.em = pjo.EntityManager(heap, registry=self.registry)

    def run(self, heap):
        rng = self.rng
        dev = heap.device
        em = self.em
        people = {}
        self.states = [pjo.dump_entities(heap)]
        self.bounds = [self.now(dev)]
        for c in range(self.commits):
            txn = em.begin()
            op = rng.random()
            if op < 0.4 or len(people) < 3:
                for _ in range(rng.randint(1, 3)):
                    k = len(people) + 1000 * c
                    p = self.Person(id=k, first="f%d" % k, last="l%d" % rng.randrange(99),
                                    age=rng.randrange(90), score=rng.random())
                    txn.persist(p)
                    people[k] = p
            elif op < 0.85:
                for p in rng.sample(list(people.values()), min(len(people), rng.randint(1, 3))):
                    if rng.random() < 0.5:
                        p.set("age", rng.randrange(90))
                    else:
                        p.set("last", "x%d" % rng.randrange(1000))
                    txn.persist(p)
            else:
                victim = people.pop(rng.choice(list(people)))
                txn.remove(victim)
            txn.commit()
            self.states.append(pjo.dump_entities(heap))
            self.bounds.append(self.now(dev))

    def points(self):
        """Persist points inside the sampled commits (all if no sample)."""
        idx = range(1, len(self.bounds))
        if self.sample is not None and self.sample < len(idx):
            idx = sorted(random.Random(1).sample(list(idx), self.sample))
        out = []
        for i in idx:
            out.extend(range(self.bounds[i - 1] + 1, self.bounds[i] + 1))
        return out

    def check(self, heap, point, fence_lines, touched):
        # commit i spans (bounds[i-1], bounds[i]]
        i = int(np.searchsorted(self.bounds, point, side="left"))
        got = pjo.dump_entities(heap)
        before = self.states[max(i - 1, 0)]
        after = self.states[min(i, len(self.states) - 1)]
        if got == after or got == before:
            return None
        return "state is neither before nor after commit %d" % i


def sweep_txn(workload, validate=True):
    """Sweep only the persist points of the sampled commits."""
    t0 = time.perf_counter()
    res = SweepResult(workload.name)
    dev = create_device(workload.heap_size)
    heap = Heap.format(dev)
    workload.setup(heap)
    dev.flush_all()
    dev.fence()
    base = dev.start_recording()
    workload.origin = dev.persist_point_count()
    workload.run(heap)
    history = dev.history
    dev.history = None
    heap.abandon()
    wanted = set(workload.points())
    res.total = len(history) + 1
    for p, img in iter_crash_images(base, history):
        if p not in wanted:
            continue
        res.points += 1
        res.checked.append(p)
        reason = _check_point(workload, img, p, history[p - 1] if p else {}, validate)
        if reason is None:
            res.passed += 1
        else:
            res.failures.append((p, reason))
    res.seconds = time.perf_counter() - t0
    return res


def make_workload(name, seed=0):
    """Workload by CLI name: alloc1k, alloc10k, allocN, roots, gc5k, gcN, remap, txn."""
    if name.startswith("alloc"):
        n = _count(name[5:], 1000)
        return AllocWorkload(objects=n, types=5 if n >= 10000 else 3, seed=seed)
    if name.startswith("gc"):
        return GCWorkload(objects=_count(name[2:], 5000), seed=seed)
    if name == "roots":
        return RootsWorkload(seed)
    if name == "remap":
        return RemapWorkload(seed)
    if name == "txn":
        return TxnWorkload(seed=seed)
    if name == "create":
        return CreateWorkload(seed)
    raise KeyError("unknown workload %r" % name)


def _count(text, default):
    if not text:
        return default
    text = text.lower()
    if text.endswith("k"):
        return int(text[:-1]) * 1000
    return int(text)


def run_sweep(name, seed=0):
    w = make_workload(name, seed)
    if name == "create":
        return sweep_create()
    if isinstance(w, TxnWorkload):
        return sweep_txn(w)
    return sweep(w)


WORKLOADS = ("create", "alloc1k", "alloc10k", "roots", "gc1k", "gc5k", "remap", "txn")
