"""Crash-consistent region-based mark-compact collection and its recovery.

A cycle runs mark -> persist bitmaps -> flag + new epoch -> summary ->
compaction -> finalization.  The summary is a pure function of the persisted
begin/end mark bitmaps, so recovery simply recomputes it.  Compaction slides
live objects toward the start of the data heap, one region at a time, in
ascending address order.  For each object that moves:

1. the raw bytes are copied to the destination and their references are
   rewritten there (the original stays untouched and serves as the undo log),
   then the copy is persisted;
2. the copy's timestamp is set to the current epoch and persisted;
3. the original's timestamp and the region's progress cursor are persisted.

The cursor, not the timestamps, decides what recovery redoes: a header read
at a destination can be a stale original that happens to carry the current
epoch.  An object that slides onto an overlapping part of itself would destroy
its own undo source, so it is moved in chunks staged through a persistent
scratch buffer (see ``_Compactor.staged``).  When a region is done its bit is
set in the region bitmap and recovery skips it.
"""

import struct
import threading
import time
from collections import deque
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import layout as L
from .errors import CorruptImage, CorruptReference, GCInProgress

_U64 = struct.Struct("<Q")


@dataclass
class GCStats:
    live_bytes: int = 0
    reclaimed_bytes: int = 0
    regions: int = 0
    pause_ns: int = 0
    fences_issued: int = 0
    live_objects: int = 0
    moved_objects: int = 0
    region_workers: dict = field(default_factory=dict)

    def record(self):
        return {"live_bytes": self.live_bytes, "reclaimed_bytes": self.reclaimed_bytes,
                "regions": self.regions, "pause_ns": self.pause_ns,
                "fences_issued": self.fences_issued}


@dataclass(frozen=True)
class Geometry:
    data_start: int
    data_end: int
    region_size: int

    @property
    def words(self):
        return (self.data_end - self.data_start) // L.ALIGN

    @property
    def region_count(self):
        return (self.data_end - self.data_start) // self.region_size

    @classmethod
    def of(cls, heap):
        m = heap.meta
        return cls(m.data_heap_location, m.heap_size, m.region_size)


class MarkBitmap:
    """Begin/end bits, one per heap word, for every reachable object."""

    def __init__(self, begin, end):
        self.begin = np.asarray(begin, dtype=bool)
        self.end = np.asarray(end, dtype=bool)

    @classmethod
    def empty(cls, words):
        return cls(np.zeros(words, bool), np.zeros(words, bool))

    def set(self, word, size_words):
        self.begin[word] = True
        self.end[word + size_words - 1] = True

    def count(self):
        return int(self.begin.sum())

    def packed(self):
        return (np.packbits(self.begin, bitorder="little").tobytes(),
                np.packbits(self.end, bitorder="little").tobytes())

    @classmethod
    def unpack(cls, begin_bytes, end_bytes, words):
        b = np.unpackbits(np.frombuffer(begin_bytes, np.uint8), bitorder="little", count=words)
        e = np.unpackbits(np.frombuffer(end_bytes, np.uint8), bitorder="little", count=words)
        return cls(b.astype(bool), e.astype(bool))


class Summary:
    """Destinations of every live object and the per-region work split.

    ``src``, ``dest`` and ``size`` are heap offsets/bytes in ascending source
    order; ``region_first[r]:region_first[r+1]`` are the objects of region r.
    """

    def __init__(self, src, dest, size, region_first, new_top):
        self.src = src
        self.dest = dest
        self.size = size
        self.region_first = region_first
        self.new_top = new_top
        self._fwd = None

    def __len__(self):
        return len(self.src)

    @property
    def live_bytes(self):
        return int(self.size.sum())

    def forwarding(self):
        if self._fwd is None:
            self._fwd = dict(zip(self.src.tolist(), self.dest.tolist()))
        return self._fwd

    def region_objects(self, r):
        return int(self.region_first[r]), int(self.region_first[r + 1])

    def destination_region(self, r, geometry):
        """Region receiving the first object of region ``r`` (None if empty)."""
        lo, hi = self.region_objects(r)
        if lo == hi:
            return None
        return (int(self.dest[lo]) - geometry.data_start) // geometry.region_size

    def to_bytes(self):
        return b"".join(a.astype("<i8").tobytes() for a in
                        (self.src, self.dest, self.size, self.region_first,
                         np.array([self.new_top])))


def summarize(bitmap, geometry):
    """Slide live objects toward the heap start; deterministic in the bitmap."""
    starts = np.flatnonzero(bitmap.begin)
    ends = np.flatnonzero(bitmap.end)
    if len(starts) != len(ends):
        raise CorruptImage("mark bitmap has %d begin bits but %d end bits" % (len(starts), len(ends)))
    if len(starts) and (np.any(ends < starts) or np.any(starts[1:] <= ends[:-1])):
        raise CorruptImage("mark bitmap begin/end bits do not pair up")
    src = geometry.data_start + starts.astype(np.int64) * L.ALIGN
    size = (ends - starts + 1).astype(np.int64) * L.ALIGN
    dest = geometry.data_start + np.cumsum(size) - size
    cur = int(geometry.data_start + size.sum())
    region_of = (src - geometry.data_start) // geometry.region_size
    region_first = np.searchsorted(region_of, np.arange(geometry.region_count + 1), side="left")
    return Summary(src, dest, size, region_first.astype(np.int64), cur)


class _Persister:
    def __init__(self, device, enabled):
        self.device = device
        self.enabled = enabled
        self.fences = 0

    def flush(self, off, n):
        if self.enabled:
            self.device.flush(off, n)

    def fence(self):
        if self.enabled:
            self.device.fence()
            self.fences += 1


def _walk_index(heap):
    starts = []
    sizes = []
    descs = []
    for off, desc, size in heap.iter_objects(include_fillers=True):
        starts.append(off)
        sizes.append(size)
        descs.append(desc)
    return starts, sizes, descs


def mark(heap, roots, persist=True):
    """Trace from ``roots`` (absolute addresses) and persist the mark bitmaps."""
    geom = Geometry.of(heap)
    starts, sizes, descs = _walk_index(heap)
    index = {off: i for i, off in enumerate(starts)}
    bitmap = MarkBitmap.empty(geom.words)
    seen = bytearray(len(starts))
    mem = heap.device._cur
    unpack = _U64.unpack_from
    lo, hi = heap.base, heap.base + heap.meta.heap_size
    stack = []

    def visit(addr, where):
        if not addr or not lo <= addr < hi:
            return
        i = index.get(addr - heap.base)
        if i is None:
            raise CorruptReference("reference %#x from %s is not an object start" % (addr, where))
        if not seen[i]:
            seen[i] = 1
            stack.append(i)

    for addr in roots:
        visit(addr, "root")
    while stack:
        i = stack.pop()
        off, desc, size = starts[i], descs[i], sizes[i]
        bitmap.set((off - geom.data_start) // L.ALIGN, size // L.ALIGN)
        if desc.elem is None:
            for r in desc.ref_offsets:
                visit(unpack(mem, off + r)[0], "%#x" % off)
        elif desc.elem == "ref":
            n = (size - 24) // 8
            for w in np.frombuffer(mem, "<u8", count=n, offset=off + 24).tolist():
                visit(w, "%#x" % off)
    if persist:
        begin, end = bitmap.packed()
        dev = heap.device
        m = heap.meta
        dev.write(m.mark_bitmap_location, begin)
        dev.write(m.mark_bitmap_location + m.mark_bitmap_bytes, end)
        dev.flush(m.mark_bitmap_location, 2 * m.mark_bitmap_bytes)
        dev.fence()
    return bitmap


def _root_addresses(heap, extra_roots):
    out = [addr for _, _, addr in heap._entries(L.KIND_ROOT)]
    out.extend(heap.handle_addresses())
    for r in extra_roots:
        if r is not None and r.is_persistent:
            out.append(r.address)
    return out


def _read_region_bits(heap):
    m = heap.meta
    raw = heap.device.read(m.region_bitmap_location, (m.region_count + 7) // 8)
    return np.unpackbits(np.frombuffer(raw, np.uint8), bitorder="little", count=m.region_count).astype(bool)


class _Compactor:
    def __init__(self, heap, summary, persist=True, lock=None, batched=False):
        self.heap = heap
        self.batched = batched
        self.s = summary
        self.p = _Persister(heap.device, persist)
        self.lock = lock
        self.fwd = summary.forwarding()
        self.src = summary.src.tolist()
        self.dest = summary.dest.tolist()
        self.size = summary.size.tolist()
        self.moved = 0
        m = heap.meta
        self.data_start = m.data_heap_location
        self.cursor_at = m.region_cursor_location
        self.bits_at = m.region_bitmap_location
        self.ts = m.global_timestamp
        self.scratch = m.scratch_location

    def _fix(self, buf, base_off, desc, size):
        """Rewrite heap references inside ``buf`` (object bytes at ``base_off``)."""
        self._fix_slots(buf, self.heap.ref_slots(0, desc, size), base_off)

    def _fix_slots(self, buf, slots, base_off):
        heap = self.heap
        lo, hi = heap.base, heap.base + heap.meta.heap_size
        fwd = self.fwd
        for at in slots:
            w = _U64.unpack_from(buf, at)[0]
            if w and lo <= w < hi:
                new = fwd.get(w - heap.base)
                if new is None:
                    raise CorruptReference("live object at %#x references dead %#x" % (base_off, w))
                _U64.pack_into(buf, at, new + heap.base)

    def region(self, r):
        lo, hi = self.s.region_objects(r)
        dev = self.heap.device
        cur_off = self.cursor_at + 8 * r
        done = dev.read_u64(cur_off)
        if self.batched and self.lock is None:
            self._region_batched(lo, hi, done, cur_off)
            done = hi - lo
        for j in range(lo + done, hi):
            if self.lock is not None:
                with self.lock:
                    self.one(j, j - lo + 1, cur_off)
            else:
                self.one(j, j - lo + 1, cur_off)
        with self.lock or _NULL:
            byte_at = self.bits_at + r // 8
            b = dev.read(byte_at, 1)[0] | (1 << (r % 8))
            dev.write(byte_at, bytes([b]))
            self.p.flush(byte_at, 1)
            self.p.fence()

    def one(self, j, cursor_value, cur_off):
        heap = self.heap
        dev = heap.device
        p = self.p
        s, d, z = self.src[j], self.dest[j], self.size[j]
        if s != d and d + z > s:
            return self.staged(j, cursor_value, cur_off)
        desc = heap.desc_at(s)
        buf = bytearray(dev._cur[s:s + z])
        self._fix(buf, s, desc, z)
        if d != s:
            # (1)+(2): raw copy with its references rewritten; the original is the undo log
            dev.write(d, buf)
            p.flush(d, z)
            p.fence()
            dev.write_u64(d + 8, self.ts)
            p.flush(d + 8, 8)
            p.fence()
            # (3): original stamped after the copy, together with the cursor
            dev.write_u64(s + 8, self.ts)
            dev.write_u64(cur_off, cursor_value)
            p.flush(s + 8, 8)
            p.flush(cur_off, 8)
            p.fence()
            self.moved += 1
        else:
            _U64.pack_into(buf, 8, self.ts)
            dev.write(s, buf)
            dev.write_u64(cur_off, cursor_value)
            p.flush(s, z)
            p.flush(cur_off, 8)
            p.fence()

    def _region_batched(self, lo, hi, done, cur_off):
        """Redo a region's remaining moves a run of objects at a time.

        A run of in-place objects is rewritten together with the cursor under
        one fence.  A run of moving objects whose destinations all lie below
        the run's first source cannot clobber any source it still needs, so it
        is copied in one go, persisted, and then covered by a single cursor
        update.  Both are idempotent from the cursor, like the per-object path.
        """
        src, dest, size = self.src, self.dest, self.size
        dev = self.heap.device
        p = self.p
        j = lo + done
        while j < hi:
            s, d, z = src[j], dest[j], size[j]
            if s != d and d + z > s:
                self.staged(j, j - lo + 1, cur_off)
                j += 1
                continue
            k = j + 1
            if s == d:
                while k < hi and src[k] == dest[k]:
                    k += 1
            else:
                while k < hi and src[k] != dest[k] and dest[k] + size[k] <= s:
                    k += 1
            buf = self._gather_fixed(j, k)
            dev.write(d, buf)
            p.flush(d, len(buf))
            if s != d:
                p.fence()
                self.moved += k - j
            dev.write_u64(cur_off, k - lo)
            p.flush(cur_off, 8)
            p.fence()
            j = k

    def _gather_fixed(self, j, k):
        """Objects j..k-1 laid out at their destinations, refs forwarded, stamped."""
        heap = self.heap
        mem = heap.device._cur
        src, size = self.src, self.size
        buf = bytearray(b"".join([mem[src[i]:src[i] + size[i]] for i in range(j, k)]))
        words = np.frombuffer(buf, "<u8")
        at = (self.s.dest[j:k] - self.dest[j]) // 8
        kws = words[at] & ~np.uint64(7)
        words[at + 1] = self.ts
        slots = []
        kb = heap._klass_by_addr
        for kw in np.unique(kws).tolist():
            desc = kb.get(kw)
            if desc is None:
                raise CorruptImage("bad klass word %#x in a live object" % kw)
            if desc.elem is None:
                if desc.ref_offsets:
                    first = at[kws == kw]
                    slots.append((first[:, None] + np.asarray(desc.ref_offsets, np.int64) // 8).ravel())
            elif desc.elem == "ref":
                for w0, z in zip(at[kws == kw].tolist(), self.s.size[j:k][kws == kw].tolist()):
                    slots.append(np.arange(w0 + 3, w0 + z // 8, dtype=np.int64))
        if slots:
            idx = np.concatenate(slots)
            w = words[idx].astype(np.int64)
            lo_, hi_ = heap.base, heap.base + heap.meta.heap_size
            inside = (w >= lo_) & (w < hi_)
            if inside.any():
                old = w[inside] - heap.base
                srcs = self.s.src
                pos = np.minimum(np.searchsorted(srcs, old), len(srcs) - 1)
                bad = srcs[pos] != old
                if bad.any():
                    raise CorruptReference("live object references dead %#x" % int(old[bad][0] + heap.base))
                words[idx[inside]] = (self.s.dest[pos] + heap.base).astype(np.uint64)
        return buf

    def staged(self, j, cursor_value, cur_off):
        """Move an object onto an overlapping part of itself.

        Chunks go through the scratch buffer: stage (persist), then write the
        destination chunk (persist).  The move record (one cache line) says
        which chunk is next and whether it is staged, and keeps the klass word
        because the header at the source is overwritten by the first chunk.
        """
        heap = self.heap
        dev = heap.device
        p = self.p
        s, d, z = self.src[j], self.dest[j], self.size[j]
        rec = self.scratch
        buf_at = rec + 64
        active, rj, k, state, kw = (dev.read_u64(rec + 8 * i) for i in range(5))
        if not (active and rj == j):
            k, state, kw = 0, 0, dev.read_u64(s)
        desc = heap._klass_by_addr.get(kw & ~7)
        if desc is None:
            raise CorruptImage("no klass for staged object %d" % j)
        slots = list(heap.ref_slots(0, desc, z))
        C = L.SCRATCH_SIZE
        nchunks = -(-z // C)

        def record(k, state):
            dev.write(rec, struct.pack("<5Q", 1, j, k, state, kw))
            p.flush(rec, 40)
            p.fence()

        while k < nchunks:
            a = k * C
            n = min(C, z - a)
            if state == 0:
                dev.write(buf_at, dev._cur[s + a:s + a + n])
                p.flush(buf_at, n)
                p.fence()
                record(k, 1)
            chunk = bytearray(dev._cur[buf_at:buf_at + n])
            self._fix_slots(chunk, [x - a for x in slots if a <= x < a + n], s)
            if k == 0:
                _U64.pack_into(chunk, 8, self.ts)
            dev.write(d + a, chunk)
            p.flush(d + a, n)
            p.fence()
            k, state = k + 1, 0
            record(k, 0)
        dev.write_u64(cur_off, cursor_value)
        p.flush(cur_off, 8)
        p.fence()
        dev.write(rec, bytes(40))
        p.flush(rec, 40)
        p.fence()
        self.moved += 1


class _Null:
    def __enter__(self):
        return self

    def __exit__(self, *exc):
        return False


_NULL = _Null()


def compact_region(heap, summary, region_index, persist=True):
    """Evacuate one region (resuming from its persisted cursor)."""
    c = _Compactor(heap, summary, persist)
    c.region(region_index)
    return c.moved


def _region_spans(summary, geometry):
    """Per region: (source span, regions written) used to order parallel work."""
    out = []
    rs = geometry.region_size
    for r in range(geometry.region_count):
        lo, hi = summary.region_objects(r)
        if lo == hi:
            out.append(((0, 0), {r}))
            continue
        src_span = (int(summary.src[lo]), int(summary.src[hi - 1] + summary.size[hi - 1]))
        w_lo = int(summary.dest[lo])
        w_hi = max(int(summary.dest[hi - 1] + summary.size[hi - 1]), src_span[1])
        written = set(range((w_lo - geometry.data_start) // rs,
                            (w_hi - 1 - geometry.data_start) // rs + 1))
        written.add(r)
        out.append((src_span, written))
    return out


def _compact_parallel(heap, summary, pending, workers, stats):
    geom = Geometry.of(heap)
    spans = _region_spans(summary, geom)
    rs = geom.region_size
    lock = threading.RLock()
    comp = _Compactor(heap, summary, True, lock=lock)
    pending = list(pending)
    pend_set = set(pending)
    deps = {}
    for r in pending:
        need = set()
        written = spans[r][1]
        for q in pending:
            if q >= r:
                break
            (s_lo, s_hi), q_written = spans[q]
            q_src_regions = set(range((s_lo - geom.data_start) // rs,
                                      (max(s_hi, s_lo + 1) - 1 - geom.data_start) // rs + 1)) if s_hi else set()
            if (q_written & written) or (q_src_regions & written):
                need.add(q)
        deps[r] = need
    done = set()
    active = {}
    cond = threading.Condition()
    queue = deque(pending)
    errors = []

    def take(name):
        with cond:
            while True:
                if errors or not queue:
                    return None
                for r in list(queue):
                    if deps[r] <= done and all(not (spans[r][1] & spans[a][1]) for a in active):
                        queue.remove(r)
                        active[r] = name
                        stats.region_workers[r] = name
                        return r
                cond.wait()

    def finish(r):
        with cond:
            del active[r]
            done.add(r)
            cond.notify_all()

    def worker(k):
        name = "gc-worker-%d" % k
        while True:
            r = take(name)
            if r is None:
                return
            try:
                comp.region(r)
            except BaseException as exc:
                with cond:
                    errors.append(exc)
                    cond.notify_all()
                raise
            finish(r)

    with ThreadPoolExecutor(max_workers=workers) as ex:
        futs = [ex.submit(worker, k) for k in range(workers)]
        for f in futs:
            f.result()
    if errors:
        raise errors[0]
    assert done == pend_set
    return comp.moved, comp.p.fences


def _finalize(heap, summary, old_top, p):
    dev = heap.device
    m = heap.meta
    # roots from the snapshot taken before the cycle: safe to redo
    fwd = summary.forwarding()
    wrote = False
    for slot in heap._roots.values():
        old = dev.read_u64(m.root_snapshot_location + 8 * slot)
        if old and heap.base <= old < heap.base + m.heap_size:
            new = fwd.get(old - heap.base)
            if new is None:
                raise CorruptImage("root %#x was not marked" % old)
            at = m.name_table_location + slot * L.ENTRY_SIZE + L.ENTRY_ADDR
            dev.write_u64(at, new + heap.base)
            p.flush(at, 8)
            wrote = True
    if wrote:
        p.fence()
    new_top = summary.new_top
    if old_top > new_top:
        dev.write(new_top, bytes(old_top - new_top))
        p.flush(new_top, old_top - new_top)
        p.fence()
    dev.write(L.OFF_LAST_ALLOC, b"\0\0\0\0")
    dev.write_u64(L.OFF_TOP, new_top)
    p.flush(0, 64)
    p.fence()
    m.top = new_top
    m.last_alloc_size = 0
    dev.write_u64(L.OFF_GC_FLAG, 0)
    p.flush(L.OFF_GC_FLAG, 8)
    p.fence()
    m.gc_in_progress = 0
    nbits = L.align_up((m.region_count + 7) // 8)
    dev.write(m.region_bitmap_location, bytes(nbits + 8 * m.region_count))
    p.flush(m.region_bitmap_location, nbits + 8 * m.region_count)
    if any(dev.read(m.scratch_location, 40)):
        dev.write(m.scratch_location, bytes(40))
        p.flush(m.scratch_location, 40)
    p.fence()


def collect(heap, extra_roots=(), persist=True, workers=1):
    """Run one full stop-the-world collection; returns :class:`GCStats`.

    Roots are the name-table roots, every live ObjRef handle, and
    ``extra_roots``.  With ``persist=False`` no flush or fence is issued (the
    baseline for measuring what crash consistency costs).
    """
    with heap.lock:
        m = heap.meta
        if m.gc_in_progress:
            raise GCInProgress("a collection is already in progress")
        if heap.gc_blockers:
            raise GCInProgress("collection is blocked by an active transaction")
        t0 = time.perf_counter_ns()
        dev = heap.device
        points0 = dev.persist_point_count()
        p = _Persister(dev, persist)
        old_top = m.top
        geom = Geometry.of(heap)
        bitmap = mark(heap, _root_addresses(heap, extra_roots), persist=False)
        begin, end = bitmap.packed()
        dev.write(m.mark_bitmap_location, begin)
        dev.write(m.mark_bitmap_location + m.mark_bitmap_bytes, end)
        p.flush(m.mark_bitmap_location, 2 * m.mark_bitmap_bytes)
        for slot in heap._roots.values():
            at = m.name_table_location + slot * L.ENTRY_SIZE + L.ENTRY_ADDR
            snap = m.root_snapshot_location + 8 * slot
            dev.write_u64(snap, dev.read_u64(at))
            p.flush(snap, 8)
        nbits = L.align_up((m.region_count + 7) // 8)
        tables = dev.read(m.region_bitmap_location, nbits + 8 * m.region_count)
        if any(tables):
            dev.write(m.region_bitmap_location, bytes(len(tables)))
            p.flush(m.region_bitmap_location, len(tables))
        p.fence()
        # flag and new epoch share the first metadata line
        dev.write_u64(L.OFF_GC_FLAG, 1)
        dev.write_u64(L.OFF_TIMESTAMP, m.global_timestamp + 1)
        p.flush(0, 64)
        p.fence()
        m.gc_in_progress = 1
        m.global_timestamp += 1
        summary = summarize(bitmap, geom)
        stats = GCStats(regions=geom.region_count)
        if workers > 1 and persist:
            moved, _ = _compact_parallel(heap, summary, range(geom.region_count), workers, stats)
        else:
            comp = _Compactor(heap, summary, persist)
            comp.p = p
            for r in range(geom.region_count):
                comp.region(r)
                stats.region_workers[r] = "main"
            moved = comp.moved
        _finalize(heap, summary, old_top, p)
        fwd = summary.forwarding()
        base = heap.base
        heap._rebind_handles(lambda a: fwd[a - base] + base)
        stats.live_bytes = summary.live_bytes
        stats.live_objects = len(summary)
        stats.reclaimed_bytes = old_top - summary.new_top
        stats.moved_objects = moved
        stats.fences_issued = dev.persist_point_count() - points0 if persist else 0
        stats.pause_ns = time.perf_counter_ns() - t0
        heap.last_gc = stats
        return stats


def recover(heap):
    """Finish a collection interrupted by a crash.

    Rereads the mark bitmaps, recomputes the summary, evacuates every region
    whose bit is still clear (resuming half-done ones at their cursor) and
    finalizes exactly like :func:`collect`.
    """
    m = heap.meta
    if not m.gc_in_progress:
        return None
    if (m.mark_bitmap_location + 2 * m.mark_bitmap_bytes > m.heap_size
            or m.region_bitmap_location + (m.region_count + 7) // 8 > m.heap_size
            or m.region_cursor_location + 8 * m.region_count > m.heap_size):
        raise CorruptImage("GC bitmaps lie outside the heap")
    geom = Geometry.of(heap)
    dev = heap.device
    begin = dev.read(m.mark_bitmap_location, m.mark_bitmap_bytes)
    end = dev.read(m.mark_bitmap_location + m.mark_bitmap_bytes, m.mark_bitmap_bytes)
    bitmap = MarkBitmap.unpack(begin, end, geom.words)
    summary = summarize(bitmap, geom)
    bits = _read_region_bits(heap)
    comp = _Compactor(heap, summary, True, batched=True)
    for r in range(geom.region_count):
        if not bits[r]:
            comp.region(r)
    _finalize(heap, summary, m.top, comp.p)
    return summary


def read_mark_bitmap(heap):
    m = heap.meta
    dev = heap.device
    begin = dev.read(m.mark_bitmap_location, m.mark_bitmap_bytes)
    end = dev.read(m.mark_bitmap_location + m.mark_bitmap_bytes, m.mark_bitmap_bytes)
    return MarkBitmap.unpack(begin, end, Geometry.of(heap).words)
