"""fsck for heap images.

Checks the metadata block, the name table, the Klass segment, a full
header-to-header walk of the data heap, every stored reference, the GC side
tables and any PJO undo logs.  Nothing is written.
"""

import struct
from dataclasses import dataclass, field

import numpy as np

from . import layout as L
from .klass import FILLER, FILLER_WORD, decode_descriptor

_U64 = struct.Struct("<Q")

UNDO_PREFIX = "__pjo_undo"


@dataclass
class Report:
    errors: list = field(default_factory=list)
    warnings: list = field(default_factory=list)
    stats: dict = field(default_factory=dict)
    walk: object = None

    @property
    def ok(self):
        return not self.errors

    def lines(self):
        out = ["status=%s" % ("pass" if self.ok else "fail")]
        out += ["%s=%s" % kv for kv in sorted(self.stats.items())]
        out += ["error=%s" % e for e in self.errors]
        out += ["warning=%s" % w for w in self.warnings]
        return out


def _check_meta(heap, rep):
    m = heap.meta
    size = m.heap_size
    if not m.data_heap_location <= m.top <= size:
        rep.errors.append("top %#x outside [%#x, %#x]" % (m.top, m.data_heap_location, size))
    for name in ("mark_bitmap_location", "region_bitmap_location", "name_table_location",
                 "klass_segment_location", "data_heap_location", "region_cursor_location",
                 "root_snapshot_location", "scratch_location"):
        v = getattr(m, name)
        if not 0 < v < size or v % L.ALIGN:
            rep.errors.append("%s %#x is misplaced" % (name, v))
    if m.global_timestamp < 1:
        rep.errors.append("global timestamp is %d" % m.global_timestamp)
    if m.gc_in_progress:
        rep.errors.append("collection flag still set")
    if m.remap_target:
        rep.errors.append("remap to %#x not finished" % m.remap_target)
    if (m.data_heap_location - 0) % m.region_size or (size - m.data_heap_location) % m.region_size:
        rep.errors.append("data heap is not region aligned")


def _check_names(heap, rep):
    m = heap.meta
    raw = heap.device.read(m.name_table_location, m.name_table_capacity * L.ENTRY_SIZE)
    kinds = np.frombuffer(raw, np.uint8)[::L.ENTRY_SIZE]
    seen = {}
    for slot in np.flatnonzero(kinds != L.KIND_EMPTY).tolist():
        ent = raw[slot * L.ENTRY_SIZE:(slot + 1) * L.ENTRY_SIZE]
        try:
            kind, name, addr = L.decode_entry(ent)
        except Exception as exc:  # noqa: BLE001 - report anything undecodable
            rep.errors.append("name slot %d undecodable: %s" % (slot, exc))
            continue
        if kind not in (L.KIND_KLASS, L.KIND_ROOT):
            rep.errors.append("name slot %d has kind %d" % (slot, kind))
            continue
        if (kind, name) in seen:
            rep.errors.append("duplicate name %r" % name)
        seen[(kind, name)] = addr
    return seen


def _check_klasses(heap, rep, names):
    m = heap.meta
    lo = m.klass_segment_location
    hi = lo + m.klass_segment_size
    view = heap.device.view()
    count = 0
    for (kind, name), addr in names.items():
        if kind != L.KIND_KLASS:
            continue
        if not lo <= addr < hi:
            rep.errors.append("Klass %s at %#x outside the segment" % (name, addr))
            continue
        try:
            desc, _ = decode_descriptor(view, addr, hi)
        except Exception as exc:  # noqa: BLE001
            rep.errors.append("Klass %s undecodable: %s" % (name, exc))
            continue
        if desc.logical_name != name:
            rep.errors.append("Klass entry %s names %s" % (name, desc.logical_name))
        count += 1
    for b in (FILLER, FILLER_WORD):
        if (L.KIND_KLASS, b) not in names:
            rep.errors.append("builtin %s missing" % b)
    rep.stats["klasses"] = count - 2


class _KlassTable:
    """Descriptor properties as arrays, indexed via the sorted klass addresses."""

    def __init__(self, heap):
        items = sorted(heap._klass_by_addr.items())
        self.descs = [d for _, d in items]
        self.addr = np.array([a for a, _ in items], dtype=np.uint64)
        self.inst = np.array([d.instance_size for d in self.descs], dtype=np.int64)
        self.ew = np.array([d.elem_width for d in self.descs], dtype=np.int64)
        self.is_array = np.array([d.elem is not None for d in self.descs], dtype=bool)
        self.dead = np.array([d.logical_name in (FILLER, FILLER_WORD) for d in self.descs], dtype=bool)

    def lookup(self, kw):
        """Descriptor index per klass word (-1 where the word names no Klass)."""
        key = kw & np.uint64(~7 & 0xFFFF_FFFF_FFFF_FFFF)
        if not len(self.addr):
            return np.full(len(kw), -1, np.int64)
        i = np.searchsorted(self.addr, key)
        i = np.minimum(i, len(self.addr) - 1)
        return np.where(self.addr[i] == key, i, -1)


def _sizes(kt, words, starts, size_limit):
    """(descriptor index, size) per candidate start; size -1 where invalid."""
    w = starts // 8
    di = kt.lookup(words[w])
    ok = di >= 0
    d = np.where(ok, di, 0)
    size = kt.inst[d].copy()
    arr = ok & kt.is_array[d]
    if arr.any():
        n = words[w[arr] + 2]
        fits = n <= np.uint64(size_limit)
        body = np.where(fits, n, 0).astype(np.int64) * kt.ew[d[arr]]
        size[arr] = np.where(fits, (24 + body + 7) & ~7, -1)
    size[~ok] = -1
    return di, size


def _walk(heap, rep, hint=None):
    """Header-to-header walk from the data heap start to top.

    ``hint`` is a candidate list of object starts (e.g. the walk of a similar
    image).  It is verified in bulk: the longest prefix whose headers chain
    exactly is accepted, and the sequential walk resumes where it breaks, so
    the result never depends on the hint being right.

    Returns (all starts, their descriptor indices, sizes, Klass table) or None.
    """
    m = heap.meta
    mem = heap.device._cur
    words = np.frombuffer(mem, "<u8")
    kt = _KlassTable(heap)
    top = m.top
    off = m.data_heap_location
    starts = np.zeros(0, np.int64)
    di = np.zeros(0, np.int64)
    sizes = np.zeros(0, np.int64)
    if hint is not None and len(hint) and top > off:
        cand = np.asarray(hint, dtype=np.int64)
        cand = cand[(cand >= off) & (cand < top)]
        if len(cand) and cand[0] == off:
            cdi, csz = _sizes(kt, words, cand, m.heap_size)
            ends = cand + csz
            good = (csz > 0) & (ends <= top)
            good[:-1] &= ends[:-1] == cand[1:]
            bad = np.flatnonzero(~good)
            k = int(bad[0]) if len(bad) else len(cand)
            starts, di, sizes = cand[:k], cdi[:k], csz[:k]
            if k:
                off = int(ends[k - 1])
    # sequential remainder
    unpack = _U64.unpack_from
    index = {int(a): i for i, a in enumerate(kt.addr.tolist())}
    more_s, more_d, more_z = [], [], []
    while off < top:
        kw = unpack(mem, off)[0]
        i = index.get(kw & ~7)
        if i is None:
            rep.errors.append("bad klass word %#x at %#x" % (kw, off))
            return None
        desc = kt.descs[i]
        if desc.elem is None:
            size = desc.instance_size
        else:
            n = unpack(mem, off + 16)[0]
            size = (24 + n * desc.elem_width + 7) & ~7 if n <= m.heap_size else top + 1
        if off + size > top:
            rep.errors.append("object at %#x runs past top" % off)
            return None
        more_s.append(off)
        more_d.append(i)
        more_z.append(size)
        off += size
    if more_s:
        starts = np.concatenate([starts, np.array(more_s, np.int64)])
        di = np.concatenate([di, np.array(more_d, np.int64)])
        sizes = np.concatenate([sizes, np.array(more_z, np.int64)])
    dead = kt.dead[di] if len(di) else np.zeros(0, bool)
    live = ~dead
    ts = words[starts[live] // 8 + 1] if live.any() else np.zeros(0, np.uint64)
    future = np.flatnonzero(ts > np.uint64(m.global_timestamp))
    if len(future):
        rep.errors.append("object at %#x has a timestamp from the future" % int(starts[live][future[0]]))
    rep.stats["objects"] = int(live.sum())
    rep.stats["object_bytes"] = int(sizes[live].sum())
    rep.stats["dead_bytes"] = int(sizes[dead].sum())
    rep.walk = starts
    return starts, di, sizes, kt


def _ref_words(mem, walked):
    """Every reference word stored in a walked object."""
    starts, di, sizes, kt = walked
    words = np.frombuffer(mem, "<u8")
    out = [np.zeros(0, np.uint64)]
    for i in np.unique(di).tolist():
        desc = kt.descs[i]
        sel = di == i
        if desc.ref_offsets:
            at = starts[sel][:, None] // 8 + np.asarray(desc.ref_offsets, np.int64)[None, :] // 8
            out.append(words[at.ravel()])
        elif desc.elem == "ref":
            for s, z in zip(starts[sel].tolist(), sizes[sel].tolist()):
                if z > 24:
                    out.append(words[(s + 24) // 8:(s + z) // 8])
    return np.concatenate(out)


def _check_refs(heap, rep, walked, names):
    starts, di, sizes, kt = walked
    base = heap.base
    hi = base + heap.meta.heap_size
    valid = starts[~kt.dead[di]] + base if len(starts) else starts
    w = _ref_words(heap.device._cur, walked)
    inside = (w >= np.uint64(base)) & (w < np.uint64(hi))
    heap_refs = w[inside].astype(np.int64)
    bad = ~_members(valid, heap_refs)
    if bad.any():
        first = int(heap_refs[bad][0])
        rep.errors.append("%d references do not point at an object start (first %#x)" % (int(bad.sum()), first))
    rep.stats["references"] = int(inside.sum())
    rep.stats["foreign_references"] = int(((w != 0) & ~inside).sum())
    roots = [(name, addr) for (kind, name), addr in names.items() if kind == L.KIND_ROOT and addr]
    if roots:
        ok = _members(valid, np.array([a for _, a in roots], dtype=np.int64))
        for (name, addr), good in zip(roots, ok.tolist()):
            if not good:
                rep.errors.append("root %s -> %#x is not an object" % (name, addr))
    rep.stats["roots"] = sum(1 for k, _ in names if k == L.KIND_ROOT)


def _members(sorted_valid, values):
    if not len(sorted_valid):
        return np.zeros(len(values), bool)
    pos = np.minimum(np.searchsorted(sorted_valid, values), len(sorted_valid) - 1)
    return sorted_valid[pos] == values


def _check_gc_tables(heap, rep):
    # with the flag clear the region tables are stale by definition (a crash
    # between clearing the flag and clearing them is harmless); only the
    # bytes above top must be blank, since allocation hands them out as-is
    m = heap.meta
    tail = heap.device.read(m.top, min(64, m.heap_size - m.top))
    if m.last_alloc_size == 0 and any(tail):
        rep.warnings.append("bytes above top are not zero")


def _check_undo(heap, rep, names):
    from .pjo import undo_state
    states = []
    for (kind, name), addr in names.items():
        if kind != L.KIND_ROOT or not name.startswith(UNDO_PREFIX) or not addr:
            continue
        try:
            st = undo_state(heap, heap.ref(addr))
        except Exception as exc:  # noqa: BLE001
            rep.errors.append("undo log %s unreadable: %s" % (name, exc))
            continue
        states.append(st)
        if st != "clean":
            rep.errors.append("undo log %s is %s" % (name, st))
    rep.stats["undo_logs"] = len(states)


def validate_heap(heap, hint=None):
    """Run every check on an open heap; returns a :class:`Report`.

    ``hint`` optionally seeds the heap walk with candidate object starts
    (``Report.walk`` of a previous run); it only affects speed.
    """
    rep = Report()
    with heap.lock:
        _check_meta(heap, rep)
        names = _check_names(heap, rep)
        _check_klasses(heap, rep, names)
        if rep.errors:
            return rep
        walked = _walk(heap, rep, hint)
        if walked is not None:
            _check_refs(heap, rep, walked, names)
        _check_gc_tables(heap, rep)
        _check_undo(heap, rep, names)
    return rep
