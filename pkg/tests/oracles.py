"""Reference implementations the tests compare the real code against.

They are deliberately naive and share no code with the package beyond its
public accessors.
"""

from collections import deque

LINE = 64


class DeviceModel:
    """Strict flush/fence semantics, spelled out the slow way.

    flush snapshots the current content of every line in the range; fence
    makes the snapshots durable.  Flushing a clean line snapshots bytes that
    are already durable or already pending, so it is indistinguishable from
    the device's "clean lines are skipped" rule.
    """

    def __init__(self, capacity):
        self.vol = bytearray(capacity)
        self.dur = bytearray(capacity)
        self.pending = {}
        self.fences = 0

    def write(self, off, data):
        self.vol[off:off + len(data)] = data

    def read(self, off, n):
        return bytes(self.vol[off:off + n])

    def flush(self, off, n):
        if n <= 0:
            return
        for line in range(off // LINE, (off + n - 1) // LINE + 1):
            self.pending[line] = bytes(self.vol[line * LINE:(line + 1) * LINE])

    def fence(self):
        for line, data in self.pending.items():
            self.dur[line * LINE:(line + 1) * LINE] = data
        self.pending = {}
        self.fences += 1
        return self.fences

    def crash(self):
        self.vol = bytearray(self.dur)
        self.pending = {}
        return bytes(self.dur)


def reachable(heap, roots=None):
    """Offsets of objects reachable from ``roots`` (default: every root),
    found by BFS through the public field/element accessors."""
    if roots is None:
        roots = [r for r in heap.roots().values() if r is not None]
    seen = set()
    q = deque()

    def visit(ref):
        if ref is None or not ref.is_persistent:
            return
        if ref.address not in seen:
            seen.add(ref.address)
            q.append(ref)

    for r in roots:
        visit(r)
    while q:
        r = q.popleft()
        desc = heap.descriptor_of(r)
        if desc.is_array:
            if desc.elem_is_ref:
                for x in heap.read_elements(r):
                    visit(x)
        else:
            for f in desc.fields:
                if f.fmt == "ref":
                    visit(heap.get_field(r, f.name))
    return {a - heap.base for a in seen}


def naive_summary(begin, end, data_start, align=8):
    """Pair begin/end bits left to right and slide objects down in order.

    Returns (src, dest, size) lists of byte offsets.
    """
    src, dest, size = [], [], []
    cur = data_start
    open_at = None
    for w in range(len(begin)):
        if begin[w]:
            assert open_at is None, "begin inside an object"
            open_at = w
        if end[w]:
            assert open_at is not None, "end without begin"
            n = (w - open_at + 1) * align
            src.append(data_start + open_at * align)
            dest.append(cur)
            size.append(n)
            cur += n
            open_at = None
    assert open_at is None
    return src, dest, size


def canon(heap):
    """Canonical, address-free shape of the reachable graph.

    Objects are numbered in BFS order from the roots taken in name order;
    each becomes (type, scalar values, successor numbers).
    """
    order = {}
    out = []
    q = deque()

    def num(ref):
        if ref is None:
            return None
        if not ref.is_persistent:
            return ("volatile",)
        if ref.address not in order:
            order[ref.address] = len(order)
            q.append(ref)
        return order[ref.address]

    roots = heap.roots()
    head = [(name, num(roots[name])) for name in sorted(roots)]
    while q:
        r = q.popleft()
        desc = heap.descriptor_of(r)
        if desc.is_array:
            vals = heap.read_elements(r)
            body = tuple(num(v) for v in vals) if desc.elem_is_ref else tuple(vals)
        else:
            body = tuple(num(heap.get_field(r, f.name)) if f.fmt == "ref" else heap.get_field(r, f.name)
                         for f in desc.fields)
        out.append((desc.logical_name, body))
    return head, out
