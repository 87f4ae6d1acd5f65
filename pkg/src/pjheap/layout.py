"""On-media format of a heap image.

All integers are little-endian.  The image starts with a metadata block::

    0   magic "PJHIMG01"
    8   version u32
    12  last_alloc_size u32   (size of the newest allocation; same line as top)
    16  address_hint, heap_size, top, gc_in_progress, global_timestamp,
        mark_bitmap_location, region_bitmap_location, name_table_location,
        klass_segment_location, data_heap_location        (8 bytes each)
    96  region_size, region_count, region_cursor_location,
        root_snapshot_location, name_table_capacity, klass_segment_size,
        mark_bitmap_bytes, remap_target, scratch_location (8 bytes each)

followed by the name table, the GC side tables, the Klass segment and the
data heap.  The last two start on region boundaries.
"""

import struct
from dataclasses import dataclass, fields

from .errors import CorruptImage

MAGIC = b"PJHIMG01"
VERSION = 1
META_BLOCK = 4096
REGION_SIZE = 64 * 1024
HEADER_SIZE = 16
ALIGN = 8
DEFAULT_NAME_TABLE_CAPACITY = 1024
DEFAULT_KLASS_SEGMENT_SIZE = 64 * 1024

# byte offsets of metadata words
OFF_VERSION = 8
OFF_LAST_ALLOC = 12
OFF_HINT = 16
OFF_SIZE = 24
OFF_TOP = 32
OFF_GC_FLAG = 40
OFF_TIMESTAMP = 48
OFF_MARK_BITMAP = 56
OFF_REGION_BITMAP = 64
OFF_NAME_TABLE = 72
OFF_KLASS_SEGMENT = 80
OFF_DATA_HEAP = 88
OFF_REGION_SIZE = 96
OFF_REGION_COUNT = 104
OFF_REGION_CURSORS = 112
OFF_ROOT_SNAPSHOT = 120
OFF_NAME_CAPACITY = 128
OFF_KLASS_SIZE = 136
OFF_MARK_BYTES = 144
OFF_REMAP_TARGET = 152
OFF_SCRATCH = 160
META_SIZE = 168

# compaction scratch: one record line, then the staging buffer
SCRATCH_SIZE = 64 * 1024
SCRATCH_AREA = 64 + SCRATCH_SIZE

_META = struct.Struct("<8sII" + "Q" * 19)

# name table
ENTRY_SIZE = 64
NAME_MAX = 47
KIND_EMPTY = 0
KIND_KLASS = 1
KIND_ROOT = 2
ENTRY_ADDR = 56


def align_up(n, a=ALIGN):
    return (n + a - 1) // a * a


@dataclass
class HeapMetadata:
    address_hint: int
    heap_size: int
    top: int
    gc_in_progress: int
    global_timestamp: int
    mark_bitmap_location: int
    region_bitmap_location: int
    name_table_location: int
    klass_segment_location: int
    data_heap_location: int
    region_size: int
    region_count: int
    region_cursor_location: int
    root_snapshot_location: int
    name_table_capacity: int
    klass_segment_size: int
    mark_bitmap_bytes: int
    remap_target: int = 0
    scratch_location: int = 0
    last_alloc_size: int = 0
    version: int = VERSION

    def pack(self):
        return _META.pack(
            MAGIC, self.version, self.last_alloc_size,
            self.address_hint, self.heap_size, self.top, self.gc_in_progress,
            self.global_timestamp, self.mark_bitmap_location,
            self.region_bitmap_location, self.name_table_location,
            self.klass_segment_location, self.data_heap_location,
            self.region_size, self.region_count, self.region_cursor_location,
            self.root_snapshot_location, self.name_table_capacity,
            self.klass_segment_size, self.mark_bitmap_bytes, self.remap_target,
            self.scratch_location)

    @classmethod
    def unpack(cls, buf):
        if len(buf) < _META.size:
            raise CorruptImage("image too small for a metadata block")
        vals = _META.unpack_from(buf, 0)
        if vals[0] != MAGIC:
            raise CorruptImage("bad magic %r" % (vals[0],))
        if vals[1] != VERSION:
            raise CorruptImage("unsupported version %d" % vals[1])
        (_, version, last_alloc, hint, size, top, flag, ts, mark, rbm, nt, ks,
         data, rsize, rcount, rcur, snap, ncap, ksize, mbytes, remap, scratch) = vals
        return cls(hint, size, top, flag, ts, mark, rbm, nt, ks, data, rsize,
                   rcount, rcur, snap, ncap, ksize, mbytes, remap, scratch, last_alloc, version)

    def as_dict(self):
        return {f.name: getattr(self, f.name) for f in fields(self)}

    @property
    def data_end(self):
        return self.heap_size

    def check(self, capacity):
        """Structural sanity checks; raises CorruptImage."""
        if self.heap_size != capacity:
            raise CorruptImage("heap_size %d != device capacity %d" % (self.heap_size, capacity))
        for name in ("mark_bitmap_location", "region_bitmap_location", "name_table_location",
                     "klass_segment_location", "data_heap_location",
                     "region_cursor_location", "root_snapshot_location", "scratch_location"):
            loc = getattr(self, name)
            if not 0 <= loc < self.heap_size or loc % ALIGN:
                raise CorruptImage("%s=%d out of range or misaligned" % (name, loc))
        if not self.data_heap_location <= self.top <= self.heap_size:
            raise CorruptImage("top %d outside data heap" % self.top)
        if self.region_size <= 0 or self.region_count * self.region_size != self.heap_size - self.data_heap_location:
            raise CorruptImage("region geometry does not tile the data heap")
        if self.mark_bitmap_location + 2 * self.mark_bitmap_bytes > self.scratch_location \
                or self.scratch_location + SCRATCH_AREA > self.klass_segment_location:
            raise CorruptImage("GC side tables overlap the Klass segment")


def plan_layout(heap_size, name_capacity=DEFAULT_NAME_TABLE_CAPACITY,
                klass_segment_size=DEFAULT_KLASS_SEGMENT_SIZE, region_size=REGION_SIZE):
    """Compute a metadata record for a fresh heap, or None if it cannot fit."""
    nt = META_BLOCK
    snap = nt + name_capacity * ENTRY_SIZE
    rbm = snap + name_capacity * 8
    klass_size = align_up(klass_segment_size, region_size)
    data = align_up(rbm + 8, region_size) + klass_size
    while data + region_size <= heap_size:
        if (heap_size - data) % region_size:
            # the data heap must be a whole number of regions
            return None
        rcount = (heap_size - data) // region_size
        rbm_bytes = align_up((rcount + 7) // 8)
        cursors = rbm + rbm_bytes
        mark = cursors + rcount * 8
        words = (heap_size - data) // ALIGN
        mbytes = align_up((words + 7) // 8)
        ks = data - klass_size
        scratch = align_up(mark + 2 * mbytes, 64)
        if scratch + SCRATCH_AREA <= ks:
            return HeapMetadata(
                address_hint=0, heap_size=heap_size, top=data, gc_in_progress=0,
                global_timestamp=1, mark_bitmap_location=mark, region_bitmap_location=rbm,
                name_table_location=nt, klass_segment_location=ks, data_heap_location=data,
                region_size=region_size, region_count=rcount, region_cursor_location=cursors,
                root_snapshot_location=snap, name_table_capacity=name_capacity,
                klass_segment_size=klass_size, mark_bitmap_bytes=mbytes,
                scratch_location=scratch)
        data += region_size
    return None


def minimum_heap_size(name_capacity=DEFAULT_NAME_TABLE_CAPACITY,
                      klass_segment_size=DEFAULT_KLASS_SEGMENT_SIZE, region_size=REGION_SIZE):
    size = region_size
    while plan_layout(size, name_capacity, klass_segment_size, region_size) is None:
        size += region_size
    return size


# name table entries

def encode_entry(kind, name, address):
    raw = name.encode("utf-8")
    buf = bytearray(ENTRY_SIZE)
    buf[0] = kind
    buf[1] = len(raw)
    buf[2:2 + len(raw)] = raw
    struct.pack_into("<Q", buf, ENTRY_ADDR, address)
    return bytes(buf)


def decode_entry(buf):
    kind = buf[0]
    n = buf[1]
    if n > NAME_MAX:
        raise CorruptImage("name length %d exceeds %d" % (n, NAME_MAX))
    name = bytes(buf[2:2 + n]).decode("utf-8")
    address = struct.unpack_from("<Q", buf, ENTRY_ADDR)[0]
    return kind, name, address
