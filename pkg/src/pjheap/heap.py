"""The persistent heap: layout, lifecycle, roots, allocation and flushing.

Persistent references are stored as absolute addresses based at the heap's
address hint.  Klass words are heap offsets into the Klass segment, so they
survive remapping untouched.
"""

import enum
import struct
import threading
import weakref
import zlib

import numpy as np

from . import layout as L
from .device import PersistentDevice
from .errors import (CorruptImage, GCInProgress, HeapBusy, InvalidReference, LayoutMismatch,
                     NameExists, NameTableFull, NameTooLong, NoSuchRoot, OutOfMemory,
                     SizeTooSmall, TooWide, UnknownField, UnknownHeap, UnknownKlass, VolatileRef)
from .klass import (FILLER, FILLER_WORD, REF, REGISTRY, TypeDescriptor, builtin_descriptors,
                    register_type, reinitialize_types)
from .names import default_manager
from .refs import PERSISTENT, VOLATILE, ObjRef, address_space
from .volatile import resolve_foreign

_U64 = struct.Struct("<Q")
_U32 = struct.Struct("<I")
_STRUCTS = {}

BYTE_ARRAY = TypeDescriptor.define_array("byte[]", "B")


def _codec(fmt):
    st = _STRUCTS.get(fmt)
    if st is None:
        st = _STRUCTS[fmt] = struct.Struct("<" + fmt)
    return st


class Safety(enum.Enum):
    USER_GUARANTEED = "ug"
    ZEROING = "zero"


class Heap:
    """An open persistent heap bound to one device.

    Use :func:`create_heap` / :func:`load_heap` for named heaps, or
    :meth:`format` / :meth:`open` to work on a bare device.
    """

    def __init__(self, device, meta, mapped_base, name=None, safety=Safety.USER_GUARANTEED):
        self.device = device
        self.meta = meta
        self.base = meta.address_hint
        self.mapped_base = mapped_base
        self.name = name
        self.safety = Safety(safety)
        self.lock = threading.RLock()
        self.closed = False
        self.gc_blockers = 0
        self.auto_gc = True
        self.last_gc = None
        self.remapped_refs = 0
        self.reinitialized = 0
        self.recovered = False
        self._handles = weakref.WeakValueDictionary()
        self._klass_by_addr = {}
        self._klass_by_name = {}
        self._klass_top = meta.klass_segment_location
        self._slots = {}
        self._roots = {}
        self._klass_slots = {}

    # construction

    @classmethod
    def format(cls, device, address_hint=None, name=None,
               name_capacity=L.DEFAULT_NAME_TABLE_CAPACITY,
               klass_segment_size=L.DEFAULT_KLASS_SEGMENT_SIZE):
        meta = L.plan_layout(device.capacity, name_capacity, klass_segment_size)
        if meta is None:
            raise SizeTooSmall("%d bytes cannot hold a heap (minimum %d)" % (
                device.capacity, L.minimum_heap_size(name_capacity, klass_segment_size)))
        size = device.capacity
        if address_hint is None or not address_space.is_free(address_hint, size):
            address_hint = address_space.find_free(size)
        meta.address_hint = address_hint
        heap = cls(device, meta, address_hint, name=name)
        if not address_space.reserve(address_hint, size, heap):
            raise HeapBusy("address range %#x is taken" % address_hint)
        packed = meta.pack()
        device.write(0, packed)
        device.persist(0, len(packed))
        for proto in builtin_descriptors():
            register_type(heap, proto)
        return heap

    @classmethod
    def open(cls, device, safety=Safety.USER_GUARANTEED, deny_hint=False, name=None):
        """Map, reinitialize, recover and (optionally) zero-scan a heap image.

        ``deny_hint`` simulates the address hint being occupied, forcing the
        remap path.
        """
        meta = L.HeapMetadata.unpack(device.read(0, L.META_SIZE))
        meta.check(device.capacity)
        size = meta.heap_size
        heap = cls(device, meta, None, name=name, safety=safety)
        if not deny_hint and address_space.reserve(meta.address_hint, size, heap):
            heap.mapped_base = meta.address_hint
        else:
            avoid = [(meta.address_hint, size)]
            if meta.remap_target:
                avoid.append((meta.remap_target, size))
            while True:
                target = address_space.find_free(size, avoid)
                if address_space.reserve(target, size, heap):
                    break
            heap.mapped_base = target
        try:
            heap._scan_names()
            heap._stamp_dead_padding()
            heap.reinitialized = reinitialize_types(heap)
            if meta.gc_in_progress:
                from .gc import recover
                recover(heap)
                heap.recovered = True
            if any(n.startswith("__pjo_undo") for n in heap._roots):
                # undo words are absolute at the old base: roll back before remapping
                from .pjo import recover_logs
                recover_logs(heap)
            sources = {meta.address_hint}
            if meta.remap_target:
                sources.add(meta.remap_target)
            if sources != {heap.mapped_base} or meta.remap_target:
                heap.remapped_refs = heap._remap(heap.mapped_base, sources)
            heap.base = heap.mapped_base
            if heap.safety is Safety.ZEROING:
                heap.zeroing_scan()
        except BaseException:
            heap._release()
            raise
        return heap

    def _release(self):
        address_space.release(self.mapped_base, self)
        REGISTRY.drop_heap(id(self))
        if self.name is not None and _OPEN.get(self.name) is self:
            del _OPEN[self.name]
        self.closed = True

    def close(self):
        """Clean shutdown: every dirty line is persisted, then the range is unmapped."""
        if self.closed:
            return
        if not self.device.crashed:
            self.device.flush_all()
            self.device.fence()
        self._release()
        self.device.close()

    def abandon(self):
        """Drop the mapping without persisting anything (after a crash)."""
        if not self.closed:
            self._release()
            self.device.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    # metadata

    def _set_meta(self, off, attr, value):
        self.device.write_u64(off, value)
        setattr(self.meta, attr, value)

    def _persist_meta(self, off):
        self.device.persist(off, 8)

    @property
    def data_start(self):
        return self.meta.data_heap_location

    @property
    def top(self):
        return self.meta.top

    @property
    def size(self):
        return self.meta.heap_size

    def contains(self, address):
        return self.base <= address < self.base + self.meta.heap_size

    # name table

    def _slot_off(self, slot):
        return self.meta.name_table_location + slot * L.ENTRY_SIZE

    def _scan_names(self):
        cap = self.meta.name_table_capacity
        raw = np.frombuffer(self.device.view(), dtype=np.uint8, count=cap * L.ENTRY_SIZE,
                            offset=self.meta.name_table_location).reshape(cap, L.ENTRY_SIZE)
        self._slots = {}
        self._roots = {}
        self._klass_slots = {}
        for slot in np.flatnonzero(raw[:, 0]).tolist():
            try:
                kind, name, _ = L.decode_entry(raw[slot].tobytes())
            except UnicodeDecodeError as exc:
                raise CorruptImage("undecodable name in slot %d" % slot) from exc
            if kind == L.KIND_ROOT:
                table = self._roots
            elif kind == L.KIND_KLASS:
                table = self._klass_slots
            else:
                raise CorruptImage("bad entry kind %d in slot %d" % (kind, slot))
            if name in table:
                raise CorruptImage("duplicate name %r" % name)
            table[name] = slot
            self._slots[slot] = (kind, name)

    def _entries(self, kind):
        table = self._roots if kind == L.KIND_ROOT else self._klass_slots
        dev = self.device
        for name, slot in list(table.items()):
            yield slot, name, dev.read_u64(self._slot_off(slot) + L.ENTRY_ADDR)

    def _insert_entry(self, kind, name, address):
        raw = name.encode("utf-8")
        if len(raw) > L.NAME_MAX:
            raise NameTooLong("name %r is longer than %d bytes" % (name, L.NAME_MAX))
        cap = self.meta.name_table_capacity
        slot = zlib.crc32(bytes([kind]) + raw) % cap
        for _ in range(cap):
            if slot not in self._slots:
                break
            slot = (slot + 1) % cap
        else:
            raise NameTableFull("name table holds %d entries" % cap)
        off = self._slot_off(slot)
        entry = L.encode_entry(kind, name, address)
        dev = self.device
        # body first, kind byte last: the kind byte commits the entry
        dev.write(off + 1, entry[1:])
        dev.persist(off, L.ENTRY_SIZE)
        dev.write(off, entry[:1])
        dev.persist(off, 1)
        self._slots[slot] = (kind, name)
        (self._roots if kind == L.KIND_ROOT else self._klass_slots)[name] = slot
        return slot

    # types

    def _bind_klass(self, desc, encoded_len):
        self._klass_by_addr[desc.address] = desc
        self._klass_by_name[desc.logical_name] = desc
        self._klass_top = max(self._klass_top, desc.address + encoded_len)
        REGISTRY.add_persistent(id(self), desc)

    def register_type(self, proto):
        return register_type(self, proto)

    def klass(self, name):
        try:
            return self._klass_by_name[name]
        except KeyError:
            raise UnknownKlass(name) from None

    def klasses(self):
        return [d for n, d in self._klass_by_name.items() if n not in (FILLER, FILLER_WORD)]

    def _resolve_klass(self, klass):
        if isinstance(klass, str):
            return self.klass(klass)
        known = self._klass_by_name.get(klass.logical_name)
        if known is None:
            register_type(self, klass)
            return self._klass_by_name[klass.logical_name]
        if known.layout_key() != klass.layout_key():
            raise LayoutMismatch("%s is registered with a different layout" % klass.logical_name)
        return known

    def desc_at(self, off):
        kw = _U64.unpack_from(self.device._cur, off)[0] & ~7
        desc = self._klass_by_addr.get(kw)
        if desc is None:
            raise CorruptImage("no valid klass word at offset %#x" % off)
        return desc

    def size_at(self, off, desc=None):
        if desc is None:
            desc = self.desc_at(off)
        if desc.elem is None:
            return desc.instance_size
        n = _U64.unpack_from(self.device._cur, off + 16)[0]
        return L.align_up(24 + n * desc.elem_width)

    # handles and references

    def ref(self, address):
        r = self._handles.get(address)
        if r is None:
            r = ObjRef(PERSISTENT, address, self)
            self._handles[address] = r
        return r

    def handle_addresses(self):
        return list(self._handles.keys())

    def _rebind_handles(self, forward):
        old = list(self._handles.items())
        self._handles = weakref.WeakValueDictionary()
        for addr, r in old:
            new = forward(addr)
            r.address = new
            self._handles[new] = r

    def _decode_ref(self, word):
        if word == 0:
            return None
        if self.base <= word < self.base + self.meta.heap_size:
            return self.ref(word)
        return resolve_foreign(word)

    def _encode_ref(self, value):
        if value is None:
            return 0
        if not isinstance(value, ObjRef):
            raise TypeError("reference fields take ObjRef or None, not %r" % type(value).__name__)
        if value.space == PERSISTENT and value.owner is not self:
            raise InvalidReference("reference into another heap")
        return value.address

    def _offset(self, ref):
        if not isinstance(ref, ObjRef) or ref.owner is not self:
            raise InvalidReference("%r does not belong to this heap" % (ref,))
        off = ref.address - self.base
        if not self.meta.data_heap_location <= off < self.meta.top:
            raise InvalidReference("%r is outside the allocated heap" % (ref,))
        return off

    def descriptor_of(self, ref):
        return self.desc_at(self._offset(ref))

    def object_size(self, ref):
        return self.size_at(self._offset(ref))

    # roots

    def set_root(self, root_name, ref):
        if ref is not None and ref.space == VOLATILE:
            raise VolatileRef("a volatile object cannot be a persistent root")
        with self.lock:
            if self.meta.gc_in_progress:
                raise GCInProgress("roots are frozen during collection")
            addr = 0 if ref is None else self._encode_ref(ref)
            if ref is not None:
                self._offset(ref)
            slot = self._roots.get(root_name)
            if slot is None:
                self._insert_entry(L.KIND_ROOT, root_name, addr)
            else:
                off = self._slot_off(slot) + L.ENTRY_ADDR
                self.device.write_u64(off, addr)
                self.device.persist(off, 8)

    def get_root(self, root_name):
        slot = self._roots.get(root_name)
        if slot is None:
            raise NoSuchRoot(root_name)
        return self._decode_ref(self.device.read_u64(self._slot_off(slot) + L.ENTRY_ADDR))

    def roots(self):
        """``{name: ObjRef or None}`` for every root entry."""
        return {name: self._decode_ref(addr) for _, name, addr in self._entries(L.KIND_ROOT)}

    # allocation

    def allocate(self, klass, array_length=None):
        """Allocate one object (or array) and return its reference.

        The durable top is persisted before the header, and the header's klass
        word before the call returns.  If the heap is full a collection runs
        (live handles count as roots) and the allocation is retried once.
        """
        with self.lock:
            desc = self._resolve_klass(klass)
            if desc.is_array != (array_length is not None):
                raise ValueError("%s %s an array length" % (
                    desc.logical_name, "needs" if desc.is_array else "does not take"))
            if array_length is not None and array_length < 0:
                raise ValueError("negative array length")
            size = desc.object_size(array_length or 0)
            if self.meta.top + size > self.meta.heap_size:
                if self.auto_gc and not self.gc_blockers:
                    from .gc import collect
                    collect(self)
                if self.meta.top + size > self.meta.heap_size:
                    raise OutOfMemory("%d bytes requested, %d free" % (
                        size, self.meta.heap_size - self.meta.top))
            dev = self.device
            start = self.meta.top
            # phase 2: durable top (and the size of this allocation, same line)
            dev.write(L.OFF_LAST_ALLOC, _U32.pack(size))
            dev.write_u64(L.OFF_TOP, start + size)
            dev.persist(0, 64)
            self.meta.top = start + size
            self.meta.last_alloc_size = size
            # phase 3: header
            if array_length is not None:
                dev.write_u64(start + 16, array_length)
                dev.persist(start + 16, 8)
            dev.write(start, _U64.pack(desc.address) + _U64.pack(self.meta.global_timestamp))
            dev.persist(start, 16)
            return self.ref(self.base + start)

    def new(self, klass, **values):
        """Allocate and assign fields (not flushed)."""
        ref = self.allocate(klass)
        for k, v in values.items():
            self.set_field(ref, k, v)
        return ref

    def new_array(self, klass, values):
        values = list(values)
        ref = self.allocate(klass, len(values))
        self.write_elements(ref, values)
        return ref

    def new_string(self, text):
        data = text.encode("utf-8")
        ref = self.allocate(BYTE_ARRAY, len(data))
        self.device.write(self._offset(ref) + 24, data)
        return ref

    def read_string(self, ref):
        off = self._offset(ref)
        n = _U64.unpack_from(self.device._cur, off + 16)[0]
        return self.device.read(off + 24, n).decode("utf-8")

    def _stamp_dead_padding(self):
        meta = self.meta
        if not meta.last_alloc_size:
            return
        start = meta.top - meta.last_alloc_size
        if start < meta.data_heap_location:
            raise CorruptImage("last allocation size points below the data heap")
        if self.device.read_u64(start) == 0:
            self.write_filler(start, meta.top - start)

    def write_filler(self, start, size, persist=True):
        """Stamp a dead filler object over ``[start, start+size)``."""
        dev = self.device
        filler = self._klass_by_name_raw(FILLER)
        word = self._klass_by_name_raw(FILLER_WORD)
        if size >= 24:
            dev.write_u64(start + 16, size - 24)
            if persist:
                dev.persist(start + 16, 8)
            dev.write(start, _U64.pack(filler) + _U64.pack(0))
            if persist:
                dev.persist(start, 16)
        else:
            for off in range(start, start + size, 8):
                dev.write_u64(off, word)
            if persist:
                dev.persist(start, size)

    def _klass_by_name_raw(self, name):
        desc = self._klass_by_name.get(name)
        if desc is not None:
            return desc.address
        # before reinitialization: builtins sit at fixed places
        slot = self._klass_slots[name]
        return self.device.read_u64(self._slot_off(slot) + L.ENTRY_ADDR)

    # fields

    def get_field(self, ref, name):
        off = self._offset(ref)
        f = self.desc_at(off)._by_name.get(name)
        if f is None:
            raise UnknownField(name)
        if f.kind == REF:
            return self._decode_ref(_U64.unpack_from(self.device._cur, off + f.offset)[0])
        return _codec(f.fmt).unpack_from(self.device._cur, off + f.offset)[0]

    def set_field(self, ref, name, value):
        off = self._offset(ref)
        f = self.desc_at(off)._by_name.get(name)
        if f is None:
            raise UnknownField(name)
        if f.kind == REF:
            self.device.write_u64(off + f.offset, self._encode_ref(value))
        else:
            self.device.write(off + f.offset, _codec(f.fmt).pack(value))

    def fields(self, ref):
        desc = self.descriptor_of(ref)
        return {f.name: self.get_field(ref, f.name) for f in desc.fields}

    def array_length(self, ref):
        off = self._offset(ref)
        if not self.desc_at(off).is_array:
            raise TypeError("not an array")
        return _U64.unpack_from(self.device._cur, off + 16)[0]

    def _element(self, ref, index):
        off = self._offset(ref)
        desc = self.desc_at(off)
        if not desc.is_array:
            raise TypeError("not an array")
        n = _U64.unpack_from(self.device._cur, off + 16)[0]
        if not 0 <= index < n:
            raise IndexError("index %d out of range for length %d" % (index, n))
        return off + 24 + index * desc.elem_width, desc

    def get_element(self, ref, index):
        at, desc = self._element(ref, index)
        if desc.elem_is_ref:
            return self._decode_ref(_U64.unpack_from(self.device._cur, at)[0])
        return _codec(desc.elem).unpack_from(self.device._cur, at)[0]

    def set_element(self, ref, index, value):
        at, desc = self._element(ref, index)
        if desc.elem_is_ref:
            self.device.write_u64(at, self._encode_ref(value))
        else:
            self.device.write(at, _codec(desc.elem).pack(value))

    def read_elements(self, ref):
        n = self.array_length(ref)
        return [self.get_element(ref, i) for i in range(n)]

    def write_elements(self, ref, values, start=0):
        off = self._offset(ref)
        desc = self.desc_at(off)
        n = _U64.unpack_from(self.device._cur, off + 16)[0]
        values = list(values)
        if start < 0 or start + len(values) > n:
            raise IndexError("slice [%d, %d) out of range for length %d" % (start, start + len(values), n))
        if desc.elem_is_ref:
            data = b"".join(_U64.pack(self._encode_ref(v)) for v in values)
        else:
            st = _codec(desc.elem)
            data = b"".join(st.pack(v) for v in values)
        self.device.write(off + 24 + start * desc.elem_width, data)

    # fine-grained persistence

    def flush_scalar(self, ref, field_name):
        """Persist one field of at most 8 bytes, followed by one fence."""
        off = self._offset(ref)
        f = self.desc_at(off)._by_name.get(field_name)
        if f is None:
            raise UnknownField(field_name)
        if f.width > 8:
            raise TooWide("field %s is %d bytes; flush it per component or with flush_object" % (
                field_name, f.width))
        self.device.flush(off + f.offset, f.width)
        self.device.fence()

    def flush_array_element(self, ref, index):
        at, desc = self._element(ref, index)
        if desc.elem_width > 8:
            raise TooWide("array elements are %d bytes" % desc.elem_width)
        self.device.flush(at, desc.elem_width)
        self.device.fence()

    def flush_object(self, ref):
        """Persist every data field with a single trailing fence."""
        off = self._offset(ref)
        size = self.size_at(off)
        if size > L.HEADER_SIZE:
            self.device.flush(off + L.HEADER_SIZE, size - L.HEADER_SIZE)
        self.device.fence()

    # heap walking

    def iter_objects(self, include_fillers=False):
        """Yield ``(offset, descriptor, size)`` for each object below top."""
        mem = self.device._cur
        unpack = _U64.unpack_from
        kb = self._klass_by_addr
        filler = self._klass_by_name[FILLER]
        word = self._klass_by_name[FILLER_WORD]
        off = self.meta.data_heap_location
        top = self.meta.top
        while off < top:
            desc = kb.get(unpack(mem, off)[0] & ~7)
            if desc is None:
                raise CorruptImage("no valid klass word at offset %#x" % off)
            if desc.elem is None:
                size = desc.instance_size
            else:
                size = (24 + unpack(mem, off + 16)[0] * desc.elem_width + 7) & ~7
            if include_fillers or (desc is not filler and desc is not word):
                yield off, desc, size
            off += size
        if off != top:
            raise CorruptImage("heap walk overran top (%#x > %#x)" % (off, top))

    def ref_slots(self, off, desc, size):
        """Offsets of the reference words inside the object at ``off``."""
        if desc.elem is None:
            return [off + r for r in desc.ref_offsets]
        if desc.elem == "ref":
            return range(off + 24, off + size, 8)
        return ()

    def object_count(self):
        return sum(1 for _ in self.iter_objects())

    # safety

    def zeroing_scan(self):
        """Null every reference that points outside the heap; returns the count."""
        with self.lock:
            dev = self.device
            mem = dev._cur
            unpack = _U64.unpack_from
            lo = self.base
            hi = self.base + self.meta.heap_size
            count = 0
            for off, desc, size in self.iter_objects():
                if desc.elem is None:
                    slots = desc.ref_offsets
                    if not slots:
                        continue
                    for r in slots:
                        w = unpack(mem, off + r)[0]
                        if w and not lo <= w < hi:
                            dev.write_u64(off + r, 0)
                            dev.flush(off + r, 8)
                            count += 1
                elif desc.elem == "ref":
                    n = (size - 24) // 8
                    words = np.frombuffer(mem, dtype="<u8", count=n, offset=off + 24)
                    bad = np.flatnonzero((words != 0) & ((words < lo) | (words >= hi)))
                    for i in bad.tolist():
                        at = off + 24 + 8 * i
                        dev.write_u64(at, 0)
                        dev.flush(at, 8)
                        count += 1
            dev.fence()
            return count

    # remapping

    def remap(self, new_base):
        """Move the heap to ``new_base`` and rebase every stored reference."""
        with self.lock:
            if self.meta.gc_in_progress:
                raise GCInProgress("recover before remapping")
            size = self.meta.heap_size
            if new_base != self.mapped_base:
                if not address_space.reserve(new_base, size, self):
                    raise HeapBusy("address range %#x is taken" % new_base)
                address_space.release(self.mapped_base, self)
                self.mapped_base = new_base
            n = self._remap(new_base, {self.base})
            self.base = new_base
            return n

    def _remap(self, new_base, sources):
        dev = self.device
        size = self.meta.heap_size
        for s in sources:
            if s != new_base and s < new_base + size and new_base < s + size:
                raise ValueError("remap ranges overlap")
        if self.meta.remap_target != new_base:
            self._set_meta(L.OFF_REMAP_TARGET, "remap_target", new_base)
            self._persist_meta(L.OFF_REMAP_TARGET)
        shifts = [(s, new_base - s) for s in sources if s != new_base]
        mem = dev._cur
        count = 0

        def rebase(at):
            nonlocal count
            w = _U64.unpack_from(mem, at)[0]
            for s, delta in shifts:
                if s <= w < s + size:
                    dev.write_u64(at, w + delta)
                    dev.flush(at, 8)
                    count += 1
                    return

        if shifts:
            for slot in self._roots.values():
                rebase(self._slot_off(slot) + L.ENTRY_ADDR)
            for off, desc, size_ in self.iter_objects():
                for at in self.ref_slots(off, desc, size_):
                    rebase(at)
            dev.fence()
        old_handles = {s for s, _ in shifts}
        if old_handles:
            def forward(addr):
                for s, delta in shifts:
                    if s <= addr < s + size:
                        return addr + delta
                return addr
            self._rebind_handles(forward)
        self._set_meta(L.OFF_HINT, "address_hint", new_base)
        self._persist_meta(L.OFF_HINT)
        self._set_meta(L.OFF_REMAP_TARGET, "remap_target", 0)
        self._persist_meta(L.OFF_REMAP_TARGET)
        return count

    # reporting

    def info(self):
        d = self.meta.as_dict()
        d["mapped_base"] = self.mapped_base
        d["klasses"] = len(self.klasses())
        d["roots"] = len(self._roots)
        d["persist_points"] = self.device.persist_point_count()
        return d


def descriptor_of(ref):
    if ref.owner is None:
        raise InvalidReference("dangling reference %r" % (ref,))
    return ref.owner.descriptor_of(ref)


def is_instance_of(ref, logical_name):
    """Checked-cast test that accepts either incarnation of the type."""
    return descriptor_of(ref).logical_name == logical_name


# named heaps

_OPEN = {}


def exists_heap(name, manager=None):
    return (manager or default_manager()).lookup(name) is not None


def create_heap(name, size, manager=None, crash_at_point=None,
                name_capacity=L.DEFAULT_NAME_TABLE_CAPACITY,
                klass_segment_size=L.DEFAULT_KLASS_SEGMENT_SIZE):
    """Create, format and register a named heap of ``size`` bytes.

    ``size`` is rounded up to a whole number of regions.  Registration in the
    name manager happens last and is the commit point.  ``crash_at_point`` arms
    the device's crash policy before formatting (test hook).
    """
    mgr = manager or default_manager()
    if mgr.lookup(name) is not None:
        raise NameExists(name)
    if len(name.encode("utf-8")) > L.NAME_MAX:
        raise NameTooLong(name)
    size = L.align_up(size, L.REGION_SIZE)
    if L.plan_layout(size, name_capacity, klass_segment_size) is None:
        raise SizeTooSmall("%d bytes cannot hold a heap (minimum %d)" % (
            size, L.minimum_heap_size(name_capacity, klass_segment_size)))
    path = mgr.path_for(name)
    dev = PersistentDevice.create_file(path, size)
    dev.crash_at_point = crash_at_point
    heap = None
    try:
        heap = Heap.format(dev, name=name, name_capacity=name_capacity,
                           klass_segment_size=klass_segment_size)
        mgr.register(name, str(path))
    except BaseException:
        if heap is not None:
            heap.abandon()
        else:
            dev.close()
        raise
    _OPEN[name] = heap
    return heap


def load_heap(name, manager=None, safety=Safety.USER_GUARANTEED, deny_hint=False):
    mgr = manager or default_manager()
    path = mgr.lookup(name)
    if path is None:
        raise UnknownHeap(name)
    if name in _OPEN and not _OPEN[name].closed:
        raise HeapBusy("heap %r is already loaded" % name)
    dev = PersistentDevice.open_file(path)
    heap = Heap.open(dev, safety=safety, deny_hint=deny_hint, name=name)
    _OPEN[name] = heap
    return heap
