"""Type descriptors (Klasses), their on-media encoding, and alias checks.

A descriptor lives in two places at once: the process keeps a runtime
incarnation (the volatile Klass) and each heap stores a persistent copy in its
Klass segment.  Both carry the same logical name, and type checks compare
logical names so that the two incarnations are interchangeable.
"""

import struct
import threading
from collections import namedtuple

from .errors import CorruptDescriptor, LayoutMismatch, SegmentFull
from .layout import ALIGN, HEADER_SIZE, KIND_KLASS, align_up
from .refs import PERSISTENT, VOLATILE


SCALAR = 0
REF = 1

ARRAY_HEADER = HEADER_SIZE + 8

FILLER = "__filler__"
FILLER_WORD = "__filler_word__"
BUILTIN_NAMES = frozenset((FILLER, FILLER_WORD))

_SCALAR_CODES = "bBhHiIqQefd?"

Field = namedtuple("Field", "name offset kind fmt width")
Field.__doc__ = """One slot of an object: ``kind`` is SCALAR or REF; ``fmt`` is a
struct code (``'q'``, ``'d'``, ``'16s'``...) or ``'ref'``."""


def _width(fmt):
    if fmt == "ref":
        return 8
    return struct.calcsize("<" + fmt)


def _check_fmt(fmt):
    if fmt == "ref":
        return
    if fmt in _SCALAR_CODES:
        return
    if fmt.endswith("s") and fmt[:-1].isdigit() and int(fmt[:-1]) > 0:
        return
    raise ValueError("unsupported field format %r" % fmt)


class TypeDescriptor:
    """Layout of one logical type.

    Instances are built with :meth:`define` or :meth:`define_array`; the
    persistent incarnation is produced by :func:`register_type`.
    """

    def __init__(self, logical_name, instance_size, fields=(), space=VOLATILE,
                 elem=None, address=None):
        self.logical_name = logical_name
        self.instance_size = instance_size
        self.fields = tuple(fields)
        self.space = space
        self.elem = elem
        self.address = address
        self.runtime_bound = space == VOLATILE
        self._by_name = {f.name: f for f in self.fields}
        self.ref_offsets = tuple(f.offset for f in self.fields if f.kind == REF)

    @classmethod
    def define(cls, name, fields):
        """Lay out ``fields`` (``(name, fmt)`` pairs) after the object header."""
        out = []
        off = HEADER_SIZE
        seen = set()
        for fname, fmt in fields:
            if fname in seen:
                raise ValueError("duplicate field %r" % fname)
            seen.add(fname)
            _check_fmt(fmt)
            width = _width(fmt)
            align = 8 if fmt == "ref" else (min(width, 8) if not fmt.endswith("s") else 1)
            off = align_up(off, align)
            out.append(Field(fname, off, REF if fmt == "ref" else SCALAR, fmt, width))
            off += width
        return cls(name, max(align_up(off), HEADER_SIZE), out)

    @classmethod
    def define_array(cls, name, elem):
        """Array type whose elements are ``elem`` (a struct code or ``'ref'``)."""
        _check_fmt(elem)
        return cls(name, ARRAY_HEADER, (), elem=elem)

    @property
    def is_array(self):
        return self.elem is not None

    @property
    def elem_width(self):
        return _width(self.elem) if self.elem is not None else 0

    @property
    def elem_is_ref(self):
        return self.elem == "ref"

    def field(self, name):
        return self._by_name[name]

    def has_field(self, name):
        return name in self._by_name

    def object_size(self, length=0):
        if self.elem is None:
            return self.instance_size
        return align_up(ARRAY_HEADER + length * self.elem_width)

    def layout_key(self):
        return (self.logical_name, self.instance_size, self.elem, self.fields)

    def incarnate(self, space, address=None):
        return TypeDescriptor(self.logical_name, self.instance_size, self.fields,
                              space=space, elem=self.elem, address=address)

    def __repr__(self):
        where = "" if self.address is None else "@%#x" % self.address
        return "<TypeDescriptor %s %s%s>" % (self.logical_name, self.space, where)


def alias_of(a, b):
    """True when ``a`` and ``b`` are the same logical type in different places."""
    if a is b:
        return True
    if a.logical_name != b.logical_name:
        return False
    if a.space != b.space:
        return True
    return a.space == b.space and a.address == b.address and a.layout_key() == b.layout_key()


# encoding:
#   u32 total_len, u16 name_len, u8 flags, u8 reserved,
#   u32 instance_size, u16 field_count, u16 reserved,
#   8s elem_fmt, name bytes (padded to 8),
#   field_count x {u32 offset, u16 width, u8 kind, u8 reserved,
#                  u32 name_off, u16 name_len, u16 reserved},
#   field-name blob (padded to 8)
_HEAD = struct.Struct("<IHBBIHH8s")
_FIELD = struct.Struct("<IHBBIHH")
FLAG_ARRAY = 1


def encode_descriptor(desc):
    name = desc.logical_name.encode("utf-8")
    blob = bytearray()
    recs = bytearray()
    for f in desc.fields:
        fname = f.name.encode("utf-8")
        fmt = f.fmt.encode("ascii")
        # the format string is kept right after the field name
        recs += _FIELD.pack(f.offset, f.width, f.kind, len(fmt), len(blob), len(fname), 0)
        blob += fname + fmt
    elem = (desc.elem or "").encode("ascii")
    if len(elem) > 8:
        raise ValueError("element format too long")
    head_len = _HEAD.size + align_up(len(name))
    total = head_len + len(recs) + align_up(len(blob))
    out = bytearray(total)
    _HEAD.pack_into(out, 0, total, len(name), FLAG_ARRAY if desc.is_array else 0, 0,
                    desc.instance_size, len(desc.fields), 0, elem)
    out[_HEAD.size:_HEAD.size + len(name)] = name
    out[head_len:head_len + len(recs)] = recs
    out[head_len + len(recs):head_len + len(recs) + len(blob)] = blob
    return bytes(out)


def decode_descriptor(buf, offset, limit):
    """Decode the descriptor at ``offset``; returns ``(descriptor, encoded_len)``."""
    try:
        if offset + _HEAD.size > limit:
            raise CorruptDescriptor("descriptor header past segment end")
        total, nlen, flags, _, size, nfields, _, elem = _HEAD.unpack_from(buf, offset)
        if total < _HEAD.size or offset + total > limit or total % ALIGN:
            raise CorruptDescriptor("bad descriptor length %d at %#x" % (total, offset))
        p = offset + _HEAD.size
        name = bytes(buf[p:p + nlen]).decode("utf-8")
        p += align_up(nlen)
        blob_at = p + nfields * _FIELD.size
        fields = []
        for i in range(nfields):
            foff, width, kind, fmtlen, noff, fnlen, _ = _FIELD.unpack_from(buf, p + i * _FIELD.size)
            s = blob_at + noff
            fname = bytes(buf[s:s + fnlen]).decode("utf-8")
            fmt = bytes(buf[s + fnlen:s + fnlen + fmtlen]).decode("ascii")
            if kind not in (SCALAR, REF) or _width(fmt) != width:
                raise CorruptDescriptor("bad field record %r in %s" % (fname, name))
            fields.append(Field(fname, foff, kind, fmt, width))
        elem = elem.rstrip(b"\0").decode("ascii") or None
        if bool(flags & FLAG_ARRAY) != (elem is not None):
            raise CorruptDescriptor("array flag disagrees with element format in %s" % name)
        if size < 8 or size % ALIGN:
            raise CorruptDescriptor("bad instance size %d in %s" % (size, name))
        for f in fields:
            if f.offset < HEADER_SIZE or f.offset + f.width > size:
                raise CorruptDescriptor("field %s outside instance of %s" % (f.name, name))
    except (struct.error, UnicodeDecodeError, ValueError) as exc:
        if isinstance(exc, CorruptDescriptor):
            raise
        raise CorruptDescriptor(str(exc)) from exc
    return TypeDescriptor(name, size, fields, space=PERSISTENT, elem=elem, address=offset), total


def builtin_descriptors():
    """Descriptors every Klass segment starts with."""
    filler = TypeDescriptor.define_array(FILLER, "B")
    word = TypeDescriptor(FILLER_WORD, 8, ())
    return [filler, word]


class TypeRegistry:
    """Process-wide map from logical name to its volatile and persistent Klasses."""

    def __init__(self):
        self._lock = threading.Lock()
        self._volatile = {}
        self._persistent = {}

    def add_volatile(self, desc):
        with self._lock:
            cur = self._volatile.setdefault(desc.logical_name, desc)
        if cur is not desc and cur.layout_key() != desc.layout_key():
            raise LayoutMismatch("volatile type %s already defined differently" % desc.logical_name)
        return cur

    def add_persistent(self, heap_id, desc):
        with self._lock:
            self._persistent.setdefault(desc.logical_name, {})[heap_id] = desc

    def drop_heap(self, heap_id):
        with self._lock:
            for per_heap in self._persistent.values():
                per_heap.pop(heap_id, None)

    def lookup(self, logical_name):
        """``(volatile descriptor or None, {heap_id: persistent descriptor})``."""
        with self._lock:
            return self._volatile.get(logical_name), dict(self._persistent.get(logical_name, {}))


REGISTRY = TypeRegistry()


def register_type(heap, proto):
    """Install ``proto`` in the heap's Klass segment; returns its address.

    The descriptor bytes are persisted before the name-table entry that makes
    them reachable, so a crash in between leaves only unreachable bytes.
    """
    with heap.lock:
        existing = heap._klass_by_name.get(proto.logical_name)
        if existing is not None:
            if existing.layout_key() != proto.layout_key():
                raise LayoutMismatch("%s already registered with a different layout" % proto.logical_name)
            return existing.address
        data = encode_descriptor(proto)
        addr = heap._klass_top
        meta = heap.meta
        if addr + len(data) > meta.klass_segment_location + meta.klass_segment_size:
            raise SegmentFull("no room for %s in the Klass segment" % proto.logical_name)
        dev = heap.device
        dev.write(addr, data)
        dev.persist(addr, len(data))
        heap._insert_entry(KIND_KLASS, proto.logical_name, addr)
        desc = proto.incarnate(PERSISTENT, addr)
        desc.runtime_bound = True
        heap._bind_klass(desc, len(data))
        return addr


def reinitialize_types(heap):
    """Rebuild the runtime state of every descriptor in place.

    Returns the number of user descriptors rebound (the two filler types every
    segment carries are rebound too but not counted).

    Object headers keep their klass words: descriptors are decoded where they
    already sit, so nothing in the data heap is touched.
    """
    meta = heap.meta
    limit = meta.klass_segment_location + meta.klass_segment_size
    view = heap.device.view()
    heap._klass_by_addr = {}
    heap._klass_by_name = {}
    heap._klass_top = meta.klass_segment_location
    count = 0
    for _, name, addr in heap._entries(KIND_KLASS):
        if not meta.klass_segment_location <= addr < limit:
            raise CorruptDescriptor("Klass entry %s points outside the segment" % name)
        desc, n = decode_descriptor(view, addr, limit)
        if desc.logical_name != name:
            raise CorruptDescriptor("Klass entry %s names descriptor %s" % (name, desc.logical_name))
        desc.runtime_bound = False
        heap._bind_klass(desc, n)
        desc.runtime_bound = True
        if name not in BUILTIN_NAMES:
            count += 1
    return count
