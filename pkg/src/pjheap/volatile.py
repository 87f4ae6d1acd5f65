"""A small DRAM-side companion space.

It exists so that persistent objects can hold references to volatile memory
and so that the same logical type can have instances in both spaces.  Objects
here are plain Python dicts and are never collected.
"""

import itertools
import threading

from .errors import UnknownField
from .klass import REGISTRY, VOLATILE
from .refs import ObjRef, address_space

VOLATILE_BASE = 0x7F00_0000_0000
VOLATILE_SPAN = 1 << 40


class VolatileSpace:
    def __init__(self, base=VOLATILE_BASE, span=VOLATILE_SPAN):
        if not address_space.reserve(base, span, self):
            raise ValueError("volatile range %#x is taken" % base)
        self.base = base
        self.span = span
        self._next = itertools.count(base + 16, 16)
        self._objects = {}
        self._lock = threading.Lock()

    def contains(self, address):
        return self.base <= address < self.base + self.span

    def allocate(self, desc, array_length=None, **values):
        desc = REGISTRY.add_volatile(desc if desc.space == VOLATILE else desc.incarnate(VOLATILE))
        with self._lock:
            addr = next(self._next)
        if desc.is_array:
            n = array_length or 0
            state = {"__klass__": desc, "__elems__": [None if desc.elem_is_ref else 0] * n}
        else:
            state = {"__klass__": desc}
            for f in desc.fields:
                state[f.name] = None if f.fmt == "ref" else (b"\0" * f.width if f.fmt.endswith("s") else 0)
        ref = ObjRef(VOLATILE, addr, self)
        self._objects[addr] = (ref, state)
        for k, v in values.items():
            self.set_field(ref, k, v)
        return ref

    def resolve(self, address):
        hit = self._objects.get(address)
        return hit[0] if hit else None

    def descriptor_of(self, ref):
        return self._objects[ref.address][1]["__klass__"]

    def get_field(self, ref, name):
        state = self._objects[ref.address][1]
        if name not in state or name.startswith("__"):
            raise UnknownField(name)
        return state[name]

    def set_field(self, ref, name, value):
        state = self._objects[ref.address][1]
        if name not in state or name.startswith("__"):
            raise UnknownField(name)
        state[name] = value

    def get_element(self, ref, i):
        return self._objects[ref.address][1]["__elems__"][i]

    def set_element(self, ref, i, value):
        self._objects[ref.address][1]["__elems__"][i] = value

    def __len__(self):
        return len(self._objects)


_companion = None


def companion():
    """The process-wide volatile space, created on first use."""
    global _companion
    if _companion is None:
        _companion = VolatileSpace()
    return _companion


def resolve_foreign(address):
    """Map an out-of-heap address to a volatile ObjRef (possibly dangling)."""
    owner = address_space.owner_of(address)
    if isinstance(owner, VolatileSpace):
        ref = owner.resolve(address)
        if ref is not None:
            return ref
    return ObjRef(VOLATILE, address, None)
