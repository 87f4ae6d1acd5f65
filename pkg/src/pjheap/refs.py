"""Object references and the simulated virtual address space."""

import bisect
import threading

PERSISTENT = "persistent"
VOLATILE = "volatile"

HEAP_AREA_BASE = 0x1000_0000_0000
HEAP_AREA_STEP = 1 << 32


class ObjRef:
    """A reference to an object in the persistent heap or the volatile space.

    ``address`` is an absolute virtual address.  References are interned per
    owner, so identity comparison is reference equality; the collector and
    remapping update ``address`` in place for every live handle.
    """

    __slots__ = ("space", "address", "owner", "__weakref__")

    def __init__(self, space, address, owner):
        self.space = space
        self.address = address
        self.owner = owner

    @property
    def is_persistent(self):
        return self.space == PERSISTENT

    def __repr__(self):
        return "ObjRef(%s, %#x)" % (self.space, self.address)


class AddressSpace:
    """Non-overlapping reservations of virtual address ranges."""

    def __init__(self):
        self._lock = threading.Lock()
        self._starts = []
        self._ranges = {}

    def _overlaps(self, start, end):
        i = bisect.bisect_right(self._starts, start)
        if i > 0:
            s = self._starts[i - 1]
            if self._ranges[s][0] > start:
                return True
        if i < len(self._starts) and self._starts[i] < end:
            return True
        return False

    def reserve(self, start, size, owner):
        with self._lock:
            if self._overlaps(start, start + size):
                return False
            bisect.insort(self._starts, start)
            self._ranges[start] = (start + size, owner)
            return True

    def release(self, start, owner=None):
        with self._lock:
            hit = self._ranges.get(start)
            if hit is None or (owner is not None and hit[1] is not owner):
                return
            del self._ranges[start]
            self._starts.remove(start)

    def owner_of(self, address):
        with self._lock:
            i = bisect.bisect_right(self._starts, address)
            if i == 0:
                return None
            s = self._starts[i - 1]
            end, owner = self._ranges[s]
            return owner if address < end else None

    def is_free(self, start, size):
        with self._lock:
            return not self._overlaps(start, start + size)

    def find_free(self, size, avoid=()):
        """Lowest step-aligned start in the heap area clear of reservations and ``avoid``."""
        step = HEAP_AREA_STEP * max(1, -(-size // HEAP_AREA_STEP))
        start = HEAP_AREA_BASE
        with self._lock:
            while True:
                end = start + size
                clash = self._overlaps(start, end) or any(a < end and start < a + n for a, n in avoid)
                if not clash:
                    return start
                start += step


address_space = AddressSpace()
