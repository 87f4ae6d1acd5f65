"""Simulated byte-addressable persistent memory.

Stores land in a volatile view first.  ``flush`` snapshots the dirty cache
lines of a range into a pending set, and ``fence`` commits the pending set to
the durable image.  Only the durable image survives ``crash``.  Every fence is
a numbered persist point, and a crash policy can fire right after a chosen one.

The device can also be backed by a file.  The file holds a 16-byte header
(``PJHDEV01`` + little-endian capacity) followed by the durable image, and
each fence writes the committed lines through to it.
"""

import os
import struct
from dataclasses import dataclass

from .errors import DeviceCrashed, InjectedCrash, InvalidCapacity, OutOfBounds

LINE = 64
FILE_MAGIC = b"PJHDEV01"
FILE_HEADER = 16

_U64 = struct.Struct("<Q")


@dataclass(frozen=True)
class CrashReport:
    persist_point: int
    durable_snapshot: bytes


class PersistentDevice:
    def __init__(self, capacity, image=None, path=None, sync=False):
        if capacity <= 0 or capacity % LINE:
            raise InvalidCapacity("capacity must be a positive multiple of %d, got %r" % (LINE, capacity))
        self.capacity = capacity
        if image is None:
            self._durable = bytearray(capacity)
        else:
            if len(image) != capacity:
                raise InvalidCapacity("image length %d != capacity %d" % (len(image), capacity))
            self._durable = bytearray(image)
        self._cur = bytearray(self._durable)
        self._dirty = set()
        self._pending = {}
        self._points = 0
        self.crash_at_point = None
        self.history = None
        self.flush_count = 0
        self._crashed = False
        self.path = path
        self._fd = None
        self._sync = sync
        if path is not None:
            self._fd = os.open(path, os.O_RDWR)

    # construction

    @classmethod
    def create_file(cls, path, capacity, sync=False):
        """Create a zero-filled file-backed device at ``path`` (overwritten)."""
        if capacity <= 0 or capacity % LINE:
            raise InvalidCapacity("capacity must be a positive multiple of %d, got %r" % (LINE, capacity))
        with open(path, "wb") as f:
            f.write(FILE_MAGIC + _U64.pack(capacity))
            f.truncate(FILE_HEADER + capacity)
        return cls(capacity, path=path, sync=sync)

    @classmethod
    def open_file(cls, path, sync=False):
        with open(path, "rb") as f:
            head = f.read(FILE_HEADER)
            if len(head) != FILE_HEADER or head[:8] != FILE_MAGIC:
                raise InvalidCapacity("%s is not a device file" % path)
            capacity = _U64.unpack_from(head, 8)[0]
            image = f.read(capacity)
        if len(image) != capacity:
            raise InvalidCapacity("%s is truncated" % path)
        return cls(capacity, image=image, path=path, sync=sync)

    @classmethod
    def from_image(cls, image):
        return cls(len(image), image=image)

    def reload(self, image):
        """Reset a memory-only device to ``image`` as if freshly constructed.

        Reuses the existing buffers, which is much cheaper than building a
        new device when a harness opens thousands of crash images.
        """
        if self._fd is not None:
            raise ValueError("reload is for memory-only devices")
        if len(image) != self.capacity:
            raise InvalidCapacity("image length %d != capacity %d" % (len(image), self.capacity))
        self._durable[:] = image
        self._cur[:] = image
        self._dirty = set()
        self._pending = {}
        self._points = 0
        self.crash_at_point = None
        self.history = None
        self.flush_count = 0
        self._crashed = False
        return self

    def save(self, path):
        """Write the durable image to ``path`` in device-file format."""
        with open(path, "wb") as f:
            f.write(FILE_MAGIC + _U64.pack(self.capacity))
            f.write(self._durable)

    def close(self):
        if self._fd is not None:
            os.close(self._fd)
            self._fd = None

    # stores and loads

    def _check(self, offset, n):
        if self._crashed:
            raise DeviceCrashed("device crashed; call restart()")
        if offset < 0 or n < 0 or offset + n > self.capacity:
            raise OutOfBounds("[%d, %d) outside device of %d bytes" % (offset, offset + n, self.capacity))

    def write(self, offset, data):
        n = len(data)
        self._check(offset, n)
        if n == 0:
            return
        self._cur[offset:offset + n] = data
        first = offset // LINE
        last = (offset + n - 1) // LINE
        if first == last:
            self._dirty.add(first)
        else:
            self._dirty.update(range(first, last + 1))

    def write_u64(self, offset, value):
        self._check(offset, 8)
        _U64.pack_into(self._cur, offset, value)
        first = offset // LINE
        self._dirty.add(first)
        if (offset + 7) // LINE != first:
            self._dirty.add(first + 1)

    def read(self, offset, n):
        self._check(offset, n)
        return bytes(self._cur[offset:offset + n])

    def read_u64(self, offset):
        self._check(offset, 8)
        return _U64.unpack_from(self._cur, offset)[0]

    def view(self):
        """Read-only memoryview of the current (volatile) contents."""
        return memoryview(self._cur).toreadonly()

    def durable_read(self, offset, n):
        if offset < 0 or n < 0 or offset + n > self.capacity:
            raise OutOfBounds("[%d, %d) outside device" % (offset, offset + n))
        return bytes(self._durable[offset:offset + n])

    # persistence

    def flush(self, offset, n):
        self._check(offset, n)
        if n == 0 or not self._dirty:
            return
        first = offset // LINE
        last = (offset + n - 1) // LINE
        dirty = self._dirty
        cur = self._cur
        for line in range(first, last + 1):
            if line in dirty:
                base = line * LINE
                self._pending[line] = bytes(cur[base:base + LINE])
                dirty.discard(line)
        self.flush_count += 1

    def flush_all(self):
        for line in sorted(self._dirty):
            base = line * LINE
            self._pending[line] = bytes(self._cur[base:base + LINE])
        self._dirty.clear()

    def fence(self):
        if self._crashed:
            raise DeviceCrashed("device crashed; call restart()")
        pending = self._pending
        durable = self._durable
        for line, data in pending.items():
            base = line * LINE
            durable[base:base + LINE] = data
            if self._fd is not None:
                os.pwrite(self._fd, data, FILE_HEADER + base)
        if self._fd is not None and self._sync and pending:
            os.fsync(self._fd)
        if self.history is not None:
            self.history.append(pending)
        self._pending = {}
        self._points += 1
        if self.crash_at_point is not None and self._points == self.crash_at_point:
            raise InjectedCrash(self._crash())
        return self._points

    def persist(self, offset, n):
        """flush + fence over one range; returns the persist point."""
        self.flush(offset, n)
        return self.fence()

    def persist_point_count(self):
        return self._points

    # crashes

    def _crash(self):
        self._cur = bytearray(self._durable)
        self._dirty = set()
        self._pending = {}
        self._crashed = True
        return CrashReport(self._points, bytes(self._durable))

    def crash(self):
        report = self._crash()
        self._crashed = False
        return report

    def restart(self):
        """Clear the crashed state; the volatile view equals the durable image."""
        self._cur = bytearray(self._durable)
        self._dirty = set()
        self._pending = {}
        self._crashed = False

    @property
    def crashed(self):
        return self._crashed

    def start_recording(self):
        """Record each fence's committed line set; returns the base image."""
        self.history = []
        return bytes(self._durable)

    def durable_image(self):
        return bytes(self._durable)

    def is_dirty(self):
        return bool(self._dirty or self._pending)


def create_device(capacity):
    return PersistentDevice(capacity)


def replay(base, history, upto):
    """Durable image after applying the first ``upto`` recorded fences to ``base``."""
    img = bytearray(base)
    for pending in history[:upto]:
        for line, data in pending.items():
            img[line * LINE:(line + 1) * LINE] = data
    return img


def iter_crash_images(base, history):
    """Yield ``(point, image)`` for every persist point 0..len(history).

    The same bytearray is mutated between yields; copy it to keep it.
    """
    img = bytearray(base)
    yield 0, img
    for i, pending in enumerate(history, 1):
        for line, data in pending.items():
            img[line * LINE:(line + 1) * LINE] = data
        yield i, img
