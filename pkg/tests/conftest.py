import os
import sys

import pytest

sys.path.insert(0, os.path.dirname(__file__))

from pjheap import names  # noqa: E402
from pjheap.device import create_device  # noqa: E402
from pjheap.heap import Heap  # noqa: E402


@pytest.fixture
def manager(tmp_path):
    """A private name manager for create_heap/load_heap."""
    old = names._default
    mgr = names.set_default_root(tmp_path / "heaps")
    yield mgr
    names._default = old


@pytest.fixture
def make_heap():
    """Format heaps on fresh simulated devices; all are unmapped afterwards."""
    made = []

    def make(size=4 << 20):
        h = Heap.format(create_device(size))
        made.append(h)
        return h

    yield make
    for h in made:
        h.abandon()


@pytest.fixture
def heap(make_heap):
    return make_heap()


def reopen(heap, **kw):
    """Crash-free reopen of a heap from its durable image."""
    from pjheap.device import PersistentDevice
    heap.device.flush_all()
    heap.device.fence()
    img = heap.device.durable_image()
    heap.abandon()
    return Heap.open(PersistentDevice.from_image(img), **kw)


def crash_reopen(heap, **kw):
    """Drop everything not yet fenced and reopen."""
    from pjheap.device import PersistentDevice
    img = heap.device.durable_image()
    heap.abandon()
    return Heap.open(PersistentDevice.from_image(img), **kw)


@pytest.fixture(autouse=True)
def _unmap_named_heaps():
    yield
    from pjheap import heap as heap_mod
    for h in list(heap_mod._OPEN.values()):
        h.abandon()
    heap_mod._OPEN.clear()
