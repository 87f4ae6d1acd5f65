"""Crash a collection halfway through compaction and watch the heap recover.

The device records every write; we replay the durable image up to a chosen
persist point, open it, and compare the reachable graph with the one a
clean collection produced.
"""

import random

from pjheap import gc
from pjheap.crashtest import build_garbage_graph, graph_signature
from pjheap.device import PersistentDevice, create_device, replay
from pjheap.heap import Heap
from pjheap.validate import validate_heap


def main():
    heap = Heap.format(create_device(2 << 20))
    build_garbage_graph(heap, 2000, 0.5, 4, random.Random(1))
    print("before gc: %d objects, %d bytes used" % (heap.object_count(), heap.top - heap.data_start))

    heap.device.start_recording()
    base = heap.device.durable_image()
    stats = gc.collect(heap)
    expect = graph_signature(heap)
    history = list(heap.device.history)
    print("clean gc: live=%d reclaimed=%d bytes, %d persist points"
          % (stats.live_objects, stats.reclaimed_bytes, len(history)))
    heap.abandon()

    for point in (len(history) // 4, len(history) // 2, 3 * len(history) // 4):
        crashed = Heap.open(PersistentDevice.from_image(bytes(replay(base, history, point))))
        same = graph_signature(crashed) == expect
        print("crash at point %5d: recovered=%s same graph=%s validator=%s"
              % (point, crashed.recovered, same, validate_heap(crashed).lines()[0]))
        crashed.abandon()


if __name__ == "__main__":
    main()
