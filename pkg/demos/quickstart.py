"""Create a named heap, store a small object graph, close it, load it back.

    python3 demos/quickstart.py [workdir]
"""

import sys
import tempfile

from pjheap import NameManager, TypeDescriptor, create_heap, load_heap

PERSON = TypeDescriptor.define("demo.Person", [("id", "q"), ("age", "i"), ("name", "ref"), ("friend", "ref")])


def main(workdir):
    names = NameManager(workdir)

    heap = create_heap("people", 1 << 20, manager=names)
    jimmy = heap.new(PERSON, id=1, age=10, name=heap.new_string("Jimmy"))
    ann = heap.new(PERSON, id=2, age=12, name=heap.new_string("Ann"), friend=jimmy)
    heap.flush_object(jimmy)
    heap.flush_object(ann)
    heap.set_root("ann", ann)  # durable once set_root returns
    print("stored %d objects, top=%d" % (heap.object_count(), heap.top))
    heap.close()

    heap = load_heap("people", manager=names)
    ann = heap.get_root("ann")
    friend = heap.get_field(ann, "friend")
    print("root ann ->", heap.read_string(heap.get_field(ann, "name")),
          "age", heap.get_field(ann, "age"))
    print("ann.friend ->", heap.read_string(heap.get_field(friend, "name")),
          "age", heap.get_field(friend, "age"))
    heap.close()


if __name__ == "__main__":
    main(sys.argv[1] if len(sys.argv) > 1 else tempfile.mkdtemp(prefix="pjh-demo-"))
