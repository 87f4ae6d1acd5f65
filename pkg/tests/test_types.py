import pytest
from hypothesis import given, settings, strategies as st

from conftest import crash_reopen, reopen
from pjheap.device import PersistentDevice, create_device
from pjheap.errors import InjectedCrash, LayoutMismatch, SegmentFull
from pjheap.heap import Heap, descriptor_of, is_instance_of
from pjheap.klass import (PERSISTENT, VOLATILE, TypeDescriptor, alias_of, decode_descriptor,
                          encode_descriptor)
from pjheap.volatile import companion

PERSON = TypeDescriptor.define("Person", [("id", "q"), ("age", "i"), ("name", "ref")])
ADDRESS = TypeDescriptor.define("Address", [("zip", "I"), ("street", "ref")])


def test_define_layout():
    t = TypeDescriptor.define("Mixed", [("a", "B"), ("r", "ref"), ("h", "h"), ("d", "d")])
    offs = {f.name: f.offset for f in t.fields}
    assert offs == {"a": 16, "r": 24, "h": 32, "d": 40}
    assert t.instance_size == 48
    assert t.ref_offsets == (24,)
    with pytest.raises(ValueError):
        TypeDescriptor.define("Dup", [("a", "q"), ("a", "q")])


def test_register_idempotent(heap):
    a = heap.register_type(PERSON)
    n = heap.device.persist_point_count()
    assert heap.register_type(PERSON) == a
    assert heap.device.persist_point_count() == n
    assert [d.logical_name for d in heap.klasses()] == ["Person"]


def test_register_layout_mismatch(heap):
    heap.register_type(PERSON)
    other = TypeDescriptor.define("Person", [("id", "q")])
    with pytest.raises(LayoutMismatch):
        heap.register_type(other)
    with pytest.raises(LayoutMismatch):
        heap.allocate(other)


def test_segment_full(heap):
    with pytest.raises(SegmentFull):
        for i in range(100000):
            heap.register_type(TypeDescriptor.define("T%d" % i, [("f%d" % j, "q") for j in range(20)]))


def test_reinitialize_count(heap):
    h = reopen(heap)
    assert h.reinitialized == 0
    for i in range(9):
        h.register_type(TypeDescriptor.define("Data%d" % i, [("x", "q")]))
    h = reopen(h)
    assert h.reinitialized == 9
    assert all(d.runtime_bound and d.space == PERSISTENT for d in h.klasses())
    h.abandon()


def test_klass_words_stable(heap):
    refs = [heap.new(PERSON, id=i) for i in range(10)] + [heap.new(ADDRESS, zip=i) for i in range(10)]
    words = {r.address - heap.base: heap.device.read_u64(r.address - heap.base) for r in refs}
    addrs = {d.logical_name: d.address for d in heap.klasses()}
    h = reopen(heap)
    assert {d.logical_name: d.address for d in h.klasses()} == addrs
    for off, w in words.items():
        assert h.device.read_u64(off) == w
    h = reopen(h, deny_hint=True)  # remap moves data, never the Klass words
    for off, w in words.items():
        assert h.device.read_u64(off) == w
    h.abandon()


def test_crash_between_descriptor_and_entry(heap):
    dev = heap.device
    dev.crash_at_point = dev.persist_point_count() + 1  # descriptor persisted, entry not yet
    with pytest.raises(InjectedCrash):
        heap.register_type(PERSON)
    h = Heap.open(PersistentDevice.from_image(dev.durable_image()))
    assert h.klasses() == []
    addr = h.register_type(PERSON)
    assert addr == h.meta.klass_segment_location + _builtin_bytes()
    h.abandon()


def _builtin_bytes():
    from pjheap.klass import builtin_descriptors
    return sum(len(encode_descriptor(d)) for d in builtin_descriptors())


def test_crash_inside_entry_write(heap):
    dev = heap.device
    dev.crash_at_point = dev.persist_point_count() + 2  # entry body durable, kind byte not
    with pytest.raises(InjectedCrash):
        heap.register_type(PERSON)
    h = Heap.open(PersistentDevice.from_image(dev.durable_image()))
    assert h.klasses() == []
    h.abandon()


def test_encoding_roundtrip():
    for d in (PERSON, ADDRESS, TypeDescriptor.define_array("Person[]", "ref"),
              TypeDescriptor.define("Blob", [("b", "24s"), ("f", "f")])):
        data = encode_descriptor(d)
        assert len(data) % 8 == 0
        back, n = decode_descriptor(data, 0, len(data))
        assert n == len(data)
        assert back.layout_key() == d.layout_key()


# alias semantics

def test_alias_of_examples(heap):
    pers = heap._resolve_klass(PERSON)
    vol = PERSON.incarnate(VOLATILE)
    assert alias_of(vol, pers) and alias_of(pers, vol)
    assert alias_of(pers, pers)
    assert not alias_of(pers, heap._resolve_klass(ADDRESS))


def test_checked_cast_both_incarnations(heap):
    a = companion().allocate(PERSON, id=1)
    b = heap.new(PERSON, id=2)
    for r in (a, b):
        assert is_instance_of(r, "Person")
        assert not is_instance_of(r, "Address")
    assert descriptor_of(a).space == VOLATILE and descriptor_of(b).space == PERSISTENT
    assert alias_of(descriptor_of(a), descriptor_of(b))
    # a persistent field may hold the volatile incarnation and vice versa
    heap.set_field(b, "name", a)
    companion().set_field(a, "name", b)
    assert is_instance_of(heap.get_field(b, "name"), "Person")
    assert is_instance_of(companion().get_field(a, "name"), "Person")


def test_same_name_in_two_heaps(make_heap):
    h1, h2 = make_heap(1 << 20), make_heap(1 << 20)
    d1, d2 = h1._resolve_klass(PERSON), h2._resolve_klass(PERSON)
    assert d1 is not d2
    from pjheap.klass import REGISTRY
    vol, pers = REGISTRY.lookup("Person")
    assert pers[id(h1)] is d1 and pers[id(h2)] is d2


names = st.text("abcdefghijklmnopqrstuvwxyz", min_size=1, max_size=12)
fmts = st.sampled_from(["b", "B", "h", "H", "i", "I", "q", "Q", "f", "d", "?", "ref", "12s"])
field_lists = st.lists(st.tuples(names, fmts), min_size=1, max_size=8, unique_by=lambda t: t[0])


@settings(max_examples=60, deadline=None)
@given(st.lists(st.tuples(names, field_lists), min_size=1, max_size=6, unique_by=lambda t: t[0]))
def test_alias_property(types):
    """No spurious type errors: every incarnation casts to its own name only."""
    h = Heap.format(create_device(1 << 20))
    try:
        vol = companion()
        made = []
        for tname, fields in types:
            # suffix keeps generated names apart from other tests' types
            d = TypeDescriptor.define("P_%s_%d" % (tname, len(fields)), fields)
            try:
                made.append((d, vol.allocate(d), h.allocate(d)))
            except LayoutMismatch:
                # the same generated name was already defined differently in this process
                continue
        spurious = 0
        for d, v, p in made:
            dv, dp = descriptor_of(v), descriptor_of(p)
            ok = (is_instance_of(v, d.logical_name) and is_instance_of(p, d.logical_name)
                  and alias_of(dv, dp) and alias_of(dp, dv) and alias_of(dv, dv) and alias_of(dp, dp))
            for e, _, q in made:
                if e.logical_name != d.logical_name:
                    ok = ok and not is_instance_of(v, e.logical_name) and not is_instance_of(p, e.logical_name)
                    ok = ok and not alias_of(dp, descriptor_of(q)) and not alias_of(dv, descriptor_of(q))
            spurious += not ok
        assert spurious == 0
        h = reopen(h)
        for d, _, _ in made:
            assert h.klass(d.logical_name).layout_key() == d.layout_key()
    finally:
        h.abandon()


def test_zero_types_after_crash_reopen(heap):
    h = crash_reopen(heap)
    assert h.reinitialized == 0
    h.abandon()
