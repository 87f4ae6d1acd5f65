import pytest

from pjheap import crashtest as ct


@pytest.mark.parametrize("name", ["roots", "remap", "create", "alloc300", "gc400"])
def test_sweeps_pass(name):
    res = ct.run_sweep(name)
    assert res.ok, res.lines()[:5]
    assert res.points == res.total == len(res.checked)


def test_sampled_points():
    w = ct.make_workload("alloc200")
    res = ct.sweep(w, points=lambda n: [0, n // 2, n])
    assert res.points == 3 and res.ok
    assert res.checked == sorted(res.checked)


def test_make_workload_names():
    assert ct.make_workload("alloc10k").objects == 10000
    assert ct.make_workload("gc5k").objects == 5000
    assert isinstance(ct.make_workload("txn"), ct.TxnWorkload)
    with pytest.raises(KeyError):
        ct.make_workload("bogus")


def test_oracle_catches_damage():
    """A check that reports a lost root when the image is tampered with."""

    class Tamper(ct.AllocWorkload):
        def check(self, heap, point, fence_lines, touched):
            if point == self.victim:
                slot = heap._roots["root0"]
                heap.device.write_u64(heap._slot_off(slot) + 56, 0)
            return super().check(heap, point, fence_lines, touched)

    w = Tamper(objects=100, roots=2)
    w.victim = None
    res = ct.sweep(w)
    assert res.ok
    w = Tamper(objects=100, roots=2)
    w.victim = res.total - 1
    bad = ct.sweep(w, points=[w.victim])
    assert not bad.ok and "root0" in bad.failures[0][1]


def test_signature_ignores_addresses(make_heap):
    import random
    a, b = make_heap(1 << 20), make_heap(1 << 20)
    ct.build_garbage_graph(a, 200, 0.2, 3, random.Random(1))
    ct.build_garbage_graph(b, 200, 0.2, 3, random.Random(1))
    assert a.base != b.base
    assert ct.graph_signature(a) == ct.graph_signature(b)
