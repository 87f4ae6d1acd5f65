"""Persist plain entities through a transaction, crash the next commit, reopen.

Shows field-level dirty tracking and that a torn commit rolls back to the
previous state.
"""

from pjheap import pjo
from pjheap.device import PersistentDevice, create_device
from pjheap.errors import InjectedCrash
from pjheap.heap import Heap

REG = pjo.EntityRegistry()
ACCOUNT = pjo.EntityDescriptor("demo.Account", [("id", "q"), ("owner", "str"), ("balance", "q")])
REG.register(ACCOUNT)
Account = pjo.enhance(ACCOUNT, REG)


def balances(heap):
    em = pjo.EntityManager(heap, registry=REG)
    return {a.key: a.get("balance") for a in em.all(Account)}


def main():
    heap = Heap.format(create_device(4 << 20))
    em = pjo.EntityManager(heap, registry=REG)
    a, b = Account(id=1, owner="ann", balance=100), Account(id=2, owner="bob", balance=0)
    txn = em.begin()
    txn.persist(a)
    txn.persist(b)
    txn.commit()
    print("committed:", balances(heap))

    # transfer 40, but crash a few persist points into the commit
    a.set("balance", 60)
    b.set("balance", 40)
    print("dirty fields:", a.dirty_fields(), b.dirty_fields())
    txn = em.begin()
    txn.persist(a)
    txn.persist(b)
    heap.device.crash_at_point = heap.device.persist_point_count() + 3
    try:
        txn.commit()
    except InjectedCrash as exc:
        image = exc.report.durable_snapshot
    heap.abandon()

    heap = Heap.open(PersistentDevice.from_image(image))
    print("after crash + reopen:", balances(heap), "(the transfer rolled back)")
    heap.abandon()


if __name__ == "__main__":
    main()
