"""Persistent objects with transactions.

Entities are plain volatile objects with a dirty bitmap and a binding to a
persistent copy in the heap.  Commit writes only the dirty fields, logging the
old 8-byte words first, and the log's ``committed`` word is the commit point.
After commit, reference-valued fields are redirected to the persistent data
(deduplication); a later write lands in a shadow field (copy-on-write) and
reaches the heap at the next commit.

Each entity type has a root-anchored open-addressed table (a ``ref[]``)
keyed by the type's first field, which must be an integer.

Undo-log layout (one ``Q[]`` per manager, header cache-line aligned)::

    header  txn id, record count, committed, reserved    (u64 each)
    records heap offset, old word                        (u64 each)
"""

import enum
import itertools
import struct
import zlib

import numpy as np

from . import layout as L
from .errors import (InactiveTransaction, NestedTransaction, UnknownField,
                     UnregisteredType)
from .heap import BYTE_ARRAY
from .klass import TypeDescriptor

_U64 = struct.Struct("<Q")

UNDO_PREFIX = "__pjo_undo"
TABLE_PREFIX = "__pjo_tbl."
LOG_KLASS = TypeDescriptor.define_array("__pjo_undo_log__", "Q")
TABLE_KLASS = TypeDescriptor.define_array("__pjo_table__", "ref")
LIST_KLASS = TypeDescriptor.define_array("__pjo_list__", "ref")

HEADER = 32
RECORD = 16
LINE = 64
MIN_TABLE = 16
DEFAULT_LOG_RECORDS = 1024

_INT_CODES = "bBhHiIqQ"


class State(enum.Enum):
    TRANSIENT = "transient"
    MANAGED = "managed"
    COMMITTED = "committed"


class TxStatus(enum.Enum):
    ACTIVE = "active"
    COMMITTING = "committing"
    COMMITTED = "committed"
    ROLLED_BACK = "rolled_back"


# schema

def _field_kind(spec):
    if spec == "str":
        return "str", None
    if spec.startswith("ref:"):
        return "ref", spec[4:]
    if spec.startswith("list:"):
        return "list", spec[5:]
    return "scalar", None


class EntityDescriptor:
    """Persistable fields of one entity type.

    ``fields`` are ``(name, spec)`` pairs where spec is a struct code, ``'str'``,
    ``'ref:Type'`` or ``'list:Type'``.  A parent's fields come first; the first
    field overall is the key.
    """

    def __init__(self, name, fields, parent=None):
        self.name = name
        self.parent = parent
        own = list(fields)
        self.fields = (list(parent.fields) if parent else []) + own
        names = [f for f, _ in self.fields]
        if len(set(names)) != len(names):
            raise ValueError("duplicate field in %s" % name)
        if not self.fields:
            raise ValueError("%s has no fields" % name)
        key, spec = self.fields[0]
        if spec not in _INT_CODES:
            raise ValueError("key field %s of %s must be an integer" % (key, name))
        self.key = key
        self.index = {f: i for i, (f, _) in enumerate(self.fields)}
        self.kinds = {f: _field_kind(s) for f, s in self.fields}
        self.type_descriptor = TypeDescriptor.define(
            name, [(f, s if self.kinds[f][0] == "scalar" else "ref") for f, s in self.fields])

    def targets(self):
        return {t for k, t in self.kinds.values() if t is not None}

    def is_a(self, other_name):
        d = self
        while d is not None:
            if d.name == other_name:
                return True
            d = d.parent
        return False

    def __repr__(self):
        return "<EntityDescriptor %s>" % self.name


class EntityRegistry:
    def __init__(self):
        self.types = {}

    def register(self, *descs):
        """Register a group of descriptors; references must stay inside the closure."""
        known = set(self.types) | {d.name for d in descs}
        for d in descs:
            missing = d.targets() - known
            if missing:
                raise UnregisteredType("%s references unregistered %s" % (d.name, sorted(missing)))
        for d in descs:
            self.types[d.name] = d
        return descs

    def get(self, name):
        try:
            return self.types[name]
        except KeyError:
            raise UnregisteredType(name) from None


REGISTRY = EntityRegistry()


def enhance(desc, registry=REGISTRY):
    """Register ``desc`` and return a constructor of managed entities."""
    registry.register(desc)

    def factory(**values):
        e = ManagedEntity(desc)
        for k, v in values.items():
            e.set(k, v)
        return e

    factory.descriptor = desc
    factory.__name__ = desc.name
    return factory


class ManagedEntity:
    """Application-side object: volatile values, dirty bits, binding, shadows."""

    def __init__(self, desc):
        self.desc = desc
        self.state = State.TRANSIENT
        self.dirty = 0
        self.binding = None
        self.manager = None
        self.shadow = {}
        self.redirected = set()
        self._values = {}
        for f, _ in desc.fields:
            kind = desc.kinds[f][0]
            self._values[f] = [] if kind == "list" else (None if kind in ("ref", "str") else 0)

    # field access

    def _check(self, name):
        if name not in self.desc.index:
            raise UnknownField("%s has no field %s" % (self.desc.name, name))

    def set(self, name, value):
        self._check(name)
        kind = self.desc.kinds[name][0]
        if kind == "list":
            value = list(value)
        self.dirty |= 1 << self.desc.index[name]
        if name in self.redirected:
            # copy-on-write: the persistent copy is left alone until commit
            self.shadow[name] = value
        else:
            self._values[name] = value

    def get(self, name):
        self._check(name)
        if name in self.shadow:
            return self.shadow[name]
        if name in self.redirected:
            return self.manager._read_persistent(self, name)
        return self._values[name]

    def field_ref(self, name):
        """The persistent object backing a redirected str/list field (else None)."""
        self._check(name)
        if name in self.redirected and name not in self.shadow:
            return self.manager.heap.get_field(self.binding, name)
        return None

    @property
    def key(self):
        return self.get(self.desc.key)

    def is_dirty(self, name):
        return bool(self.dirty >> self.desc.index[name] & 1)

    def dirty_fields(self):
        return [f for f, _ in self.desc.fields if self.is_dirty(f)]

    def __repr__(self):
        return "<%s key=%r %s>" % (self.desc.name, self._values.get(self.desc.key), self.state.value)


# undo log primitives

def _log_area(heap, log_ref):
    off = heap._offset(log_ref)
    n = heap.array_length(log_ref) * 8
    start = L.align_up(off + 24, LINE)
    return start, (off + 24 + n - start - HEADER) // RECORD


def undo_state(heap, log_ref):
    """``'clean'``, ``'committed'`` (flag set, not truncated) or ``'pending'``."""
    at, _ = _log_area(heap, log_ref)
    dev = heap.device
    count = dev.read_u64(at + 8)
    committed = dev.read_u64(at + 16)
    if committed:
        return "committed"
    return "pending" if count else "clean"


def _apply_undo(heap, at):
    """Restore old words newest-first, then truncate.  Safe to repeat."""
    dev = heap.device
    count = dev.read_u64(at + 8)
    for i in range(count - 1, -1, -1):
        rec = at + HEADER + i * RECORD
        off = dev.read_u64(rec)
        old = dev.read_u64(rec + 8)
        dev.write_u64(off, old)
        dev.flush(off, 8)
    if count:
        dev.fence()
    _truncate(heap, at)
    return count


def _truncate(heap, at):
    dev = heap.device
    dev.write_u64(at, dev.read_u64(at) + 1)
    dev.write_u64(at + 8, 0)
    dev.write_u64(at + 16, 0)
    dev.persist(at, HEADER)


def recover_logs(heap):
    """Roll back uncommitted logs and truncate committed ones (run at load)."""
    done = {}
    for name in list(heap._roots):
        if not name.startswith(UNDO_PREFIX):
            continue
        log = heap.get_root(name)
        if log is None:
            continue
        at, _ = _log_area(heap, log)
        state = undo_state(heap, log)
        if state == "pending":
            _apply_undo(heap, at)
        elif state == "committed":
            _truncate(heap, at)
        done[name] = state
    return done


# persistent tables

def _hash(key):
    return zlib.crc32(_U64.pack(key & 0xFFFF_FFFF_FFFF_FFFF))


def dump_entities(heap):
    """Logical content of every entity table: ``{type: {key: {field: value}}}``.

    References are rendered as ``(type, key)`` and lists as tuples of those,
    so two heaps with equal logical state compare equal regardless of layout.
    """
    out = {}
    for name in sorted(heap._roots):
        if not name.startswith(TABLE_PREFIX):
            continue
        table = heap.get_root(name)
        rows = {}
        if table is not None:
            for r in heap.read_elements(table):
                if r is None:
                    continue
                desc = heap.descriptor_of(r)
                rec = {}
                for f in desc.fields:
                    rec[f.name] = _render(heap, heap.get_field(r, f.name))
                rows[rec[desc.fields[0].name]] = rec
        if rows:
            out[name[len(TABLE_PREFIX):]] = rows
    return out


def _render(heap, v):
    if v is None or not hasattr(v, "space"):
        return v
    desc = heap.descriptor_of(v)
    if desc.logical_name == BYTE_ARRAY.logical_name:
        return heap.read_string(v)
    if desc.logical_name == LIST_KLASS.logical_name:
        return tuple(_render(heap, x) for x in heap.read_elements(v))
    return (desc.logical_name, heap.get_field(v, desc.fields[0].name))


class Transaction:
    _ids = itertools.count(1)

    def __init__(self, em):
        self.id = next(self._ids)
        self.em = em
        self.status = TxStatus.ACTIVE
        self.managed = []
        self.removed = []
        self.records = 0

    def _require_active(self):
        if self.status is not TxStatus.ACTIVE:
            raise InactiveTransaction("transaction %d is %s" % (self.id, self.status.value))

    def persist(self, entity):
        persist_entity(self, entity)

    def remove(self, entity):
        self._require_active()
        if entity.binding is None:
            raise ValueError("entity was never committed")
        self.removed.append(entity)

    def commit(self):
        commit(self)

    def rollback(self):
        rollback(self)


class EntityManager:
    """Entity persistence over one heap; one active transaction at a time."""

    def __init__(self, heap, name="default", registry=REGISTRY, log_records=DEFAULT_LOG_RECORDS):
        self.heap = heap
        self.name = name
        self.registry = registry
        self.txn = None
        self.stats = {"commits": 0, "records": 0, "redirected": 0}
        self._identity = {}
        self._table_count = {}
        self._log_root = UNDO_PREFIX + "." + name
        with heap.lock:
            if self._log_root in heap._roots and heap.get_root(self._log_root) is not None:
                self.log = heap.get_root(self._log_root)
                if undo_state(heap, self.log) != "clean":
                    recover_logs(heap)
            else:
                self.log = self._new_log(log_records)
                heap.set_root(self._log_root, self.log)

    # logs

    def _new_log(self, records):
        words = (LINE + HEADER + records * RECORD) // 8
        log = self.heap.allocate(LOG_KLASS, words)
        self.heap.flush_object(log)
        return log

    def _ensure_log(self, records):
        at, cap = _log_area(self.heap, self.log)
        if records <= cap:
            return
        # swap in a bigger log while the current one is clean
        bigger = self._new_log(max(records, 2 * cap))
        self.heap.set_root(self._log_root, bigger)
        self.log = bigger

    # transactions

    def begin(self):
        if self.txn is not None and self.txn.status in (TxStatus.ACTIVE, TxStatus.COMMITTING):
            raise NestedTransaction("manager %s already has an active transaction" % self.name)
        self.txn = Transaction(self)
        return self.txn

    # tables

    def _table_root(self, desc):
        return TABLE_PREFIX + desc.name

    def _table(self, desc):
        heap = self.heap
        root = self._table_root(desc)
        if root not in heap._roots or heap.get_root(root) is None:
            t = heap.allocate(TABLE_KLASS, MIN_TABLE)
            heap.flush_object(t)
            heap.set_root(root, t)
        return heap.get_root(root)

    def _count(self, desc, table):
        n = self._table_count.get(desc.name)
        if n is None:
            off = self.heap._offset(table)
            cap = self.heap.array_length(table)
            words = np.frombuffer(self.heap.device._cur, "<u8", count=cap, offset=off + 24)
            n = self._table_count[desc.name] = int(np.count_nonzero(words))
        return n

    def _probe(self, table, cap, key, key_field):
        heap = self.heap
        i = _hash(key) & (cap - 1)
        while True:
            r = heap.get_element(table, i)
            if r is None or heap.get_field(r, key_field) == key:
                return i, r
            i = (i + 1) & (cap - 1)

    def find(self, factory_or_desc, key):
        """Load the committed entity with ``key`` (None if absent)."""
        desc = getattr(factory_or_desc, "descriptor", factory_or_desc)
        heap = self.heap
        root = self._table_root(desc)
        if root not in heap._roots:
            return None
        table = heap.get_root(root)
        _, r = self._probe(table, heap.array_length(table), key, desc.key)
        if r is None:
            return None
        return self._entity_for(r, desc)

    def all(self, factory_or_desc):
        desc = getattr(factory_or_desc, "descriptor", factory_or_desc)
        heap = self.heap
        root = self._table_root(desc)
        if root not in heap._roots:
            return []
        out = [self._entity_for(r, desc) for r in heap.read_elements(heap.get_root(root)) if r is not None]
        return sorted(out, key=lambda e: e.key)

    def _entity_for(self, ref, desc=None):
        e = self._identity.get(ref)
        if e is not None:
            return e
        heap = self.heap
        name = heap.descriptor_of(ref).logical_name
        edesc = self.registry.get(name) if desc is None or desc.name != name else desc
        e = ManagedEntity(edesc)
        e.binding = ref
        e.manager = self
        e.state = State.COMMITTED
        e.redirected = set(edesc.index)
        self._identity[ref] = e
        return e

    def _read_persistent(self, entity, name):
        heap = self.heap
        kind, target = entity.desc.kinds[name]
        v = heap.get_field(entity.binding, name)
        if kind == "scalar":
            return v
        if v is None:
            return [] if kind == "list" else None
        if kind == "str":
            return heap.read_string(v)
        if kind == "ref":
            return self._entity_for(v)
        return [None if x is None else self._entity_for(x) for x in heap.read_elements(v)]


def begin(em):
    return em.begin()


def persist_entity(txn, entity):
    txn._require_active()
    em = txn.em
    if entity.desc.name not in em.registry.types:
        raise UnregisteredType(entity.desc.name)
    if entity.manager is not None and entity.manager is not em:
        raise ValueError("entity belongs to another manager")
    if entity not in txn.managed:
        txn.managed.append(entity)
    entity.manager = em
    if entity.state is State.TRANSIENT:
        entity.state = State.MANAGED
        entity.dirty = (1 << len(entity.desc.fields)) - 1


def _closure(txn):
    """Managed entities plus everything reachable through unbound references."""
    seen = []
    ids = set()
    stack = list(txn.managed)
    while stack:
        e = stack.pop()
        if id(e) in ids:
            continue
        ids.add(id(e))
        if e.manager is None:
            e.manager = txn.em
        if e.manager is not txn.em:
            raise ValueError("entity belongs to another manager")
        if e.desc.name not in txn.em.registry.types:
            raise UnregisteredType(e.desc.name)
        if e.state is State.TRANSIENT:
            e.state = State.MANAGED
            e.dirty = (1 << len(e.desc.fields)) - 1
        seen.append(e)
        for f, (kind, _) in e.desc.kinds.items():
            if kind == "ref" and e.is_dirty(f):
                t = e.get(f)
                if t is not None:
                    stack.append(t)
            elif kind == "list" and e.is_dirty(f):
                stack.extend(t for t in e.get(f) if t is not None)
    seen.reverse()
    return seen


def _pending_value(e, name):
    return e.shadow[name] if name in e.shadow else e._values[name]


def _check_target(em, e, f, t):
    want = e.desc.kinds[f][1]
    if not isinstance(t, ManagedEntity) or not t.desc.is_a(want):
        raise UnregisteredType("%s.%s must reference %s, got %r" % (e.desc.name, f, want, t))


def _words(start, n):
    first = start & ~7
    return range(first, start + n, 8)


def commit(txn):
    """Write every dirty field under the undo log, then flip the commit flag."""
    txn._require_active()
    em = txn.em
    heap = em.heap
    dev = heap.device
    with heap.lock:
        txn.status = TxStatus.COMMITTING
        try:
            work = _closure(txn)
            new = [e for e in work if e.binding is None]
            # phase A: every allocation happens before the first log record
            for e in new:
                e.binding = heap.allocate(e.desc.type_descriptor)
                # the table plan hashes the key stored in the (still unreachable) copy
                heap.set_field(e.binding, e.desc.key, _pending_value(e, e.desc.key))
            values = {}
            for e in work:
                for f in e.dirty_fields():
                    kind = e.desc.kinds[f][0]
                    v = _pending_value(e, f)
                    if kind == "str":
                        v = None if v is None else heap.new_string(v)
                        if v is not None:
                            heap.flush_object(v)
                    elif kind == "ref":
                        if v is not None:
                            _check_target(em, e, f, v)
                            v = v.binding
                    elif kind == "list":
                        for t in v:
                            if t is not None:
                                _check_target(em, e, f, t)
                        lst = heap.allocate(LIST_KLASS, len(v))
                        heap.write_elements(lst, [None if t is None else t.binding for t in v])
                        heap.flush_object(lst)
                        v = lst
                    values[(id(e), f)] = v
            plans = _plan_tables(em, new, txn.removed)
            fresh = {id(e) for e in new}
            existing = [e for e in work if id(e) not in fresh]
            need = sum(len(_words(e.desc.type_descriptor.field(f).offset, e.desc.type_descriptor.field(f).width))
                       for e in existing for f in e.dirty_fields())
            need += sum(1 if p["grow"] is not None else len(p["writes"]) for p in plans)
            em._ensure_log(need)
            at, _ = _log_area(heap, em.log)
            # phase B: no collection may move anything from here on
            heap.gc_blockers += 1
            try:
                log = _Log(heap, at)
                for e in new:
                    off = heap._offset(e.binding)
                    for f in e.dirty_fields():
                        heap.set_field(e.binding, f, values[(id(e), f)])
                    heap.device.flush(off + L.HEADER_SIZE, e.desc.type_descriptor.instance_size - L.HEADER_SIZE)
                for e in existing:
                    off = heap._offset(e.binding)
                    for f in e.dirty_fields():
                        fd = e.desc.type_descriptor.field(f)
                        for w in _words(off + fd.offset, fd.width):
                            log.record(w)
                        heap.set_field(e.binding, f, values[(id(e), f)])
                        dev.flush(off + fd.offset, fd.width)
                for p in plans:
                    _apply_table_plan(heap, log, p)
                dev.fence()
                # the commit point: one 8-byte word
                dev.write_u64(at + 16, 1)
                dev.persist(at + 16, 8)
                txn.records = log.count
            finally:
                heap.gc_blockers -= 1
        except BaseException:
            if not dev.crashed:
                txn.status = TxStatus.ACTIVE
            raise
        for p in plans:
            em._table_count[p["desc"].name] = p["count"]
        for e in work:
            e.state = State.COMMITTED
            em._identity[e.binding] = e
        for e in txn.removed:
            em._identity.pop(e.binding, None)
            e.binding = None
            e.state = State.TRANSIENT
            e.redirected = set()
            e.shadow = {}
        em.stats["redirected"] += dedup_redirect(txn, work)
        for e in work:
            e.dirty = 0
        _truncate(heap, at)
        em.stats["commits"] += 1
        em.stats["records"] += txn.records
        txn.status = TxStatus.COMMITTED
        em.txn = None


class _Log:
    def __init__(self, heap, at):
        self.heap = heap
        self.at = at
        self.count = heap.device.read_u64(at + 8)

    def record(self, off):
        dev = self.heap.device
        rec = self.at + HEADER + self.count * RECORD
        dev.write_u64(rec, off)
        dev.write_u64(rec + 8, dev.read_u64(off))
        dev.persist(rec, RECORD)
        self.count += 1
        dev.write_u64(self.at + 8, self.count)
        dev.persist(self.at + 8, 8)

    def write(self, off, value):
        self.record(off)
        self.heap.device.write_u64(off, value)
        self.heap.device.flush(off, 8)


def _plan_tables(em, new, removed):
    """Decide every table write up front; grown tables are allocated here,
    before any logging, and are filled while still unreachable."""
    heap = em.heap
    by_type = {}
    for e in new:
        by_type.setdefault(e.desc.name, ([], []))[0].append(e)
    for e in removed:
        by_type.setdefault(e.desc.name, ([], []))[1].append(e)
    plans = []
    for name, (adds, dels) in by_type.items():
        desc = em.registry.get(name)
        table = em._table(desc)
        cap = heap.array_length(table)
        count = em._count(desc, table)
        final = count + len(adds) - len(dels)
        plan = {"desc": desc, "table": table, "grow": None, "count": final, "writes": []}
        if 2 * (count + len(adds)) > cap:
            newcap = max(cap, MIN_TABLE)
            while 2 * (final + 1) > newcap:
                newcap *= 2
            gone = {e.binding.address for e in dels}
            words = [w for w in _table_words(heap, table) if w and w not in gone]
            words += [e.binding.address for e in adds]
            slots = np.zeros(newcap, np.uint64)
            for w in words:
                i = _hash(_key_at(heap, w, desc.key)) & (newcap - 1)
                while slots[i]:
                    i = (i + 1) & (newcap - 1)
                slots[i] = w
            grown = heap.allocate(TABLE_KLASS, newcap)
            heap.device.write(heap._offset(grown) + 24, slots.astype("<u8").tobytes())
            heap.flush_object(grown)
            plan["grow"] = grown
        else:
            plan["writes"] = _simulate(heap, desc, table, adds, dels)
        plans.append(plan)
    return plans


def _table_words(heap, table):
    off = heap._offset(table)
    n = heap.array_length(table)
    return np.frombuffer(heap.device._cur, "<u8", count=n, offset=off + 24).tolist()


def _key_at(heap, address, key_field):
    return heap.get_field(heap.ref(address), key_field)


def _simulate(heap, desc, table, adds, dels):
    """Slot writes ``(offset, word)`` for inserts and backward-shift deletes."""
    slots = _table_words(heap, table)
    cap = len(slots)
    base = heap._offset(table) + 24
    writes = []
    keys = {}

    def home(w):
        k = keys.get(w)
        if k is None:
            k = keys[w] = _hash(_key_at(heap, w, desc.key)) & (cap - 1)
        return k

    def put(i, w):
        slots[i] = w
        writes.append((base + 8 * i, w))

    for e in adds:
        w = e.binding.address
        i = _hash(_key_at(heap, w, desc.key)) & (cap - 1)
        while slots[i]:
            i = (i + 1) & (cap - 1)
        put(i, w)
    for e in dels:
        target = e.binding.address
        i = home(target)
        while slots[i] != target:
            i = (i + 1) & (cap - 1)
        hole = i
        j = (i + 1) & (cap - 1)
        while slots[j]:
            h = home(slots[j])
            if (j - h) & (cap - 1) >= (j - hole) & (cap - 1):
                put(hole, slots[j])
                hole = j
            j = (j + 1) & (cap - 1)
        put(hole, 0)
    return writes


def _apply_table_plan(heap, log, plan):
    if plan["grow"] is not None:
        slot = heap._roots[TABLE_PREFIX + plan["desc"].name]
        log.write(heap._slot_off(slot) + L.ENTRY_ADDR, plan["grow"].address)
        return
    for off, w in plan["writes"]:
        log.write(off, w)


def rollback(txn):
    """Undo whatever reached the heap for this transaction; volatile state stays."""
    em = txn.em
    heap = em.heap
    if txn.status not in (TxStatus.ACTIVE, TxStatus.COMMITTING):
        raise InactiveTransaction("transaction %d is %s" % (txn.id, txn.status.value))
    with heap.lock:
        at, _ = _log_area(heap, em.log)
        if undo_state(heap, em.log) == "committed":
            raise InactiveTransaction("transaction %d already reached its commit point" % txn.id)
        _apply_undo(heap, at)
        for e in _closure_safe(txn):
            if e.binding is not None and e.binding not in em._identity:
                e.binding = None
                e.state = State.MANAGED
        em._table_count.clear()
    txn.status = TxStatus.ROLLED_BACK
    em.txn = None


def _closure_safe(txn):
    try:
        return _closure(txn)
    except Exception:  # noqa: BLE001 - rollback must not fail on a bad graph
        return list(txn.managed)


def dedup_redirect(txn, work=None):
    """Point committed entities' fields at the persistent data.

    Returns the number of reference-valued (str/list/ref) fields redirected;
    scalar fields are redirected too but not counted.
    """
    count = 0
    for e in (work if work is not None else txn.managed):
        if e.binding is None:
            continue
        for f, (kind, _) in e.desc.kinds.items():
            if kind != "scalar" and f not in e.redirected:
                count += 1
            elif kind != "scalar" and f in e.shadow:
                count += 1
            e.redirected.add(f)
            e._values[f] = None if kind != "list" else []
        e.shadow = {}
    return count
