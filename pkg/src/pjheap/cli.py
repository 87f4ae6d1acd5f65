"""heapctl: create, inspect, validate, collect, crash-test and benchmark heaps.

Output is one ``key=value`` record per line (``--machine`` switches to JSON
lines).  Exit status: 0 pass, 1 a check failed, 2 bad usage, 3 the operation
itself could not run (unknown heap, corrupt image, ...).
"""

import argparse
import json
import sys

from . import bench, crashtest, gc
from .errors import PJHError
from .heap import Safety, create_heap, load_heap
from .names import default_manager, set_default_root
from .validate import validate_heap

EXIT_OK, EXIT_FAIL, EXIT_USAGE, EXIT_ERROR = 0, 1, 2, 3

_UNITS = {"": 1, "k": 1 << 10, "kb": 1 << 10, "kib": 1 << 10, "m": 1 << 20, "mb": 1 << 20,
          "mib": 1 << 20, "g": 1 << 30, "gb": 1 << 30, "gib": 1 << 30}


def parse_size(text):
    """'1048576', '64M', '64MiB', '512k' -> bytes."""
    t = text.strip().lower()
    i = len(t)
    while i and not t[i - 1].isdigit():
        i -= 1
    num, unit = t[:i], t[i:].strip()
    if not num or unit not in _UNITS:
        raise argparse.ArgumentTypeError("bad size %r" % text)
    return int(num) * _UNITS[unit]


class Out:
    def __init__(self, machine=False, stream=None):
        self.machine = machine
        self.stream = stream or sys.stdout

    def record(self, rec):
        if self.machine:
            self.stream.write(json.dumps(rec, sort_keys=False, default=str) + "\n")
        else:
            self.stream.write(" ".join("%s=%s" % (k, _fmt(v)) for k, v in rec.items()) + "\n")

    def kv(self, key, value):
        self.record({key: value})


def _fmt(v):
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return "%.6g" % v
    if isinstance(v, str) and (" " in v or not v):
        return json.dumps(v)
    return str(v)


# commands

def cmd_create(args, out):
    heap = create_heap(args.name, args.size)
    try:
        out.record({"status": "created", "name": args.name, "heap_size": heap.meta.heap_size,
                    "address_hint": hex(heap.meta.address_hint),
                    "data_heap_location": heap.meta.data_heap_location})
    finally:
        heap.close()
    return EXIT_OK


def _load(args):
    return load_heap(args.name, safety=Safety(args.safety))


def cmd_info(args, out):
    heap = _load(args)
    try:
        rec = {"name": args.name}
        for k, v in heap.info().items():
            rec[k] = hex(v) if k in ("address_hint", "mapped_base", "remap_target") else v
        rec["recovered"] = heap.recovered
        rec["remapped_refs"] = heap.remapped_refs
        out.record(rec)
        for d in sorted(heap.klasses(), key=lambda d: d.logical_name):
            kr = {"klass": d.logical_name, "address": hex(d.address), "instance_size": d.instance_size}
            if d.is_array:
                kr["elem"] = d.elem
            else:
                kr["fields"] = ",".join("%s:%s@%d" % (f.name, f.fmt, f.offset) for f in d.fields)
            out.record(kr)
    finally:
        heap.close()
    return EXIT_OK


def cmd_roots(args, out):
    heap = _load(args)
    try:
        roots = heap.roots()
        for name in sorted(roots):
            r = roots[name]
            if r is None:
                out.record({"root": name, "address": "null"})
            else:
                out.record({"root": name, "address": hex(r.address),
                            "klass": heap.descriptor_of(r).logical_name, "size": heap.object_size(r)})
        out.record({"roots": len(roots)})
    finally:
        heap.close()
    return EXIT_OK


def cmd_validate(args, out):
    heap = _load(args)
    try:
        rep = validate_heap(heap)
        rec = {"status": "pass" if rep.ok else "fail", "name": args.name, "recovered": heap.recovered}
        rec.update(sorted(rep.stats.items()))
        out.record(rec)
        for e in rep.errors:
            out.record({"error": e})
        for w in rep.warnings:
            out.record({"warning": w})
    finally:
        heap.close()
    return EXIT_OK if rep.ok else EXIT_FAIL


def cmd_gc(args, out):
    heap = _load(args)
    try:
        st = gc.collect(heap)
        rec = {"name": args.name}
        rec.update(st.record())
        rec["live_objects"] = st.live_objects
        rec["moved_objects"] = st.moved_objects
        rec["top"] = heap.meta.top
        out.record(rec)
    finally:
        heap.close()
    return EXIT_OK


def cmd_crashtest(args, out):
    name = args.workload
    if name == "create":
        res = crashtest.sweep_create()
    else:
        w = crashtest.make_workload(name, seed=args.seed)
        if args.objects is not None and hasattr(w, "objects"):
            w = type(w)(objects=args.objects, seed=args.seed)
        if isinstance(w, crashtest.TxnWorkload):
            if args.objects is not None:
                w.commits = args.objects
            if not args.sweep:
                w.sample = min(w.commits, 10)
            res = crashtest.sweep_txn(w)
        elif args.sweep:
            res = crashtest.sweep(w)
        else:
            # quick mode: an evenly spaced sample of crash points
            res = crashtest.sweep(w, points=lambda n: _spread(n, args.sample))
    failed = dict(res.failures)
    shown = res.checked if args.points else sorted(failed)
    for p in shown:
        rec = {"point": p, "status": "fail" if p in failed else "pass"}
        if p in failed:
            rec["reason"] = failed[p]
        out.record(rec)
    out.record({"workload": res.workload, "mode": "sweep" if args.sweep else "sample",
                "persist_points": res.total, "points": res.points, "passed": res.passed, "failed": len(res.failures),
                "seconds": round(res.seconds, 3), "status": "pass" if res.ok else "fail"})
    return EXIT_OK if res.ok else EXIT_FAIL


def _spread(total, k):
    if total <= k:
        return range(total + 1)
    return sorted({round(i * total / (k - 1)) for i in range(k)})


def cmd_bench(args, out):
    rows = bench.run_suite(args.suite, objects=args.objects, types=args.types, seed=args.seed,
                           size=args.size)
    for r in rows:
        out.record(r)
    return EXIT_OK


# parser

def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    # SUPPRESS so a flag given before the subcommand is not reset after it
    common.add_argument("--root", default=argparse.SUPPRESS,
                        help="directory holding the heap manifest (default ./.pjh)")
    common.add_argument("--machine", action="store_true", default=argparse.SUPPRESS,
                        help="emit JSON lines")

    named = argparse.ArgumentParser(add_help=False)
    named.add_argument("--name", required=True, help="heap name")
    named.add_argument("--safety", choices=[s.value for s in Safety], default="ug",
                       help="load-time safety level (ug = user-guaranteed, zero = zeroing)")

    p = argparse.ArgumentParser(prog="heapctl", description=__doc__.splitlines()[0], parents=[common])
    sub = p.add_subparsers(dest="command", metavar="command")
    sub.required = True

    c = sub.add_parser("create", parents=[common], help="create and format a named heap")
    c.add_argument("--name", required=True)
    c.add_argument("--size", type=parse_size, default=parse_size("16M"), help="bytes (suffixes k/M/G)")
    c.set_defaults(func=cmd_create)

    for name, fn, text in (("info", cmd_info, "metadata and Klass dump"),
                           ("roots", cmd_roots, "list the root table"),
                           ("validate", cmd_validate, "full consistency check"),
                           ("gc", cmd_gc, "force a collection and print statistics")):
        s = sub.add_parser(name, parents=[common, named], help=text)
        s.set_defaults(func=fn)

    t = sub.add_parser("crashtest", parents=[common], help="crash a workload at its persist points")
    t.add_argument("--workload", default="alloc1k",
                   help="one of %s (allocN and gcN take any count)" % ", ".join(crashtest.WORKLOADS))
    t.add_argument("--sweep", action="store_true", help="every persist point (default: a sample)")
    t.add_argument("--sample", type=int, default=25, help="points checked without --sweep")
    t.add_argument("--objects", type=int, help="override the workload size")
    t.add_argument("--points", action="store_true", help="print a line for every point checked")
    t.add_argument("--seed", type=int, default=0)
    t.set_defaults(func=cmd_crashtest)

    b = sub.add_parser("bench", parents=[common], help="run a benchmark suite")
    b.add_argument("--suite", choices=bench.SUITES, default="micro")
    b.add_argument("--objects", type=int, help="suite size (load: the largest object count)")
    b.add_argument("--types", type=int, default=20, help="Klass count for the load suite")
    b.add_argument("--size", type=parse_size, help="heap size for the gc suite (default 64M)")
    b.add_argument("--seed", type=int, default=0)
    b.set_defaults(func=cmd_bench)
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    root = getattr(args, "root", None)
    if root:
        set_default_root(root)
    else:
        default_manager()
    out = Out(getattr(args, "machine", False))
    try:
        return args.func(args, out)
    except (PJHError, KeyError, ValueError) as exc:
        out.record({"status": "error", "error": type(exc).__name__, "detail": str(exc)})
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
