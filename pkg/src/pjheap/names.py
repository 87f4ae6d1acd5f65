"""Name manager: maps heap names to backing files.

The manifest is a text file with one ``name<TAB>path`` record per line.  It is
rewritten through a temporary file and ``os.replace``, so registration is
atomic: a heap exists exactly when its record made it into the manifest.
"""

import os
import re
from pathlib import Path

MANIFEST = "manifest.tsv"

_SAFE = re.compile(r"^[A-Za-z0-9_.-]+$")


class NameManager:
    def __init__(self, root):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)
        self.manifest = self.root / MANIFEST

    def _read(self):
        if not self.manifest.exists():
            return {}
        out = {}
        for line in self.manifest.read_text(encoding="utf-8").splitlines():
            if not line.strip():
                continue
            name, _, path = line.partition("\t")
            out[name] = path
        return out

    def _write(self, table):
        tmp = self.manifest.with_name(MANIFEST + ".tmp")
        with open(tmp, "w", encoding="utf-8") as f:
            for name, path in sorted(table.items()):
                f.write("%s\t%s\n" % (name, path))
            f.flush()
            os.fsync(f.fileno())
        os.replace(tmp, self.manifest)

    def lookup(self, name):
        return self._read().get(name)

    def names(self):
        return sorted(self._read())

    def register(self, name, path):
        if "\t" in name or "\n" in name:
            raise ValueError("heap names cannot contain tabs or newlines")
        table = self._read()
        table[name] = str(path)
        self._write(table)

    def unregister(self, name):
        table = self._read()
        if table.pop(name, None) is not None:
            self._write(table)

    def path_for(self, name):
        stem = name if _SAFE.match(name) else "h" + name.encode("utf-8").hex()
        return self.root / (stem + ".pjh")


_default = None


def default_manager():
    """Manager rooted at ``./.pjh`` unless :func:`set_default_root` was called."""
    global _default
    if _default is None:
        _default = NameManager(Path.cwd() / ".pjh")
    return _default


def set_default_root(root):
    global _default
    _default = NameManager(root)
    return _default
