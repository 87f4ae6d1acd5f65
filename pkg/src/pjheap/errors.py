"""Exception hierarchy shared by every layer of the heap."""


class PJHError(Exception):
    pass


# device

class InvalidCapacity(PJHError, ValueError):
    pass


class OutOfBounds(PJHError, IndexError):
    pass


class DeviceCrashed(PJHError):
    """Raised on any access to a device that crashed and was not restarted."""


class InjectedCrash(PJHError):
    """The crash policy fired; ``report`` carries the durable snapshot."""

    def __init__(self, report):
        super().__init__("injected crash at persist point %d" % report.persist_point)
        self.report = report


# heap

class NameExists(PJHError):
    pass


class UnknownHeap(PJHError, KeyError):
    pass


class HeapBusy(PJHError):
    pass


class SizeTooSmall(PJHError, ValueError):
    pass


class CorruptImage(PJHError):
    pass


class NameTooLong(PJHError, ValueError):
    pass


class NameTableFull(PJHError):
    pass


class NoSuchRoot(PJHError, KeyError):
    pass


class VolatileRef(PJHError, TypeError):
    pass


class OutOfMemory(PJHError, MemoryError):
    pass


class UnknownKlass(PJHError, KeyError):
    pass


class UnknownField(PJHError, KeyError):
    pass


class TooWide(PJHError, ValueError):
    pass


class GCInProgress(PJHError):
    pass


class InvalidReference(PJHError, ValueError):
    pass


# types

class SegmentFull(PJHError):
    pass


class LayoutMismatch(PJHError):
    pass


class CorruptDescriptor(PJHError):
    pass


# gc

class CorruptReference(PJHError):
    pass


# pjo

class NestedTransaction(PJHError):
    pass


class InactiveTransaction(PJHError):
    pass


class UnregisteredType(PJHError, TypeError):
    pass
