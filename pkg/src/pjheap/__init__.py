"""pjheap: a persistent object heap over a simulated NVM device."""

from .device import CrashReport, PersistentDevice, create_device
from .errors import *  # noqa: F401,F403
from .heap import (BYTE_ARRAY, Heap, Safety, create_heap, descriptor_of, exists_heap,
                   is_instance_of, load_heap)
from .klass import REGISTRY, TypeDescriptor, alias_of, register_type, reinitialize_types
from .names import NameManager, default_manager, set_default_root
from .refs import PERSISTENT, VOLATILE, ObjRef
from .volatile import companion

__version__ = "0.1.0"
