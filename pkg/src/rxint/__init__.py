"""Deterministic simulation lab for in-memory threat detection.

The package binds a simulated 64-bit address space, a PE32+ loader and
attacker toolkit, a stateful differential detection engine with an
event-triggered scan path, a comparison scanner with the classic polling
blind spots, and a discrete-event scheduler into reproducible scenarios.
"""

from .errors import RxIntError
from .hashing import Digest64, xxh64
from .vaspace import (
    NOACCESS,
    R,
    RW,
    RWX,
    RX,
    AddressSpace,
    ModuleRecord,
    Protection,
    RegionKind,
)

__version__ = "0.1.0"

__all__ = [
    "AddressSpace",
    "Digest64",
    "ModuleRecord",
    "NOACCESS",
    "Protection",
    "R",
    "RW",
    "RWX",
    "RX",
    "RegionKind",
    "RxIntError",
    "xxh64",
    "__version__",
]
