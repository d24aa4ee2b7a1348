"""Simulated 64-bit process virtual address space.

Models exactly what the detection engine observes: committed regions with
base/size/protection/kind (the VAD view), their backing bytes, and a
load-order module list (the PEB analog). Pages are fixed at 4 KiB; there is
no decommit, no reservation, and no copy-on-write.

Two deliberate departures from real OS semantics, both in the simulator's
favor:

* Writes ignore the writable flag (privileged-writer model) but fail on
  NOACCESS pages. Attackers in scenarios always flip protection first, and
  the detector keys off protections and content, not write faults.
* Adjacent regions belonging to the same allocation re-merge as soon as
  their attributes equalize, mirroring how a virtual-memory query reports
  runs of pages with uniform attributes rather than historical splits.
"""

from __future__ import annotations

import bisect
from dataclasses import dataclass
from enum import Enum

from .errors import (
    AlignmentError,
    CoverageError,
    NotFoundError,
    OverlapError,
    ProtectionError,
    SpanError,
    UnmappedError,
)

PAGE_SIZE = 4096
PAGE_MASK = PAGE_SIZE - 1
MAX_ADDRESS = 1 << 64

#: Lowest address handed out by hint-free allocation (NULL-page guard analog).
DEFAULT_ALLOC_HINT = 0x10000


def page_floor(addr: int) -> int:
    return addr & ~PAGE_MASK


def page_ceil(addr: int) -> int:
    return (addr + PAGE_MASK) & ~PAGE_MASK


@dataclass(frozen=True)
class Protection:
    """Page protection restricted to {NOACCESS, R, RW, RX, RWX}."""

    readable: bool
    writable: bool
    executable: bool

    def __post_init__(self):
        if (self.writable or self.executable) and not self.readable:
            raise ValueError(
                f"protection outside {{NOACCESS,R,RW,RX,RWX}}: "
                f"r={self.readable} w={self.writable} x={self.executable}"
            )

    @property
    def name(self) -> str:
        if not self.readable:
            return "NOACCESS"
        return "R" + ("W" if self.writable else "") + ("X" if self.executable else "")

    @classmethod
    def from_name(cls, name: str) -> "Protection":
        try:
            return _PROTECTION_NAMES[name.upper()]
        except KeyError:
            raise ValueError(f"unknown protection {name!r}") from None

    def __str__(self) -> str:
        return self.name


NOACCESS = Protection(False, False, False)
R = Protection(True, False, False)
RW = Protection(True, True, False)
RX = Protection(True, False, True)
RWX = Protection(True, True, True)

_PROTECTION_NAMES = {p.name: p for p in (NOACCESS, R, RW, RX, RWX)}


class RegionKind(Enum):
    PRIVATE = "PRIVATE"
    IMAGE = "IMAGE"
    MAPPED = "MAPPED"


@dataclass
class VadRegion:
    """One committed region. ``data`` always has length ``size``.

    ``allocation_base`` ties split fragments back to their original
    allocation so they can re-merge once attributes equalize.
    """

    base: int
    size: int
    protection: Protection
    kind: RegionKind
    backing_name: str | None
    data: bytearray
    allocation_base: int

    def __post_init__(self):
        if self.base % PAGE_SIZE or self.size % PAGE_SIZE or self.size <= 0:
            raise AlignmentError(
                f"region 0x{self.base:x}+0x{self.size:x} not page aligned"
            )
        if self.kind is RegionKind.IMAGE and not self.backing_name:
            raise ValueError("IMAGE region requires a non-empty backing name")
        if self.kind is RegionKind.PRIVATE and self.backing_name:
            raise ValueError("PRIVATE region must not carry a backing name")
        if len(self.data) != self.size:
            raise ValueError("region data length must equal region size")

    @property
    def end(self) -> int:
        return self.base + self.size

    @property
    def executable(self) -> bool:
        return self.protection.executable

    def contains(self, addr: int) -> bool:
        return self.base <= addr < self.end


@dataclass(frozen=True)
class RegionInfo:
    """Immutable region descriptor returned by query/enumeration."""

    base: int
    size: int
    protection: Protection
    kind: RegionKind
    backing_name: str | None

    @property
    def end(self) -> int:
        return self.base + self.size

    @property
    def executable(self) -> bool:
        return self.protection.executable


@dataclass(frozen=True)
class Gap:
    """Marker for a query on an unmapped address; ``next_base`` is the next
    committed region above it."""

    next_base: int


@dataclass(frozen=True)
class ModuleRecord:
    base: int
    size: int
    name: str
    path: str

    @property
    def end(self) -> int:
        return self.base + self.size


class AddressSpace:
    """Flat, ordered collection of non-overlapping committed regions."""

    def __init__(self, alloc_hint: int = DEFAULT_ALLOC_HINT):
        self._bases: list[int] = []
        self._regions: dict[int, VadRegion] = {}
        self.modules: list[ModuleRecord] = []
        self.next_hint = alloc_hint

    # -- lookup ---------------------------------------------------------

    def regions(self) -> list[VadRegion]:
        """All regions in ascending base order."""
        return [self._regions[b] for b in self._bases]

    def region_at(self, addr: int) -> VadRegion | None:
        i = bisect.bisect_right(self._bases, addr) - 1
        if i < 0:
            return None
        region = self._regions[self._bases[i]]
        return region if region.contains(addr) else None

    def query(self, addr: int) -> RegionInfo | Gap | None:
        """Descriptor of the region containing ``addr``; a :class:`Gap`
        pointing at the next higher region if unmapped; ``None`` past the
        last region."""
        region = self.region_at(addr)
        if region is not None:
            return RegionInfo(
                region.base, region.size, region.protection, region.kind,
                region.backing_name,
            )
        i = bisect.bisect_right(self._bases, addr)
        if i >= len(self._bases):
            return None
        return Gap(next_base=self._bases[i])

    def enumerate_layout(self) -> list[RegionInfo]:
        """Full layout by repeated queries from address zero (the walk the
        detector performs)."""
        out: list[RegionInfo] = []
        addr = 0
        while True:
            found = self.query(addr)
            if found is None:
                return out
            if isinstance(found, Gap):
                addr = found.next_base
                continue
            out.append(found)
            if found.end >= MAX_ADDRESS:
                return out
            addr = found.end

    def span_is_free(self, base: int, size: int) -> bool:
        if base + size > MAX_ADDRESS:
            return False
        i = bisect.bisect_right(self._bases, base) - 1
        if i >= 0 and self._regions[self._bases[i]].end > base:
            return False
        if i + 1 < len(self._bases) and self._bases[i + 1] < base + size:
            return False
        return True

    def find_free(self, size: int, min_addr: int | None = None) -> int:
        """Lowest free page-aligned gap of ``size`` bytes at or above
        ``min_addr`` (defaults to the allocation hint)."""
        candidate = page_ceil(self.next_hint if min_addr is None else min_addr)
        for base in self._bases:
            region = self._regions[base]
            if region.end <= candidate:
                continue
            if base >= candidate + size:
                break
            candidate = max(candidate, page_ceil(region.end))
        if candidate + size > MAX_ADDRESS:
            raise OverlapError("address space exhausted")
        return candidate

    # -- mutation ---------------------------------------------------------

    def alloc(
        self,
        size: int,
        protection: Protection,
        kind: RegionKind,
        base: int | None = None,
        backing_name: str | None = None,
    ) -> int:
        """Commit a zero-filled region and return its base."""
        if size <= 0 or size % PAGE_SIZE:
            raise AlignmentError(f"allocation size 0x{size:x} not page aligned")
        if base is None:
            base = self.find_free(size)
        else:
            if base % PAGE_SIZE:
                raise AlignmentError(f"allocation base 0x{base:x} not page aligned")
            if not self.span_is_free(base, size):
                raise OverlapError(
                    f"span 0x{base:x}+0x{size:x} intersects an existing region"
                )
        region = VadRegion(
            base=base,
            size=size,
            protection=protection,
            kind=kind,
            backing_name=backing_name,
            data=bytearray(size),
            allocation_base=base,
        )
        self._insert(region)
        return base

    def protect(self, addr: int, size: int, new_protection: Protection) -> Protection:
        """Change protection over the pages covering [addr, addr+size).

        Returns the previous protection of the first page. Splits regions at
        page granularity where the span is a strict subset, and re-merges
        fragments whose attributes equalize. Spans may cover several adjacent
        regions as long as all are of the same kind.
        """
        if size <= 0:
            raise AlignmentError("protect size must be positive")
        start = page_floor(addr)
        end = page_ceil(addr + size)
        covering = self._covering_regions(start, end)
        kinds = {r.kind for r in covering}
        if len(kinds) > 1:
            raise SpanError(
                f"span 0x{start:x}+0x{end - start:x} crosses regions of differing kind"
            )
        previous = covering[0].protection
        for region in covering:
            lo = max(start, region.base)
            hi = min(end, region.end)
            target = self._split_out(region, lo, hi)
            target.protection = new_protection
        self._merge_around(start, end)
        return previous

    def read(self, addr: int, length: int) -> bytes:
        """Exact copy of committed bytes; protection is not consulted."""
        if length == 0:
            return b""
        out = bytearray()
        for region, lo, hi in self._iter_span(addr, addr + length):
            out += region.data[lo - region.base : hi - region.base]
        return bytes(out)

    def write(self, addr: int, data: bytes) -> None:
        """Replace committed bytes in place; fails only on NOACCESS pages."""
        if not data:
            return
        spans = list(self._iter_span(addr, addr + len(data)))
        for region, lo, hi in spans:
            if region.protection == NOACCESS:
                raise ProtectionError(
                    f"write touches NOACCESS page at 0x{lo:x}"
                )
        for region, lo, hi in spans:
            off = lo - addr
            region.data[lo - region.base : hi - region.base] = data[off : off + (hi - lo)]

    # -- module list ------------------------------------------------------

    def link_module(self, record: ModuleRecord) -> None:
        for region, _, _ in self._iter_span_checked(
            record.base, record.end, CoverageError,
            f"module {record.name} span not fully committed",
        ):
            if region.kind is not RegionKind.IMAGE:
                raise CoverageError(
                    f"module {record.name} covers non-IMAGE memory at 0x{region.base:x}"
                )
        self.modules.append(record)

    def unlink_module(self, base: int) -> ModuleRecord:
        for i, record in enumerate(self.modules):
            if record.base == base:
                return self.modules.pop(i)
        raise NotFoundError(f"no module record at base 0x{base:x}")

    def module_covering(self, addr: int) -> ModuleRecord | None:
        for record in self.modules:
            if record.base <= addr < record.end:
                return record
        return None

    def find_module(self, name: str) -> ModuleRecord | None:
        wanted = name.lower()
        for record in self.modules:
            if record.name.lower() == wanted:
                return record
        return None

    # -- internals ----------------------------------------------------------

    def _insert(self, region: VadRegion) -> None:
        i = bisect.bisect_left(self._bases, region.base)
        self._bases.insert(i, region.base)
        self._regions[region.base] = region

    def _remove(self, region: VadRegion) -> None:
        i = bisect.bisect_left(self._bases, region.base)
        assert self._bases[i] == region.base
        del self._bases[i]
        del self._regions[region.base]

    def _iter_span(self, start: int, end: int):
        yield from self._iter_span_checked(start, end, UnmappedError, None)

    def _iter_span_checked(self, start: int, end: int, exc, message):
        if start < 0 or end > MAX_ADDRESS or start >= end:
            raise exc(message or f"bad span 0x{start:x}..0x{end:x}")
        addr = start
        while addr < end:
            region = self.region_at(addr)
            if region is None:
                raise exc(message or f"uncommitted page at 0x{addr:x}")
            hi = min(end, region.end)
            yield region, addr, hi
            addr = hi

    def _covering_regions(self, start: int, end: int) -> list[VadRegion]:
        return [region for region, _, _ in self._iter_span(start, end)]

    def _split_out(self, region: VadRegion, lo: int, hi: int) -> VadRegion:
        """Split ``region`` so that [lo, hi) becomes its own region; returns it."""
        if lo == region.base and hi == region.end:
            return region
        self._remove(region)
        pieces: list[VadRegion] = []
        for a, b in ((region.base, lo), (lo, hi), (hi, region.end)):
            if a >= b:
                continue
            pieces.append(
                VadRegion(
                    base=a,
                    size=b - a,
                    protection=region.protection,
                    kind=region.kind,
                    backing_name=region.backing_name,
                    data=region.data[a - region.base : b - region.base],
                    allocation_base=region.allocation_base,
                )
            )
        target = None
        for piece in pieces:
            self._insert(piece)
            if piece.base == lo:
                target = piece
        assert target is not None
        return target

    def _merge_around(self, start: int, end: int) -> None:
        """Coalesce mergeable neighbors over [start, end) including both edges."""
        i = max(0, bisect.bisect_right(self._bases, start) - 2)
        while i + 1 < len(self._bases) and self._bases[i] <= end:
            a = self._regions[self._bases[i]]
            b = self._regions[self._bases[i + 1]]
            if self._can_merge(a, b):
                self._remove(a)
                self._remove(b)
                self._insert(
                    VadRegion(
                        base=a.base,
                        size=a.size + b.size,
                        protection=a.protection,
                        kind=a.kind,
                        backing_name=a.backing_name,
                        data=a.data + b.data,
                        allocation_base=a.allocation_base,
                    )
                )
            else:
                i += 1

    @staticmethod
    def _can_merge(a: VadRegion, b: VadRegion) -> bool:
        return (
            a.end == b.base
            and a.allocation_base == b.allocation_base
            and a.kind == b.kind
            and a.protection == b.protection
            and a.backing_name == b.backing_name
        )
