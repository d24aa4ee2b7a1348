"""Comparison scanner: a stateless, user-view module checker.

Modeled at the heuristic level of the public tools it stands in for: it
discovers modules via the user-visible module list and PE-header signatures,
flags unbacked executable regions that contain a recognizable PE image, and
byte-compares listed modules against pristine file bytes. It deliberately
reproduces the documented blind spots of that approach: a payload without PE
headers in private memory produces no finding at all, and modifications that
are reverted between scans are invisible.

The scanner holds no state between scans and consumes no kernel-side events.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Mapping

from . import peformat
from .errors import PeError, UnmappedError
from .vaspace import AddressSpace, RegionKind, VadRegion

_HEAD_BYTES = 0x1000


class FindingClass(Enum):
    IMPLANTED_PE = "IMPLANTED_PE"
    DETACHED_MODULE = "DETACHED_MODULE"
    MODIFIED_MODULE = "MODIFIED_MODULE"
    READ_ERROR = "READ_ERROR"


@dataclass(frozen=True)
class Finding:
    category: FindingClass
    base: int
    size: int
    note: str


def _parses_as_pe(space: AddressSpace, base: int, limit: int) -> bool:
    try:
        peformat.parse_headers(space.read(base, min(limit, _HEAD_BYTES)))
        return True
    except (PeError, UnmappedError):
        return False


def _group_unlisted_image_regions(space: AddressSpace) -> list[list[VadRegion]]:
    """Contiguous runs of image regions not covered by any module record,
    grouped by backing identity — each run is one module candidate."""
    groups: list[list[VadRegion]] = []
    current: list[VadRegion] = []
    for region in space.regions():
        if region.kind is not RegionKind.IMAGE or space.module_covering(region.base):
            if current:
                groups.append(current)
                current = []
            continue
        if current and (
            current[-1].end != region.base
            or current[-1].backing_name != region.backing_name
        ):
            groups.append(current)
            current = []
        current.append(region)
    if current:
        groups.append(current)
    return groups


def scan_process(
    space: AddressSpace, pristine_files: Mapping[str, bytes]
) -> list[Finding]:
    """One full scan pass; returns every finding, deterministic order.

    ``pristine_files`` maps module names to known-good file bytes — the
    scanner's picture of what is allowed to be loaded. Listed modules outside
    that set are reported as implants (their path is visible, their content
    has no trusted source).
    """
    findings: list[Finding] = []

    # unbacked executable regions: only a recognizable PE header counts
    for region in space.regions():
        if region.kind is RegionKind.PRIVATE and region.executable:
            if _parses_as_pe(space, region.base, region.size):
                findings.append(
                    Finding(
                        category=FindingClass.IMPLANTED_PE,
                        base=region.base,
                        size=region.size,
                        note="unbacked executable region contains a PE image",
                    )
                )

    # image memory with no module-list owner
    for group in _group_unlisted_image_regions(space):
        base = group[0].base
        size = group[-1].end - base
        name = group[0].backing_name or "?"
        if _parses_as_pe(space, base, size):
            findings.append(
                Finding(
                    category=FindingClass.DETACHED_MODULE,
                    base=base,
                    size=size,
                    note=f"image memory for {name} has no module-list entry",
                )
            )
        else:
            findings.append(
                Finding(
                    category=FindingClass.READ_ERROR,
                    base=base,
                    size=size,
                    note=f"could not read a PE image at 0x{base:x}",
                )
            )

    # listed modules: header check, then byte comparison where possible
    for record in space.modules:
        if not _parses_as_pe(space, record.base, record.size):
            findings.append(
                Finding(
                    category=FindingClass.DETACHED_MODULE,
                    base=record.base,
                    size=record.size,
                    note=f"{record.name}: in-memory headers unreadable; "
                    f"treated as detached",
                )
            )
            continue
        pristine = pristine_files.get(record.name)
        if pristine is None:
            findings.append(
                Finding(
                    category=FindingClass.IMPLANTED_PE,
                    base=record.base,
                    size=record.size,
                    note=f"{record.name}: module path visible but not in the "
                    f"known-good set",
                )
            )
            continue
        findings.extend(_compare_module(space, record.base, record.name, pristine))
    return findings


def _compare_module(space, base: int, name: str, pristine: bytes) -> list[Finding]:
    """Byte-compare executable sections against relocation-normalized file
    bytes; mismatch means the mapped code was modified."""
    try:
        image = peformat.parse(pristine)
    except PeError:
        return []
    expected = image.virtual_layout()
    try:
        peformat.apply_relocations(expected, image, base)
    except PeError:
        return []
    out = []
    for section in image.sections:
        if not section.executable:
            continue
        lo = section.virtual_address
        hi = lo + section.virtual_span
        try:
            current = space.read(base + lo, hi - lo)
        except UnmappedError:
            continue
        if current != bytes(expected[lo:hi]):
            out.append(
                Finding(
                    category=FindingClass.MODIFIED_MODULE,
                    base=base + lo,
                    size=hi - lo,
                    note=f"{name}: section {section.name} differs from its file image",
                )
            )
    return out
