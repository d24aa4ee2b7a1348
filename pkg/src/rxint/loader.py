"""Two mapping paths into a simulated address space.

``load_module`` is the OS-loader analog: one IMAGE region per section with
the section's own protection, a read-only header region, and a module-list
record. ``manual_map`` is the injector analog: one contiguous private RWX
region, no record, with optional header erasure and data-directory cleaning.

Both paths relocate to the actual base and resolve the import address table
against the export snapshots of already-loaded modules; imports are resolved
before any cloaking so erased payloads still carry live function pointers.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

from . import peformat, resolver
from .errors import ImportUnresolved, OverlapError
from .vaspace import (
    RW, RWX, RX, R,
    AddressSpace,
    ModuleRecord,
    Protection,
    RegionKind,
    page_ceil,
)

HEADER_ERASE_MIN = 0x1000

_U64 = struct.Struct("<Q")


@dataclass(frozen=True)
class MapOptions:
    """Cloaking switches for the manual mapper.

    ``register_module`` exists for symmetry with the legitimate path and must
    stay False here; a registered manual map would just be a loaded module.
    """

    erase_headers: bool = False
    clean_data_directories: bool = False
    register_module: bool = False


@dataclass(frozen=True)
class IatWrite:
    """One resolved import slot, for callers auditing the loader's work."""

    address: int
    value: int
    dll: str
    symbol: str


def _section_protection(section: peformat.SectionHeader) -> Protection:
    if section.executable:
        return RWX if section.writable else RX
    return RW if section.writable else R


def _choose_base(space: AddressSpace, image: peformat.PeImage) -> int:
    if space.span_is_free(image.image_base, image.size_of_image):
        return image.image_base
    if image.reloc_dir is None:
        raise OverlapError(
            f"preferred base 0x{image.image_base:x} is occupied and the image "
            f"has no relocations"
        )
    return space.find_free(image.size_of_image)


def _resolve_iat(
    space: AddressSpace, image: peformat.PeImage, base: int
) -> list[IatWrite]:
    if image.import_dir is None:
        return []
    descriptors = peformat.parse_imports(image.reader(), image.import_dir)
    if not descriptors:
        return []
    snapshot = resolver.build_snapshot(space)
    writes: list[IatWrite] = []
    for descriptor in descriptors:
        slot_rva = descriptor.iat_rva
        for thunk in descriptor.thunks:
            wanted: str | int = thunk.ordinal if thunk.by_ordinal else thunk.name
            entry = snapshot.find_export(descriptor.dll_name, wanted)
            if entry is None or entry.target_address is None:
                raise ImportUnresolved(descriptor.dll_name, str(wanted))
            writes.append(
                IatWrite(
                    address=base + slot_rva,
                    value=entry.target_address,
                    dll=descriptor.dll_name,
                    symbol=entry.symbol,
                )
            )
            slot_rva += 8
    return writes


def _materialize(
    space: AddressSpace, image: peformat.PeImage, base: int
) -> tuple[bytearray, list[IatWrite]]:
    """Mapped image bytes for ``base``: relocated, IAT patched."""
    iat_writes = _resolve_iat(space, image, base)
    mapped = image.virtual_layout()
    peformat.apply_relocations(mapped, image, base)
    for write in iat_writes:
        _U64.pack_into(mapped, write.address - base, write.value)
    return mapped, iat_writes


def load_module(
    space: AddressSpace,
    pe_bytes: bytes,
    name: str,
    path: str,
    iat_log: list[IatWrite] | None = None,
) -> int:
    """Map a PE the way the OS loader would and register a module record.

    Returns the actual load base. If the preferred base is taken the image
    is rebased through its relocations (no relocations -> OverlapError).
    """
    image = peformat.parse(pe_bytes)
    base = _choose_base(space, image)
    mapped, iat_writes = _materialize(space, image, base)
    if iat_log is not None:
        iat_log.extend(iat_writes)

    # headers get their own read-only region; each section keeps its
    # characteristics; interior gaps are committed read-only so the record
    # span is fully image-backed
    pieces: list[tuple[int, int, Protection]] = []
    header_span = page_ceil(image.size_of_headers)
    pieces.append((0, header_span, R))
    cursor = header_span
    for section in sorted(image.sections, key=lambda s: s.virtual_address):
        if section.virtual_address > cursor:
            pieces.append((cursor, section.virtual_address, R))
        pieces.append(
            (
                section.virtual_address,
                section.virtual_address + section.virtual_span,
                _section_protection(section),
            )
        )
        cursor = section.virtual_address + section.virtual_span
    if cursor < image.size_of_image:
        pieces.append((cursor, image.size_of_image, R))

    for lo, hi, protection in pieces:
        space.alloc(
            hi - lo,
            protection,
            RegionKind.IMAGE,
            base=base + lo,
            backing_name=name,
        )
        space.write(base + lo, bytes(mapped[lo:hi]))
    space.link_module(ModuleRecord(base=base, size=image.size_of_image, name=name, path=path))
    return base


def manual_map(
    space: AddressSpace,
    pe_bytes: bytes,
    options: MapOptions = MapOptions(),
    iat_log: list[IatWrite] | None = None,
) -> int:
    """Map a PE the way an injector would: one private RWX blob, no record."""
    if options.register_module:
        raise ValueError("manual_map never registers a module record")
    image = peformat.parse(pe_bytes)
    base = _choose_base(space, image)
    mapped, iat_writes = _materialize(space, image, base)
    if iat_log is not None:
        iat_log.extend(iat_writes)

    if options.clean_data_directories:
        for index in (peformat.DIR_EXPORT, peformat.DIR_IMPORT, peformat.DIR_BASERELOC):
            offset = peformat.data_directory_offset(image, index)
            struct.pack_into("<II", mapped, offset, 0, 0)
    if options.erase_headers:
        span = max(HEADER_ERASE_MIN, image.size_of_headers)
        mapped[:span] = bytes(span)

    space.alloc(
        image.size_of_image,
        RWX,
        RegionKind.PRIVATE,
        base=base,
    )
    space.write(base, bytes(mapped))
    return base
