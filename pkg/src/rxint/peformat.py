"""PE32+ parser and fixture builder.

Covers exactly what the loader, attack suite, and export resolver need from
the 64-bit Portable Executable format: DOS/NT headers, the section table,
the export directory (EAT, name pointer table, ordinal table, forwarder
strings), the import directory with both by-name and by-ordinal thunks, and
DIR64 base relocations. Field layouts follow the Microsoft PE/COFF
specification; everything is little-endian.

Two parsing entry points exist because images are consumed from two places:

* :func:`parse` validates a whole file, including raw data ranges.
* :func:`parse_headers` validates only the header structures, which is what
  memory-resident images offer (directory payloads are then read through a
  caller-provided RVA reader, e.g. process-memory reads).
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from typing import Callable, Sequence

from .errors import (
    BadMagic,
    MalformedSection,
    RelocOutOfRange,
    SpecError,
    Truncated,
    UnmappedRva,
)

DOS_MAGIC = 0x5A4D
NT_SIGNATURE = 0x00004550
OPTIONAL_MAGIC_PE32PLUS = 0x020B
MACHINE_AMD64 = 0x8664

SECTION_ALIGN = 0x1000
FILE_ALIGN = 0x200

DIR_EXPORT = 0
DIR_IMPORT = 1
DIR_BASERELOC = 5
DIR_IAT = 12
NUM_DIRECTORIES = 16

SCN_CNT_CODE = 0x00000020
SCN_CNT_INITIALIZED_DATA = 0x00000040
SCN_MEM_EXECUTE = 0x20000000
SCN_MEM_READ = 0x40000000
SCN_MEM_WRITE = 0x80000000

FILE_EXECUTABLE_IMAGE = 0x0002
FILE_LARGE_ADDRESS_AWARE = 0x0020
FILE_DLL = 0x2000

ORDINAL_FLAG64 = 1 << 63

RELOC_ABS = 0
RELOC_DIR64 = 10

_DOS_LFANEW_OFFSET = 0x3C
_FILE_HEADER = struct.Struct("<HHIIIHH")
_OPTIONAL_FIXED = struct.Struct("<HBBIIIIIQIIHHHHHHIIIIHHQQQQII")
_SECTION = struct.Struct("<8sIIIIIIHHI")
_EXPORT_DIR = struct.Struct("<IIHHIIIIIII")
_IMPORT_DESC = struct.Struct("<IIIII")
_U16 = struct.Struct("<H")
_U32 = struct.Struct("<I")
_U64 = struct.Struct("<Q")

#: RVA reader: read(rva, size) -> exactly `size` bytes or raise.
RvaReader = Callable[[int, int], bytes]


def align_up(value: int, alignment: int) -> int:
    return (value + alignment - 1) // alignment * alignment


def data_directory_offset(image: "PeImage", index: int) -> int:
    """Image offset of one data-directory entry inside the optional header."""
    return image.optional_header_offset + _OPTIONAL_FIXED.size + 8 * index


@dataclass(frozen=True)
class DirEntry:
    rva: int
    size: int

    @property
    def end(self) -> int:
        return self.rva + self.size

    def contains(self, rva: int) -> bool:
        return self.rva <= rva < self.end


@dataclass(frozen=True)
class SectionHeader:
    name: str
    virtual_address: int
    virtual_size: int
    raw_offset: int
    raw_size: int
    characteristics: int

    @property
    def executable(self) -> bool:
        return bool(self.characteristics & SCN_MEM_EXECUTE)

    @property
    def writable(self) -> bool:
        return bool(self.characteristics & SCN_MEM_WRITE)

    @property
    def virtual_span(self) -> int:
        """Pages the section occupies once mapped."""
        return align_up(max(self.virtual_size, 1), SECTION_ALIGN)


@dataclass
class PeImage:
    image_base: int
    size_of_image: int
    size_of_headers: int
    entry_point_rva: int
    sections: list[SectionHeader]
    export_dir: DirEntry | None
    import_dir: DirEntry | None
    reloc_dir: DirEntry | None
    raw: bytes
    optional_header_offset: int

    def section_for_rva(self, rva: int) -> SectionHeader | None:
        for section in self.sections:
            if section.virtual_address <= rva < section.virtual_address + section.virtual_span:
                return section
        return None

    def rva_to_file_offset(self, rva: int) -> int:
        if 0 <= rva < self.size_of_headers:
            return rva
        section = self.section_for_rva(rva)
        if section is None:
            raise UnmappedRva(f"rva 0x{rva:x} outside headers and all sections")
        return section.raw_offset + (rva - section.virtual_address)

    def read_virtual(self, rva: int, size: int) -> bytes:
        """Bytes as they would appear in memory, zero-filling section tails."""
        if size == 0:
            return b""
        out = bytearray()
        pos = rva
        end = rva + size
        while pos < end:
            if pos < self.size_of_headers:
                hi = min(end, self.size_of_headers)
                out += self.raw[pos:hi]
                pos = hi
                continue
            section = self.section_for_rva(pos)
            if section is None:
                raise UnmappedRva(f"rva 0x{pos:x} unmapped")
            span_end = section.virtual_address + section.virtual_span
            hi = min(end, span_end)
            raw_lo = section.raw_offset + (pos - section.virtual_address)
            raw_hi = min(section.raw_offset + section.raw_size, raw_lo + (hi - pos))
            chunk = self.raw[raw_lo:raw_hi] if raw_hi > raw_lo else b""
            out += chunk
            out += bytes((hi - pos) - len(chunk))
            pos = hi
        return bytes(out)

    def virtual_layout(self) -> bytearray:
        """The fully mapped image: headers plus sections at their RVAs."""
        mapped = bytearray(self.size_of_image)
        mapped[: self.size_of_headers] = self.raw[: self.size_of_headers]
        for section in self.sections:
            copy = min(section.raw_size, self.size_of_image - section.virtual_address)
            src = self.raw[section.raw_offset : section.raw_offset + copy]
            mapped[section.virtual_address : section.virtual_address + len(src)] = src
        return mapped

    def reader(self) -> RvaReader:
        return self.read_virtual


@dataclass(frozen=True)
class ExportDirectory:
    ordinal_base: int
    function_rvas: list[int]
    name_rvas: list[int]
    name_ordinals: list[int]
    dll_name_rva: int


@dataclass(frozen=True)
class ImportThunk:
    by_ordinal: bool
    ordinal: int | None = None
    name: str | None = None


@dataclass(frozen=True)
class ImportDescriptor:
    dll_name: str
    thunks: list[ImportThunk]
    iat_rva: int


@dataclass(frozen=True)
class RelocationEntry:
    type: int
    offset: int


@dataclass(frozen=True)
class RelocationBlock:
    page_rva: int
    entries: list[RelocationEntry]


# ---------------------------------------------------------------------------
# parsing
# ---------------------------------------------------------------------------

def _need(data: bytes, offset: int, size: int, what: str) -> None:
    if offset < 0 or offset + size > len(data):
        raise Truncated(f"{what} extends past input ({offset}+{size} > {len(data)})")


def parse_headers(data: bytes) -> PeImage:
    """Validate DOS/NT/optional headers and the section table.

    Section *virtual* geometry is checked here; raw file ranges are not, so
    this is safe on the header pages of a memory-mapped image. ``raw`` is the
    input as given.
    """
    _need(data, 0, 0x40, "DOS header")
    if _U16.unpack_from(data, 0)[0] != DOS_MAGIC:
        raise BadMagic("missing MZ signature")
    e_lfanew = _U32.unpack_from(data, _DOS_LFANEW_OFFSET)[0]
    _need(data, e_lfanew, 4 + _FILE_HEADER.size, "NT headers")
    if _U32.unpack_from(data, e_lfanew)[0] != NT_SIGNATURE:
        raise BadMagic("missing PE signature")
    (
        _machine,
        num_sections,
        _timestamp,
        _symtab,
        _nsyms,
        size_of_optional,
        _characteristics,
    ) = _FILE_HEADER.unpack_from(data, e_lfanew + 4)

    opt_offset = e_lfanew + 4 + _FILE_HEADER.size
    _need(data, opt_offset, size_of_optional, "optional header")
    if size_of_optional < _OPTIONAL_FIXED.size:
        raise Truncated("optional header too small for PE32+")
    fixed = _OPTIONAL_FIXED.unpack_from(data, opt_offset)
    if fixed[0] != OPTIONAL_MAGIC_PE32PLUS:
        raise BadMagic(f"optional header magic 0x{fixed[0]:x} is not PE32+")
    entry_point = fixed[6]
    image_base = fixed[8]
    size_of_image = fixed[18]
    size_of_headers = fixed[19]
    num_dirs = min(fixed[28], NUM_DIRECTORIES)

    dirs: list[DirEntry | None] = [None] * NUM_DIRECTORIES
    dir_offset = opt_offset + _OPTIONAL_FIXED.size
    for i in range(num_dirs):
        _need(data, dir_offset + 8 * i, 8, "data directory")
        rva, size = struct.unpack_from("<II", data, dir_offset + 8 * i)
        if rva and size:
            dirs[i] = DirEntry(rva, size)

    sections: list[SectionHeader] = []
    sec_offset = opt_offset + size_of_optional
    for i in range(num_sections):
        off = sec_offset + i * _SECTION.size
        _need(data, off, _SECTION.size, "section header")
        (name, vsize, va, rawsize, rawoff, _pr, _pl, _nr, _nl, chars) = _SECTION.unpack_from(data, off)
        sections.append(
            SectionHeader(
                name=name.rstrip(b"\0").decode("ascii", "replace"),
                virtual_address=va,
                virtual_size=vsize,
                raw_offset=rawoff,
                raw_size=rawsize,
                characteristics=chars,
            )
        )

    image = PeImage(
        image_base=image_base,
        size_of_image=size_of_image,
        size_of_headers=size_of_headers,
        entry_point_rva=entry_point,
        sections=sections,
        export_dir=dirs[DIR_EXPORT],
        import_dir=dirs[DIR_IMPORT],
        reloc_dir=dirs[DIR_BASERELOC],
        raw=data,
        optional_header_offset=opt_offset,
    )
    _validate_virtual_geometry(image)
    return image


def _validate_virtual_geometry(image: PeImage) -> None:
    spans = []
    for section in image.sections:
        lo = section.virtual_address
        hi = lo + section.virtual_span
        if lo % SECTION_ALIGN:
            raise MalformedSection(
                f"section {section.name!r} virtual address 0x{lo:x} not aligned"
            )
        if lo < image.size_of_headers or hi > align_up(image.size_of_image, SECTION_ALIGN):
            raise MalformedSection(
                f"section {section.name!r} virtual range 0x{lo:x}..0x{hi:x} "
                f"outside [0x{image.size_of_headers:x}, 0x{image.size_of_image:x})"
            )
        spans.append((lo, hi, section.name))
    spans.sort()
    for (lo_a, hi_a, name_a), (lo_b, _hi_b, name_b) in zip(spans, spans[1:]):
        if lo_b < hi_a:
            raise MalformedSection(f"sections {name_a!r} and {name_b!r} overlap")


def parse(data: bytes) -> PeImage:
    """Fully validate a PE32+ file, including raw data ranges."""
    image = parse_headers(data)
    if image.size_of_headers > len(data):
        raise Truncated("size_of_headers exceeds file size")
    for section in image.sections:
        if section.raw_offset + section.raw_size > len(data):
            raise Truncated(
                f"section {section.name!r} raw data extends past the file"
            )
    return image


def read_cstring(read: RvaReader, rva: int, max_len: int = 512) -> str:
    """NUL-terminated ASCII string read through an RVA reader."""
    out = bytearray()
    pos = rva
    while len(out) < max_len:
        chunk = read(pos, min(64, max_len - len(out)))
        if not chunk:
            break
        nul = chunk.find(0)
        if nul >= 0:
            out += chunk[:nul]
            return out.decode("ascii", "replace")
        out += chunk
        pos += len(chunk)
    raise Truncated(f"unterminated string at rva 0x{rva:x}")


def parse_export_directory(read: RvaReader, directory: DirEntry) -> ExportDirectory:
    raw = read(directory.rva, _EXPORT_DIR.size)
    (
        _chars,
        _stamp,
        _maj,
        _min,
        dll_name_rva,
        ordinal_base,
        num_functions,
        num_names,
        eat_rva,
        npt_rva,
        ord_rva,
    ) = _EXPORT_DIR.unpack(raw)
    if num_functions > 0x10000 or num_names > 0x10000:
        raise MalformedSection("export table counts implausibly large")
    function_rvas = list(struct.unpack(f"<{num_functions}I", read(eat_rva, 4 * num_functions))) if num_functions else []
    name_rvas = list(struct.unpack(f"<{num_names}I", read(npt_rva, 4 * num_names))) if num_names else []
    name_ordinals = list(struct.unpack(f"<{num_names}H", read(ord_rva, 2 * num_names))) if num_names else []
    for ordinal in name_ordinals:
        if ordinal >= num_functions:
            raise MalformedSection(
                f"name ordinal {ordinal} does not index the export address table"
            )
    return ExportDirectory(
        ordinal_base=ordinal_base,
        function_rvas=function_rvas,
        name_rvas=name_rvas,
        name_ordinals=name_ordinals,
        dll_name_rva=dll_name_rva,
    )


def parse_imports(read: RvaReader, directory: DirEntry) -> list[ImportDescriptor]:
    descriptors: list[ImportDescriptor] = []
    pos = directory.rva
    while True:
        raw = read(pos, _IMPORT_DESC.size)
        oft, _stamp, _chain, name_rva, iat_rva = _IMPORT_DESC.unpack(raw)
        if not (oft or name_rva or iat_rva):
            break
        thunks: list[ImportThunk] = []
        thunk_rva = oft or iat_rva
        while True:
            value = _U64.unpack(read(thunk_rva, 8))[0]
            if value == 0:
                break
            if value & ORDINAL_FLAG64:
                thunks.append(ImportThunk(by_ordinal=True, ordinal=value & 0xFFFF))
            else:
                name = read_cstring(read, (value & 0x7FFFFFFF) + 2)  # skip hint
                thunks.append(ImportThunk(by_ordinal=False, name=name))
            thunk_rva += 8
        descriptors.append(
            ImportDescriptor(
                dll_name=read_cstring(read, name_rva),
                thunks=thunks,
                iat_rva=iat_rva,
            )
        )
        pos += _IMPORT_DESC.size
    return descriptors


def parse_relocations(read: RvaReader, directory: DirEntry) -> list[RelocationBlock]:
    blocks: list[RelocationBlock] = []
    pos = directory.rva
    end = directory.end
    while pos + 8 <= end:
        page_rva, block_size = struct.unpack("<II", read(pos, 8))
        if block_size < 8 or block_size % 2:
            raise MalformedSection(f"relocation block at rva 0x{pos:x} has bad size")
        count = (block_size - 8) // 2
        raw = read(pos + 8, 2 * count)
        entries = []
        for i in range(count):
            value = _U16.unpack_from(raw, 2 * i)[0]
            rtype, offset = value >> 12, value & 0x0FFF
            if rtype not in (RELOC_ABS, RELOC_DIR64):
                raise MalformedSection(f"unsupported relocation type {rtype}")
            entries.append(RelocationEntry(type=rtype, offset=offset))
        blocks.append(RelocationBlock(page_rva=page_rva, entries=entries))
        pos += block_size
    return blocks


def apply_relocations(mapped: bytearray, image: PeImage, actual_base: int) -> int:
    """Apply every DIR64 fixup for a load at ``actual_base``; returns the
    DIR64 entry count (padding entries are not counted)."""
    if len(mapped) != image.size_of_image:
        raise RelocOutOfRange("mapped buffer length must equal size_of_image")
    if image.reloc_dir is None:
        return 0
    delta = (actual_base - image.image_base) & 0xFFFFFFFFFFFFFFFF
    count = 0
    for block in parse_relocations(image.reader(), image.reloc_dir):
        for entry in block.entries:
            if entry.type != RELOC_DIR64:
                continue
            target = block.page_rva + entry.offset
            if target + 8 > len(mapped):
                raise RelocOutOfRange(
                    f"DIR64 fixup at rva 0x{target:x} exceeds the mapped image"
                )
            value = _U64.unpack_from(mapped, target)[0]
            _U64.pack_into(mapped, target, (value + delta) & 0xFFFFFFFFFFFFFFFF)
            count += 1
    return count


# ---------------------------------------------------------------------------
# building
# ---------------------------------------------------------------------------

@dataclass
class SectionSpec:
    """One section to emit. ``flags`` is one of r/rw/rx/rwx."""

    name: str
    flags: str
    content: bytes = b""
    virtual_size: int | None = None


@dataclass
class ExportSpec:
    """A named or ordinal-only export; exactly one of rva/forwarder is set."""

    name: str | None = None
    rva: int | None = None
    forwarder: str | None = None
    ordinal: int | None = None


@dataclass
class ImportSpec:
    dll: str
    symbols: Sequence[str | int] = ()


@dataclass
class PeSpec:
    """Symbolic description consumed by :func:`build`.

    Export/import/relocation machinery is emitted into auto-appended
    ``.edata`` / ``.idata`` / ``.reloc`` sections unless pinned into a
    declared section via ``exports_rva`` / ``imports_rva`` / ``iat_rva``.
    """

    image_base: int
    sections: list[SectionSpec] = field(default_factory=list)
    exports: list[ExportSpec] = field(default_factory=list)
    export_dll_name: str = "fixture.dll"
    ordinal_base: int = 1
    imports: list[ImportSpec] = field(default_factory=list)
    relocations: list[int] = field(default_factory=list)
    entry_point: int | None = None
    exports_rva: int | None = None
    imports_rva: int | None = None
    iat_rva: int | None = None
    relocs_rva: int | None = None
    timestamp: int = 0


_FLAG_CHARS = {
    "r": SCN_MEM_READ | SCN_CNT_INITIALIZED_DATA,
    "rw": SCN_MEM_READ | SCN_MEM_WRITE | SCN_CNT_INITIALIZED_DATA,
    "rx": SCN_MEM_READ | SCN_MEM_EXECUTE | SCN_CNT_CODE,
    "rwx": SCN_MEM_READ | SCN_MEM_WRITE | SCN_MEM_EXECUTE | SCN_CNT_CODE,
}


def section_characteristics(flags: str) -> int:
    try:
        return _FLAG_CHARS[flags.lower()]
    except KeyError:
        raise SpecError(f"unknown section flags {flags!r}", field="flags") from None


class _Layout:
    """Working state for one build: section placement and pinned blobs."""

    def __init__(self, spec: PeSpec):
        self.spec = spec
        self.sections: list[dict] = []
        va = SECTION_ALIGN
        for s in spec.sections:
            if not s.name or len(s.name.encode("ascii", "replace")) > 8:
                raise SpecError(f"bad section name {s.name!r}", field="name")
            vsize = s.virtual_size if s.virtual_size is not None else max(len(s.content), 1)
            if vsize < len(s.content):
                raise SpecError(
                    f"section {s.name}: virtual_size smaller than content",
                    field="virtual_size",
                )
            self.sections.append(
                {
                    "name": s.name,
                    "va": va,
                    "vsize": vsize,
                    "chars": section_characteristics(s.flags),
                    "content": bytearray(s.content),
                }
            )
            va += align_up(max(vsize, 1), SECTION_ALIGN)
        self.next_va = va

    def add_auto_section(self, name: str, flags: str, size: int) -> dict:
        entry = {
            "name": name,
            "va": self.next_va,
            "vsize": size,
            "chars": section_characteristics(flags),
            "content": bytearray(size),
        }
        self.sections.append(entry)
        self.next_va += align_up(max(size, 1), SECTION_ALIGN)
        return entry

    def section_holding(self, rva: int, size: int) -> dict:
        for entry in self.sections:
            if entry["va"] <= rva and rva + size <= entry["va"] + align_up(max(entry["vsize"], 1), SECTION_ALIGN):
                return entry
        raise SpecError(f"rva 0x{rva:x}+0x{size:x} not inside any section", field="rva")

    def write_at(self, rva: int, blob: bytes) -> None:
        entry = self.section_holding(rva, len(blob))
        off = rva - entry["va"]
        end = off + len(blob)
        if end > len(entry["content"]):
            entry["content"].extend(bytes(end - len(entry["content"])))
        if end > entry["vsize"]:
            entry["vsize"] = end
        entry["content"][off:end] = blob

    def rva_in_declared_section(self, rva: int) -> bool:
        for entry in self.sections:
            if entry["va"] <= rva < entry["va"] + align_up(max(entry["vsize"], 1), SECTION_ALIGN):
                return True
        return False


def _build_export_blob(spec: PeSpec, base_rva: int) -> bytes:
    exports = spec.exports
    names_seen = set()
    resolved: list[tuple[int, ExportSpec]] = []
    next_ordinal = spec.ordinal_base
    for e in exports:
        if (e.rva is None) == (e.forwarder is None):
            raise SpecError(
                f"export {e.name!r} must set exactly one of rva/forwarder",
                field="exports",
            )
        if e.name is not None:
            if e.name in names_seen:
                raise SpecError(f"duplicate export name {e.name!r}", field="exports")
            names_seen.add(e.name)
        ordinal = e.ordinal if e.ordinal is not None else next_ordinal
        if ordinal < spec.ordinal_base:
            raise SpecError(f"ordinal {ordinal} below ordinal_base", field="exports")
        next_ordinal = max(next_ordinal, ordinal + 1)
        resolved.append((ordinal, e))
    by_ordinal = {}
    for ordinal, e in resolved:
        if ordinal in by_ordinal:
            raise SpecError(f"duplicate ordinal {ordinal}", field="exports")
        by_ordinal[ordinal] = e

    num_functions = (max(by_ordinal) - spec.ordinal_base + 1) if by_ordinal else 0
    named = sorted(
        ((e.name, ordinal) for ordinal, e in by_ordinal.items() if e.name is not None),
        key=lambda pair: pair[0],
    )

    eat_rva = base_rva + _EXPORT_DIR.size
    npt_rva = eat_rva + 4 * num_functions
    ord_rva = npt_rva + 4 * len(named)
    strings_rva = ord_rva + 2 * len(named)

    strings = bytearray()
    dll_name_rva = strings_rva
    strings += spec.export_dll_name.encode("ascii") + b"\0"
    name_rvas: list[int] = []
    for name, _ordinal in named:
        name_rvas.append(strings_rva + len(strings))
        strings += name.encode("ascii") + b"\0"
    forwarder_rvas: dict[int, int] = {}
    for ordinal, e in by_ordinal.items():
        if e.forwarder is not None:
            forwarder_rvas[ordinal] = strings_rva + len(strings)
            strings += e.forwarder.encode("ascii") + b"\0"

    eat = bytearray(4 * num_functions)
    for ordinal, e in by_ordinal.items():
        slot = ordinal - spec.ordinal_base
        value = forwarder_rvas[ordinal] if e.forwarder is not None else e.rva
        _U32.pack_into(eat, 4 * slot, value)

    blob = bytearray()
    blob += _EXPORT_DIR.pack(
        0,
        spec.timestamp,
        0,
        0,
        dll_name_rva,
        spec.ordinal_base,
        num_functions,
        len(named),
        eat_rva,
        npt_rva,
        ord_rva,
    )
    blob += eat
    for name_rva in name_rvas:
        blob += _U32.pack(name_rva)
    for _name, ordinal in named:
        blob += _U16.pack(ordinal - spec.ordinal_base)
    blob += strings
    return bytes(blob)


def _build_import_blobs(
    spec: PeSpec, desc_rva: int, iat_rva: int | None
) -> tuple[bytes, bytes, int, int]:
    """Returns (descriptor+ILT+strings blob, IAT blob, iat_rva, iat_size).

    When ``iat_rva`` is None the IAT is placed directly after the blob at
    ``desc_rva``; otherwise the IAT blob must be written at the pinned rva.
    """
    dlls = spec.imports
    n_desc = len(dlls)
    desc_size = (n_desc + 1) * _IMPORT_DESC.size

    # layout ILTs, hint/name entries and dll names after the descriptor array
    ilt_rvas: list[int] = []
    pos = desc_rva + desc_size
    for d in dlls:
        ilt_rvas.append(pos)
        pos += 8 * (len(d.symbols) + 1)
    hint_name_rvas: dict[tuple[int, int], int] = {}
    strings = bytearray()
    strings_rva = pos
    for i, d in enumerate(dlls):
        for j, symbol in enumerate(d.symbols):
            if isinstance(symbol, str):
                hint_name_rvas[(i, j)] = strings_rva + len(strings)
                strings += _U16.pack(0) + symbol.encode("ascii") + b"\0"
                if len(strings) % 2:
                    strings += b"\0"
    dll_name_rvas: list[int] = []
    for d in dlls:
        dll_name_rvas.append(strings_rva + len(strings))
        strings += d.dll.encode("ascii") + b"\0"
    blob_end = strings_rva + len(strings)

    total_slots = sum(len(d.symbols) + 1 for d in dlls)
    iat_size = 8 * total_slots
    if iat_rva is None:
        iat_rva = blob_end

    # thunk values shared by ILT and initial IAT
    def thunk_value(i: int, j: int, symbol: str | int) -> int:
        if isinstance(symbol, int):
            return ORDINAL_FLAG64 | (symbol & 0xFFFF)
        return hint_name_rvas[(i, j)]

    ilt = bytearray()
    iat_offsets: list[int] = []
    offset = 0
    for i, d in enumerate(dlls):
        iat_offsets.append(offset)
        for j, symbol in enumerate(d.symbols):
            ilt += _U64.pack(thunk_value(i, j, symbol))
            offset += 8
        ilt += _U64.pack(0)
        offset += 8

    descs = bytearray()
    for i, d in enumerate(dlls):
        descs += _IMPORT_DESC.pack(
            ilt_rvas[i], spec.timestamp, 0, dll_name_rvas[i], iat_rva + iat_offsets[i]
        )
    descs += _IMPORT_DESC.pack(0, 0, 0, 0, 0)

    blob = bytes(descs) + bytes(ilt) + bytes(strings)
    return blob, bytes(ilt), iat_rva, iat_size


def _build_reloc_blob(rvas: Sequence[int]) -> bytes:
    blob = bytearray()
    by_page: dict[int, list[int]] = {}
    for rva in sorted(rvas):
        by_page.setdefault(rva & ~0xFFF, []).append(rva & 0xFFF)
    for page in sorted(by_page):
        offsets = by_page[page]
        entries = [(RELOC_DIR64 << 12) | off for off in offsets]
        if len(entries) % 2:
            entries.append(RELOC_ABS << 12)  # padding entry
        blob += struct.pack("<II", page, 8 + 2 * len(entries))
        for value in entries:
            blob += _U16.pack(value)
    return bytes(blob)


def build(spec: PeSpec) -> bytes:
    """Emit PE32+ bytes for ``spec``; the output round-trips through parse."""
    if spec.image_base % SECTION_ALIGN:
        raise SpecError("image_base must be page aligned", field="image_base")
    if not spec.sections:
        raise SpecError("at least one section is required", field="sections")
    layout = _Layout(spec)

    # exports
    export_dir: tuple[int, int] | None = None
    if spec.exports:
        probe = len(_build_export_blob(spec, 0x1000))  # size is base-invariant
        if spec.exports_rva is not None:
            blob = _build_export_blob(spec, spec.exports_rva)
            layout.write_at(spec.exports_rva, blob)
            export_dir = (spec.exports_rva, len(blob))
        else:
            entry = layout.add_auto_section(".edata", "r", probe)
            blob = _build_export_blob(spec, entry["va"])
            entry["content"][:] = blob
            export_dir = (entry["va"], len(blob))
    elif spec.exports_rva is not None:
        raise SpecError("exports_rva given without exports", field="exports_rva")

    # imports
    import_dir: tuple[int, int] | None = None
    iat_dir: tuple[int, int] | None = None
    if spec.imports:
        if spec.imports_rva is not None:
            desc_rva = spec.imports_rva
            blob, iat_blob, iat_rva, iat_size = _build_import_blobs(
                spec, desc_rva, spec.iat_rva
            )
            layout.write_at(desc_rva, blob)
            layout.write_at(iat_rva, iat_blob)
        else:
            probe_blob, _, _, iat_size = _build_import_blobs(spec, 0x1000, None)
            total = len(probe_blob) + (iat_size if spec.iat_rva is None else 0)
            entry = layout.add_auto_section(".idata", "rw", total)
            desc_rva = entry["va"]
            blob, iat_blob, iat_rva, iat_size = _build_import_blobs(
                spec, desc_rva, spec.iat_rva
            )
            layout.write_at(desc_rva, blob)
            layout.write_at(iat_rva, iat_blob)
        import_dir = (desc_rva, (len(spec.imports) + 1) * _IMPORT_DESC.size)
        iat_dir = (iat_rva, iat_size)
    elif spec.iat_rva is not None or spec.imports_rva is not None:
        raise SpecError("import rva pins given without imports", field="imports")

    # relocations
    reloc_dir: tuple[int, int] | None = None
    if spec.relocations:
        blob = _build_reloc_blob(spec.relocations)
        if spec.relocs_rva is not None:
            layout.write_at(spec.relocs_rva, blob)
            reloc_dir = (spec.relocs_rva, len(blob))
        else:
            entry = layout.add_auto_section(".reloc", "r", len(blob))
            entry["content"][:] = blob
            reloc_dir = (entry["va"], len(blob))
    elif spec.relocs_rva is not None:
        raise SpecError("relocs_rva given without relocations", field="relocs_rva")

    # validate export target rvas and relocation slots land inside sections
    for e in spec.exports:
        if e.rva is not None and not layout.rva_in_declared_section(e.rva):
            raise SpecError(
                f"export {e.name!r} rva 0x{e.rva:x} outside all sections",
                field="exports",
            )
    for rva in spec.relocations:
        layout.section_holding(rva, 8)

    # headers
    num_sections = len(layout.sections)
    headers_size = 0x40 + 4 + _FILE_HEADER.size + 240 + num_sections * _SECTION.size
    size_of_headers = align_up(headers_size, FILE_ALIGN)
    size_of_image = layout.next_va

    entry_point = spec.entry_point
    if entry_point is None:
        entry_point = 0
        for entry in layout.sections:
            if entry["chars"] & SCN_MEM_EXECUTE:
                entry_point = entry["va"]
                break

    # file layout
    raw_offset = size_of_headers
    file_entries = []
    for entry in layout.sections:
        raw_size = align_up(len(entry["content"]), FILE_ALIGN)
        file_entries.append((entry, raw_offset, raw_size))
        raw_offset += raw_size

    out = bytearray(raw_offset)
    # DOS header: magic + e_lfanew, no stub
    _U16.pack_into(out, 0, DOS_MAGIC)
    _U32.pack_into(out, _DOS_LFANEW_OFFSET, 0x40)
    pos = 0x40
    _U32.pack_into(out, pos, NT_SIGNATURE)
    pos += 4
    _FILE_HEADER.pack_into(
        out,
        pos,
        MACHINE_AMD64,
        num_sections,
        spec.timestamp,
        0,
        0,
        240,
        FILE_EXECUTABLE_IMAGE | FILE_LARGE_ADDRESS_AWARE | FILE_DLL,
    )
    pos += _FILE_HEADER.size
    size_of_code = sum(
        raw_size
        for entry, _off, raw_size in file_entries
        if entry["chars"] & SCN_CNT_CODE
    )
    size_of_data = sum(
        raw_size
        for entry, _off, raw_size in file_entries
        if entry["chars"] & SCN_CNT_INITIALIZED_DATA
    )
    _OPTIONAL_FIXED.pack_into(
        out,
        pos,
        OPTIONAL_MAGIC_PE32PLUS,
        14,
        0,
        size_of_code,
        size_of_data,
        0,
        entry_point,
        SECTION_ALIGN,
        spec.image_base,
        SECTION_ALIGN,
        FILE_ALIGN,
        6,
        0,
        0,
        0,
        6,
        0,
        0,
        size_of_image,
        size_of_headers,
        0,
        2,  # GUI subsystem
        0x0160,  # high entropy VA | dynamic base | NX compat
        0x100000,
        0x1000,
        0x100000,
        0x1000,
        0,
        NUM_DIRECTORIES,
    )
    dir_offset = pos + _OPTIONAL_FIXED.size
    for index, value in (
        (DIR_EXPORT, export_dir),
        (DIR_IMPORT, import_dir),
        (DIR_BASERELOC, reloc_dir),
        (DIR_IAT, iat_dir),
    ):
        if value is not None:
            struct.pack_into("<II", out, dir_offset + 8 * index, value[0], value[1])
    pos = dir_offset + 8 * NUM_DIRECTORIES
    for entry, offset, raw_size in file_entries:
        _SECTION.pack_into(
            out,
            pos,
            entry["name"].encode("ascii")[:8].ljust(8, b"\0"),
            entry["vsize"],
            entry["va"],
            raw_size,
            offset,
            0,
            0,
            0,
            0,
            entry["chars"],
        )
        pos += _SECTION.size
        out[offset : offset + len(entry["content"])] = entry["content"]
    return bytes(out)
