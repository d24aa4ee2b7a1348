"""Export-snapshot builder and raw-dump symbol resolution.

Walks the load-order module list, parses each module's export directory out
of mapped memory, resolves forwarder chains, and indexes every concrete
export address so that 8-byte values found in raw dumps can be mapped back
to ``module!Symbol`` names.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from . import peformat
from .errors import PeError, Truncated, UnmappedError
from .vaspace import AddressSpace, ModuleRecord

#: Forwarder chains longer than this are treated as unresolvable (cycle guard).
MAX_FORWARD_DEPTH = 8


@dataclass(frozen=True)
class ExportEntry:
    module: str
    name: str | None
    ordinal: int
    absolute_address: int
    forwarder: str | None = None
    #: Concrete address the entry resolves to; for plain exports this equals
    #: ``absolute_address``, for forwarders it is the resolved target (or
    #: None while the target module is not loaded).
    target_address: int | None = None

    @property
    def symbol(self) -> str:
        if self.name is not None:
            return f"{self.module}!{self.name}"
        return f"{self.module}!#{self.ordinal}"


@dataclass
class ModuleExports:
    module: str
    base: int
    entries: list[ExportEntry] = field(default_factory=list)


@dataclass
class ExportSnapshot:
    """Per-module export lists plus an absolute-address lookup index."""

    modules: list[ModuleExports] = field(default_factory=list)
    address_index: dict[int, ExportEntry] = field(default_factory=dict)
    warnings: list[str] = field(default_factory=list)

    def module_named(self, dll: str) -> ModuleExports | None:
        wanted = _canonical(dll)
        for mod in self.modules:
            if _canonical(mod.module) == wanted:
                return mod
        return None

    def find_export(self, dll: str, symbol: str | int) -> ExportEntry | None:
        mod = self.module_named(dll)
        if mod is None:
            return None
        for entry in mod.entries:
            if isinstance(symbol, int):
                if entry.ordinal == symbol:
                    return entry
            elif entry.name == symbol:
                return entry
        return None

    def footprint(self) -> int:
        """Byte accounting of the jagged per-module entry lists."""
        total = 0
        for mod in self.modules:
            total += 16 + len(mod.module.encode())
            for entry in mod.entries:
                total += 12  # address + ordinal
                total += len(entry.name.encode()) if entry.name else 0
                total += len(entry.forwarder.encode()) if entry.forwarder else 0
        return total


def _canonical(dll: str) -> str:
    name = dll.lower()
    return name if name.endswith(".dll") else name + ".dll"


def _space_reader(space: AddressSpace, base: int) -> peformat.RvaReader:
    def read(rva: int, size: int) -> bytes:
        return space.read(base + rva, size)

    return read


def _parse_module_exports(
    space: AddressSpace, record: ModuleRecord
) -> tuple[list[tuple[int, int | None, str | None, str | None]], str | None]:
    """Raw export rows for one module: (ordinal, rva, name, forwarder).

    Returns (rows, warning). A module without an export directory yields no
    rows and no warning; unparsable headers yield a warning.
    """
    try:
        head = space.read(record.base, min(record.size, 0x1000))
        image = peformat.parse_headers(head)
    except (PeError, UnmappedError) as exc:
        return [], f"{record.name}: unparsable in-memory headers ({exc})"
    if image.export_dir is None:
        return [], None
    read = _space_reader(space, record.base)
    try:
        directory = peformat.parse_export_directory(read, image.export_dir)
    except (PeError, UnmappedError) as exc:
        return [], f"{record.name}: unreadable export directory ({exc})"

    names_by_index: dict[int, str] = {}
    for name_rva, ordinal_index in zip(directory.name_rvas, directory.name_ordinals):
        try:
            names_by_index[ordinal_index] = peformat.read_cstring(read, name_rva)
        except (PeError, UnmappedError):
            continue

    rows = []
    for index, rva in enumerate(directory.function_rvas):
        if rva == 0:  # gap ordinal, skipped by convention
            continue
        forwarder = None
        if image.export_dir.contains(rva):
            try:
                forwarder = peformat.read_cstring(read, rva)
            except (PeError, UnmappedError, Truncated):
                forwarder = None
        rows.append(
            (directory.ordinal_base + index, rva, names_by_index.get(index), forwarder)
        )
    return rows, None


def build_snapshot(space: AddressSpace) -> ExportSnapshot:
    """Snapshot the export landscape of every listed module.

    Modules whose in-memory headers no longer parse (e.g. erased) are
    recorded as warnings and skipped; the snapshot is still built for the
    rest.
    """
    snapshot = ExportSnapshot()
    raw_rows: dict[str, list[tuple[int, int | None, str | None, str | None]]] = {}
    bases: dict[str, int] = {}
    for record in space.modules:
        rows, warning = _parse_module_exports(space, record)
        if warning:
            snapshot.warnings.append(warning)
            continue
        key = _canonical(record.name)
        raw_rows[key] = rows
        bases[key] = record.base
        snapshot.modules.append(ModuleExports(module=record.name, base=record.base))

    def resolve_target(dll_key: str, symbol: str | int, depth: int) -> int | None:
        if depth > MAX_FORWARD_DEPTH or dll_key not in raw_rows:
            return None
        for ordinal, rva, name, forwarder in raw_rows[dll_key]:
            matched = (
                ordinal == symbol if isinstance(symbol, int) else name == symbol
            )
            if not matched:
                continue
            if forwarder is None:
                return bases[dll_key] + rva
            parsed = _parse_forwarder(forwarder)
            if parsed is None:
                return None
            return resolve_target(parsed[0], parsed[1], depth + 1)
        return None

    for mod in snapshot.modules:
        key = _canonical(mod.module)
        for ordinal, rva, name, forwarder in raw_rows[key]:
            absolute = mod.base + rva
            if forwarder is None:
                target = absolute
            else:
                parsed = _parse_forwarder(forwarder)
                target = (
                    resolve_target(parsed[0], parsed[1], 1) if parsed else None
                )
            entry = ExportEntry(
                module=mod.module,
                name=name,
                ordinal=ordinal,
                absolute_address=absolute,
                forwarder=forwarder,
                target_address=target,
            )
            mod.entries.append(entry)

    # Index plain exports first so an address always resolves to its owner;
    # forwarder entries only fill addresses nobody owns directly.
    for mod in snapshot.modules:
        for entry in mod.entries:
            if entry.forwarder is None and entry.target_address is not None:
                snapshot.address_index.setdefault(entry.target_address, entry)
    for mod in snapshot.modules:
        for entry in mod.entries:
            if entry.forwarder is not None and entry.target_address is not None:
                snapshot.address_index.setdefault(entry.target_address, entry)
    return snapshot


def _parse_forwarder(text: str) -> tuple[str, str | int] | None:
    """Split ``dll.Symbol`` / ``dll.#123`` forwarder text."""
    dot = text.rfind(".")
    if dot <= 0 or dot == len(text) - 1:
        return None
    dll, symbol = text[:dot], text[dot + 1 :]
    if symbol.startswith("#"):
        try:
            return _canonical(dll), int(symbol[1:])
        except ValueError:
            return None
    return _canonical(dll), symbol


def resolve_address(snapshot: ExportSnapshot, value: int) -> str | None:
    """Exact-match lookup; returns ``module!Name`` or ``module!#ordinal``."""
    entry = snapshot.address_index.get(value)
    return entry.symbol if entry is not None else None


@dataclass(frozen=True)
class ReportHit:
    address: int
    value: int
    symbol: str


@dataclass
class ImportReport:
    dump_name: str
    dump_base: int
    hits: list[ReportHit]
    export_listing: list[str] | None = None

    @property
    def resolved(self) -> int:
        return len(self.hits)

    def to_text(self) -> str:
        lines = [f"RX-INT IMPORT ANALYSIS {self.dump_name}"]
        for hit in self.hits:
            lines.append(f"0x{hit.address:X}: 0x{hit.value:X} -> {hit.symbol}")
        lines.append(f"RESOLVED: {self.resolved}")
        if self.export_listing is not None:
            lines.append("")
            lines.extend(self.export_listing)
        return "\n".join(lines) + "\n"


def export_listing(snapshot: ExportSnapshot) -> list[str]:
    """Appendix block: the full per-module export snapshot."""
    lines: list[str] = []
    for mod in snapshot.modules:
        lines.append(f"EXPORTS {mod.module} ({len(mod.entries)})")
        for entry in mod.entries:
            target = (
                f"0x{entry.target_address:X}"
                if entry.target_address is not None
                else f"-> {entry.forwarder}"
            )
            lines.append(f"  {target} {entry.symbol}")
    return lines


def snapshot_to_dict(snapshot: ExportSnapshot) -> dict:
    """JSON-safe form of a snapshot, for persisting alongside run artifacts."""
    return {
        "modules": [
            {
                "module": mod.module,
                "base": f"0x{mod.base:X}",
                "entries": [
                    {
                        "name": entry.name,
                        "ordinal": entry.ordinal,
                        "absolute_address": f"0x{entry.absolute_address:X}",
                        "forwarder": entry.forwarder,
                        "target_address": (
                            f"0x{entry.target_address:X}"
                            if entry.target_address is not None
                            else None
                        ),
                    }
                    for entry in mod.entries
                ],
            }
            for mod in snapshot.modules
        ],
        "warnings": list(snapshot.warnings),
    }


def snapshot_from_dict(doc: dict) -> ExportSnapshot:
    snapshot = ExportSnapshot(warnings=list(doc.get("warnings", [])))
    for mod_doc in doc.get("modules", []):
        mod = ModuleExports(module=mod_doc["module"], base=int(mod_doc["base"], 0))
        for e in mod_doc.get("entries", []):
            mod.entries.append(
                ExportEntry(
                    module=mod.module,
                    name=e.get("name"),
                    ordinal=int(e["ordinal"]),
                    absolute_address=int(e["absolute_address"], 0),
                    forwarder=e.get("forwarder"),
                    target_address=(
                        int(e["target_address"], 0)
                        if e.get("target_address") is not None
                        else None
                    ),
                )
            )
        snapshot.modules.append(mod)
    for mod in snapshot.modules:
        for entry in mod.entries:
            if entry.forwarder is None and entry.target_address is not None:
                snapshot.address_index.setdefault(entry.target_address, entry)
    for mod in snapshot.modules:
        for entry in mod.entries:
            if entry.forwarder is not None and entry.target_address is not None:
                snapshot.address_index.setdefault(entry.target_address, entry)
    return snapshot


def scan_dump(
    snapshot: ExportSnapshot,
    dump_bytes: bytes,
    dump_base: int,
    dump_name: str = "<memory>",
    aligned: bool = True,
    include_exports: bool = False,
) -> ImportReport:
    """Scan a raw dump for 8-byte values that match known export addresses.

    Offsets advance in 8-byte steps by default (address slots on x64 are
    aligned); ``aligned=False`` scans every byte offset.
    """
    hits: list[ReportHit] = []
    step = 8 if aligned else 1
    index = snapshot.address_index
    for offset in range(0, len(dump_bytes) - 7, step):
        value = int.from_bytes(dump_bytes[offset : offset + 8], "little")
        entry = index.get(value)
        if entry is not None:
            hits.append(
                ReportHit(address=dump_base + offset, value=value, symbol=entry.symbol)
            )
    return ImportReport(
        dump_name=dump_name,
        dump_base=dump_base,
        hits=hits,
        export_listing=export_listing(snapshot) if include_exports else None,
    )
