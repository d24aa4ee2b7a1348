"""Canonical PE fixtures used by the built-in scenario suite and tests.

All content is deterministic. The payload mirrors the shape the end-to-end
workflow expects: a 0x4000-byte image whose import table parks one resolved
absolute address at RVA 0x3640, so the slot lands at <base>+0x3640 once
mapped.
"""

from __future__ import annotations

from .peformat import ExportSpec, ImportSpec, PeSpec, SectionSpec, build

NTDLL_BASE = 0x7FFB00000000
KERNEL32_BASE = 0x7FFB10000000
USER32_BASE = 0x7FFB20000000
PAYLOAD_BASE = 0x7FFBFBBE1000

PAYLOAD_IAT_RVA = 0x3640


def pattern_bytes(length: int, salt: int = 0) -> bytes:
    """Deterministic filler that never repeats 8-byte-aligned address-like runs."""
    return bytes((7 * i + 13 + salt) & 0xFF for i in range(length))


def ntdll_spec() -> PeSpec:
    return PeSpec(
        image_base=NTDLL_BASE,
        sections=[SectionSpec(name=".text", flags="rx", content=pattern_bytes(0x1000, 1))],
        exports=[
            ExportSpec(name="NtCreateThreadEx", rva=0x1100),
            ExportSpec(name="NtQueryInformationThread", rva=0x1180),
            ExportSpec(name="RtlUserThreadStart", rva=0x1200),
        ],
        export_dll_name="ntdll.dll",
    )


def kernel32_spec() -> PeSpec:
    return PeSpec(
        image_base=KERNEL32_BASE,
        sections=[SectionSpec(name=".text", flags="rx", content=pattern_bytes(0x1000, 2))],
        exports=[
            ExportSpec(name="Beep", rva=0x1100),
            ExportSpec(name="CreateRemoteThread", rva=0x1200),
            ExportSpec(name="LoadLibraryW", rva=0x1300),
            ExportSpec(name="NtCreateThreadEx", forwarder="ntdll.NtCreateThreadEx"),
        ],
        export_dll_name="kernel32.dll",
    )


def user32_spec() -> PeSpec:
    return PeSpec(
        image_base=USER32_BASE,
        sections=[SectionSpec(name=".text", flags="rx", content=pattern_bytes(0x1000, 3))],
        exports=[
            ExportSpec(name="MessageBoxW", rva=0x1040),
            ExportSpec(name="SetWindowsHookExW", rva=0x10C0),
            ExportSpec(name=None, rva=0x1140, ordinal=7),  # unnamed, resolver shows #7
        ],
        export_dll_name="user32.dll",
    )


def payload_spec(image_base: int = PAYLOAD_BASE) -> PeSpec:
    """The injected DLL: imports user32!MessageBoxW into a pinned IAT slot and
    carries one DIR64 self-pointer so relocation paths get exercised."""
    data = bytearray(0x1000)
    data[0x700:0x708] = (image_base + 0x1000).to_bytes(8, "little")
    return PeSpec(
        image_base=image_base,
        sections=[
            SectionSpec(name=".text", flags="rx", content=pattern_bytes(0x2000)),
            SectionSpec(name=".data", flags="rw", content=bytes(data), virtual_size=0x1000),
        ],
        imports=[ImportSpec(dll="user32.dll", symbols=["MessageBoxW"])],
        imports_rva=0x3400,
        iat_rva=PAYLOAD_IAT_RVA,
        relocations=[0x3700],
        relocs_rva=0x3800,
        entry_point=0x1000,
    )


#: Name -> spec factory, in a sensible load order for scenario setup.
SYSTEM_SPECS = {
    "ntdll.dll": ntdll_spec,
    "kernel32.dll": kernel32_spec,
    "user32.dll": user32_spec,
}


def build_fixture(name: str) -> bytes:
    if name in SYSTEM_SPECS:
        return build(SYSTEM_SPECS[name]())
    if name == "payload.dll":
        return build(payload_spec())
    raise KeyError(f"unknown built-in fixture {name!r}")
