import struct

import pytest

from rxint import fixtures, loader, peformat as pe, resolver
from rxint.errors import BadMagic, ImportUnresolved, OverlapError, PeError
from rxint.vaspace import R, RW, RWX, RX, AddressSpace, RegionKind


class TestLoadModule:
    def test_registers_record_and_resolvable_export(self, loaded_space):
        record = loaded_space.find_module("user32.dll")
        assert record is not None
        assert record.base == fixtures.USER32_BASE
        snapshot = resolver.build_snapshot(loaded_space)
        assert (
            resolver.resolve_address(snapshot, fixtures.USER32_BASE + 0x1040)
            == "user32.dll!MessageBoxW"
        )

    def test_sections_become_separate_image_regions(self, loaded_space):
        regions = [
            r for r in loaded_space.regions() if r.backing_name == "kernel32.dll"
        ]
        assert [r.protection for r in regions] == [R, RX, R]  # headers, .text, .edata
        assert all(r.kind is RegionKind.IMAGE for r in regions)

    def test_preferred_base_means_zero_fixups(self, system_dll_bytes):
        space = AddressSpace()
        image = pe.parse(system_dll_bytes["ntdll.dll"])
        base = loader.load_module(space, system_dll_bytes["ntdll.dll"], "ntdll.dll", "p")
        assert base == image.image_base
        # the mapped bytes equal the file's virtual layout exactly
        assert space.read(base, image.size_of_image) == bytes(image.virtual_layout())

    def test_import_from_unloaded_module(self, payload_bytes):
        space = AddressSpace()
        with pytest.raises(ImportUnresolved) as info:
            loader.load_module(space, payload_bytes, "payload.dll", "p")
        assert info.value.dll == "user32.dll"
        assert info.value.symbol == "MessageBoxW"

    def test_occupied_base_without_relocs_propagates_overlap(self, system_dll_bytes):
        space = AddressSpace()
        image = pe.parse(system_dll_bytes["ntdll.dll"])
        space.alloc(0x1000, RW, RegionKind.PRIVATE, base=image.image_base)
        with pytest.raises(OverlapError):
            loader.load_module(space, system_dll_bytes["ntdll.dll"], "ntdll.dll", "p")

    def test_garbage_input_raises_parse_error(self):
        with pytest.raises(PeError):
            loader.load_module(AddressSpace(), b"\x00" * 64, "x.dll", "p")

    def test_section_bytes_match_file_modulo_relocations(self, loaded_space, payload_bytes):
        # occupy the preferred base to force a rebase through .reloc
        loaded_space.alloc(0x1000, RW, RegionKind.PRIVATE, base=fixtures.PAYLOAD_BASE)
        base = loader.load_module(loaded_space, payload_bytes, "payload.dll", "p")
        assert base != fixtures.PAYLOAD_BASE
        image = pe.parse(payload_bytes)
        expected = image.virtual_layout()
        count = pe.apply_relocations(expected, image, base)
        assert count == 1
        # IAT write is the only other difference
        iat = fixtures.PAYLOAD_IAT_RVA
        struct.pack_into("<Q", expected, iat, fixtures.USER32_BASE + 0x1040)
        assert loaded_space.read(base, image.size_of_image) == bytes(expected)


class TestIatOracle:
    def test_iat_slots_match_independent_resolver_lookup(self, loaded_space, payload_bytes):
        log: list[loader.IatWrite] = []
        base = loader.load_module(loaded_space, payload_bytes, "payload.dll", "p", iat_log=log)
        snapshot = resolver.build_snapshot(loaded_space)
        assert log, "loader should record IAT writes"
        for write in log:
            entry = snapshot.find_export(write.dll, "MessageBoxW")
            assert write.value == entry.target_address
            stored = int.from_bytes(loaded_space.read(write.address, 8), "little")
            assert stored == write.value

    def test_import_by_ordinal(self, loaded_space):
        spec = pe.PeSpec(
            image_base=0x7FFB48000000,
            sections=[pe.SectionSpec(name=".text", flags="rx", content=bytes(0x200))],
            imports=[pe.ImportSpec(dll="user32.dll", symbols=[7])],
        )
        log: list[loader.IatWrite] = []
        loader.load_module(loaded_space, pe.build(spec), "dep.dll", "p", iat_log=log)
        assert log[0].value == fixtures.USER32_BASE + 0x1140
        assert log[0].symbol == "user32.dll!#7"

    def test_forwarded_import_resolves_transitively(self, loaded_space):
        # an image importing kernel32!NtCreateThreadEx lands on ntdll's code
        spec = pe.PeSpec(
            image_base=0x7FFB40000000,
            sections=[pe.SectionSpec(name=".text", flags="rx", content=bytes(0x200))],
            imports=[pe.ImportSpec(dll="kernel32.dll", symbols=["NtCreateThreadEx"])],
        )
        log: list[loader.IatWrite] = []
        base = loader.load_module(loaded_space, pe.build(spec), "dep.dll", "p", iat_log=log)
        assert log[0].value == fixtures.NTDLL_BASE + 0x1100
        assert log[0].symbol == "kernel32.dll!NtCreateThreadEx"


class TestManualMap:
    def test_single_private_rwx_region_no_record(self, loaded_space, payload_bytes):
        before = list(loaded_space.modules)
        base = loader.manual_map(loaded_space, payload_bytes, loader.MapOptions())
        assert loaded_space.modules == before
        region = loaded_space.region_at(base)
        assert region.kind is RegionKind.PRIVATE
        assert region.protection == RWX
        assert region.size == 0x4000
        # intact headers still parse
        assert pe.parse_headers(loaded_space.read(base, 0x1000)).image_base == fixtures.PAYLOAD_BASE

    def test_erase_headers_zeroes_first_page(self, loaded_space, payload_bytes):
        base = loader.manual_map(
            loaded_space, payload_bytes, loader.MapOptions(erase_headers=True)
        )
        assert loaded_space.read(base, 0x1000) == bytes(0x1000)
        with pytest.raises(BadMagic):
            pe.parse_headers(loaded_space.read(base, 0x1000))
        # payload body is intact
        assert loaded_space.read(base + 0x1000, 0x100) == fixtures.pattern_bytes(0x100)

    def test_clean_data_directories_keeps_resolved_iat(self, loaded_space, payload_bytes):
        base = loader.manual_map(
            loaded_space,
            payload_bytes,
            loader.MapOptions(clean_data_directories=True),
        )
        image = pe.parse_headers(loaded_space.read(base, 0x1000))
        assert image.export_dir is None
        assert image.import_dir is None
        assert image.reloc_dir is None
        slot = int.from_bytes(
            loaded_space.read(base + fixtures.PAYLOAD_IAT_RVA, 8), "little"
        )
        assert slot == fixtures.USER32_BASE + 0x1040

    def test_both_cloaking_flags_together(self, loaded_space, payload_bytes):
        base = loader.manual_map(
            loaded_space,
            payload_bytes,
            loader.MapOptions(erase_headers=True, clean_data_directories=True),
        )
        assert loaded_space.read(base, 0x1000) == bytes(0x1000)
        slot = int.from_bytes(
            loaded_space.read(base + fixtures.PAYLOAD_IAT_RVA, 8), "little"
        )
        assert slot == fixtures.USER32_BASE + 0x1040

    def test_register_module_is_rejected(self, loaded_space, payload_bytes):
        with pytest.raises(ValueError):
            loader.manual_map(
                loaded_space, payload_bytes, loader.MapOptions(register_module=True)
            )

    def test_module_list_identical_before_and_after(self, loaded_space, payload_bytes):
        before = list(loaded_space.modules)
        loader.manual_map(loaded_space, payload_bytes, loader.MapOptions(erase_headers=True))
        assert loaded_space.modules == before
