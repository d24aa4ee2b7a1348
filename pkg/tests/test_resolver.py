import pytest

from rxint import fixtures, loader, peformat as pe, resolver
from rxint.vaspace import AddressSpace


@pytest.fixture
def snapshot(loaded_space):
    return resolver.build_snapshot(loaded_space)


class TestBuildSnapshot:
    def test_per_module_entry_counts(self, snapshot):
        by_name = {m.module: m for m in snapshot.modules}
        assert len(by_name["ntdll.dll"].entries) == 3
        assert len(by_name["kernel32.dll"].entries) == 4
        assert len(by_name["user32.dll"].entries) == 3

    def test_forwarder_resolves_transitively(self, snapshot):
        entry = snapshot.find_export("kernel32.dll", "NtCreateThreadEx")
        assert entry.forwarder == "ntdll.NtCreateThreadEx"
        assert entry.target_address == fixtures.NTDLL_BASE + 0x1100

    def test_forwarder_geometry(self, loaded_space, snapshot):
        image = pe.parse_headers(
            loaded_space.read(fixtures.KERNEL32_BASE, 0x1000)
        )
        directory = image.export_dir
        for mod in snapshot.modules:
            if mod.module != "kernel32.dll":
                continue
            for entry in mod.entries:
                rva = entry.absolute_address - mod.base
                inside = directory.rva <= rva < directory.rva + directory.size
                assert (entry.forwarder is not None) == inside

    def test_erased_module_recorded_as_warning(self, loaded_space):
        loaded_space.write(fixtures.KERNEL32_BASE, bytes(0x1000))
        snapshot = resolver.build_snapshot(loaded_space)
        assert any("kernel32.dll" in w for w in snapshot.warnings)
        names = [m.module for m in snapshot.modules]
        assert "kernel32.dll" not in names
        # the others are equivalent to a clean snapshot minus the erased module
        clean_names = {"ntdll.dll", "user32.dll"}
        assert set(names) == clean_names
        assert (
            resolver.resolve_address(snapshot, fixtures.USER32_BASE + 0x1040)
            == "user32.dll!MessageBoxW"
        )

    def test_forwarder_cycle_is_unresolvable(self):
        space = AddressSpace()
        a = pe.PeSpec(
            image_base=0x7FFB50000000,
            sections=[pe.SectionSpec(name=".text", flags="rx", content=bytes(0x100))],
            exports=[pe.ExportSpec(name="X", forwarder="b.Y")],
            export_dll_name="a.dll",
        )
        b = pe.PeSpec(
            image_base=0x7FFB60000000,
            sections=[pe.SectionSpec(name=".text", flags="rx", content=bytes(0x100))],
            exports=[pe.ExportSpec(name="Y", forwarder="a.X")],
            export_dll_name="b.dll",
        )
        loader.load_module(space, pe.build(a), "a.dll", "p")
        loader.load_module(space, pe.build(b), "b.dll", "p")
        snapshot = resolver.build_snapshot(space)
        assert snapshot.find_export("a.dll", "X").target_address is None
        assert snapshot.find_export("b.dll", "Y").target_address is None
        assert snapshot.address_index == {}

    def test_unloaded_forwarder_target_not_indexed(self, system_dll_bytes):
        space = AddressSpace()
        loader.load_module(space, system_dll_bytes["kernel32.dll"], "kernel32.dll", "p")
        snapshot = resolver.build_snapshot(space)
        entry = snapshot.find_export("kernel32.dll", "NtCreateThreadEx")
        assert entry.forwarder is not None
        assert entry.target_address is None
        assert entry.absolute_address not in snapshot.address_index


class TestResolveAddress:
    def test_exact_hit(self, snapshot):
        assert (
            resolver.resolve_address(snapshot, fixtures.USER32_BASE + 0x1040)
            == "user32.dll!MessageBoxW"
        )

    def test_off_by_one_misses(self, snapshot):
        assert resolver.resolve_address(snapshot, fixtures.USER32_BASE + 0x1041) is None

    def test_ordinal_only_export(self, snapshot):
        assert (
            resolver.resolve_address(snapshot, fixtures.USER32_BASE + 0x1140)
            == "user32.dll!#7"
        )

    def test_completeness_and_soundness(self, snapshot):
        # completeness: every concrete export resolves to its own symbol;
        # soundness: the indexed address recomputes to base + rva
        for mod in snapshot.modules:
            for entry in mod.entries:
                if entry.forwarder is not None:
                    continue
                symbol = resolver.resolve_address(snapshot, entry.absolute_address)
                assert symbol == entry.symbol
                indexed = snapshot.address_index[entry.absolute_address]
                assert indexed.absolute_address == entry.absolute_address


class TestScanDump:
    def test_workflow_slot(self, loaded_space, payload_bytes, snapshot):
        base = loader.manual_map(
            loaded_space, payload_bytes, loader.MapOptions(erase_headers=True)
        )
        report = resolver.scan_dump(
            snapshot, loaded_space.read(base, 0x4000), base, dump_name="region.bin"
        )
        assert report.resolved == 1
        hit = report.hits[0]
        assert hit.address == base + fixtures.PAYLOAD_IAT_RVA
        assert hit.symbol == "user32.dll!MessageBoxW"

    def test_all_zero_dump(self, snapshot):
        report = resolver.scan_dump(snapshot, bytes(0x1000), 0x1000)
        assert report.hits == []
        assert report.to_text().rstrip().endswith("RESOLVED: 0")

    def test_iat_page_matches_loader_log(self, loaded_space, payload_bytes):
        log: list[loader.IatWrite] = []
        base = loader.manual_map(
            loaded_space, payload_bytes, loader.MapOptions(), iat_log=log
        )
        snapshot = resolver.build_snapshot(loaded_space)
        page = loaded_space.read(base + 0x3000, 0x1000)
        report = resolver.scan_dump(snapshot, page, base + 0x3000)
        resolved = {(h.address, h.value) for h in report.hits}
        expected = {(w.address, w.value) for w in log}
        # the .data page also holds the reloc self-pointer, which is not an export
        assert expected <= resolved
        assert resolved == expected

    def test_report_text_format_is_exact(self, snapshot):
        address = fixtures.USER32_BASE + 0x1040
        dump = bytearray(0x20)
        dump[0x8:0x10] = address.to_bytes(8, "little")
        report = resolver.scan_dump(snapshot, bytes(dump), 0x7FF000000000, dump_name="a.bin")
        assert report.to_text() == (
            "RX-INT IMPORT ANALYSIS a.bin\n"
            f"0x7FF000000008: 0x{address:X} -> user32.dll!MessageBoxW\n"
            "RESOLVED: 1\n"
        )

    def test_unaligned_scan_finds_misaligned_values(self, snapshot):
        address = fixtures.USER32_BASE + 0x1040
        dump = bytearray(0x20)
        dump[0x3:0xB] = address.to_bytes(8, "little")
        aligned = resolver.scan_dump(snapshot, bytes(dump), 0)
        assert aligned.resolved == 0
        unaligned = resolver.scan_dump(snapshot, bytes(dump), 0, aligned=False)
        assert unaligned.resolved == 1
        assert unaligned.hits[0].address == 3

    def test_export_listing_appendix(self, snapshot):
        report = resolver.scan_dump(
            snapshot, bytes(0x10), 0, dump_name="x.bin", include_exports=True
        )
        text = report.to_text()
        assert "EXPORTS user32.dll (3)" in text
        assert "user32.dll!MessageBoxW" in text


class TestSnapshotSerialization:
    def test_round_trip_preserves_index(self, snapshot):
        doc = resolver.snapshot_to_dict(snapshot)
        restored = resolver.snapshot_from_dict(doc)
        assert set(restored.address_index) == set(snapshot.address_index)
        for address, entry in snapshot.address_index.items():
            assert restored.address_index[address].symbol == entry.symbol

    def test_footprint_recount(self, snapshot):
        # recompute the documented formula from the snapshot contents
        expected = 0
        for mod in snapshot.modules:
            expected += 16 + len(mod.module.encode())
            for entry in mod.entries:
                expected += 12
                expected += len(entry.name.encode()) if entry.name else 0
                expected += len(entry.forwarder.encode()) if entry.forwarder else 0
        assert snapshot.footprint() == expected
