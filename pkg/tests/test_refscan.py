import pytest

from rxint import attacks, fixtures, loader, refscan
from rxint.refscan import FindingClass, scan_process
from rxint.scheduler import Scheduler
from rxint.vaspace import RWX, AddressSpace, RegionKind


@pytest.fixture
def pristine(system_dll_bytes):
    return dict(system_dll_bytes)


def categories(findings):
    return [f.category for f in findings]


class TestImplantDiscovery:
    def test_intact_manual_map_is_implanted_pe(self, loaded_space, payload_bytes, pristine):
        base = loader.manual_map(loaded_space, payload_bytes, loader.MapOptions())
        findings = scan_process(loaded_space, pristine)
        assert categories(findings) == [FindingClass.IMPLANTED_PE]
        assert findings[0].base == base

    def test_erased_headers_produce_no_finding(self, loaded_space, payload_bytes, pristine):
        loader.manual_map(loaded_space, payload_bytes, loader.MapOptions(erase_headers=True))
        assert scan_process(loaded_space, pristine) == []

    def test_plain_shellcode_region_is_invisible(self, loaded_space, pristine):
        base = loaded_space.alloc(0x1000, RWX, RegionKind.PRIVATE)
        loaded_space.write(base, fixtures.pattern_bytes(0x200))
        assert scan_process(loaded_space, pristine) == []


class TestDetachedModules:
    def test_unlinked_module_with_headers(self, loaded_space, pristine):
        loaded_space.unlink_module(fixtures.KERNEL32_BASE)
        findings = scan_process(loaded_space, pristine)
        assert categories(findings) == [FindingClass.DETACHED_MODULE]
        assert findings[0].base == fixtures.KERNEL32_BASE

    def test_unlinked_and_erased_is_read_error(self, loaded_space, pristine):
        loaded_space.unlink_module(fixtures.KERNEL32_BASE)
        loaded_space.write(fixtures.KERNEL32_BASE, bytes(0x1000))
        findings = scan_process(loaded_space, pristine)
        assert categories(findings) == [FindingClass.READ_ERROR]

    def test_listed_module_with_erased_headers_is_detached(self, loaded_space, pristine):
        loaded_space.write(fixtures.KERNEL32_BASE, bytes(0x1000))
        findings = scan_process(loaded_space, pristine)
        assert categories(findings) == [FindingClass.DETACHED_MODULE]
        assert "kernel32.dll" in findings[0].note


class TestListedModules:
    def test_foreign_module_is_reported_with_visible_path(
        self, loaded_space, payload_bytes, pristine
    ):
        loader.load_module(loaded_space, payload_bytes, "payload.dll", "p")
        findings = scan_process(loaded_space, pristine)
        assert categories(findings) == [FindingClass.IMPLANTED_PE]
        assert "payload.dll" in findings[0].note

    def test_modified_module_caught_while_dirty(self, loaded_space, pristine):
        scheduler = Scheduler()
        attacks.stomp(
            loaded_space,
            scheduler,
            attacks.StompPlan(fixtures.KERNEL32_BASE, 0x1100, b"\xCC" * 16, restore_delay=0),
            at=1,
        )
        scheduler.run_until(2)
        findings = scan_process(loaded_space, pristine)
        assert categories(findings) == [FindingClass.MODIFIED_MODULE]
        assert "kernel32.dll" in findings[0].note

    def test_relocated_module_is_not_a_false_positive(self, system_dll_bytes, payload_bytes, pristine):
        space = AddressSpace()
        for name in ("ntdll.dll", "kernel32.dll", "user32.dll"):
            loader.load_module(space, system_dll_bytes[name], name, "p")
        # force payload off its preferred base; relocation must be normalized
        space.alloc(0x4000, RWX, RegionKind.PRIVATE, base=fixtures.PAYLOAD_BASE)
        loader.load_module(space, payload_bytes, "payload.dll", "p")
        with_payload = dict(pristine, **{"payload.dll": payload_bytes})
        findings = scan_process(space, with_payload)
        assert FindingClass.MODIFIED_MODULE not in categories(findings)


class TestRaceFidelity:
    def _run(self, loaded_space, pristine, stomp_at, poll_every=100, horizon=400):
        scheduler = Scheduler()
        log = []

        def poll():
            log.append((scheduler.now, scan_process(loaded_space, pristine)))
            scheduler.schedule(scheduler.now + poll_every, poll, priority=2)

        scheduler.schedule(poll_every, poll, priority=2)
        attacks.stomp(
            loaded_space,
            scheduler,
            attacks.StompPlan(fixtures.KERNEL32_BASE, 0x1100, b"\xCC" * 16, restore_delay=5),
            at=stomp_at,
        )
        scheduler.run_until(horizon)
        return any(
            FindingClass.MODIFIED_MODULE in categories(findings) for _t, findings in log
        )

    def test_poll_inside_window_detects(self, loaded_space, pristine):
        assert self._run(loaded_space, pristine, stomp_at=97)  # window [97, 102) spans 100

    def test_poll_outside_window_misses(self, loaded_space, pristine):
        assert not self._run(loaded_space, pristine, stomp_at=110)

    def test_restore_at_poll_tick_wins_the_race(self, loaded_space, pristine):
        # restore is an attacker action and runs before the periodic scan at
        # the same tick: the window is [t, t+w)
        assert not self._run(loaded_space, pristine, stomp_at=95)
