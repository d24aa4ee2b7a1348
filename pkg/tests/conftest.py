import pytest

from rxint import fixtures, loader, peformat
from rxint.scheduler import Scheduler
from rxint.vaspace import AddressSpace


@pytest.fixture(scope="session")
def system_dll_bytes():
    """Built once: name -> PE bytes for the three system fixtures."""
    return {name: peformat.build(spec()) for name, spec in fixtures.SYSTEM_SPECS.items()}


@pytest.fixture(scope="session")
def payload_bytes():
    return peformat.build(fixtures.payload_spec())


@pytest.fixture
def loaded_space(system_dll_bytes):
    """Fresh space with ntdll/kernel32/user32 loaded in order."""
    space = AddressSpace()
    for name in ("ntdll.dll", "kernel32.dll", "user32.dll"):
        loader.load_module(space, system_dll_bytes[name], name, rf"C:\fixtures\{name}")
    return space


@pytest.fixture
def scheduler():
    return Scheduler()
