"""Exception hierarchy shared by every engine subsystem.

All errors raised by the simulator derive from :class:`RxIntError` so that
scenario drivers and the CLI can distinguish engine failures from plain bugs.
"""


class RxIntError(Exception):
    """Base class for all simulator errors."""


# --- address space -----------------------------------------------------------

class AlignmentError(RxIntError):
    """An explicit base or span violates 4 KiB page alignment."""


class OverlapError(RxIntError):
    """A requested span intersects an already committed region."""


class UnmappedError(RxIntError):
    """A span touches at least one uncommitted page."""


class SpanError(RxIntError):
    """A span crosses region boundaries of differing kind."""


class ProtectionError(RxIntError):
    """A write touched a NOACCESS page."""


class NotFoundError(RxIntError):
    """Lookup of a module record (or similar keyed entity) failed."""


class CoverageError(RxIntError):
    """A module record span is not fully covered by IMAGE regions."""


# --- PE format ---------------------------------------------------------------

class PeError(RxIntError):
    """Base class for PE32+ parse and build failures."""


# The loader surfaces parser failures unchanged; keep the generic alias so
# callers can catch "any parse problem" without naming each magic error.
ParseError = PeError


class BadMagic(PeError):
    """Wrong MZ / PE / optional-header magic values."""


class Truncated(PeError):
    """A structure extends past the end of the input."""


class MalformedSection(PeError):
    """Section (or directory) geometry is overlapping or out of range."""


class UnmappedRva(PeError):
    """An RVA falls outside headers and every section's virtual range."""


class RelocOutOfRange(PeError):
    """A DIR64 fixup would write past the mapped image."""


class SpecError(PeError):
    """A PE build specification is internally inconsistent."""

    def __init__(self, message: str, field: str | None = None):
        super().__init__(message)
        self.field = field


# --- loader ------------------------------------------------------------------

class ImportUnresolved(RxIntError):
    """An imported symbol could not be resolved against loaded modules."""

    def __init__(self, dll: str, symbol: str):
        super().__init__(f"unresolved import {dll}!{symbol}")
        self.dll = dll
        self.symbol = symbol


# --- detector ----------------------------------------------------------------

class AlreadyMonitoring(RxIntError):
    """begin_monitor was called for a space that already has a live session."""


class IoError(RxIntError):
    """A dump or report artifact could not be written (detection is kept)."""


# --- simulation --------------------------------------------------------------

class ScenarioError(RxIntError):
    """A scenario document is malformed."""

    def __init__(self, message: str, location: str | None = None):
        super().__init__(f"{location}: {message}" if location else message)
        self.location = location


class MatrixMismatch(RxIntError):
    """The canonical comparison matrix deviates from its expected outcomes."""

    def __init__(self, cells: list[tuple[str, str, str, str]]):
        lines = ", ".join(
            f"{scenario}/{detector}: got {got}, want {want}"
            for scenario, detector, got, want in cells
        )
        super().__init__(f"matrix deviates in {len(cells)} cell(s): {lines}")
        self.cells = cells
