"""The built-in scenario suite: the eight-row comparison matrix, the benign
false-positive scenarios, the end-to-end workflow case, and the TOCTOU sweep.

Every scenario pits the event-triggered engine against the reference scanner
on one deterministic timeline. The matrix rows encode expected outcomes, so
``run_matrix`` doubles as the suite's own verification harness.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

from . import sim
from .errors import MatrixMismatch
from .scenario import (
    Action,
    FixedTime,
    FixtureDef,
    MonitorSpec,
    OffsetTime,
    Scenario,
    UniformTime,
)

_SYSTEM_FIXTURES = [
    FixtureDef(name="ntdll.dll", builtin=True),
    FixtureDef(name="kernel32.dll", builtin=True),
    FixtureDef(name="user32.dll", builtin=True),
]
_PAYLOAD_FIXTURE = FixtureDef(name="payload.dll", builtin=True)

_SETUP = [
    {"op": "load", "fixture": "ntdll.dll"},
    {"op": "load", "fixture": "kernel32.dll"},
    {"op": "load", "fixture": "user32.dll"},
]


def _matrix_scenario(name: str, actions: list[Action], expected_reference: str) -> Scenario:
    scenario = Scenario(
        name=name,
        fixtures=[*_SYSTEM_FIXTURES, _PAYLOAD_FIXTURE],
        setup=list(_SETUP),
        monitor=MonitorSpec(poll_interval=100, detectors=("rx", "reference")),
        actions=actions,
        horizon=300,
        seed=0,
        expected={"rx": sim.OUTCOME_DETECTED, "reference": expected_reference},
    )
    scenario.validate()
    return scenario


def _load_payload(at: int) -> Action:
    return Action(
        at=FixedTime(at), op="load", args={"fixture": "payload.dll"}, handle="implant"
    )


def _map_payload(at: int, erase: bool) -> Action:
    return Action(
        at=FixedTime(at),
        op="manual_map",
        args={"fixture": "payload.dll", "erase_headers": erase},
        handle="implant",
    )


def _new_thread(at: int, start: str = "implant+0x1000") -> Action:
    return Action(
        at=FixedTime(at),
        op="execute",
        args={"vector": "new_thread", "start": start},
    )


def standard_load() -> Scenario:
    return _matrix_scenario(
        "standard_load",
        [_load_payload(10), _new_thread(11)],
        sim.OUTCOME_DETECTED,
    )


def header_erasure() -> Scenario:
    return _matrix_scenario(
        "header_erasure",
        [
            _load_payload(10),
            Action(at=FixedTime(11), op="erase_headers", args={"target": "implant"}),
            _new_thread(12),
        ],
        sim.OUTCOME_DETECTED,
    )


def peb_unlink() -> Scenario:
    return _matrix_scenario(
        "peb_unlink",
        [
            _load_payload(10),
            Action(at=FixedTime(11), op="unlink", args={"module": "implant"}),
            _new_thread(12),
        ],
        sim.OUTCOME_DETECTED,
    )


def peb_unlink_header_erasure() -> Scenario:
    return _matrix_scenario(
        "peb_unlink_header_erasure",
        [
            _load_payload(10),
            Action(at=FixedTime(11), op="unlink", args={"module": "implant"}),
            Action(at=FixedTime(12), op="erase_headers", args={"target": "implant"}),
            _new_thread(13),
        ],
        sim.OUTCOME_ERROR,
    )


def manual_map_headers_intact() -> Scenario:
    return _matrix_scenario(
        "manual_map_headers_intact",
        [_map_payload(10, erase=False), _new_thread(11)],
        sim.OUTCOME_DETECTED,
    )


def threadless_manual_map_header_erasure() -> Scenario:
    return _matrix_scenario(
        "threadless_manual_map_header_erasure",
        [
            _map_payload(10, erase=True),
            Action(
                at=FixedTime(11),
                op="execute",
                args={"vector": "queue_apc", "start": "implant+0x1000"},
            ),
        ],
        sim.OUTCOME_MISSED,
    )


def manual_map_header_erasure() -> Scenario:
    return _matrix_scenario(
        "manual_map_header_erasure",
        [_map_payload(10, erase=True), _new_thread(11)],
        sim.OUTCOME_MISSED,
    )


def module_stomping() -> Scenario:
    return _matrix_scenario(
        "module_stomping",
        [
            Action(
                at=FixedTime(10),
                op="stomp",
                args={
                    "module": "kernel32.dll",
                    "export": "Beep",
                    "payload": {"pattern": 16, "salt": 90},
                    "restore_delay": 5,
                },
                name="stomp",
            ),
            Action(
                at=OffsetTime(after="stomp", plus=1),
                op="execute",
                args={"vector": "new_thread", "start": "kernel32.dll!Beep"},
            ),
        ],
        sim.OUTCOME_MISSED,
    )


MATRIX_SCENARIOS = (
    standard_load,
    header_erasure,
    peb_unlink,
    peb_unlink_header_erasure,
    manual_map_headers_intact,
    threadless_manual_map_header_erasure,
    manual_map_header_erasure,
    module_stomping,
)


def toctou_sweep() -> Scenario:
    """Randomized stomp over one poll period; thread lands inside the window."""
    scenario = Scenario(
        name="toctou_sweep",
        fixtures=[FixtureDef(name="ntdll.dll", builtin=True), FixtureDef(name="kernel32.dll", builtin=True)],
        setup=[
            {"op": "load", "fixture": "ntdll.dll"},
            {"op": "load", "fixture": "kernel32.dll"},
        ],
        monitor=MonitorSpec(poll_interval=100, detectors=("rx", "rx-periodic-only")),
        actions=[
            Action(
                at=UniformTime(100, 199),
                op="stomp",
                args={
                    "module": "kernel32.dll",
                    "export": "Beep",
                    "payload": {"pattern": 16, "salt": 91},
                    "restore_delay": 5,
                },
                name="stomp",
            ),
            Action(
                at=OffsetTime(after="stomp", plus=1),
                op="execute",
                args={"vector": "new_thread", "start": "kernel32.dll!Beep"},
            ),
        ],
        horizon=310,
        seed=1337,
    )
    scenario.validate()
    return scenario


def workflow_manual_map() -> Scenario:
    """Header-erased manual map whose IAT slot holds one resolved export."""
    scenario = Scenario(
        name="workflow_manual_map",
        fixtures=[*_SYSTEM_FIXTURES, _PAYLOAD_FIXTURE],
        setup=list(_SETUP),
        monitor=MonitorSpec(poll_interval=100, detectors=("rx",)),
        actions=[_map_payload(10, erase=True), _new_thread(11)],
        horizon=300,
        seed=0,
        expected={"rx": sim.OUTCOME_DETECTED},
    )
    scenario.validate()
    return scenario


def jit_benign() -> Scenario:
    """A runtime that generates code: RW alloc, write, flip to RX. One
    private-executable detection is the engine's documented false positive."""
    scenario = Scenario(
        name="jit_benign",
        fixtures=list(_SYSTEM_FIXTURES),
        setup=list(_SETUP),
        monitor=MonitorSpec(poll_interval=100, detectors=("rx",)),
        actions=[
            Action(
                at=FixedTime(50),
                op="alloc",
                args={"size": 0x2000, "protection": "rw"},
                handle="jitbuf",
            ),
            Action(
                at=FixedTime(60),
                op="write",
                args={"target": "jitbuf", "data": {"pattern": 0x200, "salt": 7}},
            ),
            Action(
                at=FixedTime(70),
                op="protect",
                args={"target": "jitbuf", "size": 0x2000, "protection": "rx"},
            ),
            Action(
                at=FixedTime(80),
                op="execute",
                args={"vector": "new_thread", "start": "ntdll.dll!RtlUserThreadStart"},
            ),
        ],
        horizon=10000,
        seed=0,
    )
    scenario.validate()
    return scenario


def browse_benign() -> Scenario:
    """Steady allocation and writing that never turns executable."""
    actions = []
    for i in range(8):
        actions.append(
            Action(
                at=FixedTime(100 + 37 * i),
                op="alloc",
                args={"size": 0x1000 * (1 + i % 3), "protection": "rw"},
                handle=f"heap{i}",
            )
        )
        actions.append(
            Action(
                at=FixedTime(120 + 37 * i),
                op="write",
                args={"target": f"heap{i}", "data": {"pattern": 0x100, "salt": i}},
            )
        )
    actions.append(
        Action(
            at=FixedTime(500),
            op="execute",
            args={"vector": "new_thread", "start": "ntdll.dll!RtlUserThreadStart"},
        )
    )
    scenario = Scenario(
        name="browse_benign",
        fixtures=list(_SYSTEM_FIXTURES),
        setup=list(_SETUP),
        monitor=MonitorSpec(poll_interval=100, detectors=("rx",)),
        actions=actions,
        horizon=10000,
        seed=0,
    )
    scenario.validate()
    return scenario


# ---------------------------------------------------------------------------
# comparison matrix
# ---------------------------------------------------------------------------

@dataclass
class MatrixRow:
    scenario: str
    outcomes: dict[str, str]
    expected: dict[str, str]

    def mismatches(self) -> list[tuple[str, str, str]]:
        return [
            (detector, self.outcomes.get(detector, "?"), want)
            for detector, want in self.expected.items()
            if self.outcomes.get(detector) != want
        ]


@dataclass
class MatrixResult:
    rows: list[MatrixRow]
    results: list[sim.RunResult]

    def mismatched_cells(self) -> list[tuple[str, str, str, str]]:
        cells = []
        for row in self.rows:
            for detector, got, want in row.mismatches():
                cells.append((row.scenario, detector, got, want))
        return cells

    def to_table(self) -> str:
        width = max(len(row.scenario) for row in self.rows) + 2
        lines = [f"{'scenario':<{width}}{'rx':<12}{'reference':<12}match"]
        for row in self.rows:
            ok = "yes" if not row.mismatches() else "NO"
            lines.append(
                f"{row.scenario:<{width}}"
                f"{row.outcomes.get('rx', '-'):<12}"
                f"{row.outcomes.get('reference', '-'):<12}{ok}"
            )
        return "\n".join(lines)


def run_matrix(out_dir: str | Path | None = None, check: bool = False) -> MatrixResult:
    """Run the canonical eight scenarios; optionally raise on any deviation."""
    rows = []
    results = []
    for factory in MATRIX_SCENARIOS:
        scenario = factory()
        target = Path(out_dir) / scenario.name if out_dir is not None else None
        result = sim.run(scenario, out_dir=target)
        results.append(result)
        rows.append(
            MatrixRow(
                scenario=scenario.name,
                outcomes=result.outcomes,
                expected=scenario.expected or {},
            )
        )
    matrix = MatrixResult(rows=rows, results=results)
    if check:
        cells = matrix.mismatched_cells()
        if cells:
            raise MatrixMismatch(cells)
    return matrix
