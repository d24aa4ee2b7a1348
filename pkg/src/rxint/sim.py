"""Scenario runner: one timeline, every armed detector, reproducible results.

Each armed detector gets its own replay of the identical timeline (fresh
address space, same resolved action times), so the event-triggered engine,
its periodic-only variant, and the reference scanner never interfere through
shared session state or dump I/O. Replays are deterministic, which makes the
per-detector result lists directly comparable.

Address arguments in actions accept: integers, hex strings, ``handle`` names
bound by earlier ``as:`` results, ``module`` names (their load base),
``name+0x10`` offsets, and ``module!Export`` symbol references.
"""

from __future__ import annotations

import json
import random
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from . import attacks, loader, refscan, resolver
from .detector import (
    ALL_HEURISTICS,
    Detection,
    Heuristic,
    MonitorConfig,
    Session,
    begin_monitor,
)
from .errors import ScenarioError
from .refscan import Finding, FindingClass
from .scenario import (
    Action,
    Scenario,
    UniformTime,
    fixture_bytes,
    parse_data,
)
from .scheduler import PRIORITY_ATTACK, PRIORITY_PERIODIC, Scheduler
from .vaspace import AddressSpace, Protection, RegionKind

OUTCOME_DETECTED = "Detected"
OUTCOME_MISSED = "Missed"
OUTCOME_ERROR = "Error"


@dataclass
class _RunContext:
    space: AddressSpace
    scheduler: Scheduler
    fixtures: dict[str, bytes]
    handles: dict[str, int] = field(default_factory=dict)
    loaded_in_setup: list[str] = field(default_factory=list)


def _resolve_addr(ctx: _RunContext, expr: Any, where: str) -> int:
    if isinstance(expr, int):
        return expr
    text = str(expr).strip()
    if "!" in text:
        module, symbol = text.split("!", 1)
        snapshot = resolver.build_snapshot(ctx.space)
        entry = snapshot.find_export(module, symbol)
        if entry is None:
            raise ScenarioError(f"cannot resolve export {text!r}", where)
        address = entry.target_address or entry.absolute_address
        return address
    if "+" in text:
        name, offset = text.split("+", 1)
        try:
            delta = int(offset, 0)
        except ValueError:
            raise ScenarioError(f"bad offset in {text!r}", where) from None
        return _name_base(ctx, name.strip(), where) + delta
    try:
        return int(text, 0)
    except ValueError:
        return _name_base(ctx, text, where)


def _name_base(ctx: _RunContext, name: str, where: str) -> int:
    if name in ctx.handles:
        return ctx.handles[name]
    record = ctx.space.find_module(name)
    if record is not None:
        return record.base
    raise ScenarioError(f"unknown handle or module {name!r}", where)


def _parse_payload(doc: Any, where: str) -> bytes:
    if not isinstance(doc, dict):
        raise ScenarioError("payload must be a data mapping (pattern/zeros/hex)", where)
    return parse_data(doc, where)


def _int_arg(args: dict, key: str, where: str, default: int | None = None) -> int:
    if key not in args:
        if default is not None:
            return default
        raise ScenarioError(f"missing argument {key!r}", where)
    value = args[key]
    if isinstance(value, int):
        return value
    try:
        return int(str(value), 0)
    except ValueError:
        raise ScenarioError(f"argument {key!r} is not an integer", where) from None


def _do_load(ctx: _RunContext, args: dict, handle: str | None, where: str) -> None:
    name = args["fixture"]
    base = loader.load_module(
        ctx.space, ctx.fixtures[name], name, rf"C:\fixtures\{name}"
    )
    if handle:
        ctx.handles[handle] = base


def _do_alloc(ctx: _RunContext, args: dict, handle: str | None, where: str) -> None:
    kind = RegionKind[str(args.get("kind", "private")).upper()]
    base = ctx.space.alloc(
        _int_arg(args, "size", where),
        Protection.from_name(str(args.get("protection", "rw"))),
        kind,
        base=_int_arg(args, "base", where) if "base" in args else None,
        backing_name=args.get("backing_name"),
    )
    if handle:
        ctx.handles[handle] = base


def _execute_action(ctx: _RunContext, action: Action, where: str) -> None:
    args = action.args
    op = action.op
    if op == "load":
        _do_load(ctx, args, action.handle, where)
    elif op == "alloc":
        _do_alloc(ctx, args, action.handle, where)
    elif op == "manual_map":
        name = args["fixture"]
        base = loader.manual_map(
            ctx.space,
            ctx.fixtures[name],
            loader.MapOptions(
                erase_headers=bool(args.get("erase_headers", False)),
                clean_data_directories=bool(args.get("clean_data_directories", False)),
            ),
        )
        if action.handle:
            ctx.handles[action.handle] = base
    elif op == "stomp":
        module_base = _resolve_addr(ctx, args["module"], where)
        if "export" in args:
            target = _resolve_addr(ctx, f"{args['module']}!{args['export']}", where)
            rva = target - module_base
        else:
            rva = _int_arg(args, "rva", where)
        attacks.stomp_now(
            ctx.space,
            ctx.scheduler,
            attacks.StompPlan(
                target_module_base=module_base,
                target_rva=rva,
                payload=_parse_payload(args.get("payload", {"pattern": 16}), where),
                restore_delay=_int_arg(args, "restore_delay", where, default=0),
            ),
        )
    elif op == "execute":
        vector = attacks.ExecVector[str(args.get("vector", "new_thread")).upper()]
        cloak = attacks.CloakOptions(
            fake_start_address=(
                _resolve_addr(ctx, args["fake_start"], where)
                if "fake_start" in args
                else None
            ),
            cloak_thread=bool(args.get("cloak_thread", False)),
            skip_thread_attach=bool(args.get("skip_thread_attach", False)),
        )
        attacks.execute_now(
            ctx.space,
            ctx.scheduler,
            vector,
            _resolve_addr(ctx, args["start"], where),
            cloak,
        )
    elif op == "unlink":
        ctx.space.unlink_module(_resolve_addr(ctx, args["module"], where))
    elif op == "erase_headers":
        ctx.space.write(_resolve_addr(ctx, args["target"], where), bytes(0x1000))
    elif op == "protect":
        ctx.space.protect(
            _resolve_addr(ctx, args["target"], where) + _int_arg(args, "offset", where, default=0),
            _int_arg(args, "size", where),
            Protection.from_name(str(args["protection"])),
        )
    elif op == "write":
        data = _parse_payload(args["data"], where)
        ctx.space.write(
            _resolve_addr(ctx, args["target"], where) + _int_arg(args, "offset", where, default=0),
            data,
        )
    else:  # pragma: no cover - guarded by scenario validation
        raise ScenarioError(f"unknown op {op!r}", where)


def _setup(ctx: _RunContext, scenario: Scenario) -> None:
    for i, step in enumerate(scenario.setup):
        where = f"{scenario.name}.setup[{i}]"
        if step["op"] == "load":
            _do_load(ctx, step, step.get("as"), where)
            ctx.loaded_in_setup.append(step["fixture"])
        elif step["op"] == "alloc":
            _do_alloc(ctx, step, step.get("as"), where)


def _pristine_map(ctx: _RunContext, scenario: Scenario) -> dict[str, bytes]:
    names = scenario.monitor.pristine
    if names is None:
        names = tuple(ctx.loaded_in_setup)
    return {name: ctx.fixtures[name] for name in names if name in ctx.fixtures}


def _replay(
    scenario: Scenario,
    detector_name: str,
    times: list[int],
    fixtures: dict[str, bytes],
    dump_dir: str | None,
) -> tuple[Session | None, list[tuple[int, list[Finding]]]]:
    ctx = _RunContext(space=AddressSpace(), scheduler=Scheduler(), fixtures=fixtures)
    _setup(ctx, scenario)

    session: Session | None = None
    reference_log: list[tuple[int, list[Finding]]] = []
    if detector_name in ("rx", "rx-periodic-only"):
        config = MonitorConfig(
            poll_interval=scenario.monitor.poll_interval,
            dump_directory=dump_dir if detector_name == "rx" else None,
            heuristics_enabled=(
                scenario.monitor.heuristics
                if scenario.monitor.heuristics is not None
                else ALL_HEURISTICS
            ),
            event_triggered=(detector_name == "rx"),
            include_export_listing=scenario.monitor.export_listing,
        )
        session = begin_monitor(ctx.space, config, ctx.scheduler)
    elif detector_name == "reference":
        pristine = _pristine_map(ctx, scenario)

        def poll() -> None:
            findings = refscan.scan_process(ctx.space, pristine)
            reference_log.append((ctx.scheduler.now, findings))
            ctx.scheduler.schedule(
                ctx.scheduler.now + scenario.monitor.poll_interval, poll, PRIORITY_PERIODIC
            )

        ctx.scheduler.schedule(scenario.monitor.poll_interval, poll, PRIORITY_PERIODIC)
    else:
        raise ScenarioError(f"unknown detector {detector_name!r}", scenario.name)

    for i, action in enumerate(scenario.actions):
        where = f"{scenario.name}.actions[{i}]"
        ctx.scheduler.schedule(
            times[i],
            lambda action=action, where=where: _execute_action(ctx, action, where),
            PRIORITY_ATTACK,
        )
    ctx.scheduler.run_until(scenario.horizon)
    return session, reference_log


def _serialize_detection(detection: Detection) -> dict:
    return {
        "heuristic": detection.heuristic.value,
        "base": f"0x{detection.base:X}",
        "size": detection.size,
        "time": detection.time,
        "evidence": detection.evidence,
        "dump": detection.dump.bin_path if detection.dump else None,
        "report": detection.dump.report_path if detection.dump else None,
    }


def _serialize_findings(log: list[tuple[int, list[Finding]]]) -> list[dict]:
    seen: set[tuple[FindingClass, int]] = set()
    out = []
    for time, findings in log:
        for finding in findings:
            key = (finding.category, finding.base)
            if key in seen:
                continue
            seen.add(key)
            out.append(
                {
                    "category": finding.category.value,
                    "base": f"0x{finding.base:X}",
                    "size": finding.size,
                    "time": time,
                    "note": finding.note,
                }
            )
    return out


def _outcome(detector_name: str, serialized: list[dict]) -> str:
    if detector_name == "reference":
        if any(d["category"] != FindingClass.READ_ERROR.value for d in serialized):
            return OUTCOME_DETECTED
        if serialized:
            return OUTCOME_ERROR
        return OUTCOME_MISSED
    return OUTCOME_DETECTED if serialized else OUTCOME_MISSED


@dataclass
class RunResult:
    scenario: str
    seed: int
    times: list[int]
    detections: dict[str, list[dict]]
    outcomes: dict[str, str]
    expected: dict[str, str] | None
    artifacts: list[str]
    stats: dict | None
    warnings: list[str]

    def matches_expected(self) -> bool:
        if not self.expected:
            return True
        return all(
            self.outcomes.get(detector) == outcome
            for detector, outcome in self.expected.items()
        )

    def to_json(self) -> str:
        return json.dumps(
            {
                "scenario": self.scenario,
                "seed": self.seed,
                "times": self.times,
                "detections": self.detections,
                "outcomes": self.outcomes,
                "expected": self.expected,
                "artifacts": self.artifacts,
                "stats": self.stats,
                "warnings": self.warnings,
            },
            sort_keys=True,
            indent=2,
        )


def run(
    scenario: Scenario, out_dir: str | Path | None = None, seed: int | None = None
) -> RunResult:
    """Execute one scenario for every armed detector."""
    actual_seed = scenario.seed if seed is None else seed
    rng = random.Random(f"{scenario.name}:{actual_seed}")
    times = scenario.resolve_times(rng)
    fixtures = fixture_bytes(scenario)

    out_path = Path(out_dir) if out_dir is not None else None
    dump_dir = str(out_path / "dumps") if out_path is not None else None

    detections: dict[str, list[dict]] = {}
    artifacts: list[str] = []
    warnings: list[str] = []
    stats_doc: dict | None = None
    snapshot_doc: dict | None = None
    for detector_name in scenario.monitor.detectors:
        session, reference_log = _replay(scenario, detector_name, times, fixtures, dump_dir)
        if detector_name == "reference":
            detections[detector_name] = _serialize_findings(reference_log)
        else:
            assert session is not None
            detections[detector_name] = [
                _serialize_detection(d) for d in session.detections
            ]
            warnings.extend(session.warnings)
            for d in session.detections:
                if d.dump is not None:
                    artifacts.extend([d.dump.bin_path, d.dump.report_path])
            if detector_name == "rx":
                stats = session.stats()
                stats_doc = {
                    "baseline_bytes": stats.baseline_bytes,
                    "snapshot_bytes": stats.snapshot_bytes,
                    "export_snapshot_bytes": stats.export_snapshot_bytes,
                    "detections": stats.detections,
                    "config_bytes": stats.config_bytes,
                }
                snapshot_doc = resolver.snapshot_to_dict(session.exports)
            session.stop()

    result = RunResult(
        scenario=scenario.name,
        seed=actual_seed,
        times=times,
        detections=detections,
        outcomes={
            name: _outcome(name, serialized) for name, serialized in detections.items()
        },
        expected=scenario.expected,
        artifacts=artifacts,
        stats=stats_doc,
        warnings=warnings,
    )
    if out_path is not None:
        out_path.mkdir(parents=True, exist_ok=True)
        (out_path / "result.json").write_text(result.to_json() + "\n")
        if stats_doc is not None:
            (out_path / "stats.json").write_text(
                json.dumps(stats_doc, sort_keys=True, indent=2) + "\n"
            )
        if snapshot_doc is not None:
            (out_path / "export_snapshot.json").write_text(
                json.dumps(snapshot_doc, sort_keys=True, indent=2) + "\n"
            )
    return result


# ---------------------------------------------------------------------------
# randomized timing sweeps
# ---------------------------------------------------------------------------

@dataclass
class SweepResult:
    scenario: str
    samples: int
    window: int
    poll_interval: int
    hits: dict[str, int]
    closed_form: float

    def rate(self, detector: str) -> float:
        return self.hits[detector] / self.samples if self.samples else 0.0


def _sweep_window(scenario: Scenario) -> int:
    for action in scenario.actions:
        if action.op == "stomp" and isinstance(action.at, UniformTime):
            return int(action.args.get("restore_delay", 0))
    raise ScenarioError(
        "sweep needs a stomp action with a uniform timestamp", scenario.name
    )


def sweep(
    scenario: Scenario,
    samples: int,
    seed: int | None = None,
    detectors: tuple[str, ...] | None = None,
) -> SweepResult:
    """Replay the scenario ``samples`` times with randomized stomp times and
    count, per detector, the samples that produced a hash-mismatch detection.

    The closed form is the landing probability of a poll tick inside the
    modification window [t, t+w): w/T.
    """
    window = _sweep_window(scenario)
    base_seed = scenario.seed if seed is None else seed
    armed = detectors or tuple(
        d for d in scenario.monitor.detectors if d != "reference"
    )
    fixtures = fixture_bytes(scenario)
    hits = {name: 0 for name in armed}
    for i in range(samples):
        rng = random.Random(f"{scenario.name}:{base_seed}:{i}")
        times = scenario.resolve_times(rng)
        for detector_name in armed:
            session, _ = _replay(scenario, detector_name, times, fixtures, None)
            assert session is not None
            if any(
                d.heuristic is Heuristic.H2_IMAGE_HASH_MISMATCH
                for d in session.detections
            ):
                hits[detector_name] += 1
            session.stop()
    return SweepResult(
        scenario=scenario.name,
        samples=samples,
        window=window,
        poll_interval=scenario.monitor.poll_interval,
        hits=hits,
        closed_form=window / scenario.monitor.poll_interval,
    )
