"""Scenario documents: the data model, the file grammar, and validation.

A scenario is one YAML document with the sections ``fixtures``, ``setup``,
``monitor``, ``actions`` plus ``name``, ``horizon``, ``seed`` and an optional
``expected`` outcome table. Integers may be written as YAML ints or hex
strings. The full grammar is documented in the project README; everything
here raises :class:`ScenarioError` with a location on malformed input.

Action timestamps are either concrete ticks, ``{uniform: [lo, hi]}`` draws
(for randomized sweeps), or ``{after: <action name>, plus: k}`` offsets from
another named action.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import yaml

from . import fixtures as builtin_fixtures
from . import peformat
from .detector import Heuristic
from .errors import ScenarioError

VALID_DETECTORS = ("rx", "rx-periodic-only", "reference")
VALID_SETUP_OPS = ("load", "alloc")
VALID_ACTION_OPS = (
    "load",
    "manual_map",
    "stomp",
    "execute",
    "unlink",
    "erase_headers",
    "alloc",
    "protect",
    "write",
)
VALID_OUTCOMES = ("Detected", "Missed", "Error")


@dataclass(frozen=True)
class FixedTime:
    at: int


@dataclass(frozen=True)
class UniformTime:
    lo: int
    hi: int


@dataclass(frozen=True)
class OffsetTime:
    after: str
    plus: int


TimeExpr = FixedTime | UniformTime | OffsetTime


@dataclass
class Action:
    at: TimeExpr
    op: str
    args: dict[str, Any]
    name: str | None = None
    handle: str | None = None


@dataclass
class FixtureDef:
    name: str
    spec: peformat.PeSpec | None = None
    file: str | None = None
    builtin: bool = False


@dataclass
class MonitorSpec:
    poll_interval: int = 100
    detectors: tuple[str, ...] = ("rx",)
    heuristics: frozenset[Heuristic] | None = None
    pristine: tuple[str, ...] | None = None
    export_listing: bool = False


@dataclass
class Scenario:
    name: str
    fixtures: list[FixtureDef] = field(default_factory=list)
    setup: list[dict] = field(default_factory=list)
    monitor: MonitorSpec = field(default_factory=MonitorSpec)
    actions: list[Action] = field(default_factory=list)
    horizon: int = 1000
    seed: int = 0
    expected: dict[str, str] | None = None
    base_dir: Path = field(default_factory=Path)

    def validate(self) -> None:
        names = {f.name for f in self.fixtures}
        if len(names) != len(self.fixtures):
            raise ScenarioError("duplicate fixture names", self.name)
        for step in self.setup:
            if step["op"] == "load" and step["fixture"] not in names:
                raise ScenarioError(
                    f"setup references undefined fixture {step['fixture']!r}", self.name
                )
        action_names = set()
        for action in self.actions:
            if action.op in ("load", "manual_map") and action.args.get("fixture") not in names:
                raise ScenarioError(
                    f"action references undefined fixture "
                    f"{action.args.get('fixture')!r}",
                    self.name,
                )
            if action.name:
                if action.name in action_names:
                    raise ScenarioError(f"duplicate action name {action.name!r}", self.name)
                action_names.add(action.name)
        for action in self.actions:
            if isinstance(action.at, OffsetTime) and action.at.after not in action_names:
                raise ScenarioError(
                    f"offset time references unknown action {action.at.after!r}", self.name
                )
            if isinstance(action.at, FixedTime) and action.at.at >= self.horizon:
                raise ScenarioError(
                    f"action at tick {action.at.at} is not before horizon {self.horizon}",
                    self.name,
                )
            if isinstance(action.at, UniformTime) and not (
                0 <= action.at.lo <= action.at.hi < self.horizon
            ):
                raise ScenarioError(
                    f"uniform time [{action.at.lo}, {action.at.hi}] invalid for "
                    f"horizon {self.horizon}",
                    self.name,
                )
        for detector in self.monitor.detectors:
            if detector not in VALID_DETECTORS:
                raise ScenarioError(f"unknown detector {detector!r}", self.name)
        if self.expected:
            for detector, outcome in self.expected.items():
                if detector not in self.monitor.detectors:
                    raise ScenarioError(
                        f"expected outcome for unarmed detector {detector!r}", self.name
                    )
                if outcome not in VALID_OUTCOMES:
                    raise ScenarioError(f"unknown outcome {outcome!r}", self.name)

    def resolve_times(self, rng: random.Random) -> list[int]:
        """Concrete tick per action; uniform draws come from ``rng``."""
        resolved: dict[int, int] = {}
        by_name: dict[str, int] = {}
        for i, action in enumerate(self.actions):
            if isinstance(action.at, FixedTime):
                resolved[i] = action.at.at
            elif isinstance(action.at, UniformTime):
                resolved[i] = rng.randint(action.at.lo, action.at.hi)
            if action.name and i in resolved:
                by_name[action.name] = resolved[i]
        # offsets may chain; iterate until stable
        pending = [i for i in range(len(self.actions)) if i not in resolved]
        while pending:
            progressed = []
            for i in pending:
                at = self.actions[i].at
                assert isinstance(at, OffsetTime)
                if at.after in by_name:
                    resolved[i] = by_name[at.after] + at.plus
                    if self.actions[i].name:
                        by_name[self.actions[i].name] = resolved[i]
                    progressed.append(i)
            if not progressed:
                raise ScenarioError("cyclic or unresolvable action time offsets", self.name)
            pending = [i for i in pending if i not in progressed]
        for i, at in resolved.items():
            if at >= self.horizon:
                raise ScenarioError(
                    f"action {i} resolves to tick {at}, not before horizon {self.horizon}",
                    self.name,
                )
        return [resolved[i] for i in range(len(self.actions))]


# ---------------------------------------------------------------------------
# YAML parsing
# ---------------------------------------------------------------------------

def _to_int(value: Any, where: str) -> int:
    if isinstance(value, bool):
        raise ScenarioError(f"expected integer, got boolean", where)
    if isinstance(value, int):
        return value
    if isinstance(value, str):
        try:
            return int(value, 0)
        except ValueError:
            pass
    raise ScenarioError(f"expected integer, got {value!r}", where)


def _to_bool(value: Any, where: str) -> bool:
    if isinstance(value, bool):
        return value
    raise ScenarioError(f"expected boolean, got {value!r}", where)


def _parse_time(value: Any, where: str) -> TimeExpr:
    if isinstance(value, dict):
        if "uniform" in value:
            bounds = value["uniform"]
            if not (isinstance(bounds, list) and len(bounds) == 2):
                raise ScenarioError("uniform time needs [lo, hi]", where)
            return UniformTime(_to_int(bounds[0], where), _to_int(bounds[1], where))
        if "after" in value:
            return OffsetTime(str(value["after"]), _to_int(value.get("plus", 0), where))
        raise ScenarioError(f"unknown time expression {value!r}", where)
    return FixedTime(_to_int(value, where))


def _parse_section_spec(doc: dict, where: str) -> peformat.SectionSpec:
    name = doc.get("name")
    if not name:
        raise ScenarioError("section needs a name", where)
    content = parse_data(doc, where, default_empty=True)
    return peformat.SectionSpec(
        name=str(name),
        flags=str(doc.get("flags", "r")),
        content=content,
        virtual_size=(
            _to_int(doc["size"], where) if "size" in doc else None
        ),
    )


def parse_data(doc: dict, where: str, default_empty: bool = False) -> bytes:
    """Byte payload: {pattern: N} / {zeros: N} / {hex: "AABB"} (+ optional salt)."""
    if "pattern" in doc:
        return builtin_fixtures.pattern_bytes(
            _to_int(doc["pattern"], where), _to_int(doc.get("salt", 0), where)
        )
    if "zeros" in doc:
        return bytes(_to_int(doc["zeros"], where))
    if "hex" in doc:
        try:
            return bytes.fromhex(str(doc["hex"]))
        except ValueError as exc:
            raise ScenarioError(f"bad hex payload: {exc}", where) from None
    if default_empty:
        return b""
    raise ScenarioError("expected a data payload (pattern/zeros/hex)", where)


def _parse_fixture(doc: dict, where: str) -> FixtureDef:
    name = doc.get("name")
    if not name:
        raise ScenarioError("fixture needs a name", where)
    if doc.get("builtin"):
        return FixtureDef(name=str(name), builtin=True)
    if "file" in doc:
        return FixtureDef(name=str(name), file=str(doc["file"]))
    if "image_base" not in doc or "sections" not in doc:
        raise ScenarioError(
            f"fixture {name!r} needs builtin/file or image_base+sections", where
        )
    spec = peformat.PeSpec(
        image_base=_to_int(doc["image_base"], where),
        sections=[
            _parse_section_spec(s, f"{where}.sections[{i}]")
            for i, s in enumerate(doc["sections"])
        ],
        export_dll_name=str(doc.get("export_dll_name", name)),
        ordinal_base=_to_int(doc.get("ordinal_base", 1), where),
        entry_point=(
            _to_int(doc["entry_point"], where) if "entry_point" in doc else None
        ),
        exports_rva=_to_int(doc["exports_rva"], where) if "exports_rva" in doc else None,
        imports_rva=_to_int(doc["imports_rva"], where) if "imports_rva" in doc else None,
        iat_rva=_to_int(doc["iat_rva"], where) if "iat_rva" in doc else None,
        relocs_rva=_to_int(doc["relocs_rva"], where) if "relocs_rva" in doc else None,
    )
    for e in doc.get("exports", []):
        spec.exports.append(
            peformat.ExportSpec(
                name=e.get("name"),
                rva=_to_int(e["rva"], where) if "rva" in e else None,
                forwarder=e.get("forwarder"),
                ordinal=_to_int(e["ordinal"], where) if "ordinal" in e else None,
            )
        )
    for imp in doc.get("imports", []):
        symbols = [
            s if isinstance(s, str) else _to_int(s, where)
            for s in imp.get("symbols", [])
        ]
        spec.imports.append(peformat.ImportSpec(dll=str(imp["dll"]), symbols=symbols))
    for rva in doc.get("relocations", []):
        spec.relocations.append(_to_int(rva, where))
    return FixtureDef(name=str(name), spec=spec)


def _parse_action(doc: dict, index: int, where: str) -> Action:
    if "op" not in doc or "at" not in doc:
        raise ScenarioError("action needs op and at", f"{where}[{index}]")
    op = str(doc["op"])
    if op not in VALID_ACTION_OPS:
        raise ScenarioError(f"unknown action op {op!r}", f"{where}[{index}]")
    args = {k: v for k, v in doc.items() if k not in ("op", "at", "name", "as")}
    return Action(
        at=_parse_time(doc["at"], f"{where}[{index}]"),
        op=op,
        args=args,
        name=doc.get("name"),
        handle=doc.get("as"),
    )


def parse_scenario(doc: Any, name_hint: str = "<scenario>", base_dir: Path | None = None) -> Scenario:
    if not isinstance(doc, dict):
        raise ScenarioError("scenario document must be a mapping", name_hint)
    name = str(doc.get("name", name_hint))
    monitor_doc = doc.get("monitor", {}) or {}
    heuristics = None
    if "heuristics" in monitor_doc:
        try:
            heuristics = frozenset(
                next(h for h in Heuristic if h.short == str(tag) or h.value == str(tag))
                for tag in monitor_doc["heuristics"]
            )
        except StopIteration:
            raise ScenarioError(
                f"unknown heuristic in {monitor_doc['heuristics']!r}", name
            ) from None
    monitor = MonitorSpec(
        poll_interval=_to_int(monitor_doc.get("poll_interval", 100), name),
        detectors=tuple(monitor_doc.get("detectors", ["rx"])),
        heuristics=heuristics,
        pristine=(
            tuple(monitor_doc["pristine"]) if "pristine" in monitor_doc else None
        ),
        export_listing=bool(monitor_doc.get("export_listing", False)),
    )
    setup = []
    for i, step in enumerate(doc.get("setup", []) or []):
        op = str(step.get("op", ""))
        if op not in VALID_SETUP_OPS:
            raise ScenarioError(f"unknown setup op {op!r}", f"{name}.setup[{i}]")
        setup.append(dict(step, op=op))
    scenario = Scenario(
        name=name,
        fixtures=[
            _parse_fixture(f, f"{name}.fixtures[{i}]")
            for i, f in enumerate(doc.get("fixtures", []) or [])
        ],
        setup=setup,
        monitor=monitor,
        actions=[
            _parse_action(a, i, f"{name}.actions")
            for i, a in enumerate(doc.get("actions", []) or [])
        ],
        horizon=_to_int(doc.get("horizon", 1000), name),
        seed=_to_int(doc.get("seed", 0), name),
        expected=(
            {str(k): str(v) for k, v in doc["expected"].items()}
            if isinstance(doc.get("expected"), dict)
            else None
        ),
        base_dir=base_dir or Path(),
    )
    scenario.validate()
    return scenario


def load_scenario(path: str | Path) -> Scenario:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ScenarioError(f"cannot read scenario file: {exc}", str(path)) from exc
    try:
        doc = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ScenarioError(f"YAML parse failure: {exc}", str(path)) from exc
    return parse_scenario(doc, name_hint=path.stem, base_dir=path.parent)


def fixture_bytes(scenario: Scenario) -> dict[str, bytes]:
    """Build (or read) every fixture once; keyed by fixture name."""
    out: dict[str, bytes] = {}
    for fixture in scenario.fixtures:
        if fixture.builtin:
            out[fixture.name] = builtin_fixtures.build_fixture(fixture.name)
        elif fixture.file is not None:
            path = Path(fixture.file)
            if not path.is_absolute():
                path = scenario.base_dir / path
            try:
                out[fixture.name] = path.read_bytes()
            except OSError as exc:
                raise ScenarioError(
                    f"cannot read fixture file {path}: {exc}", scenario.name
                ) from exc
        else:
            out[fixture.name] = peformat.build(fixture.spec)
    return out
