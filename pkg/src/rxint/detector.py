"""The stateful detection engine: baseline, differential scans, thread tripwire.

A session snapshots the whole address space when monitoring begins —
metadata for every committed region plus a content hash for each executable
image-backed region — and then diffs fresh snapshots against that ground
truth, either on a periodic tick or immediately when a thread-creation event
warrants it.

Heuristics (independently toggleable):

* H1_NEW_PRIVATE_EXEC      executable private region not present in the baseline
* H2_IMAGE_HASH_MISMATCH   executable image region whose hash changed
* H3_PRIVATE_PROT_ESCALATION  baselined non-executable private region now executable
* H4_NEW_IMAGE_REGION      executable image region absent from the baseline
* H5_UNLINKED_IMAGE        executable image region with no covering module record
* T1_THREAD_IN_PRIVATE     thread started in unbacked private memory

H1/H2/H3 are the differential heuristics proper; H4/H5 extend them so that
loads and module-list unlinking performed after the baseline surface as
detections too. The thread tripwire classifies on the kernel-view start
address only, so user-mode cloaking cannot influence verdicts.
"""

from __future__ import annotations

import os
from dataclasses import dataclass
from enum import Enum
from typing import Iterable

from . import resolver
from .attacks import ThreadCreateEvent
from .errors import AlreadyMonitoring, IoError
from .hashing import Digest64, xxh64
from .scheduler import PRIORITY_PERIODIC, Scheduler
from .vaspace import AddressSpace, Protection, RegionInfo, RegionKind

#: Serialized footprint of one baseline/snapshot entry, for the accounting op.
ENTRY_BYTES = 32


class Heuristic(str, Enum):
    H1_NEW_PRIVATE_EXEC = "H1_NEW_PRIVATE_EXEC"
    H2_IMAGE_HASH_MISMATCH = "H2_IMAGE_HASH_MISMATCH"
    H3_PRIVATE_PROT_ESCALATION = "H3_PRIVATE_PROT_ESCALATION"
    H4_NEW_IMAGE_REGION = "H4_NEW_IMAGE_REGION"
    H5_UNLINKED_IMAGE = "H5_UNLINKED_IMAGE"
    T1_THREAD_IN_PRIVATE = "T1_THREAD_IN_PRIVATE"

    @property
    def short(self) -> str:
        return self.value.split("_", 1)[0]


ALL_HEURISTICS = frozenset(Heuristic)


class ScanTrigger(Enum):
    PERIODIC = "PERIODIC"
    EVENT = "EVENT"


class VerdictKind(Enum):
    DIRECT_DETECTION = "DIRECT_DETECTION"
    STOMP_HINT = "STOMP_HINT"
    BENIGN = "BENIGN"


@dataclass(frozen=True)
class ThreadVerdict:
    kind: VerdictKind
    start: int


@dataclass(frozen=True)
class BaselineEntry:
    base: int
    size: int
    protection: Protection
    kind: RegionKind
    content_hash: Digest64 | None = None

    @property
    def end(self) -> int:
        return self.base + self.size


@dataclass(frozen=True)
class MonitorConfig:
    poll_interval: int = 100
    dump_directory: str | None = None
    heuristics_enabled: frozenset[Heuristic] = ALL_HEURISTICS
    #: False models a periodic-only scanner: no thread observer, no
    #: event-triggered scans.
    event_triggered: bool = True
    include_export_listing: bool = False

    def __post_init__(self):
        if self.poll_interval <= 0:
            raise ValueError("poll_interval must be positive")

    def footprint(self) -> int:
        return 16 + len((self.dump_directory or "").encode())


@dataclass(frozen=True)
class DumpArtifact:
    bin_path: str
    report_path: str
    base: int
    size: int


@dataclass
class Detection:
    heuristic: Heuristic
    base: int
    size: int
    evidence: dict
    time: int
    dump: DumpArtifact | None = None

    def key(self) -> tuple[Heuristic, int]:
        return (self.heuristic, self.base)


@dataclass
class SessionStats:
    baseline_bytes: int
    snapshot_bytes: int
    export_snapshot_bytes: int
    detections: int
    config_bytes: int


def begin_monitor(space: AddressSpace, config: MonitorConfig, scheduler: Scheduler) -> "Session":
    """Start monitoring: build the baseline and export snapshot now, register
    the thread observer, and arm periodic scans every ``poll_interval``."""
    session = Session(space, config, scheduler)
    session._start()
    return session


class Session:
    def __init__(self, space: AddressSpace, config: MonitorConfig, scheduler: Scheduler):
        self.space = space
        self.config = config
        self.scheduler = scheduler
        self.active = False
        self.baseline: tuple[BaselineEntry, ...] = ()
        self.exports: resolver.ExportSnapshot = resolver.ExportSnapshot()
        self.detections: list[Detection] = []
        self.verdicts: list[ThreadVerdict] = []
        self.warnings: list[str] = []
        self._seen: set[tuple[Heuristic, int]] = set()
        self._last_snapshot_len = 0

    # -- lifecycle -------------------------------------------------------

    def _start(self) -> None:
        if not self.scheduler.claim_monitor(self.space):
            raise AlreadyMonitoring("a session is already active for this space")
        self.active = True
        self.baseline = self.build_baseline()
        self.exports = resolver.build_snapshot(self.space)
        if self.config.event_triggered:
            self.scheduler.subscribe_thread_events(self.on_thread_create)
        self._schedule_next_poll()

    def stop(self) -> None:
        if not self.active:
            return
        self.active = False
        self.scheduler.unsubscribe_thread_events(self.on_thread_create)
        self.scheduler.release_monitor(self.space)

    def _schedule_next_poll(self) -> None:
        at = self.scheduler.now + self.config.poll_interval

        def poll() -> None:
            if not self.active:
                return
            self.scan(ScanTrigger.PERIODIC)
            self._schedule_next_poll()

        self.scheduler.schedule(at, poll, PRIORITY_PERIODIC)

    # -- baseline ----------------------------------------------------------

    def build_baseline(self) -> tuple[BaselineEntry, ...]:
        """Snapshot every committed region; hash executable image regions.

        Private regions never carry a hash — their metadata alone is the
        baseline, which keeps the footprint bounded on volatile heaps.
        """
        entries = []
        for info in self.space.enumerate_layout():
            content_hash = None
            if info.kind is RegionKind.IMAGE and info.executable:
                content_hash = xxh64(self.space.read(info.base, info.size))
            entries.append(
                BaselineEntry(
                    base=info.base,
                    size=info.size,
                    protection=info.protection,
                    kind=info.kind,
                    content_hash=content_hash,
                )
            )
        return tuple(entries)

    # -- scanning ----------------------------------------------------------

    def evaluate(self) -> list[Detection]:
        """Differential analysis of the current layout against the baseline.

        Pure: no dump, no de-duplication, no recording. Two consecutive calls
        with no intervening mutation return identical lists.
        """
        now = self.scheduler.now
        snapshot = self.space.enumerate_layout()
        self._last_snapshot_len = len(snapshot)
        found: list[Detection] = []

        for info in snapshot:
            if info.kind is RegionKind.PRIVATE and info.executable:
                covering = self._baseline_covering(info)
                if covering is None:
                    found.append(
                        Detection(
                            heuristic=Heuristic.H1_NEW_PRIVATE_EXEC,
                            base=info.base,
                            size=info.size,
                            evidence={"protection": info.protection.name},
                            time=now,
                        )
                    )
                elif any(not entry.protection.executable for entry in covering):
                    old = next(
                        entry.protection.name
                        for entry in covering
                        if not entry.protection.executable
                    )
                    found.append(
                        Detection(
                            heuristic=Heuristic.H3_PRIVATE_PROT_ESCALATION,
                            base=info.base,
                            size=info.size,
                            evidence={
                                "old_protection": old,
                                "new_protection": info.protection.name,
                            },
                            time=now,
                        )
                    )
            elif info.kind is RegionKind.IMAGE and info.executable:
                if self._baseline_covering(info) is None:
                    found.append(
                        Detection(
                            heuristic=Heuristic.H4_NEW_IMAGE_REGION,
                            base=info.base,
                            size=info.size,
                            evidence={"backing_name": info.backing_name},
                            time=now,
                        )
                    )
                if self.space.module_covering(info.base) is None:
                    found.append(
                        Detection(
                            heuristic=Heuristic.H5_UNLINKED_IMAGE,
                            base=info.base,
                            size=info.size,
                            evidence={"backing_name": info.backing_name},
                            time=now,
                        )
                    )

        # hash comparison runs against the baseline's own spans so that
        # transient splits cannot hide a modification
        for entry in self.baseline:
            if entry.content_hash is None:
                continue
            current = xxh64(self.space.read(entry.base, entry.size))
            if current != entry.content_hash:
                found.append(
                    Detection(
                        heuristic=Heuristic.H2_IMAGE_HASH_MISMATCH,
                        base=entry.base,
                        size=entry.size,
                        evidence={
                            "old_digest": f"0x{entry.content_hash:016X}",
                            "new_digest": f"0x{current:016X}",
                        },
                        time=now,
                    )
                )
        enabled = self.config.heuristics_enabled
        return [d for d in found if d.heuristic in enabled]

    def scan(self, trigger: ScanTrigger = ScanTrigger.PERIODIC) -> list[Detection]:
        """Evaluate, then record/dump findings not alerted before.

        Returns the newly recorded detections; (heuristic, base) pairs that
        already alerted in this session are dropped.
        """
        raw = self.evaluate()
        return self._commit(raw)

    def _commit(self, raw: Iterable[Detection]) -> list[Detection]:
        new: list[Detection] = []
        for detection in raw:
            if detection.key() in self._seen:
                continue
            self._seen.add(detection.key())
            try:
                detection.dump = self.dump_region(detection)
            except IoError as exc:
                self.warnings.append(str(exc))
            self.detections.append(detection)
            new.append(detection)
        return new

    def _baseline_covering(self, info: RegionInfo) -> list[BaselineEntry] | None:
        """Baseline entries fully covering the region's range, or None if any
        byte of the range was not committed at baseline time."""
        covering = []
        pos = info.base
        for entry in self.baseline:
            if entry.end <= pos:
                continue
            if entry.base > pos:
                return None
            covering.append(entry)
            pos = entry.end
            if pos >= info.end:
                return covering
        return None if pos < info.end else covering

    # -- thread tripwire -----------------------------------------------------

    def on_thread_create(self, event: ThreadCreateEvent) -> ThreadVerdict:
        """Classify a thread-creation event by its kernel-view start address.

        Private, unbacked start -> direct detection (dump immediately).
        Image start -> out-of-band scan right now, at this tick; the verdict
        is a stomp hint when that scan turns anything up.
        """
        if not self.active:
            return ThreadVerdict(VerdictKind.BENIGN, event.actual_start)
        start = event.actual_start
        region = self.space.region_at(start)
        verdict = ThreadVerdict(VerdictKind.BENIGN, start)
        if (
            region is not None
            and region.kind is RegionKind.PRIVATE
            and self.space.module_covering(start) is None
        ):
            verdict = ThreadVerdict(VerdictKind.DIRECT_DETECTION, start)
            if Heuristic.T1_THREAD_IN_PRIVATE in self.config.heuristics_enabled:
                self._commit(
                    [
                        Detection(
                            heuristic=Heuristic.T1_THREAD_IN_PRIVATE,
                            base=region.base,
                            size=region.size,
                            evidence={
                                "actual_start": f"0x{start:X}",
                                "reported_start": f"0x{event.reported_start:X}",
                                "vector": event.vector.value,
                            },
                            time=self.scheduler.now,
                        )
                    ]
                )
        elif region is not None and region.kind is RegionKind.IMAGE:
            raw = self.evaluate()
            self._commit(raw)
            if raw:
                verdict = ThreadVerdict(VerdictKind.STOMP_HINT, start)
        self.verdicts.append(verdict)
        return verdict

    # -- artifacts ---------------------------------------------------------

    def dump_region(self, detection: Detection) -> DumpArtifact | None:
        """Write the region's raw bytes and the import-analysis report."""
        directory = self.config.dump_directory
        if directory is None:
            return None
        data = self.space.read(detection.base, detection.size)
        bin_name = f"{detection.base:016x}_{detection.heuristic.value}.bin"
        report_name = f"{detection.base:016x}_{detection.heuristic.value}_REPORT.txt"
        bin_path = os.path.join(directory, bin_name)
        report_path = os.path.join(directory, report_name)
        report = resolver.scan_dump(
            self.exports,
            data,
            detection.base,
            dump_name=bin_name,
            include_exports=self.config.include_export_listing,
        )
        try:
            os.makedirs(directory, exist_ok=True)
            with open(bin_path, "wb") as fh:
                fh.write(data)
            with open(report_path, "w") as fh:
                fh.write(report.to_text())
        except OSError as exc:
            raise IoError(f"failed to write dump artifacts: {exc}") from exc
        return DumpArtifact(
            bin_path=bin_path,
            report_path=report_path,
            base=detection.base,
            size=detection.size,
        )

    # -- accounting ---------------------------------------------------------

    def stats(self) -> SessionStats:
        return SessionStats(
            baseline_bytes=len(self.baseline) * ENTRY_BYTES,
            snapshot_bytes=self._last_snapshot_len * ENTRY_BYTES,
            export_snapshot_bytes=self.exports.footprint(),
            detections=len(self.detections),
            config_bytes=self.config.footprint(),
        )
