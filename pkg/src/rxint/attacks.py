"""The injection and cloaking suite as schedulable scenario actions.

Every operation here queues work on the shared scheduler; preconditions are
checked when the action executes, against the memory state at that tick.
Execution vectors model what the kernel can observe: only NEW_THREAD
produces a thread-creation event, and cloaking options alter the reported
fields of that event, never memory state or the kernel-view start address.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

from .errors import SpanError, UnmappedError
from .scheduler import PRIORITY_ATTACK, Scheduler
from .vaspace import RW, AddressSpace, RegionKind, page_ceil, page_floor


class ExecVector(Enum):
    NEW_THREAD = "NEW_THREAD"
    QUEUE_APC = "QUEUE_APC"
    HOOK_CALLBACK = "HOOK_CALLBACK"
    THREAD_HIJACK = "THREAD_HIJACK"


@dataclass(frozen=True)
class CloakOptions:
    fake_start_address: int | None = None
    cloak_thread: bool = False
    skip_thread_attach: bool = False


@dataclass(frozen=True)
class ThreadCreateEvent:
    """Kernel-view thread creation. ``actual_start`` is what the kernel sees;
    ``reported_start`` is the user-visible value cloaking may have forged."""

    actual_start: int
    reported_start: int
    vector: ExecVector
    time: int
    cloak_thread: bool = False
    skip_thread_attach: bool = False


@dataclass(frozen=True)
class StompPlan:
    target_module_base: int
    target_rva: int
    payload: bytes
    #: Ticks until the saved original bytes are written back; 0 = never.
    restore_delay: int = 0


def _check_image_exec_span(space: AddressSpace, start: int, size: int) -> None:
    addr = page_floor(start)
    end = page_ceil(start + size)
    while addr < end:
        region = space.region_at(addr)
        if region is None:
            raise SpanError(f"stomp target page 0x{addr:x} is uncommitted")
        if region.kind is not RegionKind.IMAGE or not region.executable:
            raise SpanError(
                f"stomp target 0x{start:x}+0x{size:x} is not image-executable"
            )
        addr = region.end


def _overwrite(space: AddressSpace, addr: int, data: bytes) -> None:
    # the protect-write-protect dance: three sub-steps, one timestamp
    previous = space.protect(addr, len(data), RW)
    space.write(addr, data)
    space.protect(addr, len(data), previous)


def stomp_now(space: AddressSpace, scheduler: Scheduler, plan: StompPlan) -> None:
    """Perform a stomp at the current tick (see :func:`stomp`)."""
    if not plan.payload:
        raise ValueError("stomp payload must be non-empty")
    target = plan.target_module_base + plan.target_rva
    _check_image_exec_span(space, target, len(plan.payload))
    saved = space.read(target, len(plan.payload))
    _overwrite(space, target, plan.payload)
    if plan.restore_delay > 0:
        scheduler.schedule(
            scheduler.now + plan.restore_delay,
            lambda: _overwrite(space, target, saved),
            PRIORITY_ATTACK,
        )


def stomp(space: AddressSpace, scheduler: Scheduler, plan: StompPlan, at: int) -> None:
    """Overwrite executable image bytes at ``at``; optionally restore later."""
    if not plan.payload:
        raise ValueError("stomp payload must be non-empty")
    scheduler.schedule(at, lambda: stomp_now(space, scheduler, plan), PRIORITY_ATTACK)


def execute_now(
    space: AddressSpace,
    scheduler: Scheduler,
    vector: ExecVector,
    start: int,
    cloak: CloakOptions = CloakOptions(),
) -> None:
    """Run a payload at the current tick (see :func:`execute`)."""
    if space.region_at(start) is None:
        raise UnmappedError(f"execution start 0x{start:x} is uncommitted")
    if vector is ExecVector.NEW_THREAD:
        scheduler.emit_thread_create(
            ThreadCreateEvent(
                actual_start=start,
                reported_start=(
                    cloak.fake_start_address
                    if cloak.fake_start_address is not None
                    else start
                ),
                vector=vector,
                time=scheduler.now,
                cloak_thread=cloak.cloak_thread,
                skip_thread_attach=cloak.skip_thread_attach,
            )
        )


def execute(
    space: AddressSpace,
    scheduler: Scheduler,
    vector: ExecVector,
    start: int,
    cloak: CloakOptions = CloakOptions(),
    at: int = 0,
) -> None:
    """Run a payload at ``start`` via the given vector at tick ``at``.

    The simulator tracks memory state, not instruction flow: NEW_THREAD emits
    a creation event to all observers, the threadless vectors emit nothing.
    """
    scheduler.schedule(
        at, lambda: execute_now(space, scheduler, vector, start, cloak), PRIORITY_ATTACK
    )


def unlink(space: AddressSpace, scheduler: Scheduler, module_base: int, at: int) -> None:
    """Remove the module record at ``at``; regions and bytes are untouched."""
    scheduler.schedule(at, lambda: space.unlink_module(module_base), PRIORITY_ATTACK)


def erase_headers(space: AddressSpace, scheduler: Scheduler, base: int, at: int) -> None:
    """Zero the first 0x1000 bytes at ``base`` at tick ``at``."""
    scheduler.schedule(at, lambda: space.write(base, bytes(0x1000)), PRIORITY_ATTACK)
