"""Memory transactions exchanged between masters, bus, LLC, and DRAM."""

from __future__ import annotations

from dataclasses import dataclass
from itertools import count

READ = "read"
WRITE = "write"

ACCEL_MIN_BURST = 32

_ids = count()


def next_txn_id() -> int:
    return next(_ids)


@dataclass(slots=True)
class MemTransaction:
    id: int
    kind: str              # READ or WRITE
    addr: int
    size: int
    source: str            # "core0".."coreN" or "accel" or "llc"
    issue_cycle: int = 0
    complete_cycle: int = -1
    purpose: str = ""      # "fill", "wb", "wr_fwd", or "" for demand traffic
    parent: int = -1       # id of the master transaction a slice belongs to

    def validate(self) -> None:
        if self.kind not in (READ, WRITE):
            raise ValueError(f"bad transaction kind {self.kind!r}")
        if self.size <= 0:
            raise ValueError("transaction size must be positive")
        if self.source == "accel":
            if self.size < ACCEL_MIN_BURST or self.size % ACCEL_MIN_BURST:
                raise ValueError(
                    f"accelerator burst of {self.size} B violates the 32 B "
                    "minimum-burst rule")
        if self.complete_cycle >= 0 and self.complete_cycle < self.issue_cycle:
            raise ValueError("transaction completed before issue")


def make_txn(kind: str, addr: int, size: int, source: str, cycle: int = 0,
             purpose: str = "", parent: int = -1) -> MemTransaction:
    return MemTransaction(next_txn_id(), kind, addr, size, source,
                          issue_cycle=cycle, purpose=purpose, parent=parent)
