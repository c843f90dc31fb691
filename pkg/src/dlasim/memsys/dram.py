"""Banked DRAM with an FR-FCFS scheduler.

Addresses interleave across banks at 64 B granularity so sequential
streams spread over all banks. Each serviced request charges tCL+tBURST
when it hits the open row, plus tRCD on a closed bank and tRP+tRCD on a
row conflict. Data beats share one bus: transfers are serialized with a
small turnaround gap, which is what makes many small requests cost more
than few large ones at equal byte counts.
"""

from __future__ import annotations

import heapq
from dataclasses import dataclass, field
from typing import Optional

from ..kernel import INFINITY, Model, Token
from .transaction import READ, MemTransaction

DATA_BEAT_BYTES = 64


@dataclass
class DramConfig:
    ranks: int = 4
    banks_per_rank: int = 8
    row_bytes: int = 2048
    trcd: int = 11
    trp: int = 11
    tcl: int = 11
    tburst: int = 4
    queue_depth: int = 16
    data_gap: int = 2  # bus turnaround between transfers

    @property
    def num_banks(self) -> int:
        return self.ranks * self.banks_per_rank

    def validate(self) -> None:
        for name in ("trcd", "trp", "tcl", "tburst"):
            if getattr(self, name) <= 0:
                raise ValueError(f"DRAM timing {name} must be positive")
        if self.queue_depth < 1:
            raise ValueError("queue_depth must be >= 1")
        if self.ranks < 1 or self.banks_per_rank < 1:
            raise ValueError("bank geometry must be positive")
        if self.row_bytes < DATA_BEAT_BYTES:
            raise ValueError("row_bytes must cover at least one data beat")

    def map_addr(self, addr: int) -> tuple[int, int]:
        """(bank, row) for a byte address; bank bits sit just above the
        interleave grain."""
        chunk = addr // DATA_BEAT_BYTES
        bank = chunk % self.num_banks
        row = (chunk // self.num_banks) // (self.row_bytes // DATA_BEAT_BYTES)
        return bank, row

    def burst_cycles(self, size: int) -> int:
        return self.tburst * ((size + DATA_BEAT_BYTES - 1) // DATA_BEAT_BYTES)


@dataclass
class BankState:
    open_row: Optional[int] = None
    ready_at: int = 0
    row_hits: int = 0
    row_misses: int = 0


@dataclass
class QueuedRequest:
    txn: MemTransaction
    seq: int
    bank: int
    row: int
    arrival: int


def dram_enqueue(queue: list[QueuedRequest], cfg: DramConfig,
                 txn: MemTransaction, cycle: int, seq: int,
                 inflight: int = 0) -> bool:
    """Append to the scheduler queue; rejection is backpressure, upstream
    retries. Occupancy counts both waiting and in-service requests."""
    if len(queue) + inflight >= cfg.queue_depth:
        return False
    bank, row = cfg.map_addr(txn.addr)
    queue.append(QueuedRequest(txn, seq, bank, row, cycle))
    return True


def frfcfs_pick(queue: list[QueuedRequest], banks: list[BankState],
                cycle: int) -> Optional[int]:
    """Index of the request to service next, or None.

    Candidates are requests whose bank is ready and that are not preceded
    by an older request to the same address (same-address pairs stay in
    order). Row hits win; age breaks ties; otherwise oldest ready.
    """
    best_hit = None
    best_ready = None
    blocked_addrs = set()
    for idx, req in enumerate(queue):
        addr = req.txn.addr
        if addr in blocked_addrs:
            continue
        blocked_addrs.add(addr)
        bank = banks[req.bank]
        if bank.ready_at > cycle:
            continue
        if bank.open_row == req.row:
            if best_hit is None or queue[best_hit].seq > req.seq:
                best_hit = idx
        elif best_ready is None or queue[best_ready].seq > req.seq:
            best_ready = idx
    return best_hit if best_hit is not None else best_ready


class DramModel(Model):
    """Kernel model: one request token in, one completion token out per
    target cycle."""

    def __init__(self, name: str, cfg: DramConfig):
        super().__init__(name)
        cfg.validate()
        self.cfg = cfg
        self.now = 0
        self.banks = [BankState() for _ in range(cfg.num_banks)]
        self.queue: list[QueuedRequest] = []
        self.inflight: list[tuple[int, int, MemTransaction]] = []  # heap
        self.data_free = 0
        self.seq = 0
        self.reads = 0
        self.writes = 0
        self.bytes_moved = 0
        self.rejected = 0

    # -- stats -----------------------------------------------------------
    @property
    def row_hits(self) -> int:
        return sum(b.row_hits for b in self.banks)

    @property
    def row_misses(self) -> int:
        return sum(b.row_misses for b in self.banks)

    def occupancy(self) -> int:
        return len(self.queue) + len(self.inflight)

    # -- model contract ---------------------------------------------------
    def enqueue(self, txn: MemTransaction, cycle: int) -> bool:
        ok = dram_enqueue(self.queue, self.cfg, txn, cycle, self.seq,
                          inflight=len(self.inflight))
        if ok:
            self.seq += 1
        else:
            self.rejected += 1
        return ok

    def _service(self, idx: int) -> None:
        cfg = self.cfg
        req = self.queue.pop(idx)
        bank = self.banks[req.bank]
        if bank.open_row == req.row:
            cmd_lat = cfg.tcl
            bank.row_hits += 1
        elif bank.open_row is None:
            cmd_lat = cfg.trcd + cfg.tcl
            bank.row_misses += 1
        else:
            cmd_lat = cfg.trp + cfg.trcd + cfg.tcl
            bank.row_misses += 1
        burst = cfg.burst_cycles(req.txn.size)
        done = self.now + cmd_lat + burst
        bank.open_row = req.row
        bank.ready_at = self.now + cmd_lat - cfg.tcl + cfg.tburst
        self.data_free = done + cfg.data_gap
        if req.txn.kind == READ:
            self.reads += 1
        else:
            self.writes += 1
        self.bytes_moved += req.txn.size
        req.txn.complete_cycle = done
        heapq.heappush(self.inflight, (done, req.seq, req.txn))

    def on_step(self, tokens: list[Token]) -> list[Token]:
        txn = tokens[0].payload
        if txn is not None:
            if not self.enqueue(txn, self.now):
                raise RuntimeError(
                    f"{self.name}: queue overrun; upstream credit is broken")
        # Picking is gated on the data bus being free by the earliest
        # moment this request could use it, so a completion always lands
        # exactly cmd latency + burst after its issue slot.
        if self.queue and self.data_free <= self.now + self.cfg.tcl:
            idx = frfcfs_pick(self.queue, self.banks, self.now)
            if idx is not None:
                self._service(idx)
        out = None
        if self.inflight and self.inflight[0][0] <= self.now:
            out = heapq.heappop(self.inflight)[2]
        self.now += 1
        return [Token(out)]

    def idle_until(self) -> float:
        if self.queue:
            return 0
        if self.inflight:
            return self.inflight[0][0]
        return INFINITY

    def skip(self, cycles: int) -> None:
        self.now += cycles
