"""Shared last-level cache as a kernel model.

The front end splits each incoming transaction into block-sized
sub-accesses and looks up one per cycle. Hits answer after hit_latency.
Read misses allocate and fetch the block from DRAM; a sub-access landing
on a block whose fill is still in flight waits for that fill instead of
fetching again. Write misses are forwarded downstream unallocated, so
streaming stores pass through without disturbing resident data. A miss
whose set already has a fill outstanding stalls the lookup pipeline until
that fill returns; misses to other sets are unaffected.

DRAM is flow-controlled by credits sized to its scheduler queue, so
backpressure propagates here (and from here to the bus) without any
rejection traffic.
"""

from __future__ import annotations

import heapq
from collections import deque

from ..kernel import INFINITY, Model, Token
from .cache import CacheConfig, CacheState, access, reconfigure
from .transaction import READ, WRITE, MemTransaction, make_txn


class _Tracker:
    """Completion bookkeeping for one master transaction."""

    __slots__ = ("txn", "remaining", "ready")

    def __init__(self, txn: MemTransaction, remaining: int):
        self.txn = txn
        self.remaining = remaining
        self.ready = 0


class LlcModel(Model):
    """Inputs: [requests from bus, responses from DRAM].
    Outputs: [responses to bus, requests to DRAM]."""

    def __init__(self, name: str, cfg: CacheConfig, dram_credits: int):
        super().__init__(name)
        self.cfg = cfg
        self.state: CacheState = reconfigure(cfg)
        self.dram_credits = dram_credits
        self.now = 0
        self.pending_in: deque[MemTransaction] = deque()
        self.cur: tuple[_Tracker, list[int], int] | None = None
        self.set_pending: dict[int, int] = {}
        self.block_waiters: dict[int, list[_Tracker]] = {}
        self.dram_out: deque[MemTransaction] = deque()
        self.dram_inflight = 0
        self.fill_meta: dict[int, int] = {}      # fill txn id -> block addr
        self.fwd_parent: dict[int, _Tracker] = {}  # forwarded write id -> tracker
        self.resp_heap: list[tuple[int, int, MemTransaction]] = []
        self.fills = 0
        self.wb_issued = 0
        self.wr_forwarded = 0
        self._seq = 0

    # ------------------------------------------------------------------
    def _blocks_of(self, txn: MemTransaction) -> list[int]:
        bb = self.cfg.block_bytes
        first = txn.addr // bb
        last = (txn.addr + txn.size - 1) // bb
        return [b * bb for b in range(first, last + 1)]

    def _finish_sub(self, tracker: _Tracker, ready: int) -> None:
        tracker.ready = max(tracker.ready, ready)
        tracker.remaining -= 1
        if tracker.remaining == 0:
            self._seq += 1
            heapq.heappush(self.resp_heap,
                           (max(tracker.ready, self.now + 1), self._seq, tracker.txn))

    def _push_dram(self, txn: MemTransaction) -> None:
        self.dram_out.append(txn)

    def _handle_dram_response(self, txn: MemTransaction) -> None:
        self.dram_inflight -= 1
        if txn.purpose == "fill":
            block = self.fill_meta.pop(txn.id)
            set_idx = (block // self.cfg.block_bytes) % self.cfg.num_sets
            left = self.set_pending[set_idx] - 1
            if left:
                self.set_pending[set_idx] = left
            else:
                del self.set_pending[set_idx]
            for tracker in self.block_waiters.pop(block, ()):
                self._finish_sub(tracker, self.now)
            self.fills += 1
        elif txn.purpose == "wr_fwd":
            tracker = self.fwd_parent.pop(txn.id)
            self._finish_sub(tracker, self.now)
        # "wb" completions need no action beyond the credit return

    def _lookup(self) -> None:
        """At most one sub-access per cycle through the tag pipeline."""
        if self.cur is None:
            if not self.pending_in:
                return
            txn = self.pending_in.popleft()
            blocks = self._blocks_of(txn)
            self.cur = (_Tracker(txn, len(blocks)), blocks, 0)
        tracker, blocks, idx = self.cur
        txn = tracker.txn
        block = blocks[idx]
        bb = self.cfg.block_bytes
        set_idx = (block // bb) % self.cfg.num_sets
        is_write = txn.kind == WRITE

        if not self.state.resident(self.cfg, block):
            if not is_write and set_idx in self.set_pending:
                return  # fill conflict in this set: stall the pipeline
        res = access(self.state, self.cfg, block, is_write)
        if res.hit:
            if block in self.block_waiters:
                self.block_waiters[block].append(tracker)  # hit under fill
            else:
                self._finish_sub(tracker, self.now + self.cfg.hit_latency)
        elif is_write:
            # No write allocation: slice the store through to DRAM.
            lo = max(txn.addr, block)
            hi = min(txn.addr + txn.size, block + bb)
            fwd = make_txn(WRITE, lo, hi - lo, "llc", self.now,
                           purpose="wr_fwd", parent=txn.id)
            self.fwd_parent[fwd.id] = tracker
            self._push_dram(fwd)
            self.wr_forwarded += 1
        else:
            fill = make_txn(READ, res.fill[0], res.fill[1], "llc", self.now,
                            purpose="fill", parent=txn.id)
            self.fill_meta[fill.id] = block
            self.set_pending[set_idx] = self.set_pending.get(set_idx, 0) + 1
            self.block_waiters[block] = [tracker]
            self._push_dram(fill)
            if res.writeback is not None:
                wb = make_txn(WRITE, res.writeback[0], res.writeback[1],
                              "llc", self.now, purpose="wb")
                self._push_dram(wb)
                self.wb_issued += 1
        idx += 1
        self.cur = (tracker, blocks, idx) if idx < len(blocks) else None

    # ------------------------------------------------------------------
    def on_step(self, tokens: list[Token]) -> list[Token]:
        req, dresp = tokens[0].payload, tokens[1].payload
        if dresp is not None:
            self._handle_dram_response(dresp)
        if req is not None:
            self.pending_in.append(req)
        self._lookup()

        dram_req = None
        if self.dram_out and self.dram_inflight < self.dram_credits:
            dram_req = self.dram_out.popleft()
            self.dram_inflight += 1
        resp = None
        if self.resp_heap and self.resp_heap[0][0] <= self.now:
            resp = heapq.heappop(self.resp_heap)[2]
            resp.complete_cycle = self.now
        self.now += 1
        return [Token(resp), Token(dram_req)]

    def idle_until(self) -> float:
        if self.pending_in or self.cur is not None or self.dram_out:
            return 0
        wake = INFINITY
        if self.resp_heap:
            wake = self.resp_heap[0][0]
        return wake

    def skip(self, cycles: int) -> None:
        self.now += cycles
