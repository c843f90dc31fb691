"""Front bus: round-robin arbitration of all masters onto the memory side.

A granted request occupies the bus for one cycle per 32 bytes of carried
data (writes; reads are a single address beat) and is delivered to the
memory side after a fixed traversal latency. Responses ride a dedicated
return path with the same traversal latency and no occupancy modeling.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass

from ..kernel import INFINITY, Model, Token
from .transaction import WRITE, MemTransaction

GRANT_BYTES_PER_CYCLE = 32


@dataclass
class BusConfig:
    latency: int = 4            # traversal, each way
    grants_per_cycle: int = 1

    def validate(self) -> None:
        if self.latency < 1 or self.grants_per_cycle < 1:
            raise ValueError("bus latency and grant rate must be positive")


def arbitrate(pending: list, rr: int, max_grants: int) -> tuple[list[int], int]:
    """Round-robin grant: scan ports starting past the last grant, take up
    to max_grants ports with a pending head request. Returns the granted
    port indices in grant order and the advanced pointer."""
    n = len(pending)
    grants = []
    for off in range(n):
        port = (rr + 1 + off) % n
        if pending[port]:
            grants.append(port)
            rr = port
            if len(grants) == max_grants:
                break
    return grants, rr


class BusModel(Model):
    """Inputs: one request channel per master, then the memory-side
    response channel. Outputs: one response channel per master (same
    order), then the memory-side request channel."""

    def __init__(self, name: str, cfg: BusConfig, masters: list[str]):
        super().__init__(name)
        cfg.validate()
        self.cfg = cfg
        self.masters = list(masters)
        self.now = 0
        self.ports = [deque() for _ in masters]
        self.rr = len(masters) - 1
        self.busy_until = 0
        self.req_due = deque()   # (cycle, txn) in nondecreasing cycle order
        self.resp_due = [deque() for _ in masters]
        self.grants = [0 for _ in masters]
        self.busy_cycles = 0
        self._port_of = {m: i for i, m in enumerate(self.masters)}

    def occupancy_cycles(self, txn: MemTransaction) -> int:
        if txn.kind == WRITE:
            return max(1, -(-txn.size // GRANT_BYTES_PER_CYCLE))
        return 1

    def on_step(self, tokens: list[Token]) -> list[Token]:
        now = self.now
        n = len(self.masters)
        for port, tok in enumerate(tokens[:n]):
            if tok.payload is not None:
                self.ports[port].append(tok.payload)
        resp = tokens[n].payload
        if resp is not None:
            port = self._port_of[resp.source]
            self.resp_due[port].append((now + self.cfg.latency, resp))

        if now >= self.busy_until:
            granted, self.rr = arbitrate(self.ports, self.rr, self.cfg.grants_per_cycle)
            start = now
            for port in granted:
                txn = self.ports[port].popleft()
                occ = self.occupancy_cycles(txn)
                self.req_due.append((start + occ - 1 + self.cfg.latency, txn))
                self.grants[port] += 1
                start += occ
            if granted:
                self.busy_until = start
        if now < self.busy_until:
            self.busy_cycles += 1

        req_out = None
        if self.req_due and self.req_due[0][0] <= now:
            req_out = self.req_due.popleft()[1]
        outs = []
        for port in range(n):
            due = self.resp_due[port]
            if due and due[0][0] <= now:
                outs.append(Token(due.popleft()[1]))
            else:
                outs.append(Token())
        outs.append(Token(req_out))
        self.now += 1
        return outs

    def idle_until(self) -> float:
        if any(self.ports):
            return 0
        wake = INFINITY
        if self.req_due:
            wake = min(wake, self.req_due[0][0])
        for due in self.resp_due:
            if due:
                wake = min(wake, due[0][0])
        return wake

    def skip(self, cycles: int) -> None:
        self.now += cycles
