"""Set-associative cache model with runtime-reconfigurable geometry.

One implementation serves both the shared LLC and the private L1s; only
the geometry and the write-miss policy differ. Replacement is LRU.
Writes that hit mark the line dirty (write-back). Write misses allocate
only when `write_allocate` is set: the LLC treats accelerator and
writeback streams as no-allocate so streaming stores cannot flush it,
while the L1s allocate on store misses as in-order cores do.
"""

from __future__ import annotations

from collections import OrderedDict
from dataclasses import dataclass
from typing import Optional


class InvalidGeometry(Exception):
    pass


def _is_pow2(n: int) -> bool:
    return n > 0 and (n & (n - 1)) == 0


@dataclass
class CacheConfig:
    num_sets: int
    ways: int
    block_bytes: int
    hit_latency: int = 20
    enabled: bool = True
    write_allocate: bool = False

    @property
    def capacity(self) -> int:
        return self.num_sets * self.ways * self.block_bytes

    def validate(self) -> None:
        if not _is_pow2(self.num_sets):
            raise InvalidGeometry(f"num_sets must be a power of two, got {self.num_sets}")
        if self.ways < 1:
            raise InvalidGeometry(f"ways must be positive, got {self.ways}")
        if self.block_bytes not in (32, 64, 128):
            raise InvalidGeometry(
                f"block_bytes must be one of 32/64/128, got {self.block_bytes}"
            )
        if self.hit_latency < 1:
            raise InvalidGeometry("hit_latency must be positive")

    @staticmethod
    def from_capacity(capacity: int, ways: int, block_bytes: int, **kw) -> "CacheConfig":
        if capacity % (ways * block_bytes) != 0:
            raise InvalidGeometry(
                f"capacity {capacity} not divisible by ways*block ({ways}x{block_bytes})"
            )
        return CacheConfig(capacity // (ways * block_bytes), ways, block_bytes, **kw)


class CacheState:
    """Tag/LRU/dirty arrays plus counters. Each set is an OrderedDict from
    tag to dirty flag, least recently used first."""

    __slots__ = ("sets", "accesses", "hits", "misses", "writebacks")

    def __init__(self, num_sets: int):
        self.sets = [OrderedDict() for _ in range(num_sets)]
        self.accesses = 0
        self.hits = 0
        self.misses = 0
        self.writebacks = 0

    def resident(self, cfg: CacheConfig, addr: int) -> bool:
        block = addr // cfg.block_bytes
        return (block // cfg.num_sets) in self.sets[block % cfg.num_sets]


@dataclass
class AccessResult:
    hit: bool
    latency: int
    fill: Optional[tuple[int, int]] = None       # (block addr, block bytes)
    writeback: Optional[tuple[int, int]] = None  # (block addr, block bytes)


def reconfigure(cfg: CacheConfig) -> CacheState:
    """Validate the geometry and return a fresh all-invalid state. This is
    the only rebuild a new geometry ever needs."""
    cfg.validate()
    return CacheState(cfg.num_sets)


def access(state: CacheState, cfg: CacheConfig, addr: int, is_write: bool) -> AccessResult:
    """One block-aligned access (callers split larger transactions).

    Hits refresh LRU order and return hit_latency. Read misses (and write
    misses under write_allocate) evict the LRU victim, install the block,
    and report the fill plus a writeback when the victim was dirty. Write
    misses without allocation leave the cache untouched; the caller
    forwards the write downstream.
    """
    block = addr // cfg.block_bytes
    lines = state.sets[block % cfg.num_sets]
    tag = block // cfg.num_sets
    state.accesses += 1

    if tag in lines:
        state.hits += 1
        lines.move_to_end(tag)
        if is_write:
            lines[tag] = True
        return AccessResult(True, cfg.hit_latency)

    state.misses += 1
    if is_write and not cfg.write_allocate:
        return AccessResult(False, cfg.hit_latency)

    writeback = None
    if len(lines) >= cfg.ways:
        victim_tag, victim_dirty = lines.popitem(last=False)
        if victim_dirty:
            state.writebacks += 1
            victim_block = victim_tag * cfg.num_sets + (block % cfg.num_sets)
            writeback = (victim_block * cfg.block_bytes, cfg.block_bytes)
    lines[tag] = is_write
    fill = (block * cfg.block_bytes, cfg.block_bytes)
    return AccessResult(False, cfg.hit_latency, fill=fill, writeback=writeback)
