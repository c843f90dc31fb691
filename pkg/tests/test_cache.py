import random

import pytest

from dlasim.memsys.cache import (
    AccessResult,
    CacheConfig,
    CacheState,
    InvalidGeometry,
    access,
    reconfigure,
)


class OracleCache:
    """Independent trace-driven cache: linear tag scan, explicit access
    timestamps for LRU. Deliberately shares no code with the model."""

    def __init__(self, num_sets, ways, block_bytes, write_allocate):
        self.num_sets = num_sets
        self.ways = ways
        self.block_bytes = block_bytes
        self.write_allocate = write_allocate
        self.entries = [[] for _ in range(num_sets)]  # [tag, stamp, dirty]
        self.clock = 0
        self.hits = 0
        self.misses = 0
        self.writebacks = 0

    def touch(self, addr, is_write):
        self.clock += 1
        block = addr // self.block_bytes
        entries = self.entries[block % self.num_sets]
        tag = block // self.num_sets
        for e in entries:
            if e[0] == tag:
                self.hits += 1
                e[1] = self.clock
                if is_write:
                    e[2] = True
                return True
        self.misses += 1
        if is_write and not self.write_allocate:
            return False
        if len(entries) == self.ways:
            oldest = min(range(len(entries)), key=lambda i: entries[i][1])
            if entries[oldest][2]:
                self.writebacks += 1
            entries.pop(oldest)
        entries.append([tag, self.clock, is_write])
        return False


def test_repeat_access_hits():
    cfg = CacheConfig(num_sets=16, ways=2, block_bytes=64)
    st = reconfigure(cfg)
    assert access(st, cfg, 0x1000, False).hit is False
    assert access(st, cfg, 0x1000, False).hit is True
    assert (st.hits, st.misses, st.accesses) == (1, 1, 2)


def test_conflict_eviction_two_set_cache():
    # 2 sets, 1 way, 64 B blocks: 0x0 and 0x1000 both map to set 0.
    cfg = CacheConfig(num_sets=2, ways=1, block_bytes=64)
    st = reconfigure(cfg)
    results = [access(st, cfg, a, False).hit for a in (0x0, 0x1000, 0x0)]
    assert results == [False, False, False]


def test_baseline_llc_geometry_accepted():
    # 2 MiB, 8-way, 64 B blocks -> 4096 sets.
    cfg = CacheConfig.from_capacity(2 * 1024 * 1024, ways=8, block_bytes=64)
    assert cfg.num_sets == 4096
    cfg.validate()
    assert cfg.capacity == 2 * 1024 * 1024


def test_reconfigure_best_speedup_geometry():
    # 4096 KiB with 128 B blocks is a legal runtime geometry.
    cfg = CacheConfig.from_capacity(4096 * 1024, ways=8, block_bytes=128)
    st = reconfigure(cfg)
    assert access(st, cfg, 0x0, False).hit is False  # cold


def test_reconfigure_rejects_bad_geometry():
    with pytest.raises(InvalidGeometry):
        reconfigure(CacheConfig(num_sets=3, ways=4, block_bytes=64))
    with pytest.raises(InvalidGeometry):
        reconfigure(CacheConfig(num_sets=4, ways=4, block_bytes=48))


def test_dirty_victim_produces_block_sized_writeback():
    cfg = CacheConfig(num_sets=1, ways=1, block_bytes=64, write_allocate=True)
    st = reconfigure(cfg)
    access(st, cfg, 0x0, True)              # allocate dirty
    res = access(st, cfg, 0x1000, False)    # evicts dirty line
    assert res.writeback == (0x0, 64)
    assert res.fill == (0x1000, 64)
    assert st.writebacks == 1


def test_write_miss_without_allocation_leaves_state_alone():
    cfg = CacheConfig(num_sets=4, ways=2, block_bytes=64, write_allocate=False)
    st = reconfigure(cfg)
    res = access(st, cfg, 0x40, True)
    assert res.hit is False and res.fill is None and res.writeback is None
    assert access(st, cfg, 0x40, False).hit is False  # still not resident


def test_write_hit_marks_dirty_then_writeback_on_eviction():
    cfg = CacheConfig(num_sets=1, ways=1, block_bytes=64, write_allocate=False)
    st = reconfigure(cfg)
    access(st, cfg, 0x0, False)   # read allocate, clean
    access(st, cfg, 0x0, True)    # write hit, now dirty
    res = access(st, cfg, 0x1000, False)
    assert res.writeback == (0x0, 64)


@pytest.mark.parametrize("write_allocate", [False, True])
def test_counters_match_oracle_on_random_traces(write_allocate):
    rng = random.Random(1234 + write_allocate)
    for _ in range(20):
        sets = rng.choice([2, 8, 64, 512])
        ways = rng.choice([1, 2, 4, 8])
        block = rng.choice([32, 64, 128])
        cfg = CacheConfig(sets, ways, block, write_allocate=write_allocate)
        st = reconfigure(cfg)
        oracle = OracleCache(sets, ways, block, write_allocate)
        # Footprint around 4x capacity so hits and misses both occur.
        span = max(4 * cfg.capacity, 4096)
        for _ in range(3000):
            addr = (rng.randrange(span) // block) * block
            is_write = rng.random() < 0.3
            got = access(st, cfg, addr, is_write)
            want = oracle.touch(addr, is_write)
            assert got.hit == want
        assert (st.hits, st.misses, st.writebacks) == (
            oracle.hits, oracle.misses, oracle.writebacks)
        assert st.accesses == st.hits + st.misses


def test_lru_inclusion_on_fully_associative_caches():
    # Fixed trace, growing fully-associative capacity: misses never increase.
    rng = random.Random(7)
    trace = [rng.randrange(0, 1 << 20) & ~63 for _ in range(20000)]
    prev_misses = None
    for cap_kib in (8, 16, 64, 256, 1024):
        ways = cap_kib * 1024 // 64
        cfg = CacheConfig(num_sets=1, ways=ways, block_bytes=64)
        st = reconfigure(cfg)
        for addr in trace:
            access(st, cfg, addr, False)
        if prev_misses is not None:
            assert st.misses <= prev_misses
        prev_misses = st.misses
