"""Timing and traffic model of the DNN accelerator.

Each accelerator-placed layer is tiled into chunks whose weights and input
activations fit the on-chip convolutional buffer together. Tiles split
along output rows and output-channel groups; weights stay resident across
the row tiles of one channel group and are fetched only when the group
changes. Per tile the engine fetches weights and inputs, charges the MAC
array for the tile's multiply-accumulates, and streams the outputs back.
Fetch of the next tile overlaps compute of the current one (double
buffering).

Traffic granularity: weight blobs are contiguous and packed greedily into
bursts up to max_burst; feature data moves in 32-byte atoms, the engine's
native access grain, so consecutive atoms walk sequential addresses and
larger cache blocks can serve the follow-on atoms of a stream.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

from .kernel import INFINITY, Model, Token
from .memsys.transaction import READ, WRITE, make_txn
from .workload import CONV, POOL, LayerDescriptor, UnsupportedLayer, conv_macs

FEATURE_ATOM = 32

# Region bases keep tensors apart in the flat physical address space;
# strides are sized well above the largest yolov3-scale tensor.
ACT_REGION_BASE = 0x1000_0000
ACT_REGION_STRIDE = 0x0080_0000
WEIGHT_REGION_BASE = 0x8000_0000
WEIGHT_REGION_STRIDE = 0x0100_0000


class LayerTooLarge(Exception):
    pass


@dataclass
class AccelConfig:
    num_macs: int = 2048
    buffer_bytes: int = 512 * 1024
    min_burst: int = 32
    max_burst: int = 256
    compute_efficiency: float = 0.5
    max_inflight: int = 16

    def validate(self) -> None:
        if self.min_burst > self.max_burst:
            raise ValueError("min_burst must not exceed max_burst")
        if self.min_burst % 32 or self.max_burst % 32:
            raise ValueError("burst sizes must be multiples of 32")
        if not 0 < self.compute_efficiency <= 1:
            raise ValueError("compute_efficiency must be in (0, 1]")
        if self.num_macs < 1 or self.buffer_bytes < 1 or self.max_inflight < 1:
            raise ValueError("num_macs, buffer_bytes, max_inflight must be positive")


@dataclass
class Run:
    """One contiguous byte range of a tensor region plus the grain its
    bursts are cut at (a whole-run grain means greedy packing)."""
    addr: int
    size: int
    grain: int  # burst cut size; 0 = pack greedily to max_burst


@dataclass
class Tile:
    weight_bytes: int
    input_bytes: int
    output_bytes: int
    mac_count: int
    fetch_runs: list[Run] = field(default_factory=list)
    write_runs: list[Run] = field(default_factory=list)


@dataclass
class TileSchedule:
    layer_index: int
    tiles: list[Tile]

    @property
    def mac_count(self) -> int:
        return sum(t.mac_count for t in self.tiles)


def layer_macs(layer: LayerDescriptor) -> int:
    """MAC count of an accelerator-placed layer; pooling and aliasing
    layers move data but multiply nothing."""
    if layer.placement != "accel":
        raise UnsupportedLayer(
            f"layer {layer.index} ({layer.kind}) runs on the processor")
    if layer.kind == CONV:
        return conv_macs(layer)
    return 0


def compute_cycles(tile: Tile, cfg: AccelConfig) -> int:
    """MAC-array cycles for one tile. Data-movement tiles (pooling and
    friends) are charged one cycle per 32 output bytes."""
    if tile.mac_count:
        per_cycle = cfg.num_macs * cfg.compute_efficiency
        return math.ceil(tile.mac_count / per_cycle)
    return math.ceil(tile.output_bytes / 32)


def _act_base(layer_index: int) -> int:
    return ACT_REGION_BASE + (layer_index + 1) * ACT_REGION_STRIDE


def tile_layer(layer: LayerDescriptor, cfg: AccelConfig) -> TileSchedule:
    """Decompose one accelerator-placed layer into buffer-resident tiles.

    Output rows and output-channel groups are the split axes. The channel
    group is sized so its weights take at most half the buffer, then rows
    are chunked so weights plus the input slab fit the rest.
    """
    if layer.placement != "accel":
        raise UnsupportedLayer(
            f"layer {layer.index} ({layer.kind}) runs on the processor")
    cfg.validate()
    sched = TileSchedule(layer.index, [])
    if layer.kind not in (CONV, POOL):
        return sched  # aliasing layers generate no traffic

    h_in, w_in, c_in = layer.in_dims
    h_out, w_out, c_out = layer.out_dims
    k, s = max(layer.kernel, 1), max(layer.stride, 1)
    in_base = _act_base(layer.index - 1) if layer.index else ACT_REGION_BASE
    out_base = _act_base(layer.index)
    w_base = WEIGHT_REGION_BASE + layer.index * WEIGHT_REGION_STRIDE

    if layer.kind == CONV:
        w_per_cout = k * k * c_in  # one byte per weight
        group = min(c_out, max(1, (cfg.buffer_bytes // 2) // w_per_cout))
    else:
        w_per_cout = 0
        group = c_out

    def in_rows(r0: int, rows: int) -> tuple[int, int]:
        lo = min(r0 * s, h_in)
        hi = min((r0 + rows - 1) * s + k, h_in) if layer.kind in (CONV, POOL) else h_in
        return lo, max(hi, lo)

    in_row_bytes = w_in * c_in
    budget = cfg.buffer_bytes - group * w_per_cout
    if budget < in_row_bytes * min(k, h_in):
        # retry with a single output channel before giving up
        group = 1
        budget = cfg.buffer_bytes - w_per_cout
        if budget < in_row_bytes * min(k, h_in):
            raise LayerTooLarge(
                f"layer {layer.index}: one output row of one channel group "
                f"needs more than the {cfg.buffer_bytes} B buffer")
    rows_fit = max(1, (budget // in_row_bytes - (k - s)) // s)
    rows_fit = min(rows_fit, h_out)

    groups = [min(group, c_out - g0) for g0 in range(0, c_out, group)]
    g0 = 0
    for g in groups:
        weights_resident = False
        w_off = w_base + g0 * w_per_cout
        for r0 in range(0, h_out, rows_fit):
            rows = min(rows_fit, h_out - r0)
            lo, hi = in_rows(r0, rows)
            input_bytes = (hi - lo) * in_row_bytes
            output_bytes = rows * w_out * g
            macs = k * k * c_in * g * rows * w_out if layer.kind == CONV else 0
            weight_bytes = 0 if weights_resident else g * w_per_cout
            weights_resident = True
            tile = Tile(weight_bytes, input_bytes, output_bytes, macs)
            if weight_bytes:
                tile.fetch_runs.append(Run(w_off, weight_bytes, 0))
            if input_bytes:
                tile.fetch_runs.append(Run(in_base + lo * in_row_bytes,
                                           input_bytes, FEATURE_ATOM))
            if output_bytes:
                out_off = out_base + (g0 * h_out + r0 * g) * w_out
                tile.write_runs.append(Run(out_off, output_bytes, FEATURE_ATOM))
            sched.tiles.append(tile)
        g0 += g
    return sched


def _round32(n: int) -> int:
    return (n + 31) & ~31


def burst_sizes(run: Run, cfg: AccelConfig) -> list[int]:
    """Cut one run into legal burst sizes: grained runs move atom by atom,
    contiguous runs pack greedily up to max_burst; tails round up to the
    32 B minimum."""
    total = _round32(run.size)
    step = run.grain if run.grain else cfg.max_burst
    sizes = []
    while total > 0:
        take = min(step, total)
        sizes.append(max(_round32(take), cfg.min_burst))
        total -= take
    return sizes


def gen_traffic(sched: TileSchedule, cfg: AccelConfig) -> list[tuple[str, int, int]]:
    """Flatten a schedule into (kind, addr, size) burst templates in issue
    order: per tile weights, then inputs, then outputs."""
    out = []
    for tile in sched.tiles:
        for run in tile.fetch_runs:
            addr = run.addr
            for size in burst_sizes(run, cfg):
                out.append((READ, addr, size))
                addr += size
        for run in tile.write_runs:
            addr = run.addr
            for size in burst_sizes(run, cfg):
                out.append((WRITE, addr, size))
                addr += size
    return out


class _BurstCursor:
    """Lazy walk over the bursts of a list of runs."""

    __slots__ = ("runs", "cfg", "run_idx", "offset", "left")

    def __init__(self, runs: list[Run], cfg: AccelConfig):
        self.runs = runs
        self.cfg = cfg
        self.run_idx = 0
        self.offset = 0
        self.left = 0
        if runs:
            self.left = _round32(runs[0].size)

    def done(self) -> bool:
        return self.run_idx >= len(self.runs)

    def next_burst(self) -> tuple[int, int]:
        run = self.runs[self.run_idx]
        step = run.grain if run.grain else self.cfg.max_burst
        take = min(step, self.left)
        size = max(_round32(take), self.cfg.min_burst)
        addr = run.addr + self.offset
        self.offset += take
        self.left -= take
        if self.left <= 0:
            self.run_idx += 1
            self.offset = 0
            if self.run_idx < len(self.runs):
                self.left = _round32(self.runs[self.run_idx].size)
        return addr, size


@dataclass
class LayerRecord:
    layer_index: int
    start_cycle: int
    end_cycle: int
    compute_cycles: int

    @property
    def total_cycles(self) -> int:
        return self.end_cycle - self.start_cycle

    @property
    def memory_cycles(self) -> int:
        return max(0, self.total_cycles - self.compute_cycles)


class AccelModel(Model):
    """Kernel model of the engine: one request token out and one response
    token in per target cycle.

    Per layer it walks the tile list with a two-stage pipeline: the DMA
    cursor fetches tile n+1 while the MAC array grinds tile n; outputs
    drain through a write cursor that overlaps the next tile's work.
    Layers execute strictly in order and a layer ends when its last
    output write is acknowledged.
    """

    def __init__(self, name: str, cfg: AccelConfig,
                 schedules: list[TileSchedule]):
        super().__init__(name)
        cfg.validate()
        self.cfg = cfg
        self.schedules = [s for s in schedules if s.tiles]
        self.now = 0
        self.done = False
        self.layer_records: list[LayerRecord] = []
        self.reads_issued = 0
        self.writes_issued = 0
        self.bytes_read = 0
        self.bytes_written = 0
        # per-layer progress
        self._layer_idx = 0
        self._layer_start = 0
        self._layer_compute = 0
        self._fetch_tile = 0          # next tile index to fetch
        self._fetch_cursor: _BurstCursor | None = None
        self._fetch_outstanding = 0
        self._fetched: list[int] = []  # tile indices fully fetched, in order
        self._compute_tile: int | None = None
        self._compute_left = 0
        self._computed = 0            # tiles whose compute has finished
        self._write_cursor: _BurstCursor | None = None
        self._write_queue: list[int] = []  # tile indices awaiting write issue
        self._write_outstanding = 0
        self._inflight = 0
        self._rr_write = False
        if self.schedules:
            self._begin_layer()
        else:
            self.done = True

    # ------------------------------------------------------------------
    def _begin_layer(self) -> None:
        self._layer_start = self.now
        self._layer_compute = 0
        self._fetch_tile = 0
        self._fetch_cursor = None
        self._fetch_outstanding = 0
        self._fetched = []
        self._compute_tile = None
        self._compute_left = 0
        self._computed = 0
        self._write_cursor = None
        self._write_queue = []
        self._write_outstanding = 0

    def _tiles(self) -> list[Tile]:
        return self.schedules[self._layer_idx].tiles

    def _fetch_ahead_allowed(self) -> bool:
        # Double buffering: at most one fetched-but-unconsumed tile.
        return len(self._fetched) + (self._fetch_cursor is not None) < 2

    def _advance_pipeline(self) -> None:
        tiles = self._tiles()
        # open the next fetch
        if (self._fetch_cursor is None and self._fetch_tile < len(tiles)
                and self._fetch_ahead_allowed()):
            runs = tiles[self._fetch_tile].fetch_runs
            self._fetch_cursor = _BurstCursor(runs, self.cfg)
        # fetch finished (all bursts issued and acknowledged)
        if (self._fetch_cursor is not None and self._fetch_cursor.done()
                and self._fetch_outstanding == 0):
            self._fetched.append(self._fetch_tile)
            self._fetch_tile += 1
            self._fetch_cursor = None
        # start compute on the oldest fetched tile
        if self._compute_tile is None and self._fetched:
            self._compute_tile = self._fetched.pop(0)
            self._compute_left = compute_cycles(tiles[self._compute_tile], self.cfg)
            self._layer_compute += self._compute_left

    def _finish_compute_if_due(self) -> None:
        if self._compute_tile is not None:
            self._compute_left -= 1
            if self._compute_left == 0:
                if self._tiles()[self._compute_tile].write_runs:
                    self._write_queue.append(self._compute_tile)
                self._computed += 1
                self._compute_tile = None

    def _next_request(self):
        """Pick at most one burst to issue this cycle, alternating between
        the fetch and write streams when both are ready."""
        if self._inflight >= self.cfg.max_inflight:
            return None
        if self._write_cursor is None and self._write_queue:
            tile = self._write_queue.pop(0)
            self._write_cursor = _BurstCursor(self._tiles()[tile].write_runs, self.cfg)
        fetch_ready = self._fetch_cursor is not None and not self._fetch_cursor.done()
        write_ready = self._write_cursor is not None and not self._write_cursor.done()
        if fetch_ready and write_ready:
            use_write = self._rr_write
            self._rr_write = not self._rr_write
        elif fetch_ready or write_ready:
            use_write = write_ready
        else:
            return None
        if use_write:
            addr, size = self._write_cursor.next_burst()
            if self._write_cursor.done():
                self._write_cursor = None
            txn = make_txn(WRITE, addr, size, self.name, self.now)
            self._write_outstanding += 1
            self.writes_issued += 1
            self.bytes_written += size
        else:
            addr, size = self._fetch_cursor.next_burst()
            txn = make_txn(READ, addr, size, self.name, self.now)
            self._fetch_outstanding += 1
            self.reads_issued += 1
            self.bytes_read += size
        self._inflight += 1
        return txn

    def _maybe_finish_layer(self) -> None:
        tiles = self._tiles()
        if (self._computed == len(tiles) and not self._write_queue
                and self._write_cursor is None and self._write_outstanding == 0
                and self._fetch_outstanding == 0):
            self.layer_records.append(LayerRecord(
                self.schedules[self._layer_idx].layer_index,
                self._layer_start, self.now + 1, self._layer_compute))
            self._layer_idx += 1
            if self._layer_idx == len(self.schedules):
                self.done = True
            else:
                self.now += 1  #帧-internal handoff consumes the boundary cycle
                self._begin_layer()
                self.now -= 1

    def on_step(self, tokens: list[Token]) -> list[Token]:
        resp = tokens[0].payload
        if resp is not None:
            self._inflight -= 1
            if resp.kind == READ:
                self._fetch_outstanding -= 1
            else:
                self._write_outstanding -= 1
        txn = None
        if not self.done:
            self._advance_pipeline()
            self._finish_compute_if_due()
            txn = self._next_request()
            self._maybe_finish_layer()
        self.now += 1
        return [Token(txn)]

    def idle_until(self) -> float:
        if self.done:
            return INFINITY
        can_issue = self._inflight < self.cfg.max_inflight and (
            (self._fetch_cursor is not None and not self._fetch_cursor.done())
            or self._write_cursor is not None or self._write_queue)
        if can_issue:
            return 0
        if self._fetch_outstanding or self._write_outstanding:
            return INFINITY  # woken by the response token
        if self._compute_tile is not None:
            return self.now + self._compute_left
        return 0

    def skip(self, cycles: int) -> None:
        self.now += cycles
        if self._compute_tile is not None:
            self._compute_left -= cycles

    # ------------------------------------------------------------------
    @property
    def busy_cycles(self) -> int:
        if not self.layer_records:
            return 0
        return self.layer_records[-1].end_cycle - self.layer_records[0].start_cycle
