"""Token-based deterministic simulation kernel.

Models are decoupled hardware blocks that advance exactly one target cycle
per step. A model may step only when every one of its input channels holds
a token and every output channel has room; otherwise it stalls and its
state is left untouched. Because a stalled model never observes the stall,
simulated behavior is independent of the host-side schedule.

Target cycles (simulated time) are counted per model; host iterations that
end in a stall consume no target time.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Optional

INFINITY = float("inf")


class KernelError(Exception):
    pass


class InputUnavailable(KernelError):
    """An input channel was empty; the caller must stall, not fail."""


class OutputBlocked(KernelError):
    """An output channel was full; the caller must stall, not fail."""


class DeadlockError(KernelError):
    def __init__(self, cycle: int, occupancies: dict[str, int]):
        self.cycle = cycle
        self.occupancies = occupancies
        super().__init__(
            f"no model can step at cycle {cycle}; channel occupancies: {occupancies}"
        )


class Token:
    """One target-cycle quantum of data. An empty payload is still one
    valid cycle's worth of nothing."""

    __slots__ = ("payload",)

    def __init__(self, payload=None):
        self.payload = payload

    def __repr__(self):
        return f"Token({self.payload!r})"


class Channel:
    """Bounded FIFO of tokens with exactly one producer and one consumer."""

    __slots__ = ("name", "capacity", "queue", "enqueued", "dequeued",
                 "producer", "consumer")

    def __init__(self, name: str, capacity: int = 1):
        if capacity < 1:
            raise ValueError("channel capacity must be >= 1")
        self.name = name
        self.capacity = capacity
        self.queue: list[Token] = []
        self.enqueued = 0
        self.dequeued = 0
        self.producer: Optional[str] = None
        self.consumer: Optional[str] = None

    def occupancy(self) -> int:
        return len(self.queue)

    def can_push(self) -> bool:
        return len(self.queue) < self.capacity

    def push(self, token: Token) -> None:
        if len(self.queue) >= self.capacity:
            raise OutputBlocked(f"channel {self.name} is full")
        self.queue.append(token)
        self.enqueued += 1

    def pop(self) -> Token:
        if not self.queue:
            raise InputUnavailable(f"channel {self.name} is empty")
        self.dequeued += 1
        return self.queue.pop(0)

    def seed(self, count: int = 1) -> None:
        """Place initial empty-payload tokens (start-up slack for loops)."""
        for _ in range(count):
            self.push(Token())


class Model:
    """Base class for stepped models. Subclasses implement on_step and are
    wired to channels via connect()."""

    def __init__(self, name: str):
        self.name = name
        self.inputs: list[Channel] = []
        self.outputs: list[Channel] = []

    def connect(self, inputs: list[Channel], outputs: list[Channel]) -> None:
        for ch in inputs:
            ch.consumer = self.name
        for ch in outputs:
            ch.producer = self.name
        self.inputs = inputs
        self.outputs = outputs

    def on_step(self, tokens: list[Token]) -> list[Token]:
        """Advance one target cycle. Receives one token per input channel,
        must return one token per output channel."""
        raise NotImplementedError

    def idle_until(self) -> float:
        """Next target cycle at which this model does something other than
        consume/emit empty tokens, or INFINITY if event-driven only.
        Models that cannot promise quiescence return 0 (never skippable)."""
        return 0

    def skip(self, cycles: int) -> None:
        """Advance internal time by `cycles` quiescent cycles. Only called
        when idle_until() granted at least that many."""
        raise NotImplementedError(f"{self.name} does not support skipping")


class StepResult(Enum):
    STEPPED = "stepped"
    STALLED = "stalled"


class ModelHandle:
    """Kernel-side identity of a model: its target-cycle counter plus the
    global enable used to gate stepping."""

    __slots__ = ("model", "cycles", "enabled")

    def __init__(self, model: Model):
        self.model = model
        self.cycles = 0
        self.enabled = True

    @property
    def name(self) -> str:
        return self.model.name


def step(handle: ModelHandle) -> list[Token]:
    """Advance the model exactly one target cycle.

    Raises InputUnavailable (without touching any state) when some input
    channel is empty, and OutputBlocked when some output channel is full;
    both signal that the caller must stall.
    """
    model = handle.model
    for ch in model.inputs:
        if not ch.queue:
            raise InputUnavailable(f"channel {ch.name} is empty")
    for ch in model.outputs:
        if len(ch.queue) >= ch.capacity:
            raise OutputBlocked(f"channel {ch.name} is full")
    tokens = [ch.pop() for ch in model.inputs]
    out = model.on_step(tokens)
    if len(out) != len(model.outputs):
        raise KernelError(
            f"{model.name} emitted {len(out)} tokens for {len(model.outputs)} outputs"
        )
    for ch, tok in zip(model.outputs, out):
        ch.push(tok)
    handle.cycles += 1
    return out


def try_step(handle: ModelHandle) -> StepResult:
    """Step if possible; a stall is a normal outcome and leaves all state
    untouched."""
    if not handle.enabled:
        return StepResult.STALLED
    model = handle.model
    for ch in model.inputs:
        if not ch.queue:
            return StepResult.STALLED
    for ch in model.outputs:
        if len(ch.queue) >= ch.capacity:
            return StepResult.STALLED
    tokens = [ch.pop() for ch in model.inputs]
    out = model.on_step(tokens)
    for ch, tok in zip(model.outputs, out):
        ch.push(tok)
    handle.cycles += 1
    return StepResult.STEPPED


class _GatedModel(Model):
    """Adapter giving a black-box clocked model the step/try_step contract.

    The wrapped object exposes only tick(tokens) -> tokens, i.e. one clock
    edge. While stalled it receives no edge at all, so its state provably
    cannot change.
    """

    def __init__(self, name: str, clocked):
        super().__init__(name)
        self._clocked = clocked

    def on_step(self, tokens: list[Token]) -> list[Token]:
        return self._clocked.tick(tokens)


def wrap_gated(clocked, name: Optional[str] = None) -> ModelHandle:
    """Wrap a black-box clocked model (anything with tick()) so it obeys
    the kernel contract by clock gating: no step, no edge."""
    model = _GatedModel(name or type(clocked).__name__, clocked)
    return ModelHandle(model)


@dataclass
class SimStats:
    """Order-insensitive summary of a run."""

    horizon: int
    model_cycles: dict[str, int] = field(default_factory=dict)
    channel_tokens: dict[str, tuple[int, int, int]] = field(default_factory=dict)
    host_sweeps: int = 0


def _validate_graph(handles: list[ModelHandle], channels: list[Channel]) -> None:
    names = {h.name for h in handles}
    if len(names) != len(handles):
        raise ValueError("duplicate model names")
    endpoints: dict[str, set[str]] = {h.name: set() for h in handles}
    for ch in channels:
        if ch.producer is None or ch.consumer is None:
            raise ValueError(f"channel {ch.name} is not fully connected")
        if ch.producer not in names or ch.consumer not in names:
            raise ValueError(f"channel {ch.name} references an unknown model")
        endpoints[ch.producer].add(ch.consumer)
        endpoints[ch.consumer].add(ch.producer)
    if len(handles) > 1:
        seen = set()
        frontier = [handles[0].name]
        while frontier:
            node = frontier.pop()
            if node in seen:
                continue
            seen.add(node)
            frontier.extend(endpoints[node])
        if seen != names:
            raise ValueError("channel graph is not connected")


def _all_channels_quiet(channels: list[Channel]) -> bool:
    for ch in channels:
        if len(ch.queue) != 1 or ch.queue[0].payload is not None:
            return False
    return True


def run(
    handles: list[ModelHandle],
    channels: list[Channel],
    horizon: Optional[int] = None,
    until: Optional[Callable[[], bool]] = None,
    seed: Optional[int] = None,
    allow_skip: bool = True,
) -> SimStats:
    """Drive the models with a round-robin host schedule.

    With `horizon`, runs until every model's counter reaches it. With
    `until`, runs whole sweeps until the predicate holds, then aligns all
    counters to the max. Results must not depend on the sweep order; `seed`
    only shuffles that order once so tests can exercise the property.

    When every model reports a quiescent stretch and every channel sits at
    its steady single-empty-token state, the stretch is skipped in bulk.
    Raises DeadlockError when no model can step and the goal is unmet.
    """
    if (horizon is None) == (until is None):
        raise ValueError("exactly one of horizon/until must be given")
    _validate_graph(handles, channels)
    order = list(handles)
    if seed is not None:
        random.Random(seed).shuffle(order)

    sweeps = 0
    while True:
        if horizon is not None and all(h.cycles >= horizon for h in handles):
            break
        if until is not None and until():
            top = max(h.cycles for h in handles)
            for h in order:
                while h.cycles < top and try_step(h) is StepResult.STEPPED:
                    pass
            break

        progressed = False
        for h in order:
            if horizon is not None and h.cycles >= horizon:
                continue
            if try_step(h) is StepResult.STEPPED:
                progressed = True
        sweeps += 1
        if not progressed:
            cycle = min(h.cycles for h in handles)
            raise DeadlockError(cycle, {c.name: c.occupancy() for c in channels})

        if allow_skip and len({h.cycles for h in handles}) == 1:
            now = handles[0].cycles
            wake = min(h.model.idle_until() for h in handles)
            if horizon is not None:
                wake = min(wake, horizon)
            if wake == INFINITY:
                continue
            delta = int(wake) - now - 1
            if delta > 0 and _all_channels_quiet(channels):
                for h in handles:
                    h.model.skip(delta)
                    h.cycles += delta

    stats = SimStats(horizon=max(h.cycles for h in handles))
    for h in sorted(handles, key=lambda x: x.name):
        stats.model_cycles[h.name] = h.cycles
    for ch in sorted(channels, key=lambda x: x.name):
        stats.channel_tokens[ch.name] = (ch.enqueued, ch.dequeued, ch.occupancy())
    stats.host_sweeps = sweeps
    return stats
