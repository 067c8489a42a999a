"""Event-driven simulation of the Sparse Neural Engine (SNE).

The engine runs spiking conv/linear layers over flattened event streams.
Membrane decay is fused into spike integration: each neuron records the time
of its last update, and when a spike must be integrated the cumulative decay
for all elapsed timesteps is applied in a single Q0.8 multiply selected from
a lookup table. Time events only advance the clock; they never touch state.

Hardware shape: 8 slices x 16 clusters, each cluster time-multiplexing 64
LIF neurons that tile an 8x8 spatial block of one output channel. Every
spike event holds the shared datapath for 12 cycles per pass (9 neuron
updates within the 3x3 receptive field plus restart), which is what makes
execution time proportional to event count. Layers whose output space needs
more clusters than one pass provides are tiled: the engine replays the full
input stream once per pass, covering each output neuron exactly once.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, NamedTuple, Sequence, Union

import numpy as np

from .errors import GeometryMismatch, ShapeMismatch, TimeRegression
from .events import Event, SpikeEvent, TimeEvent

V_MIN, V_MAX = -128, 127  # 8-bit membrane range
KERNEL = 3  # conv layers are 3x3 only
MAX_CHANNELS = 256
MAX_LINEAR_INPUTS = 2304

CONV3X3 = "conv3x3"
LINEAR = "linear"

RESET_ZERO = "zero"
RESET_SUBTRACT = "subtract"


@dataclass(frozen=True)
class LifParams:
    """Per-layer LIF neuron parameters.

    threshold: firing threshold in membrane units (positive, <= 127).
    decay_tau: exponential decay time constant in timesteps.
    lut_depth: number of cumulative-decay entries; elapsed times at or beyond
        the depth decay the potential fully to zero.
    reset: membrane policy after a fire, "zero" or "subtract".
    """

    threshold: int
    decay_tau: float
    lut_depth: int
    reset: str = RESET_ZERO

    def __post_init__(self):
        if not 0 < self.threshold <= V_MAX:
            raise ValueError(f"threshold {self.threshold} outside (0, {V_MAX}]")
        if self.decay_tau <= 0:
            raise ValueError("decay_tau must be > 0")
        if self.lut_depth < 1:
            raise ValueError("lut_depth must be >= 1")
        if self.reset not in (RESET_ZERO, RESET_SUBTRACT):
            raise ValueError(f"unknown reset policy {self.reset!r}")


@dataclass(frozen=True)
class DecayLut:
    """Cumulative-decay multipliers, Q0.8: coeffs[k] ~ 256 * exp(-k / tau).

    coeffs[0] is stored saturated at 255 but never multiplied in: an elapsed
    time of zero bypasses the table so same-timestep integration is exact.
    """

    coeffs: tuple[int, ...]

    @property
    def depth(self) -> int:
        return len(self.coeffs)


class LifNeuronState(NamedTuple):
    """Membrane potential plus the timestep it was last written."""

    v: int
    last_update: int


def build_decay_lut(params: LifParams) -> DecayLut:
    coeffs = tuple(
        min(255, int(256.0 * math.exp(-k / params.decay_tau) + 0.5))
        for k in range(params.lut_depth)
    )
    return DecayLut(coeffs)


def _decayed(v: int, elapsed: int, lut: DecayLut) -> int:
    """Apply cumulative decay for `elapsed` timesteps.

    Truncates toward zero (sign-magnitude), matching an unsigned-multiplier
    datapath. Beyond the LUT depth the coefficient is zero.
    """
    if elapsed <= 0:
        return v
    if elapsed >= lut.depth:
        return 0
    scaled = (abs(v) * lut.coeffs[elapsed]) >> 8
    return -scaled if v < 0 else scaled


def fused_update(
    state: LifNeuronState,
    weight: int,
    now: int,
    lut: DecayLut,
    params: LifParams,
) -> tuple[LifNeuronState, bool]:
    """One fused spike-time update: decay to `now`, integrate, fire-check."""
    if now < state.last_update:
        raise TimeRegression(f"update at t={now} before last_update={state.last_update}")
    v = _decayed(state.v, now - state.last_update, lut) + weight
    v = V_MAX if v > V_MAX else (V_MIN if v < V_MIN else v)
    fired = v >= params.threshold
    if fired:
        v = 0 if params.reset == RESET_ZERO else v - params.threshold
    return LifNeuronState(v, now), fired


@dataclass(frozen=True, eq=False)
class SneLayerConfig:
    """One spiking layer: geometry, 4-bit weights and LIF parameters.

    Conv weights are [out_c][in_c][3][3]; linear weights are [out_n][in_n]
    with the flat input index n = c*(H*W) + y*W + x. Linear outputs are
    exposed as a [out_n] x 1 x 1 feature map, i.e. output spike (0, 0, n).
    """

    kind: str
    in_channels: int
    out_channels: int
    in_width: int
    in_height: int
    weights: np.ndarray
    lif: LifParams

    def __post_init__(self):
        if self.kind not in (CONV3X3, LINEAR):
            raise ValueError(f"unknown layer kind {self.kind!r}")
        if not 1 <= self.in_channels <= MAX_CHANNELS:
            raise ValueError(f"in_channels {self.in_channels} outside [1, {MAX_CHANNELS}]")
        if not 1 <= self.out_channels <= MAX_CHANNELS:
            raise ValueError(f"out_channels {self.out_channels} outside [1, {MAX_CHANNELS}]")
        if not 1 <= self.in_width <= 256 or not 1 <= self.in_height <= 256:
            raise ValueError("spatial input dims must be in [1, 256]")
        w = np.asarray(self.weights, dtype=np.int8)
        if self.kind == CONV3X3:
            expect = (self.out_channels, self.in_channels, KERNEL, KERNEL)
        else:
            if self.input_size > MAX_LINEAR_INPUTS:
                raise ValueError(
                    f"linear input dimension {self.input_size} > {MAX_LINEAR_INPUTS}"
                )
            expect = (self.out_channels, self.input_size)
        if w.shape != expect:
            raise ShapeMismatch(f"weights shape {w.shape}, expected {expect}")
        if w.min(initial=0) < -8 or w.max(initial=0) > 7:
            raise ValueError("weights must be 4-bit signed values in [-8, 7]")
        w.flags.writeable = False
        object.__setattr__(self, "weights", w)

    @property
    def input_size(self) -> int:
        return self.in_channels * self.in_height * self.in_width

    @property
    def out_width(self) -> int:
        return self.in_width if self.kind == CONV3X3 else 1

    @property
    def out_height(self) -> int:
        return self.in_height if self.kind == CONV3X3 else 1

    def output_geometry(self) -> tuple[int, int, int]:
        """(channels, width, height) of the produced event space."""
        return self.out_channels, self.out_width, self.out_height


@dataclass(frozen=True)
class HwConfig:
    """Engine dimensions and the per-event datapath cost."""

    n_slices: int = 8
    clusters_per_slice: int = 16
    neurons_per_cluster: int = 64
    tile_width: int = 8
    tile_height: int = 8
    cycles_per_event: int = 12
    clock_hz: float = 220e6

    def __post_init__(self):
        for name in ("n_slices", "clusters_per_slice", "neurons_per_cluster",
                     "tile_width", "tile_height", "cycles_per_event"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.neurons_per_cluster != self.tile_width * self.tile_height:
            raise ValueError("neurons_per_cluster must equal tile area")

    @property
    def clusters_per_pass(self) -> int:
        return self.n_slices * self.clusters_per_slice


@dataclass(frozen=True)
class ConvTile:
    """An 8x8 (clipped at layer edges) spatial block of one output channel."""

    out_channel: int
    x0: int
    y0: int
    width: int
    height: int


@dataclass(frozen=True)
class LinearTile:
    """A run of consecutive linear output neurons mapped to one cluster."""

    first_output: int
    count: int


Tile = Union[ConvTile, LinearTile]


@dataclass(frozen=True)
class TilingPlan:
    """Cluster assignments grouped into engine passes.

    Tile i of a pass runs on slice i // clusters_per_slice, cluster
    i % clusters_per_slice. Every output neuron appears in exactly one tile.
    """

    passes: tuple[tuple[Tile, ...], ...]

    @property
    def n_passes(self) -> int:
        return len(self.passes)


@dataclass
class SneRunStats:
    """Per-layer counters; cycles = cycles_per_event * spikes * passes."""

    input_events: int = 0
    output_events: int = 0
    cycles: int = 0
    neuron_state_writes: int = 0
    tiles_executed: int = 0  # engine passes (event-stream replays)

    def add(self, other: "SneRunStats") -> None:
        self.input_events += other.input_events
        self.output_events += other.output_events
        self.cycles += other.cycles
        self.neuron_state_writes += other.neuron_state_writes
        self.tiles_executed += other.tiles_executed


@dataclass
class SneNetworkStats:
    per_layer: list[SneRunStats] = field(default_factory=list)

    @property
    def totals(self) -> SneRunStats:
        total = SneRunStats()
        for stats in self.per_layer:
            total.add(stats)
        return total


def plan_tiling(layer: SneLayerConfig, hw: HwConfig = HwConfig()) -> TilingPlan:
    """Deterministic output-space partition, channel-major then row-major."""
    units: list[Tile] = []
    if layer.kind == CONV3X3:
        for oc in range(layer.out_channels):
            for y0 in range(0, layer.out_height, hw.tile_height):
                for x0 in range(0, layer.out_width, hw.tile_width):
                    units.append(ConvTile(
                        out_channel=oc, x0=x0, y0=y0,
                        width=min(hw.tile_width, layer.out_width - x0),
                        height=min(hw.tile_height, layer.out_height - y0),
                    ))
    else:
        for n0 in range(0, layer.out_channels, hw.neurons_per_cluster):
            units.append(LinearTile(
                first_output=n0,
                count=min(hw.neurons_per_cluster, layer.out_channels - n0),
            ))
    cap = hw.clusters_per_pass
    passes = tuple(tuple(units[i:i + cap]) for i in range(0, len(units), cap))
    return TilingPlan(passes)


class ClusterState:
    """Mutable per-pass state of one cluster: membranes + last-update times.

    Neuron index is row-major within the tile (conv) or the offset from the
    tile's first output (linear).
    """

    __slots__ = ("tile", "index", "v", "last", "now")

    def __init__(self, tile: Tile, index: int = 0):
        n = tile.count if isinstance(tile, LinearTile) else tile.width * tile.height
        self.tile = tile
        self.index = index
        self.v = [0] * n
        self.last = [0] * n
        self.now = 0

    def neuron_state(self, idx: int) -> LifNeuronState:
        return LifNeuronState(self.v[idx], self.last[idx])


def _validate_spike(event: SpikeEvent, layer: SneLayerConfig) -> None:
    if not (0 <= event.x < layer.in_width and 0 <= event.y < layer.in_height
            and 0 <= event.c < layer.in_channels):
        raise GeometryMismatch(
            f"event (x={event.x}, y={event.y}, c={event.c}) outside "
            f"{layer.in_width}x{layer.in_height}x{layer.in_channels} input"
        )


def _process_spike(
    cluster: ClusterState,
    event: SpikeEvent,
    layer: SneLayerConfig,
    lut: DecayLut,
    now: int,
) -> tuple[list[tuple[int, SpikeEvent]], int]:
    """Integrate one spike into every intersecting neuron of the cluster.

    Returns ([(neuron_index, output_spike), ...], membrane_writes). Neurons
    are visited in ascending index order; every intersecting neuron counts as
    one write whether or not it fires.
    """
    tile = cluster.tile
    params = layer.lif
    fired: list[tuple[int, SpikeEvent]] = []
    writes = 0
    if isinstance(tile, ConvTile):
        oc = tile.out_channel
        w = layer.weights
        oy_lo = max(event.y - 1, tile.y0)
        oy_hi = min(event.y + 1, tile.y0 + tile.height - 1)
        ox_lo = max(event.x - 1, tile.x0)
        ox_hi = min(event.x + 1, tile.x0 + tile.width - 1)
        for oy in range(oy_lo, oy_hi + 1):
            for ox in range(ox_lo, ox_hi + 1):
                idx = (oy - tile.y0) * tile.width + (ox - tile.x0)
                weight = int(w[oc, event.c, event.y - oy + 1, event.x - ox + 1])
                state, did_fire = fused_update(
                    cluster.neuron_state(idx), weight, now, lut, params
                )
                cluster.v[idx] = state.v
                cluster.last[idx] = state.last_update
                writes += 1
                if did_fire:
                    fired.append((idx, SpikeEvent(ox, oy, oc)))
    else:
        n = (event.c * layer.in_height + event.y) * layer.in_width + event.x
        w = layer.weights
        for idx in range(tile.count):
            out_n = tile.first_output + idx
            state, did_fire = fused_update(
                cluster.neuron_state(idx), int(w[out_n, n]), now, lut, params
            )
            cluster.v[idx] = state.v
            cluster.last[idx] = state.last_update
            writes += 1
            if did_fire:
                fired.append((idx, SpikeEvent(0, 0, out_n)))
    return fired, writes


def cluster_process_event(
    cluster: ClusterState,
    event: Event,
    layer: SneLayerConfig,
    lut: DecayLut,
) -> tuple[list[SpikeEvent], int]:
    """Feed one event to a cluster; returns (output spikes, membrane writes).

    Time events only advance the cluster clock (decay is deferred through the
    per-neuron last-update time), so they cost no state writes.
    """
    if isinstance(event, TimeEvent):
        if event.timestamp < cluster.now:
            raise TimeRegression(
                f"time event {event.timestamp} before cluster time {cluster.now}"
            )
        cluster.now = event.timestamp
        return [], 0
    _validate_spike(event, layer)
    fired, writes = _process_spike(cluster, event, layer, lut, cluster.now)
    return [spike for _, spike in fired], writes


def _neuron_key(tile: Tile, idx: int) -> tuple[int, int, int]:
    """Global (channel, y, x) coordinate of a cluster-local neuron index."""
    if isinstance(tile, LinearTile):
        return (tile.first_output + idx, 0, 0)
    return (tile.out_channel, tile.y0 + idx // tile.width, tile.x0 + idx % tile.width)


def run_layer_with_states(
    layer: SneLayerConfig,
    events: Sequence[Event],
    hw: HwConfig = HwConfig(),
) -> tuple[list[Event], SneRunStats, dict[tuple[int, int, int], LifNeuronState]]:
    """run_layer variant that also returns final membrane states.

    States are keyed by output-neuron coordinate (channel, y, x); linear
    outputs map to (n, 0, 0). Used by the verification suites to compare the
    fused path against the dense reference.
    """
    lut = build_decay_lut(layer.lif)
    plan = plan_tiling(layer, hw)
    events = list(events)
    n_spikes = sum(1 for ev in events if isinstance(ev, SpikeEvent))

    # Output spikes grouped by frame timestamp; key order is emission order.
    buckets: dict[int, list[SpikeEvent]] = {}
    states: dict[tuple[int, int, int], LifNeuronState] = {}
    writes = 0
    fired_total = 0

    for pass_tiles in plan.passes:
        clusters = [ClusterState(tile, i) for i, tile in enumerate(pass_tiles)]
        block_map: dict[tuple[int, int], list[ClusterState]] = {}
        linear_clusters: list[ClusterState] = []
        for cl in clusters:
            if isinstance(cl.tile, ConvTile):
                key = (cl.tile.y0 // hw.tile_height, cl.tile.x0 // hw.tile_width)
                block_map.setdefault(key, []).append(cl)
            else:
                linear_clusters.append(cl)

        now = 0
        for ev in events:
            if isinstance(ev, TimeEvent):
                if ev.timestamp < now:
                    raise TimeRegression(
                        f"time event {ev.timestamp} after time {now}"
                    )
                now = ev.timestamp
                buckets.setdefault(now, [])
                continue
            _validate_spike(ev, layer)
            bucket = buckets.setdefault(now, [])
            hits: list[tuple[int, int, SpikeEvent]] = []
            if layer.kind == CONV3X3:
                by_lo = max(ev.y - 1, 0) // hw.tile_height
                by_hi = min(ev.y + 1, layer.out_height - 1) // hw.tile_height
                bx_lo = max(ev.x - 1, 0) // hw.tile_width
                bx_hi = min(ev.x + 1, layer.out_width - 1) // hw.tile_width
                for by in range(by_lo, by_hi + 1):
                    for bx in range(bx_lo, bx_hi + 1):
                        for cl in block_map.get((by, bx), ()):
                            fired, wr = _process_spike(cl, ev, layer, lut, now)
                            writes += wr
                            hits.extend((cl.index, idx, s) for idx, s in fired)
            else:
                for cl in linear_clusters:
                    fired, wr = _process_spike(cl, ev, layer, lut, now)
                    writes += wr
                    hits.extend((cl.index, idx, s) for idx, s in fired)
            # collector: ascending cluster index, then neuron index
            hits.sort(key=lambda h: (h[0], h[1]))
            bucket.extend(s for _, _, s in hits)
            fired_total += len(hits)

        for cl in clusters:
            for idx in range(len(cl.v)):
                states[_neuron_key(cl.tile, idx)] = cl.neuron_state(idx)

    stats = SneRunStats(
        input_events=n_spikes,
        output_events=fired_total,
        cycles=hw.cycles_per_event * n_spikes * plan.n_passes,
        neuron_state_writes=writes,
        tiles_executed=plan.n_passes,
    )
    out_stream: list[Event] = []
    for ts, spikes in buckets.items():
        out_stream.append(TimeEvent(ts))
        out_stream.extend(spikes)
    return out_stream, stats, states


def run_layer(
    layer: SneLayerConfig,
    events: Sequence[Event],
    hw: HwConfig = HwConfig(),
) -> tuple[list[Event], SneRunStats]:
    """Run one layer over a flattened event stream.

    The full input stream is replayed once per tiling pass (input broadcast),
    and collected output spikes are merged per frame boundary. Every spike
    event costs cycles_per_event datapath cycles per pass; time events are
    free.
    """
    out_stream, stats, _ = run_layer_with_states(layer, events, hw)
    return out_stream, stats


def check_chain(layers: Sequence[SneLayerConfig]) -> None:
    """Raise ShapeMismatch unless consecutive layers are geometry-compatible."""
    for i in range(len(layers) - 1):
        c, w, h = layers[i].output_geometry()
        nxt = layers[i + 1]
        if (nxt.in_channels, nxt.in_width, nxt.in_height) != (c, w, h):
            raise ShapeMismatch(
                f"layer {i} produces {c}x{w}x{h} (c,w,h) but layer {i + 1} "
                f"expects {nxt.in_channels}x{nxt.in_width}x{nxt.in_height}"
            )


def run_network(
    layers: Sequence[SneLayerConfig],
    events: Sequence[Event],
    hw: HwConfig = HwConfig(),
) -> tuple[list[Event], SneNetworkStats]:
    """Layer-wise sequential execution: layer i's output stream feeds i+1."""
    check_chain(layers)
    stats = SneNetworkStats()
    stream = list(events)
    for layer in layers:
        stream, layer_stats = run_layer(layer, stream, hw)
        stats.per_layer.append(layer_stats)
    return stream, stats
