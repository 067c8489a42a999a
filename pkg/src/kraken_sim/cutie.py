"""Functional simulation of the Completely Unrolled Ternary Inference Engine.

CUTIE executes ternary-weight convolutional layers layer-wise: a tile buffer
slides K x K windows over the input feature map and broadcasts each window to
96 output compute units (OCUs), one per output channel. An OCU multiplies
window against filter trits, accumulates into a 16-bit value and ternarizes
it with two thresholds. With 96 input and 96 output channels at K=3 this is
96 * 96 * 9 = 82944 ternary MACs per cycle; one output pixel costs one cycle.

Weights and activations are stored packed five trits per byte (3^5 = 243
fits in 8 bits, i.e. 1.6 bits per symbol). Weight loading for the next layer
overlaps with compute of the current one; only the remainder stalls.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterator, Sequence

import numpy as np

from .errors import (
    DimsMismatch,
    InvalidPackedByte,
    ShapeMismatch,
    TooManyChannels,
)

TRITS_PER_BYTE = 5
PACKED_BYTE_LIMIT = 3 ** TRITS_PER_BYTE  # 243 valid byte values
_POW3 = (1, 3, 9, 27, 81)  # little-endian digit weights

MAX_CHANNELS = 96
KERNEL = 3
ACC_BOUND = KERNEL * KERNEL * MAX_CHANNELS  # 864, well inside 16 bits
PEAK_MACS_PER_CYCLE = MAX_CHANNELS * MAX_CHANNELS * KERNEL * KERNEL  # 82944

POOL_MAX2X2 = "max2x2"


def _check_trits(arr: np.ndarray) -> np.ndarray:
    arr = np.asarray(arr)
    if arr.size and (arr.min() < -1 or arr.max() > 1):
        raise ValueError("tensor values must be trits in {-1, 0, +1}")
    return arr.astype(np.int8)


def pack_trits(trits: Sequence[int]) -> int:
    """Pack exactly five trits into one byte, base-3 little-endian.

    Digit map: -1 -> 0, 0 -> 1, +1 -> 2, so [0,0,0,0,0] packs to 121.
    """
    if len(trits) != TRITS_PER_BYTE:
        raise ValueError(f"need exactly {TRITS_PER_BYTE} trits, got {len(trits)}")
    byte = 0
    for i, t in enumerate(trits):
        if t not in (-1, 0, 1):
            raise ValueError(f"invalid trit {t}")
        byte += (t + 1) * _POW3[i]
    return byte


def unpack_trits(byte: int) -> tuple[int, int, int, int, int]:
    """Exact inverse of pack_trits; bytes >= 243 are invalid."""
    if not 0 <= byte < PACKED_BYTE_LIMIT:
        raise InvalidPackedByte(f"byte {byte} outside [0, {PACKED_BYTE_LIMIT - 1}]")
    out = []
    for _ in range(TRITS_PER_BYTE):
        out.append(byte % 3 - 1)
        byte //= 3
    return tuple(out)


@dataclass(frozen=True)
class PackedTrits:
    """1.6-bit/symbol byte form of a trit tensor: ceil(n/5) bytes."""

    payload: bytes
    n_trits: int

    def __post_init__(self):
        expect = -(-self.n_trits // TRITS_PER_BYTE)
        if len(self.payload) != expect:
            raise DimsMismatch(
                f"{len(self.payload)} bytes cannot hold {self.n_trits} trits"
            )
        if self.payload and max(self.payload) >= PACKED_BYTE_LIMIT:
            raise InvalidPackedByte("payload contains bytes >= 243")


def compress_tensor(tensor: np.ndarray) -> PackedTrits:
    """Pack a trit tensor row-major; the last group is padded with 0-trits."""
    flat = _check_trits(tensor).reshape(-1).astype(np.int64)
    n = flat.size
    pad = -n % TRITS_PER_BYTE
    if pad:
        flat = np.concatenate([flat, np.zeros(pad, dtype=np.int64)])
    digits = (flat + 1).reshape(-1, TRITS_PER_BYTE)
    packed = digits @ np.asarray(_POW3, dtype=np.int64)
    return PackedTrits(payload=packed.astype(np.uint8).tobytes(), n_trits=n)


def decompress_tensor(packed: PackedTrits, dims: Sequence[int]) -> np.ndarray:
    """Unpack to an int8 tensor of the given dims; pad trits are discarded."""
    n = math.prod(dims)
    if n != packed.n_trits:
        raise DimsMismatch(f"dims {tuple(dims)} hold {n} trits, payload has {packed.n_trits}")
    data = np.frombuffer(packed.payload, dtype=np.uint8).astype(np.int64)
    if data.size and data.max() >= PACKED_BYTE_LIMIT:
        raise InvalidPackedByte("payload contains bytes >= 243")
    trits = np.empty((data.size, TRITS_PER_BYTE), dtype=np.int8)
    for i in range(TRITS_PER_BYTE):
        trits[:, i] = data % 3 - 1
        data //= 3
    return trits.reshape(-1)[:n].reshape(tuple(dims))


@dataclass(frozen=True, eq=False)
class CutieLayerConfig:
    """One ternary conv layer: geometry, trit weights, per-channel thresholds.

    thresholds[oc] = (lo, hi), signed 16-bit, lo <= hi: an accumulator above
    hi ternarizes to +1, below lo to -1, else 0. K is fixed at 3.
    """

    in_channels: int
    out_channels: int
    in_width: int
    in_height: int
    weights: np.ndarray  # [out_c][in_c][K][K] trits
    thresholds: np.ndarray  # [out_c][2] int16
    stride: int = 1
    padding: int = 1
    pooling: str | None = None

    def __post_init__(self):
        if not 1 <= self.in_channels <= MAX_CHANNELS:
            raise TooManyChannels(f"in_channels {self.in_channels} outside [1, {MAX_CHANNELS}]")
        if not 1 <= self.out_channels <= MAX_CHANNELS:
            raise TooManyChannels(f"out_channels {self.out_channels} outside [1, {MAX_CHANNELS}]")
        if self.stride < 1 or self.padding < 0:
            raise ValueError("stride must be >= 1 and padding >= 0")
        if self.pooling not in (None, POOL_MAX2X2):
            raise ValueError(f"unknown pooling {self.pooling!r}")
        w = _check_trits(self.weights)
        expect = (self.out_channels, self.in_channels, KERNEL, KERNEL)
        if w.shape != expect:
            raise ShapeMismatch(f"weights shape {w.shape}, expected {expect}")
        th = np.asarray(self.thresholds, dtype=np.int64)
        if th.shape != (self.out_channels, 2):
            raise ShapeMismatch(f"thresholds shape {th.shape}, expected ({self.out_channels}, 2)")
        if th.min(initial=0) < -(2 ** 15) or th.max(initial=0) >= 2 ** 15:
            raise ValueError("thresholds must fit in signed 16 bits")
        if (th[:, 0] > th[:, 1]).any():
            raise ValueError("per-channel thresholds need lo <= hi")
        if self.conv_out_height < 1 or self.conv_out_width < 1:
            raise ShapeMismatch("output dims collapse to zero")
        w.flags.writeable = False
        th16 = th.astype(np.int16)
        th16.flags.writeable = False
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "thresholds", th16)

    @property
    def conv_out_width(self) -> int:
        return (self.in_width + 2 * self.padding - KERNEL) // self.stride + 1

    @property
    def conv_out_height(self) -> int:
        return (self.in_height + 2 * self.padding - KERNEL) // self.stride + 1

    @property
    def out_width(self) -> int:
        return self.conv_out_width // 2 if self.pooling == POOL_MAX2X2 else self.conv_out_width

    @property
    def out_height(self) -> int:
        return self.conv_out_height // 2 if self.pooling == POOL_MAX2X2 else self.conv_out_height

    @property
    def weight_trits(self) -> int:
        return self.out_channels * self.in_channels * KERNEL * KERNEL


@dataclass(frozen=True)
class CutieHwConfig:
    n_ocus: int = MAX_CHANNELS
    clock_hz: float = 330e6
    load_bytes_per_cycle: int = 16  # compressed-weight streaming rate

    def __post_init__(self):
        if self.n_ocus < 1 or self.load_bytes_per_cycle < 1:
            raise ValueError("n_ocus and load_bytes_per_cycle must be >= 1")


@dataclass
class CutieLayerStats:
    compute_cycles: int = 0
    overlapped_load_cycles: int = 0
    stall_cycles: int = 0
    macs_performed: int = 0
    max_abs_acc: int = 0

    @property
    def total_cycles(self) -> int:
        # overlapped load cycles hide under compute of the previous layer
        return self.compute_cycles + self.stall_cycles


@dataclass
class CutieRunStats:
    per_layer: list[CutieLayerStats] = field(default_factory=list)
    end_of_inference: bool = False

    @property
    def total_cycles(self) -> int:
        return sum(s.total_cycles for s in self.per_layer)

    @property
    def total_macs(self) -> int:
        return sum(s.macs_performed for s in self.per_layer)


def ocu_pixel(
    window: np.ndarray,
    weights: np.ndarray,
    threshold_lo: int,
    threshold_hi: int,
) -> tuple[int, int]:
    """One OCU output pixel: ternary dot product + dual-threshold decider.

    Returns (accumulator, output trit). The accumulator is bounded by the
    window size (<= 864 for K=3, 96 channels) and so always fits in 16 bits.
    """
    window = np.asarray(window)
    weights = np.asarray(weights)
    if window.shape != weights.shape:
        raise ShapeMismatch(f"window {window.shape} vs weights {weights.shape}")
    acc = int(np.multiply(window, weights, dtype=np.int32).sum())
    out = 1 if acc > threshold_hi else (-1 if acc < threshold_lo else 0)
    return acc, out


def tile_windows(
    fmap: np.ndarray,
    kernel: int = KERNEL,
    stride: int = 1,
    padding: int = 1,
) -> Iterator[tuple[int, int, np.ndarray]]:
    """Slide square windows over a [C][H][W] map, row-major.

    Yields (x_out, y_out, window) with window[C][kernel][kernel], zero-padded
    at the borders. Emits exactly H_out * W_out windows.
    """
    cin, h, w = fmap.shape
    h_out = (h + 2 * padding - kernel) // stride + 1
    w_out = (w + 2 * padding - kernel) // stride + 1
    if h_out < 1 or w_out < 1:
        raise ShapeMismatch("output dims collapse to zero")
    padded = np.zeros((cin, h + 2 * padding, w + 2 * padding), dtype=fmap.dtype)
    padded[:, padding:padding + h, padding:padding + w] = fmap
    for y in range(h_out):
        for x in range(w_out):
            yield x, y, padded[:, y * stride:y * stride + kernel,
                               x * stride:x * stride + kernel]


def _max_pool2x2(fmap: np.ndarray) -> np.ndarray:
    """2x2 max pool on trits (-1 < 0 < +1); odd trailing row/col dropped."""
    c, h, w = fmap.shape
    hp, wp = h // 2, w // 2
    view = fmap[:, :hp * 2, :wp * 2].reshape(c, hp, 2, wp, 2)
    return view.max(axis=(2, 4))


def weight_load_cycles(layer: CutieLayerConfig, hw: CutieHwConfig) -> int:
    """Cycles to stream one layer's compressed weights into the OCU buffers."""
    packed_bytes = -(-layer.weight_trits // TRITS_PER_BYTE)
    return -(-packed_bytes // hw.load_bytes_per_cycle)


def run_layer(
    layer: CutieLayerConfig,
    fmap: np.ndarray,
    hw: CutieHwConfig = CutieHwConfig(),
) -> tuple[np.ndarray, CutieLayerStats]:
    """Execute one layer: every window costs one cycle for all output channels.

    compute_cycles counts output pixels before pooling; macs_performed is
    window_count * K^2 * in_c * out_c. Load/stall cycles are filled in by
    run_network, which knows the schedule.
    """
    fmap = _check_trits(fmap)
    expect = (layer.in_channels, layer.in_height, layer.in_width)
    if fmap.shape != expect:
        raise ShapeMismatch(f"feature map shape {fmap.shape}, expected {expect}")
    if layer.out_channels > hw.n_ocus or layer.in_channels > hw.n_ocus:
        raise TooManyChannels(
            f"layer needs {max(layer.in_channels, layer.out_channels)} channels, "
            f"engine has {hw.n_ocus} OCUs"
        )
    w32 = layer.weights.astype(np.int32)
    h_out, w_out = layer.conv_out_height, layer.conv_out_width
    acc_map = np.empty((layer.out_channels, h_out, w_out), dtype=np.int32)
    for x, y, window in tile_windows(fmap, KERNEL, layer.stride, layer.padding):
        acc_map[:, y, x] = np.tensordot(w32, window.astype(np.int32), axes=3)
    lo = layer.thresholds[:, 0].astype(np.int32)[:, None, None]
    hi = layer.thresholds[:, 1].astype(np.int32)[:, None, None]
    out = np.where(acc_map > hi, 1, np.where(acc_map < lo, -1, 0)).astype(np.int8)
    if layer.pooling == POOL_MAX2X2:
        out = _max_pool2x2(out)
    stats = CutieLayerStats(
        compute_cycles=h_out * w_out,
        macs_performed=h_out * w_out * KERNEL * KERNEL
        * layer.in_channels * layer.out_channels,
        max_abs_acc=int(np.abs(acc_map).max(initial=0)),
    )
    return out, stats


def overlap_schedule(load_cycles: int, prev_compute_cycles: int) -> tuple[int, int]:
    """Split a layer's weight load into (overlapped, stall) cycles.

    Loading hides under the previous layer's compute; the first layer has
    nothing to hide under and pays its full load as stall.
    """
    overlapped = min(load_cycles, prev_compute_cycles)
    return overlapped, load_cycles - overlapped


def check_chain(layers: Sequence[CutieLayerConfig]) -> None:
    for i in range(len(layers) - 1):
        prev, nxt = layers[i], layers[i + 1]
        got = (prev.out_channels, prev.out_height, prev.out_width)
        want = (nxt.in_channels, nxt.in_height, nxt.in_width)
        if got != want:
            raise ShapeMismatch(
                f"layer {i} produces {got} (c,h,w) but layer {i + 1} expects {want}"
            )


def run_network(
    layers: Sequence[CutieLayerConfig],
    fmap: np.ndarray,
    hw: CutieHwConfig = CutieHwConfig(),
) -> tuple[np.ndarray, CutieRunStats]:
    """Layer-wise execution with weight-load / compute overlap accounting."""
    check_chain(layers)
    stats = CutieRunStats()
    prev_compute = 0
    for layer in layers:
        fmap, layer_stats = run_layer(layer, fmap, hw)
        load = weight_load_cycles(layer, hw)
        layer_stats.overlapped_load_cycles, layer_stats.stall_cycles = (
            overlap_schedule(load, prev_compute)
        )
        prev_compute = layer_stats.compute_cycles
        stats.per_layer.append(layer_stats)
    stats.end_of_inference = True
    return fmap, stats
