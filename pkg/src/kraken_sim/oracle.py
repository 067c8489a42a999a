"""Brute-force dense references used to cross-check both engines.

These walk every neuron / output pixel with plain nested loops and re-derive
the quantized arithmetic locally; the only engine code they share is decay
LUT construction and the threshold comparison conventions. Agreement with an
engine run is therefore a meaningful check, not a tautology.

Contract for the spiking reference: the cumulative-decay table is ground
truth. Each neuron keeps its potential as of the last integration and decays
with the single table entry for the full elapsed time (quantized per-step
decay would not compose to the same values). Within one timestep, input
spikes integrate in row-major (channel, row, column) order, one fused update
per spike; streams compared against this reference must order same-frame
spikes the same way.
"""

from __future__ import annotations

from typing import Iterable, Sequence

import numpy as np

from .errors import ShapeMismatch
from .sne import LINEAR, SneLayerConfig, build_decay_lut


def grid_from_spikes(spikes, channels: int, height: int, width: int) -> np.ndarray:
    """Dense binary [C][H][W] occupancy grid from (x, y, c) spike coords."""
    grid = np.zeros((channels, height, width), dtype=np.uint8)
    for s in spikes:
        if grid[s.c, s.y, s.x]:
            raise ValueError(f"duplicate spike at (x={s.x}, y={s.y}, c={s.c})")
        grid[s.c, s.y, s.x] = 1
    return grid


def dense_lif_sim(
    layer: SneLayerConfig,
    frames: Sequence[tuple[int, np.ndarray]],
):
    """Dense reference for one spiking layer.

    frames: (timestamp, binary [C][H][W] grid) pairs, timestamps increasing.
    Returns (outputs, final_states) where outputs is a list of
    (timestamp, [(x, y, c), ...]) with one entry per fire event, and
    final_states maps (c, y, x) -> (potential, last_update) for every output
    neuron.
    """
    lut = build_decay_lut(layer.lif).coeffs
    depth = len(lut)
    threshold = layer.lif.threshold
    reset_zero = layer.lif.reset == "zero"
    cin, h, w = layer.in_channels, layer.in_height, layer.in_width
    linear = layer.kind == LINEAR
    weights = layer.weights

    if linear:
        n_out = layer.out_channels
        pot = [0] * n_out
        last = [0] * n_out
    else:
        cout = layer.out_channels
        pot = [[[0] * w for _ in range(h)] for _ in range(cout)]
        last = [[[0] * w for _ in range(h)] for _ in range(cout)]

    def integrate(v: int, t_last: int, t: int, weight: int) -> tuple[int, bool]:
        k = t - t_last
        if k > 0:
            v = 0 if k >= depth else (abs(v) * lut[k] >> 8) * (1 if v >= 0 else -1)
        v += weight
        v = 127 if v > 127 else (-128 if v < -128 else v)
        if v >= threshold:
            return (0 if reset_zero else v - threshold), True
        return v, False

    outputs = []
    for t, grid in frames:
        if grid.shape != (cin, h, w):
            raise ShapeMismatch(f"grid shape {grid.shape}, expected {(cin, h, w)}")
        fired_here: list[tuple[int, int, int]] = []
        for c in range(cin):
            for y in range(h):
                for x in range(w):
                    if not grid[c, y, x]:
                        continue
                    if linear:
                        n_in = (c * h + y) * w + x
                        for j in range(n_out):
                            pot[j], fired = integrate(
                                pot[j], last[j], t, int(weights[j, n_in])
                            )
                            last[j] = t
                            if fired:
                                fired_here.append((0, 0, j))
                    else:
                        for oc in range(cout):
                            for oy in range(max(y - 1, 0), min(y + 1, h - 1) + 1):
                                row_p = pot[oc][oy]
                                row_l = last[oc][oy]
                                for ox in range(max(x - 1, 0), min(x + 1, w - 1) + 1):
                                    wgt = int(weights[oc, c, y - oy + 1, x - ox + 1])
                                    row_p[ox], fired = integrate(
                                        row_p[ox], row_l[ox], t, wgt
                                    )
                                    row_l[ox] = t
                                    if fired:
                                        fired_here.append((ox, oy, oc))
        outputs.append((t, fired_here))

    final = {}
    if linear:
        for j in range(n_out):
            final[(j, 0, 0)] = (pot[j], last[j])
    else:
        for oc in range(cout):
            for oy in range(h):
                for ox in range(w):
                    final[(oc, oy, ox)] = (pot[oc][oy][ox], last[oc][oy][ox])
    return outputs, final


def dense_ternary_conv(
    fmap: np.ndarray,
    weights: np.ndarray,
    thresholds: np.ndarray,
    stride: int = 1,
    padding: int = 1,
    pooling: str | None = None,
) -> np.ndarray:
    """Naive ternary convolution + dual-threshold activation.

    Triple-nested loops with explicit border handling (zero padding). The
    optional "max2x2" pooling floors odd output dims, dropping the trailing
    row/column. Returns the int8 trit feature map.
    """
    cin, h, w = fmap.shape
    cout, cin_w, k, k2 = weights.shape
    if cin_w != cin or k != k2:
        raise ShapeMismatch(f"weights {weights.shape} do not match input {fmap.shape}")
    h_out = (h + 2 * padding - k) // stride + 1
    w_out = (w + 2 * padding - k) // stride + 1
    if h_out < 1 or w_out < 1:
        raise ShapeMismatch("output dims collapse to zero")
    out = np.zeros((cout, h_out, w_out), dtype=np.int8)
    for oc in range(cout):
        lo = int(thresholds[oc][0])
        hi = int(thresholds[oc][1])
        for oy in range(h_out):
            for ox in range(w_out):
                acc = 0
                for c in range(cin):
                    for ky in range(k):
                        iy = oy * stride + ky - padding
                        if not 0 <= iy < h:
                            continue
                        for kx in range(k):
                            ix = ox * stride + kx - padding
                            if not 0 <= ix < w:
                                continue
                            a = int(fmap[c, iy, ix])
                            if a:
                                acc += a * int(weights[oc, c, ky, kx])
                out[oc, oy, ox] = 1 if acc > hi else (-1 if acc < lo else 0)
    if pooling == "max2x2":
        hp, wp = h_out // 2, w_out // 2
        pooled = np.zeros((cout, hp, wp), dtype=np.int8)
        for oc in range(cout):
            for py in range(hp):
                for px in range(wp):
                    block = [
                        int(out[oc, 2 * py + dy, 2 * px + dx])
                        for dy in (0, 1)
                        for dx in (0, 1)
                    ]
                    pooled[oc, py, px] = max(block)
        return pooled
    return out
