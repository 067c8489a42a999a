"""Binary weight/feature-map formats and JSON network/config descriptions.

All multi-byte fields are little-endian.

KSNW (spiking-engine weights)
    "KSNW" u16=version u16=n_layers, then per layer:
    u8 kind (0=conv3x3, 1=linear), u16 out, u16 in, then the 4-bit two's
    complement weights packed two per byte, low nibble first, row-major
    [out][in][ky][kx] (conv) or [out][in] (linear).

KCTW (ternary-engine weights)
    "KCTW" u16=version u16=n_layers, then per layer:
    u16 out_c, u16 in_c, u8 kernel, out_c pairs of i16 (threshold lo, hi),
    then the packed trit payload, row-major [out][in][ky][kx].

KCTF (ternary feature map)
    "KCTF" u16=version, u16 channels, u16 height, u16 width, packed trits
    row-major [C][H][W].

Network descriptions are JSON files listing per-layer geometry/parameters
plus a weight-blob path resolved relative to the JSON file.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from . import cutie, sne
from .errors import (
    BadMagic,
    DimsMismatch,
    ShapeMismatch,
    TruncatedRecord,
    VersionMismatch,
)
from .ioutil import atomic_write_bytes, atomic_write_text
from .perf import CutieCalibration, SneCalibration

FORMAT_VERSION = 1
SNE_WEIGHTS_MAGIC = b"KSNW"
CUTIE_WEIGHTS_MAGIC = b"KCTW"
FEATURE_MAP_MAGIC = b"KCTF"

_KIND_CODE = {sne.CONV3X3: 0, sne.LINEAR: 1}
_CODE_KIND = {code: kind for kind, code in _KIND_CODE.items()}


class _Reader:
    """Cursor over a byte buffer that raises TruncatedRecord on underrun."""

    def __init__(self, data: bytes, name: str):
        self.data = data
        self.name = name
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise TruncatedRecord(
                f"{self.name}: needed {n} bytes at offset {self.pos}, "
                f"file has {len(self.data)}"
            )
        chunk = self.data[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def expect_end(self):
        if self.pos != len(self.data):
            raise TruncatedRecord(
                f"{self.name}: {len(self.data) - self.pos} trailing bytes"
            )


def _check_header(reader: _Reader, magic: bytes) -> None:
    if reader.data[:4] != magic:
        raise BadMagic(f"{reader.name}: expected magic {magic!r}")
    reader.take(4)
    (version,) = reader.unpack("<H")
    if version != FORMAT_VERSION:
        raise VersionMismatch(
            f"{reader.name}: version {version}, expected {FORMAT_VERSION}"
        )


def _pack_nibbles(values: np.ndarray) -> bytes:
    flat = np.asarray(values, dtype=np.int64).reshape(-1)
    if flat.size and (flat.min() < -8 or flat.max() > 7):
        raise ValueError("4-bit weights must lie in [-8, 7]")
    u = flat & 0xF
    if u.size % 2:
        u = np.concatenate([u, np.zeros(1, dtype=np.int64)])
    pairs = u.reshape(-1, 2)
    return (pairs[:, 0] | (pairs[:, 1] << 4)).astype(np.uint8).tobytes()


def _unpack_nibbles(data: bytes, count: int) -> np.ndarray:
    raw = np.frombuffer(data, dtype=np.uint8)
    nibbles = np.empty(raw.size * 2, dtype=np.int16)
    nibbles[0::2] = raw & 0xF
    nibbles[1::2] = raw >> 4
    nibbles = nibbles[:count]
    return np.where(nibbles >= 8, nibbles - 16, nibbles).astype(np.int8)


def write_sne_weights(path, layers: list[tuple[str, np.ndarray]]) -> None:
    """Serialize [(kind, weight array), ...] to a KSNW blob."""
    chunks = [SNE_WEIGHTS_MAGIC, struct.pack("<HH", FORMAT_VERSION, len(layers))]
    for kind, weights in layers:
        weights = np.asarray(weights)
        if kind == sne.CONV3X3:
            out_c, in_c, kh, kw = weights.shape
            if (kh, kw) != (sne.KERNEL, sne.KERNEL):
                raise ShapeMismatch(f"conv kernel must be 3x3, got {kh}x{kw}")
            chunks.append(struct.pack("<BHH", _KIND_CODE[kind], out_c, in_c))
        elif kind == sne.LINEAR:
            out_n, in_n = weights.shape
            chunks.append(struct.pack("<BHH", _KIND_CODE[kind], out_n, in_n))
        else:
            raise ValueError(f"unknown layer kind {kind!r}")
        chunks.append(_pack_nibbles(weights))
    atomic_write_bytes(path, b"".join(chunks))


def read_sne_weights(path) -> list[tuple[str, np.ndarray]]:
    reader = _Reader(Path(path).read_bytes(), str(path))
    _check_header(reader, SNE_WEIGHTS_MAGIC)
    (n_layers,) = reader.unpack("<H")
    layers = []
    for _ in range(n_layers):
        code, out_dim, in_dim = reader.unpack("<BHH")
        if code not in _CODE_KIND:
            raise TruncatedRecord(f"{path}: unknown layer kind code {code}")
        kind = _CODE_KIND[code]
        if kind == sne.CONV3X3:
            count = out_dim * in_dim * sne.KERNEL * sne.KERNEL
            shape = (out_dim, in_dim, sne.KERNEL, sne.KERNEL)
        else:
            count = out_dim * in_dim
            shape = (out_dim, in_dim)
        payload = reader.take(-(-count // 2))
        layers.append((kind, _unpack_nibbles(payload, count).reshape(shape)))
    reader.expect_end()
    return layers


def write_cutie_weights(path, layers: list[tuple[np.ndarray, np.ndarray]]) -> None:
    """Serialize [(trit weights, threshold pairs), ...] to a KCTW blob."""
    chunks = [CUTIE_WEIGHTS_MAGIC, struct.pack("<HH", FORMAT_VERSION, len(layers))]
    for weights, thresholds in layers:
        weights = np.asarray(weights)
        out_c, in_c, kh, kw = weights.shape
        if kh != kw:
            raise ShapeMismatch("kernel must be square")
        thresholds = np.asarray(thresholds, dtype=np.int64).reshape(out_c, 2)
        chunks.append(struct.pack("<HHB", out_c, in_c, kh))
        chunks.append(struct.pack(f"<{out_c * 2}h", *thresholds.reshape(-1)))
        chunks.append(cutie.compress_tensor(weights).payload)
    atomic_write_bytes(path, b"".join(chunks))


def read_cutie_weights(path) -> list[tuple[np.ndarray, np.ndarray]]:
    reader = _Reader(Path(path).read_bytes(), str(path))
    _check_header(reader, CUTIE_WEIGHTS_MAGIC)
    (n_layers,) = reader.unpack("<H")
    layers = []
    for _ in range(n_layers):
        out_c, in_c, kernel = reader.unpack("<HHB")
        th = np.asarray(reader.unpack(f"<{out_c * 2}h"), dtype=np.int16)
        n_trits = out_c * in_c * kernel * kernel
        payload = reader.take(-(-n_trits // cutie.TRITS_PER_BYTE))
        weights = cutie.decompress_tensor(
            cutie.PackedTrits(payload, n_trits), (out_c, in_c, kernel, kernel)
        )
        layers.append((weights, th.reshape(out_c, 2)))
    reader.expect_end()
    return layers


def write_feature_map(path, fmap: np.ndarray) -> None:
    fmap = np.asarray(fmap)
    c, h, w = fmap.shape
    packed = cutie.compress_tensor(fmap)
    atomic_write_bytes(path, b"".join([
        FEATURE_MAP_MAGIC,
        struct.pack("<HHHH", FORMAT_VERSION, c, h, w),
        packed.payload,
    ]))


def read_feature_map(path) -> np.ndarray:
    reader = _Reader(Path(path).read_bytes(), str(path))
    _check_header(reader, FEATURE_MAP_MAGIC)
    c, h, w = reader.unpack("<HHH")
    n = c * h * w
    payload = reader.take(-(-n // cutie.TRITS_PER_BYTE))
    reader.expect_end()
    return cutie.decompress_tensor(cutie.PackedTrits(payload, n), (c, h, w))


def _resolve(base: Path, relative: str) -> Path:
    p = Path(relative)
    return p if p.is_absolute() else base.parent / p


def load_sne_network(path) -> list[sne.SneLayerConfig]:
    """Load a spiking network description plus its weight blob."""
    path = Path(path)
    spec = json.loads(path.read_text())
    weights = read_sne_weights(_resolve(path, spec["weights"]))
    metas = spec["layers"]
    if len(weights) != len(metas):
        raise DimsMismatch(
            f"{path}: {len(metas)} layers described, blob has {len(weights)}"
        )
    layers = []
    for i, (meta, (kind, w)) in enumerate(zip(metas, weights)):
        if meta["kind"] != kind:
            raise DimsMismatch(f"{path}: layer {i} kind {meta['kind']} vs blob {kind}")
        layers.append(sne.SneLayerConfig(
            kind=kind,
            in_channels=meta["in_channels"],
            out_channels=meta["out_channels"],
            in_width=meta["in_width"],
            in_height=meta["in_height"],
            weights=w,
            lif=sne.LifParams(
                threshold=meta["threshold"],
                decay_tau=meta["decay_tau"],
                lut_depth=meta["lut_depth"],
                reset=meta.get("reset", sne.RESET_ZERO),
            ),
        ))
    sne.check_chain(layers)
    return layers


def save_sne_network(path, layers: list[sne.SneLayerConfig], weights_name: str) -> None:
    """Write the JSON description and its KSNW blob next to each other."""
    path = Path(path)
    write_sne_weights(_resolve(path, weights_name),
                      [(l.kind, l.weights) for l in layers])
    spec = {
        "engine": "sne",
        "weights": weights_name,
        "layers": [
            {
                "kind": l.kind,
                "in_channels": l.in_channels,
                "out_channels": l.out_channels,
                "in_width": l.in_width,
                "in_height": l.in_height,
                "threshold": l.lif.threshold,
                "decay_tau": l.lif.decay_tau,
                "lut_depth": l.lif.lut_depth,
                "reset": l.lif.reset,
            }
            for l in layers
        ],
    }
    atomic_write_text(path, json.dumps(spec, indent=2) + "\n")


def load_cutie_network(path) -> list[cutie.CutieLayerConfig]:
    path = Path(path)
    spec = json.loads(path.read_text())
    blobs = read_cutie_weights(_resolve(path, spec["weights"]))
    metas = spec["layers"]
    if len(blobs) != len(metas):
        raise DimsMismatch(
            f"{path}: {len(metas)} layers described, blob has {len(blobs)}"
        )
    layers = []
    for i, (meta, (w, th)) in enumerate(zip(metas, blobs)):
        expect = (meta["out_channels"], meta["in_channels"], cutie.KERNEL, cutie.KERNEL)
        if w.shape != expect:
            raise DimsMismatch(f"{path}: layer {i} blob shape {w.shape} vs {expect}")
        layers.append(cutie.CutieLayerConfig(
            in_channels=meta["in_channels"],
            out_channels=meta["out_channels"],
            in_width=meta["in_width"],
            in_height=meta["in_height"],
            weights=w,
            thresholds=th,
            stride=meta.get("stride", 1),
            padding=meta.get("padding", 1),
            pooling=meta.get("pooling"),
        ))
    cutie.check_chain(layers)
    return layers


def save_cutie_network(path, layers: list[cutie.CutieLayerConfig],
                       weights_name: str) -> None:
    path = Path(path)
    write_cutie_weights(_resolve(path, weights_name),
                        [(l.weights, l.thresholds) for l in layers])
    spec = {
        "engine": "cutie",
        "weights": weights_name,
        "layers": [
            {
                "in_channels": l.in_channels,
                "out_channels": l.out_channels,
                "in_width": l.in_width,
                "in_height": l.in_height,
                "stride": l.stride,
                "padding": l.padding,
                "pooling": l.pooling,
            }
            for l in layers
        ],
    }
    atomic_write_text(path, json.dumps(spec, indent=2) + "\n")


def load_sne_hw(path) -> sne.HwConfig:
    return sne.HwConfig(**json.loads(Path(path).read_text()))


def load_cutie_hw(path) -> cutie.CutieHwConfig:
    return cutie.CutieHwConfig(**json.loads(Path(path).read_text()))


def load_calibration(path) -> tuple[SneCalibration, CutieCalibration]:
    """Read {"sne": {...}, "cutie": {...}}; missing sections use defaults."""
    spec = json.loads(Path(path).read_text())
    return (
        SneCalibration(**spec.get("sne", {})),
        CutieCalibration(**spec.get("cutie", {})),
    )
