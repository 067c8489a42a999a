"""Event data model for the spiking engine's input traffic.

All traffic is carried as 32-bit little-endian words of two kinds:

    spike word   bit31=0  bits[30:24]=0  bits[23:16]=c  bits[15:8]=y  bits[7:0]=x
    time word    bit31=1  bits[30:28]=0  bits[27:0]=timestamp

A stream is a sequence of event frames; on the wire each frame is one time
word followed by the frame's spike words, and frame timestamps are strictly
increasing. DVS input maps negative/positive polarity to channels 0/1.

This module also provides a synthetic DVS132S source (the sensor is polled at
a fixed frame request rate and answers with at most width*height/4 events per
frame) and the affine acquisition-latency model used by the latency sweep.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path
from random import Random
from typing import Iterable, Sequence, Union

from .errors import (
    BadMagic,
    FieldOverflow,
    FileFormatError,
    InvalidActivity,
    NonMonotoneTimestamp,
    ReservedBitsSet,
    TruncatedRecord,
    VersionMismatch,
)
from .ioutil import atomic_write_bytes

TIMESTAMP_BITS = 28
MAX_TIMESTAMP = (1 << TIMESTAMP_BITS) - 1

_TYPE_BIT = 1 << 31
_SPIKE_RESERVED = 0x7F00_0000  # bits 30:24 of a spike word
_TIME_RESERVED = 0x7000_0000  # bits 30:28 of a time word


@dataclass(frozen=True)
class SpikeEvent:
    """One spike in list-of-coordinates form (pixel column, row, channel)."""

    x: int
    y: int
    c: int


@dataclass(frozen=True)
class TimeEvent:
    """Timestamp marker advancing the network's notion of time."""

    timestamp: int


Event = Union[SpikeEvent, TimeEvent]


@dataclass(frozen=True)
class EventFrame:
    """The batch of spikes returned for one acquisition request."""

    timestamp: int
    spikes: tuple[SpikeEvent, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "spikes", tuple(self.spikes))


@dataclass(frozen=True)
class SensorConfig:
    """DVS sensor geometry and polling behaviour.

    Defaults model the DVS132S: 132x104 pixels polled at 300 event frames per
    second with at most 132*104/4 = 3432 events per frame. One timestamp unit
    per frame period (units_per_second == request rate) keeps decay-LUT
    indices small downstream.
    """

    width: int = 132
    height: int = 104
    frame_request_rate_hz: int = 300
    max_events_per_frame: int = 3432
    timestamp_units_per_second: int = 300

    def __post_init__(self):
        if self.width < 1 or self.height < 1:
            raise ValueError("sensor dimensions must be >= 1")
        if not 1 <= self.max_events_per_frame <= self.width * self.height:
            raise ValueError("need 1 <= max_events_per_frame <= width*height")
        if self.frame_request_rate_hz < 1:
            raise ValueError("frame_request_rate_hz must be >= 1")
        if self.timestamp_units_per_second < self.frame_request_rate_hz:
            # coarser timestamps would collapse adjacent frame boundaries
            raise ValueError("timestamp_units_per_second must be >= frame rate")


@dataclass(frozen=True)
class LatencyModel:
    """Affine acquisition-latency model: latency = c0 + c1 * n_events.

    The constants are calibration inputs, not measurements; defaults are
    placeholders of a plausible magnitude.
    """

    c0: float = 10e-6
    c1: float = 100e-9

    def __post_init__(self):
        if self.c0 < 0:
            raise ValueError("c0 must be >= 0")
        if self.c1 <= 0:
            raise ValueError("c1 must be > 0")


def encode_event(event: Event) -> int:
    """Encode a spike or time event into its 32-bit word."""
    if isinstance(event, SpikeEvent):
        for name, value in (("x", event.x), ("y", event.y), ("c", event.c)):
            if not 0 <= value <= 0xFF:
                raise FieldOverflow(f"spike field {name}={value} does not fit 8 bits")
        return (event.c << 16) | (event.y << 8) | event.x
    if isinstance(event, TimeEvent):
        if not 0 <= event.timestamp <= MAX_TIMESTAMP:
            raise FieldOverflow(
                f"timestamp {event.timestamp} does not fit {TIMESTAMP_BITS} bits"
            )
        return _TYPE_BIT | event.timestamp
    raise TypeError(f"not an event: {event!r}")


def decode_event(word: int) -> Event:
    """Decode a 32-bit word; exact inverse of encode_event on valid words."""
    if not 0 <= word <= 0xFFFF_FFFF:
        raise FieldOverflow(f"0x{word:x} is not a 32-bit word")
    if word & _TYPE_BIT:
        if word & _TIME_RESERVED:
            raise ReservedBitsSet(f"time word 0x{word:08x} has bits 30:28 set")
        return TimeEvent(word & MAX_TIMESTAMP)
    if word & _SPIKE_RESERVED:
        raise ReservedBitsSet(f"spike word 0x{word:08x} has bits 30:24 set")
    return SpikeEvent(x=word & 0xFF, y=(word >> 8) & 0xFF, c=(word >> 16) & 0xFF)


def synth_dvs_stream(
    cfg: SensorConfig, activity: float, duration_s: float, seed: int
) -> list[EventFrame]:
    """Generate a deterministic synthetic DVS stream.

    Emits floor(duration_s * frame_request_rate_hz) frames. Each frame carries
    round(activity * max_events_per_frame) spikes on distinct pixels (a pixel
    fires at most once per readout) with random polarity channel in {0, 1}.
    Pure function of (cfg, activity, duration_s, seed).
    """
    if not 0.0 <= activity <= 1.0:
        raise InvalidActivity(f"activity {activity} outside [0, 1]")
    n_frames = int(duration_s * cfg.frame_request_rate_hz)
    per_frame = round(activity * cfg.max_events_per_frame)
    step = cfg.timestamp_units_per_second / cfg.frame_request_rate_hz
    rng = Random(seed)
    pixels = range(cfg.width * cfg.height)
    frames = []
    for i in range(n_frames):
        ts = round((i + 1) * step)
        if ts > MAX_TIMESTAMP:
            raise FieldOverflow(f"frame {i} timestamp {ts} exceeds 28 bits")
        spikes = tuple(
            SpikeEvent(x=p % cfg.width, y=p // cfg.width, c=rng.randrange(2))
            for p in rng.sample(pixels, per_frame)
        )
        frames.append(EventFrame(ts, spikes))
    return frames


def frame_latency(model: LatencyModel, frame: EventFrame) -> float:
    """Modeled acquisition latency of one frame, in seconds."""
    return model.c0 + model.c1 * len(frame.spikes)


def flatten_frames(frames: Iterable[EventFrame]) -> list[Event]:
    """Flatten frames into the wire order: each time event precedes its spikes."""
    stream: list[Event] = []
    for frame in frames:
        stream.append(TimeEvent(frame.timestamp))
        stream.extend(frame.spikes)
    return stream


def group_stream(events: Iterable[Event]) -> list[EventFrame]:
    """Group a flattened stream back into frames.

    Spikes before the first time event form an implicit frame at t=0. Frame
    timestamps must be strictly increasing.
    """
    frames: list[EventFrame] = []
    ts: int | None = None
    spikes: list[SpikeEvent] = []

    def close():
        if ts is not None or spikes:
            frames.append(EventFrame(0 if ts is None else ts, tuple(spikes)))

    for ev in events:
        if isinstance(ev, TimeEvent):
            if ts is not None and ev.timestamp <= ts:
                raise NonMonotoneTimestamp(
                    f"frame timestamp {ev.timestamp} after {ts}"
                )
            if ts is None and spikes and ev.timestamp <= 0:
                raise NonMonotoneTimestamp("explicit frame collides with implicit t=0")
            close()
            ts, spikes = ev.timestamp, []
        else:
            spikes.append(ev)
    close()
    return frames


# Event file: header then one 32-bit word per event, frames in wire order.
EVENT_FILE_MAGIC = b"KEVT"
EVENT_FILE_VERSION = 1
_HEADER = struct.Struct("<4sHHHI")  # magic, version, width, height, reserved


@dataclass(frozen=True)
class EventFileData:
    """Decoded contents of an event file."""

    width: int
    height: int
    frames: tuple[EventFrame, ...]


def write_event_file(
    path, frames: Sequence[EventFrame], sensor: SensorConfig | None = None
) -> None:
    """Serialize frames to a KEVT file (atomically)."""
    sensor = sensor or SensorConfig()
    chunks = [_HEADER.pack(EVENT_FILE_MAGIC, EVENT_FILE_VERSION,
                           sensor.width, sensor.height, 0)]
    last = -1
    for frame in frames:
        if frame.timestamp <= last:
            raise NonMonotoneTimestamp(
                f"frame timestamp {frame.timestamp} after {last}"
            )
        last = frame.timestamp
        words = [encode_event(TimeEvent(frame.timestamp))]
        words.extend(encode_event(s) for s in frame.spikes)
        chunks.append(struct.pack(f"<{len(words)}I", *words))
    atomic_write_bytes(path, b"".join(chunks))


def read_event_file(path) -> EventFileData:
    """Parse a KEVT file; exact inverse of write_event_file."""
    data = Path(path).read_bytes()
    if data[:4] != EVENT_FILE_MAGIC:
        raise BadMagic(f"{path}: expected {EVENT_FILE_MAGIC!r}")
    if len(data) < _HEADER.size:
        raise TruncatedRecord(f"{path}: header is incomplete")
    _, version, width, height, _ = _HEADER.unpack_from(data)
    if version != EVENT_FILE_VERSION:
        raise VersionMismatch(f"{path}: version {version}, expected {EVENT_FILE_VERSION}")
    body = data[_HEADER.size:]
    if len(body) % 4:
        raise TruncatedRecord(f"{path}: {len(body)} payload bytes is not a word multiple")
    frames: list[EventFrame] = []
    ts: int | None = None
    spikes: list[SpikeEvent] = []
    for (word,) in struct.iter_unpack("<I", body):
        ev = decode_event(word)
        if isinstance(ev, TimeEvent):
            if ts is not None:
                if ev.timestamp <= ts:
                    raise NonMonotoneTimestamp(
                        f"{path}: timestamp {ev.timestamp} after {ts}"
                    )
                frames.append(EventFrame(ts, tuple(spikes)))
            ts, spikes = ev.timestamp, []
        else:
            if ts is None:
                raise FileFormatError(f"{path}: spike word before first time word")
            spikes.append(ev)
    if ts is not None:
        frames.append(EventFrame(ts, tuple(spikes)))
    return EventFileData(width=width, height=height, frames=tuple(frames))
