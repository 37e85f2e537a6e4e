"""Time-tag streams and their reduction to per-pulse click counts.

Text format::

    # rep_rate_hz = 5000000.0
    # t0_ps = 0
    # window_ns = 40.0
    # channels = 4
    0<TAB>123456
    2<TAB>123789

The binary variant starts with ``#clicktree-binary v1``, carries the same header lines,
ends the header with a bare ``#`` line and then packs little-endian records
(u8 channel, u64 timestamp in picoseconds).
"""

import logging
from collections.abc import Iterator
from pathlib import Path
from typing import BinaryIO

import numpy as np
from pydantic import ConfigDict, Field, ValidationError, field_validator, model_validator

from .exceptions import StreamFormatError
from .models import CountSummary, FrozenModel

logger = logging.getLogger(__name__)

BINARY_MAGIC = b"#clicktree-binary v1"
RECORD_DTYPE = np.dtype([("channel", "<u1"), ("timestamp", "<u8")])
DEFAULT_CHUNK_SIZE = 1 << 20
INT64_MAX = int(np.iinfo(np.int64).max)


def period_from_rate(rep_rate: float) -> int:
    return int(round(1e12 / rep_rate))


def window_from_ns(window_ns: float) -> int:
    return int(round(window_ns * 1e3))


class StreamHeader(FrozenModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    rep_rate_hz: float = Field(gt=0)
    t0_ps: int = Field(default=0, ge=0)
    window_ns: float = Field(gt=0)
    channels: int = Field(ge=1, le=256)
    window_start_ps: int = Field(default=0, ge=0)
    duration_ps: int | None = Field(default=None, ge=0)
    source: str = ""

    @property
    def period_ps(self) -> int:
        return period_from_rate(self.rep_rate_hz)

    @property
    def window_ps(self) -> int:
        return window_from_ns(self.window_ns)


class WindowingPolicy(FrozenModel):
    period_ps: int = Field(gt=0)
    window_start_ps: int = Field(default=0, ge=0)
    window_ps: int = Field(gt=0)

    @model_validator(mode="after")
    def _check_window(self) -> "WindowingPolicy":
        if self.window_start_ps + self.window_ps > self.period_ps:
            raise ValueError(
                f"window [{self.window_start_ps}, {self.window_start_ps + self.window_ps}) ps "
                f"does not fit in a {self.period_ps} ps period"
            )

        return self

    @classmethod
    def from_header(cls, header: StreamHeader) -> "WindowingPolicy":
        return cls(period_ps=header.period_ps, window_start_ps=header.window_start_ps, window_ps=header.window_ps)


class TimeTagStream(FrozenModel):
    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    header: StreamHeader
    event_channels: np.ndarray
    timestamps: np.ndarray

    @field_validator("event_channels", "timestamps", mode="before")
    @classmethod
    def _as_array(cls, value: object) -> np.ndarray:
        try:
            return np.asarray(value, dtype=np.int64).reshape(-1)
        except OverflowError as e:
            raise ValueError("values exceed the signed 64-bit range") from e

    @model_validator(mode="after")
    def _check_events(self) -> "TimeTagStream":
        if len(self.event_channels) != len(self.timestamps):
            raise ValueError("every event needs exactly one channel and one timestamp")

        _check_records(self.event_channels, self.timestamps, self.header.channels)
        return self

    def __len__(self) -> int:
        return len(self.timestamps)

    def chunks(self, size: int = DEFAULT_CHUNK_SIZE) -> Iterator[tuple[np.ndarray, np.ndarray]]:
        for start in range(0, len(self), size):
            yield self.event_channels[start : start + size], self.timestamps[start : start + size]


def _check_records(
    channels: np.ndarray,
    timestamps: np.ndarray,
    channel_count: int,
    *,
    previous: int = 0,
    offset: int = 0,
):
    if len(timestamps) == 0:
        return

    negative = np.flatnonzero(timestamps < 0)
    if len(negative) > 0:
        raise StreamFormatError("negative timestamp", record=offset + int(negative[0]))

    decreasing = np.flatnonzero(np.diff(timestamps, prepend=previous) < 0)
    if len(decreasing) > 0:
        raise StreamFormatError("timestamps are out of order", record=offset + int(decreasing[0]))

    outside = np.flatnonzero((channels < 0) | (channels >= channel_count))
    if len(outside) > 0:
        index = int(outside[0])
        raise StreamFormatError(
            f"channel {int(channels[index])} is out of range for {channel_count} channels",
            record=offset + index,
        )


class IngestDiagnostics(FrozenModel):
    events: int = 0
    in_window: int = 0
    out_of_window: int = 0
    merged_clicks: int = 0
    beyond_duration: int = 0
    before_t0: int = 0


class CoincidenceCounter:
    """Single-pass reduction of time-ordered events into a click-pattern histogram.

    A channel clicks in a pulse when at least one of its events lands inside that pulse's
    window; further events of the same channel and pulse are merged. Chunk boundaries may
    fall anywhere, the pulse straddling them is carried over.
    """

    def __init__(self, header: StreamHeader, policy: WindowingPolicy | None = None):
        self.header = header
        self.policy = policy or WindowingPolicy.from_header(header)
        self.histogram = np.zeros(2**header.channels, dtype=np.int64)

        self._pulse_limit = None if header.duration_ps is None else header.duration_ps // self.policy.period_ps
        self._events = 0
        self._in_window = 0
        self._beyond = 0
        self._before_t0 = 0
        self._last_timestamp = 0
        self._last_pulse = -1
        self._pending_pulse = -1
        self._pending_pattern = 0
        self._clicked_pulses = 0

    def feed(self, channels: np.ndarray, timestamps: np.ndarray):
        channels = np.asarray(channels, dtype=np.int64)
        timestamps = np.asarray(timestamps, dtype=np.int64)
        if len(timestamps) == 0:
            return

        _check_records(
            channels,
            timestamps,
            self.header.channels,
            previous=self._last_timestamp,
            offset=self._events,
        )
        self._events += len(timestamps)
        self._last_timestamp = int(timestamps[-1])

        early = timestamps < self.header.t0_ps
        if early.any():
            self._before_t0 += int(early.sum())
            channels, timestamps = channels[~early], timestamps[~early]

        period = self.policy.period_ps
        offset = timestamps - self.header.t0_ps
        pulses = offset // period
        phases = offset - pulses * period
        start = self.policy.window_start_ps
        keep = (phases >= start) & (phases < start + self.policy.window_ps)

        counted = pulses
        if self._pulse_limit is not None:
            beyond = pulses >= self._pulse_limit
            self._beyond += int(beyond.sum())
            keep &= ~beyond
            counted = pulses[~beyond]

        if len(counted) > 0:
            self._last_pulse = max(self._last_pulse, int(counted[-1]))

        kept_pulses = pulses[keep]
        self._in_window += len(kept_pulses)
        if len(kept_pulses) == 0:
            return

        bits = np.left_shift(1, channels[keep])
        starts = np.flatnonzero(np.r_[True, kept_pulses[1:] != kept_pulses[:-1]])
        unique_pulses = kept_pulses[starts]
        patterns = np.bitwise_or.reduceat(bits, starts)

        if unique_pulses[0] == self._pending_pulse:
            patterns[0] |= self._pending_pattern
        else:
            self._flush()

        self._record(patterns[:-1])
        self._pending_pulse = int(unique_pulses[-1])
        self._pending_pattern = int(patterns[-1])

    def _record(self, patterns: np.ndarray):
        if len(patterns) > 0:
            self.histogram += np.bincount(patterns, minlength=len(self.histogram))
            self._clicked_pulses += len(patterns)

    def _flush(self):
        if self._pending_pulse >= 0:
            self._record(np.array([self._pending_pattern], dtype=np.int64))
            self._pending_pulse = -1
            self._pending_pattern = 0

    def finish(self) -> tuple[CountSummary, IngestDiagnostics]:
        self._flush()

        if self._pulse_limit is not None:
            n_trials = self._pulse_limit
        else:
            logger.warning("stream header has no duration_ps, counting pulses up to the last event")
            n_trials = self._last_pulse + 1

        histogram = self.histogram.copy()
        histogram[0] += n_trials - self._clicked_pulses
        if histogram[0] < 0:
            raise StreamFormatError("more clicked pulses than pulses in the acquisition")

        clicks = sum(int(count) * pattern.bit_count() for pattern, count in enumerate(histogram.tolist()))
        diagnostics = IngestDiagnostics(
            events=self._events,
            in_window=self._in_window,
            out_of_window=self._events - self._before_t0 - self._beyond - self._in_window,
            merged_clicks=self._in_window - clicks,
            beyond_duration=self._beyond,
            before_t0=self._before_t0,
        )
        return CountSummary.from_patterns(self.header.channels, histogram), diagnostics


def count_coincidences(
    stream: TimeTagStream,
    policy: WindowingPolicy | None = None,
    *,
    chunk_size: int = DEFAULT_CHUNK_SIZE,
) -> tuple[CountSummary, IngestDiagnostics]:
    counter = CoincidenceCounter(stream.header, policy)
    for channels, timestamps in stream.chunks(chunk_size):
        counter.feed(channels, timestamps)

    counts, diagnostics = counter.finish()
    logger.info(
        "ingested %d events over %d pulses: %d in window, %d outside, %d merged, %d beyond duration",
        diagnostics.events,
        counts.n_trials,
        diagnostics.in_window,
        diagnostics.out_of_window,
        diagnostics.merged_clicks,
        diagnostics.beyond_duration,
    )
    return counts, diagnostics


def ingest(
    stream: TimeTagStream,
    policy: WindowingPolicy | None = None,
    *,
    chunk_size: int = DEFAULT_CHUNK_SIZE,
) -> CountSummary:
    """Reduce a time-tag stream to click counts.

    Args:
        stream: Parsed time-tag stream.
        policy: Pulse windowing. Defaults to the one described by the stream header.
        chunk_size: Number of events reduced per pass.

    Returns:
        CountSummary: Click-pattern counts over every pulse of the acquisition.
    """
    counts, _ = count_coincidences(stream, policy, chunk_size=chunk_size)
    return counts


def calibrate_t0(stream: TimeTagStream, policy: WindowingPolicy | None = None) -> tuple[int, float]:
    """Clock offset whose windows capture the largest fraction of events.

    The offset is the best phase itself, in ``[0, period)``. Events earlier than it are
    tallied as ``before_t0`` during ingestion.
    """
    policy = policy or WindowingPolicy.from_header(stream.header)
    if len(stream) == 0:
        return stream.header.t0_ps, 0.0

    period = policy.period_ps
    phases = np.sort(stream.timestamps % period)
    extended = np.concatenate([phases, phases + period])
    captured = np.searchsorted(extended, phases + policy.window_ps, side="left") - np.arange(len(phases))
    best = int(np.argmax(captured))

    t0 = (int(phases[best]) - policy.window_start_ps) % period
    return t0, float(captured[best]) / len(phases)


def _parse_header(values: dict[str, str], *, line: int) -> StreamHeader:
    try:
        return StreamHeader.model_validate(values)
    except ValidationError as e:
        raise StreamFormatError(f"invalid stream header: {e}", line=line) from e


def _header_entry(raw: str, *, line: int) -> tuple[str, str] | None:
    body = raw.strip().lstrip("#").strip()
    if not body:
        return None

    key, sep, value = body.partition("=")
    if not sep:
        raise StreamFormatError(f"header line {raw.strip()!r} is not 'key = value'", line=line)

    return key.strip(), value.strip()


def _parse_text(text: str) -> TimeTagStream:
    values: dict[str, str] = {}
    header: StreamHeader | None = None
    channels: list[int] = []
    timestamps: list[int] = []
    previous = -1

    lines = text.splitlines()
    for number, raw in enumerate(lines, start=1):
        stripped = raw.strip()
        if not stripped:
            continue

        if stripped.startswith("#"):
            if header is not None:
                raise StreamFormatError("header line after the first record", line=number)

            entry = _header_entry(stripped, line=number)
            if entry is not None:
                values[entry[0]] = entry[1]
            continue

        record = len(timestamps)
        if header is None:
            header = _parse_header(values, line=number)

        fields = raw.split("\t")
        if len(fields) != 2:
            raise StreamFormatError("expected 'channel<TAB>timestamp_ps'", line=number, record=record)

        if not all(field.isascii() and field.isdigit() for field in fields):
            raise StreamFormatError(f"non-integer field in {raw!r}", line=number, record=record)

        channel, timestamp = int(fields[0]), int(fields[1])
        if timestamp > INT64_MAX:
            raise StreamFormatError(
                f"timestamp {timestamp} exceeds the signed 64-bit range", line=number, record=record
            )

        if not 0 <= channel < header.channels:
            raise StreamFormatError(
                f"channel {channel} is out of range for {header.channels} channels", line=number, record=record
            )

        if timestamp < 0 or timestamp < previous:
            raise StreamFormatError(f"timestamp {timestamp} is out of order", line=number, record=record)

        previous = timestamp
        channels.append(channel)
        timestamps.append(timestamp)

    if header is None:
        header = _parse_header(values, line=len(lines))

    return TimeTagStream(header=header, event_channels=channels, timestamps=timestamps)


def _parse_binary(data: bytes) -> TimeTagStream:
    values: dict[str, str] = {}
    position = data.find(b"\n") + 1
    if position == 0:
        raise StreamFormatError("binary magic is not followed by a header", line=1)

    number = 1
    while True:
        end = data.find(b"\n", position)
        if end < 0:
            raise StreamFormatError("binary header is not terminated by a '#' line", line=number)

        number += 1
        try:
            raw = data[position:end].decode("utf-8")
        except UnicodeDecodeError as e:
            raise StreamFormatError("binary header line is not valid UTF-8", line=number) from e

        position = end + 1
        if not raw.startswith("#"):
            raise StreamFormatError("binary header lines must start with '#'", line=number)

        entry = _header_entry(raw, line=number)
        if entry is None:
            break

        values[entry[0]] = entry[1]

    header = _parse_header(values, line=number)
    body = data[position:]
    if len(body) % RECORD_DTYPE.itemsize != 0:
        raise StreamFormatError("truncated binary record", record=len(body) // RECORD_DTYPE.itemsize)

    records = np.frombuffer(body, dtype=RECORD_DTYPE)
    timestamps = records["timestamp"]
    if len(timestamps) > 0 and int(timestamps.max()) > INT64_MAX:
        raise StreamFormatError("timestamp exceeds the signed 64-bit range")

    return TimeTagStream(
        header=header,
        event_channels=records["channel"].astype(np.int64),
        timestamps=timestamps.astype(np.int64),
    )


def parse_stream(data: bytes | str) -> TimeTagStream:
    if isinstance(data, bytes):
        if data.startswith(BINARY_MAGIC):
            return _parse_binary(data)

        try:
            data = data.decode("utf-8")
        except UnicodeDecodeError as e:
            raise StreamFormatError("stream is neither text nor the binary format") from e

    return _parse_text(data)


def _header_lines(header: StreamHeader) -> list[str]:
    return [f"# {key} = {value}" for key, value in header.model_dump(exclude_none=True).items()]


def write_stream(stream: TimeTagStream, fh: BinaryIO, *, binary: bool = False):
    lines = _header_lines(stream.header)
    if binary:
        fh.write(BINARY_MAGIC + b"\n")
        fh.write("".join(f"{line}\n" for line in lines).encode("utf-8"))
        fh.write(b"#\n")

        records = np.empty(len(stream), dtype=RECORD_DTYPE)
        records["channel"] = stream.event_channels
        records["timestamp"] = stream.timestamps
        fh.write(records.tobytes())
        return

    fh.write("".join(f"{line}\n" for line in lines).encode("utf-8"))
    fh.write(
        "".join(
            f"{channel}\t{timestamp}\n"
            for channel, timestamp in zip(stream.event_channels.tolist(), stream.timestamps.tolist())
        ).encode("utf-8")
    )


def read_stream(path: str | Path) -> TimeTagStream:
    return parse_stream(Path(path).read_bytes())


def save_stream(stream: TimeTagStream, path: str | Path, *, binary: bool = False):
    with Path(path).open("wb") as fh:
        write_stream(stream, fh, binary=binary)

