import io
from pathlib import Path

import numpy as np
import pytest

from clicktree.exceptions import StreamFormatError
from clicktree.timetags import (
    BINARY_MAGIC,
    CoincidenceCounter,
    StreamHeader,
    TimeTagStream,
    WindowingPolicy,
    calibrate_t0,
    count_coincidences,
    ingest,
    parse_stream,
    read_stream,
    save_stream,
    write_stream,
)

HEADER = "# rep_rate_hz = 100000000.0\n# t0_ps = 0\n# window_ns = 2.0\n# channels = 2\n"


def test_golden_counts(golden_path: Path):
    counts, diagnostics = count_coincidences(read_stream(golden_path))

    assert counts.n_trials == 5
    assert counts.counts == {(0,): 3, (1,): 3, (0, 1): 2}
    assert counts.patterns == {0: 1, 1: 1, 2: 1, 3: 2}

    assert diagnostics.events == 9
    assert diagnostics.in_window == 7
    assert diagnostics.out_of_window == 1
    assert diagnostics.merged_clicks == 1
    assert diagnostics.beyond_duration == 1


def test_golden_file_is_byte_stable(golden_path: Path):
    data = golden_path.read_bytes()
    fh = io.BytesIO()
    write_stream(parse_stream(data), fh)
    assert fh.getvalue() == data


@pytest.mark.parametrize("chunk_size", [1, 2, 3, 5, 1024])
def test_chunk_size_invariance(golden_path: Path, chunk_size: int):
    stream = read_stream(golden_path)
    assert ingest(stream, chunk_size=chunk_size) == ingest(stream)


def test_counter_accepts_arbitrary_chunks(golden_path: Path):
    stream = read_stream(golden_path)
    counter = CoincidenceCounter(stream.header)
    for split in np.array_split(np.arange(len(stream)), 4):
        counter.feed(stream.event_channels[split], stream.timestamps[split])

    counts, _ = counter.finish()
    assert counts == ingest(stream)


def test_binary_round_trip(golden_path: Path, tmp_path: Path):
    stream = read_stream(golden_path)
    path = tmp_path / "golden.bin"
    save_stream(stream, path, binary=True)

    assert path.read_bytes().startswith(BINARY_MAGIC)
    assert ingest(read_stream(path)) == ingest(stream)


def test_missing_duration_counts_up_to_the_last_event():
    stream = parse_stream(HEADER + "0\t100\n1\t20500\n")
    counts = ingest(stream)
    assert counts.n_trials == 3
    assert counts.patterns == {0: 1, 1: 1, 2: 1}


def test_window_start():
    header = HEADER.replace("# channels = 2\n", "# channels = 2\n# window_start_ps = 5000\n")
    counts, diagnostics = count_coincidences(parse_stream(header + "0\t100\n1\t5100\n"))
    assert counts.counts[(1,)] == 1
    assert counts.counts[(0,)] == 0
    assert diagnostics.out_of_window == 1


def test_empty_stream():
    stream = parse_stream(HEADER + "# duration_ps = 30000\n")
    assert len(stream) == 0
    counts = ingest(stream)
    assert counts.n_trials == 3
    assert counts.patterns == {0: 3}


@pytest.mark.parametrize(
    ("text", "line"),
    [
        (HEADER + "0\t100\n1 200\n", 6),
        (HEADER + "2\t100\n", 5),
        (HEADER + "0\t300\n1\t200\n", 6),
        (HEADER + "0\tabc\n", 5),
        (HEADER + "0\t100\n# late = header\n", 6),
        ("# rep_rate_hz = 1e8\n# channels = 2\n0\t1\n", 3),
        (HEADER + "# colour = blue\n0\t1\n", 6),
        (HEADER + "0\t99999999999999999999\n", 5),
        (HEADER + "0\t1_000\n", 5),
        (HEADER + "0\t 100\n", 5),
        (HEADER + "0\t-100\n", 5),
        (BINARY_MAGIC, 1),
        (BINARY_MAGIC + b"\n# source = \xff\xfe\n#\n", 2),
    ],
)
def test_format_errors_name_the_line(text: bytes | str, line: int):
    with pytest.raises(StreamFormatError) as e:
        parse_stream(text)

    assert e.value.line == line
    assert f"line {line}" in str(e.value)


def test_binary_truncated_record(golden_path: Path):
    fh = io.BytesIO()
    write_stream(read_stream(golden_path), fh, binary=True)
    with pytest.raises(StreamFormatError) as e:
        parse_stream(fh.getvalue()[:-3])

    assert e.value.record == 8


def test_stream_rejects_unsorted_events():
    header = StreamHeader(rep_rate_hz=1e8, window_ns=2.0, channels=2)
    with pytest.raises(StreamFormatError, match="out of order"):
        TimeTagStream(header=header, event_channels=[0, 1], timestamps=[500, 100])


def test_policy_window_must_fit():
    with pytest.raises(ValueError, match="does not fit"):
        WindowingPolicy(period_ps=10_000, window_start_ps=9_000, window_ps=2_000)


def test_calibrate_t0():
    rng = np.random.default_rng(0)
    period, offset = 10_000, 3_700
    pulses = np.sort(rng.choice(np.arange(1, 500), size=200, replace=False))
    timestamps = pulses * period + offset + rng.integers(0, 1_500, size=len(pulses))
    header = StreamHeader(rep_rate_hz=1e8, window_ns=2.0, channels=1)
    stream = TimeTagStream(header=header, event_channels=np.zeros(len(pulses)), timestamps=timestamps)

    t0, fraction = calibrate_t0(stream)
    assert fraction == 1.0
    assert 0 <= t0 < period
    assert (t0 - offset) % period <= 500 or (offset - t0) % period <= 500

    aligned = TimeTagStream(
        header=StreamHeader.model_validate({**header.model_dump(), "t0_ps": t0}),
        event_channels=stream.event_channels,
        timestamps=stream.timestamps,
    )
    _, diagnostics = count_coincidences(aligned)
    assert diagnostics.out_of_window == 0


def test_calibrate_t0_with_a_stray_early_event():
    period = 200_000
    timestamps = [500, *(k * period + 5_000 for k in range(10))]
    header = StreamHeader(rep_rate_hz=5e6, window_ns=2.0, channels=1, duration_ps=10 * period)
    stream = TimeTagStream(header=header, event_channels=[0] * len(timestamps), timestamps=timestamps)

    t0, fraction = calibrate_t0(stream)
    assert t0 == 5_000
    assert fraction == pytest.approx(10 / 11)

    aligned = TimeTagStream(
        header=StreamHeader.model_validate({**header.model_dump(), "t0_ps": t0}),
        event_channels=stream.event_channels,
        timestamps=stream.timestamps,
    )
    counts, diagnostics = count_coincidences(aligned)
    assert counts.n_trials == 10
    assert counts.singles[0] == 10
    assert diagnostics.before_t0 == 1
    assert diagnostics.out_of_window == 0


def test_events_before_t0_are_tallied():
    header = HEADER.replace("# t0_ps = 0\n", "# t0_ps = 1000\n")
    counts, diagnostics = count_coincidences(parse_stream(header + "0\t100\n1\t1200\n"))
    assert counts.counts[(1,)] == 1
    assert counts.counts[(0,)] == 0
    assert diagnostics.before_t0 == 1
    assert diagnostics.out_of_window == 0
