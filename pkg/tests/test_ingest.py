import io

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from generators import random_trace
from printleak.gcode import build_toolpath
from printleak.ingest import (
    SchemaError,
    SensorTrace,
    TraceDataError,
    align_channels,
    frame_sizes,
    read_sensor_csv,
    write_sensor_csv,
)
from printleak.simulate import SimConfig, simulate_emissions

HEADER = "time_s,ax,bx_uT,by_uT,bz_uT\n"


def round_trip(trace, **kw):
    buf = io.StringIO()
    write_sensor_csv(trace, buf)
    buf.seek(0)
    return read_sensor_csv(buf, magnetic_rate=trace.magnetic_rate, **kw)


def test_minimal_file():
    text = HEADER + "0.0,0.5,1,2,3\n0.001,-0.25,1,2,3\n"
    tr = read_sensor_csv(io.StringIO(text), magnetic_rate=1000.0)
    assert tr.acoustic_rate == 1000.0
    assert np.array_equal(tr.acoustic, [0.5, -0.25])
    assert np.array_equal(tr.magnetic, [[1, 2, 3], [1, 2, 3]])


def test_missing_column_is_schema_error():
    with pytest.raises(SchemaError, match="bz_uT"):
        read_sensor_csv(io.StringIO("time_s,ax,bx_uT,by_uT\n0,0,0,0\n"))


def test_non_monotone_time_names_row():
    text = HEADER + "0.0,0,0,0,0\n0.002,0,0,0,0\n0.001,0,0,0,0\n"
    with pytest.raises(TraceDataError, match="line 4"):
        read_sensor_csv(io.StringIO(text))


def test_empty_trace_writes_header_only():
    buf = io.StringIO()
    write_sensor_csv(SensorTrace(np.zeros(0), 8000.0, np.zeros((0, 3))), buf)
    assert buf.getvalue() == HEADER


def test_irregular_timestamps_resampled():
    t = np.array([0.0, 0.0011, 0.0019, 0.003])
    rows = "".join(f"{a},{2 * a},0,0,0\n" for a in t)
    tr = read_sensor_csv(io.StringIO(HEADER + rows), magnetic_rate=500.0, acoustic_rate=1000.0)
    assert np.allclose(tr.acoustic, 2 * np.arange(4) / 1000.0)


def test_simulated_trace_round_trip():
    path = build_toolpath((10, 10, 0.2), [((20, 10, 0.2), 1800, True), ((20, 15, 0.2), 3000, False)])
    tr = simulate_emissions(path, SimConfig(seed=4))
    assert round_trip(tr).allclose(tr, atol=1e-6)


@given(st.integers(0, 2**32 - 1))
def test_round_trip_property(seed):
    tr = random_trace(np.random.default_rng(seed))
    if len(tr.acoustic) < 2:
        return  # the rate cannot be inferred from fewer than two rows
    assert round_trip(tr).allclose(tr, atol=1e-6)


def test_frame_arithmetic():
    one_s = SensorTrace(np.zeros(8000), 8000.0, np.zeros((100, 3)), 100.0)
    frames = align_channels(one_s)
    assert len(frames) == 10
    assert frames[0].acoustic.shape == (800,) and frames[0].magnetic.shape == (10, 3)
    longer = SensorTrace(np.zeros(8400), 8000.0, np.zeros((105, 3)), 100.0)
    assert len(align_channels(longer)) == 10


def test_frames_do_not_mix_boundaries():
    tr = SensorTrace(np.arange(8000.0), 8000.0, np.repeat(np.arange(100.0), 3).reshape(100, 3), 100.0)
    for i, fr in enumerate(align_channels(tr)):
        assert fr.acoustic[0] == 800 * i and fr.acoustic[-1] == 800 * i + 799
        assert np.all(fr.magnetic[:, 0] == np.arange(10 * i, 10 * i + 10))


def test_frame_too_short_for_statistics():
    tr = SensorTrace(np.zeros(8000), 8000.0, np.zeros((100, 3)), 100.0)
    with pytest.raises(ValueError, match="at least 2"):
        frame_sizes(tr, 15.0)


@given(st.integers(1, 400), st.sampled_from([50.0, 100.0, 200.0]))
def test_frame_count_is_floor_of_duration(n_mag, frame_ms):
    n = n_mag * 80
    tr = SensorTrace(np.zeros(n), 8000.0, np.zeros((n_mag, 3)), 100.0)
    expected = int(np.floor(n_mag * 10 / frame_ms + 1e-9))
    assert len(align_channels(tr, frame_ms)) == expected


def test_acoustic_db():
    tr = SensorTrace(np.array([1.0, -0.1, 0.0]), 1000.0, np.zeros((0, 3)), 100.0)
    assert np.allclose(tr.acoustic_db[:2], [0.0, -20.0])
    assert tr.acoustic_db[2] == pytest.approx(-240.0)
