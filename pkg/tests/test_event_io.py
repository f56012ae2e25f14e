import io

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from eventmvs.event_io import (
    Calibration,
    Event,
    Events,
    ParseError,
    ValidationError,
    format_events,
    parse_calibration,
    parse_events,
    parse_key_values,
    parse_trajectory,
    read_depth_csv,
    read_pgm16,
    read_point_cloud,
    write_calibration,
    write_depth_map,
    write_point_cloud,
)


class TestParseEvents:
    def test_single_line(self):
        ev = parse_events(io.StringIO("0.003811 96 133 0\n"))
        assert len(ev) == 1
        assert ev[0] == Event(96, 133, 0.003811, -1)

    def test_positive_polarity(self):
        assert parse_events(io.StringIO("0.5 1 2 1")).p[0] == 1

    def test_empty_file(self):
        assert len(parse_events(io.StringIO(""))) == 0

    def test_blank_lines_are_skipped(self):
        assert len(parse_events(io.StringIO("\n0.1 1 1 0\n\n0.2 2 2 1\n"))) == 2

    def test_out_of_range_x(self, cal):
        with pytest.raises(ValidationError):
            parse_events(io.StringIO("0.1 300 10 1"), cal)

    def test_negative_coordinate(self, cal):
        with pytest.raises(ValidationError):
            parse_events(io.StringIO("0.1 -1 10 1"), cal)

    def test_malformed_line_carries_line_number(self):
        with pytest.raises(ParseError) as err:
            parse_events(io.StringIO("0.1 1 1 0\n0.2 1 x 0\n"))
        assert err.value.line == 2

    def test_wrong_field_count(self):
        with pytest.raises(ParseError) as err:
            parse_events(io.StringIO("0.1 1 1\n"))
        assert err.value.line == 1

    def test_bad_polarity(self):
        with pytest.raises(ParseError):
            parse_events(io.StringIO("0.1 1 1 2\n"))

    def test_negative_timestamp(self):
        with pytest.raises(ValidationError):
            parse_events(io.StringIO("-0.1 1 1 0\n"))

    def test_file_order_kept(self):
        ev = parse_events(io.StringIO("0.2 1 1 0\n0.1 2 2 0\n"))
        assert list(ev.x) == [1, 2]

    @settings(max_examples=50, deadline=None)
    @given(
        st.lists(
            st.tuples(
                st.floats(0, 1e4, allow_nan=False),
                st.integers(0, 239),
                st.integers(0, 179),
                st.sampled_from([-1, 1]),
            ),
            max_size=40,
        )
    )
    def test_round_trip(self, rows):
        ev = Events.from_events(Event(x, y, t, p) for t, x, y, p in rows)
        back = parse_events(io.StringIO(format_events(ev)))
        assert np.array_equal(back.t, ev.t)
        assert np.array_equal(back.x, ev.x)
        assert np.array_equal(back.y, ev.y)
        assert np.array_equal(back.p, ev.p)


class TestParseTrajectory:
    def test_identity(self):
        (s,) = parse_trajectory(io.StringIO("0 0 0 0 0 0 0 1\n"))
        assert s.t == 0 and s.position == (0, 0, 0) and s.orientation == (0, 0, 0, 1)

    def test_equal_timestamps_rejected(self):
        with pytest.raises(ValidationError):
            parse_trajectory(io.StringIO("0 0 0 0 0 0 0 1\n0 1 0 0 0 0 0 1\n"))

    def test_decreasing_timestamps_rejected(self):
        with pytest.raises(ValidationError):
            parse_trajectory(io.StringIO("1 0 0 0 0 0 0 1\n0.5 1 0 0 0 0 0 1\n"))

    def test_near_unit_quaternion_renormalized(self):
        (s,) = parse_trajectory(io.StringIO("0 1 2 3 0 0 0 0.9995\n"))
        assert s.position == (1, 2, 3)
        assert s.orientation[3] == pytest.approx(1.0, abs=1e-15)

    def test_non_unit_quaternion_rejected(self):
        with pytest.raises(ValidationError):
            parse_trajectory(io.StringIO("0 0 0 0 0 0 0 0.9\n"))

    def test_wrong_field_count(self):
        with pytest.raises(ParseError):
            parse_trajectory(io.StringIO("0 0 0 0 0 0 1\n"))

    @settings(max_examples=30, deadline=None)
    @given(st.lists(st.floats(0, 100, allow_nan=False), min_size=1, max_size=20, unique=True))
    def test_accepted_files_strictly_increasing(self, times):
        text = "".join(f"{t!r} 0 0 0 0 0 0 1\n" for t in sorted(times))
        out = parse_trajectory(io.StringIO(text))
        assert all(a.t < b.t for a, b in zip(out, out[1:]))


class TestCalibration:
    def test_round_trip(self, tmp_path):
        cal = Calibration(240, 180, 199.1, 198.7, 121.5, 88.0, (-0.1, 0.02, 0.001, -0.002, 0.0))
        write_calibration(cal, tmp_path / "c.txt")
        assert parse_calibration(tmp_path / "c.txt") == cal

    def test_missing_key(self):
        with pytest.raises(ParseError):
            parse_calibration(io.StringIO("w = 240\nh = 180\n"))

    def test_principal_point_outside_sensor(self):
        with pytest.raises(ValidationError):
            Calibration(240, 180, 200, 200, 250, 90)

    def test_key_values_with_comments(self):
        kv = parse_key_values(io.StringIO("# header\na = 1  # trailing\nb 2\n"))
        assert kv == {"a": "1", "b": "2"}


class TestPointCloud:
    def test_empty(self, tmp_path):
        write_point_cloud([], tmp_path / "e.ply")
        text = (tmp_path / "e.ply").read_text()
        assert "element vertex 0" in text
        assert text.endswith("end_header\n")

    def test_single_point(self, tmp_path):
        write_point_cloud([(1, 2, 3)], tmp_path / "p.ply")
        lines = (tmp_path / "p.ply").read_text().splitlines()
        assert "element vertex 1" in lines
        assert lines[-1] == "1 2 3"

    def test_nan_rejected(self, tmp_path):
        with pytest.raises(ValidationError):
            write_point_cloud([(1, float("nan"), 3)], tmp_path / "n.ply")

    def test_unwritable_path(self, tmp_path):
        with pytest.raises(OSError):
            write_point_cloud([(1, 2, 3)], tmp_path / "missing" / "p.ply")

    @settings(max_examples=25, deadline=None)
    @given(st.integers(0, 50))
    def test_vertex_count_matches(self, n):
        import tempfile
        from pathlib import Path

        pts = np.random.default_rng(n).normal(size=(n, 3))
        with tempfile.TemporaryDirectory() as d:
            write_point_cloud(pts, Path(d) / "x.ply")
            back = read_point_cloud(Path(d) / "x.ply")
        assert back.shape == (n, 3)
        assert np.array_equal(back, pts)


class TestDepthMap:
    def test_all_empty(self, tmp_path):
        depth = np.full((2, 2), np.nan)
        csv_path, pgm_path = write_depth_map(depth, np.zeros((2, 2)), tmp_path / "d")
        assert csv_path.read_text() == ",\n,\n"
        assert np.array_equal(read_pgm16(pgm_path), np.zeros((2, 2)))

    def test_single_cell(self, tmp_path):
        csv_path, _ = write_depth_map(np.array([[1.5]]), np.array([[3]]), tmp_path / "d")
        assert csv_path.read_text() == "1.5\n"

    def test_confidence_max_value(self, tmp_path):
        conf = np.zeros((3, 4))
        conf[1, 2] = 65535
        _, pgm_path = write_depth_map(np.full((3, 4), np.nan), conf, tmp_path / "d")
        raw = pgm_path.read_bytes()
        assert raw.startswith(b"P5\n4 3\n65535\n")
        img = read_pgm16(pgm_path)
        assert img[1, 2] == 65535 and img.sum() == 65535

    def test_dimension_mismatch(self, tmp_path):
        with pytest.raises(ValidationError):
            write_depth_map(np.zeros((2, 3)), np.zeros((3, 2)), tmp_path / "d")

    def test_csv_round_trip(self, tmp_path):
        depth = np.array([[1.25, np.nan], [np.nan, 2.0]])
        csv_path, _ = write_depth_map(depth, np.zeros((2, 2)), tmp_path / "d")
        assert np.array_equal(read_depth_csv(csv_path), depth, equal_nan=True)
