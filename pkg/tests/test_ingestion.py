import logging

import numpy as np
import numpy.testing as npt
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fformation.ingestion import (NO_GROUP, AccelStream, AnnotationTrack, FormationInterval,
                                  IngestionError, ProximityStream, UniformTimeline, evaluate_annotations,
                                  load_accel_stream, load_annotations, load_proximity_events,
                                  load_session, pair_proximity, upsample_proximity)


def write(path, text):
    path.write_text(text, encoding="utf-8")
    return path


class TestLoadAccelStream:
    def test_three_rows_in_file_order(self, tmp_path):
        p = write(tmp_path / "a1_accel.csv", "t,x,y,z\n0.00,1,2,3\n0.05,4,5,6\n0.10,7,8,9\n")
        s = load_accel_stream(p)
        assert s.participant_id == "a1"
        assert len(s) == 3
        npt.assert_array_equal(s.samples, [[1, 2, 3], [4, 5, 6], [7, 8, 9]])

    def test_backwards_timestamp_names_row_2(self, tmp_path):
        p = write(tmp_path / "a1_accel.csv", "t,x,y,z\n1.0,0,0,0\n0.5,0,0,0\n")
        with pytest.raises(IngestionError, match="row 2"):
            load_accel_stream(p)

    def test_ten_minutes_at_20hz(self, tmp_path):
        rows = "".join(f"{i / 20:.2f},0,0,1\n" for i in range(12000))
        p = write(tmp_path / "b_accel.csv", "t,x,y,z\n" + rows)
        s = load_accel_stream(p)
        assert abs(len(s) - 600 * 20) <= 1
        assert s.duration_s == pytest.approx(600.0)

    def test_missing_axis_rejected_with_row(self, tmp_path):
        p = write(tmp_path / "a_accel.csv", "t,x,y,z\n0,1,2,3\n0.05,1,2\n")
        with pytest.raises(IngestionError, match="row 2"):
            load_accel_stream(p)

    def test_non_numeric_rejected(self, tmp_path):
        p = write(tmp_path / "a_accel.csv", "t,x,y,z\n0,1,two,3\n")
        with pytest.raises(IngestionError, match="row 1: non-numeric"):
            load_accel_stream(p)

    def test_bad_header_and_name(self, tmp_path):
        p = write(tmp_path / "a_accel.csv", "time,x,y,z\n0,1,2,3\n")
        with pytest.raises(IngestionError, match="header"):
            load_accel_stream(p)
        q = write(tmp_path / "a.csv", "t,x,y,z\n0,1,2,3\n")
        with pytest.raises(IngestionError, match="named"):
            load_accel_stream(q)

    def test_stream_invariants(self):
        with pytest.raises(IngestionError):
            AccelStream("a", [0.0], np.zeros((1, 2)))
        with pytest.raises(IngestionError):
            AccelStream("a", [0.0, 0.1], np.zeros((2, 3)), rate_hz=0)
        with pytest.raises(IngestionError):
            AccelStream("a", [], np.zeros((0, 3)))


class TestLoadProximityEvents:
    def test_grouped_per_second(self, tmp_path):
        p = write(tmp_path / "proximity.csv", "t,detector,detected\n0,A,B\n0,A,C\n")
        ev = load_proximity_events(p)
        assert ev.stream("A").detections[0] == frozenset({"B", "C"})

    def test_self_detection_dropped_and_counted(self, tmp_path, caplog):
        p = write(tmp_path / "proximity.csv", "t,detector,detected\n2,A,B\n5,A,A\n")
        with caplog.at_level(logging.WARNING):
            ev = load_proximity_events(p)
        assert ev.dropped_self == 1
        assert 5 not in ev.stream("A").detections
        assert "self-detection" in caplog.text

    def test_self_detection_strict(self, tmp_path):
        p = write(tmp_path / "proximity.csv", "t,detector,detected\n5,A,A\n")
        with pytest.raises(IngestionError, match="detects itself"):
            load_proximity_events(p, strict=True)

    def test_empty_file_is_valid(self, tmp_path):
        p = write(tmp_path / "proximity.csv", "t,detector,detected\n")
        ev = load_proximity_events(p)
        assert ev.n_detections == 0
        assert ev.dropped_self == 0

    def test_unknown_participant(self, tmp_path):
        p = write(tmp_path / "proximity.csv", "t,detector,detected\n0,A,Z\n")
        with pytest.raises(IngestionError, match="unknown participant 'Z'"):
            load_proximity_events(p, participants=["A", "B"])

    def test_fractional_second_rejected(self, tmp_path):
        p = write(tmp_path / "proximity.csv", "t,detector,detected\n0.5,A,B\n")
        with pytest.raises(IngestionError, match="integer second"):
            load_proximity_events(p)

    def test_stream_never_detects_itself(self):
        with pytest.raises(IngestionError):
            ProximityStream("A", {0: frozenset({"A"})}, 5)


def stream(det, seconds, n=10):
    return ProximityStream(det, {s: frozenset(others) for s, others in seconds.items()}, n)


class TestPairProximity:
    def test_one_sided_detection(self):
        a = stream("A", {3: {"B"}})
        b = stream("B", {})
        out = pair_proximity(a, b)
        expected = np.zeros(10, dtype=np.uint8)
        expected[3] = 1
        npt.assert_array_equal(out, expected)

    def test_no_detection(self):
        npt.assert_array_equal(pair_proximity(stream("A", {}), stream("B", {})), np.zeros(10))

    def test_mutual_detection(self):
        out = pair_proximity(stream("A", {7: {"B"}}), stream("B", {7: {"A"}}))
        assert out[7] == 1
        assert out.sum() == 1

    def test_mismatched_spans(self):
        with pytest.raises(IngestionError, match="spans differ"):
            pair_proximity(stream("A", {}, 10), stream("B", {}, 11))

    def test_matches_or_rule(self):
        # the OR rule evaluated second by second
        rng = np.random.default_rng(3)
        ab = rng.random(60) < 0.3
        ba = rng.random(60) < 0.3
        a = stream("A", {int(s): {"B"} for s in np.flatnonzero(ab)}, 60)
        b = stream("B", {int(s): {"A"} for s in np.flatnonzero(ba)}, 60)
        expected = [1 if (ab[s] or ba[s]) else 0 for s in range(60)]
        npt.assert_array_equal(pair_proximity(a, b), expected)

    @given(st.lists(st.tuples(st.booleans(), st.booleans()), min_size=1, max_size=40))
    def test_symmetric(self, bits):
        n = len(bits)
        a = stream("A", {s: {"B"} for s, (x, _) in enumerate(bits) if x}, n)
        b = stream("B", {s: {"A"} for s, (_, y) in enumerate(bits) if y}, n)
        npt.assert_array_equal(pair_proximity(a, b), pair_proximity(b, a))


class TestUpsampleProximity:
    def test_hold(self):
        npt.assert_array_equal(upsample_proximity([1, 0]), [1] * 20 + [0] * 20)

    def test_single_zero(self):
        npt.assert_array_equal(upsample_proximity([0]), np.zeros(20))

    def test_length(self):
        assert len(upsample_proximity(np.zeros(600))) == 12000

    def test_empty_rejected(self):
        with pytest.raises(IngestionError):
            upsample_proximity([])

    @given(st.lists(st.integers(0, 1), min_size=1, max_size=200))
    def test_downsample_recovers(self, seq):
        up = upsample_proximity(np.array(seq, dtype=np.uint8))
        npt.assert_array_equal(up[::20], seq)


class TestEvaluateAnnotations:
    def test_half_open_interval(self):
        track = AnnotationTrack((FormationInterval(0.0, 1.0, "G1", frozenset({"A", "B"})),))
        r = evaluate_annotations(track, UniformTimeline(100))
        for p in ("A", "B"):
            assert np.all(r.membership[p][:20] == 0)
            assert r.membership[p][20] == NO_GROUP
        assert r.group_names == ["G1"]

    def test_empty_track(self):
        r = evaluate_annotations(AnnotationTrack(), UniformTimeline(50), ["A"])
        assert np.all(r.membership["A"] == NO_GROUP)
        assert not r.speaking["A"].any()

    def test_short_speaking_interval(self):
        track = AnnotationTrack(speaking_intervals={"A": [(2.0, 2.05)]})
        r = evaluate_annotations(track, UniformTimeline(100))
        npt.assert_array_equal(np.flatnonzero(r.speaking["A"]), [40])

    def test_overlapping_groups_rejected(self):
        with pytest.raises(IngestionError, match="same time"):
            AnnotationTrack((FormationInterval(0, 2, "G1", frozenset({"A", "B"})),
                             FormationInterval(1, 3, "G2", frozenset({"A", "C"}))))

    def test_adjacent_intervals_tile(self):
        track = AnnotationTrack((FormationInterval(0, 1, "G1", frozenset({"A", "B"})),
                                 FormationInterval(1, 2, "G2", frozenset({"A", "C"}))))
        r = evaluate_annotations(track, UniformTimeline(40))
        assert np.all(r.membership["A"] != NO_GROUP)
        assert (r.membership["A"] == 0).sum() == 20

    def test_speaking_overlaps_merged(self):
        track = AnnotationTrack(speaking_intervals={"A": [(0, 2), (1, 3), (5, 6)]})
        assert track.speaking_intervals["A"] == ((0.0, 3.0), (5.0, 6.0))

    def test_interval_end_must_exceed_start(self):
        with pytest.raises(IngestionError):
            AnnotationTrack((FormationInterval(1, 1, "G", frozenset({"A", "B"})),))

    @settings(max_examples=50)
    @given(st.lists(st.tuples(st.integers(0, 200), st.integers(1, 40)), min_size=1, max_size=8))
    def test_speaking_frame_count(self, spans):
        # grid-aligned bounds: flagged frames = sum of round(duration * 20) after merging
        intervals = [(s / 20, (s + d) / 20) for s, d in spans]
        track = AnnotationTrack(speaking_intervals={"A": intervals})
        r = evaluate_annotations(track, UniformTimeline(400))
        expected = sum(round((e - s) * 20) for s, e in track.speaking_intervals["A"])
        assert r.speaking["A"].sum() == expected

    @settings(max_examples=50)
    @given(st.lists(st.tuples(st.integers(0, 19), st.integers(1, 10), st.sampled_from("ABCD")),
                    min_size=1, max_size=6))
    def test_single_group_per_frame(self, specs):
        ivs = [FormationInterval(float(s), float(s + d), f"G{i}", frozenset({m, "Z"}))
               for i, (s, d, m) in enumerate(specs)]
        try:
            track = AnnotationTrack(tuple(ivs))
        except IngestionError:
            return
        r = evaluate_annotations(track, UniformTimeline(600))
        for p, codes in r.membership.items():
            for iv in ivs:
                if p in iv.members:
                    lo, hi = int(iv.start * 20), int(iv.end * 20)
                    assert np.all(codes[lo:hi] == r.group_names.index(iv.group))


class TestLoadAnnotations:
    def test_round_trip(self, tmp_path):
        p = write(tmp_path / "annotations.csv",
                  "kind,start,end,subject,group\n"
                  "fformation,0,10,A;B,g1\n"
                  "speaking,1,2.5,A,\n")
        track = load_annotations(p)
        assert track.fformation_intervals[0].members == frozenset({"A", "B"})
        assert track.speaking_intervals["A"] == ((1.0, 2.5),)

    def test_unknown_kind(self, tmp_path):
        p = write(tmp_path / "annotations.csv", "kind,start,end,subject,group\nlaugh,0,1,A,\n")
        with pytest.raises(IngestionError, match="unknown kind"):
            load_annotations(p)


class TestLoadSession:
    def test_directory(self, tmp_path):
        rows = "".join(f"{i / 20:.2f},0,0,1\n" for i in range(200))
        for p in ("A", "B"):
            write(tmp_path / f"{p}_accel.csv", "t,x,y,z\n" + rows)
        write(tmp_path / "proximity.csv", "t,detector,detected\n3,A,B\n")
        write(tmp_path / "annotations.csv", "kind,start,end,subject,group\nfformation,0,10,A;B,g\n")
        s = load_session(tmp_path)
        assert s.participants == ["A", "B"]
        assert s.duration_s == 10
        prox = s.pair_proximity_frames("A", "B")
        assert len(prox) == s.timeline.n_frames == 200
        npt.assert_array_equal(np.flatnonzero(prox), np.arange(60, 80))

    def test_gap_frames_are_nan(self):
        times = np.r_[np.arange(0, 20), np.arange(40, 60)] / 20.0
        s = AccelStream("A", times, np.ones((40, 3)))
        grid = s.on_timeline(UniformTimeline(60))
        assert np.isnan(grid[20:40]).all()
        assert not np.isnan(grid[:20]).any()

    def test_offset_shifts_samples(self):
        s = AccelStream("A", np.arange(10) / 20.0, np.arange(30.0).reshape(10, 3), offset_s=0.1)
        grid = s.on_timeline(UniformTimeline(12))
        assert np.isnan(grid[:2]).all()
        npt.assert_array_equal(grid[2], [0, 1, 2])
