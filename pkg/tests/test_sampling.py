import numpy as np
import numpy.testing as npt
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fformation.ingestion import NO_GROUP, pair_proximity, upsample_proximity
from fformation.sampling import (InputCombo, Role, SamplingError, Task, WindowSpec, build_dataset,
                                 build_pair_sample, enumerate_windows, label_membership, label_roles,
                                 load_dataset, membership_fraction, save_dataset)


class TestWindowSpec:
    def test_frames_and_stride(self):
        spec = WindowSpec(15)
        assert spec.frames_per_window == 300
        assert spec.stride_frames == 150

    def test_invalid(self):
        with pytest.raises(SamplingError):
            WindowSpec(0)
        with pytest.raises(SamplingError):
            WindowSpec(0.025)  # half a frame
        with pytest.raises(SamplingError):
            WindowSpec(15, overlap_frac=1.0)
        with pytest.raises(SamplingError):
            WindowSpec(0.05, overlap_frac=0.5)  # stride of half a frame


class TestEnumerateWindows:
    def test_ten_minutes_thirty_second_windows(self):
        w = enumerate_windows(600, WindowSpec(30))
        assert len(w) == 39
        starts = [lo / 20 for lo, _ in w]
        assert starts == [15.0 * i for i in range(39)]
        assert w[-1] == (11400, 12000)

    def test_exhaustive_oracle(self):
        # every frame offset that is a stride multiple and keeps the window inside the session
        spec = WindowSpec(30)
        oracle = [(s, s + 600) for s in range(0, 12000) if s % 300 == 0 and s + 600 <= 12000]
        assert enumerate_windows(600, spec) == oracle

    def test_exactly_one(self):
        assert enumerate_windows(30, WindowSpec(30)) == [(0, 600)]

    def test_too_short(self):
        assert enumerate_windows(29, WindowSpec(30)) == []

    @given(st.integers(10, 400), st.sampled_from([10, 15, 25, 30, 40]))
    def test_count_formula(self, duration, length):
        spec = WindowSpec(length)
        w = enumerate_windows(duration, spec)
        n = duration * 20
        expected = (n - spec.frames_per_window) // spec.stride_frames + 1 if n >= spec.frames_per_window else 0
        assert len(w) == expected
        assert all(hi <= n for _, hi in w)


class TestBuildPairSample:
    def setup_method(self):
        rng = np.random.default_rng(1)
        self.a = rng.normal(size=(1200, 3))
        self.b = rng.normal(size=(1200, 3))
        self.prox = np.repeat(rng.integers(0, 2, 60), 20).astype(np.uint8)

    def test_fusion_shape(self):
        x = build_pair_sample(self.a, self.b, self.prox, (0, 300), InputCombo.FUSION)
        assert x.shape == (300, 7)
        npt.assert_array_equal(x[:, 0:3], self.a[:300])
        npt.assert_array_equal(x[:, 3:6], self.b[:300])
        npt.assert_array_equal(x[:, 6], self.prox[:300])

    def test_proximity_shape(self):
        x = build_pair_sample(self.a, self.b, self.prox, (300, 600), InputCombo.PROXIMITY)
        assert x.shape == (300, 1)

    def test_acceleration_shape(self):
        x = build_pair_sample(self.a, self.b, self.prox, (0, 600), InputCombo.ACCELERATION)
        assert x.shape == (600, 6)

    def test_gap_skips(self):
        a = self.a.copy()
        a[450] = np.nan
        assert build_pair_sample(a, self.b, self.prox, (300, 600), InputCombo.PROXIMITY) is None
        assert build_pair_sample(a, self.b, self.prox, (0, 300), InputCombo.FUSION) is not None


def rasters_for(shared_frames, n=600):
    a = np.full(n, NO_GROUP)
    b = np.full(n, NO_GROUP)
    a[:shared_frames] = 0
    b[:shared_frames] = 0
    return a, b


class TestLabelMembership:
    def test_400_of_600(self):
        a, b = rasters_for(400)
        assert membership_fraction(a, b, (0, 600)) == pytest.approx(400 / 600)
        assert label_membership(a, b, (0, 600)) == 1

    def test_395_of_600(self):
        a, b = rasters_for(395)
        assert label_membership(a, b, (0, 600)) == 0

    def test_never_co_grouped(self):
        a = np.zeros(600, dtype=int)
        b = np.ones(600, dtype=int)
        assert label_membership(a, b, (0, 600)) == 0
        assert label_membership(np.full(600, NO_GROUP), np.full(600, NO_GROUP), (0, 600)) == 0

    def test_threshold_closed(self):
        a, b = rasters_for(66, n=100)
        assert label_membership(a, b, (0, 100)) == 1
        assert label_membership(a, b, (0, 100), threshold=0.67) == 0


class TestLabelRoles:
    def test_exactly_thirty_percent(self):
        sa = np.zeros(600, dtype=bool)
        sa[:180] = True  # 9 s of 30 s
        sb = np.zeros(600, dtype=bool)
        assert label_roles(sa, sb, (0, 600), 1) is Role.SPEAKER_LISTENER
        assert label_roles(sb, sa, (0, 600), 1) is Role.SPEAKER_LISTENER

    def test_both_half(self):
        s = np.zeros(600, dtype=bool)
        s[::2] = True
        assert label_roles(s, s, (0, 600), 1) is Role.SPEAKER_SPEAKER

    def test_membership_gates(self):
        s = np.ones(600, dtype=bool)
        assert label_roles(s, s, (0, 600), 0) is Role.NO_INTERACTION

    def test_listeners(self):
        s = np.zeros(600, dtype=bool)
        assert label_roles(s, s, (0, 600), 1) is Role.LISTENER_LISTENER


def dyads_scene(session_factory, **kw):
    return session_factory(["A", "B", "C", "D"], 15,
                           groups=[(0, 15, "g1", {"A", "B"}), (0, 15, "g2", {"C", "D"})], **kw)


class TestBuildDataset:
    def test_four_participants_one_window(self, session_factory):
        ds = build_dataset(dyads_scene(session_factory), WindowSpec(15), "fusion")
        assert len(ds) == 6

    def test_two_dyads_scene(self, session_factory):
        ds = build_dataset(dyads_scene(session_factory), WindowSpec(15), "fusion")
        positives = {p for p, y in zip(ds.pairs, ds.labels) if y == 1}
        assert positives == {("A", "B"), ("C", "D")}
        assert ds.label_counts == [4, 2]

    def test_upper_bound(self, session_factory):
        ids = [f"p{i}" for i in range(10)]
        ds = build_dataset(session_factory(ids, 600), WindowSpec(30), "proximity")
        assert len(ds) <= 45 * 39
        assert len(ds) == 45 * 39

    def test_too_few_participants(self, session_factory):
        with pytest.raises(SamplingError, match="at least 2"):
            build_dataset(session_factory(["A"], 30), WindowSpec(15), "fusion")

    def test_gap_skips_and_counts(self, session_factory):
        s = session_factory(["A", "B", "C"], 30, gaps={"A": (10.0, 11.0)})
        ds = build_dataset(s, WindowSpec(15), "acceleration")
        # 3 windows (0-15, 7.5-22.5, 15-30); A's gap hits the first two for pairs AB and AC
        assert ds.skipped == 4
        assert len(ds) == 3 * 3 - 4
        assert ds.manifest()["skipped"] == 4

    def test_unique_keys_and_counts(self, session_factory):
        ds = build_dataset(dyads_scene(session_factory), WindowSpec(5), "fusion")
        keys = list(zip(ds.pairs, ds.window_index.tolist()))
        assert len(set(keys)) == len(keys)
        assert sum(ds.label_counts) == len(ds)

    def test_joint4_partitions_positives(self, session_factory):
        speaking = {"A": [(0, 15)], "C": [(0, 15)], "D": [(0, 15)]}
        s = dyads_scene(session_factory, speaking=speaking)
        binary = build_dataset(s, WindowSpec(15), "fusion", Task.BINARY)
        joint = build_dataset(s, WindowSpec(15), "fusion", Task.JOINT4)
        counts = joint.label_counts
        assert counts[0] == binary.label_counts[0]
        assert sum(counts[1:]) == binary.label_counts[1]
        roles = dict(zip(joint.pairs, joint.labels.tolist()))
        assert roles[("A", "B")] == Role.SPEAKER_LISTENER
        assert roles[("C", "D")] == Role.SPEAKER_SPEAKER
        assert roles[("A", "C")] == Role.NO_INTERACTION
        npt.assert_array_equal(joint.membership, binary.labels)

    def test_proximity_channel_matches_ingestion(self, session_factory):
        det = {"A": {2: {"B"}, 9: {"C"}}, "B": {5: {"A"}}}
        s = session_factory(["A", "B", "C"], 20, detections=det)
        ds = build_dataset(s, WindowSpec(10), "fusion")
        for i in range(len(ds)):
            a, b = ds.pairs[i]
            full = upsample_proximity(pair_proximity(s.proximity.stream(a), s.proximity.stream(b), (a, b)))
            lo = int(ds.window_index[i]) * 100
            npt.assert_array_equal(ds.data[i][:, 6], full[lo:lo + 200])
            assert set(np.unique(ds.data[i][:, 6])) <= {0.0, 1.0}

    def test_swapping_ids_gives_same_samples(self, session_factory):
        groups = [(0, 15, "g", {"A", "B"})]
        s1 = session_factory(["A", "B"], 15, groups=groups)
        # same streams, registered in the other order
        s2 = session_factory(["A", "B"], 15, groups=groups)
        s2.accel = dict(reversed(list(s2.accel.items())))
        d1 = build_dataset(s1, WindowSpec(15), "fusion")
        d2 = build_dataset(s2, WindowSpec(15), "fusion")
        assert d1.pairs == d2.pairs == [("A", "B")]
        npt.assert_array_equal(d1.data, d2.data)

    def test_windows_never_span_sessions(self, session_factory):
        s1 = session_factory(["A", "B"], 20, name="one")
        s2 = session_factory(["A", "B"], 20, name="two")
        ds = build_dataset([s1, s2], WindowSpec(10), "proximity")
        assert ds.window_index.tolist() == [0, 1, 2, 3, 4, 5]
        assert [seg["first_window"] for seg in ds.segments] == [0, 3]

    def test_order_independent(self, session_factory):
        s = dyads_scene(session_factory)
        d1 = build_dataset(s, WindowSpec(5), "fusion")
        s.accel = dict(sorted(s.accel.items(), reverse=True))
        d2 = build_dataset(s, WindowSpec(5), "fusion")
        assert d1.pairs == d2.pairs
        npt.assert_array_equal(d1.data, d2.data)

    @settings(max_examples=25, deadline=None)
    @given(st.floats(0.3, 0.9), st.floats(0.3, 0.9))
    def test_threshold_monotone(self, t1, t2):
        import fformation.synth as synth

        if not hasattr(TestBuildDataset, "_session"):
            cfg = synth.SynthConfig(seed=5, n_participants=6, session_s=120, max_window_s=10)
            TestBuildDataset._session = synth.generate(cfg).to_session()
        lo, hi = sorted((t1, t2))
        s = TestBuildDataset._session
        a = build_dataset(s, WindowSpec(10), "proximity", membership_threshold=lo)
        b = build_dataset(s, WindowSpec(10), "proximity", membership_threshold=hi)
        assert b.label_counts[1] <= a.label_counts[1]


class TestDatasetExport:
    def test_round_trip(self, tmp_path, session_factory):
        ds = build_dataset(dyads_scene(session_factory), WindowSpec(5), "fusion", Task.JOINT4)
        path = save_dataset(ds, tmp_path / "cell")
        assert (tmp_path / "cell.manifest.json").exists()
        back = load_dataset(path)
        npt.assert_array_equal(back.data, ds.data)
        assert back.pairs == ds.pairs
        assert back.task is Task.JOINT4
        assert back.manifest() == ds.manifest()
