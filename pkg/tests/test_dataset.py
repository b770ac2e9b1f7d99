"""Tests for src/dataset.py — labels, observations, task and meta datasets."""

import numpy as np
import pytest

from src.dataset import (
    AffineNorm,
    LabelMode,
    MetaDataset,
    build_meta_dataset,
    device_order,
    make_labels,
    make_observations,
    observation_features,
    split_sequence,
    window_labels,
)
from src.errors import ConfigError, DataError, SequenceTooShortError
from src.scenario import ChannelTrace

WINDOWS = [(0, 1), (0, 25), (25, 3), (5, 7)]


def _brute_force(blocked, mode, xi, tau):
    num_slots = len(blocked)
    z = np.zeros(num_slots, dtype=np.uint8)
    for t in range(num_slots - xi - tau):
        window = blocked[t + xi + 1 : t + xi + tau + 1]
        z[t] = window.any() if mode == "any" else window.all()
    return z


def _vectorized_scan(blocked, mode, xi, tau):
    """Same scan with a sliding window view, for long traces."""
    num_slots = len(blocked)
    n_valid = num_slots - xi - tau
    windows = np.lib.stride_tricks.sliding_window_view(blocked[xi + 1 :], tau)[:n_valid]
    z = np.zeros(num_slots, dtype=np.uint8)
    z[:n_valid] = windows.any(axis=1) if mode == "any" else windows.all(axis=1)
    return z


def _trace_from_db(snr_db):
    snr = 10.0 ** (np.atleast_2d(np.asarray(snr_db, dtype=np.float64)) / 10.0)
    return ChannelTrace(snr=snr, zeta=np.ones_like(snr))


def _bursty(rng, num_slots, p_start=0.02, p_stop=0.2):
    blocked = np.zeros(num_slots, dtype=bool)
    state = False
    flips = rng.random(num_slots)
    for t in range(num_slots):
        state = flips[t] < p_start if not state else flips[t] >= p_stop
        blocked[t] = state
    return blocked


class TestLabels:
    def test_single_slot_window(self):
        blocked = np.array([0, 1, 0, 0, 1, 1, 0], dtype=bool)
        z, n_valid = window_labels(blocked, "any", 0, 1)
        assert n_valid == 6
        np.testing.assert_array_equal(z[:6], blocked[1:])
        assert z[6] == 0

    def test_any_vs_all_example(self):
        trace = _trace_from_db([0.0, 0.0, -25.0, 0.0, 0.0])
        any_labels = make_labels(trace, 0, LabelMode.ANY, xi=1, tau=2, gamma0_db=-20.0)
        all_labels = make_labels(trace, 0, LabelMode.ALL, xi=1, tau=2, gamma0_db=-20.0)
        assert any_labels.z[0] == 1
        assert all_labels.z[0] == 0
        assert any_labels.num_valid == 2
        assert not any_labels.valid[2:].any()

    @pytest.mark.parametrize("xi,tau", WINDOWS)
    @pytest.mark.parametrize("mode", ["any", "all"])
    def test_matches_brute_force(self, mode, xi, tau):
        rng = np.random.default_rng(xi * 100 + tau)
        for _ in range(5):
            blocked = _bursty(rng, 2000)
            z, _ = window_labels(blocked, mode, xi, tau)
            np.testing.assert_array_equal(z, _brute_force(blocked, mode, xi, tau))

    @pytest.mark.slow
    @pytest.mark.parametrize("xi,tau", WINDOWS)
    def test_matches_scan_on_long_traces(self, xi, tau):
        rng = np.random.default_rng(tau)
        for _ in range(100):
            blocked = _bursty(rng, 100_000)
            for mode in ("any", "all"):
                z, _ = window_labels(blocked, mode, xi, tau)
                np.testing.assert_array_equal(z, _vectorized_scan(blocked, mode, xi, tau))

    def test_all_below_any(self):
        blocked = _bursty(np.random.default_rng(1), 5000)
        for xi, tau in WINDOWS:
            z_any, _ = window_labels(blocked, "any", xi, tau)
            z_all, _ = window_labels(blocked, "all", xi, tau)
            assert np.all(z_all <= z_any)

    def test_monotone_in_threshold(self):
        rng = np.random.default_rng(4)
        trace = _trace_from_db(rng.normal(-15.0, 8.0, size=3000))
        for mode in ("any", "all"):
            high = make_labels(trace, 0, mode, 0, 5, gamma0_db=-15.0).z
            low = make_labels(trace, 0, mode, 0, 5, gamma0_db=-25.0).z
            assert np.all(low <= high)

    def test_window_errors(self):
        blocked = np.zeros(10, dtype=bool)
        with pytest.raises(ConfigError):
            window_labels(blocked, "any", -1, 2)
        with pytest.raises(ConfigError):
            window_labels(blocked, "any", 0, 0)
        with pytest.raises(SequenceTooShortError):
            window_labels(blocked, "any", 5, 5)
        with pytest.raises(ValueError):
            window_labels(blocked, "some", 0, 1)


class TestObservations:
    def test_row_width(self):
        rng = np.random.default_rng(0)
        trace = _trace_from_db(rng.normal(0, 5, size=(20, 30)))
        obs = make_observations(trace, 3)
        assert obs.obs.shape == (30, 40)
        assert obs.order[0] == 3

    def test_masked_feature(self):
        trace = _trace_from_db([[0.0, -25.0, -20.0, 5.0]])
        feats = observation_features(trace.snr, -20.0)
        np.testing.assert_array_equal(feats[:, 0, 0], [0, 1, 1, 0])
        # below or at threshold: clamp value, never the SNR
        assert feats[1, 0, 1] == 0.0
        assert feats[2, 0, 1] == 0.0
        assert feats[0, 0, 1] == pytest.approx(1.0)
        assert feats[3, 0, 1] == pytest.approx(1.25)

    def test_permutation_between_targets(self):
        rng = np.random.default_rng(2)
        trace = _trace_from_db(rng.normal(-10, 10, size=(5, 50)))
        a = make_observations(trace, 1).obs.reshape(50, 5, 2)
        b = make_observations(trace, 4).obs.reshape(50, 5, 2)
        for t in range(50):
            assert sorted(map(tuple, a[t])) == sorted(map(tuple, b[t]))
        assert np.array_equal(a[:, 0], b[:, 2])  # device 1 sits at position 2 in device 4's order

    def test_device_order(self):
        assert device_order(4, 2) == (2, 0, 1, 3)
        with pytest.raises(DataError):
            device_order(4, 4)

    def test_norm(self):
        norm = AffineNorm.from_threshold(-20.0)
        assert norm.apply(np.array([-20.0, 0.0]))[1] == pytest.approx(1.0)


class TestTaskDataset:
    def test_observations_agree_with_make_observations(self, small_meta_ds):
        task = small_meta_ds.tasks[0]
        expected = make_observations(task.trace(), 2, task.gamma0_db).obs
        np.testing.assert_array_equal(task.observations(2), expected)

    def test_device_sequence(self, small_meta_ds):
        seq = small_meta_ds.device_sequence(1, 0)
        assert seq.obs.shape == (600, 6)
        assert seq.labels.shape == (600,)
        assert seq.num_valid == 600 - 0 - 5
        assert seq.task_id == 1

    def test_split(self, small_meta_ds):
        task = small_meta_ds.tasks[0]
        train, test = split_sequence(task)
        assert (train.num_slots, test.num_slots) == (300, 300)
        assert test.offset == 300
        np.testing.assert_array_equal(np.concatenate([train.observations(0), test.observations(0)]), task.observations(0))
        # the prefix's last labels are invalid, even if the full task labelled them
        assert train.num_valid == 300 - task.xi - task.tau

    def test_split_rejects_short_part(self, small_meta_ds):
        with pytest.raises(SequenceTooShortError):
            split_sequence(small_meta_ds.tasks[0], (1.0, 0.0))
        with pytest.raises(ConfigError):
            split_sequence(small_meta_ds.tasks[0], (0.7, 0.7))

    def test_slice_recomputes_labels(self, synthetic_task_factory):
        task = synthetic_task_factory(np.random.default_rng(1), num_slots=300)
        part = task.slice(100, 200)
        z, _ = window_labels(part.snr <= 10 ** (-2.0), "any", task.xi, task.tau)
        np.testing.assert_array_equal(part.labels, z)
        np.testing.assert_array_equal(part.labels[:, : part.num_valid], task.labels[:, 100 : 100 + part.num_valid])


class TestMetaDataset:
    def test_counts(self, small_meta_ds):
        assert small_meta_ds.num_tasks == 2
        assert small_meta_ds.num_sequences == 6
        assert len(small_meta_ds.sequence_index()) == 6

    def test_single_task(self, small_generation):
        ds = build_meta_dataset(small_generation, num_tasks=1, num_slots=100, seed=3)
        assert ds.num_tasks == 1

    def test_deterministic_and_thread_independent(self, small_generation):
        a = build_meta_dataset(small_generation, num_tasks=3, num_slots=200, seed=5)
        b = build_meta_dataset(small_generation, num_tasks=3, num_slots=200, seed=5, threads=3)
        assert a == b

    def test_roles_draw_disjoint_streams(self, small_generation):
        train = build_meta_dataset(small_generation, num_tasks=1, num_slots=100, seed=5, role="train")
        test = build_meta_dataset(small_generation, num_tasks=1, num_slots=100, seed=5, role="test")
        assert train.tasks[0].scenario != test.tasks[0].scenario

    def test_mismatched_tasks_rejected(self, synthetic_task_factory, small_generation):
        rng = np.random.default_rng(0)
        a = synthetic_task_factory(rng, num_slots=100)
        b = synthetic_task_factory(rng, num_slots=120)
        with pytest.raises(DataError):
            MetaDataset(tasks=[a, b], generation=small_generation)

    def test_rejects_zero_tasks(self, small_generation):
        with pytest.raises(ConfigError):
            build_meta_dataset(small_generation, num_tasks=0, num_slots=100, seed=1)

    @pytest.mark.slow
    def test_default_positive_rate_band(self):
        from src.dataset import GenerationConfig

        ds = build_meta_dataset(GenerationConfig(), num_tasks=10, num_slots=10_000, seed=0, threads=4)
        assert ds.num_devices == 20
        assert 0.01 <= ds.positive_rate() <= 0.10
