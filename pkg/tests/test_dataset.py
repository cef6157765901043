"""
演示数据测试

测试专家采集、.acds 文件格式、归一化统计量与滑动窗口采样
"""

import struct
from dataclasses import replace

import numpy as np
import pytest
import torch

import src.data.trajectory as trajectory_module
from src.core.errors import (
    BadMagicError,
    EmptyDatasetError,
    ExpertFailureError,
    FormatError,
    ShapeError,
    TruncatedFileError,
    VersionMismatchError,
    WindowRangeError,
)
from src.data import (
    DATASET_MAGIC,
    NormStats,
    Trajectory,
    WindowSampler,
    batch_from_history,
    collate,
    compute_norm_stats,
    denormalize,
    load_dataset,
    normalize,
    record_episode,
    save_dataset,
    valid_range,
    window_sample,
)
from src.sim import success, reset, step


class TestRecording:
    """专家采集测试"""

    def test_trajectory_fields(self, small_dataset):
        assert len(small_dataset) == 2
        traj = small_dataset[0]
        T = traj.length
        assert traj.views.shape == (T, 3, 3, 32, 32)
        assert traj.clouds.shape == (T, 256, 4)
        assert traj.states.shape == (T, 12)
        assert traj.actions.shape == (T, 5)
        assert traj.actions.dtype == np.float32
        assert len(traj.phases) == T
        assert len(traj.instruction) == 8

    def test_recorded_actions_replay_to_success(self, small_dataset):
        traj = small_dataset[0]
        state, _ = reset(traj.task, traj.seed)
        for row in traj.actions.astype(np.float64):
            state = step(state, row)
        assert success(state)

    def test_recording_is_deterministic(self, small_dataset):
        assert record_episode("navigate_pick", small_dataset[0].seed) == small_dataset[0]

    def test_expert_failure(self, monkeypatch):
        monkeypatch.setattr(trajectory_module, "_rollout_expert", lambda task, seed, robot: None)
        with pytest.raises(ExpertFailureError):
            record_episode("navigate_pick", 0)

    def test_shape_validation(self, small_dataset):
        traj = small_dataset[0]
        with pytest.raises(ShapeError):
            Trajectory(
                task=traj.task,
                seed=traj.seed,
                instruction=traj.instruction,
                freq=traj.freq,
                views=traj.views,
                clouds=traj.clouds[:-1],
                states=traj.states,
                actions=traj.actions,
            )

    def test_phase_validation(self, small_dataset):
        traj = small_dataset[0]
        with pytest.raises(ShapeError):
            replace(traj, phases=traj.phases[:-1])
        with pytest.raises(ShapeError):
            replace(traj, phases=["fly"] * traj.length)

    def test_equality_sees_phases(self, small_dataset):
        traj = small_dataset[0]
        assert replace(traj, phases=[]) != traj


class TestStorage:
    """数据集文件格式测试"""

    def test_round_trip(self, small_dataset, dataset_file, tmp_path):
        loaded = load_dataset(dataset_file)
        assert loaded == small_dataset
        again = save_dataset(loaded, tmp_path / "again.acds")
        assert again.read_bytes() == dataset_file.read_bytes()

    def test_header(self, dataset_file):
        data = dataset_file.read_bytes()
        assert data[:4] == DATASET_MAGIC
        assert struct.unpack("<II", data[4:12]) == (2, 2)

    def test_phases_survive_round_trip(self, small_dataset, dataset_file, tmp_path):
        loaded = load_dataset(dataset_file)
        assert [t.phases for t in loaded] == [t.phases for t in small_dataset]
        unlabeled = [replace(t, phases=[]) for t in small_dataset]
        path = save_dataset(unlabeled, tmp_path / "unlabeled.acds")
        assert [t.phases for t in load_dataset(path)] == [[], []]

    def test_unknown_phase_code(self, small_dataset, tmp_path):
        path = save_dataset(small_dataset[:1], tmp_path / "one.acds")
        data = bytearray(path.read_bytes())
        data[-1] = 7
        path.write_bytes(bytes(data))
        with pytest.raises(FormatError):
            load_dataset(path)

    def test_empty_dataset(self, tmp_path):
        path = save_dataset([], tmp_path / "empty.acds")
        assert load_dataset(path) == []

    def test_bad_magic(self, dataset_file):
        dataset_file.write_bytes(b"ACDT" + dataset_file.read_bytes()[4:])
        with pytest.raises(BadMagicError):
            load_dataset(dataset_file)

    def test_version_mismatch(self, dataset_file):
        data = dataset_file.read_bytes()
        dataset_file.write_bytes(data[:4] + struct.pack("<I", 1) + data[8:])
        with pytest.raises(VersionMismatchError):
            load_dataset(dataset_file)

    def test_truncated(self, dataset_file):
        dataset_file.write_bytes(dataset_file.read_bytes()[:-100])
        with pytest.raises(TruncatedFileError):
            load_dataset(dataset_file)

    def test_trailing_bytes(self, dataset_file):
        dataset_file.write_bytes(dataset_file.read_bytes() + b"junk")
        with pytest.raises(FormatError):
            load_dataset(dataset_file)

    def test_missing_file(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            load_dataset(tmp_path / "nope.acds")


class TestNormalization:
    """归一化统计量测试"""

    def test_statistics(self, small_dataset):
        stats = compute_norm_stats(small_dataset)
        states = np.concatenate([t.states for t in small_dataset]).astype(np.float64)
        z = normalize(states, stats, "state")
        varying = states.std(axis=0) > 1e-6
        assert np.allclose(z.mean(axis=0), 0.0, atol=1e-6)
        assert np.allclose(z.std(axis=0)[varying], 1.0, atol=1e-6)
        assert np.all(stats.state_std >= 1e-6)

    def test_constant_dimension_maps_to_zero(self, small_dataset):
        stats = compute_norm_stats(small_dataset)
        x = np.tile(stats.action_mean, (4, 1))
        assert np.allclose(normalize(x, stats, "action"), 0.0)

    def test_torch_inverse(self, small_dataset):
        stats = compute_norm_stats(small_dataset)
        a = torch.randn(3, 2, 5, dtype=torch.float64)
        back = denormalize(normalize(a, stats, "action"), stats, "action")
        assert isinstance(back, torch.Tensor)
        assert torch.allclose(back, a)

    def test_dimension_mismatch(self):
        with pytest.raises(ShapeError):
            normalize(np.zeros((2, 4)), NormStats.identity(12, 5), "action")

    def test_std_floor_enforced(self):
        with pytest.raises(ShapeError):
            NormStats(np.zeros(2), np.zeros(2), np.zeros(1), np.ones(1))

    def test_empty(self):
        with pytest.raises(EmptyDatasetError):
            compute_norm_stats([])


class TestWindows:
    """滑动窗口测试"""

    def test_first_window_repeats_first_observation(self, small_dataset):
        traj = small_dataset[0]
        sample = window_sample(traj, 0, tau=1, k=2)
        assert sample.history == 2 and sample.horizon == 2
        assert np.array_equal(sample.states[0], traj.states[0])
        assert np.array_equal(sample.states[1], traj.states[0])
        assert np.array_equal(sample.actions, traj.actions[0:2])

    def test_window_contents(self, small_dataset):
        traj = small_dataset[0]
        sample = window_sample(traj, 5, tau=1, k=2)
        assert np.array_equal(sample.views, traj.views[4:6])
        assert np.array_equal(sample.actions, traj.actions[5:7])

    def test_range(self, small_dataset):
        traj = small_dataset[0]
        T = traj.length
        assert list(valid_range(traj, 2)) == list(range(T - 1))
        window_sample(traj, T - 2, k=2)
        with pytest.raises(WindowRangeError):
            window_sample(traj, T - 1, k=2)
        with pytest.raises(WindowRangeError):
            window_sample(traj, -1)

    def test_sampler_covers_all_windows(self, small_dataset):
        sampler = WindowSampler(small_dataset, tau=1, k=2, shuffle=False)
        assert len(sampler) == sum(t.length - 1 for t in small_dataset)
        first = next(sampler.epoch())
        assert np.array_equal(first.actions, small_dataset[0].actions[0:2])

    def test_shuffled_epoch_is_permutation(self, small_dataset):
        sampler = WindowSampler(small_dataset, tau=1, k=2, shuffle=True, seed=3)
        assert sum(1 for _ in sampler.epoch()) == len(sampler)

    def test_batches(self, small_dataset):
        sampler = WindowSampler(small_dataset, tau=1, k=2, shuffle=True, seed=0)
        batches = sampler.batches(4, torch.float64)
        for _ in range(3):
            b = next(batches)
            assert b.views.shape == (4, 2, 3, 3, 32, 32)
            assert b.clouds.shape == (4, 2, 256, 4)
            assert b.states.shape == (4, 2, 12)
            assert b.freq.shape == (4, 2)
            assert b.text.shape == (4, 8) and b.text.dtype == torch.long
            assert b.actions.shape == (4, 2, 5) and b.actions.dtype == torch.float64

    def test_empty_sampler(self):
        with pytest.raises(EmptyDatasetError):
            WindowSampler([], tau=1, k=2)
        with pytest.raises(EmptyDatasetError):
            collate([])

    def test_batch_from_history(self, small_dataset):
        traj = small_dataset[0]
        history = [traj.observation(0), traj.observation(1)]
        b = batch_from_history(history, traj.instruction, torch.float32)
        assert b.batch_size == 1
        assert b.actions is None
        assert b.views.shape == (1, 2, 3, 3, 32, 32)
        assert b.to(torch.float64).states.dtype == torch.float64
