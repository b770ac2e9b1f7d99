"""Tests for src/checkpoint.py."""

import numpy as np
import pytest

from src import config
from src.checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from src.errors import ChecksumError, FormatError, MissingArtifactError
from src.nn import init_params
from src.optim import OptimizerState, optimizer_update


class TestRoundTrip:
    def test_plain(self, tmp_path, tiny_dims):
        ckpt = Checkpoint(init_params(tiny_dims, 0), "random", master_seed=0, lineage={"init": 123})
        path = tmp_path / "theta.ckpt"
        save_checkpoint(ckpt, path)
        loaded = load_checkpoint(path)
        assert loaded == ckpt
        assert loaded.params.dtype == np.float32
        assert loaded.optimizer is None

    def test_with_adam_moments(self, tmp_path, tiny_dims):
        params = init_params(tiny_dims, 1)
        grads = params.with_vector(np.full(tiny_dims.num_params, 0.1, dtype=np.float32))
        params, opt = optimizer_update(OptimizerState.adam(1e-3), params, grads)
        ckpt = Checkpoint(params, "maml", step=1, master_seed=4, run_config={"meta_alpha": "0.05"}, optimizer=opt)
        path = tmp_path / "maml.ckpt"
        save_checkpoint(ckpt, path)
        loaded = load_checkpoint(path)
        assert loaded == ckpt
        assert loaded.optimizer.step == 1
        np.testing.assert_array_equal(loaded.optimizer.m, opt.m)
        np.testing.assert_array_equal(loaded.optimizer.v, opt.v)

    def test_loss_history(self, tmp_path, tiny_dims):
        ckpt = Checkpoint(init_params(tiny_dims, 5), "maml", step=3, history=[0.75, 0.5, 0.25])
        save_checkpoint(ckpt, tmp_path / "c.ckpt")
        loaded = load_checkpoint(tmp_path / "c.ckpt")
        assert loaded.history == [0.75, 0.5, 0.25]
        assert loaded == ckpt

    def test_sgd_has_no_moments(self, tmp_path, tiny_dims):
        ckpt = Checkpoint(init_params(tiny_dims, 2), "joint", optimizer=OptimizerState.sgd(0.1))
        save_checkpoint(ckpt, tmp_path / "c.ckpt")
        loaded = load_checkpoint(tmp_path / "c.ckpt")
        assert loaded.optimizer.kind == "sgd"
        assert loaded.optimizer.m is None

    def test_float64(self, tmp_path, tiny_dims):
        ckpt = Checkpoint(init_params(tiny_dims, 3, dtype=np.float64), "joint")
        save_checkpoint(ckpt, tmp_path / "c.ckpt")
        loaded = load_checkpoint(tmp_path / "c.ckpt")
        assert loaded.params.dtype == np.float64
        assert loaded == ckpt


class TestErrors:
    def test_missing(self, tmp_path):
        with pytest.raises(MissingArtifactError):
            load_checkpoint(tmp_path / "none.ckpt")

    def test_dataset_is_not_a_checkpoint(self, tmp_path, small_meta_ds):
        from src.dataset_io import save_dataset

        save_dataset(small_meta_ds, tmp_path / "ds.bin")
        with pytest.raises(FormatError):
            load_checkpoint(tmp_path / "ds.bin")

    def test_corrupt_payload(self, tmp_path, tiny_dims):
        path = tmp_path / "c.ckpt"
        save_checkpoint(Checkpoint(init_params(tiny_dims, 0), "random"), path)
        data = bytearray(path.read_bytes())
        data[-5] ^= 0x01
        path.write_bytes(bytes(data))
        with pytest.raises(ChecksumError):
            load_checkpoint(path)

    def test_magic(self, tmp_path, tiny_dims):
        path = tmp_path / "c.ckpt"
        save_checkpoint(Checkpoint(init_params(tiny_dims, 0), "random"), path)
        assert path.read_bytes().startswith(config.CHECKPOINT_MAGIC)
