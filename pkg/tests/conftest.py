import os
import tempfile

import numpy as np
import pytest

# Point DATA_DIR / LOGS_DIR at a temp directory before src.config is imported
_tmp = tempfile.mkdtemp()
os.environ.setdefault("DATA_DIR", _tmp)
os.environ.setdefault("LOGS_DIR", os.path.join(_tmp, "logs"))


def make_synthetic_task(rng, num_devices=3, num_slots=400, burst_rate=0.02, burst_len=(5, 30), task_id=0, xi=0, tau=5,
                        mode="any"):
    """TaskDataset from a hand-made trace: 0 dB with small jitter, -30 dB bursts."""
    from src.dataset import TaskDataset
    from src.scenario import ChannelTrace

    snr_db = rng.normal(0.0, 1.0, size=(num_devices, num_slots))
    for k in range(num_devices):
        t = 0
        while t < num_slots:
            if rng.random() < burst_rate:
                length = int(rng.integers(*burst_len))
                snr_db[k, t : t + length] = -30.0 + rng.normal(0.0, 1.0, size=snr_db[k, t : t + length].shape)
                t += length
            t += 1
    snr = 10.0 ** (snr_db / 10.0)
    trace = ChannelTrace(snr=snr, zeta=np.ones_like(snr))
    return TaskDataset.from_trace(task_id, 1000 + task_id, trace, mode, xi, tau, -20.0)


def make_synthetic_meta(seed=0, num_tasks=2, **kwargs):
    from src.dataset import GenerationConfig, MetaDataset
    from src.scenario import ScenarioDistribution

    rng = np.random.default_rng(seed)
    num_devices = kwargs.get("num_devices", 3)
    tasks = [make_synthetic_task(rng, task_id=n, **kwargs) for n in range(num_tasks)]
    gen = GenerationConfig(
        scenario=ScenarioDistribution(num_devices=num_devices),
        mode=kwargs.get("mode", "any"),
        xi=kwargs.get("xi", 0),
        tau=kwargs.get("tau", 5),
    )
    return MetaDataset(tasks=tasks, generation=gen, master_seed=seed)


@pytest.fixture()
def synthetic_meta():
    return make_synthetic_meta()


@pytest.fixture()
def tiny_dims():
    from src.nn import ModelDims

    return ModelDims(input_dim=6, hidden_in=8, lstm_units=8, hidden_out=8)


@pytest.fixture(scope="session")
def small_generation():
    from src.dataset import GenerationConfig
    from src.scenario import ScenarioDistribution

    return GenerationConfig(scenario=ScenarioDistribution(num_devices=3), mode="any", xi=0, tau=5)


@pytest.fixture(scope="session")
def small_meta_ds(small_generation):
    """Two simulated tasks, three devices, 600 slots."""
    from src.dataset import build_meta_dataset

    return build_meta_dataset(small_generation, num_tasks=2, num_slots=600, seed=7)


@pytest.fixture()
def synthetic_task_factory():
    return make_synthetic_task


@pytest.fixture()
def synthetic_meta_factory():
    return make_synthetic_meta
