import struct

import numpy as np
import pytest

from retemp.checkpoint import FORMAT_VERSION, check_dataset, load_checkpoint, save_checkpoint
from retemp.config import TrainConfig
from retemp.errors import CheckpointError
from retemp.model import ReTemp
from retemp.train import evaluate, fit


@pytest.fixture(scope="module")
def trained(tiny_graph):
    cfg = TrainConfig(dim=8, history_length=2, channels=4, dropout=0.1, epochs=2, seed=9)
    return fit(ReTemp(12, 3, tiny_graph.dataset.num_snapshots, cfg), tiny_graph)


def test_roundtrip_is_bit_exact(trained, tmp_path):
    path = tmp_path / "m.ckpt"
    save_checkpoint(trained, path)
    back = load_checkpoint(path)
    assert set(back.params) == set(trained.params)
    for k, v in trained.params.items():
        assert back.params[k].tobytes() == v.tobytes() and back.params[k].dtype == v.dtype
    for k in trained.optimizer.m:
        assert back.optimizer.m[k].tobytes() == trained.optimizer.m[k].tobytes()
        assert back.optimizer.v[k].tobytes() == trained.optimizer.v[k].tobytes()
    assert back.optimizer.step == trained.optimizer.step
    assert back.config == trained.config and back.val_history == trained.val_history


def test_saving_twice_gives_identical_bytes(trained, tmp_path):
    save_checkpoint(trained, tmp_path / "a")
    save_checkpoint(load_checkpoint(tmp_path / "a"), tmp_path / "b")
    assert (tmp_path / "a").read_bytes() == (tmp_path / "b").read_bytes()


def test_evaluation_survives_reload(trained, tiny_graph, tmp_path):
    save_checkpoint(trained, tmp_path / "m")
    before = evaluate(trained.to_model(), tiny_graph, "test").to_dict()
    after = evaluate(load_checkpoint(tmp_path / "m").to_model(), tiny_graph, "test").to_dict()
    assert before == after


@pytest.mark.parametrize("keep", [4, 20, -1])
def test_truncated_file_rejected(trained, tmp_path, keep):
    path = tmp_path / "m"
    save_checkpoint(trained, path)
    data = path.read_bytes()
    path.write_bytes(data[:keep] if keep > 0 else data[:-7])
    with pytest.raises(CheckpointError, match="truncated"):
        load_checkpoint(path)


def test_corrupt_payload_rejected(trained, tmp_path):
    path = tmp_path / "m"
    save_checkpoint(trained, path)
    data = bytearray(path.read_bytes())
    data[-3] ^= 0xFF
    path.write_bytes(bytes(data))
    with pytest.raises(CheckpointError, match="checksum"):
        load_checkpoint(path)


def test_version_mismatch_rejected(trained, tmp_path):
    path = tmp_path / "m"
    save_checkpoint(trained, path)
    data = bytearray(path.read_bytes())
    data[8:12] = struct.pack("<I", FORMAT_VERSION + 1)
    path.write_bytes(bytes(data))
    with pytest.raises(CheckpointError, match="version"):
        load_checkpoint(path)


def test_not_a_checkpoint(tmp_path):
    (tmp_path / "x").write_bytes(b"hello world, definitely not a model")
    with pytest.raises(CheckpointError, match="magic"):
        load_checkpoint(tmp_path / "x")


def test_dataset_mismatch_is_structured(trained):
    with pytest.raises(CheckpointError, match=r"num_entities: checkpoint 12 vs dataset 30"):
        check_dataset(trained, 30, 3, trained.num_snapshots)


def test_parameter_mismatch_rejected(trained):
    model = trained.to_model()
    bad = dict(trained.params)
    bad["relation"] = np.zeros((1, 1))
    with pytest.raises(CheckpointError):
        model.load_state_dict(bad)
