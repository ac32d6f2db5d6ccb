import pytest
import torch

from reco.checkpoint import load_checkpoint, save_checkpoint
from reco.errors import DataError


def test_round_trip_is_bit_exact(tmp_path):
    g = torch.Generator().manual_seed(0)
    tensors = {
        "w": torch.randn(3, 4, generator=g),
        "scalar": torch.tensor(2.5),
        "count": torch.tensor(123456, dtype=torch.int64),
        "empty": torch.zeros(0, 5),
    }
    meta = {"step": 7, "config": {"tau": 0.2}, "name": "x"}
    save_checkpoint(tmp_path / "ck", tensors, meta)
    back, meta_back = load_checkpoint(tmp_path / "ck")
    assert meta_back == meta
    for k, v in tensors.items():
        assert back[k].dtype == v.dtype
        assert torch.equal(back[k], v)


def test_manifest_suffix_accepted(tmp_path):
    save_checkpoint(tmp_path / "a", {"x": torch.ones(2)}, {})
    back, _ = load_checkpoint(tmp_path / "a.manifest")
    assert torch.equal(back["x"], torch.ones(2))


def test_missing_and_corrupt(tmp_path):
    with pytest.raises(DataError):
        load_checkpoint(tmp_path / "nope")
    save_checkpoint(tmp_path / "b", {"x": torch.ones(8)}, {})
    (tmp_path / "b.bin").write_bytes(b"\0" * 8)
    with pytest.raises(DataError):
        load_checkpoint(tmp_path / "b")
    (tmp_path / "b.manifest").write_text("garbage\n")
    with pytest.raises(DataError):
        load_checkpoint(tmp_path / "b")
