import numpy as np
import pytest
import torch

from oracles import class_similarity_loop, knn_vote_loop
from conftest import unit_rows
from reco.errors import DataError, ParameterError
from reco.evaluation import (
    ProbeConfig,
    class_similarity,
    export_embeddings,
    knn_classify,
    linear_probe,
    read_embeddings,
)


def _rotation(gen, d):
    q, _ = torch.linalg.qr(torch.randn(d, d, generator=gen, dtype=torch.float64))
    return q


# ------------------------------------------------------------------ kNN


def test_knn_identical_point():
    train = torch.eye(3)
    res = knn_classify(train, torch.tensor([4, 5, 6]), train[1:2], torch.tensor([5]), k=1)
    assert res.predictions.tolist() == [5]
    assert res.top1 == 1.0


def test_knn_vote_example():
    e1, e2 = torch.tensor([1.0, 0.0]), torch.tensor([0.0, 1.0])
    train = torch.stack([e1, e1, e2, e2])
    labels = torch.tensor([0, 0, 1, 1])
    res = knn_classify(train, labels, e1[None], torch.tensor([0]), k=3)
    assert res.predictions.tolist() == [0]
    assert knn_vote_loop(train.numpy(), labels.numpy(), e1.numpy(), 3, 0.07) == 0


def test_knn_matches_loop_oracle(gen):
    train = unit_rows(gen, 60, 6)
    test = unit_rows(gen, 25, 6)
    labels = torch.randint(0, 4, (60,), generator=gen)
    for k in (1, 5, 20, 60):
        res = knn_classify(train, labels, test, k=k)
        expect = [knn_vote_loop(train.numpy(), labels.numpy(), t, k, 0.07) for t in test.numpy()]
        assert res.predictions.tolist() == expect


def test_knn_order_and_rotation_invariance(gen):
    train = unit_rows(gen, 80, 8)
    test = unit_rows(gen, 30, 8)
    labels = torch.randint(0, 5, (80,), generator=gen)
    tl = torch.randint(0, 5, (30,), generator=gen)
    base = knn_classify(train, labels, test, tl, k=10)
    perm = torch.randperm(80, generator=gen)
    assert knn_classify(train[perm], labels[perm], test, tl, k=10).top1 == base.top1
    rot = _rotation(gen, 8)
    assert knn_classify(train @ rot, labels, test @ rot, tl, k=10).top1 == base.top1


def test_knn_bad_k():
    with pytest.raises(ParameterError):
        knn_classify(torch.eye(2), torch.tensor([0, 1]), torch.eye(2), k=3)


# ------------------------------------------------------------------ linear probe


def _blobs(gen, n, d=16, classes=2, spread=0.3):
    centers = torch.randn(classes, d, generator=gen) * 3
    labels = torch.arange(n) % classes
    return centers[labels] + spread * torch.randn(n, d, generator=gen), labels


def test_probe_separable_blobs(gen):
    x, y = _blobs(gen, 400)
    xt, yt = x[:300], y[:300]
    res = linear_probe(xt, yt, x[300:], y[300:], ProbeConfig(epochs=20))
    assert res["top1"] >= 0.99


def test_probe_shuffled_labels_is_chance(gen):
    x = torch.randn(4000, 32, generator=gen)
    y = torch.randint(0, 10, (4000,), generator=gen)
    res = linear_probe(x[:3000], y[:3000], x[3000:], y[3000:], ProbeConfig(epochs=10))
    assert abs(res["top1"] - 0.10) <= 0.03


def test_probe_more_epochs_do_not_hurt_training_fit(gen):
    x, y = _blobs(gen, 300, classes=5, spread=2.0)
    for seed in range(3):
        short = linear_probe(x, y, x, y, ProbeConfig(epochs=10, seed=seed))["train_top1"]
        long = linear_probe(x, y, x, y, ProbeConfig(epochs=20, seed=seed))["train_top1"]
        assert long >= short - 0.005


def test_probe_single_class_warns():
    x = torch.randn(10, 4)
    with pytest.warns(UserWarning, match="single class"):
        linear_probe(x, torch.zeros(10), x, torch.zeros(10), ProbeConfig(epochs=1))


# ------------------------------------------------------------------ class similarity


def test_similarity_orthogonal_classes():
    e1, e2 = torch.tensor([1.0, 0.0]), torch.tensor([0.0, 1.0])
    rep = class_similarity(torch.stack([e1, e1, e2, e2]), torch.tensor([0, 0, 1, 1]))
    assert (rep.s_intra, rep.s_inter, rep.phi) == (1.0, 0.0, 2.0)
    assert rep.scaled()["phi"] == 200.0


def test_similarity_collapse():
    x = torch.tensor([[0.6, 0.8]], dtype=torch.float64).repeat(6, 1)
    rep = class_similarity(x, torch.tensor([0, 0, 1, 1, 2, 2]))
    assert rep.s_intra == pytest.approx(1.0, abs=1e-12)
    assert rep.s_inter == pytest.approx(1.0, abs=1e-12)
    assert rep.phi == pytest.approx(1.0, abs=1e-12)


def test_similarity_matches_loop_oracle():
    gen = torch.Generator().manual_seed(7)
    for trial in range(100):
        n = int(torch.randint(6, 16, (1,), generator=gen))
        d = int(torch.randint(2, 8, (1,), generator=gen))
        labels = torch.arange(n) % 3
        labels = labels[torch.randperm(n, generator=gen)]
        x = unit_rows(gen, n, d)
        rep = class_similarity(x, labels)
        intra, inter, phi = class_similarity_loop(x.numpy(), labels.tolist())
        assert abs(rep.s_intra - intra) <= 1e-9
        assert abs(rep.s_inter - inter) <= 1e-9
        assert abs(rep.phi - phi) <= 1e-9, trial


def test_similarity_rotation_invariance(gen):
    x = unit_rows(gen, 30, 6)
    labels = torch.arange(30) % 4
    a = class_similarity(x, labels)
    b = class_similarity(x @ _rotation(gen, 6), labels)
    for f in ("s_intra", "s_inter", "phi"):
        assert abs(getattr(a, f) - getattr(b, f)) <= 1e-9


def test_similarity_singleton_class_skipped(gen):
    x = unit_rows(gen, 5, 3)
    with pytest.warns(UserWarning, match="no same-class partner"):
        rep = class_similarity(x, torch.tensor([0, 0, 1, 1, 2]))
    assert rep.n_samples == 4
    with pytest.raises(ParameterError):
        class_similarity(x, torch.zeros(5))


# ------------------------------------------------------------------ export


def test_export_round_trip(tmp_path, gen):
    x = torch.randn(7, 5, generator=gen)
    path = export_embeddings(x, torch.arange(7) % 3, tmp_path / "emb.bin")
    arr, labels = read_embeddings(path)
    assert arr.shape == (7, 5)
    assert np.abs(arr - x.numpy()).max() == 0
    assert labels.tolist() == [0, 1, 2, 0, 1, 2, 0]
    raw = path.read_bytes()
    assert int.from_bytes(raw[8:16], "little") == 7 and int.from_bytes(raw[16:20], "little") == 5


def test_export_empty(tmp_path):
    path = export_embeddings(np.zeros((0, 4), np.float32), [], tmp_path / "empty.bin")
    assert path.stat().st_size == 24
    arr, labels = read_embeddings(path)
    assert arr.shape == (0, 4) and labels.size == 0


def test_export_errors(tmp_path):
    with pytest.raises(DataError):
        export_embeddings(np.zeros((2, 2)), [0, 1], tmp_path / "missing" / "x.bin")
    with pytest.raises(ParameterError):
        export_embeddings(np.full((2, 2), np.nan), [0, 1], tmp_path / "x.bin")
    (tmp_path / "bad.bin").write_bytes(b"garbage")
    with pytest.raises(DataError):
        read_embeddings(tmp_path / "bad.bin")
