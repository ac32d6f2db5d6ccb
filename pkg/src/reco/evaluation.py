"""Frozen-representation evaluation: kNN, linear probe, class-similarity statistics, embedding files."""

from __future__ import annotations

import hashlib
import json
import struct
import warnings
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from . import checkpoint as ckpt
from .config import TrainConfig
from .datapipe import AugmentParams, ImageDataset, center_view, load_dataset
from .encoder import Encoder, build_encoder, check_unit_norm
from .errors import DataError, ParameterError

EMBED_MAGIC = b"RCEMBED1"
_DTYPE_CODES = {1: "<f4"}


# --------------------------------------------------------------------------- extraction


def load_encoder(checkpoint: str | Path) -> tuple[Encoder, TrainConfig, AugmentParams]:
    """Online encoder from a checkpoint, in eval mode, with the normalisation it was trained with."""
    tensors, meta = ckpt.load_checkpoint(checkpoint)
    cfg = TrainConfig(**meta["config"])
    model = build_encoder(cfg)
    model.load_state_dict({k[7:]: v for k, v in tensors.items() if k.startswith("online.")})
    model.eval()
    aug = AugmentParams.from_config(cfg, meta["norm_mean"], meta["norm_std"])
    return model, cfg, aug


def checkpoint_hash(checkpoint: str | Path) -> str:
    stem = Path(checkpoint)
    if stem.suffix in (".manifest", ".bin"):
        stem = stem.with_suffix("")
    h = hashlib.sha256()
    for suffix in (".manifest", ".bin"):
        h.update(stem.with_suffix(suffix).read_bytes())
    return h.hexdigest()[:16]


@torch.no_grad()
def embed_images(
    model: Encoder, images: torch.Tensor, aug: AugmentParams, use_backbone_features: bool = False, batch_size: int = 512
) -> torch.Tensor:
    was_training = model.training
    model.eval()
    chunks = []
    for start in range(0, images.shape[0], batch_size):
        x = center_view(images[start : start + batch_size], aug)
        chunks.append(model.features(x) if use_backbone_features else model(x))
    model.train(was_training)
    if not chunks:
        dim = model.feature_dim if use_backbone_features else model.embedding_dim
        return torch.zeros(0, dim)
    return torch.cat(chunks)


def extract_embeddings(
    checkpoint: str | Path,
    split: str = "test",
    use_backbone_features: bool = False,
    dataset: ImageDataset | None = None,
) -> tuple[torch.Tensor, torch.Tensor]:
    model, cfg, aug = load_encoder(checkpoint)
    if dataset is None:
        dataset = load_dataset(cfg.dataset, split, cfg.image_size)
    emb = embed_images(model, dataset.images, aug, use_backbone_features, cfg.eval_batch_size)
    return emb, dataset.labels.clone()


# --------------------------------------------------------------------------- kNN


@dataclass
class KnnResult:
    predictions: torch.Tensor
    top1: float | None
    top5: float | None
    k: int


def knn_classify(
    train_emb: torch.Tensor,
    train_labels: torch.Tensor,
    test_emb: torch.Tensor,
    test_labels: torch.Tensor | None = None,
    k: int = 200,
    temperature: float = 0.07,
    num_classes: int | None = None,
    chunk: int = 256,
) -> KnnResult:
    """Cosine kNN with exp(sim / temperature) class voting.

    Neighbour ties break toward the lower train index; class-score ties toward the lower class id.
    """
    n_train = train_emb.shape[0]
    if not 1 <= k <= n_train:
        raise ParameterError(f"k={k} must lie in [1, {n_train}]")
    if temperature <= 0:
        raise ParameterError("temperature must be > 0")
    check_unit_norm(train_emb, "train embeddings")
    check_unit_norm(test_emb, "test embeddings")
    train_labels = train_labels.long()
    if num_classes is None:
        num_classes = int(train_labels.max()) + 1
        if test_labels is not None and test_labels.numel():
            num_classes = max(num_classes, int(test_labels.max()) + 1)
    rankings = []
    for start in range(0, test_emb.shape[0], chunk):
        sims = test_emb[start : start + chunk].double() @ train_emb.double().T
        order = torch.sort(-sims, dim=1, stable=True).indices[:, :k]
        top_sims = torch.gather(sims, 1, order)
        weights = torch.exp(top_sims / temperature)
        scores = torch.zeros(sims.shape[0], num_classes, dtype=torch.float64)
        scores.scatter_add_(1, train_labels[order], weights)
        rankings.append(torch.sort(-scores, dim=1, stable=True).indices)
    ranking = torch.cat(rankings) if rankings else torch.zeros(0, num_classes, dtype=torch.long)
    preds = ranking[:, 0]
    top1 = top5 = None
    if test_labels is not None and len(test_labels):
        tl = test_labels.long().view(-1, 1)
        top1 = float((ranking[:, :1] == tl).any(dim=1).double().mean())
        top5 = float((ranking[:, :5] == tl).any(dim=1).double().mean())
    return KnnResult(preds, top1, top5, k)


# --------------------------------------------------------------------------- linear probe


@dataclass
class ProbeConfig:
    epochs: int = 100
    lr: float = 10.0
    batch_size: int = 256
    momentum: float = 0.9
    weight_decay: float = 0.0
    milestones: tuple[float, float] = (0.6, 0.8)
    standardize: bool = True
    seed: int = 0

    @classmethod
    def from_train_config(cls, cfg: TrainConfig) -> "ProbeConfig":
        return cls(
            epochs=cfg.probe_epochs,
            lr=cfg.probe_lr,
            batch_size=cfg.probe_batch_size,
            momentum=cfg.probe_momentum,
            weight_decay=cfg.probe_weight_decay,
            standardize=cfg.probe_standardize,
            seed=cfg.seed,
        )


def _topk_acc(logits: torch.Tensor, labels: torch.Tensor, k: int) -> float:
    if labels.numel() == 0:
        return float("nan")
    k = min(k, logits.shape[1])
    top = torch.topk(logits, k, dim=1).indices
    return float((top == labels.view(-1, 1)).any(dim=1).double().mean())


def linear_probe(
    train_feats: torch.Tensor,
    train_labels: torch.Tensor,
    test_feats: torch.Tensor,
    test_labels: torch.Tensor,
    probe: ProbeConfig | None = None,
) -> dict[str, float]:
    """Train one linear layer on frozen features with SGD and a two-step LR decay."""
    probe = probe or ProbeConfig()
    train_labels = train_labels.long()
    test_labels = test_labels.long()
    classes = torch.unique(train_labels)
    if classes.numel() < 2:
        warnings.warn("linear probe trained on a single class; accuracy is trivial", stacklevel=2)
    num_classes = int(max(train_labels.max(), test_labels.max() if test_labels.numel() else 0)) + 1
    xtr, xte = train_feats.float(), test_feats.float()
    if probe.standardize:
        mean = xtr.mean(dim=0, keepdim=True)
        std = xtr.std(dim=0, keepdim=True).clamp_min(1e-6) if xtr.shape[0] > 1 else torch.ones_like(mean)
        xtr, xte = (xtr - mean) / std, (xte - mean) / std

    gen = torch.Generator().manual_seed(probe.seed)
    clf = nn.Linear(xtr.shape[1], num_classes)
    with torch.no_grad():
        clf.weight.normal_(0.0, 0.01, generator=gen)
        clf.bias.zero_()
    opt = torch.optim.SGD(clf.parameters(), lr=probe.lr, momentum=probe.momentum, weight_decay=probe.weight_decay)
    steps = [round(m * probe.epochs) for m in probe.milestones]
    sched = torch.optim.lr_scheduler.MultiStepLR(opt, milestones=steps, gamma=0.1)
    n = xtr.shape[0]
    for _ in range(probe.epochs):
        perm = torch.randperm(n, generator=gen)
        for start in range(0, n, probe.batch_size):
            idx = perm[start : start + probe.batch_size]
            loss = F.cross_entropy(clf(xtr[idx]), train_labels[idx])
            opt.zero_grad()
            loss.backward()
            opt.step()
        sched.step()
    with torch.no_grad():
        train_logits, test_logits = clf(xtr), clf(xte)
    return {
        "top1": _topk_acc(test_logits, test_labels, 1),
        "top5": _topk_acc(test_logits, test_labels, 5),
        "train_top1": _topk_acc(train_logits, train_labels, 1),
    }


# --------------------------------------------------------------------------- class similarity


@dataclass
class ClassSimilarityReport:
    s_intra: float
    s_inter: float
    phi: float
    n_samples: int

    def scaled(self, factor: float = 100.0) -> dict[str, float]:
        return {"s_intra": self.s_intra * factor, "s_inter": self.s_inter * factor, "phi": self.phi * factor}


def class_similarity(embeddings: torch.Tensor, labels: torch.Tensor) -> ClassSimilarityReport:
    """Per-sample mean same-class and other-class cosine similarity (self excluded), averaged.

    ``phi`` averages the per-sample ratio (mean_pos + 1) / (mean_neg + 1).
    """
    x = embeddings.double()
    labels = labels.long()
    if torch.unique(labels).numel() < 2:
        raise ParameterError("class similarity needs at least two classes")
    check_unit_norm(x, "embeddings")
    gram = x @ x.T
    same = labels.view(-1, 1) == labels.view(1, -1)
    eye = torch.eye(len(labels), dtype=torch.bool)
    pos_mask = same & ~eye
    neg_mask = ~same
    n_pos = pos_mask.sum(dim=1)
    n_neg = neg_mask.sum(dim=1)
    valid = n_pos > 0
    if not valid.all():
        warnings.warn(f"{int((~valid).sum())} sample(s) have no same-class partner and are skipped", stacklevel=2)
    pos_mean = (gram * pos_mask).sum(dim=1) / n_pos.clamp_min(1)
    neg_mean = (gram * neg_mask).sum(dim=1) / n_neg.clamp_min(1)
    phi = (pos_mean + 1) / (neg_mean + 1)
    return ClassSimilarityReport(
        s_intra=float(pos_mean[valid].mean()),
        s_inter=float(neg_mean[valid].mean()),
        phi=float(phi[valid].mean()),
        n_samples=int(valid.sum()),
    )


# --------------------------------------------------------------------------- files


def _labels_path(path: Path) -> Path:
    return path.with_name(path.name + ".labels")


def export_embeddings(matrix, labels, path: str | Path) -> Path:
    """Header (magic, uint64 count, uint32 dim, uint32 dtype code) + row-major little-endian float32 rows."""
    path = Path(path)
    arr = np.asarray(matrix.detach().cpu() if torch.is_tensor(matrix) else matrix, dtype=np.float32)
    if arr.ndim != 2:
        raise ParameterError("embedding matrix must be 2-D")
    if not np.isfinite(arr).all():
        raise ParameterError("embedding matrix must be finite")
    lab = np.asarray(labels.cpu() if torch.is_tensor(labels) else labels).astype(np.int64).ravel()
    if lab.size != arr.shape[0]:
        raise ParameterError("one label per row is required")
    try:
        with path.open("wb") as fh:
            fh.write(EMBED_MAGIC)
            fh.write(struct.pack("<QII", arr.shape[0], arr.shape[1], 1))
            fh.write(arr.astype("<f4", copy=False).tobytes(order="C"))
        _labels_path(path).write_text("".join(f"{int(v)}\n" for v in lab))
    except OSError as exc:
        raise DataError(f"cannot write embeddings to {path}: {exc}") from None
    return path


def read_embeddings(path: str | Path) -> tuple[np.ndarray, np.ndarray]:
    path = Path(path)
    raw = path.read_bytes()
    if raw[:8] != EMBED_MAGIC or len(raw) < 24:
        raise DataError(f"{path}: not an embedding file")
    count, dim, code = struct.unpack_from("<QII", raw, 8)
    if code not in _DTYPE_CODES:
        raise DataError(f"{path}: unknown dtype code {code}")
    expected = 24 + count * dim * 4
    if len(raw) != expected:
        raise DataError(f"{path}: payload size {len(raw) - 24} != {count}x{dim} float32")
    arr = np.frombuffer(raw, dtype=_DTYPE_CODES[code], offset=24, count=count * dim).reshape(count, dim).copy()
    lab_path = _labels_path(path)
    labels = np.array([int(v) for v in lab_path.read_text().split()], dtype=np.int64) if lab_path.exists() else np.zeros(0, np.int64)
    return arr, labels


def write_report(path: str | Path, report: dict) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
    return path


def accuracy_report(protocol: str, k: int | None, top1, top5, n_train: int, n_test: int, ckpt_hash: str) -> dict:
    return {
        "protocol": protocol,
        "k": k,
        "top1": top1,
        "top5": top5,
        "n_train": n_train,
        "n_test": n_test,
        "checkpoint_hash": ckpt_hash,
    }


def similarity_report(rep: ClassSimilarityReport, ckpt_hash: str) -> dict:
    d = asdict(rep)
    d["scaled_x100"] = rep.scaled()
    d["checkpoint_hash"] = ckpt_hash
    return d
