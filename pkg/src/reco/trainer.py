"""Pre-training loop: three branches, three losses, SGD + cosine LR, EMA, queue update."""

from __future__ import annotations

import json
import logging
import math
import time
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
import torch
import torch.nn as nn

from . import checkpoint as ckpt
from .config import TrainConfig, save_config
from .datapipe import (
    AugmentParams,
    ImageBatch,
    ImageDataset,
    augment_regular,
    augment_weak,
    cutmix_boxes,
    interpolate_images,
    iterate_batches,
    load_dataset,
    make_pairing,
)
from .encoder import Branch, EmbeddingBatch, Encoder, build_encoder, ema_update, encode, init_momentum
from .errors import InvariantViolation, NumericError, ParameterError
from .losses import LossBreakdown, global_loss, infonce, interpolate_features, interpolation_norms, local_loss, total_loss
from .membank import MemoryBank

log = logging.getLogger(__name__)

DEGENERATE_NORM = 1e-7


def cosine_lr(step: int, total_steps: int, base_lr: float) -> float:
    if total_steps <= 0:
        raise ParameterError("total_steps must be positive")
    if not 0 <= step <= total_steps:
        raise ParameterError(f"step {step} outside [0, {total_steps}]")
    if base_lr <= 0:
        raise ParameterError("base_lr must be positive")
    return base_lr * (1 + math.cos(math.pi * step / total_steps)) / 2


@dataclass
class MetricsRecord:
    step: int
    epoch: int
    lr: float
    csl: float
    global_: float
    local: float
    total: float
    bank_filled: int
    wall_time: float

    def to_json(self) -> str:
        d = asdict(self)
        d["global"] = d.pop("global_")
        return json.dumps(d)

    @classmethod
    def from_json(cls, line: str) -> "MetricsRecord":
        d = json.loads(line)
        d["global_"] = d.pop("global")
        return cls(**d)


def _param_groups(model: nn.Module, weight_decay: float) -> list[dict]:
    norm_params = set()
    for mod in model.modules():
        if isinstance(mod, nn.modules.batchnorm._NormBase | nn.GroupNorm | nn.LayerNorm):
            norm_params.update(id(p) for p in mod.parameters(recurse=False))
    decay = [p for p in model.parameters() if id(p) not in norm_params]
    no_decay = [p for p in model.parameters() if id(p) in norm_params]
    return [
        {"params": decay, "weight_decay": weight_decay},
        {"params": no_decay, "weight_decay": 0.0},
    ]


class Trainer:
    def __init__(self, cfg: TrainConfig, train_set: ImageDataset | None = None):
        self.cfg = cfg
        if train_set is None:
            train_set = load_dataset(cfg.dataset, "train", cfg.image_size)
        self.data = train_set.subset(cfg.subset_size, cfg.seed)
        self.steps_per_epoch = len(self.data) // cfg.batch_size
        if self.steps_per_epoch < 1:
            raise ParameterError(f"dataset of {len(self.data)} images is smaller than one batch")
        total = self.steps_per_epoch * cfg.total_epochs
        self.schedule_steps = min(total, cfg.max_steps) if cfg.max_steps > 0 else total
        mean, std = self.data.channel_stats()
        self.aug = AugmentParams.from_config(cfg, mean, std)

        torch.manual_seed(cfg.seed)
        self.online: Encoder = build_encoder(cfg)
        self.momentum: Encoder = init_momentum(self.online)
        self.optimizer = torch.optim.SGD(
            _param_groups(self.online, cfg.weight_decay), lr=cfg.base_lr, momentum=cfg.sgd_momentum
        )
        self.bank = MemoryBank(cfg.bank_capacity, cfg.embedding_dim)
        self.step = 0
        self._epoch_cache: tuple[int, list[np.ndarray]] | None = None

    # ------------------------------------------------------------------ data

    def batch_indices(self, step: int) -> np.ndarray:
        epoch, within = divmod(step, self.steps_per_epoch)
        if self._epoch_cache is None or self._epoch_cache[0] != epoch:
            batches = list(iterate_batches(len(self.data), self.cfg.batch_size, self.cfg.seed, epoch))
            self._epoch_cache = (epoch, batches)
        return self._epoch_cache[1][within]

    def batch_for_step(self, step: int) -> ImageBatch:
        idx = torch.from_numpy(self.batch_indices(step))
        return ImageBatch(self.data.images[idx], idx)

    # ------------------------------------------------------------------ step

    def _step_rngs(self, step: int) -> list[np.random.Generator]:
        seq = np.random.SeedSequence([self.cfg.seed, 23, step])
        return [np.random.default_rng(s) for s in seq.spawn(4)]

    def _local_term(self, xq, xk, q, k, negatives, rng) -> torch.Tensor:
        cfg = self.cfg
        n = xq.shape[0]
        plan = make_pairing(
            n, cfg.alpha, rng, cfg.image_pairing, cfg.feature_pairing, cfg.mix_mode, cfg.per_pair_ratio
        )
        partner = plan.partner_index.copy()
        h, w = xq.shape[-2:]
        boxes = cutmix_boxes(rng, plan.ratio, h, w) if cfg.mix_mode == "cutmix" else None

        def effective(boxes_):
            if boxes_ is None:
                return plan.ratio.copy()
            area = (boxes_[:, 1] - boxes_[:, 0]) * (boxes_[:, 3] - boxes_[:, 2])
            return 1.0 - area / float(h * w)

        feats = {"q": q.detach(), "k": k.detach()}
        first, second = feats[cfg.feature_pairing[0]], feats[cfg.feature_pairing[2]]
        eff = effective(boxes)
        norms = interpolation_norms(first, second[partner], torch.as_tensor(eff, dtype=first.dtype))
        bad = np.flatnonzero(norms.numpy() < DEGENERATE_NORM)
        if bad.size:
            partner[bad] = rng.integers(0, n, size=bad.size)
            if boxes is not None:
                boxes[bad] = cutmix_boxes(rng, plan.ratio[bad], h, w)
            eff = effective(boxes)
            norms = interpolation_norms(first, second[partner], torch.as_tensor(eff, dtype=first.dtype))
        valid = norms.numpy() >= DEGENERATE_NORM
        if not valid.all():
            log.warning("skipping %d degenerate interpolation pair(s)", int((~valid).sum()))
        if not valid.any():
            return torch.zeros(())

        images_j = {"q-q": xq, "q-k": xk}[cfg.image_pairing][partner]
        mixed, eff_pix = interpolate_images(xq, images_j, plan.ratio, cfg.mix_mode, boxes=boxes)
        keep = torch.from_numpy(valid)
        v_mix = encode(self.online, mixed[keep], Branch.ONLINE).vectors
        ratio = torch.as_tensor(eff[valid], dtype=first.dtype)
        v_tilde = interpolate_features(first[keep], second[partner][keep], ratio)
        return local_loss(
            v_mix,
            v_tilde,
            negatives,
            cfg.tau,
            positive_in_denominator=cfg.local_positive_in_denominator,
            pixel_ratio=eff_pix[keep].numpy(),
            feature_ratio=eff[valid],
        )

    def compute_losses(self, batch: ImageBatch, step: int | None = None):
        """Forward all branches for ``batch``; returns (LossBreakdown, momentum keys)."""
        cfg = self.cfg
        step = self.step if step is None else step
        rng_q, rng_k, rng_w, rng_mix = self._step_rngs(step)
        x = batch.pixels
        xq = augment_regular(x, rng_q, self.aug)
        xk = augment_regular(x, rng_k, self.aug)
        self.online.train()
        self.momentum.train()
        q = encode(self.online, xq, Branch.ONLINE).vectors
        k = encode(self.momentum, xk, Branch.MOMENTUM).vectors
        negatives = self.bank.as_negatives() if self.bank.filled else k.detach()

        csl = infonce(q, k, negatives, cfg.tau)
        glob = torch.zeros(())
        if cfg.lambda1 > 0:
            xw = augment_weak(x, rng_w, self.aug)
            v_bar = encode(self.momentum, xw, Branch.MOMENTUM).vectors
            glob = global_loss(q, v_bar, negatives, cfg.tau_ot, cfg.tau_tt)
        local = torch.zeros(())
        if cfg.lambda2 > 0:
            local = self._local_term(xq, xk, q, k, negatives, rng_mix)
        return total_loss(csl, glob, local, cfg.lambda1, cfg.lambda2), k

    def train_step(self, batch: ImageBatch | None = None, check_invariants: bool = False) -> MetricsRecord:
        cfg = self.cfg
        s = self.step
        if batch is None:
            batch = self.batch_for_step(s)
        if len(batch) < 2 and cfg.lambda2 > 0:
            raise ParameterError("local loss needs a batch of at least 2")
        if check_invariants:
            before_momentum = {n: p.detach().clone() for n, p in self.momentum.named_parameters()}
            filled_before = self.bank.filled

        losses, keys = self.compute_losses(batch, s)
        lr = cosine_lr(min(s, self.schedule_steps), self.schedule_steps, cfg.base_lr)
        for group in self.optimizer.param_groups:
            group["lr"] = lr
        self.optimizer.zero_grad(set_to_none=True)
        losses.total.backward()
        self.optimizer.step()
        ema_update(self.momentum, self.online, cfg.ema_m)
        self.bank.enqueue(EmbeddingBatch(keys.detach(), Branch.MOMENTUM))
        self.step += 1

        vals = losses.as_floats()
        record = MetricsRecord(
            step=self.step,
            epoch=s // self.steps_per_epoch,
            lr=lr,
            csl=vals["csl"],
            global_=vals["global"],
            local=vals["local"],
            total=vals["total"],
            bank_filled=self.bank.filled,
            wall_time=time.perf_counter(),
        )
        if check_invariants:
            self._check_step(losses, record, before_momentum, filled_before, keys)
        return record

    def _check_step(self, losses: LossBreakdown, rec: MetricsRecord, before, filled_before, keys) -> None:
        cfg = self.cfg
        problems = []
        vals = [rec.csl, rec.global_, rec.local, rec.total]
        if not all(math.isfinite(v) for v in vals):
            problems.append("non-finite loss component")
        if abs(rec.total - (rec.csl + cfg.lambda1 * rec.global_ + cfg.lambda2 * rec.local)) > 1e-6 * max(1.0, abs(rec.total)):
            problems.append("total != csl + l1*global + l2*local")
        if self.bank.filled != min(cfg.bank_capacity, filled_before + keys.shape[0]):
            problems.append("bank fill count did not advance by the batch size")
        online = dict(self.online.named_parameters())
        for name, p in self.momentum.named_parameters():
            expect = cfg.ema_m * before[name] + (1 - cfg.ema_m) * online[name].detach()
            if not torch.allclose(p, expect, rtol=1e-5, atol=1e-6):
                problems.append(f"momentum parameter {name} deviates from the EMA law")
                break
        newest = self.bank.ordered()[-keys.shape[0]:]
        if not torch.equal(newest, keys.detach().to(newest.dtype)):
            problems.append("enqueued keys are not this step's momentum embeddings")
        if problems:
            raise InvariantViolation(f"step {rec.step}: " + "; ".join(problems))

    # ------------------------------------------------------------------ checkpointing

    def state_tensors(self) -> dict[str, torch.Tensor]:
        out: dict[str, torch.Tensor] = {}
        for prefix, model in (("online", self.online), ("momentum", self.momentum)):
            for name, t in model.state_dict().items():
                out[f"{prefix}.{name}"] = t
        names = {id(p): n for n, p in self.online.named_parameters()}
        for group in self.optimizer.param_groups:
            for p in group["params"]:
                buf = self.optimizer.state.get(p, {}).get("momentum_buffer")
                if buf is not None:
                    out[f"optim.{names[id(p)]}"] = buf
        out["bank.storage"] = self.bank.storage
        return out

    def save(self, stem: str | Path) -> Path:
        meta = {
            "step": self.step,
            "config": self.cfg.to_dict(),
            "config_hash": self.cfg.config_hash(),
            "bank_cursor": self.bank.write_cursor,
            "bank_filled": self.bank.filled,
            "norm_mean": list(self.aug.mean),
            "norm_std": list(self.aug.std),
        }
        return ckpt.save_checkpoint(stem, self.state_tensors(), meta)

    def load(self, stem: str | Path) -> None:
        tensors, meta = ckpt.load_checkpoint(stem)
        if meta.get("config_hash") != self.cfg.config_hash():
            log.warning("checkpoint config hash %s differs from current %s", meta.get("config_hash"), self.cfg.config_hash())
        for prefix, model in (("online", self.online), ("momentum", self.momentum)):
            state = {k[len(prefix) + 1 :]: v for k, v in tensors.items() if k.startswith(prefix + ".")}
            model.load_state_dict(state)
        for p in self.momentum.parameters():
            p.requires_grad_(False)
        params = dict(self.online.named_parameters())
        self.optimizer.state.clear()
        for key, buf in tensors.items():
            if key.startswith("optim."):
                self.optimizer.state[params[key[6:]]]["momentum_buffer"] = buf.clone()
        self.bank.load_state_dict(
            {"storage": tensors["bank.storage"], "write_cursor": meta["bank_cursor"], "filled": meta["bank_filled"]}
        )
        self.step = int(meta["step"])

    @property
    def finished(self) -> bool:
        return self.step >= self.schedule_steps


def _write_metrics(path: Path, records: list[MetricsRecord], keep_until: int | None = None) -> None:
    if keep_until is not None and path.exists():
        kept = [ln for ln in path.read_text().splitlines() if ln and json.loads(ln)["step"] <= keep_until]
        path.write_text("".join(ln + "\n" for ln in kept))
    with path.open("a") as fh:
        for r in records:
            fh.write(r.to_json() + "\n")


def read_metrics(path: str | Path) -> list[MetricsRecord]:
    return [MetricsRecord.from_json(ln) for ln in Path(path).read_text().splitlines() if ln.strip()]


def pretrain(
    cfg: TrainConfig,
    out_dir: str | Path,
    resume: str | Path | None = None,
    train_set: ImageDataset | None = None,
    stop_after: int | None = None,
    check_invariants: bool = False,
) -> Path:
    """Train to completion (or ``stop_after`` total steps); returns the final checkpoint manifest."""
    out = Path(out_dir)
    (out / "checkpoints").mkdir(parents=True, exist_ok=True)
    save_config(cfg, out / "effective_config.yaml")
    trainer = Trainer(cfg, train_set)
    metrics_path = out / "metrics.jsonl"
    if resume is not None:
        trainer.load(resume)
        _write_metrics(metrics_path, [], keep_until=trainer.step)
    elif metrics_path.exists():
        metrics_path.unlink()

    last_good: Path | None = Path(resume) if resume is not None else None
    t0 = time.perf_counter()
    pending: list[MetricsRecord] = []
    limit = trainer.schedule_steps if stop_after is None else min(stop_after, trainer.schedule_steps)
    while trainer.step < limit:
        try:
            rec = trainer.train_step(check_invariants=check_invariants)
        except NumericError as exc:
            _write_metrics(metrics_path, pending)
            raise NumericError(f"{exc} at step {trainer.step + 1}; last good checkpoint: {last_good}") from exc
        rec.wall_time = rec.wall_time - t0
        if rec.step % cfg.log_every == 0:
            pending.append(rec)
        end_of_epoch = rec.step % trainer.steps_per_epoch == 0
        epoch_done = rec.step // trainer.steps_per_epoch
        due = (end_of_epoch and cfg.checkpoint_every > 0 and epoch_done % cfg.checkpoint_every == 0) or (
            cfg.checkpoint_every_steps > 0 and rec.step % cfg.checkpoint_every_steps == 0
        )
        if due:
            _write_metrics(metrics_path, pending)
            pending = []
            last_good = trainer.save(out / "checkpoints" / f"step_{rec.step:07d}")
    _write_metrics(metrics_path, pending)
    final = trainer.save(out / "checkpoints" / f"step_{trainer.step:07d}")
    trainer.save(out / "checkpoints" / "last")
    return final


def metrics_signature(records: list[MetricsRecord]) -> list[tuple]:
    """Everything except wall-clock time, for determinism comparisons."""
    return [(r.step, r.epoch, r.lr, r.csl, r.global_, r.local, r.total, r.bank_filled) for r in records]
