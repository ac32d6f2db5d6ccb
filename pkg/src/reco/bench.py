"""Desk-scale comparison runs: train several loss configurations over seeds and score them.

Each (arm, seed) result is cached as JSON under the config hash, so an interrupted sweep
resumes where it stopped and a finished one is free to re-read.
"""

from __future__ import annotations

import hashlib
import json
import logging
import statistics
import time
from dataclasses import dataclass, field
from pathlib import Path

from .config import TrainConfig, load_config
from .datapipe import load_dataset
from .evaluation import class_similarity, embed_images, knn_classify
from .trainer import Trainer

log = logging.getLogger(__name__)

ARMS: dict[str, dict] = {
    "baseline": {"lambda1": 0.0, "lambda2": 0.0},
    "global": {"lambda1": 1.0, "lambda2": 0.0},
    "local": {"lambda1": 0.0, "lambda2": 2.0},
    "reco": {"lambda1": 1.0, "lambda2": 2.0},
    "global_tt0.2": {"lambda1": 1.0, "lambda2": 0.0, "tau_tt": 0.2, "tau_ot": 0.1},
}
DEFAULT_SEEDS = (0, 1, 2)
_TRAINING_SOURCES = ("datapipe.py", "encoder.py", "membank.py", "losses.py", "trainer.py", "evaluation.py", "bench.py")


def code_fingerprint() -> str:
    """Hash of the modules that determine a result, so cached runs go stale when they change."""
    h = hashlib.sha256()
    for name in _TRAINING_SOURCES:
        h.update((Path(__file__).parent / name).read_bytes())
    return h.hexdigest()[:12]


@dataclass
class ArmResult:
    arm: str
    seed: int
    knn_top1: float
    knn_top5: float
    s_intra: float
    s_inter: float
    phi: float
    final_total: float
    steps: int
    seconds: float
    config_hash: str = ""
    extra: dict = field(default_factory=dict)


def run_arm(cfg: TrainConfig, arm: str = "", datasets=None) -> ArmResult:
    train_set, test_set = datasets or (
        load_dataset(cfg.dataset, "train", cfg.image_size),
        load_dataset(cfg.dataset, "test", cfg.image_size),
    )
    t0 = time.perf_counter()
    trainer = Trainer(cfg, train_set)
    rec = None
    while not trainer.finished:
        rec = trainer.train_step()
    seconds = time.perf_counter() - t0
    model = trainer.online
    bs = cfg.eval_batch_size
    train_emb = embed_images(model, trainer.data.images, trainer.aug, batch_size=bs)
    test_emb = embed_images(model, test_set.images, trainer.aug, batch_size=bs)
    knn = knn_classify(train_emb, trainer.data.labels, test_emb, test_set.labels, cfg.knn_k, cfg.knn_temperature)
    sim = class_similarity(test_emb, test_set.labels)
    return ArmResult(
        arm=arm,
        seed=cfg.seed,
        knn_top1=knn.top1,
        knn_top5=knn.top5,
        s_intra=sim.s_intra,
        s_inter=sim.s_inter,
        phi=sim.phi,
        final_total=rec.total if rec else float("nan"),
        steps=trainer.step,
        seconds=seconds,
        config_hash=cfg.config_hash(),
    )


def sweep(
    base: TrainConfig | str = "digits",
    arms: list[str] | None = None,
    seeds=DEFAULT_SEEDS,
    cache_dir: str | Path = "bench_results",
    overrides: dict | None = None,
) -> dict[str, list[ArmResult]]:
    base_cfg = load_config(base) if isinstance(base, str) else base
    if overrides:
        base_cfg = base_cfg.replace(**overrides)
    cache = Path(cache_dir)
    cache.mkdir(parents=True, exist_ok=True)
    datasets = (
        load_dataset(base_cfg.dataset, "train", base_cfg.image_size),
        load_dataset(base_cfg.dataset, "test", base_cfg.image_size),
    )
    results: dict[str, list[ArmResult]] = {}
    code = code_fingerprint()
    for arm in arms or list(ARMS):
        results[arm] = []
        for seed in seeds:
            cfg = base_cfg.replace(seed=seed, **ARMS[arm])
            path = cache / f"{arm}_s{seed}_{cfg.config_hash()}_{code}.json"
            if path.exists():
                res = ArmResult(**json.loads(path.read_text()))
            else:
                log.info("training arm=%s seed=%d", arm, seed)
                res = run_arm(cfg, arm, datasets)
                path.write_text(json.dumps(res.__dict__, indent=2))
            log.info("%s seed=%d knn_top1=%.4f phi=%.4f (%.0fs)", arm, seed, res.knn_top1, res.phi, res.seconds)
            results[arm].append(res)
    return results


def median(results: list[ArmResult], metric: str) -> float:
    return statistics.median(getattr(r, metric) for r in results)


def summary_rows(results: dict[str, list[ArmResult]]) -> list[dict]:
    rows = []
    for arm, runs in results.items():
        rows.append(
            {
                "arm": arm,
                "seeds": len(runs),
                "knn_top1": median(runs, "knn_top1"),
                "knn_top5": median(runs, "knn_top5"),
                "s_intra": median(runs, "s_intra"),
                "s_inter": median(runs, "s_inter"),
                "phi": median(runs, "phi"),
                "per_seed": {m: [getattr(r, m) for r in runs] for m in ("knn_top1", "s_intra", "phi")},
            }
        )
    return rows
