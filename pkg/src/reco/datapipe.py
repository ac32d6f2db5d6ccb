"""Datasets, the regular and weak augmentation pipelines, and pixel-space interpolation.

All randomness is drawn from an explicit ``numpy.random.Generator`` so a view is a pure
function of (image, rng state). Pixel tensors are ``float32`` in ``[0, 1]`` before
normalisation, laid out ``(B, C, H, W)``; single images ``(C, H, W)`` are accepted too.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np
import torch
import torch.nn.functional as F

from .config import FEATURE_PAIRINGS, IMAGE_PAIRINGS, MIX_MODES, TrainConfig
from .errors import DataError, ParameterError

IMAGE_SUFFIXES = {".png", ".jpg", ".jpeg", ".bmp", ".gif", ".tif", ".tiff", ".webp"}
_GRAY_WEIGHTS = (0.299, 0.587, 0.114)


@dataclass
class ImageBatch:
    pixels: torch.Tensor
    ids: torch.Tensor

    def __post_init__(self) -> None:
        if self.pixels.ndim != 4 or self.pixels.shape[0] < 1:
            raise ParameterError(f"expected a non-empty (B, C, H, W) batch, got {tuple(self.pixels.shape)}")
        if self.ids.shape[0] != self.pixels.shape[0]:
            raise ParameterError("ids and pixels disagree on batch size")

    def __len__(self) -> int:
        return self.pixels.shape[0]


# --------------------------------------------------------------------------- datasets


@dataclass
class ImageDataset:
    images: torch.Tensor  # (N, C, H, W) float32 in [0, 1]
    labels: torch.Tensor  # (N,) int64
    name: str = ""
    classes: list[str] = field(default_factory=list)

    def __len__(self) -> int:
        return self.images.shape[0]

    def channel_stats(self) -> tuple[tuple[float, ...], tuple[float, ...]]:
        x = self.images.double()
        mean = x.mean(dim=(0, 2, 3))
        std = x.std(dim=(0, 2, 3)).clamp_min(1e-3)
        return tuple(float(v) for v in mean), tuple(float(v) for v in std)

    def subset(self, size: int, seed: int) -> "ImageDataset":
        if size <= 0 or size >= len(self):
            return self
        idx = np.sort(np.random.default_rng([seed, 7]).permutation(len(self))[:size])
        idx_t = torch.from_numpy(idx)
        return ImageDataset(self.images[idx_t], self.labels[idx_t], self.name, self.classes)


def _resize_square(images: torch.Tensor, size: int) -> torch.Tensor:
    if images.shape[-1] == size and images.shape[-2] == size:
        return images
    return F.interpolate(images, size=(size, size), mode="bilinear", align_corners=False).clamp(0, 1)


def _load_digits(split: str, image_size: int) -> ImageDataset:
    from sklearn.datasets import load_digits
    from sklearn.model_selection import train_test_split

    digits = load_digits()
    x = digits.images.astype(np.float32) / 16.0
    y = digits.target.astype(np.int64)
    idx_train, idx_test = train_test_split(
        np.arange(len(y)), test_size=0.25, random_state=0, stratify=y
    )
    idx = idx_train if split == "train" else idx_test
    imgs = torch.from_numpy(x[idx]).unsqueeze(1).repeat(1, 3, 1, 1)
    imgs = _resize_square(imgs, image_size)
    return ImageDataset(imgs.contiguous(), torch.from_numpy(y[idx]), "digits", [str(i) for i in range(10)])


def decode_image(path: str | Path, image_size: int) -> torch.Tensor:
    """Decode one file to (3, S, S): shorter-side resize then centre crop."""
    from PIL import Image, UnidentifiedImageError

    try:
        with Image.open(path) as im:
            im = im.convert("RGB")
            w, h = im.size
            scale = image_size / min(w, h)
            im = im.resize((max(image_size, round(w * scale)), max(image_size, round(h * scale))), Image.BILINEAR)
            w, h = im.size
            left, top = (w - image_size) // 2, (h - image_size) // 2
            im = im.crop((left, top, left + image_size, top + image_size))
            arr = np.asarray(im, dtype=np.uint8)
    except (UnidentifiedImageError, OSError) as exc:
        raise DataError(f"cannot decode image {path}: {exc}") from None
    return torch.from_numpy(arr.copy()).permute(2, 0, 1).float() / 255.0


def _load_tree(root: Path, image_size: int) -> ImageDataset:
    classes = sorted(p.name for p in root.iterdir() if p.is_dir())
    if not classes:
        raise DataError(f"{root}: no class directories")
    images, labels = [], []
    for label, name in enumerate(classes):
        for f in sorted((root / name).iterdir()):
            if f.suffix.lower() in IMAGE_SUFFIXES:
                images.append(decode_image(f, image_size))
                labels.append(label)
    if not images:
        raise DataError(f"{root}: no images found")
    return ImageDataset(torch.stack(images), torch.tensor(labels, dtype=torch.int64), root.name, classes)


def write_packed(path: str | Path, images: Sequence[np.ndarray], labels: Sequence[int]) -> Path:
    """Write uint8 CHW images as shape-prefixed records plus a ``.labels`` sidecar."""
    path = Path(path)
    if len(images) != len(labels):
        raise ParameterError("images and labels differ in length")
    with path.open("wb") as fh:
        for img in images:
            arr = np.ascontiguousarray(img, dtype=np.uint8)
            if arr.ndim != 3:
                raise ParameterError("packed images must be (C, H, W)")
            fh.write(struct.pack("<3I", *arr.shape))
            fh.write(arr.tobytes())
    path.with_suffix(".labels").write_text("".join(f"{int(v)}\n" for v in labels))
    return path


def read_packed(path: str | Path, image_size: int | None = None) -> ImageDataset:
    path = Path(path)
    label_path = path.with_suffix(".labels")
    if not path.exists() or not label_path.exists():
        raise DataError(f"{path}: packed file or its .labels sidecar is missing")
    raw = path.read_bytes()
    images, offset = [], 0
    while offset < len(raw):
        if offset + 12 > len(raw):
            raise DataError(f"{path}: truncated record header at byte {offset}")
        c, h, w = struct.unpack_from("<3I", raw, offset)
        offset += 12
        n = c * h * w
        if n == 0 or offset + n > len(raw):
            raise DataError(f"{path}: malformed record at byte {offset - 12}")
        arr = np.frombuffer(raw, dtype=np.uint8, count=n, offset=offset).reshape(c, h, w)
        offset += n
        img = torch.from_numpy(arr.copy()).float().div_(255.0)
        if c == 1:
            img = img.repeat(3, 1, 1)
        if image_size is not None:
            img = _resize_square(img.unsqueeze(0), image_size)[0]
        images.append(img)
    try:
        labels = [int(line) for line in label_path.read_text().split()]
    except ValueError as exc:
        raise DataError(f"{label_path}: {exc}") from None
    if len(labels) != len(images):
        raise DataError(f"{path}: {len(images)} images but {len(labels)} labels")
    shapes = {tuple(i.shape) for i in images}
    if len(shapes) > 1:
        raise DataError(f"{path}: mixed image shapes {sorted(shapes)}; pass image_size to resize")
    return ImageDataset(torch.stack(images), torch.tensor(labels, dtype=torch.int64), path.stem)


def load_dataset(source: str | Path, split: str, image_size: int) -> ImageDataset:
    """Load a split from ``builtin:digits``, a ``<split>.bin`` pack, or a ``<split>/`` class tree."""
    if split not in ("train", "test"):
        raise DataError(f"unknown split {split!r}")
    if str(source) == "builtin:digits":
        return _load_digits(split, image_size)
    root = Path(source)
    if root.is_file() and root.suffix == ".bin":
        return read_packed(root, image_size)
    if (root / f"{split}.bin").exists():
        return read_packed(root / f"{split}.bin", image_size)
    if (root / split).is_dir():
        return _load_tree(root / split, image_size)
    raise DataError(f"{source}: no {split} split found (expected {split}.bin or {split}/)")


def iterate_batches(n_items: int, batch_size: int, seed: int, epoch: int) -> Iterator[np.ndarray]:
    """Shuffled index batches for one epoch; incomplete tail batch dropped."""
    order = np.random.default_rng([seed, 11, epoch]).permutation(n_items)
    for start in range(0, n_items - batch_size + 1, batch_size):
        yield order[start : start + batch_size]


# --------------------------------------------------------------------------- augmentation


@dataclass
class AugmentParams:
    size: int = 32
    crop_scale: tuple[float, float] = (0.2, 1.0)
    crop_ratio: tuple[float, float] = (3 / 4, 4 / 3)
    flip_p: float = 0.5
    jitter_p: float = 0.8
    brightness: float = 0.4
    contrast: float = 0.4
    saturation: float = 0.4
    hue: float = 0.1
    grayscale_p: float = 0.2
    blur_p: float = 0.5
    blur_sigma: tuple[float, float] = (0.1, 2.0)
    mean: tuple[float, ...] = (0.5, 0.5, 0.5)
    std: tuple[float, ...] = (0.25, 0.25, 0.25)

    @classmethod
    def from_config(cls, cfg: TrainConfig, mean: Sequence[float], std: Sequence[float]) -> "AugmentParams":
        return cls(
            size=cfg.image_size,
            crop_scale=(cfg.crop_scale_min, cfg.crop_scale_max),
            flip_p=cfg.flip_p,
            jitter_p=cfg.jitter_p,
            brightness=cfg.brightness,
            contrast=cfg.contrast,
            saturation=cfg.saturation,
            hue=cfg.hue,
            grayscale_p=cfg.grayscale_p,
            blur_p=cfg.blur_p,
            blur_sigma=(cfg.blur_sigma_min, cfg.blur_sigma_max),
            mean=tuple(mean),
            std=tuple(std),
        )


@dataclass
class ViewParams:
    """Per-sample random choices for one batch of views."""

    boxes: np.ndarray  # (B, 4) top, left, height, width in source pixels
    flip: np.ndarray  # (B,) bool
    jitter: np.ndarray | None = None  # (B,) bool
    factors: np.ndarray | None = None  # (B, 4) brightness, contrast, saturation, hue shift
    gray: np.ndarray | None = None
    blur: np.ndarray | None = None
    sigma: np.ndarray | None = None


def _as_batch(image: torch.Tensor) -> tuple[torch.Tensor, bool]:
    if image.ndim == 3:
        return image.unsqueeze(0), True
    if image.ndim == 4:
        return image, False
    raise ParameterError(f"expected (C, H, W) or (B, C, H, W), got {tuple(image.shape)}")


def sample_crop_boxes(rng: np.random.Generator, n: int, height: int, width: int, scale, ratio) -> np.ndarray:
    """Random-resized-crop boxes, ten attempts per sample then a centre-crop fallback."""
    area = height * width
    log_ratio = (math.log(ratio[0]), math.log(ratio[1]))
    boxes = np.zeros((n, 4), dtype=np.float64)
    for k in range(n):
        target = area * rng.uniform(scale[0], scale[1], size=10)
        aspect = np.exp(rng.uniform(log_ratio[0], log_ratio[1], size=10))
        w = np.round(np.sqrt(target * aspect))
        h = np.round(np.sqrt(target / aspect))
        ok = np.flatnonzero((w > 0) & (h > 0) & (w <= width) & (h <= height))
        offsets = rng.random(2)
        if ok.size:
            h0, w0 = h[ok[0]], w[ok[0]]
            top = np.floor(offsets[0] * (height - h0 + 1))
            left = np.floor(offsets[1] * (width - w0 + 1))
        else:
            in_ratio = width / height
            if in_ratio < ratio[0]:
                w0, h0 = width, round(width / ratio[0])
            elif in_ratio > ratio[1]:
                h0, w0 = height, round(height * ratio[1])
            else:
                w0, h0 = width, height
            top, left = (height - h0) // 2, (width - w0) // 2
        boxes[k] = (top, left, h0, w0)
    return boxes


def sample_view_params(
    rng: np.random.Generator, n: int, height: int, width: int, params: AugmentParams, weak: bool
) -> ViewParams:
    boxes = sample_crop_boxes(rng, n, height, width, params.crop_scale, params.crop_ratio)
    flip = rng.random(n) < params.flip_p
    if weak:
        return ViewParams(boxes, flip)
    jitter = rng.random(n) < params.jitter_p
    factors = np.stack(
        [
            rng.uniform(max(0.0, 1 - params.brightness), 1 + params.brightness, n),
            rng.uniform(max(0.0, 1 - params.contrast), 1 + params.contrast, n),
            rng.uniform(max(0.0, 1 - params.saturation), 1 + params.saturation, n),
            rng.uniform(-params.hue, params.hue, n),
        ],
        axis=1,
    )
    gray = rng.random(n) < params.grayscale_p
    blur = rng.random(n) < params.blur_p
    sigma = rng.uniform(params.blur_sigma[0], params.blur_sigma[1], n)
    return ViewParams(boxes, flip, jitter, factors, gray, blur, sigma)


def crop_and_flip(images: torch.Tensor, boxes: np.ndarray, flip: np.ndarray, size: int) -> torch.Tensor:
    """Crop every box and resize to ``size`` with one batched bilinear resample; flips fold into the affine map."""
    b, _, h, w = images.shape
    top, left, bh, bw = (torch.as_tensor(boxes[:, i], dtype=torch.float32) for i in range(4))
    sx = bw / w
    sy = bh / h
    cx = (left + bw / 2) / w * 2 - 1
    cy = (top + bh / 2) / h * 2 - 1
    sx = torch.where(torch.as_tensor(flip), -sx, sx)
    theta = torch.zeros(b, 2, 3)
    theta[:, 0, 0] = sx
    theta[:, 0, 2] = cx
    theta[:, 1, 1] = sy
    theta[:, 1, 2] = cy
    grid = F.affine_grid(theta, (b, images.shape[1], size, size), align_corners=False)
    return F.grid_sample(images, grid, mode="bilinear", padding_mode="border", align_corners=False)


def _grayscale(x: torch.Tensor) -> torch.Tensor:
    if x.shape[1] == 1:
        return x
    wts = torch.tensor(_GRAY_WEIGHTS, dtype=x.dtype).view(1, 3, 1, 1)
    return (x * wts).sum(dim=1, keepdim=True)


def _rgb_to_hsv(x: torch.Tensor) -> torch.Tensor:
    r, g, b = x.unbind(1)
    maxc, _ = x.max(dim=1)
    minc, _ = x.min(dim=1)
    delta = maxc - minc
    s = torch.where(maxc > 0, delta / maxc.clamp_min(1e-12), torch.zeros_like(maxc))
    safe = delta.clamp_min(1e-12)
    rc, gc, bc = (maxc - r) / safe, (maxc - g) / safe, (maxc - b) / safe
    h = torch.where(maxc == r, bc - gc, torch.where(maxc == g, 2.0 + rc - bc, 4.0 + gc - rc))
    h = torch.where(delta > 0, (h / 6.0) % 1.0, torch.zeros_like(h))
    return torch.stack([h, s, maxc], dim=1)


def _hsv_to_rgb(x: torch.Tensor) -> torch.Tensor:
    h, s, v = x.unbind(1)
    i = torch.floor(h * 6.0)
    f = h * 6.0 - i
    i = i.long() % 6
    p, q, t = v * (1 - s), v * (1 - s * f), v * (1 - s * (1 - f))
    choices = [
        torch.stack(c, dim=1)
        for c in ((v, t, p), (q, v, p), (p, v, t), (p, q, v), (t, p, v), (v, p, q))
    ]
    out = choices[0]
    for k in range(1, 6):
        out = torch.where((i == k).unsqueeze(1), choices[k], out)
    return out


def color_jitter(x: torch.Tensor, factors: np.ndarray, active: np.ndarray) -> torch.Tensor:
    """Brightness, contrast, saturation, hue in that order; inactive rows pass through untouched."""
    if not active.any():
        return x
    f = torch.as_tensor(factors, dtype=x.dtype)
    shape = (-1, 1, 1, 1)
    y = (x * f[:, 0].view(shape)).clamp(0, 1)
    m = _grayscale(y).mean(dim=(1, 2, 3), keepdim=True)
    y = ((y - m) * f[:, 1].view(shape) + m).clamp(0, 1)
    if y.shape[1] == 3:
        g = _grayscale(y)
        y = ((y - g) * f[:, 2].view(shape) + g).clamp(0, 1)
        hsv = _rgb_to_hsv(y)
        hsv[:, 0] = (hsv[:, 0] + f[:, 3].view(-1, 1, 1)) % 1.0
        y = _hsv_to_rgb(hsv).clamp(0, 1)
    mask = torch.as_tensor(active).view(shape)
    return torch.where(mask, y, x)


def gaussian_blur(x: torch.Tensor, sigma: np.ndarray, active: np.ndarray) -> torch.Tensor:
    if not active.any():
        return x
    b, c, h, w = x.shape
    radius = int(min(math.ceil(3 * float(sigma.max())), h - 1, w - 1))
    if radius < 1:
        return x
    offsets = torch.arange(-radius, radius + 1, dtype=x.dtype)
    sig = torch.as_tensor(sigma, dtype=x.dtype).view(-1, 1)
    kernel = torch.exp(-0.5 * (offsets.view(1, -1) / sig) ** 2)
    kernel = kernel / kernel.sum(dim=1, keepdim=True)  # (B, K)
    k = kernel.repeat_interleave(c, dim=0)  # one kernel per (sample, channel)
    y = x.reshape(1, b * c, h, w)
    y = F.pad(y, (radius, radius, radius, radius), mode="reflect")
    y = F.conv2d(y, k.view(b * c, 1, 1, -1), groups=b * c)
    y = F.conv2d(y, k.view(b * c, 1, -1, 1), groups=b * c)
    y = y.view(b, c, h, w)
    return torch.where(torch.as_tensor(active).view(-1, 1, 1, 1), y, x)


def normalize(x: torch.Tensor, mean: Sequence[float], std: Sequence[float]) -> torch.Tensor:
    m = torch.tensor(mean, dtype=x.dtype).view(1, -1, 1, 1)
    s = torch.tensor(std, dtype=x.dtype).view(1, -1, 1, 1)
    return (x - m) / s


def _check_size(images: torch.Tensor, size: int) -> None:
    if size > min(images.shape[-2:]):
        raise ParameterError(f"crop size {size} exceeds image size {tuple(images.shape[-2:])}")
    if not torch.isfinite(images).all():
        raise ParameterError("non-finite pixel values")


def apply_view(images: torch.Tensor, vp: ViewParams, params: AugmentParams) -> torch.Tensor:
    x = crop_and_flip(images, vp.boxes, vp.flip, params.size)
    if vp.jitter is not None:
        x = color_jitter(x, vp.factors, vp.jitter)
        if vp.gray.any():
            gray = _grayscale(x).expand_as(x)
            x = torch.where(torch.as_tensor(vp.gray).view(-1, 1, 1, 1), gray, x)
        x = gaussian_blur(x, vp.sigma, vp.blur)
    return normalize(x, params.mean, params.std)


def augment_regular(image: torch.Tensor, rng: np.random.Generator, params: AugmentParams) -> torch.Tensor:
    """Random resized crop, colour jitter, grayscale, blur, flip, normalise."""
    x, single = _as_batch(image)
    _check_size(x, params.size)
    vp = sample_view_params(rng, x.shape[0], x.shape[-2], x.shape[-1], params, weak=False)
    out = apply_view(x, vp, params)
    return out[0] if single else out


def augment_weak(image: torch.Tensor, rng: np.random.Generator, params: AugmentParams) -> torch.Tensor:
    """Random resized crop and horizontal flip only, then normalise."""
    x, single = _as_batch(image)
    _check_size(x, params.size)
    vp = sample_view_params(rng, x.shape[0], x.shape[-2], x.shape[-1], params, weak=True)
    out = apply_view(x, vp, params)
    return out[0] if single else out


def center_view(image: torch.Tensor, params: AugmentParams) -> torch.Tensor:
    """Deterministic evaluation view: centre crop to ``params.size`` then normalise."""
    x, single = _as_batch(image)
    _check_size(x, params.size)
    h, w = x.shape[-2:]
    top, left = (h - params.size) // 2, (w - params.size) // 2
    out = normalize(x[..., top : top + params.size, left : left + params.size], params.mean, params.std)
    return out[0] if single else out


# --------------------------------------------------------------------------- interpolation


@dataclass
class PairingPlan:
    ratio: np.ndarray  # (B,) one r per pair; all equal unless per-pair sampling
    alpha: float
    source_index: np.ndarray
    partner_index: np.ndarray
    image_pairing: str = "q-k"
    feature_pairing: str = "q-k"
    mix_mode: str = "cutmix"

    def __len__(self) -> int:
        return len(self.source_index)


def sample_ratio(alpha: float, rng: np.random.Generator, size: int | None = None):
    if not alpha > 0:
        raise ParameterError(f"alpha must be > 0, got {alpha}")
    return rng.beta(alpha, alpha, size=size)


def make_pairing(
    batch_size: int,
    alpha: float,
    rng: np.random.Generator,
    image_pairing: str = "q-k",
    feature_pairing: str = "q-k",
    mix_mode: str = "cutmix",
    per_pair: bool = False,
) -> PairingPlan:
    if batch_size < 1:
        raise ParameterError("batch_size must be >= 1")
    if image_pairing not in IMAGE_PAIRINGS or feature_pairing not in FEATURE_PAIRINGS or mix_mode not in MIX_MODES:
        raise ParameterError("unknown pairing or mix mode")
    if per_pair:
        ratio = np.asarray(sample_ratio(alpha, rng, size=batch_size), dtype=np.float64)
    else:
        ratio = np.full(batch_size, float(sample_ratio(alpha, rng)))
    partner = rng.permutation(batch_size)
    return PairingPlan(ratio, alpha, np.arange(batch_size), partner, image_pairing, feature_pairing, mix_mode)


def cutmix_boxes(rng: np.random.Generator, ratio: np.ndarray, height: int, width: int) -> np.ndarray:
    """Patch boxes (y0, y1, x0, x1) with side lengths sqrt(1 - r) of each dimension, centre uniform, clipped."""
    ratio = np.asarray(ratio, dtype=np.float64)
    cut = np.sqrt(1.0 - ratio)
    cut_h = (height * cut).astype(np.int64)
    cut_w = (width * cut).astype(np.int64)
    cy = rng.integers(0, height, size=ratio.shape)
    cx = rng.integers(0, width, size=ratio.shape)
    y0 = np.clip(cy - cut_h // 2, 0, height)
    y1 = np.clip(cy - cut_h // 2 + cut_h, 0, height)
    x0 = np.clip(cx - cut_w // 2, 0, width)
    x1 = np.clip(cx - cut_w // 2 + cut_w, 0, width)
    return np.stack([y0, y1, x0, x1], axis=-1)


def cutmix_mask(boxes: np.ndarray, height: int, width: int) -> torch.Tensor:
    """Boolean (B, 1, H, W) mask, True where pixels come from the partner image."""
    ys = torch.arange(height).view(1, -1, 1)
    xs = torch.arange(width).view(1, 1, -1)
    b = torch.as_tensor(boxes)
    inside = (
        (ys >= b[:, 0].view(-1, 1, 1))
        & (ys < b[:, 1].view(-1, 1, 1))
        & (xs >= b[:, 2].view(-1, 1, 1))
        & (xs < b[:, 3].view(-1, 1, 1))
    )
    return inside.unsqueeze(1)


def interpolate_images(
    x_i: torch.Tensor,
    x_j: torch.Tensor,
    r,
    mix_mode: str = "cutmix",
    rng: np.random.Generator | None = None,
    boxes: np.ndarray | None = None,
) -> tuple[torch.Tensor, torch.Tensor]:
    """Mix ``x_i`` with ``x_j`` at ratio ``r`` (scalar or per-sample).

    Returns the synthetic images and the effective ratio per sample: ``r`` for mixup, the
    realised fraction of pixels kept from ``x_i`` for cutmix.
    """
    if x_i.shape != x_j.shape:
        raise ParameterError(f"shape mismatch {tuple(x_i.shape)} vs {tuple(x_j.shape)}")
    a, single = _as_batch(x_i)
    b, _ = _as_batch(x_j)
    n, _, h, w = a.shape
    ratio = np.broadcast_to(np.asarray(r, dtype=np.float64), (n,)).copy()
    if ((ratio < 0) | (ratio > 1)).any():
        raise ParameterError("interpolation ratio must lie in [0, 1]")
    if mix_mode == "mixup":
        rt = torch.as_tensor(ratio, dtype=a.dtype).view(-1, 1, 1, 1)
        out = rt * a + (1 - rt) * b
        eff = torch.as_tensor(ratio)
    elif mix_mode == "cutmix":
        if boxes is None:
            if rng is None:
                raise ParameterError("cutmix needs an rng or explicit boxes")
            boxes = cutmix_boxes(rng, ratio, h, w)
        boxes = np.asarray(boxes).reshape(n, 4)
        mask = cutmix_mask(boxes, h, w)
        out = torch.where(mask, b, a)
        area = (boxes[:, 1] - boxes[:, 0]) * (boxes[:, 3] - boxes[:, 2])
        eff = torch.as_tensor(1.0 - area / float(h * w), dtype=torch.float64)
    else:
        raise ParameterError(f"unknown mix mode {mix_mode!r}")
    return (out[0], eff[0]) if single else (out, eff)
