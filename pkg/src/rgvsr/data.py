"""Degradation pipeline (Gaussian blur + decimation), dataset ingestion,
sequence padding, patch sampling, and augmentation.

File I/O is lossless 8-bit RGB; all internal math is floating point in [0,1].
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F
from PIL import Image

from .config import DegradationConfig
from .errors import ConfigError, ContractError, DataError

IMAGE_SUFFIXES = (".png", ".bmp")


def gaussian_kernel(sigma: float, size: int) -> np.ndarray:
    """Normalized isotropic Gaussian kernel, [size, size] float64."""
    if sigma <= 0:
        raise ConfigError(f"sigma must be positive, got {sigma}")
    if size < 1 or size % 2 == 0:
        raise ConfigError(f"kernel size must be odd and positive, got {size}")
    ax = np.arange(size, dtype=np.float64) - size // 2
    k = np.exp(-(ax[:, None] ** 2 + ax[None, :] ** 2) / (2.0 * sigma**2))
    return k / k.sum()


def degrade(frames, cfg: DegradationConfig):
    """Blur with the Gaussian kernel (reflect padding) and decimate.

    ``frames``: [..., C, H, W] tensor with H, W divisible by cfg.scale.
    Keeps pixels at indices offset, offset+scale, ... per axis.
    """
    h, w = frames.shape[-2], frames.shape[-1]
    if h % cfg.scale or w % cfg.scale:
        raise ContractError(
            f"frame size {h}x{w} not divisible by scale {cfg.scale}"
        )
    k = torch.as_tensor(gaussian_kernel(cfg.sigma, cfg.kernel_size),
                        dtype=frames.dtype, device=frames.device)
    lead = frames.shape[:-3]
    c = frames.shape[-3]
    flat = frames.reshape(-1, 1, h, w)
    pad = cfg.kernel_size // 2
    flat = F.pad(flat, (pad, pad, pad, pad), mode="reflect")
    blurred = F.conv2d(flat, k.expand(1, 1, -1, -1))
    off = cfg.decimation_offset
    out = blurred[..., off :: cfg.scale, off :: cfg.scale]
    return out.reshape(*lead, c, h // cfg.scale, w // cfg.scale)


def triple_indices(t: int, length: int) -> tuple[int, int, int]:
    """Neighbor indices for time t with end replication."""
    if length < 1:
        raise ContractError("sequence must contain at least one frame")
    return (max(t - 1, 0), t, min(t + 1, length - 1))


def sequence_triples(seq):
    """[T, C, H, W] -> [T, 3, C, H, W]; triple t is (t-1, t, t+1), ends replicated."""
    if seq.dim() != 4:
        raise ContractError(f"expected [T, C, H, W], got shape {tuple(seq.shape)}")
    t = seq.shape[0]
    idx = torch.tensor([triple_indices(i, t) for i in range(t)], device=seq.device)
    return seq[idx]


def load_frame(path: str | Path) -> np.ndarray:
    """Read an 8-bit RGB image as float32 [3, H, W] in [0, 1]."""
    try:
        with Image.open(path) as im:
            rgb = np.asarray(im.convert("RGB"), dtype=np.float32)
    except OSError as exc:
        raise DataError(f"cannot read image {path}: {exc}") from exc
    return np.transpose(rgb / 255.0, (2, 0, 1))


def save_frame(path: str | Path, frame) -> None:
    """Write a [3, H, W] float array in [0, 1] as an 8-bit RGB image."""
    arr = np.asarray(frame, dtype=np.float64)
    if arr.ndim != 3 or arr.shape[0] != 3:
        raise ContractError(f"expected a [3, H, W] frame, got shape {arr.shape}")
    u8 = np.clip(np.rint(arr * 255.0), 0, 255).astype(np.uint8)
    Image.fromarray(np.transpose(u8, (1, 2, 0))).save(path)


@dataclass(frozen=True)
class ClipRecord:
    """An ordered frame sequence on disk, validated for uniform resolution."""

    clip_id: str
    frames: tuple[Path, ...]
    height: int
    width: int

    def __len__(self) -> int:
        return len(self.frames)


def _image_size(path: Path) -> tuple[int, int]:
    try:
        with Image.open(path) as im:
            w, h = im.size
    except OSError as exc:
        raise DataError(f"cannot read image {path}: {exc}") from exc
    return h, w


def _record_from_dir(clip_id: str, frame_paths: list[Path], expect_count: int | None) -> ClipRecord:
    if not frame_paths:
        raise DataError(f"clip {clip_id}: no frames found")
    if expect_count is not None and len(frame_paths) != expect_count:
        raise DataError(
            f"clip {clip_id}: expected {expect_count} frames, found {len(frame_paths)}"
        )
    sizes = {_image_size(p) for p in frame_paths}
    if len(sizes) != 1:
        raise DataError(f"clip {clip_id}: mixed frame resolutions {sorted(sizes)}")
    h, w = next(iter(sizes))
    return ClipRecord(clip_id=clip_id, frames=tuple(frame_paths), height=h, width=w)


def scan_dataset(root: str | Path, layout: str, list_file: str | Path | None = None) -> list[ClipRecord]:
    """Enumerate clips under ``root`` in deterministic lexicographic order.

    layout "septuplet-list": a text file at ``root`` (default: list.txt) names
    clip directories, each holding frames im1..im7.
    layout "per-sequence-directories": every direct subdirectory of ``root``
    is one sequence of sorted image files.
    """
    root = Path(root)
    if not root.is_dir():
        raise DataError(f"dataset root not found: {root}")
    if layout == "septuplet-list":
        lf = Path(list_file) if list_file is not None else root / "list.txt"
        if not lf.is_file():
            raise DataError(f"clip list file not found: {lf}")
        records = []
        for line in sorted(ln.strip() for ln in lf.read_text().splitlines() if ln.strip()):
            clip_dir = root / line
            if not clip_dir.is_dir():
                raise DataError(f"clip {line}: directory not found at {clip_dir}")
            frames = [clip_dir / f"im{i}.png" for i in range(1, 8)]
            missing = [p for p in frames if not p.is_file()]
            if missing:
                raise DataError(f"clip {line}: missing frame {missing[0]}")
            records.append(_record_from_dir(line, frames, expect_count=7))
        return records
    if layout == "per-sequence-directories":
        records = []
        for seq_dir in sorted(p for p in root.iterdir() if p.is_dir()):
            frames = sorted(
                p for p in seq_dir.iterdir()
                if p.is_file() and p.suffix.lower() in IMAGE_SUFFIXES
            )
            records.append(_record_from_dir(seq_dir.name, frames, expect_count=None))
        return records
    raise ConfigError(f"unknown dataset layout {layout!r}")


def load_clip(rec: ClipRecord) -> np.ndarray:
    """Load all frames of a clip as [T, 3, H, W] float32."""
    return np.stack([load_frame(p) for p in rec.frames])


@dataclass(frozen=True)
class TrainSample:
    """One augmented training clip: HR patch stack and its degraded LR."""

    lr: torch.Tensor   # [T, 3, p/scale, p/scale]
    hr: torch.Tensor   # [T, 3, p, p]
    clip_id: str
    crop: tuple[int, int]
    rotation: int      # number of 90-degree turns
    hflip: bool
    vflip: bool


def augment_clip(frames: np.ndarray, rotation: int, hflip: bool, vflip: bool) -> np.ndarray:
    """Apply the same rotation/flips to every frame of [T, C, H, W]."""
    out = np.rot90(frames, k=rotation % 4, axes=(-2, -1))
    if hflip:
        out = out[..., :, ::-1]
    if vflip:
        out = out[..., ::-1, :]
    return np.ascontiguousarray(out)


def sample_training_clip(
    rec: ClipRecord,
    deg_cfg: DegradationConfig,
    patch_size: int,
    rng: np.random.Generator,
) -> TrainSample:
    """Crop one patch position shared by all frames, augment, and degrade."""
    if patch_size % deg_cfg.scale:
        raise ConfigError(
            f"patch size {patch_size} not divisible by scale {deg_cfg.scale}"
        )
    if rec.height < patch_size or rec.width < patch_size:
        raise DataError(
            f"clip {rec.clip_id}: frames {rec.height}x{rec.width} smaller "
            f"than crop {patch_size}"
        )
    top = int(rng.integers(0, rec.height - patch_size + 1))
    left = int(rng.integers(0, rec.width - patch_size + 1))
    rotation = int(rng.integers(0, 4))
    hflip = bool(rng.integers(0, 2))
    vflip = bool(rng.integers(0, 2))

    frames = load_clip(rec)[:, :, top : top + patch_size, left : left + patch_size]
    frames = augment_clip(frames, rotation, hflip, vflip)
    hr = torch.from_numpy(frames)
    lr = degrade(hr, deg_cfg)
    return TrainSample(lr=lr, hr=hr, clip_id=rec.clip_id, crop=(top, left),
                       rotation=rotation, hflip=hflip, vflip=vflip)
