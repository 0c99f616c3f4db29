import numpy as np
import pytest
import torch
from hypothesis import settings

from rgvsr.config import ModelConfig

settings.register_profile("suite", deadline=None, max_examples=25)
settings.load_profile("suite")

torch.set_num_threads(max(1, torch.get_num_threads()))


def synthetic_frames(frames=7, size=64, seed=3, channels=3):
    """Deterministic textured clip: drifting sinusoids, values in [0, 1]."""
    yy, xx = np.meshgrid(np.arange(size), np.arange(size), indexing="ij")
    clip = np.zeros((frames, channels, size, size), dtype=np.float32)
    for t in range(frames):
        shift = 2.0 * t + seed
        base = (
            0.5
            + 0.25 * np.sin(2 * np.pi * (xx + shift) / 11.0)
            + 0.25 * np.cos(2 * np.pi * (yy + 0.7 * shift) / 17.0)
        )
        for c in range(channels):
            clip[t, c] = 0.5 * base + 0.5 * np.roll(base, c * 3, axis=1)
    return np.clip(clip, 0.0, 1.0)


@pytest.fixture
def tiny_cfg():
    return ModelConfig(width=6, attention_reduction=3)


@pytest.fixture
def clip64():
    return torch.from_numpy(synthetic_frames(frames=7, size=64))


def write_sequence_dir(root, name, frames):
    """Write [T, 3, H, W] float frames as frame_0001.png ... under root/name."""
    from rgvsr.data import save_frame

    seq = root / name
    seq.mkdir(parents=True, exist_ok=True)
    for i, frame in enumerate(frames):
        save_frame(seq / f"frame_{i + 1:04d}.png", frame)
    return seq


def write_septuplet_dataset(root, clip_names, size=64, seed=0):
    """Vimeo-style training layout: list.txt plus im1..im7 per clip dir."""
    from rgvsr.data import save_frame

    root.mkdir(parents=True, exist_ok=True)
    for k, name in enumerate(clip_names):
        clip_dir = root / name
        clip_dir.mkdir(parents=True, exist_ok=True)
        frames = synthetic_frames(frames=7, size=size, seed=seed + k)
        for i in range(7):
            save_frame(clip_dir / f"im{i + 1}.png", frames[i])
    (root / "list.txt").write_text("\n".join(clip_names) + "\n")
    return root
