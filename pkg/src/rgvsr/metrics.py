"""Y-channel PSNR/SSIM, dataset evaluation, runtime benchmarking, and the
qualitative comparison-grid renderer.
"""

from __future__ import annotations

import json
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
from scipy.ndimage import correlate1d

from .blocks import bicubic_resize
from .config import DegradationConfig
from .data import ClipRecord, degrade, load_clip, save_frame
from .errors import ContractError
from .net import super_resolve

# BT.601 studio-swing luma coefficients on the 0-255 domain.
_LUMA = (65.481, 128.553, 24.966)


def rgb_to_y(frame, count_clamped: bool = False):
    """RGB in [0,1] -> Y in [16, 235] (0-255 domain).

    Out-of-range inputs are clamped defensively; pass ``count_clamped`` to
    also get the number of clamped values.
    """
    frame = np.asarray(frame, dtype=np.float64)
    if frame.ndim != 3 or frame.shape[0] != 3:
        raise ContractError(f"expected a [3, H, W] frame, got shape {frame.shape}")
    y = 16.0 + _LUMA[0] * frame[0] + _LUMA[1] * frame[1] + _LUMA[2] * frame[2]
    clamped = int((y < 0.0).sum() + (y > 255.0).sum())
    y = np.clip(y, 0.0, 255.0)
    return (y, clamped) if count_clamped else y


def psnr_y(a, b) -> float:
    """PSNR in dB between the Y channels of two RGB frames; inf if identical."""
    ya, yb = rgb_to_y(a), rgb_to_y(b)
    if ya.shape != yb.shape:
        raise ContractError(f"frame size mismatch: {ya.shape} vs {yb.shape}")
    mse = float(np.mean((ya - yb) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(255.0**2 / mse)


def _ssim_window(size: int = 11, sigma: float = 1.5) -> np.ndarray:
    ax = np.arange(size, dtype=np.float64) - size // 2
    g = np.exp(-(ax**2) / (2.0 * sigma**2))
    return g / g.sum()


def ssim_y(a, b, window_size: int = 11, sigma: float = 1.5,
           k1: float = 0.01, k2: float = 0.03) -> float:
    """Single-scale SSIM on Y, Gaussian window, valid positions only."""
    ya, yb = rgb_to_y(a), rgb_to_y(b)
    if ya.shape != yb.shape:
        raise ContractError(f"frame size mismatch: {ya.shape} vs {yb.shape}")
    r = window_size // 2
    if min(ya.shape) < window_size:
        raise ContractError(
            f"frame {ya.shape} smaller than the {window_size}x{window_size} window"
        )
    g = _ssim_window(window_size, sigma)

    def smooth(img):
        # radius-r separable filter; cropping r rows/cols leaves exactly the
        # windows that never touched the border, so the pad mode is irrelevant
        out = correlate1d(correlate1d(img, g, axis=0), g, axis=1)
        return out[r:-r, r:-r]

    c1 = (k1 * 255.0) ** 2
    c2 = (k2 * 255.0) ** 2
    mu_a, mu_b = smooth(ya), smooth(yb)
    var_a = smooth(ya * ya) - mu_a**2
    var_b = smooth(yb * yb) - mu_b**2
    cov = smooth(ya * yb) - mu_a * mu_b
    score = ((2 * mu_a * mu_b + c1) * (2 * cov + c2)) / (
        (mu_a**2 + mu_b**2 + c1) * (var_a + var_b + c2)
    )
    return float(score.mean())


# ---------------------------------------------------------------------------
# dataset evaluation


@dataclass
class SequenceResult:
    sequence: str
    frames: int = 0
    psnr: float = 0.0
    ssim: float = 0.0
    psnr_inf_frames: int = 0
    clamped_values: int = 0
    status: str = "ok"
    error: str = ""


@dataclass
class MetricReport:
    variant: str
    provenance: dict
    sequences: list[SequenceResult] = field(default_factory=list)
    psnr_mean: float = 0.0
    ssim_mean: float = 0.0
    frame_count: int = 0

    @property
    def failed(self) -> list[str]:
        return [s.sequence for s in self.sequences if s.status != "ok"]

    def to_json(self) -> str:
        payload = {
            "variant": self.variant,
            "provenance": self.provenance,
            "psnr_mean": self.psnr_mean,
            "ssim_mean": self.ssim_mean,
            "frame_count": self.frame_count,
            "sequences": {
                s.sequence: {
                    "frames": s.frames,
                    "psnr": s.psnr,
                    "ssim": s.ssim,
                    "psnr_inf_frames": s.psnr_inf_frames,
                    "clamped_values": s.clamped_values,
                    "status": s.status,
                    "error": s.error,
                }
                for s in self.sequences
            },
        }
        return json.dumps(payload, sort_keys=True, indent=2, allow_nan=True) + "\n"

    def table(self) -> str:
        lines = [f"variant: {self.variant}", f"{'sequence':<20} {'psnr':>8} {'ssim':>8}"]
        for s in sorted(self.sequences, key=lambda s: s.sequence):
            if s.status == "ok":
                lines.append(f"{s.sequence:<20} {s.psnr:>8.2f} {s.ssim:>8.4f}")
            else:
                lines.append(f"{s.sequence:<20} FAILED: {s.error}")
        lines.append(f"{'mean':<20} {self.psnr_mean:>8.2f} {self.ssim_mean:>8.4f}")
        return "\n".join(lines)


def bicubic_predictor(scale: int):
    def predict(seq):
        with torch.no_grad():
            return bicubic_resize(seq, scale)
    return predict


def model_predictor(model, tile: int | None = None):
    def predict(seq):
        return super_resolve(model, seq, tile=tile)
    return predict


def _crop_to_multiple(frames: np.ndarray, scale: int) -> np.ndarray:
    h, w = frames.shape[-2], frames.shape[-1]
    return frames[..., : h - h % scale, : w - w % scale]


def _evaluate_sequence(rec: ClipRecord, dcfg: DegradationConfig, predictor,
                       crop_border: int) -> SequenceResult:
    result = SequenceResult(sequence=rec.clip_id)
    try:
        gt = _crop_to_multiple(load_clip(rec), dcfg.scale)
        gt_t = torch.from_numpy(gt)
        lr = degrade(gt_t, dcfg)
        sr = predictor(lr)
        if sr.shape != gt_t.shape:
            raise ContractError(
                f"prediction shape {tuple(sr.shape)} != ground truth {gt.shape}"
            )
        sr = sr.clamp(0.0, 1.0).cpu().numpy()
        psnrs, ssims = [], []
        clamped = 0
        b = crop_border
        h, w = gt.shape[-2], gt.shape[-1]
        for t in range(gt.shape[0]):
            _, n_clamped = rgb_to_y(sr[t], count_clamped=True)
            clamped += n_clamped
            sr_t = sr[t][:, b : h - b, b : w - b]
            gt_frame = gt[t][:, b : h - b, b : w - b]
            psnrs.append(psnr_y(sr_t, gt_frame))
            ssims.append(ssim_y(sr_t, gt_frame))
        finite = [p for p in psnrs if math.isfinite(p)]
        result.frames = gt.shape[0]
        result.psnr_inf_frames = len(psnrs) - len(finite)
        result.psnr = float(np.mean(finite)) if finite else math.inf
        result.ssim = float(np.mean(ssims))
        result.clamped_values = clamped
    except Exception as exc:  # sequence failures must not stop the run
        result.status = "failed"
        result.error = f"{type(exc).__name__}: {exc}"
    return result


def evaluate(
    records: list[ClipRecord],
    dcfg: DegradationConfig,
    predictor,
    variant: str,
    crop_border: int = 0,
    workers: int = 1,
) -> MetricReport:
    """Degrade each sequence, reconstruct, and score on the Y channel.

    Per-sequence metrics are frame averages; dataset aggregates are arithmetic
    means over sequences (infinite PSNR frames are skipped and flagged).
    """
    provenance = {
        "sigma": dcfg.sigma,
        "scale": dcfg.scale,
        "kernel_size": dcfg.kernel_size,
        "decimation_offset": dcfg.decimation_offset,
        "crop_border": crop_border,
        "ssim_valid_windows_only": True,
    }
    report = MetricReport(variant=variant, provenance=provenance)
    if workers > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(
                lambda r: _evaluate_sequence(r, dcfg, predictor, crop_border), records
            ))
    else:
        results = [_evaluate_sequence(r, dcfg, predictor, crop_border) for r in records]
    report.sequences = sorted(results, key=lambda s: s.sequence)
    ok = [s for s in report.sequences if s.status == "ok"]
    finite = [s.psnr for s in ok if math.isfinite(s.psnr)]
    report.psnr_mean = float(np.mean(finite)) if finite else math.inf
    report.ssim_mean = float(np.mean([s.ssim for s in ok])) if ok else 0.0
    report.frame_count = sum(s.frames for s in ok)
    return report


# ---------------------------------------------------------------------------
# runtime benchmark


@dataclass
class BenchReport:
    median_ms: float
    p95_ms: float
    samples_ms: list[float]
    frames: int
    warmup: int
    height: int
    width: int
    seq_len: int
    device: str

    def to_json(self) -> str:
        payload = {k: getattr(self, k) for k in (
            "median_ms", "p95_ms", "samples_ms", "frames", "warmup",
            "height", "width", "seq_len", "device")}
        return json.dumps(payload, sort_keys=True, indent=2) + "\n"


def benchmark(model, height: int = 180, width: int = 320, frames: int = 10,
              warmup: int = 2, seq_len: int = 5, seed: int = 0) -> BenchReport:
    """Per-output-frame latency on synthetic input; warmup runs are excluded."""
    if frames < 1:
        raise ContractError("nothing to measure: need at least one timed frame")
    gen = torch.Generator().manual_seed(seed)
    seq = torch.rand(seq_len, 3, height, width, generator=gen)
    samples: list[float] = []
    with torch.no_grad():
        for i in range(warmup + frames):
            start = time.perf_counter()
            model(seq)
            elapsed = (time.perf_counter() - start) * 1000.0 / seq_len
            if i >= warmup:
                samples.append(elapsed)
    ordered = sorted(samples)
    median = ordered[len(ordered) // 2] if len(ordered) % 2 else (
        0.5 * (ordered[len(ordered) // 2 - 1] + ordered[len(ordered) // 2])
    )
    p95 = ordered[min(len(ordered) - 1, math.ceil(0.95 * len(ordered)) - 1)]
    device = f"cpu/torch-{torch.__version__}/threads-{torch.get_num_threads()}"
    return BenchReport(median_ms=median, p95_ms=p95, samples_ms=samples,
                       frames=frames, warmup=warmup, height=height, width=width,
                       seq_len=seq_len, device=device)


# ---------------------------------------------------------------------------
# comparison grid

# 5x7 bitmap font, one byte per column, LSB = top row.
_FONT = {
    "0": (0x3E, 0x51, 0x49, 0x45, 0x3E), "1": (0x00, 0x42, 0x7F, 0x40, 0x00),
    "2": (0x42, 0x61, 0x51, 0x49, 0x46), "3": (0x21, 0x41, 0x45, 0x4B, 0x31),
    "4": (0x18, 0x14, 0x12, 0x7F, 0x10), "5": (0x27, 0x45, 0x45, 0x45, 0x39),
    "6": (0x3C, 0x4A, 0x49, 0x49, 0x30), "7": (0x01, 0x71, 0x09, 0x05, 0x03),
    "8": (0x36, 0x49, 0x49, 0x49, 0x36), "9": (0x06, 0x49, 0x49, 0x29, 0x1E),
    "A": (0x7E, 0x11, 0x11, 0x11, 0x7E), "B": (0x7F, 0x49, 0x49, 0x49, 0x36),
    "C": (0x3E, 0x41, 0x41, 0x41, 0x22), "D": (0x7F, 0x41, 0x41, 0x22, 0x1C),
    "E": (0x7F, 0x49, 0x49, 0x49, 0x41), "F": (0x7F, 0x09, 0x09, 0x09, 0x01),
    "G": (0x3E, 0x41, 0x49, 0x49, 0x7A), "H": (0x7F, 0x08, 0x08, 0x08, 0x7F),
    "I": (0x00, 0x41, 0x7F, 0x41, 0x00), "J": (0x20, 0x40, 0x41, 0x3F, 0x01),
    "K": (0x7F, 0x08, 0x14, 0x22, 0x41), "L": (0x7F, 0x40, 0x40, 0x40, 0x40),
    "M": (0x7F, 0x02, 0x0C, 0x02, 0x7F), "N": (0x7F, 0x04, 0x08, 0x10, 0x7F),
    "O": (0x3E, 0x41, 0x41, 0x41, 0x3E), "P": (0x7F, 0x09, 0x09, 0x09, 0x06),
    "Q": (0x3E, 0x41, 0x51, 0x21, 0x5E), "R": (0x7F, 0x09, 0x19, 0x29, 0x46),
    "S": (0x46, 0x49, 0x49, 0x49, 0x31), "T": (0x01, 0x01, 0x7F, 0x01, 0x01),
    "U": (0x3F, 0x40, 0x40, 0x40, 0x3F), "V": (0x1F, 0x20, 0x40, 0x20, 0x1F),
    "W": (0x3F, 0x40, 0x38, 0x40, 0x3F), "X": (0x63, 0x14, 0x08, 0x14, 0x63),
    "Y": (0x07, 0x08, 0x70, 0x08, 0x07), "Z": (0x61, 0x51, 0x49, 0x45, 0x43),
    "-": (0x08, 0x08, 0x08, 0x08, 0x08), ".": (0x00, 0x60, 0x60, 0x00, 0x00),
    "_": (0x40, 0x40, 0x40, 0x40, 0x40), "/": (0x20, 0x10, 0x08, 0x04, 0x02),
    " ": (0x00, 0x00, 0x00, 0x00, 0x00),
}

_MARGIN = 6
_LABEL_H = 11


def _draw_text(canvas: np.ndarray, top: int, left: int, text: str) -> None:
    x = left
    for ch in text.upper():
        glyph = _FONT.get(ch, _FONT[" "])
        for col, bits in enumerate(glyph):
            for row in range(7):
                if bits >> row & 1:
                    y, xx = top + row, x + col
                    if 0 <= y < canvas.shape[0] and 0 <= xx < canvas.shape[1]:
                        canvas[y, xx] = 0.0
        x += 6


def panel_geometry(n_panels: int, frame_hw: tuple[int, int],
                   crops: list[tuple[int, int, int, int]], zoom: int):
    """Panel and crop-row rectangles (top, left, h, w) of the montage layout."""
    h, w = frame_hw
    panel_rects = [
        (_MARGIN + _LABEL_H, _MARGIN + i * (w + _MARGIN), h, w) for i in range(n_panels)
    ]
    crop_rects = []
    y = _MARGIN + _LABEL_H + h + _MARGIN
    for (_, _, ch, cw) in crops:
        row = [(y, _MARGIN + i * (w + _MARGIN), ch * zoom, cw * zoom) for i in range(n_panels)]
        crop_rects.append(row)
        y += ch * zoom + _MARGIN
    total_h = y
    total_w = _MARGIN + n_panels * (w + _MARGIN)
    return panel_rects, crop_rects, (total_h, total_w)


def render_grid(
    panels: list[tuple[str, np.ndarray]],
    crops: list[tuple[int, int, int, int]],
    path: str | Path | None = None,
    zoom: int = 3,
) -> np.ndarray:
    """Side-by-side labeled montage with zoomed crop rows.

    ``panels``: (label, [3, H, W] frame in [0,1]) pairs of identical sizes.
    ``crops``: (top, left, height, width) boxes in frame coordinates.
    Returns the canvas as float [H, W, 3]; writes a PNG when ``path`` given.
    """
    if not panels:
        raise ContractError("no panels to render")
    frames = [np.asarray(f, dtype=np.float64) for _, f in panels]
    h, w = frames[0].shape[-2:]
    for f in frames:
        if f.shape != (3, h, w):
            raise ContractError("all panels must share the same [3, H, W] shape")
    for (top, left, ch, cw) in crops:
        if top < 0 or left < 0 or ch < 1 or cw < 1 or top + ch > h or left + cw > w:
            raise ContractError(f"crop box {(top, left, ch, cw)} out of bounds for {h}x{w}")

    panel_rects, crop_rects, (total_h, total_w) = panel_geometry(len(panels), (h, w), crops, zoom)
    canvas = np.full((total_h, total_w, 3), 1.0)
    for i, ((label, _), frame) in enumerate(zip(panels, frames)):
        py, px, _, _ = panel_rects[i]
        img = np.clip(np.transpose(frame, (1, 2, 0)), 0.0, 1.0)
        for (top, left, ch, cw) in crops:
            img = img.copy()
            img[top, left : left + cw] = (1.0, 0.0, 0.0)
            img[top + ch - 1, left : left + cw] = (1.0, 0.0, 0.0)
            img[top : top + ch, left] = (1.0, 0.0, 0.0)
            img[top : top + ch, left + cw - 1] = (1.0, 0.0, 0.0)
        canvas[py : py + h, px : px + w] = img
        _draw_text(canvas, py - _LABEL_H + 2, px, label)
        for ci, (top, left, ch, cw) in enumerate(crops):
            cy, cx, zh, zw = crop_rects[ci][i]
            patch = np.clip(np.transpose(frame[:, top : top + ch, left : left + cw], (1, 2, 0)), 0, 1)
            canvas[cy : cy + zh, cx : cx + zw] = patch.repeat(zoom, axis=0).repeat(zoom, axis=1)

    if path is not None:
        save_frame(path, np.transpose(canvas, (2, 0, 1)))
    return canvas
