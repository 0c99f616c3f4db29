"""Command-line surface: degrade, train, eval, infer, params, bench,
gradcheck, grid.

Every run resolves its configuration as defaults < config file < flags and
echoes the result (to the output directory when there is one, else stdout)
before doing any work.  Exit codes: 0 success, 1 module error, 2 usage.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np
import torch

from . import train as train_mod
from .config import (
    Settings,
    ablation_grid,
    parse_config_file,
    resolve_settings,
    settings_to_text,
)
from .blocks import bicubic_resize
from .data import degrade, load_frame, save_frame, scan_dataset
from .errors import RgvsrError
from .metrics import (
    benchmark,
    bicubic_predictor,
    evaluate,
    model_predictor,
    render_grid,
)
from .net import build_model, super_resolve


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="rgvsr",
        description="Bidirectional recurrent grouping-attention video super-resolution (4x).",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(sp):
        sp.add_argument("--config", help="flat key=value config file")
        sp.add_argument("--seed", type=int, help="seed for all randomness")

    sp = sub.add_parser("degrade", help="blur+decimate frame trees")
    add_common(sp)
    sp.add_argument("--in", dest="in_dir", required=True, help="input frame tree")
    sp.add_argument("--out", required=True, help="mirrored output tree")
    sp.add_argument("--sigma", type=float, help="Gaussian blur std")
    sp.add_argument("--scale", type=int, help="decimation factor")

    sp = sub.add_parser("train", help="train on a septuplet dataset")
    add_common(sp)
    sp.add_argument("--dataset", required=True, help="training root (list file + clips)")
    sp.add_argument("--out", required=True, help="checkpoint/log directory")
    sp.add_argument("--ckpt", help="resume from this checkpoint")
    sp.add_argument("--workers", type=int, default=1)

    sp = sub.add_parser("eval", help="evaluate on a test dataset")
    add_common(sp)
    sp.add_argument("--dataset", required=True, help="root of per-sequence directories")
    sp.add_argument("--baseline", choices=("bicubic", "model"), default="model")
    sp.add_argument("--ckpt", help="model checkpoint (required for --baseline model)")
    sp.add_argument("--out", required=True, help="report directory")
    sp.add_argument("--crop-border", type=int, default=0)
    sp.add_argument("--tile", type=int, help="spatial tile size in LR pixels")
    sp.add_argument("--workers", type=int, default=1)

    sp = sub.add_parser("infer", help="upscale one LR frame directory")
    add_common(sp)
    sp.add_argument("--in", dest="in_dir", required=True, help="LR frame directory")
    sp.add_argument("--out", required=True, help="output frame directory")
    sp.add_argument("--ckpt", required=True)
    sp.add_argument("--tile", type=int)

    sp = sub.add_parser("params", help="print the parameter audit")
    add_common(sp)

    sp = sub.add_parser("bench", help="time the forward pass")
    add_common(sp)
    sp.add_argument("--ckpt", help="checkpoint to time (default: fresh model)")
    sp.add_argument("--height", type=int, default=180)
    sp.add_argument("--width", type=int, default=320)
    sp.add_argument("--frames", type=int, default=10)
    sp.add_argument("--warmup", type=int, default=2)
    sp.add_argument("--out", help="optional report directory")

    sp = sub.add_parser("gradcheck", help="finite-difference gradient check, all variants")
    add_common(sp)

    sp = sub.add_parser("grid", help="render a GT/bicubic/model comparison montage")
    add_common(sp)
    sp.add_argument("--in", dest="in_dir", required=True, help="GT sequence directory")
    sp.add_argument("--ckpt", help="include a model panel from this checkpoint")
    sp.add_argument("--out", required=True, help="output directory")

    return parser


def _settings(args) -> Settings:
    file_values = parse_config_file(args.config) if args.config else None
    overrides = {}
    for flag, key in (("sigma", "sigma"), ("scale", "scale"), ("seed", "seed")):
        if hasattr(args, flag) and getattr(args, flag) is not None:
            overrides[key] = getattr(args, flag)
    return resolve_settings(file_values, overrides)


def _echo(settings: Settings, out_dir: str | None) -> None:
    text = settings_to_text(settings)
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "resolved.cfg").write_text(text)
    else:
        sys.stdout.write(text)


def _load_model(ckpt_path: str):
    ckpt = train_mod.load_checkpoint(ckpt_path)
    model, _ = build_model(ckpt.model_config, ckpt.ablation, zero_head=False)
    train_mod.restore_model(model, ckpt)
    model.eval()
    return model


def _frame_files(directory: Path) -> list[Path]:
    return sorted(
        p for p in directory.iterdir()
        if p.is_file() and p.suffix.lower() in (".png", ".bmp")
    )


def _cmd_degrade(args, settings: Settings) -> int:
    _echo(settings, args.out)
    dcfg = settings.degradation
    in_root = Path(args.in_dir)
    out_root = Path(args.out)
    seq_dirs = sorted(p for p in in_root.iterdir() if p.is_dir()) or [in_root]
    for seq in seq_dirs:
        target = out_root / seq.name if seq != in_root else out_root
        target.mkdir(parents=True, exist_ok=True)
        for frame_path in _frame_files(seq):
            frame = torch.from_numpy(load_frame(frame_path))
            h, w = frame.shape[-2:]
            ch, cw = h - h % dcfg.scale, w - w % dcfg.scale
            if (ch, cw) != (h, w):
                print(f"note: cropping {frame_path} from {h}x{w} to {ch}x{cw}")
                frame = frame[..., :ch, :cw]
            save_frame(target / frame_path.name, degrade(frame, dcfg).numpy())
    return 0


def _cmd_train(args, settings: Settings) -> int:
    _echo(settings, args.out)
    records = scan_dataset(args.dataset, "septuplet-list")
    model, report = build_model(settings.model, settings.ablation, seed=settings.train.seed)
    print(report.table())
    log = train_mod.train(
        model, records, settings.train, settings.degradation,
        out_dir=args.out, resume_from=args.ckpt,
    )
    losses = "\n".join(f"{v:.8f}" for v in log.losses)
    (Path(args.out) / "losses.txt").write_text(losses + "\n" if losses else "")
    print(f"trained epochs {log.start_epoch}..{log.end_epoch}, {len(log.losses)} steps")
    return 0


def _cmd_eval(args, settings: Settings) -> int:
    _echo(settings, args.out)
    records = scan_dataset(args.dataset, "per-sequence-directories")
    if args.baseline == "model":
        if not args.ckpt:
            raise RgvsrError("--baseline model requires --ckpt")
        model = _load_model(args.ckpt)
        predictor = model_predictor(model, tile=args.tile)
        variant = f"model:{model.spec.label}"
    else:
        predictor = bicubic_predictor(settings.degradation.scale)
        variant = "bicubic"
    report = evaluate(records, settings.degradation, predictor, variant,
                      crop_border=args.crop_border, workers=args.workers)
    (Path(args.out) / "report.json").write_text(report.to_json())
    print(report.table())
    if report.failed:
        print(f"failed sequences: {', '.join(report.failed)}", file=sys.stderr)
        return 1
    return 0


def _cmd_infer(args, settings: Settings) -> int:
    _echo(settings, args.out)
    model = _load_model(args.ckpt)
    frames = _frame_files(Path(args.in_dir))
    if not frames:
        raise RgvsrError(f"no frames found in {args.in_dir}")
    seq = torch.from_numpy(np.stack([load_frame(p) for p in frames]))
    sr = super_resolve(model, seq, tile=args.tile)
    out_root = Path(args.out)
    for i, p in enumerate(frames):
        save_frame(out_root / p.name, sr[i].numpy())
    return 0


def _cmd_params(args, settings: Settings) -> int:
    _echo(settings, None)
    _, report = build_model(settings.model, settings.ablation, seed=settings.train.seed)
    print(report.table())
    if report.total > 1_000_000:
        print("warning: over the 1M parameter budget", file=sys.stderr)
    return 0


def _cmd_bench(args, settings: Settings) -> int:
    _echo(settings, args.out)
    if args.ckpt:
        model = _load_model(args.ckpt)
    else:
        model, _ = build_model(settings.model, settings.ablation, seed=settings.train.seed)
        model.eval()
    report = benchmark(model, height=args.height, width=args.width,
                       frames=args.frames, warmup=args.warmup, seed=settings.train.seed)
    print(f"median {report.median_ms:.1f} ms/frame, p95 {report.p95_ms:.1f} ms/frame "
          f"on {report.width}x{report.height} ({report.device})")
    if args.out:
        (Path(args.out) / "bench.json").write_text(report.to_json())
    return 0


def _cmd_gradcheck(args, settings: Settings) -> int:
    _echo(settings, None)
    seed = settings.train.seed
    failed = False
    for label, spec in ablation_grid().items():
        report = train_mod.grad_check(spec, seed=seed + 7)
        status = "ok" if report.ok else "FAIL"
        print(f"{label:<24} max rel err {report.max_rel_error:.2e} "
              f"({report.sampled} params)  {status}")
        if not report.ok:
            print(f"  offending arrays: {', '.join(report.failures)}", file=sys.stderr)
            failed = True
    return 1 if failed else 0


def _cmd_grid(args, settings: Settings) -> int:
    _echo(settings, args.out)
    dcfg = settings.degradation
    frames = _frame_files(Path(args.in_dir))
    if not frames:
        raise RgvsrError(f"no frames found in {args.in_dir}")
    gt = np.stack([load_frame(p) for p in frames])
    h, w = gt.shape[-2:]
    gt = gt[..., : h - h % dcfg.scale, : w - w % dcfg.scale]
    gt_t = torch.from_numpy(gt)
    lr = degrade(gt_t, dcfg)
    mid = gt.shape[0] // 2
    with torch.no_grad():
        bic = bicubic_resize(lr[mid], dcfg.scale).clamp(0, 1).numpy()
    panels = [("GT", gt[mid]), ("BICUBIC", bic)]
    if args.ckpt:
        model = _load_model(args.ckpt)
        sr = super_resolve(model, lr).clamp(0, 1)
        panels.append(("MODEL", sr[mid].numpy()))
    ph, pw = gt.shape[-2:]
    box = (ph // 2 - ph // 8, pw // 2 - pw // 8, max(8, ph // 4), max(8, pw // 4))
    render_grid(panels, [box], Path(args.out) / "montage.png")
    return 0


_COMMANDS = {
    "degrade": _cmd_degrade,
    "train": _cmd_train,
    "eval": _cmd_eval,
    "infer": _cmd_infer,
    "params": _cmd_params,
    "bench": _cmd_bench,
    "gradcheck": _cmd_gradcheck,
    "grid": _cmd_grid,
}


def run(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else 2
    try:
        settings = _settings(args)
        np.random.seed(settings.train.seed % 2**32)
        torch.manual_seed(settings.train.seed)
        return _COMMANDS[args.command](args, settings)
    except RgvsrError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
