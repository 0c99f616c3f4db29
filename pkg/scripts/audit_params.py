#!/usr/bin/env python3
"""Print the parameter audit for every studied variant at a given width."""

import argparse

from rgvsr.config import ModelConfig, ablation_grid
from rgvsr.net import build_model


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--width", type=int, default=ModelConfig.width)
    parser.add_argument("--reduction", type=int, default=ModelConfig.attention_reduction)
    args = parser.parse_args()

    cfg = ModelConfig(width=args.width, attention_reduction=args.reduction)
    print(f"width {cfg.width}, attention reduction {cfg.attention_reduction}\n")
    rows = []
    for label, spec in ablation_grid().items():
        _, report = build_model(cfg, spec, seed=0)
        rows.append((label, report.total))
    width = max(len(label) for label, _ in rows)
    for label, total in rows:
        print(f"{label:<{width}}  {total:>9,}  ({total / 1e6:.3f}M)")


if __name__ == "__main__":
    main()
