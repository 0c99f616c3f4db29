#!/usr/bin/env python3
"""Finite-difference gradient check over all variants, with per-array detail."""

import argparse

from rgvsr.config import ablation_grid
from rgvsr.train import grad_check


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--seed", type=int, default=7)
    parser.add_argument("--samples", type=int, default=200)
    parser.add_argument("--detail", action="store_true", help="print per-array errors")
    args = parser.parse_args()

    failed = False
    for label, spec in ablation_grid().items():
        report = grad_check(spec, samples=args.samples, seed=args.seed)
        status = "ok" if report.ok else "FAIL"
        print(
            f"{label:<24} max rel err {report.max_rel_error:.3e} "
            f"({report.sampled} params, {report.kink_resamples} kink resamples)  {status}"
        )
        if args.detail:
            for name in sorted(report.per_array, key=report.per_array.get, reverse=True)[:10]:
                print(f"    {name:<55} {report.per_array[name]:.3e}")
        failed |= not report.ok
    raise SystemExit(1 if failed else 0)


if __name__ == "__main__":
    main()
