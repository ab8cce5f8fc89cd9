#!/usr/bin/env python3
"""Compute per-channel mean/std of a CIFAR binary training set.

The training harness normalizes pixels with constants from the run config;
the defaults baked into the loader were produced by this script on the
CIFAR-100 train.bin file:

    mean = [0.5071, 0.4865, 0.4409]
    std  = [0.2673, 0.2564, 0.2762]

Usage: compute_cifar_stats.py <file.bin> [--cifar10]
"""

import sys

import numpy as np


def main() -> None:
    if len(sys.argv) < 2:
        sys.exit(__doc__)
    path = sys.argv[1]
    label_bytes = 1 if "--cifar10" in sys.argv[2:] else 2
    stride = label_bytes + 3072
    raw = np.fromfile(path, dtype=np.uint8)
    if raw.size % stride != 0:
        sys.exit(f"{path}: size {raw.size} is not a multiple of {stride}")
    records = raw.reshape(-1, stride)
    pixels = records[:, label_bytes:].reshape(-1, 3, 1024).astype(np.float64) / 255.0
    mean = pixels.mean(axis=(0, 2))
    std = pixels.std(axis=(0, 2))
    print(f"records: {records.shape[0]}")
    print("mean =", [round(v, 4) for v in mean])
    print("std  =", [round(v, 4) for v in std])


if __name__ == "__main__":
    main()
