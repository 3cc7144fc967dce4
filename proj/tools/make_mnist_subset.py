#!/usr/bin/env python3
"""Convert the 10k MNIST digits bundled in the npm `mnist` package into IDX files.

Usage: make_mnist_subset.py <path-to-npm-mnist-package> <out-dir>

The package stores per-digit JSON arrays of greyscale values in [0, 1] rounded
to three decimals; they are mapped back to bytes with round(v * 255). The output
is a stratified, seeded split: 700 training and 150 test images per class.
"""
import gzip
import json
import random
import struct
import sys
from pathlib import Path

TRAIN_PER_CLASS = 700
TEST_PER_CLASS = 150


def write_idx(path, magic, dims, payload):
    header = struct.pack(">I", magic) + b"".join(struct.pack(">I", d) for d in dims)
    with gzip.GzipFile(path, "wb", mtime=0) as f:
        f.write(header + payload)


def main():
    pkg, out = Path(sys.argv[1]), Path(sys.argv[2])
    out.mkdir(parents=True, exist_ok=True)
    rng = random.Random(20240601)
    train, test = [], []
    for digit in range(10):
        data = json.loads((pkg / "src" / "digits" / f"{digit}.json").read_text())["data"]
        images = [data[i:i + 784] for i in range(0, len(data), 784)]
        rng.shuffle(images)
        need = TRAIN_PER_CLASS + TEST_PER_CLASS
        if len(images) < need:
            sys.exit(f"digit {digit}: only {len(images)} images")
        train += [(img, digit) for img in images[:TRAIN_PER_CLASS]]
        test += [(img, digit) for img in images[TRAIN_PER_CLASS:need]]
    for name, rows in (("train", train), ("t10k", test)):
        rng.shuffle(rows)
        pixels = bytes(min(255, max(0, round(v * 255))) for img, _ in rows for v in img)
        labels = bytes(label for _, label in rows)
        write_idx(out / f"{name}-images-idx3-ubyte.gz", 0x00000803, (len(rows), 28, 28), pixels)
        write_idx(out / f"{name}-labels-idx1-ubyte.gz", 0x00000801, (len(rows),), labels)
        print(name, len(rows))


if __name__ == "__main__":
    main()
