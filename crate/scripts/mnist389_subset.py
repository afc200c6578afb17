#!/usr/bin/env python3
"""Cut the digits 3, 8, 9 subset out of the official MNIST training IDX files.

Keeps the first PER_CLASS samples of each digit, in original file order, so the
vendored files under data/mnist389 are a prefix-consistent slice of the full set.
The official files are available, e.g., from the `mnist-data` npm package:

    npm pack mnist-data && tar xzf mnist-data-*.tgz
    python3 scripts/mnist389_subset.py package/data data/mnist389
"""
import os
import struct
import sys

DIGITS = (3, 8, 9)
PER_CLASS = 1000


def main(src, dst):
    with open(os.path.join(src, "train-images-idx3-ubyte"), "rb") as fh:
        magic, n, rows, cols = struct.unpack(">IIII", fh.read(16))
        assert magic == 0x803
        pixels = fh.read()
    with open(os.path.join(src, "train-labels-idx1-ubyte"), "rb") as fh:
        magic, n_lab = struct.unpack(">II", fh.read(8))
        assert magic == 0x801 and n_lab == n
        labels = fh.read()

    size = rows * cols
    counts = {d: 0 for d in DIGITS}
    keep = []
    for i, lab in enumerate(labels):
        if lab in counts and counts[lab] < PER_CLASS:
            counts[lab] += 1
            keep.append(i)

    os.makedirs(dst, exist_ok=True)
    with open(os.path.join(dst, "images-idx3-ubyte"), "wb") as fh:
        fh.write(struct.pack(">IIII", 0x803, len(keep), rows, cols))
        for i in keep:
            fh.write(pixels[i * size:(i + 1) * size])
    with open(os.path.join(dst, "labels-idx1-ubyte"), "wb") as fh:
        fh.write(struct.pack(">II", 0x801, len(keep)))
        fh.write(bytes(labels[i] for i in keep))
    print(counts, "total", len(keep))


if __name__ == "__main__":
    main(sys.argv[1], sys.argv[2])
