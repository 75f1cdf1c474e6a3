#!/usr/bin/env python3
"""Convert the digit JSON files shipped in the npm `mnist` package into IDX files.

The npm package bundles 10,000 MNIST digits (the t10k split) as per-digit JSON
files with pixel values normalised to [0, 1] and rounded to three decimals.
This script restores u8 pixels (round(v * 255)) and writes big-endian IDX
image/label files for the requested digits.

    npm pack mnist && tar xzf mnist-*.tgz
    python3 scripts/npm_mnist_to_idx.py package/src/digits data/mnist-1-5 1 5
"""
import json
import os
import struct
import sys


def main() -> None:
    src, out = sys.argv[1], sys.argv[2]
    digits = [int(d) for d in sys.argv[3:]] or list(range(10))
    images, labels = [], []
    for d in digits:
        with open(os.path.join(src, f"{d}.json")) as f:
            flat = json.load(f)["data"]
        for i in range(0, len(flat), 784):
            images.append(bytes(min(255, max(0, round(v * 255))) for v in flat[i:i + 784]))
            labels.append(d)
    os.makedirs(out, exist_ok=True)
    with open(os.path.join(out, "t10k-images-idx3-ubyte"), "wb") as f:
        f.write(struct.pack(">IIII", 0x803, len(images), 28, 28))
        for img in images:
            f.write(img)
    with open(os.path.join(out, "t10k-labels-idx1-ubyte"), "wb") as f:
        f.write(struct.pack(">II", 0x801, len(labels)))
        f.write(bytes(labels))
    print(f"wrote {len(images)} images to {out}")


if __name__ == "__main__":
    main()
