#!/usr/bin/env python3
"""Build an IDX-format MNIST subset from the digit dumps bundled in the npm
`mnist` package (10,000 real MNIST digits stored as JSON floats in [0,1]).

    npm pack mnist && tar xzf mnist-*.tgz
    python3 scripts/mnist_from_npm.py package/src/digits data/mnist-subset 2000

All digits are pooled and shuffled with a fixed seed before the first
`count` are kept, so any prefix of the output is roughly class balanced.
"""
import json
import random
import struct
import sys
from pathlib import Path


def main():
    src, dst, count = Path(sys.argv[1]), Path(sys.argv[2]), int(sys.argv[3])
    samples = []
    for digit in range(10):
        raw = json.loads((src / f"{digit}.json").read_text())["data"]
        n = len(raw) // 784
        for i in range(n):
            pixels = bytes(round(v * 255) for v in raw[i * 784:(i + 1) * 784])
            samples.append((pixels, digit))
    random.Random(0).shuffle(samples)
    samples = samples[:count]
    dst.mkdir(parents=True, exist_ok=True)
    with open(dst / "images-idx3-ubyte", "wb") as f:
        f.write(struct.pack(">BBBBIII", 0, 0, 8, 3, len(samples), 28, 28))
        for pixels, _ in samples:
            f.write(pixels)
    with open(dst / "labels-idx1-ubyte", "wb") as f:
        f.write(struct.pack(">BBBBI", 0, 0, 8, 1, len(samples)))
        f.write(bytes(d for _, d in samples))


if __name__ == "__main__":
    main()
