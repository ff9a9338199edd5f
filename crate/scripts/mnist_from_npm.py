#!/usr/bin/env python3
"""Convert the digits bundled in the npm `mnist` package (MIT, J. Cazala) to IDX.

The package stores 10,000 MNIST digits as per-class JSON arrays of pixel
intensities rounded to three decimals. Rounding error is below 0.5/255, so
round(v * 255) recovers the original bytes exactly.

usage: npm pack mnist && tar xzf mnist-*.tgz
       python3 scripts/mnist_from_npm.py package/src/digits data/mnist10k
"""
import gzip
import json
import random
import struct
import sys
from pathlib import Path


def main(src: Path, dst: Path) -> None:
    samples = []
    for digit in range(10):
        data = json.loads((src / f"{digit}.json").read_text())["data"]
        assert len(data) % 784 == 0
        for i in range(len(data) // 784):
            pixels = bytes(round(v * 255) for v in data[i * 784:(i + 1) * 784])
            samples.append((digit, pixels))
    random.Random(0).shuffle(samples)

    dst.mkdir(parents=True, exist_ok=True)
    n = len(samples)
    images = struct.pack(">IIII", 0x803, n, 28, 28) + b"".join(p for _, p in samples)
    labels = struct.pack(">II", 0x801, n) + bytes(d for d, _ in samples)
    for name, payload in (("images-idx3-ubyte.gz", images), ("labels-idx1-ubyte.gz", labels)):
        with open(dst / name, "wb") as raw:
            with gzip.GzipFile(fileobj=raw, mode="wb", mtime=0, filename="") as gz:
                gz.write(payload)
    print(f"wrote {n} examples to {dst}")


if __name__ == "__main__":
    main(Path(sys.argv[1]), Path(sys.argv[2]))
