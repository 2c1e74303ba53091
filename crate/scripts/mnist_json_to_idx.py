#!/usr/bin/env python3
"""Convert the digit JSON files shipped by the npm `mnist` package into gzipped IDX.

Usage: npm pack mnist && tar xzf mnist-*.tgz
       python3 scripts/mnist_json_to_idx.py package/src/digits data/mnist

Digits are interleaved class by class (0,1,...,9,0,1,...) so that any prefix
of the output is close to class-balanced.
"""
import gzip
import json
import struct
import sys
from pathlib import Path


def main() -> None:
    src, dst = Path(sys.argv[1]), Path(sys.argv[2])
    per_class = []
    for digit in range(10):
        flat = json.loads((src / f"{digit}.json").read_text())["data"]
        n = len(flat) // 784
        per_class.append([flat[i * 784:(i + 1) * 784] for i in range(n)])

    images, labels = bytearray(), bytearray()
    longest = max(len(c) for c in per_class)
    for i in range(longest):
        for digit, samples in enumerate(per_class):
            if i < len(samples):
                images.extend(min(255, max(0, round(v * 255))) for v in samples[i])
                labels.append(digit)

    count = len(labels)
    dst.mkdir(parents=True, exist_ok=True)
    with gzip.GzipFile(dst / "images-idx3-ubyte.gz", "wb", mtime=0) as f:
        f.write(struct.pack(">IIII", 0x803, count, 28, 28) + bytes(images))
    with gzip.GzipFile(dst / "labels-idx1-ubyte.gz", "wb", mtime=0) as f:
        f.write(struct.pack(">II", 0x801, count) + bytes(labels))
    print(f"wrote {count} digits to {dst}")


if __name__ == "__main__":
    main()
