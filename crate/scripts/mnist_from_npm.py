#!/usr/bin/env python3
"""Build gzipped IDX files from the digit samples bundled in the npm `mnist` package.

The npm package (mnist@1.1.0) ships 10,000 MNIST digits as JSON arrays of
pixel intensities divided by 255 and rounded to three decimals. Rounding
`v * 255` recovers the original byte exactly. The samples are shuffled with
a fixed seed and split 8000 / 2000 into the standard train / t10k file names.

    npm pack mnist@1.1.0 && tar xzf mnist-1.1.0.tgz
    python3 scripts/mnist_from_npm.py package/src/digits data/mnist
"""
import gzip
import json
import random
import struct
import sys
from pathlib import Path


def write_idx(path, magic, dims, payload):
    header = struct.pack(">I", magic) + b"".join(struct.pack(">I", d) for d in dims)
    # mtime=0 keeps the archives byte-identical across runs
    with open(path, "wb") as raw, gzip.GzipFile(fileobj=raw, mode="wb", mtime=0) as f:
        f.write(header + payload)


def main():
    src, out = Path(sys.argv[1]), Path(sys.argv[2])
    out.mkdir(parents=True, exist_ok=True)
    samples = []
    for digit in range(10):
        data = json.loads((src / f"{digit}.json").read_text())["data"]
        assert len(data) % 784 == 0
        for k in range(len(data) // 784):
            px = bytes(int(round(v * 255)) for v in data[k * 784:(k + 1) * 784])
            samples.append((px, digit))
    random.Random(20151124).shuffle(samples)
    splits = {"train": samples[:8000], "t10k": samples[8000:]}
    for name, rows in splits.items():
        write_idx(out / f"{name}-images-idx3-ubyte.gz", 0x803, [len(rows), 28, 28],
                  b"".join(px for px, _ in rows))
        write_idx(out / f"{name}-labels-idx1-ubyte.gz", 0x801, [len(rows)],
                  bytes(lbl for _, lbl in rows))


if __name__ == "__main__":
    main()
