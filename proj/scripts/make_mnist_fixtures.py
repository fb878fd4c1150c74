#!/usr/bin/env python3
"""Build the bundled MNIST fixture files from per-digit JSON dumps.

Input: a directory with 0.json .. 9.json, each {"data": [v, ...]} holding a
flat array of n*784 floats in [0,1] (pixel/255 rounded to three decimals; the
rounding is exact to recover, since round(v*255) restores the byte). The
npm package `mnist` ships its 10,000 genuine samples in this layout.

Output: IDX image/label pairs, gzipped with zeroed mtime so the bytes are
reproducible:
  train-images-idx3-ubyte.gz / train-labels-idx1-ubyte.gz
  t10k-images-idx3-ubyte.gz  / t10k-labels-idx1-ubyte.gz

The last 100 samples of every digit form the test split (exactly class
balanced). The rest are training data. Both splits interleave classes
round-robin, so any prefix of the file is close to class balanced; the
training prefix is perfectly balanced up to 10x the smallest class count.
"""

import gzip
import io
import json
import struct
import sys
from pathlib import Path

TEST_PER_CLASS = 100
SIDE = 28


def load_digit(path: Path) -> list[bytes]:
    flat = json.load(open(path))["data"]
    n, rem = divmod(len(flat), SIDE * SIDE)
    if rem:
        raise SystemExit(f"{path}: {len(flat)} values is not a multiple of {SIDE * SIDE}")
    out = []
    for i in range(n):
        px = flat[i * SIDE * SIDE : (i + 1) * SIDE * SIDE]
        out.append(bytes(round(v * 255) for v in px))
    return out


def interleave(per_class: list[list[bytes]]) -> tuple[list[bytes], list[int]]:
    images, labels = [], []
    queues = [list(reversed(q)) for q in per_class]  # pop() from the front
    while any(queues):
        for digit, q in enumerate(queues):
            if q:
                images.append(q.pop())
                labels.append(digit)
    return images, labels


def write_gz(path: Path, payload: bytes) -> None:
    buf = io.BytesIO()
    with gzip.GzipFile(fileobj=buf, mode="wb", mtime=0) as gz:
        gz.write(payload)
    path.write_bytes(buf.getvalue())
    print(f"{path}  {path.stat().st_size:,} bytes ({len(payload):,} raw)")


def write_split(out_dir: Path, prefix: str, images: list[bytes], labels: list[int]) -> None:
    img = struct.pack(">IIII", 2051, len(images), SIDE, SIDE) + b"".join(images)
    lab = struct.pack(">II", 2049, len(labels)) + bytes(labels)
    write_gz(out_dir / f"{prefix}-images-idx3-ubyte.gz", img)
    write_gz(out_dir / f"{prefix}-labels-idx1-ubyte.gz", lab)


def main() -> None:
    if len(sys.argv) != 3:
        raise SystemExit(f"usage: {sys.argv[0]} <digits_json_dir> <out_dir>")
    src, out_dir = Path(sys.argv[1]), Path(sys.argv[2])
    out_dir.mkdir(parents=True, exist_ok=True)

    train_pc, test_pc = [], []
    for digit in range(10):
        samples = load_digit(src / f"{digit}.json")
        if len(samples) <= TEST_PER_CLASS:
            raise SystemExit(f"digit {digit}: only {len(samples)} samples")
        train_pc.append(samples[:-TEST_PER_CLASS])
        test_pc.append(samples[-TEST_PER_CLASS:])

    write_split(out_dir, "train", *interleave(train_pc))
    write_split(out_dir, "t10k", *interleave(test_pc))


if __name__ == "__main__":
    main()
