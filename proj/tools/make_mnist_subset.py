#!/usr/bin/env python3
"""Convert the 5,000-image MNIST sample shipped in the mlxtend wheel
(mlxtend/data/data/mnist_5k.csv.gz) into IDX files with the standard MNIST
names, for smoke runs when the full dataset cannot be downloaded.

    python3 tools/make_mnist_subset.py mlxtend-0.24.0-py3-none-any.whl data/mnist5k

The CSV is class-sorted, so rows are shuffled (seed 0) before a
4000 train / 1000 test split.
"""
import argparse
import gzip
import random
import struct
import zipfile
from pathlib import Path

MEMBER = "mlxtend/data/data/mnist_5k.csv.gz"


def read_rows(src: Path):
    if src.suffix == ".whl":
        raw = zipfile.ZipFile(src).read(MEMBER)
    else:
        raw = src.read_bytes()
    if raw[:2] == b"\x1f\x8b":
        raw = gzip.decompress(raw)
    rows = []
    for line in raw.decode().split():
        vals = [int(float(v)) for v in line.split(",")]
        rows.append((bytes(vals[:-1]), vals[-1]))
    return rows


def write_idx(out: Path, prefix: str, rows):
    imgs = struct.pack(">IIII", 0x803, len(rows), 28, 28) + b"".join(r[0] for r in rows)
    labs = struct.pack(">II", 0x801, len(rows)) + bytes(r[1] for r in rows)
    (out / f"{prefix}-images-idx3-ubyte").write_bytes(imgs)
    (out / f"{prefix}-labels-idx1-ubyte").write_bytes(labs)


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("source", type=Path, help="mlxtend wheel or mnist_5k.csv[.gz]")
    ap.add_argument("out", type=Path)
    ap.add_argument("--test", type=int, default=1000)
    ap.add_argument("--seed", type=int, default=0)
    a = ap.parse_args()
    rows = read_rows(a.source)
    assert all(len(r[0]) == 784 for r in rows)
    random.Random(a.seed).shuffle(rows)
    a.out.mkdir(parents=True, exist_ok=True)
    write_idx(a.out, "train", rows[a.test:])
    write_idx(a.out, "t10k", rows[: a.test])
    print(f"wrote {len(rows) - a.test} train / {a.test} test images to {a.out}")


if __name__ == "__main__":
    main()
