#!/usr/bin/env python3
"""Write a stratified MNIST subset as gzipped IDX files.

Source: the 5,000-image MNIST sample bundled with mlxtend (500 per digit).
Output: <out>/train-{images-idx3,labels-idx1}-ubyte.gz (400/digit) and
        <out>/t10k-{images-idx3,labels-idx1}-ubyte.gz (100/digit).
"""
import argparse
import gzip
import pathlib
import struct

import numpy as np
from mlxtend.data import mnist_data


def write_images(path, images):
    with gzip.GzipFile(path, "wb", mtime=0) as f:
        f.write(struct.pack(">IIII", 0x00000803, images.shape[0], 28, 28))
        f.write(images.astype(np.uint8).tobytes())


def write_labels(path, labels):
    with gzip.GzipFile(path, "wb", mtime=0) as f:
        f.write(struct.pack(">II", 0x00000801, labels.shape[0]))
        f.write(labels.astype(np.uint8).tobytes())


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("--out", default="data/mnist5k")
    parser.add_argument("--eval-per-class", type=int, default=100)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()

    x, y = mnist_data()
    rng = np.random.default_rng(args.seed)
    train_idx, eval_idx = [], []
    for c in range(10):
        idx = rng.permutation(np.flatnonzero(y == c))
        eval_idx.extend(idx[: args.eval_per_class])
        train_idx.extend(idx[args.eval_per_class:])
    train_idx = rng.permutation(train_idx)
    eval_idx = rng.permutation(eval_idx)

    out = pathlib.Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_images(out / "train-images-idx3-ubyte.gz", x[train_idx])
    write_labels(out / "train-labels-idx1-ubyte.gz", y[train_idx])
    write_images(out / "t10k-images-idx3-ubyte.gz", x[eval_idx])
    write_labels(out / "t10k-labels-idx1-ubyte.gz", y[eval_idx])
    print(f"wrote {len(train_idx)} train / {len(eval_idx)} eval images to {out}")


if __name__ == "__main__":
    main()
