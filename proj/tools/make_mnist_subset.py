#!/usr/bin/env python3
"""Write a 2000/1000 MNIST train/test subset in IDX format.

Source: the 5000-image MNIST sample bundled with the mlxtend wheel
(mlxtend/data/data/mnist_5k.csv.gz, 500 images per digit, pixels 0..255).
The split is stratified and shuffled with a fixed seed so the output is
reproducible.

    pip download mlxtend --no-deps -d /tmp/wheels
    python3 tools/make_mnist_subset.py /tmp/wheels/mlxtend-*.whl data/mnist_subset
"""
import gzip
import io
import struct
import sys
import zipfile
from pathlib import Path

import numpy as np

N_TRAIN_PER_CLASS = 200
N_TEST_PER_CLASS = 100
SEED = 20240607


def write_idx_images(path, images):
    n, rows, cols = images.shape
    with open(path, "wb") as f:
        f.write(struct.pack(">IIII", 0x00000803, n, rows, cols))
        f.write(images.astype(np.uint8).tobytes())


def write_idx_labels(path, labels):
    with open(path, "wb") as f:
        f.write(struct.pack(">II", 0x00000801, len(labels)))
        f.write(labels.astype(np.uint8).tobytes())


def main():
    wheel, out = sys.argv[1], Path(sys.argv[2])
    out.mkdir(parents=True, exist_ok=True)
    raw = zipfile.ZipFile(wheel).read("mlxtend/data/data/mnist_5k.csv.gz")
    data = np.loadtxt(io.BytesIO(gzip.decompress(raw)), delimiter=",")
    pixels = data[:, :-1].reshape(-1, 28, 28)
    labels = data[:, -1].astype(np.int64)

    rng = np.random.default_rng(SEED)
    train_idx, test_idx = [], []
    for digit in range(10):
        idx = rng.permutation(np.flatnonzero(labels == digit))
        train_idx.extend(idx[:N_TRAIN_PER_CLASS])
        test_idx.extend(idx[N_TRAIN_PER_CLASS:N_TRAIN_PER_CLASS + N_TEST_PER_CLASS])
    train_idx = rng.permutation(train_idx)
    test_idx = rng.permutation(test_idx)

    write_idx_images(out / "train-images-idx3-ubyte", pixels[train_idx])
    write_idx_labels(out / "train-labels-idx1-ubyte", labels[train_idx])
    write_idx_images(out / "t10k-images-idx3-ubyte", pixels[test_idx])
    write_idx_labels(out / "t10k-labels-idx1-ubyte", labels[test_idx])


if __name__ == "__main__":
    main()
