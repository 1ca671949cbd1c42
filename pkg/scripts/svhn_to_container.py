"""One-time conversion of an SVHN ``*_32x32.mat`` file into the dataset container.

    python3 scripts/svhn_to_container.py train_32x32.mat svhn_train.atdlds [--size 28x28]

The MAT file holds ``X`` (32, 32, 3, N) uint8 and ``y`` (N, 1) with digit 0
stored as label 10. Images are converted to grayscale and resized
(default 28x28, MNIST geometry); labels are remapped to 0-9.
"""
import argparse

import numpy as np
from scipy.io import loadmat

from atdl.data import Dataset, resize, save_container, to_grayscale


def convert(mat_path, size=(28, 28), chunk=10000):
    mat = loadmat(mat_path)
    images, labels = mat["X"], mat["y"].ravel().astype(np.int64) % 10
    n = images.shape[3]
    parts = []
    for start in range(0, n, chunk):
        block = images[..., start:start + chunk]  # (32, 32, 3, b)
        planar = np.transpose(block, (3, 2, 0, 1)).reshape(block.shape[3], -1)
        d = Dataset(planar.astype(np.float32) / np.float32(255.0), labels[start:start + chunk],
                    [str(i) for i in range(10)], 32, 32, 3)
        parts.append(resize(to_grayscale(d), *size).x)
    x = np.concatenate(parts) if parts else np.zeros((0, size[0] * size[1]), np.float32)
    return Dataset(x, labels, [str(i) for i in range(10)], size[0], size[1], 1)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("mat")
    ap.add_argument("out")
    ap.add_argument("--size", default="28x28")
    args = ap.parse_args()
    h, w = (int(v) for v in args.size.lower().split("x"))
    d = convert(args.mat, (h, w))
    save_container(d, args.out)
    print(f"wrote {len(d)} images ({h}x{w}, grayscale) to {args.out}")


if __name__ == "__main__":
    main()
