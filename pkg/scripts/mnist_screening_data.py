"""Export the 5,000-image MNIST sample bundled with mlxtend as two containers.

    python3 scripts/mnist_screening_data.py data/

writes ``mnist_digits_0to7.atdlds`` (source pool, 4,000 rows) and
``mnist_digits_8and9.atdlds`` (binary target, 1,000 rows; 8 -> 0, 9 -> 1),
the inputs of ``configs/mnist_screening.ini``. Rows are grouped by label.
"""
import argparse
from pathlib import Path

import numpy as np

from atdl.data import Dataset, save_container


def export(out_dir):
    from mlxtend.data import mnist_data

    x, y = mnist_data()
    order = np.argsort(y, kind="stable")
    x = (x[order] / 255.0).astype(np.float32)
    y = y[order].astype(np.int64)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    src = y < 8
    paths = (out_dir / "mnist_digits_0to7.atdlds", out_dir / "mnist_digits_8and9.atdlds")
    save_container(Dataset(x[src], y[src], [str(i) for i in range(8)], 28, 28, 1), paths[0])
    save_container(Dataset(x[~src], y[~src] - 8, ["8", "9"], 28, 28, 1), paths[1])
    return paths


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("out_dir")
    for p in export(ap.parse_args().out_dir):
        print(p)


if __name__ == "__main__":
    main()
