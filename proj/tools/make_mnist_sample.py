#!/usr/bin/env python3
"""Write a small MNIST sample as IDX files.

The full MNIST archive is not reachable from every build machine, but the
mlxtend wheel on PyPI bundles 5000 MNIST training images (500 per digit) as a
gzipped CSV. This script pulls that wheel, keeps `--per-class` images of each
digit and writes them in the original IDX layout:

    python3 tools/make_mnist_sample.py --out data/mnist2k --per-class 200
"""

import argparse
import gzip
import io
import pathlib
import struct
import subprocess
import sys
import tempfile
import zipfile

import numpy as np


def fetch_csv(workdir: pathlib.Path) -> np.ndarray:
    subprocess.run(
        [sys.executable, "-m", "pip", "download", "--no-deps", "mlxtend==0.24.0",
         "-d", str(workdir)],
        check=True,
    )
    wheel = next(workdir.glob("mlxtend-*.whl"))
    with zipfile.ZipFile(wheel) as zf:
        raw = zf.read("mlxtend/data/data/mnist_5k.csv.gz")
    return np.loadtxt(io.TextIOWrapper(gzip.GzipFile(fileobj=io.BytesIO(raw))),
                      delimiter=",", dtype=np.int64)


def main() -> None:
    ap = argparse.ArgumentParser()
    ap.add_argument("--out", default="data/mnist2k")
    ap.add_argument("--per-class", type=int, default=200)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    with tempfile.TemporaryDirectory() as tmp:
        table = fetch_csv(pathlib.Path(tmp))
    pixels, labels = table[:, :-1], table[:, -1]

    rng = np.random.default_rng(args.seed)
    keep = np.concatenate([
        rng.permutation(np.flatnonzero(labels == c))[: args.per_class] for c in range(10)
    ])
    keep = rng.permutation(keep)

    out = pathlib.Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    count = len(keep)
    with open(out / "images-idx3-ubyte", "wb") as f:
        f.write(struct.pack(">IIII", 0x00000803, count, 28, 28))
        f.write(pixels[keep].astype(np.uint8).tobytes())
    with open(out / "labels-idx1-ubyte", "wb") as f:
        f.write(struct.pack(">II", 0x00000801, count))
        f.write(labels[keep].astype(np.uint8).tobytes())
    print(f"wrote {count} images to {out}")


if __name__ == "__main__":
    main()
