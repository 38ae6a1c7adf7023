#!/usr/bin/env python3
# Copyright (c) 2026 The hmcvi Authors
# SPDX-License-Identifier: Apache-2.0
"""Write the 5,000-image MNIST subset shipped inside the mlxtend wheel as
gzipped IDX files (images + labels).

    python3 tools/make_mnist_subset.py --out data/

The wheel is fetched with `pip download` unless --wheel points at a local copy.
"""
import argparse
import glob
import gzip
import os
import struct
import subprocess
import tempfile
import zipfile

MEMBER = "mlxtend/data/data/mnist_5k.csv.gz"


def fetch_wheel(workdir):
    subprocess.run(
        ["pip", "download", "--no-deps", "mlxtend", "-d", workdir],
        check=True,
        stdout=subprocess.DEVNULL,
    )
    wheels = glob.glob(os.path.join(workdir, "mlxtend-*.whl"))
    if not wheels:
        raise SystemExit("pip did not produce an mlxtend wheel")
    return wheels[0]


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--out", default="data")
    ap.add_argument("--wheel", default=None)
    args = ap.parse_args()

    with tempfile.TemporaryDirectory() as tmp:
        wheel = args.wheel or fetch_wheel(tmp)
        raw = gzip.decompress(zipfile.ZipFile(wheel).read(MEMBER)).decode()

    rows = [list(map(int, line.split(","))) for line in raw.splitlines() if line]
    n = len(rows)
    assert all(len(r) == 785 for r in rows)

    os.makedirs(args.out, exist_ok=True)
    images = struct.pack(">IIII", 0x00000803, n, 28, 28)
    images += bytes(v for r in rows for v in r[:784])
    labels = struct.pack(">II", 0x00000801, n) + bytes(r[784] for r in rows)

    # mtime=0 keeps the archives byte-reproducible
    for name, payload in (
        ("mnist5k-images-idx3-ubyte.gz", images),
        ("mnist5k-labels-idx1-ubyte.gz", labels),
    ):
        with open(os.path.join(args.out, name), "wb") as fh:
            with gzip.GzipFile(fileobj=fh, mode="wb", mtime=0, filename="") as gz:
                gz.write(payload)
    print(f"wrote {n} images to {args.out}")


if __name__ == "__main__":
    main()
