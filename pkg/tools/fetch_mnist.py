#!/usr/bin/env python3
"""Download MNIST and Fashion-MNIST IDX files for the experiment harness.

Usage: python3 tools/fetch_mnist.py [--dest data]

Files land in <dest>/mnist/ and <dest>/fashion-mnist/ with their standard
names (train-images-idx3-ubyte, ...), which is where the acceptance tests
and the sample configs look (override with CNALAB_DATA_DIR). Needs
outbound HTTPS; in offline environments the library's synthetic corpora
stand in instead.
"""

import argparse
import gzip
import os
import sys
import urllib.request

MIRRORS = {
    "mnist": [
        "https://ossci-datasets.s3.amazonaws.com/mnist/",
        "https://storage.googleapis.com/cvdf-datasets/mnist/",
    ],
    "fashion-mnist": [
        "http://fashion-mnist.s3-website.eu-central-1.amazonaws.com/",
    ],
}
FILES = [
    "train-images-idx3-ubyte",
    "train-labels-idx1-ubyte",
    "t10k-images-idx3-ubyte",
    "t10k-labels-idx1-ubyte",
]


def fetch(dataset, dest):
    out_dir = os.path.join(dest, dataset)
    os.makedirs(out_dir, exist_ok=True)
    for name in FILES:
        target = os.path.join(out_dir, name)
        if os.path.exists(target):
            print(f"  {target} already present")
            continue
        last_error = None
        for base in MIRRORS[dataset]:
            url = base + name + ".gz"
            try:
                print(f"  fetching {url}")
                with urllib.request.urlopen(url, timeout=60) as resp:
                    raw = gzip.decompress(resp.read())
                with open(target, "wb") as fh:
                    fh.write(raw)
                break
            except Exception as exc:   # try the next mirror
                last_error = exc
        else:
            print(f"  FAILED to fetch {name}: {last_error}", file=sys.stderr)
            return False
    return True


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--dest", default="data")
    parser.add_argument("--datasets", nargs="+", default=["mnist", "fashion-mnist"],
                        choices=sorted(MIRRORS))
    args = parser.parse_args()
    ok = True
    for dataset in args.datasets:
        print(f"[{dataset}]")
        ok = fetch(dataset, args.dest) and ok
    return 0 if ok else 1


if __name__ == "__main__":
    sys.exit(main())
