"""
Download the four MNIST IDX files into MNIST_DIR (default data/mnist).

Files already present are kept. The mirror can be changed with MNIST_MIRROR.

Usage:
    python scripts/fetch_mnist.py [--dir DIR]
"""

import argparse
import os
import sys

import requests
from dotenv import load_dotenv

sys.path.append(os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from ingest.mnist import MNIST_FILES, default_paths, read_idx

load_dotenv()

DEFAULT_MIRROR = "https://storage.googleapis.com/cvdf-datasets/mnist/"
CHUNK = 1 << 16


def fetch_file(url: str, path: str, timeout: float = 60.0) -> int:
    """Stream url to path; returns the number of bytes written."""
    tmp = path + ".part"
    written = 0
    with requests.get(url, stream=True, timeout=timeout) as response:
        response.raise_for_status()
        with open(tmp, "wb") as fh:
            for chunk in response.iter_content(chunk_size=CHUNK):
                fh.write(chunk)
                written += len(chunk)
    os.replace(tmp, path)
    return written


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[1])
    parser.add_argument("--dir", default=os.getenv("MNIST_DIR", "data/mnist"))
    args = parser.parse_args()
    mirror = os.getenv("MNIST_MIRROR", DEFAULT_MIRROR)
    os.makedirs(args.dir, exist_ok=True)

    print("=" * 60)
    print(f"Fetching MNIST into {args.dir}")
    print("=" * 60)
    for name in MNIST_FILES.values():
        gz_name = name + ".gz"
        path = os.path.join(args.dir, gz_name)
        if os.path.exists(path) or os.path.exists(os.path.join(args.dir, name)):
            print(f"✓ {gz_name} already present")
            continue
        try:
            size = fetch_file(mirror + gz_name, path)
        except requests.RequestException as e:
            print(f"❌ {gz_name}: {e}")
            return 1
        print(f"✓ {gz_name} ({size / 1024:.0f} KB)")

    # a quick header check of every file
    for key, path in default_paths(args.dir).items():
        arr = read_idx(path)
        print(f"  {key}: shape {arr.shape}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
