#!/usr/bin/env python3
"""Download MNIST as a single npz to data/mnist.npz.

The training commands never download anything themselves; run this once on a
machine with network access, or point LLP_MNIST_PATH at an existing copy.
The file layout matches the common Keras export: x_train, y_train, x_test,
y_test.
"""

import os
import sys
import urllib.request

URL = "https://storage.googleapis.com/tensorflow/tf-keras-datasets/mnist.npz"


def main():
    dest = sys.argv[1] if len(sys.argv) > 1 else "data/mnist.npz"
    os.makedirs(os.path.dirname(dest) or ".", exist_ok=True)
    if os.path.exists(dest):
        print(f"{dest} already present")
        return 0
    print(f"downloading {URL} -> {dest}")
    urllib.request.urlretrieve(URL, dest)
    print("done")
    return 0


if __name__ == "__main__":
    sys.exit(main())
