"""Rebuild the four standard MNIST IDX files from the classic ``mnist.pkl.gz``.

The pickle stores pixels as ``byte / 256`` in float32 and splits the 60k
training images into 50k train + 10k validation, in original order.  Both
facts make the conversion exact.

    python tools/pickle_to_idx.py path/to/mnist.pkl.gz data/mnist
"""
import gzip
import pickle
import sys
from pathlib import Path

import numpy as np

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "src"))
from ace_ensemble.data import write_idx  # noqa: E402


def main(src, out_dir):
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    with gzip.open(src, "rb") as f:
        train, valid, test = pickle.load(f, encoding="latin1")

    def to_bytes(x):
        raw = np.asarray(x, dtype=np.float64) * 256.0
        if not np.array_equal(raw, np.round(raw)):
            raise ValueError("pixels are not multiples of 1/256")
        return raw.astype(np.uint8).reshape(-1, 28, 28)

    x_train = np.concatenate([to_bytes(train[0]), to_bytes(valid[0])])
    y_train = np.concatenate([train[1], valid[1]]).astype(np.uint8)
    write_idx(out / "train-images-idx3-ubyte.gz", x_train)
    write_idx(out / "train-labels-idx1-ubyte.gz", y_train)
    write_idx(out / "t10k-images-idx3-ubyte.gz", to_bytes(test[0]))
    write_idx(out / "t10k-labels-idx1-ubyte.gz", test[1].astype(np.uint8))


if __name__ == "__main__":
    main(sys.argv[1], sys.argv[2])
