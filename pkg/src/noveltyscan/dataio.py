"""Dataset file I/O: CSV and a compact binary format.

CSV layout: header ``x0,...,x{d-1},label``, UTF-8, LF line endings.
Binary layout (little-endian): magic "NVLB", u32 version=1, u64 n_rows,
u32 n_cols, row-major f64 points, then u32 labels.
"""

import csv
import struct

import numpy as np

from .datagen import LabeledDataset

DATASET_MAGIC = b"NVLB"
DATASET_VERSION = 1


def save_csv(dataset, path):
    n, d = dataset.points.shape
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow([f"x{k}" for k in range(d)] + ["label"])
        for row, label in zip(dataset.points, dataset.labels):
            writer.writerow([repr(float(v)) for v in row] + [int(label)])


def load_csv(path):
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if not header or header[-1] != "label":
            raise ValueError(f"{path}: expected trailing 'label' column")
        d = len(header) - 1
        if header[:d] != [f"x{k}" for k in range(d)]:
            raise ValueError(f"{path}: malformed header {header!r}")
        points, labels = [], []
        for row in reader:
            if len(row) != d + 1:
                raise ValueError(f"{path}: row of width {len(row)}, "
                                 f"expected {d + 1}")
            points.append([float(v) for v in row[:d]])
            labels.append(int(row[d]))
    return LabeledDataset(np.asarray(points, dtype=float).reshape(-1, d),
                          np.asarray(labels, dtype=np.int64))


def save_binary(dataset, path):
    n, d = dataset.points.shape
    with open(path, "wb") as fh:
        fh.write(DATASET_MAGIC)
        fh.write(struct.pack("<IQI", DATASET_VERSION, n, d))
        fh.write(np.ascontiguousarray(dataset.points, dtype="<f8").tobytes())
        fh.write(np.ascontiguousarray(dataset.labels, dtype="<u4").tobytes())


def load_binary(path):
    with open(path, "rb") as fh:
        if fh.read(4) != DATASET_MAGIC:
            raise ValueError(f"{path}: bad dataset magic")
        version, n, d = struct.unpack("<IQI", fh.read(16))
        if version != DATASET_VERSION:
            raise ValueError(f"{path}: unsupported version {version}")
        points = np.frombuffer(fh.read(8 * n * d), dtype="<f8")
        if points.size != n * d:
            raise ValueError(f"{path}: truncated point block")
        labels = np.frombuffer(fh.read(4 * n), dtype="<u4")
        if labels.size != n:
            raise ValueError(f"{path}: truncated label block")
    return LabeledDataset(points.reshape(n, d).copy(),
                          labels.astype(np.int64))


def save_dataset(dataset, path):
    """Format chosen by extension: .csv for text, anything else binary."""
    if str(path).endswith(".csv"):
        save_csv(dataset, path)
    else:
        save_binary(dataset, path)


def load_dataset(path):
    if str(path).endswith(".csv"):
        return load_csv(path)
    return load_binary(path)
