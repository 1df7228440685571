"""Dataset file round trips and malformed-input handling."""

import numpy as np
import pytest

from noveltyscan import LabeledDataset, load_dataset, save_dataset
from noveltyscan.dataio import (load_binary, load_csv, save_binary,
                                save_csv)


def sample(n=17, d=3, seed=0):
    rng = np.random.default_rng(seed)
    return LabeledDataset(rng.normal(size=(n, d)),
                          rng.integers(0, 4, size=n))


class TestCsv:
    def test_round_trip_bit_exact(self, tmp_path):
        data = sample()
        path = tmp_path / "d.csv"
        save_csv(data, path)
        loaded = load_csv(path)
        assert np.array_equal(loaded.points, data.points)
        assert np.array_equal(loaded.labels, data.labels)

    def test_header_layout(self, tmp_path):
        path = tmp_path / "d.csv"
        save_csv(sample(d=2), path)
        first = path.read_text().splitlines()[0]
        assert first == "x0,x1,label"

    def test_missing_label_column(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("x0,x1\n1.0,2.0\n")
        with pytest.raises(ValueError):
            load_csv(path)

    def test_malformed_header(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("a,b,label\n1.0,2.0,0\n")
        with pytest.raises(ValueError):
            load_csv(path)

    def test_ragged_row(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("x0,x1,label\n1.0,2.0,0\n1.0,0\n")
        with pytest.raises(ValueError):
            load_csv(path)

    def test_non_numeric_point(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("x0,label\nhello,0\n")
        with pytest.raises(ValueError):
            load_csv(path)

    def test_empty_dataset(self, tmp_path):
        path = tmp_path / "empty.csv"
        save_csv(LabeledDataset(np.empty((0, 2)),
                                np.empty(0, dtype=int)), path)
        loaded = load_csv(path)
        assert loaded.points.shape == (0, 2)


class TestBinary:
    def test_round_trip_bit_exact(self, tmp_path):
        data = sample(seed=1)
        path = tmp_path / "d.bin"
        save_binary(data, path)
        loaded = load_binary(path)
        assert np.array_equal(loaded.points, data.points)
        assert np.array_equal(loaded.labels, data.labels)

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "bad.bin"
        path.write_bytes(b"ZZZZ" + b"\0" * 32)
        with pytest.raises(ValueError):
            load_binary(path)

    def test_truncated_points(self, tmp_path):
        data = sample(seed=2)
        path = tmp_path / "d.bin"
        save_binary(data, path)
        raw = path.read_bytes()
        path.write_bytes(raw[:len(raw) // 2])
        with pytest.raises(ValueError):
            load_binary(path)

    def test_truncated_labels(self, tmp_path):
        data = sample(seed=3)
        path = tmp_path / "d.bin"
        save_binary(data, path)
        raw = path.read_bytes()
        path.write_bytes(raw[:-4])
        with pytest.raises(ValueError):
            load_binary(path)


class TestDispatch:
    def test_extension_round_trips(self, tmp_path):
        data = sample(seed=4)
        for name in ("d.csv", "d.nvlb"):
            path = tmp_path / name
            save_dataset(data, path)
            loaded = load_dataset(path)
            assert np.array_equal(loaded.points, data.points)
            assert np.array_equal(loaded.labels, data.labels)

    def test_csv_is_text(self, tmp_path):
        path = tmp_path / "d.csv"
        save_dataset(sample(), path)
        assert path.read_text().startswith("x0,")

    def test_binary_has_magic(self, tmp_path):
        path = tmp_path / "d.bin"
        save_dataset(sample(), path)
        assert path.read_bytes()[:4] == b"NVLB"
