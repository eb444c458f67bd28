"""Flat-file formats: FEAT binary, labels, kNN CSV, key=value text."""

import struct

import numpy as np
import pytest

from battention import io
from battention.errors import ValidationError
from battention.graph import build_knn_graph


class TestFeat:
    def test_round_trip_is_lossless_for_float32(self, tmp_path):
        x = np.random.default_rng(0).standard_normal((7, 3)).astype(np.float32)
        io.write_feat(tmp_path / "x.feat", x)
        np.testing.assert_array_equal(io.read_feat(tmp_path / "x.feat").data, x.astype(np.float64))

    def test_layout(self, tmp_path):
        io.write_feat(tmp_path / "x.feat", [[1.0, 2.0]])
        raw = (tmp_path / "x.feat").read_bytes()
        assert raw == b"FEAT" + struct.pack("<II", 1, 2) + struct.pack("<2f", 1.0, 2.0)

    def test_bad_magic(self, tmp_path):
        (tmp_path / "x.feat").write_bytes(b"NOPE" + bytes(8))
        with pytest.raises(ValidationError):
            io.read_feat(tmp_path / "x.feat")

    def test_truncated_payload(self, tmp_path):
        (tmp_path / "x.feat").write_bytes(b"FEAT" + struct.pack("<II", 2, 2) + bytes(4))
        with pytest.raises(ValidationError):
            io.read_feat(tmp_path / "x.feat")

    def test_csv_import(self, tmp_path):
        (tmp_path / "x.csv").write_text("1,2\n3,4\n")
        np.testing.assert_array_equal(io.read_features(tmp_path / "x.csv").data, [[1, 2], [3, 4]])

    def test_ragged_csv(self, tmp_path):
        (tmp_path / "x.csv").write_text("1,2\n3\n")
        with pytest.raises(ValidationError):
            io.read_features(tmp_path / "x.csv")


class TestLabels:
    def test_round_trip(self, tmp_path):
        io.write_labels(tmp_path / "l.txt", [3, 0, 2])
        assert (tmp_path / "l.txt").read_text() == "3\n0\n2\n"
        assert io.read_labels(tmp_path / "l.txt").labels.tolist() == [3, 0, 2]

    def test_garbage(self, tmp_path):
        (tmp_path / "l.txt").write_text("1\nx\n")
        with pytest.raises(ValidationError):
            io.read_labels(tmp_path / "l.txt")


class TestKnnCsv:
    def test_round_trip(self, tmp_path):
        g = build_knn_graph(np.random.default_rng(1).standard_normal((12, 3)), 3)
        io.write_knn_csv(tmp_path / "g.csv", g)
        lines = (tmp_path / "g.csv").read_text().splitlines()
        assert lines[0] == "probe,neighbor,score"
        assert len(lines[1].split(",")[2].split(".")[1]) == 6
        back = io.read_knn_csv(tmp_path / "g.csv")
        np.testing.assert_array_equal(back.ids, g.ids)
        np.testing.assert_allclose(back.scores, g.scores, atol=5e-7)


class TestKeyValue:
    def test_comments_and_blank_lines(self):
        assert io.parse_kv("# c\n\na=1  # trailing\nb = x\n") == {"a": "1", "b": "x"}

    def test_unknown_key(self):
        with pytest.raises(ValidationError):
            io.parse_kv("zz=1", allowed={"a"})

    def test_format(self):
        assert io.format_kv({"a": 1, "b": 0.5}) == "a=1\nb=0.5\n"
