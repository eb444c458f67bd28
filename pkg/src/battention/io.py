"""Flat-file formats: FEAT features, label lists, CSV tables, key=value files."""

from __future__ import annotations

import csv
import struct
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import ValidationError
from .graph import FeatureMatrix, KnnGraph, LabelVector

FEAT_MAGIC = b"FEAT"


def write_feat(path, features) -> None:
    """Write ``FEAT`` + u32 N + u32 M + N*M little-endian float32, row-major."""
    x = features.data if isinstance(features, FeatureMatrix) else np.asarray(features)
    x = np.ascontiguousarray(x, dtype="<f4")
    if x.ndim != 2:
        raise ValidationError("features must be 2-D")
    with open(path, "wb") as fh:
        fh.write(FEAT_MAGIC)
        fh.write(struct.pack("<II", *x.shape))
        fh.write(x.tobytes())


def read_feat(path) -> FeatureMatrix:
    raw = Path(path).read_bytes()
    if raw[:4] != FEAT_MAGIC:
        raise ValidationError(f"{path}: bad magic {raw[:4]!r}")
    if len(raw) < 12:
        raise ValidationError(f"{path}: truncated header")
    n, m = struct.unpack("<II", raw[4:12])
    body = raw[12:]
    if len(body) != 4 * n * m:
        raise ValidationError(f"{path}: expected {4 * n * m} payload bytes, found {len(body)}")
    x = np.frombuffer(body, dtype="<f4").reshape(n, m).astype(np.float64)
    return FeatureMatrix(x)


def read_features(path) -> FeatureMatrix:
    """Read a FEAT file, or a comma-separated text file with one row per line."""
    with open(path, "rb") as fh:
        head = fh.read(4)
    if head == FEAT_MAGIC:
        return read_feat(path)
    rows = []
    with open(path, newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh), 1):
            if not row or all(not c.strip() for c in row):
                continue
            try:
                rows.append([float(c) for c in row])
            except ValueError as exc:
                raise ValidationError(f"{path}:{lineno}: {exc}") from None
    if not rows or len({len(r) for r in rows}) != 1:
        raise ValidationError(f"{path}: rows are empty or ragged")
    return FeatureMatrix(np.array(rows))


def write_labels(path, labels) -> None:
    lab = labels.labels if isinstance(labels, LabelVector) else np.asarray(labels)
    Path(path).write_text("".join(f"{int(v)}\n" for v in lab))


def read_labels(path) -> LabelVector:
    vals = []
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.strip()
        if not line:
            continue
        try:
            vals.append(int(line))
        except ValueError:
            raise ValidationError(f"{path}:{lineno}: not an integer: {line!r}") from None
    return LabelVector(np.array(vals, dtype=np.int64))


def write_csv(path, header: Sequence[str], rows: Iterable[Sequence], floatfmt: str = "{:.6f}") -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([floatfmt.format(v) if isinstance(v, (float, np.floating)) else v for v in row])


def write_knn_csv(path, graph: KnnGraph) -> None:
    write_csv(path, ["probe", "neighbor", "score"], graph.edges())


def read_knn_csv(path, n: int | None = None) -> KnnGraph:
    lists: dict[int, list[tuple[int, float]]] = {}
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != ["probe", "neighbor", "score"]:
            raise ValidationError(f"{path}: expected header probe,neighbor,score")
        for row in reader:
            lists.setdefault(int(row["probe"]), []).append((int(row["neighbor"]), float(row["score"])))
    n = n if n is not None else (max(max(lists), max(j for v in lists.values() for j, _ in v)) + 1 if lists else 0)
    return KnnGraph.from_lists([lists.get(i, []) for i in range(n)])


def format_kv(values: Mapping[str, object]) -> str:
    out = []
    for key, v in values.items():
        if isinstance(v, (float, np.floating)):
            v = repr(float(v))
        out.append(f"{key}={v}\n")
    return "".join(out)


def parse_kv(text: str, allowed: Iterable[str] | None = None) -> dict[str, str]:
    """Parse ``key=value`` lines; ``#`` starts a comment. Unknown keys raise."""
    allowed = set(allowed) if allowed is not None else None
    out = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValidationError(f"line {lineno}: expected key=value, got {line!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if allowed is not None and key not in allowed:
            raise ValidationError(f"line {lineno}: unknown key {key!r}")
        out[key] = value
    return out
