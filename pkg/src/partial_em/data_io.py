"""Synthetic mixtures, CSV and MNIST IDX loading, and PCA preprocessing."""

from __future__ import annotations

import csv
import gzip
import io
import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .em_engine import make_rng
from .model import Dataset

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801
_IDX_UBYTE = 0x08


class BadMagic(ValueError):
    pass


class TruncatedFile(ValueError):
    pass


class CountMismatch(ValueError):
    pass


class ParseError(ValueError):
    def __init__(self, row: int, col: int, value: str):
        super().__init__(f"cannot parse {value!r} at row {row}, column {col}")
        self.row = row
        self.col = col


class RaggedRows(ValueError):
    pass


class RankDeficient(ValueError):
    pass


@dataclass(frozen=True)
class MixtureSpec:
    weights: np.ndarray
    means: np.ndarray
    covariances: np.ndarray

    def __post_init__(self):
        weights = np.asarray(self.weights, dtype=float)
        means = np.asarray(self.means, dtype=float)
        if means.ndim == 1:
            means = means[:, None]
        covs = np.asarray(self.covariances, dtype=float)
        if covs.ndim == 1:
            covs = covs[:, None, None]
        k, d = means.shape
        if weights.shape != (k,) or covs.shape != (k, d, d):
            raise ValueError("mixture spec shapes disagree")
        if np.any(weights < 0) or abs(weights.sum() - 1.0) > 1e-12:
            raise ValueError("mixture weights must form a probability vector")
        for c in covs:
            np.linalg.cholesky(c)
        object.__setattr__(self, "weights", weights)
        object.__setattr__(self, "means", means)
        object.__setattr__(self, "covariances", covs)

    @classmethod
    def from_json(cls, path) -> "MixtureSpec":
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
        return cls(raw["weights"], raw["means"], raw["covariances"])


# 0.3 N(-2, 1) + 0.7 N(2, 1)
EXAMPLE1 = MixtureSpec([0.3, 0.7], [[-2.0], [2.0]], [[[1.0]], [[1.0]]])


def sample_mixture(spec: MixtureSpec, n: int, seed: int) -> Dataset:
    """Draw ``n`` labelled points; labels are the drawing component's index."""
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = make_rng(seed)
    labels = rng.choice(spec.weights.shape[0], size=n, p=spec.weights)
    z = rng.standard_normal((n, spec.means.shape[1]))
    factors = np.linalg.cholesky(spec.covariances)
    points = np.einsum("nij,nj->ni", factors[labels], z) + spec.means[labels]
    return Dataset(points, labels)


def _open_bytes(path) -> bytes:
    path = Path(path)
    raw = path.read_bytes()
    if path.suffix == ".gz":
        raw = gzip.decompress(raw)
    return raw


def parse_idx(raw: bytes, expected_magic=None) -> np.ndarray:
    """Decode an unsigned-byte IDX blob into an array of its stated shape."""
    if len(raw) < 4:
        raise TruncatedFile("IDX header is shorter than 4 bytes")
    (magic,) = struct.unpack(">I", raw[:4])
    if expected_magic is not None and magic != expected_magic:
        raise BadMagic(f"magic 0x{magic:08x}, expected 0x{expected_magic:08x}")
    if magic >> 16 != 0 or (magic >> 8) & 0xFF != _IDX_UBYTE:
        raise BadMagic(f"unsupported IDX magic 0x{magic:08x}")
    ndim = magic & 0xFF
    header = 4 + 4 * ndim
    if len(raw) < header:
        raise TruncatedFile("IDX dimension header is truncated")
    dims = struct.unpack(f">{ndim}I", raw[4:header])
    count = int(np.prod(dims, dtype=np.int64))
    if len(raw) < header + count:
        raise TruncatedFile(f"IDX body has {len(raw) - header} bytes, header promises {count}")
    return np.frombuffer(raw, dtype=np.uint8, count=count, offset=header).reshape(dims)


def serialize_idx(arr) -> bytes:
    arr = np.asarray(arr)
    if arr.dtype != np.uint8:
        raise TypeError("only unsigned-byte IDX data is supported")
    buf = io.BytesIO()
    buf.write(struct.pack(">I", (_IDX_UBYTE << 8) | arr.ndim))
    buf.write(struct.pack(f">{arr.ndim}I", *arr.shape))
    buf.write(np.ascontiguousarray(arr).tobytes())
    return buf.getvalue()


def write_idx(path, arr) -> None:
    data = serialize_idx(arr)
    path = Path(path)
    path.write_bytes(gzip.compress(data, mtime=0) if path.suffix == ".gz" else data)


def load_idx(images_path, labels_path, keep_digits=None) -> Dataset:
    """Load MNIST-style IDX images/labels, scaled to [0, 1], keeping ``keep_digits``.

    ``keep_digits=None`` keeps every label. The result may be empty.
    """
    images = parse_idx(_open_bytes(images_path), IDX_IMAGES_MAGIC)
    labels = parse_idx(_open_bytes(labels_path), IDX_LABELS_MAGIC)
    if images.shape[0] != labels.shape[0]:
        raise CountMismatch(f"{images.shape[0]} images but {labels.shape[0]} labels")
    flat = images.reshape(images.shape[0], -1)
    if keep_digits is not None:
        mask = np.isin(labels, sorted(keep_digits))
        flat, labels = flat[mask], labels[mask]
    return Dataset(flat.astype(float) / 255.0, labels.astype(np.int64))


def default_labels_path(images_path) -> Path:
    """``train-images-idx3-ubyte`` -> ``train-labels-idx1-ubyte`` (gzip suffix kept)."""
    p = Path(images_path)
    name = p.name.replace("images-idx3", "labels-idx1").replace("images.idx3", "labels.idx1")
    if name == p.name:
        raise ValueError(f"cannot derive a labels file name from {p.name!r}")
    return p.with_name(name)


def _is_number(s: str) -> bool:
    try:
        float(s)
    except ValueError:
        return False
    return True


def load_csv(path, has_labels: bool = False) -> Dataset:
    """Read a rectangular numeric CSV; an all-text first row is treated as a header.

    With ``has_labels`` the last column is read as integer labels.
    """
    with open(path, newline="", encoding="utf-8") as fh:
        rows = [r for r in csv.reader(fh) if r]
    if not rows:
        raise ValueError(f"{path} contains no data")
    first_data_row = 0
    if not all(_is_number(c) for c in rows[0]):
        first_data_row = 1
    rows = rows[first_data_row:]
    if not rows:
        raise ValueError(f"{path} contains only a header")
    width = len(rows[0])
    values = np.empty((len(rows), width))
    for i, row in enumerate(rows):
        lineno = i + first_data_row + 1
        if len(row) != width:
            raise RaggedRows(f"row {lineno} has {len(row)} columns, expected {width}")
        for j, cell in enumerate(row):
            try:
                values[i, j] = float(cell)
            except ValueError:
                raise ParseError(lineno, j + 1, cell) from None
    if has_labels:
        if width < 2:
            raise ValueError("a labelled CSV needs at least one feature column")
        labels = values[:, -1]
        if np.any(labels != np.round(labels)):
            raise ValueError("label column must hold integers")
        return Dataset(values[:, :-1], labels.astype(np.int64))
    return Dataset(values)


def csv_has_label_header(path) -> bool:
    with open(path, newline="", encoding="utf-8") as fh:
        first = next(csv.reader(fh), [])
    return bool(first) and first[-1].strip() == "label"


def save_csv(path_or_file, data: Dataset) -> None:
    """Write points (and labels as a trailing ``label`` column) at 17 significant digits."""
    own = isinstance(path_or_file, (str, Path))
    fh = open(path_or_file, "w", newline="", encoding="utf-8") if own else path_or_file
    try:
        writer = csv.writer(fh, lineterminator="\n")
        header = [f"x{j}" for j in range(data.d)]
        if data.labels is not None:
            header.append("label")
        writer.writerow(header)
        for i, row in enumerate(data.points):
            cells = [format(v, ".17g") for v in row]
            if data.labels is not None:
                cells.append(str(int(data.labels[i])))
            writer.writerow(cells)
    finally:
        if own:
            fh.close()


@dataclass(frozen=True)
class PcaTransform:
    mean: np.ndarray
    basis: np.ndarray
    explained_variance: np.ndarray

    def transform(self, data) -> np.ndarray:
        pts = data.points if isinstance(data, Dataset) else np.asarray(data, dtype=float)
        return (pts - self.mean) @ self.basis

    def inverse_transform(self, scores) -> np.ndarray:
        return np.asarray(scores) @ self.basis.T + self.mean

    def apply(self, data: Dataset) -> Dataset:
        return Dataset(self.transform(data), data.labels)


def fit_pca(data, d_out: int) -> PcaTransform:
    """Top-``d_out`` principal axes of the centred data.

    Each axis is signed so that its largest-magnitude entry is positive.
    """
    pts = data.points if isinstance(data, Dataset) else np.asarray(data, dtype=float)
    n, dim = pts.shape
    if not 1 <= d_out <= min(n, dim):
        raise ValueError(f"d_out must lie in [1, {min(n, dim)}], got {d_out}")
    mean = pts.mean(axis=0)
    centred = pts - mean
    # SVD of the centred data avoids squaring the condition number
    _, s, vt = np.linalg.svd(centred, full_matrices=False)
    var = s**2 / max(n - 1, 1)
    tol = max(n, dim) * np.finfo(float).eps * (s[0] if s.size else 0.0)
    if np.count_nonzero(s > tol) < d_out:
        raise RankDeficient(f"only {np.count_nonzero(s > tol)} positive variances, need {d_out}")
    basis = vt[:d_out].T.copy()
    pivots = np.argmax(np.abs(basis), axis=0)
    signs = np.sign(basis[pivots, np.arange(d_out)])
    basis *= signs
    return PcaTransform(mean, basis, var[:d_out])
