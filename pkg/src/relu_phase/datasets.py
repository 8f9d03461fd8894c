"""Training sets with the bias folded into a trailing constant-1 coordinate."""

from __future__ import annotations

import csv
import hashlib
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

IMAGE_MAGIC = 2051
LABEL_MAGIC = 2049

# 1-d problem used for the condensation pictures; max target 0.8 >= 1/2
DEFAULT_POINTS = ((0.1, 0.8), (0.35, 0.2), (0.6, 0.6), (0.85, 0.4))


class IDXFormatError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class Dataset:
    X: np.ndarray
    y: np.ndarray
    name: str = "custom"

    def __post_init__(self):
        X = np.array(self.X, dtype=np.float64, copy=True)
        y = np.array(self.y, dtype=np.float64, copy=True).reshape(-1)
        if X.ndim != 2:
            raise ValueError("X must be a 2-d array")
        if X.shape[0] != y.shape[0]:
            raise ValueError(f"X has {X.shape[0]} rows but y has {y.shape[0]} entries")
        X.setflags(write=False)
        y.setflags(write=False)
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y)

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def d(self) -> int:
        return self.X.shape[1]

    def fingerprint(self) -> str:
        h = hashlib.sha256()
        h.update(struct.pack("<qq", *self.X.shape))
        h.update(self.X.astype("<f8").tobytes())
        h.update(self.y.astype("<f8").tobytes())
        return h.hexdigest()[:16]


@dataclass
class ValidationReport:
    violations: list[str] = field(default_factory=list)
    max_target: float = float("nan")

    @property
    def ok(self) -> bool:
        return not self.violations


def synthetic_1d(points=DEFAULT_POINTS, name: str = "custom") -> Dataset:
    pts = [(float(x), float(y)) for x, y in points]
    if not pts:
        raise ValueError("need at least one point")
    xs = [p[0] for p in pts]
    if len(set(xs)) != len(xs):
        raise ValueError("duplicate inputs in 1-d dataset")
    X = np.array([[x, 1.0] for x in xs])
    y = np.array([p[1] for p in pts])
    return Dataset(X, y, name)


def default_dataset() -> Dataset:
    return synthetic_1d(DEFAULT_POINTS, name="builtin:fig2")


def validate(ds: Dataset, theory_mode: bool = False) -> ValidationReport:
    rep = ValidationReport()
    if ds.n < 1:
        rep.violations.append("dataset is empty")
    if ds.d < 2:
        rep.violations.append(f"augmented dimension d={ds.d} < 2")
    if not (np.all(np.isfinite(ds.X)) and np.all(np.isfinite(ds.y))):
        rep.violations.append("non-finite entries")
    if ds.n and ds.d and not np.all(ds.X[:, -1] == 1.0):
        bad = np.flatnonzero(ds.X[:, -1] != 1.0)
        rep.violations.append(f"bias coordinate != 1 in rows {bad[:10].tolist()}")
    if ds.n:
        rep.max_target = float(np.max(ds.y))
    if theory_mode and ds.n:
        if np.any(ds.X < 0) or np.any(ds.X > 1):
            rep.violations.append("inputs outside [0, 1]")
        if np.any(ds.y < 0) or np.any(ds.y > 1):
            rep.violations.append("targets outside [0, 1]")
        if rep.max_target < 0.5:
            rep.violations.append(f"max target {rep.max_target:g} < 1/2 (well-trainability assumption)")
    return rep


def _read_header(f, path, expected_magic: int, ndim: int) -> list[int]:
    raw = f.read(4 + 4 * ndim)
    if len(raw) < 4 + 4 * ndim:
        raise IDXFormatError(f"{path}: truncated header")
    magic, *dims = struct.unpack(">" + "i" * (1 + ndim), raw)
    if magic != expected_magic:
        raise IDXFormatError(f"{path}: bad magic number {magic}, expected {expected_magic}")
    return dims


def read_idx_images(path) -> np.ndarray:
    with open(path, "rb") as f:
        count, rows, cols = _read_header(f, path, IMAGE_MAGIC, 3)
        payload = f.read()
    need = count * rows * cols
    if len(payload) < need:
        raise IDXFormatError(f"{path}: truncated payload ({len(payload)} of {need} bytes)")
    return np.frombuffer(payload[:need], dtype=np.uint8).reshape(count, rows, cols)


def read_idx_labels(path) -> np.ndarray:
    with open(path, "rb") as f:
        (count,) = _read_header(f, path, LABEL_MAGIC, 1)
        payload = f.read()
    if len(payload) < count:
        raise IDXFormatError(f"{path}: truncated payload ({len(payload)} of {count} bytes)")
    return np.frombuffer(payload[:count], dtype=np.uint8)


def write_idx_images(path, images: np.ndarray) -> None:
    images = np.asarray(images, dtype=np.uint8)
    with open(path, "wb") as f:
        f.write(struct.pack(">iiii", IMAGE_MAGIC, *images.shape))
        f.write(images.tobytes())


def write_idx_labels(path, labels: np.ndarray) -> None:
    labels = np.asarray(labels, dtype=np.uint8)
    with open(path, "wb") as f:
        f.write(struct.pack(">ii", LABEL_MAGIC, labels.shape[0]))
        f.write(labels.tobytes())


def from_idx(images_path, labels_path, count: int | None = None, label_scale: float = 1.0 / 9.0) -> Dataset:
    images = read_idx_images(images_path)
    labels = read_idx_labels(labels_path)
    if images.shape[0] != labels.shape[0]:
        raise IDXFormatError(f"image count {images.shape[0]} != label count {labels.shape[0]}")
    if count is not None:
        images, labels = images[:count], labels[:count]
    flat = images.reshape(images.shape[0], -1).astype(np.float64) / 255.0
    X = np.hstack([flat, np.ones((flat.shape[0], 1))])
    y = labels.astype(np.float64) * label_scale
    return Dataset(X, y, name=f"idx:{Path(images_path).name}")


def to_csv(ds: Dataset, path) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow([f"x{j + 1}" for j in range(ds.d)] + ["y"])
        for row, t in zip(ds.X, ds.y):
            w.writerow([repr(float(v)) for v in row] + [repr(float(t))])


def from_csv(path) -> Dataset:
    with open(path, newline="") as f:
        r = csv.reader(f)
        header = next(r)
        if not header or header[-1].strip() != "y":
            raise ValueError(f"{path}: last column must be 'y'")
        rows = [[float(v) for v in line] for line in r if line]
    arr = np.array(rows, dtype=np.float64).reshape(len(rows), len(header))
    return Dataset(arr[:, :-1], arr[:, -1], name=f"csv:{Path(path).name}")


def load(spec: str) -> Dataset:
    """Resolve a dataset reference: builtin:fig2, a CSV path, or idx:IMAGES,LABELS[,COUNT]."""
    if spec in ("builtin:fig2", "builtin", "fig2", "default"):
        return default_dataset()
    if spec.startswith("idx:"):
        parts = spec[4:].split(",")
        if len(parts) not in (2, 3):
            raise ValueError("idx dataset spec is idx:IMAGES,LABELS[,COUNT]")
        count = int(parts[2]) if len(parts) == 3 else None
        return from_idx(parts[0], parts[1], count)
    return from_csv(spec)
