"""Class-per-directory image corpora, stratified splits and class weights."""
from __future__ import annotations

import csv
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import imaging

log = logging.getLogger(__name__)

# Per-family sample counts of the public Malimg distribution.
MALIMG_COUNTS = {
    "Adialer.C": 125,
    "Agent.FYI": 116,
    "Allaple.A": 2949,
    "Allaple.L": 1591,
    "Alueron.gen!J": 198,
    "Autorun.K": 106,
    "C2Lop.P": 146,
    "C2Lop.gen!G": 200,
    "Dialplatform.B": 177,
    "Dontovo.A": 162,
    "Fakerean": 381,
    "Instantaccess": 431,
    "Lolyda.AA1": 213,
    "Lolyda.AA2": 184,
    "Lolyda.AA3": 123,
    "Lolyda.AT": 159,
    "Malex.gen!J": 136,
    "Obfuscator.AD": 142,
    "Rbot!gen": 158,
    "Skintrim.N": 80,
    "Swizzor.gen!E": 128,
    "Swizzor.gen!I": 132,
    "VB.AT": 408,
    "Wintrim.BX": 97,
    "Yuner.A": 800,
}
MALIMG_TOTAL = 9342


@dataclass(frozen=True)
class ClassCatalog:
    names: tuple[str, ...]
    counts: tuple[int, ...]

    def __post_init__(self):
        names = tuple(self.names)
        counts = tuple(int(c) for c in self.counts)
        if len(names) != len(counts):
            raise ValueError("names and counts differ in length")
        if len(set(names)) != len(names):
            raise ValueError("class names must be unique")
        if list(names) != sorted(names):
            raise ValueError("class names must be sorted")
        object.__setattr__(self, "names", names)
        object.__setattr__(self, "counts", counts)

    @property
    def total(self) -> int:
        return sum(self.counts)

    def __len__(self):
        return len(self.names)

    def index(self, name: str) -> int:
        return self.names.index(name)

    @classmethod
    def from_labels(cls, labels, names=None) -> "ClassCatalog":
        """Build a catalog by counting string labels."""
        labels = list(labels)
        names = sorted(set(labels) if names is None else names)
        counts = [labels.count(n) for n in names]
        return cls(tuple(names), tuple(counts))


@dataclass(frozen=True)
class Featurization:
    """How an image becomes a feature vector.

    ``mode="2d"`` resizes to ``width`` x ``height`` and flattens;
    ``mode="1d"`` reads the pixel stream row-major and block averages it to
    ``length`` elements.
    """

    mode: str = "2d"
    width: int = 64
    height: int = 64
    length: int = 1024
    resize_method: str = "bilinear"

    def __post_init__(self):
        if self.mode not in ("2d", "1d"):
            raise ValueError(f"featurization mode must be '2d' or '1d', got {self.mode!r}")
        if self.width < 1 or self.height < 1 or self.length < 1:
            raise ValueError("featurization sizes must be positive")
        if self.resize_method not in imaging.RESIZE_METHODS:
            raise ValueError(f"unknown resize method {self.resize_method!r}")

    @property
    def dim(self) -> int:
        return self.width * self.height if self.mode == "2d" else self.length

    def apply(self, image: imaging.GrayImage) -> np.ndarray:
        if self.mode == "2d":
            return imaging.flatten_2d(imaging.resize(image, self.width, self.height, self.resize_method))
        return imaging.resample_1d(imaging.flatten_2d(image), self.length)

    def to_dict(self) -> dict:
        return {
            "mode": self.mode,
            "width": self.width,
            "height": self.height,
            "length": self.length,
            "resize_method": self.resize_method,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Featurization":
        return cls(**d)


@dataclass(frozen=True)
class Dataset:
    """Feature matrix ``X`` (one row per sample), integer labels ``y`` and catalog."""

    X: np.ndarray
    y: np.ndarray
    catalog: ClassCatalog
    paths: tuple = field(default=(), compare=False)

    def __post_init__(self):
        X = np.array(self.X, dtype=np.float64, copy=True)
        y = np.array(self.y, dtype=np.int64, copy=True).reshape(-1)
        if X.ndim != 2:
            raise ValueError("X must be 2-D")
        if X.shape[0] != y.shape[0]:
            raise ValueError(f"{X.shape[0]} feature rows but {y.shape[0]} labels")
        if y.size and (y.min() < 0 or y.max() >= len(self.catalog)):
            raise ValueError("label index outside the catalog")
        X.setflags(write=False)
        y.setflags(write=False)
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "paths", tuple(self.paths))

    def __len__(self):
        return self.X.shape[0]

    @property
    def feature_dim(self) -> int:
        return self.X.shape[1]

    @property
    def class_names(self) -> tuple[str, ...]:
        return self.catalog.names

    def class_counts(self) -> np.ndarray:
        return np.bincount(self.y, minlength=len(self.catalog))

    def subset(self, idx) -> "Dataset":
        idx = np.asarray(idx, dtype=np.intp)
        paths = tuple(self.paths[i] for i in idx) if self.paths else ()
        return Dataset(self.X[idx], self.y[idx], self.catalog, paths)


def _load_one(path: Path, featurization: Featurization):
    try:
        return featurization.apply(imaging.read_image(path))
    except Exception as exc:  # corrupt or non-image file
        log.warning("skipping unreadable image %s: %s", path, exc)
        return None


def load_corpus(root, featurization: Featurization | None = None, jobs: int = 1) -> Dataset:
    """Load ``<root>/<class>/<image>`` into a :class:`Dataset`.

    Unreadable files are skipped with a warning. The catalog counts the
    samples actually loaded.
    """
    featurization = featurization or Featurization()
    root = Path(root)
    if not root.is_dir():
        raise FileNotFoundError(f"corpus root not found: {root}")
    class_dirs = sorted((p for p in root.iterdir() if p.is_dir()), key=lambda p: p.name)
    if not class_dirs:
        raise ValueError(f"no class directories under {root}")

    jobs_list = []
    for label, d in enumerate(class_dirs):
        files = sorted(p for p in d.iterdir() if p.is_file())
        if not files:
            raise ValueError(f"class directory {d.name!r} is empty")
        jobs_list.extend((label, f) for f in files)

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            vectors = list(pool.map(lambda item: _load_one(item[1], featurization), jobs_list))
    else:
        vectors = [_load_one(f, featurization) for _, f in jobs_list]

    rows, labels, paths = [], [], []
    for (label, f), v in zip(jobs_list, vectors):
        if v is not None:
            rows.append(v)
            labels.append(label)
            paths.append(str(f))
    counts = np.bincount(np.asarray(labels, dtype=np.int64), minlength=len(class_dirs))
    for d, c in zip(class_dirs, counts):
        if c == 0:
            raise ValueError(f"class directory {d.name!r} has no readable images")

    catalog = ClassCatalog(tuple(d.name for d in class_dirs), tuple(int(c) for c in counts))
    _check_malimg(catalog)
    X = np.vstack(rows) if rows else np.empty((0, featurization.dim))
    return Dataset(X, np.asarray(labels), catalog, tuple(paths))


def _check_malimg(catalog: ClassCatalog) -> None:
    if set(catalog.names) == set(MALIMG_COUNTS) and catalog.total != MALIMG_TOTAL:
        log.warning(
            "corpus looks like Malimg but holds %d samples (expected %d)", catalog.total, MALIMG_TOTAL
        )


def stratified_split(dataset: Dataset, test_fraction: float = 0.2, seed: int = 0) -> tuple[Dataset, Dataset]:
    """Per-class shuffled split into ``(train, test)``.

    Each class sends ``round(test_fraction * S_j)`` samples to the test set,
    at least one and at most ``S_j - 1``.
    """
    if not 0.0 < test_fraction < 1.0:
        raise ValueError("test_fraction must lie in (0, 1)")
    rng = np.random.default_rng(seed)
    train_idx, test_idx = [], []
    for j, name in enumerate(dataset.catalog.names):
        members = np.flatnonzero(dataset.y == j)
        if members.size == 0:
            continue
        if members.size < 2:
            raise ValueError(f"class {name!r} has fewer than 2 samples; cannot split")
        n_test = int(math.floor(test_fraction * members.size + 0.5))
        n_test = min(max(n_test, 1), members.size - 1)
        shuffled = rng.permutation(members)
        test_idx.append(shuffled[:n_test])
        train_idx.append(shuffled[n_test:])
    train = np.sort(np.concatenate(train_idx))
    test = np.sort(np.concatenate(test_idx))
    return dataset.subset(train), dataset.subset(test)


def class_weights(catalog: ClassCatalog) -> np.ndarray:
    """sqrt(S / S_j) for each class j, where S is the catalog total."""
    counts = np.asarray(catalog.counts, dtype=np.float64)
    if np.any(counts <= 0):
        bad = [n for n, c in zip(catalog.names, catalog.counts) if c <= 0]
        raise ValueError(f"class weights need positive counts; empty classes: {bad}")
    return np.sqrt(counts.sum() / counts)


def write_manifest(catalog: ClassCatalog, path) -> None:
    """CSV with columns class,count,weight."""
    weights = class_weights(catalog)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["class", "count", "weight"])
        for name, count, weight in zip(catalog.names, catalog.counts, weights):
            w.writerow([name, count, f"{weight:.6f}"])
