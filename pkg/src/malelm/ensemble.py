"""Majority-vote committees of independently seeded ELMs."""
from __future__ import annotations

import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import elm

MASK64 = (1 << 64) - 1
ENSEMBLE_MAGIC = b"ELME"
ENSEMBLE_VERSION = 1


def splitmix64(x: int) -> int:
    """One SplitMix64 output step for state ``x``."""
    z = (x + 0x9E3779B97F4A7C15) & MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


def member_seed(base_seed: int, index: int) -> int:
    """Seed of member ``index``: splitmix64(splitmix64(base) ^ index)."""
    return splitmix64(splitmix64(int(base_seed) & MASK64) ^ int(index))


@dataclass(frozen=True, eq=False)
class Ensemble:
    members: tuple
    base_seed: int = 0

    def __post_init__(self):
        members = tuple(self.members)
        if not members:
            raise ValueError("an ensemble needs at least one member")
        first = members[0]
        for m in members[1:]:
            if m.class_names != first.class_names:
                raise ValueError("ensemble members disagree on class names")
            if m.input_dim != first.input_dim:
                raise ValueError("ensemble members disagree on input dimension")
        object.__setattr__(self, "members", members)

    def __len__(self):
        return len(self.members)

    @property
    def class_names(self) -> tuple[str, ...]:
        return self.members[0].class_names

    @property
    def input_dim(self) -> int:
        return self.members[0].input_dim

    @property
    def extra(self) -> dict:
        return self.members[0].extra


def train_ensemble(trainset, config: elm.ElmConfig, count: int = 50, base_seed: int = 0,
                   weights=None, jobs: int = 1, extra=None) -> Ensemble:
    """Train ``count`` members, member ``i`` seeded with ``member_seed(base_seed, i)``."""
    if count < 1:
        raise ValueError("count must be >= 1")
    configs = [config.replace(seed=member_seed(base_seed, i)) for i in range(count)]

    def fit(cfg):
        return elm.train(trainset, cfg, weights=weights, extra=extra)

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            members = list(pool.map(fit, configs))
    else:
        members = [fit(cfg) for cfg in configs]
    return Ensemble(tuple(members), base_seed)


def member_predictions(ensemble: Ensemble, X) -> np.ndarray:
    """(members, samples) matrix of each member's argmax class."""
    return np.vstack([elm.predict(m, X) for m in ensemble.members])


def tally(predictions, n_classes: int) -> np.ndarray:
    """(samples, classes) vote counts from a (members, samples) prediction matrix."""
    predictions = np.asarray(predictions, dtype=np.intp)
    counts = np.zeros((predictions.shape[1], n_classes), dtype=np.int64)
    for row in predictions:
        counts[np.arange(row.size), row] += 1
    return counts


def resolve_votes(predictions, n_classes: int, tie_seed: int = 0) -> np.ndarray:
    """Majority label per sample.

    Ties draw uniformly among the tied labels (in ascending index order)
    from a generator seeded with ``tie_seed``; the generator is only advanced
    on ties, sample by sample.
    """
    counts = tally(predictions, n_classes)
    rng = np.random.default_rng(tie_seed)
    top = counts.max(axis=1)
    winners = np.argmax(counts, axis=1)
    for i in np.flatnonzero((counts == top[:, None]).sum(axis=1) > 1):
        tied = np.flatnonzero(counts[i] == top[i])
        winners[i] = tied[rng.integers(tied.size)]
    return winners


def vote(ensemble: Ensemble, X, tie_seed: int = 0):
    """Voted class index for each row of ``X`` (a scalar for a single vector)."""
    single = np.ndim(X) == 1
    out = resolve_votes(member_predictions(ensemble, X), len(ensemble.class_names), tie_seed)
    return int(out[0]) if single else out


@dataclass(frozen=True)
class MemberEvaluation:
    member_accuracies: np.ndarray
    ensemble_accuracy: float
    predictions: np.ndarray

    @property
    def mean(self) -> float:
        return float(np.mean(self.member_accuracies))

    @property
    def std(self) -> float:
        return float(np.std(self.member_accuracies))


def evaluate_members(ensemble: Ensemble, testset, tie_seed: int = 0) -> MemberEvaluation:
    """Accuracy of every member and of the voted ensemble on ``testset``."""
    if len(testset) == 0:
        raise ValueError("cannot evaluate on an empty dataset")
    preds = member_predictions(ensemble, testset.X)
    member_acc = (preds == testset.y[None, :]).mean(axis=1)
    voted = resolve_votes(preds, len(ensemble.class_names), tie_seed)
    return MemberEvaluation(member_acc, float(np.mean(voted == testset.y)), voted)


# -- serialization ---------------------------------------------------------
#
#   b"ELME" | u32 version | u32 member count | u64 base seed
#   count x (u64 offset, u64 length)  -- offsets relative to the end of the table
#   concatenated member model streams (see elm.dumps)


def dumps(ensemble: Ensemble) -> bytes:
    blobs = [elm.dumps(m) for m in ensemble.members]
    table, offset = [], 0
    for b in blobs:
        table.append(struct.pack("<QQ", offset, len(b)))
        offset += len(b)
    head = ENSEMBLE_MAGIC + struct.pack("<IIQ", ENSEMBLE_VERSION, len(blobs), int(ensemble.base_seed) & MASK64)
    return head + b"".join(table) + b"".join(blobs)


def loads(data: bytes) -> Ensemble:
    data = bytes(data)
    if len(data) < 20:
        raise elm.ModelFormatError("ensemble stream truncated before header")
    if data[:4] != ENSEMBLE_MAGIC:
        raise elm.ModelFormatError(f"bad magic {data[:4]!r}; not an ensemble file")
    version, count, base_seed = struct.unpack("<IIQ", data[4:20])
    if version != ENSEMBLE_VERSION:
        raise elm.ModelFormatError(f"unsupported ensemble format version {version}")
    table_end = 20 + 16 * count
    if len(data) < table_end:
        raise elm.ModelFormatError("ensemble stream truncated inside index table")
    members = []
    for i in range(count):
        offset, length = struct.unpack("<QQ", data[20 + 16 * i : 36 + 16 * i])
        start = table_end + offset
        if start + length > len(data):
            raise elm.ModelFormatError(f"ensemble stream truncated in member {i}")
        members.append(elm.loads(data[start : start + length]))
    return Ensemble(tuple(members), base_seed)


def save(ensemble: Ensemble, path) -> None:
    elm.atomic_write(path, dumps(ensemble))


def load(path) -> Ensemble:
    return loads(Path(path).read_bytes())


def load_any(path):
    """Load either a single model or an ensemble, by magic."""
    data = Path(path).read_bytes()
    if data[:4] == ENSEMBLE_MAGIC:
        return loads(data)
    return elm.loads(data)
