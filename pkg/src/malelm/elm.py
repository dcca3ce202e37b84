"""Extreme Learning Machine: random hidden layer, least-squares output layer.

Hidden pre-activations mix an affine "MLP" map ``Wx + B`` with a Gaussian
radial-basis map through ``alpha``::

    C(x) = alpha * M(x) + (1 - alpha) * R(x)

``alpha = 1`` is the plain ELM and never touches RBF parameters. Output
weights are the minimum-norm least-squares solution of ``H beta = Y``.
"""
from __future__ import annotations

import io
import json
import os
import struct
import tempfile
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Union

import numpy as np
from scipy.spatial.distance import cdist

ACTIVATIONS = ("tanh", "relu", "softlim", "hardlim", "multiquadric")
DEFAULT_RIDGE = 1e-8

MAGIC = b"ELM1"
FORMAT_VERSION = 1

FanIn = Union[str, int]


class ModelFormatError(ValueError):
    """A model file is truncated, corrupt or of an unknown version."""


@dataclass(frozen=True)
class ElmConfig:
    hidden_neurons: int = 1024
    activation: str = "relu"
    alpha: float = 1.0
    fan_in: FanIn = "full"
    rbf_width_scale: float = 1.0
    seed: int = 0
    ridge: float = 0.0

    def __post_init__(self):
        if int(self.hidden_neurons) < 1:
            raise ValueError("hidden_neurons must be >= 1")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"activation must be one of {ACTIVATIONS}, got {self.activation!r}")
        if not 0.0 <= float(self.alpha) <= 1.0:
            raise ValueError(f"alpha must lie in [0, 1], got {self.alpha}")
        if self.fan_in != "full":
            if isinstance(self.fan_in, bool) or not isinstance(self.fan_in, (int, np.integer)):
                raise ValueError(f"fan_in must be 'full' or a positive integer, got {self.fan_in!r}")
            if self.fan_in < 1:
                raise ValueError("fan_in must be >= 1")
            object.__setattr__(self, "fan_in", int(self.fan_in))
        if not self.rbf_width_scale > 0:
            raise ValueError("rbf_width_scale must be positive")
        if self.ridge < 0:
            raise ValueError("ridge must be non-negative")
        object.__setattr__(self, "hidden_neurons", int(self.hidden_neurons))
        object.__setattr__(self, "alpha", float(self.alpha))

    @property
    def uses_rbf(self) -> bool:
        return self.alpha < 1.0

    def replace(self, **changes) -> "ElmConfig":
        return ElmConfig(**{**asdict(self), **changes})


@dataclass(frozen=True, eq=False)
class HiddenLayer:
    """Frozen random hidden layer.

    ``W`` is (neurons, inputs), ``B`` has one bias per neuron and ``mask`` marks
    which inputs each neuron reads. ``centers``/``widths`` exist only when the
    layer was built for ``alpha < 1``.
    """

    W: np.ndarray
    B: np.ndarray
    mask: np.ndarray
    centers: np.ndarray | None = None
    widths: np.ndarray | None = None
    _weights: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        W = np.asarray(self.W, dtype=np.float64)
        B = np.asarray(self.B, dtype=np.float64).reshape(-1)
        mask = np.asarray(self.mask, dtype=bool)
        if W.ndim != 2 or W.shape != mask.shape or B.shape != (W.shape[0],):
            raise ValueError(f"inconsistent layer shapes W{W.shape} B{B.shape} mask{mask.shape}")
        if (self.centers is None) != (self.widths is None):
            raise ValueError("centers and widths must be given together")
        arrays = {"W": W, "B": B, "mask": mask}
        if self.centers is not None:
            centers = np.asarray(self.centers, dtype=np.float64)
            widths = np.asarray(self.widths, dtype=np.float64).reshape(-1)
            if centers.shape != W.shape or widths.shape != B.shape:
                raise ValueError("RBF centers/widths do not match the layer shape")
            if np.any(widths <= 0):
                raise ValueError("RBF widths must be positive")
            arrays.update(centers=centers, widths=widths)
        for name, arr in arrays.items():
            arr = arr.copy()
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        weights = np.where(self.mask, self.W, 0.0)
        weights.setflags(write=False)
        object.__setattr__(self, "_weights", weights)

    @property
    def neurons(self) -> int:
        return self.W.shape[0]

    @property
    def input_dim(self) -> int:
        return self.W.shape[1]

    @property
    def has_rbf(self) -> bool:
        return self.centers is not None

    @property
    def is_sparse(self) -> bool:
        return not bool(self.mask.all())

    @property
    def effective_weights(self) -> np.ndarray:
        """``W`` with masked-out connections zeroed."""
        return self._weights

    def fan_in_indices(self) -> np.ndarray:
        """(neurons, k) input indices read by each neuron; rows must share k."""
        k = self.mask.sum(axis=1)
        if np.any(k != k[0]):
            raise ValueError("neurons have unequal fan-in")
        return np.nonzero(self.mask)[1].reshape(self.neurons, int(k[0]))


def init_hidden(config: ElmConfig, input_dim: int) -> HiddenLayer:
    """Draw a hidden layer from ``config.seed``.

    W and B are standard normal. With an integer ``fan_in`` each neuron reads
    that many distinct inputs chosen uniformly. RBF centers are uniform on the
    unit hypercube with width ``rbf_width_scale * sqrt(k) / 2`` where ``k`` is
    the number of inputs a neuron reads.
    """
    if input_dim < 1:
        raise ValueError("input_dim must be >= 1")
    neurons = config.hidden_neurons
    k = input_dim if config.fan_in == "full" else config.fan_in
    if k > input_dim:
        raise ValueError(f"fan_in {k} exceeds input dimension {input_dim}")

    rng = np.random.default_rng(config.seed)
    W = rng.standard_normal((neurons, input_dim))
    B = rng.standard_normal(neurons)
    if k == input_dim:
        mask = np.ones((neurons, input_dim), dtype=bool)
    else:
        # k smallest of i.i.d. uniform keys = uniform k-subset per row
        keys = rng.random((neurons, input_dim))
        chosen = np.argpartition(keys, k - 1, axis=1)[:, :k]
        mask = np.zeros((neurons, input_dim), dtype=bool)
        np.put_along_axis(mask, chosen, True, axis=1)

    centers = widths = None
    if config.uses_rbf:
        centers = rng.random((neurons, input_dim))
        widths = np.full(neurons, config.rbf_width_scale * np.sqrt(k) / 2.0)
    return HiddenLayer(W, B, mask, centers, widths)


def _as_batch(layer: HiddenLayer, X) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X[None, :]
    if X.ndim != 2 or X.shape[1] != layer.input_dim:
        raise ValueError(f"expected vectors of length {layer.input_dim}, got shape {X.shape}")
    return X


def mlp_kernel(layer: HiddenLayer, X) -> np.ndarray:
    """``(W * mask) x + B`` for each row of ``X``."""
    X = _as_batch(layer, X)
    return X @ layer.effective_weights.T + layer.B


def rbf_kernel(layer: HiddenLayer, X) -> np.ndarray:
    """Gaussian response ``exp(-|x - c|^2 / (2 w^2))`` of each unit.

    Distances only run over the inputs a unit is connected to.
    """
    if not layer.has_rbf:
        raise ValueError("RBF parameters absent: layer was built with alpha = 1")
    X = _as_batch(layer, X)
    if layer.is_sparse:
        idx = layer.fan_in_indices()
        c = np.take_along_axis(layer.centers, idx, axis=1)
        d2 = np.empty((X.shape[0], layer.neurons))
        for i in range(X.shape[0]):
            diff = X[i, idx] - c
            d2[i] = np.einsum("ij,ij->i", diff, diff)
    else:
        d2 = cdist(X, layer.centers, "sqeuclidean")
    return np.exp(-d2 / (2.0 * layer.widths**2))


def input_activation(layer: HiddenLayer, X, alpha: float) -> np.ndarray:
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"alpha must lie in [0, 1], got {alpha}")
    if alpha == 1.0:
        return mlp_kernel(layer, X)
    if alpha == 0.0:
        return rbf_kernel(layer, X)
    return alpha * mlp_kernel(layer, X) + (1.0 - alpha) * rbf_kernel(layer, X)


def apply_activation(name: str, Z) -> np.ndarray:
    Z = np.asarray(Z, dtype=np.float64)
    if name == "tanh":
        return np.tanh(Z)
    if name == "relu":
        return np.maximum(Z, 0.0)
    if name == "softlim":
        return np.clip(Z, 0.0, 1.0)
    if name == "hardlim":
        return (Z > 0).astype(np.float64)
    if name == "multiquadric":
        return np.sqrt(1.0 + Z * Z)
    raise ValueError(f"unknown activation {name!r}; expected one of {ACTIVATIONS}")


def hidden_output(layer: HiddenLayer, X, config: ElmConfig) -> np.ndarray:
    """H = g(C(X))."""
    return apply_activation(config.activation, input_activation(layer, X, config.alpha))


def least_squares_solve(H, Y, ridge: float = 0.0) -> np.ndarray:
    """Minimum-norm minimizer of ``||H beta - Y||_F``.

    Uses an SVD-based LAPACK driver, so rank-deficient ``H`` is fine. A
    positive ``ridge`` adds ``ridge * I`` to the normal matrix by augmenting
    the system with ``sqrt(ridge) * I`` rows.
    """
    H = np.asarray(H, dtype=np.float64)
    Y = np.asarray(Y, dtype=np.float64)
    if H.ndim != 2 or H.shape[0] < 1 or H.shape[1] < 1:
        raise ValueError(f"H must be a non-empty matrix, got shape {H.shape}")
    if Y.shape[0] != H.shape[0]:
        raise ValueError(f"H has {H.shape[0]} rows but Y has {Y.shape[0]}")
    if ridge > 0:
        n = H.shape[1]
        H = np.vstack([H, np.sqrt(ridge) * np.eye(n)])
        Y = np.concatenate([Y, np.zeros((n,) + Y.shape[1:])])
    beta, *_ = np.linalg.lstsq(H, Y, rcond=None)
    return beta


@dataclass(frozen=True, eq=False)
class ElmModel:
    config: ElmConfig
    hidden: HiddenLayer
    beta: np.ndarray
    class_names: tuple[str, ...]
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        beta = np.array(self.beta, dtype=np.float64, copy=True)
        if beta.shape != (self.hidden.neurons, len(self.class_names)):
            raise ValueError(
                f"beta shape {beta.shape} does not match "
                f"({self.hidden.neurons} neurons, {len(self.class_names)} classes)"
            )
        beta.setflags(write=False)
        object.__setattr__(self, "beta", beta)
        object.__setattr__(self, "class_names", tuple(self.class_names))

    @property
    def input_dim(self) -> int:
        return self.hidden.input_dim

    @property
    def n_classes(self) -> int:
        return len(self.class_names)

    def scores(self, X) -> np.ndarray:
        return predict_scores(self, X)

    def predict(self, X) -> np.ndarray:
        return predict(self, X)


def one_hot(y, n_classes: int) -> np.ndarray:
    y = np.asarray(y, dtype=np.intp)
    Y = np.zeros((y.size, n_classes))
    Y[np.arange(y.size), y] = 1.0
    return Y


def train(trainset, config: ElmConfig, weights=None, hidden: HiddenLayer | None = None, extra=None) -> ElmModel:
    """Fit the output weights on ``trainset`` (a :class:`~malelm.dataset.Dataset`).

    ``weights`` holds one positive factor per class; sample rows of H and the
    one-hot targets are scaled by their class factor before solving. Passing
    ``hidden`` reuses a fixed layer instead of drawing one from the seed.
    """
    if len(trainset) == 0:
        raise ValueError("cannot train on an empty dataset")
    n_classes = len(trainset.catalog)
    if hidden is None:
        hidden = init_hidden(config, trainset.feature_dim)
    elif hidden.input_dim != trainset.feature_dim:
        raise ValueError(
            f"hidden layer expects {hidden.input_dim} inputs, dataset has {trainset.feature_dim}"
        )
    H = hidden_output(hidden, trainset.X, config)
    Y = one_hot(trainset.y, n_classes)
    if weights is not None:
        weights = np.asarray(weights, dtype=np.float64).reshape(-1)
        if weights.shape != (n_classes,):
            raise ValueError(f"expected {n_classes} class weights, got {weights.shape[0]}")
        if np.any(weights <= 0):
            raise ValueError("class weights must be positive")
        c = weights[trainset.y][:, None]
        H = c * H
        Y = c * Y
    beta = least_squares_solve(H, Y, ridge=config.ridge)
    return ElmModel(config, hidden, beta, trainset.catalog.names, dict(extra or {}))


def predict_scores(model: ElmModel, X) -> np.ndarray:
    """g(C(x)) beta for each row of ``X``; returns (samples, classes)."""
    return hidden_output(model.hidden, X, model.config) @ model.beta


def predict(model: ElmModel, X) -> np.ndarray:
    """Argmax class index; ties go to the lowest index."""
    return np.argmax(predict_scores(model, X), axis=1)


# -- serialization ---------------------------------------------------------
#
# Layout (all integers and floats little-endian):
#   b"ELM1" | u32 header length | JSON header (utf-8)
#   W (f8, neurons*inputs) | B (f8, neurons) | mask (packed bits, row-major)
#   beta (f8, neurons*classes) | [centers (f8, neurons*inputs) | widths (f8, neurons)]


def _header(model: ElmModel) -> dict:
    return {
        "format_version": FORMAT_VERSION,
        "config": asdict(model.config),
        "class_names": list(model.class_names),
        "input_dim": model.input_dim,
        "hidden_neurons": model.hidden.neurons,
        "n_classes": model.n_classes,
        "has_rbf": model.hidden.has_rbf,
        "extra": model.extra,
    }


def dumps(model: ElmModel) -> bytes:
    header = json.dumps(_header(model), sort_keys=True).encode("utf-8")
    h = model.hidden
    parts = [MAGIC, struct.pack("<I", len(header)), header]
    parts.append(h.W.astype("<f8").tobytes())
    parts.append(h.B.astype("<f8").tobytes())
    parts.append(np.packbits(h.mask.reshape(-1)).tobytes())
    parts.append(model.beta.astype("<f8").tobytes())
    if h.has_rbf:
        parts.append(h.centers.astype("<f8").tobytes())
        parts.append(h.widths.astype("<f8").tobytes())
    return b"".join(parts)


def read_header(data: bytes) -> tuple[dict, int]:
    """Parse the JSON header; returns it with the offset of the first array."""
    if len(data) < 8:
        raise ModelFormatError("model stream truncated before header")
    if data[:4] != MAGIC:
        raise ModelFormatError(f"bad magic {data[:4]!r}; not an ELM model file")
    (hlen,) = struct.unpack("<I", data[4:8])
    if len(data) < 8 + hlen:
        raise ModelFormatError("model stream truncated inside header")
    try:
        header = json.loads(data[8 : 8 + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ModelFormatError(f"corrupt model header: {exc}") from None
    version = header.get("format_version")
    if version != FORMAT_VERSION:
        raise ModelFormatError(f"unsupported model format version {version} (expected {FORMAT_VERSION})")
    return header, 8 + hlen


def loads(data: bytes) -> ElmModel:
    data = bytes(data)
    header, offset = read_header(data)
    try:
        neurons = int(header["hidden_neurons"])
        n = int(header["input_dim"])
        m = int(header["n_classes"])
        config = ElmConfig(**header["config"])
        class_names = tuple(header["class_names"])
        has_rbf = bool(header["has_rbf"])
    except (KeyError, TypeError, ValueError) as exc:
        raise ModelFormatError(f"incomplete model header: {exc}") from None

    buf = io.BytesIO(data[offset:])

    def take(nbytes, what):
        chunk = buf.read(nbytes)
        if len(chunk) != nbytes:
            raise ModelFormatError(f"model stream truncated in {what} block")
        return chunk

    def floats(count, what):
        return np.frombuffer(take(8 * count, what), dtype="<f8").astype(np.float64)

    W = floats(neurons * n, "W").reshape(neurons, n)
    B = floats(neurons, "B")
    mask_bytes = take(-(-neurons * n // 8), "mask")
    mask = np.unpackbits(np.frombuffer(mask_bytes, dtype=np.uint8), count=neurons * n).astype(bool)
    beta = floats(neurons * m, "beta").reshape(neurons, m)
    centers = widths = None
    if has_rbf:
        centers = floats(neurons * n, "centers").reshape(neurons, n)
        widths = floats(neurons, "widths")
    if buf.read(1):
        raise ModelFormatError("trailing bytes after model data")
    hidden = HiddenLayer(W, B, mask.reshape(neurons, n), centers, widths)
    return ElmModel(config, hidden, beta, class_names, header.get("extra") or {})


def atomic_write(path, data: bytes) -> None:
    """Write via a temp file in the same directory, then rename over ``path``."""
    path = Path(path)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent or ".")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def save(model: ElmModel, path) -> None:
    atomic_write(path, dumps(model))


def load(path) -> ElmModel:
    return loads(Path(path).read_bytes())
