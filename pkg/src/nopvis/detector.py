"""Opcode-sequence convolutional malware detector, built on bare numpy.

Architecture: opcode ids -> embedding rows -> 1D convolution (valid
padding) -> ReLU -> max-over-time pooling -> dense ReLU layer -> dense
logits -> softmax over (benign, malware) = classes (0, 1). One-hot input
times a projection matrix is realized as an embedding-row lookup, which
is the same linear map.

Everything is deterministic given the config seed, and the analytic
gradients are exact for every parameter group (max pooling contributes
its subgradient at the argmax), so they can be checked against central
finite differences.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .opcodes import default_table
from .smali import OpcodeSequence
from .validation import InputError, as_id_matrix, check_fitted, check_labels

CHECKPOINT_VERSION = 1


@dataclass(frozen=True, slots=True)
class DetectorConfig:
    """Hyperparameters; desk-scale defaults, production-scale max_len."""

    vocabulary_size: int
    embedding_dim: int = 8
    conv_filters: int = 32
    kernel_width: int = 8
    hidden_dim: int = 16
    max_len: int = 8192
    seed: int = 0

    def __post_init__(self):
        for name in ("vocabulary_size", "embedding_dim", "conv_filters",
                     "kernel_width", "hidden_dim", "max_len"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if self.kernel_width > self.max_len:
            raise ValueError("kernel_width must not exceed max_len")


@dataclass(frozen=True, slots=True)
class Scores:
    p_benign: float
    p_malware: float

    def __post_init__(self):
        if self.p_benign < 0 or self.p_malware < 0:
            raise ValueError("probabilities must be non-negative")
        if abs(self.p_benign + self.p_malware - 1.0) > 1e-6:
            raise ValueError("probabilities must sum to 1")


PARAM_GROUPS = ("embedding", "conv_w", "conv_b", "w1", "b1", "w2", "b2")


@dataclass(frozen=True, slots=True)
class DetectorModel:
    """All trainable parameters plus the config they were built for."""

    config: DetectorConfig
    embedding: np.ndarray = field(repr=False)  # (V, k)
    conv_w: np.ndarray = field(repr=False)     # (m, w, k)
    conv_b: np.ndarray = field(repr=False)     # (m,)
    w1: np.ndarray = field(repr=False)         # (h, m)
    b1: np.ndarray = field(repr=False)         # (h,)
    w2: np.ndarray = field(repr=False)         # (2, h)
    b2: np.ndarray = field(repr=False)         # (2,)

    def arrays(self) -> dict[str, np.ndarray]:
        return {name: getattr(self, name) for name in PARAM_GROUPS}

    def with_arrays(self, arrays: dict[str, np.ndarray]) -> "DetectorModel":
        return replace(self, **arrays)


def init_model(config: DetectorConfig, zero: bool = False) -> DetectorModel:
    """Seeded bounded initialization; ``zero`` gives the all-zeros model."""
    V, k = config.vocabulary_size, config.embedding_dim
    m, w, h = config.conv_filters, config.kernel_width, config.hidden_dim

    def make(shape, limit):
        if zero:
            return np.zeros(shape)
        return rng.uniform(-limit, limit, size=shape)

    rng = np.random.default_rng(config.seed)
    return DetectorModel(
        config=config,
        embedding=make((V, k), 0.5),
        conv_w=make((m, w, k), np.sqrt(6.0 / (w * k + m))),
        conv_b=make((m,), 0.0 if zero else 0.01),
        w1=make((h, m), np.sqrt(6.0 / (m + h))),
        b1=make((h,), 0.0 if zero else 0.01),
        w2=make((2, h), np.sqrt(6.0 / (h + 2))),
        b2=np.zeros(2),
    )


def _check_ids(model: DetectorModel, ids: np.ndarray) -> None:
    if ids.min() < 0 or ids.max() >= model.config.vocabulary_size:
        raise InputError(
            f"opcode id out of range [0, {model.config.vocabulary_size})"
        )


def _windows(x: np.ndarray, w: int) -> np.ndarray:
    """(L, k) -> (T, w*k) sliding windows, T = L - w + 1."""
    L, k = x.shape
    T = L - w + 1
    strides = (x.strides[0], x.strides[0], x.strides[1])
    view = np.lib.stride_tricks.as_strided(x, shape=(T, w, k), strides=strides)
    return view.reshape(T, w * k)


@dataclass(slots=True)
class _ForwardCache:
    ids: np.ndarray
    x: np.ndarray
    win: np.ndarray
    z: np.ndarray
    act: np.ndarray
    argmax: np.ndarray
    pooled: np.ndarray
    pre_hidden: np.ndarray
    hidden: np.ndarray
    logits: np.ndarray
    probs: np.ndarray


def _forward_one(model: DetectorModel, ids: np.ndarray) -> _ForwardCache:
    cfg = model.config
    x = model.embedding[ids]                       # (L, k)
    win = _windows(x, cfg.kernel_width)            # (T, w*k)
    kflat = model.conv_w.reshape(cfg.conv_filters, -1)
    z = win @ kflat.T + model.conv_b               # (T, m)
    act = np.maximum(z, 0.0)
    argmax = act.argmax(axis=0)                    # (m,)
    pooled = act[argmax, np.arange(cfg.conv_filters)]
    pre_hidden = model.w1 @ pooled + model.b1
    hidden = np.maximum(pre_hidden, 0.0)
    logits = model.w2 @ hidden + model.b2
    shifted = logits - logits.max()
    exp = np.exp(shifted)
    probs = exp / exp.sum()
    return _ForwardCache(ids, x, win, z, act, argmax, pooled,
                         pre_hidden, hidden, logits, probs)


def forward(model: DetectorModel, seq: OpcodeSequence | np.ndarray | list[int]) -> Scores:
    """Class probabilities for one sequence (padded/truncated to max_len)."""
    ids = as_id_matrix([seq], model.config.max_len)[0]
    _check_ids(model, ids)
    cache = _forward_one(model, ids)
    return Scores(p_benign=float(cache.probs[0]), p_malware=float(cache.probs[1]))


def forward_batch(model: DetectorModel, ids_matrix: np.ndarray) -> np.ndarray:
    """Probability matrix (n, 2) for already-padded id rows."""
    _check_ids(model, ids_matrix)
    return np.stack([_forward_one(model, row).probs for row in ids_matrix])


def _zero_gradients(model: DetectorModel) -> dict[str, np.ndarray]:
    return {name: np.zeros_like(arr) for name, arr in model.arrays().items()}


def loss_and_gradients(
    model: DetectorModel, batch: list[tuple], ids_matrix: np.ndarray | None = None
) -> tuple[float, dict[str, np.ndarray]]:
    """Mean cross-entropy over a batch plus exact analytic gradients.

    ``batch`` is (sequence, label) pairs; ``ids_matrix`` can supply the
    already-padded rows to skip re-padding in training loops.
    """
    if not batch:
        raise InputError("empty batch")
    cfg = model.config
    if ids_matrix is None:
        ids_matrix = as_id_matrix([seq for seq, _ in batch], cfg.max_len)
    labels = check_labels([lab for _, lab in batch], len(batch))
    _check_ids(model, ids_matrix)

    n = len(batch)
    grads = _zero_gradients(model)
    kflat = model.conv_w.reshape(cfg.conv_filters, -1)
    total_loss = 0.0
    w, k, m = cfg.kernel_width, cfg.embedding_dim, cfg.conv_filters

    for row, y in zip(ids_matrix, labels):
        c = _forward_one(model, row)
        # loss via logsumexp for stability
        lse = np.log(np.exp(c.logits - c.logits.max()).sum()) + c.logits.max()
        total_loss += lse - c.logits[y]

        dlogits = c.probs.copy()
        dlogits[y] -= 1.0
        dlogits /= n

        grads["w2"] += np.outer(dlogits, c.hidden)
        grads["b2"] += dlogits
        dhidden = model.w2.T @ dlogits
        dpre = dhidden * (c.pre_hidden > 0.0)
        grads["w1"] += np.outer(dpre, c.pooled)
        grads["b1"] += dpre
        dpooled = model.w1.T @ dpre

        # Max pooling routes each filter's gradient to its argmax window.
        dz_rows = dpooled * (c.z[c.argmax, np.arange(m)] > 0.0)
        dwin = np.zeros_like(c.win)
        for f in np.nonzero(dz_rows)[0]:
            t = c.argmax[f]
            grads["conv_w"][f] += (dz_rows[f] * c.win[t]).reshape(w, k)
            grads["conv_b"][f] += dz_rows[f]
            dwin[t] += dz_rows[f] * kflat[f]

        dx = np.zeros_like(c.x)
        T = dwin.shape[0]
        for i in range(w):
            dx[i : i + T] += dwin[:, i * k : (i + 1) * k]
        np.add.at(grads["embedding"], row, dx)

    return total_loss / n, grads


def train(
    model: DetectorModel,
    corpus: list[tuple],
    epochs: int,
    learning_rate: float,
    batch_size: int = 32,
) -> DetectorModel:
    """Mini-batch gradient descent; returns a new model, input untouched.

    Shuffling is driven by the config seed, so repeated runs are
    bit-identical. Zero epochs return the model unchanged.
    """
    if epochs < 0:
        raise ValueError("epochs must be >= 0")
    if not corpus:
        raise InputError("empty corpus")
    cfg = model.config
    ids_matrix = as_id_matrix([seq for seq, _ in corpus], cfg.max_len)
    labels = check_labels([lab for _, lab in corpus], len(corpus))

    arrays = {name: arr.copy() for name, arr in model.arrays().items()}
    current = model.with_arrays(arrays)
    rng = np.random.default_rng(cfg.seed + 1)

    for _ in range(epochs):
        order = rng.permutation(len(corpus))
        for start in range(0, len(corpus), batch_size):
            take = order[start : start + batch_size]
            batch = [(None, int(labels[i])) for i in take]
            _, grads = loss_and_gradients(current, batch, ids_matrix=ids_matrix[take])
            updated = {
                name: arr - learning_rate * grads[name]
                for name, arr in current.arrays().items()
            }
            current = current.with_arrays(updated)
    return current


def classify(model: DetectorModel, seq, threshold: float = 0.5) -> int:
    """1 (malware) iff p_malware >= threshold; the boundary is malware."""
    return int(forward(model, seq).p_malware >= threshold)


def training_loss(model: DetectorModel, corpus: list[tuple]) -> float:
    loss, _ = loss_and_gradients(model, corpus)
    return loss


def save_model(model: DetectorModel, path: str | Path) -> None:
    """Versioned checkpoint: parameter arrays plus a JSON config header."""
    cfg = model.config
    header = json.dumps(
        {
            "format_version": CHECKPOINT_VERSION,
            "vocabulary_size": cfg.vocabulary_size,
            "embedding_dim": cfg.embedding_dim,
            "conv_filters": cfg.conv_filters,
            "kernel_width": cfg.kernel_width,
            "hidden_dim": cfg.hidden_dim,
            "max_len": cfg.max_len,
            "seed": cfg.seed,
        }
    )
    np.savez(path, config=np.frombuffer(header.encode(), dtype=np.uint8),
             **model.arrays())


def load_model(path: str | Path) -> DetectorModel:
    with np.load(path) as data:
        header = json.loads(bytes(data["config"]).decode())
        if header.get("format_version") != CHECKPOINT_VERSION:
            raise InputError(
                f"unsupported checkpoint version {header.get('format_version')}"
            )
        config = DetectorConfig(
            vocabulary_size=header["vocabulary_size"],
            embedding_dim=header["embedding_dim"],
            conv_filters=header["conv_filters"],
            kernel_width=header["kernel_width"],
            hidden_dim=header["hidden_dim"],
            max_len=header["max_len"],
            seed=header["seed"],
        )
        arrays = {name: data[name] for name in PARAM_GROUPS}
    model = DetectorModel(config=config, **arrays)
    _validate_shapes(model)
    return model


def _validate_shapes(model: DetectorModel) -> None:
    cfg = model.config
    expected = {
        "embedding": (cfg.vocabulary_size, cfg.embedding_dim),
        "conv_w": (cfg.conv_filters, cfg.kernel_width, cfg.embedding_dim),
        "conv_b": (cfg.conv_filters,),
        "w1": (cfg.hidden_dim, cfg.conv_filters),
        "b1": (cfg.hidden_dim,),
        "w2": (2, cfg.hidden_dim),
        "b2": (2,),
    }
    for name, shape in expected.items():
        arr = getattr(model, name)
        if arr.shape != shape:
            raise InputError(f"checkpoint array {name} has shape {arr.shape}, want {shape}")
        if not np.isfinite(arr).all():
            raise InputError(f"checkpoint array {name} contains non-finite values")


class OpcodeConvNet:
    """Scikit-learn style front end for the convolutional detector.

    Parameters mirror :class:`DetectorConfig`; ``fit`` trains on padded
    id rows (or anything :func:`as_id_matrix` accepts) with binary
    labels, ``predict_proba``/``predict`` follow the usual contract.
    """

    def __init__(
        self,
        vocabulary_size: int | None = None,
        embedding_dim: int = 8,
        conv_filters: int = 32,
        kernel_width: int = 8,
        hidden_dim: int = 16,
        max_len: int = 512,
        epochs: int = 50,
        learning_rate: float = 0.1,
        batch_size: int = 32,
        threshold: float = 0.5,
        random_state: int = 0,
    ):
        self.vocabulary_size = vocabulary_size
        self.embedding_dim = embedding_dim
        self.conv_filters = conv_filters
        self.kernel_width = kernel_width
        self.hidden_dim = hidden_dim
        self.max_len = max_len
        self.epochs = epochs
        self.learning_rate = learning_rate
        self.batch_size = batch_size
        self.threshold = threshold
        self.random_state = random_state

    def _config(self) -> DetectorConfig:
        vocab = self.vocabulary_size or default_table().vocabulary_size
        return DetectorConfig(
            vocabulary_size=vocab,
            embedding_dim=self.embedding_dim,
            conv_filters=self.conv_filters,
            kernel_width=self.kernel_width,
            hidden_dim=self.hidden_dim,
            max_len=self.max_len,
            seed=self.random_state,
        )

    def get_params(self, deep: bool = True) -> dict:
        return {
            "vocabulary_size": self.vocabulary_size,
            "embedding_dim": self.embedding_dim,
            "conv_filters": self.conv_filters,
            "kernel_width": self.kernel_width,
            "hidden_dim": self.hidden_dim,
            "max_len": self.max_len,
            "epochs": self.epochs,
            "learning_rate": self.learning_rate,
            "batch_size": self.batch_size,
            "threshold": self.threshold,
            "random_state": self.random_state,
        }

    def set_params(self, **params) -> "OpcodeConvNet":
        for name, value in params.items():
            if name not in self.get_params():
                raise ValueError(f"unknown parameter {name!r}")
            setattr(self, name, value)
        return self

    def fit(self, X, y) -> "OpcodeConvNet":
        config = self._config()
        ids = as_id_matrix(X, config.max_len, config.vocabulary_size)
        labels = check_labels(y, ids.shape[0])
        model = init_model(config)
        corpus = list(zip(ids, labels.tolist()))
        self.model_ = train(
            model, corpus, epochs=self.epochs,
            learning_rate=self.learning_rate, batch_size=self.batch_size,
        )
        self.classes_ = np.array([0, 1])
        self.n_features_in_ = config.max_len
        return self

    def predict_proba(self, X) -> np.ndarray:
        check_fitted(self, "model_")
        ids = as_id_matrix(X, self.model_.config.max_len,
                           self.model_.config.vocabulary_size)
        return forward_batch(self.model_, ids)

    def predict(self, X) -> np.ndarray:
        proba = self.predict_proba(X)
        return (proba[:, 1] >= self.threshold).astype(np.int64)

    def score(self, X, y) -> float:
        labels = check_labels(y)
        return float((self.predict(X) == labels).mean())
