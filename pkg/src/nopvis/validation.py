"""Input validation helpers shared by the estimators and the CLI."""

from __future__ import annotations

import numpy as np

from .opcodes import PADDING_ID
from .smali import OpcodeSequence


class InputError(ValueError):
    """Bad user-supplied input (maps to CLI exit code 2)."""


def as_id_matrix(
    X,
    max_len: int,
    vocabulary_size: int | None = None,
    pad_id: int = PADDING_ID,
) -> np.ndarray:
    """Coerce sequences into an int64 matrix of shape (n, max_len).

    Accepts a 2D array, a list of :class:`OpcodeSequence`, or ragged lists
    of ids. Short rows are padded with ``pad_id``; long rows truncated.
    Ids must be non-negative and below ``vocabulary_size`` when given.
    """
    if isinstance(X, np.ndarray) and X.ndim == 2:
        rows = [row for row in X]
    elif isinstance(X, OpcodeSequence):
        rows = [X.ids]
    else:
        rows = [x.ids if isinstance(x, OpcodeSequence) else x for x in X]
    if not rows:
        raise InputError("empty input batch")

    out = np.full((len(rows), max_len), pad_id, dtype=np.int64)
    for i, row in enumerate(rows):
        ids = np.asarray(row, dtype=np.int64).ravel()[:max_len]
        out[i, : len(ids)] = ids
    if out.min() < 0:
        raise InputError("opcode ids must be non-negative")
    if vocabulary_size is not None and out.max() >= vocabulary_size:
        raise InputError(
            f"opcode id {int(out.max())} out of range for vocabulary of {vocabulary_size}"
        )
    return out


def check_labels(y, n_expected: int | None = None) -> np.ndarray:
    """Binary label vector as int64 in {0, 1}."""
    arr = np.asarray(y, dtype=np.int64).ravel()
    if n_expected is not None and arr.shape[0] != n_expected:
        raise InputError(f"expected {n_expected} labels, got {arr.shape[0]}")
    if arr.size == 0:
        raise InputError("empty label vector")
    if not np.isin(arr, (0, 1)).all():
        raise InputError("labels must be in {0, 1}")
    return arr


def check_fitted(estimator, attribute: str) -> None:
    if not hasattr(estimator, attribute):
        raise InputError(
            f"{type(estimator).__name__} is not fitted yet; call fit() first"
        )


def rng_from_seed(seed: int | None) -> np.random.Generator:
    return np.random.default_rng(0 if seed is None else seed)
