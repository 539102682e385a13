"""Input checks shared by the estimators and the CLI."""

from __future__ import annotations

from typing import Sequence

import numpy as np

from .alignment import min_alignment_length


def check_sequences(X, n_tokens: int | None = None, name: str = "X",
                    allow_empty: bool = False) -> list[tuple[int, ...]]:
    """Coerce a ragged collection of id sequences to a list of int tuples.

    Ids must be >= 1 (0 is BLANK) and, when ``n_tokens`` is known, <= n_tokens.
    """
    if isinstance(X, np.ndarray) and X.ndim == 2:
        X = list(X)
    try:
        seqs = [tuple(int(t) for t in np.asarray(s).ravel()) for s in X]
    except (TypeError, ValueError) as exc:
        raise ValueError(f"{name} must be a sequence of integer id sequences") from exc
    if not seqs:
        raise ValueError(f"{name} is empty")
    for i, s in enumerate(seqs):
        if not s and not allow_empty:
            raise ValueError(f"{name}[{i}] is empty")
        if s and min(s) < 1:
            raise ValueError(f"{name}[{i}] contains id {min(s)}; token ids start at 1")
        if s and n_tokens is not None and max(s) > n_tokens:
            raise ValueError(f"{name}[{i}] contains id {max(s)} outside the vocabulary of {n_tokens}")
    return seqs


def check_pairs(X, y, scale: int, n_tokens: int | None = None):
    """Validate parallel data and the canvas-length assumption."""
    X = check_sequences(X, n_tokens, "X")
    y = check_sequences(y, n_tokens, "y")
    if len(X) != len(y):
        raise ValueError(f"X has {len(X)} sequences but y has {len(y)}")
    for i, (x, t) in enumerate(zip(X, y)):
        if min_alignment_length(t) > scale * len(x):
            raise ValueError(
                f"pair {i}: target needs {min_alignment_length(t)} frames, canvas has {scale * len(x)}"
            )
    return X, y


def infer_n_tokens(*collections: Sequence[Sequence[int]]) -> int:
    return max(max(s) for c in collections for s in c if s)
