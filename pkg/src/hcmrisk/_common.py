"""Seed derivation and stratified fold assignment shared by models and pipeline."""

from __future__ import annotations

import zlib

import numpy as np


def derive_seed(seed: int, *keys) -> int:
    """Independent 63-bit seed for the stream named by ``keys`` under ``seed``."""
    words = [int(seed) & 0xFFFFFFFF, (int(seed) >> 32) & 0xFFFFFFFF]
    for k in keys:
        if isinstance(k, str):
            words.append(zlib.crc32(k.encode()))
        else:
            words.append(int(k) & 0xFFFFFFFF)
    state = np.random.SeedSequence(words).generate_state(2, dtype=np.uint32)
    return int((int(state[0]) << 31) ^ int(state[1])) & ((1 << 63) - 1)


def stratified_folds(y, n_folds: int, seed) -> np.ndarray:
    """Fold id per row; each class is shuffled then dealt round-robin.

    Dealing continues across classes, so per-class and total fold sizes both
    differ by at most one.
    """
    y = np.asarray(y)
    if n_folds < 2:
        raise ValueError("need at least 2 folds")
    rng = np.random.default_rng(seed)
    order = np.concatenate([rng.permutation(np.flatnonzero(y == c)) for c in np.unique(y)])
    folds = np.empty(y.size, dtype=int)
    folds[order] = np.arange(order.size) % n_folds
    return folds
