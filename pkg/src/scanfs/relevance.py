"""Entropy, information gain, scanning order, and feature redundancy.

Entropies use log base 2 with 0*log(0) = 0. Redundancy is the mean absolute
Pearson correlation against the other features; Pearson uses population
moments and is defined as 0 whenever either column is constant.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import Dataset, discretize

DEFAULT_BINS = 10


@dataclass
class RelevanceRanking:
    """Per-feature information gain and the descending-IG scan order."""

    ig_scores: np.ndarray
    order: np.ndarray  # permutation of 0..D-1, ties broken by lower index


@dataclass
class RedundancyTable:
    """Pairwise correlations and the per-feature global redundancy."""

    corr: np.ndarray  # D x D
    rd: np.ndarray    # length D, values in [0, 1]


def entropy(labels) -> float:
    labels = np.asarray(labels)
    if labels.size == 0:
        raise ValueError("entropy: empty label vector")
    _, counts = np.unique(labels, return_counts=True)
    p = counts / labels.size
    return float(-np.sum(p * np.log2(p)))


def conditional_entropy(feature_binned, labels) -> float:
    feature_binned = np.asarray(feature_binned)
    labels = np.asarray(labels)
    if feature_binned.shape != labels.shape:
        raise ValueError("conditional_entropy: length mismatch")
    n = labels.size
    total = 0.0
    for value in np.unique(feature_binned):
        mask = feature_binned == value
        total += (mask.sum() / n) * entropy(labels[mask])
    return total


def information_gain(feature_binned, labels) -> float:
    ig = entropy(labels) - conditional_entropy(feature_binned, labels)
    return max(ig, 0.0) if ig > -1e-12 else ig


def scan_order(dataset: Dataset, bins: int = DEFAULT_BINS) -> RelevanceRanking:
    """Rank features by information gain, highest first; features are
    equal-width binned before the entropy computation."""
    ig = np.array(
        [
            information_gain(discretize(dataset.X[:, j], bins), dataset.y)
            for j in range(dataset.n_features)
        ]
    )
    order = np.argsort(-ig, kind="stable")
    return RelevanceRanking(ig_scores=ig, order=order.astype(np.intp))


def pearson(col_k, col_j) -> float:
    a = np.asarray(col_k, dtype=np.float64)
    b = np.asarray(col_j, dtype=np.float64)
    if a.shape != b.shape or a.size < 2:
        raise ValueError("pearson: columns must share a length >= 2")
    da = a - a.mean()
    db = b - b.mean()
    sa = np.sqrt(np.mean(da * da))
    sb = np.sqrt(np.mean(db * db))
    if sa == 0.0 or sb == 0.0:
        return 0.0
    return float(np.mean(da * db) / (sa * sb))


def correlation_matrix(x) -> np.ndarray:
    """D x D Pearson table over the columns of x; constant columns get 0
    everywhere, including their own diagonal."""
    x = np.asarray(x, dtype=np.float64)
    d = x.shape[1]
    centered = x - x.mean(axis=0)
    std = np.sqrt(np.mean(centered * centered, axis=0))
    safe = np.where(std == 0.0, 1.0, std)
    z = centered / safe
    corr = (z.T @ z) / x.shape[0]
    corr[std == 0.0, :] = 0.0
    corr[:, std == 0.0] = 0.0
    np.fill_diagonal(corr, np.where(std == 0.0, 0.0, 1.0))
    corr = np.clip(corr, -1.0, 1.0)
    return (corr + corr.T) / 2.0  # enforce exact symmetry


def global_redundancy(k: int, corr) -> float:
    """Mean |corr| between feature k and every other feature (0 when D=1)."""
    corr = np.asarray(corr)
    d = corr.shape[0]
    if d == 1:
        return 0.0
    total = np.sum(np.abs(corr[k])) - abs(corr[k, k])
    return float(total / (d - 1))


def redundancy_table(x) -> RedundancyTable:
    corr = correlation_matrix(x)
    rd = np.array([global_redundancy(k, corr) for k in range(corr.shape[0])])
    return RedundancyTable(corr=corr, rd=rd)
