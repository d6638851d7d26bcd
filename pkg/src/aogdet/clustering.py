"""Seeded k-means with k-means++ initialization."""

from __future__ import annotations

import numpy as np


def _sq_dists(points, centers):
    return ((points[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)


def kmeans_pp_init(points, k, rng):
    n = len(points)
    centers = [points[int(rng.integers(n))]]
    for _ in range(k - 1):
        d2 = _sq_dists(points, np.array(centers)).min(axis=1)
        total = d2.sum()
        if total <= 0:
            centers.append(points[int(rng.integers(n))])
            continue
        centers.append(points[int(rng.choice(n, p=d2 / total))])
    return np.array(centers)


def kmeans(points, k, seed=0, max_iter=100):
    """Squared-Euclidean Lloyd iterations; empty clusters are re-seeded
    from the point farthest from its assigned centroid."""
    points = np.asarray(points, dtype=np.float64)
    n = len(points)
    if n < k:
        raise ValueError(f"k-means needs >= {k} points, got {n}")
    rng = np.random.default_rng(seed)
    centers = kmeans_pp_init(points, k, rng)
    labels = np.zeros(n, dtype=np.int64)
    for it in range(max_iter):
        d2 = _sq_dists(points, centers)
        new_labels = np.argmin(d2, axis=1)
        dist_to_own = d2[np.arange(n), new_labels]
        for c in range(k):
            if not np.any(new_labels == c):
                far = int(np.argmax(dist_to_own))
                new_labels[far] = c
                dist_to_own[far] = 0.0
        if it > 0 and np.array_equal(new_labels, labels):
            break
        labels = new_labels
        for c in range(k):
            members = points[labels == c]
            if len(members):
                centers[c] = members.mean(axis=0)
    return centers, labels
