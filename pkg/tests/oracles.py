"""Brute-force reference implementations shared by the metric tests."""

import math

import numpy as np


def oracle_counts(a, b):
    inter = union = na = nb = 0
    for x, y in zip(a.ravel().tolist(), b.ravel().tolist()):
        inter += x and y
        union += x or y
        na += x
        nb += y
    return inter, union, na, nb


def oracle_dsc(a, b):
    inter, _, na, nb = oracle_counts(a, b)
    return 1.0 if na + nb == 0 else 2 * inter / (na + nb)


def oracle_iou(a, b):
    inter, union, _, _ = oracle_counts(a, b)
    return 1.0 if union == 0 else inter / union


def oracle_boundary(m):
    H, W = m.shape
    pts = []
    for i in range(H):
        for j in range(W):
            if not m[i, j]:
                continue
            for di, dj in ((-1, 0), (1, 0), (0, -1), (0, 1)):
                y, x = i + di, j + dj
                if not (0 <= y < H and 0 <= x < W) or not m[y, x]:
                    pts.append((i, j))
                    break
    return pts


def oracle_hd(a, b, percentile, spacing=1.0):
    if not a.any() and not b.any():
        return 0.0
    if a.any() != b.any():
        return math.hypot(*a.shape) * spacing
    pa, pb = oracle_boundary(a), oracle_boundary(b)
    d = lambda p, q: math.sqrt((p[0] - q[0]) ** 2 + (p[1] - q[1]) ** 2)
    directed = [min(d(p, q) for q in pb) for p in pa] + [min(d(q, p) for p in pa) for q in pb]
    if percentile == 100:
        return max(directed) * spacing
    return float(np.percentile(np.array(directed) * spacing, percentile))


def random_pairs(n, seed=0):
    rng = np.random.default_rng(seed)
    for _ in range(n):
        H, W = (int(v) for v in rng.integers(1, 9, size=2))
        K = int(rng.integers(2, 5))
        density = rng.random()
        a = np.where(rng.random((H, W)) < density, rng.integers(1, K, (H, W)), 0)
        b = np.where(rng.random((H, W)) < density, rng.integers(1, K, (H, W)), 0)
        yield a, b, K


EDGE_CASES = [
    (np.zeros((4, 4), int), np.zeros((4, 4), int)),
    (np.ones((4, 4), int), np.ones((4, 4), int)),
    (np.ones((4, 4), int), np.zeros((4, 4), int)),
    (np.eye(5, dtype=int), np.eye(5, dtype=int)[::-1]),
    (np.ones((1, 1), int), np.ones((1, 1), int)),
    (np.pad(np.ones((1, 1), int), ((0, 7), (0, 7))), np.pad(np.ones((1, 1), int), ((7, 0), (7, 0)))),
    (np.ones((1, 8), int), np.pad(np.ones((1, 1), int), ((0, 0), (0, 7)))),
    (np.triu(np.ones((8, 8), int)), np.tril(np.ones((8, 8), int))),
]
