"""Slow reference implementations the fast paths are checked against."""
import math

import numpy as np


def brute_wins(normals, anomalies):
    wins = 0
    for a in anomalies:
        for n in normals:
            if a - n > 0:
                wins += 1
    return wins


def brute_auc_counts(normals, anomalies):
    return brute_wins(normals, anomalies), len(normals) * len(anomalies)


def brute_pauc_counts(normals, anomalies, p):
    k = math.floor(p * len(normals))
    # highest scores first; equal scores keep input order
    order = sorted(range(len(normals)), key=lambda i: (-normals[i], i))
    top = [normals[i] for i in order[:k]]
    return brute_wins(top, anomalies), k * len(anomalies)


def dft_power(frame):
    """Direct O(N^2) DFT power for bins 0..N/2."""
    n = len(frame)
    k = np.arange(n // 2 + 1)[:, None]
    t = np.arange(n)[None, :]
    basis = np.exp(-2j * np.pi * k * t / n)
    return np.abs(basis @ frame) ** 2


def central_differences(f, x, h=1e-4):
    """Gradient of scalar f w.r.t. array x (modified in place, restored)."""
    grad = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        old = x[i]
        x[i] = old + h
        up = f()
        x[i] = old - h
        down = f()
        x[i] = old
        grad[i] = (up - down) / (2 * h)
    return grad


def rel_error(a, b, floor=1e-6):
    return np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)


def richardson_differences(f, x, h=1e-4):
    """Central differences at h and 2h combined to cancel the h^2 error term."""
    return (4 * central_differences(f, x, h) - central_differences(f, x, 2 * h)) / 3


def _relu_masks(model, x):
    from fsasd.autoencoder import _forward
    return [c["mask"] for c in _forward(model, x, training=True)[1] if "mask" in c]


def crosses_relu_kink(model, x, h):
    """True if a +-h step on any single parameter flips a ReLU.

    The loss has no derivative across the flip, so finite differences taken
    there say nothing about the backprop gradient.
    """
    base = _relu_masks(model, x)
    for _, p in model.parameters():
        it = np.nditer(p, flags=["multi_index"])
        for _ in it:
            i = it.multi_index
            old = p[i]
            for step in (h, -h):
                p[i] = old + step
                flipped = any((a != b).any() for a, b in zip(_relu_masks(model, x), base))
                p[i] = old
                if flipped:
                    return True
    return False
