"""Dense float64 kernels, seeded random streams and a finite-difference oracle."""
from __future__ import annotations

import hashlib
from dataclasses import dataclass
from typing import Callable

import numpy as np

ACTIVATIONS = ("sigmoid", "tanh", "relu")


def as_matrix(x) -> np.ndarray:
    a = np.asarray(x, dtype=np.float64)
    if a.ndim == 0:
        a = a.reshape(1, 1)
    elif a.ndim == 1:
        a = a.reshape(-1, 1)
    return a


def matmul(a, b) -> np.ndarray:
    """Matrix product in float64.

    Summation runs over the inner index in ascending order for each output
    entry (``np.dot`` on contiguous float64 operands), which is repeatable
    for identical inputs on a given platform.
    """
    a = np.ascontiguousarray(a, dtype=np.float64)
    b = np.ascontiguousarray(b, dtype=np.float64)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ValueError(f"matmul dimension mismatch: {a.shape} x {b.shape}")
    return np.dot(a, b)


def sigmoid(x):
    x = np.asarray(x, dtype=np.float64)
    # split by sign so exp never overflows
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def relu(x):
    return np.maximum(np.asarray(x, dtype=np.float64), 0.0)


def activate(x, kind: str) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if kind == "sigmoid":
        return sigmoid(x)
    if kind == "tanh":
        return np.tanh(x)
    if kind == "relu":
        return relu(x)
    raise ValueError(f"unknown activation {kind!r}; expected one of {ACTIVATIONS}")


def _purpose_key(purpose) -> int:
    if isinstance(purpose, (int, np.integer)):
        return int(purpose) & 0xFFFFFFFFFFFFFFFF
    digest = hashlib.sha256(str(purpose).encode()).digest()
    return int.from_bytes(digest[:8], "little")


@dataclass(frozen=True)
class RngStream:
    """Addressable random stream.

    A stream is fully determined by ``seed`` and a path of keys (ints or
    strings), so a draw such as "the shuffle of epoch 3" can be reproduced
    without replaying any other draw. Backed by the counter-based Philox
    bit generator.
    """

    seed: int
    stream_id: tuple = ()

    def child(self, *keys) -> "RngStream":
        return RngStream(self.seed, self.stream_id + tuple(keys))

    def generator(self) -> np.random.Generator:
        entropy = [int(self.seed) & 0xFFFFFFFFFFFFFFFF]
        entropy += [_purpose_key(k) for k in self.stream_id]
        return np.random.Generator(np.random.Philox(np.random.SeedSequence(entropy)))


def rng_for(seed: int, *keys) -> np.random.Generator:
    return RngStream(seed, tuple(keys)).generator()


def finite_diff_grad(loss_fn: Callable[[np.ndarray], float], theta, eps: float = 1e-5) -> np.ndarray:
    """Central-difference gradient of ``loss_fn`` at ``theta`` (same shape)."""
    if not eps > 0:
        raise ValueError(f"eps must be positive, got {eps}")
    theta = np.array(theta, dtype=np.float64)
    grad = np.zeros_like(theta)
    flat = theta.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        up = float(loss_fn(theta))
        flat[i] = orig - eps
        down = float(loss_fn(theta))
        flat[i] = orig
        if not (np.isfinite(up) and np.isfinite(down)):
            raise FloatingPointError(
                f"non-finite loss at coordinate {tuple(int(k) for k in np.unravel_index(i, theta.shape))}"
            )
        gflat[i] = (up - down) / (2.0 * eps)
    return grad
