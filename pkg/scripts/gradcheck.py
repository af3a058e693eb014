"""Compare analytic gradients with central differences on random tiny models."""
import argparse
import itertools

import numpy as np

from lowprior.data_types import EncodedSequence, TaskLayout
from lowprior.model import KINDS, ArchitectureConfig, build_architecture, forward, loss_and_grads, pack_batch
from lowprior.numkernel import RngStream, finite_diff_grad


def random_batch(rng, layout, T=4, d_in=6, n=2):
    seqs = []
    for k in range(n):
        x = rng.integers(0, 2, (T, d_in)) * rng.normal(size=(T, d_in))
        g = np.stack([rng.integers(0, m, T) for _, m in layout.tasks], axis=1)
        seqs.append(EncodedSequence(str(k), np.arange(1.0, T + 1), x, rng.integers(0, 2, T), g, np.ones(T, bool)))
    return pack_batch(seqs)


def check(kind, mode, p, seed, eps):
    layout = TaskLayout((("a", 3), ("b", 3), ("c", 3)))
    rng = np.random.default_rng(seed)
    drop = {"emb": 0.2} if seed % 2 else {}
    net = build_architecture(ArchitectureConfig(kind=kind, d_in=6, hidden=8, embed=5, dropout=drop,
                                                gpsr_output=mode), layout, seed)
    for k in net.params:
        net.params[k] = net.params[k] + rng.normal(scale=0.3, size=net.params[k].shape)
    batch = random_batch(rng, layout)
    stream = RngStream(seed)
    _, grads = loss_and_grads(net, batch, p, rng=stream)
    names = list(net.params)
    theta = np.concatenate([net.params[k].ravel() for k in names])
    splits = np.cumsum([net.params[k].size for k in names])[:-1]

    def loss(t):
        probe = net.copy()
        probe.params = {k: v.reshape(net.params[k].shape) for k, v in zip(names, np.split(t, splits))}
        return forward(probe, batch, p=p, mode="train", rng=stream)[0]

    num = finite_diff_grad(loss, theta, eps)
    ana = np.concatenate([grads[k].ravel() for k in names])
    return float(np.max(np.abs(ana - num) / np.maximum(np.maximum(np.abs(ana), np.abs(num)), 1e-6)))


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--eps", type=float, default=1e-5)
    args = ap.parse_args()
    worst = 0.0
    for seed, (kind, mode, p) in enumerate(itertools.product(KINDS, ("sigmoid", "softmax"), (0.0, 0.3, 0.8, 1.0))):
        err = check(kind, mode, p, seed, args.eps)
        worst = max(worst, err)
        print(f"{kind:14s} {mode:8s} p={p:.1f}  max rel err {err:.2e}")
    print(f"worst {worst:.2e}")


if __name__ == "__main__":
    main()
