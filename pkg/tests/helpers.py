"""Shared reference computations for the test suite."""

import numpy as np

from dnndif.dnn import Architecture, backward, bce_loss, dropout_masks, forward, init_network


def random_network(rng, max_width=6):
    dims = rng.integers(2, max_width + 1, size=5)
    arch = Architecture(int(dims[0]), int(dims[4]), tuple(int(d) for d in dims[1:4]))
    net = init_network(arch, rng)
    # move batch norm away from identity so gamma and beta gradients are exercised
    net.bn_gamma[:] = rng.uniform(0.5, 1.5, dims[1])
    net.bn_beta[:] = rng.normal(0, 0.3, dims[1])
    return net


def loss_at(net, x, y, masks):
    out, _ = forward(net, x, mode="train", masks=masks, update_stats=False)
    return bce_loss(out, y)


def finite_difference_check(net, x, y, masks, h=1e-5):
    """Analytic and central-difference gradients, in ``net.parameters()`` order."""
    _, cache = forward(net, x, mode="train", masks=masks, update_stats=False)
    analytic = backward(net, cache, y)
    numeric = []
    for p in net.parameters():
        g = np.zeros_like(p)
        for idx in np.ndindex(p.shape):
            old = p[idx]
            p[idx] = old + h
            up = loss_at(net, x, y, masks)
            p[idx] = old - h
            down = loss_at(net, x, y, masks)
            p[idx] = old
            g[idx] = (up - down) / (2 * h)
        numeric.append(g)
    return analytic, numeric


def relative_errors(analytic, numeric, floor=1e-8):
    a = np.concatenate([g.ravel() for g in analytic])
    n = np.concatenate([g.ravel() for g in numeric])
    return np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)


def near_kink(net, x, masks, margin):
    """True if any nonzero ReLU pre-activation lies within ``margin`` of zero.

    Central differences straddling a kink are meaningless there.  Exact zeros
    (rows whose inputs were all dropped) stay put under perturbation.
    """
    _, cache = forward(net, x, mode="train", masks=masks, update_stats=False)
    z = np.concatenate([cache.z1.ravel(), cache.z2.ravel(), cache.z3.ravel()])
    return bool(np.any((z != 0) & (np.abs(z) < margin)))


def random_case(rng, batch=8, margin=1e-3):
    """Random network, batch, targets and dropout masks away from every ReLU kink."""
    while True:
        net = random_network(rng)
        d_in, d_out = net.architecture.input_dim, net.architecture.output_dim
        x = rng.normal(size=(batch, d_in))
        y = (rng.random((batch, d_out)) < 0.5).astype(float)
        masks = dropout_masks(net, batch, rng)
        if not near_kink(net, x, masks, margin):
            return net, x, y, masks
