"""Shared randomized-instance builders and small numerical oracles."""

import numpy as np

from cib.discrete_oracle import DiscreteEncoder, DiscreteJoint, ProductSurrogate


def random_joint(rng, nx, ny, floor=0.05):
    """Random joint table with strictly positive entries."""
    p = rng.uniform(floor, 1.0, size=(nx, ny))
    return DiscreteJoint(p / p.sum())


def random_encoder(rng, nx, arities, floor=0.05):
    """Random stochastic encoder with strictly positive rows."""
    nt = int(np.prod(arities))
    q = rng.uniform(floor, 1.0, size=(nx, nt))
    return DiscreteEncoder(q / q.sum(axis=1, keepdims=True), tuple(arities))


def random_arities(rng, max_outcomes=16):
    """One to three coordinates with alphabet sizes 2..4, product capped."""
    while True:
        n_coords = int(rng.integers(1, 4))
        arities = tuple(int(rng.integers(2, 5)) for _ in range(n_coords))
        if int(np.prod(arities)) <= max_outcomes:
            return arities


def random_product_surrogate(rng, ny, arities, floor=0.05):
    factors = []
    for _ in range(ny):
        class_factors = []
        for a in arities:
            f = rng.uniform(floor, 1.0, size=a)
            class_factors.append(f / f.sum())
        factors.append(tuple(class_factors))
    return ProductSurrogate(tuple(factors))


def random_samples(rng, nx, ny, n):
    """(x, y) index pairs guaranteed to hit every class at least once."""
    xs = rng.integers(0, nx, size=n)
    ys = np.concatenate([np.arange(ny), rng.integers(0, ny, size=n - ny)])
    return np.stack([xs, ys], axis=1)


def central_difference(f, theta, eps):
    """Independent coordinate-wise central-difference gradient of f at theta."""
    theta = np.asarray(theta, dtype=np.float64)
    grad = np.zeros_like(theta)
    for k in range(theta.size):
        up = theta.copy()
        up[k] += eps
        down = theta.copy()
        down[k] -= eps
        grad[k] = (f(up) - f(down)) / (2.0 * eps)
    return grad


def gaussian_quadrature_kl(m1, v1, m2, v2, lo=-12.0, hi=12.0, n=240001):
    """Trapezoid-rule KL between two 1-D Gaussians given means and variances."""
    t = np.linspace(lo, hi, n)
    p = np.exp(-0.5 * (t - m1) ** 2 / v1) / np.sqrt(2.0 * np.pi * v1)
    q = np.exp(-0.5 * (t - m2) ** 2 / v2) / np.sqrt(2.0 * np.pi * v2)
    integrand = np.where(p > 0.0, p * (np.log(np.maximum(p, 1e-300)) - np.log(np.maximum(q, 1e-300))), 0.0)
    return float(np.trapezoid(integrand, t))
