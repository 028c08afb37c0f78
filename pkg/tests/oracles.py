"""Independent reference implementations used as test oracles."""

import numpy as np


def matrix_rpca(M, lam, tol=1e-10, max_iter=5000, rho=1.1):
    """Principal component pursuit by the classic inexact augmented Lagrangian method.

    Plain matrix code path: one SVD of ``M - S + Y/mu`` per iteration and no
    auxiliary splitting, so it shares nothing with the tensor solver.
    """
    M = np.asarray(M, dtype=float)
    norm2 = np.linalg.norm(M, 2)
    Y = M / max(norm2, np.abs(M).max() / lam)
    mu = 1.25 / norm2
    mu_bar = mu * 1e7
    S = np.zeros_like(M)
    L = np.zeros_like(M)
    dnorm = np.linalg.norm(M)
    for _ in range(max_iter):
        U, s, Vt = np.linalg.svd(M - S + Y / mu, full_matrices=False)
        L = (U * np.maximum(s - 1 / mu, 0)) @ Vt
        T = M - L + Y / mu
        S = np.sign(T) * np.maximum(np.abs(T) - lam / mu, 0)
        Z = M - L - S
        Y += mu * Z
        mu = min(mu * rho, mu_bar)
        if np.linalg.norm(Z) / dnorm < tol:
            break
    return L, S


def low_rank_plus_sparse(seed, shape, rank, frac=0.02, magnitude=5.0):
    """CP-rank-`rank` background scaled to max |L0| = 1, plus sign-random spikes.

    Spike magnitudes are drawn from ``[magnitude, 2 * magnitude]``.
    """
    rng = np.random.default_rng(seed)
    L0 = np.zeros(shape)
    for _ in range(rank):
        vecs = [rng.normal(size=n) for n in shape]
        L0 += np.einsum("i,j,k->ijk", *vecs) if len(shape) == 3 else np.multiply.outer(*vecs)
    L0 /= np.abs(L0).max()
    S0 = np.zeros(shape)
    n = int(frac * L0.size)
    idx = rng.choice(L0.size, n, replace=False)
    S0.flat[idx] = magnitude * rng.choice([-1.0, 1.0], n) * rng.uniform(1, 2, n)
    return L0, S0
