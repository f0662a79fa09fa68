"""Shared helpers for the test suite."""

import numpy as np

from slmpcg.linops import EigDecomposition, LinearOperator


def random_spd(rng, n, lam_min=1.0, lam_max=100.0):
    """Random SPD matrix with log-uniform spectrum; returns the matrix and
    its exact eigendecomposition (values decreasing)."""
    Q, _ = np.linalg.qr(rng.standard_normal((n, n)))
    lam = np.sort(np.exp(rng.uniform(np.log(lam_min), np.log(lam_max), n)))[::-1]
    A = (Q * lam) @ Q.T
    A = 0.5 * (A + A.T)
    return A, EigDecomposition(values=lam, vectors=Q)


def counted(A, label="A1"):
    return LinearOperator.from_dense(A, label=label)


def dense_energy_error(A, x_star):
    """Energy-error callback against the exact solution, using uncounted
    dense products so solver ledgers stay clean."""

    def oracle(x):
        d = x_star - x
        return float(np.sqrt(max(d @ (A @ d), 0.0)))

    return oracle
