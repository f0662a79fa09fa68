"""Matrix-free SPD operators, energy norms, and dense desk-scale oracles.

Everything dense in here is O(n^3) and intended for verification and for
the moderate problem sizes of the assimilation harness (n up to a few
thousand).  The matrix-free :class:`LinearOperator` is the object the
solvers consume; it never materializes a matrix and keeps an exact count
of how many times it has been applied.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass

import numpy as np
import scipy.linalg


class DimensionMismatchError(ValueError):
    """Operands have incompatible dimensions."""


class NotSpdError(RuntimeError):
    """A matrix or operator failed a symmetric positive-definiteness check."""


def as_vector(v, dim=None, name="vector"):
    """Coerce ``v`` to a finite 1-d float array, checking its length."""
    v = np.asarray(v, dtype=float)
    if v.ndim != 1:
        raise DimensionMismatchError(
            f"{name} must be one-dimensional, got shape {v.shape}"
        )
    if dim is not None and v.shape[0] != dim:
        raise DimensionMismatchError(
            f"{name} has dimension {v.shape[0]}, expected {dim}"
        )
    if not np.all(np.isfinite(v)):
        raise ValueError(f"{name} contains non-finite entries")
    return v


class LinearOperator:
    """Matrix-free linear map ``v -> A v`` with an apply counter.

    Parameters
    ----------
    dim : int
        Dimension of the (square) operator.
    apply_fn : callable
        Deterministic map taking and returning a length-``dim`` array.
        It is assumed to be linear, symmetric and positive definite;
        these properties are probe-checked by :func:`check_spd_probes`
        rather than enforced per call.
    label : str
        Identifier used in cost ledgers (e.g. ``"A1"``, ``"A2"``).

    Notes
    -----
    The operator is immutable after construction except for the matvec
    counter, which is guarded by a lock so the operator can be shared
    read-only across concurrent runs.  The counter increments by exactly
    one per application and is never reset.
    """

    def __init__(self, dim, apply_fn, label="A"):
        if int(dim) < 1:
            raise ValueError(f"operator dimension must be positive, got {dim}")
        self.dim = int(dim)
        self.label = str(label)
        self._apply = apply_fn
        self._count = 0
        self._lock = threading.Lock()

    @property
    def matvec_count(self):
        return self._count

    def __call__(self, v):
        v = np.asarray(v, dtype=float)
        if v.shape != (self.dim,):
            raise DimensionMismatchError(
                f"operator {self.label} has dimension {self.dim}, "
                f"got vector of shape {v.shape}"
            )
        with self._lock:
            self._count += 1
        return np.asarray(self._apply(v), dtype=float)

    @classmethod
    def from_dense(cls, A, label="A"):
        """Wrap a dense symmetric matrix as a counted operator."""
        A = np.asarray(A, dtype=float)
        if A.ndim != 2 or A.shape[0] != A.shape[1]:
            raise DimensionMismatchError(f"expected a square matrix, got {A.shape}")
        return cls(A.shape[0], lambda v, _A=A: _A @ v, label=label)

    @classmethod
    def identity(cls, dim, label="I"):
        return cls(dim, lambda v: v.copy(), label=label)

    def __repr__(self):
        return f"LinearOperator(dim={self.dim}, label={self.label!r}, matvecs={self._count})"


@dataclass(frozen=True)
class EigDecomposition:
    """Spectral decomposition ``A = S diag(values) S^T``.

    ``values`` are sorted in decreasing order and strictly positive;
    ``vectors`` holds the corresponding orthonormal eigenvectors as
    columns.
    """

    values: np.ndarray
    vectors: np.ndarray


def _require_symmetric(A, name="matrix", rtol=1e-10):
    A = np.asarray(A, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise DimensionMismatchError(f"{name} must be square, got shape {A.shape}")
    scale = max(1.0, float(np.abs(A).max()))
    if float(np.abs(A - A.T).max()) > rtol * scale:
        raise DimensionMismatchError(f"{name} is not symmetric")
    return A


def energy_norm(A, v):
    """Energy norm ``sqrt(v^T A v)`` of a vector under an SPD operator.

    ``A`` may be a :class:`LinearOperator` (exactly one matvec is
    consumed) or a dense symmetric array.  A quadratic form more negative
    than ``-1e-12 * ||v||^2`` raises :class:`NotSpdError`; small negative
    round-off is clamped to zero.
    """
    if isinstance(A, np.ndarray):
        dim = A.shape[0]
        v = as_vector(v, dim)
        w = A @ v
    else:
        v = as_vector(v, A.dim)
        w = A(v)
    quad = float(v @ w)
    vv = float(v @ v)
    if quad < -1e-12 * vv:
        raise NotSpdError(f"negative quadratic form {quad:.3e} for ||v||^2={vv:.3e}")
    return float(np.sqrt(max(quad, 0.0)))


def dense_eig(A):
    """Full spectral decomposition of a dense SPD matrix.

    Returns an :class:`EigDecomposition` with eigenvalues sorted in
    decreasing order.  Raises :class:`DimensionMismatchError` for
    non-symmetric input and :class:`NotSpdError` if any eigenvalue is
    not strictly positive.
    """
    A = _require_symmetric(A)
    if A.shape[0] > 5000:
        raise ValueError("dense_eig is a desk-scale oracle (n <= 5000)")
    w, S = np.linalg.eigh(A)
    w = w[::-1].copy()
    S = S[:, ::-1].copy()
    if w[-1] <= 0.0:
        raise NotSpdError(f"smallest eigenvalue {w[-1]:.3e} is not positive")
    return EigDecomposition(values=w, vectors=S)


def direct_solve(A, b):
    """Solve ``A x = b`` for dense SPD ``A`` by Cholesky factorization."""
    A = _require_symmetric(A)
    b = as_vector(b, A.shape[0], name="right-hand side")
    try:
        c, low = scipy.linalg.cho_factor(A)
    except np.linalg.LinAlgError as exc:
        raise NotSpdError(f"Cholesky factorization failed: {exc}") from exc
    except scipy.linalg.LinAlgError as exc:  # pragma: no cover - scipy alias
        raise NotSpdError(f"Cholesky factorization failed: {exc}") from exc
    return scipy.linalg.cho_solve((c, low), b)


def symmetric_sqrt(A):
    """Symmetric square root ``L`` with ``L L = A`` via eigendecomposition.

    The symmetric root (rather than a Cholesky factor) keeps adjoint
    identities free of a transpose pathway downstream.
    """
    eig = dense_eig(A)
    L = (eig.vectors * np.sqrt(eig.values)) @ eig.vectors.T
    return 0.5 * (L + L.T)


def check_spd_probes(A, rng=None, probes=12, tol=1e-12):
    """Probe-based validation of linearity, symmetry and positivity.

    Draws random vectors and checks, up to round-off, that the operator
    is linear, symmetric and positive definite.  Raises
    :class:`NotSpdError` or :class:`ValueError` on failure.  Intended for
    tests and diagnostics; each probe consumes matvecs.
    """
    if rng is None:
        rng = np.random.default_rng(0)
    n = A.dim
    for _ in range(probes):
        u = rng.standard_normal(n)
        v = rng.standard_normal(n)
        a, b = rng.standard_normal(2)
        Au = A(u)
        Av = A(v)
        # linearity
        lin = A(a * u + b * v) - a * Au - b * Av
        if np.linalg.norm(lin) > tol * (np.linalg.norm(Au) + np.linalg.norm(Av) + 1.0):
            raise ValueError(f"operator {A.label} failed a linearity probe")
        # symmetry
        asym = abs(float(u @ Av) - float(v @ Au))
        if asym > 100 * tol * (np.linalg.norm(u) * np.linalg.norm(Av) + 1.0):
            raise NotSpdError(f"operator {A.label} failed a symmetry probe")
        # positivity
        if float(v @ Av) <= 0.0:
            raise NotSpdError(f"operator {A.label} failed a positivity probe")


def save_matrix_text(path, A):
    """Write a dense matrix in plain text: first line ``n``, then n rows."""
    A = np.asarray(A, dtype=float)
    n = A.shape[0]
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"{n}\n")
        for row in A:
            fh.write(" ".join(f"{x:.17g}" for x in row) + "\n")


def load_matrix_text(path):
    """Read a dense matrix written by :func:`save_matrix_text`."""
    with open(path, "r", encoding="utf-8") as fh:
        tokens = fh.read().split()
    if not tokens:
        raise ValueError(f"empty matrix file: {path}")
    n = int(tokens[0])
    data = np.array([float(t) for t in tokens[1:]], dtype=float)
    if data.size != n * n:
        raise ValueError(f"expected {n * n} entries in {path}, found {data.size}")
    return data.reshape(n, n)
