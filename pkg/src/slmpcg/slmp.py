"""Scaled spectral limited-memory preconditioning.

Builds the low-rank preconditioner ``F = U^2`` from k (approximate)
eigenpairs, where::

    U v = v + sum_i (sqrt(theta/lambda_i) - 1) (s_i^T v) s_i

clusters the captured eigenvalues at the scaling parameter ``theta`` and
leaves the rest of the spectrum untouched.  Also provides the scaling
strategies (fixed, unit, smallest captured eigenvalue, residual-weighted
spectral mean, midrange), deflation-style initial guesses, composition
across a sequence of systems, and the midrange gap diagnostic.
"""

from __future__ import annotations

import numpy as np

from .linops import DimensionMismatchError, as_vector


class BasisError(ValueError):
    """A spectral basis failed orthonormality or ordering checks."""


class DegenerateResidualError(RuntimeError):
    """The residual lies (numerically) inside the captured subspace."""


class SpectralBasis:
    """Orthonormal (approximate) eigenpairs ``(S_k, Lambda_k)``.

    ``vectors`` is n x k with orthonormal columns; ``values`` holds the
    matching strictly positive, non-increasing (approximate)
    eigenvalues.  ``k = 0`` denotes an empty basis.
    """

    def __init__(self, vectors, values):
        vectors = np.asarray(vectors, dtype=float)
        values = np.asarray(values, dtype=float)
        if vectors.ndim != 2:
            raise BasisError(f"vectors must be 2-d, got shape {vectors.shape}")
        if values.ndim != 1 or values.shape[0] != vectors.shape[1]:
            raise BasisError(
                f"got {vectors.shape[1]} columns but {values.shape[0]} values"
            )
        k = vectors.shape[1]
        if k > 0:
            gram = vectors.T @ vectors
            if float(np.abs(gram - np.eye(k)).max()) > 1e-8:
                raise BasisError("basis columns are not orthonormal")
            if values[-1] <= 0.0:
                raise BasisError("basis values must be strictly positive")
            if np.any(np.diff(values) > 0.0):
                raise BasisError("basis values must be non-increasing")
        self.vectors = vectors
        self.values = values

    @property
    def n(self):
        return self.vectors.shape[0]

    @property
    def k(self):
        return self.vectors.shape[1]

    @classmethod
    def empty(cls, n):
        return cls(np.zeros((n, 0)), np.zeros(0))

    def save(self, path):
        """Text serialization: header ``n k``, the k values, then the
        k columns (one line of n numbers per column)."""
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(f"{self.n} {self.k}\n")
            fh.write(" ".join(f"{v:.17g}" for v in self.values) + "\n")
            for j in range(self.k):
                fh.write(" ".join(f"{x:.17g}" for x in self.vectors[:, j]) + "\n")

    @classmethod
    def load(cls, path):
        with open(path, "r", encoding="utf-8") as fh:
            tokens = fh.read().split()
        if len(tokens) < 2:
            raise BasisError(f"truncated basis file: {path}")
        n, k = int(tokens[0]), int(tokens[1])
        data = np.array([float(t) for t in tokens[2:]], dtype=float)
        if data.size != k + n * k:
            raise BasisError(f"expected {k + n * k} numbers in {path}, found {data.size}")
        values = data[:k]
        vectors = data[k:].reshape(k, n).T if k else np.zeros((n, 0))
        return cls(vectors, values)


class ScaledSpectralPreconditioner:
    """Low-rank update preconditioner ``F = U^2`` holding its scaling.

    All applications are O(nk) closed forms; no n x n matrix is ever
    materialized.  ``apply_U`` and ``apply_U_inverse`` use the factor
    coefficients ``sqrt(theta/lambda_i) - 1`` and ``sqrt(lambda_i/theta) - 1``
    respectively, and ``apply_F`` composes to ``U(U(v))`` exactly.
    """

    def __init__(self, basis, theta):
        if not isinstance(basis, SpectralBasis):
            basis = SpectralBasis(getattr(basis, "vectors"), getattr(basis, "values"))
        if theta <= 0.0:
            raise ValueError(f"theta must be positive, got {theta}")
        self.basis = basis
        self.theta = float(theta)
        if basis.k:
            ratio = self.theta / basis.values
            self._f_coeff = ratio - 1.0
            self._u_coeff = np.sqrt(ratio) - 1.0
            self._uinv_coeff = np.sqrt(1.0 / ratio) - 1.0
        else:
            self._f_coeff = self._u_coeff = self._uinv_coeff = np.zeros(0)

    @property
    def dim(self):
        return self.basis.n

    @property
    def k(self):
        return self.basis.k

    def _lowrank(self, v, coeff):
        v = as_vector(v, self.basis.n)
        if self.basis.k == 0:
            return v.copy()
        S = self.basis.vectors
        return v + S @ (coeff * (S.T @ v))

    def apply_F(self, v):
        """Apply ``F = U^2`` in one O(nk) pass."""
        return self._lowrank(v, self._f_coeff)

    def apply_U(self, v):
        return self._lowrank(v, self._u_coeff)

    def apply_U_inverse(self, v):
        return self._lowrank(v, self._uinv_coeff)

    __call__ = apply_F


def make_preconditioner(basis, theta):
    """Build the scaled spectral preconditioner for the given pairs."""
    return ScaledSpectralPreconditioner(basis, theta)


THETA_STRATEGIES = ("fixed", "one", "lambda_k", "theta_r", "mid_range")


def resolve_theta(strategy, basis, A_prev=None, r0=None, lambda_n_hint=None,
                  fixed_value=None):
    """Resolve the scaling parameter for a given strategy.

    Strategies
    ----------
    ``"one"``
        The conventional unit clustering.
    ``"lambda_k"``
        The smallest captured eigenvalue; guarantees that the
        preconditioned energy error never exceeds the unpreconditioned
        one when the pairs are exact.
    ``"mid_range"``
        ``(lambda_k + lambda_n_hint) / 2``, the practical midpoint that
        tightens the gap between the cluster and the trailing spectrum.
    ``"theta_r"``
        The residual-weighted mean of the trailing spectrum,
        ``(r0^T A r0 - r0^T S L S^T r0) / (r0^T r0 - r0^T S S^T r0)``,
        which minimizes the first-iterate energy error; consumes exactly
        one matvec with ``A_prev``.
    ``"fixed"``
        ``fixed_value`` as given.  Passing a number as ``strategy`` is a
        shorthand for this.

    Raises :class:`DegenerateResidualError` when the ``theta_r``
    denominator vanishes (residual inside the captured subspace); the
    caller may then fall back to ``mid_range``.
    """
    if isinstance(strategy, (int, float)) and not isinstance(strategy, bool):
        fixed_value, strategy = float(strategy), "fixed"
    if strategy not in THETA_STRATEGIES:
        raise ValueError(f"unknown theta strategy {strategy!r}")

    if strategy == "fixed":
        if fixed_value is None:
            raise ValueError("fixed strategy requires fixed_value")
        theta = float(fixed_value)
    elif strategy == "one":
        theta = 1.0
    elif strategy == "lambda_k":
        if basis is None or basis.k == 0:
            raise ValueError("lambda_k strategy requires a non-empty basis")
        theta = float(basis.values[-1])
    elif strategy == "mid_range":
        if basis is None or basis.k == 0:
            raise ValueError("mid_range strategy requires a non-empty basis")
        if lambda_n_hint is None:
            raise ValueError("mid_range strategy requires lambda_n_hint")
        theta = 0.5 * (float(basis.values[-1]) + float(lambda_n_hint))
    else:  # theta_r
        if basis is None or A_prev is None or r0 is None:
            raise ValueError("theta_r strategy requires basis, A_prev and r0")
        r0 = as_vector(r0, A_prev.dim, name="r0")
        proj = basis.vectors.T @ r0
        numerator = float(r0 @ A_prev(r0)) - float(proj @ (basis.values * proj))
        denominator = float(r0 @ r0) - float(proj @ proj)
        if denominator <= 1e-14 * float(r0 @ r0):
            raise DegenerateResidualError(
                "residual lies in the captured subspace; "
                "fall back to the mid_range strategy"
            )
        theta = numerator / denominator

    if theta <= 0.0:
        raise ValueError(f"resolved theta must be positive, got {theta}")
    return theta


def improvement_interval(lambda_k, lambda_k1):
    """Scaling interval within which the adversarial first-iterate
    comparison favors the preconditioned run.

    Returns ``(lambda_{k+1}^2 / lambda_k, lambda_k)``: for the worst-case
    start concentrating the residual on eigenvalues ``k`` and ``k+1``,
    the first preconditioned iterate beats the plain one exactly when
    ``theta`` lies inside this interval.
    """
    if not lambda_k >= lambda_k1 > 0.0:
        raise ValueError(
            f"need lambda_k >= lambda_k1 > 0, got ({lambda_k}, {lambda_k1})"
        )
    return (lambda_k1**2 / lambda_k, lambda_k)


def deflation_initial_guess(basis, A, b, x0):
    """Project the captured components out of the start:
    ``x0 + S L^{-1} S^T (b - A x0)``.  Consumes one matvec with ``A``."""
    b = as_vector(b, A.dim, name="right-hand side")
    x0 = as_vector(x0, A.dim, name="initial guess")
    r0 = b - A(x0)
    if basis.k == 0:
        return x0.copy()
    S = basis.vectors
    return x0 + S @ ((S.T @ r0) / basis.values)


def init_slmp_guess(prec, b_new):
    """Initial guess ``U^{-1} S L^{-1} S^T b`` for the split-preconditioned
    system, chosen so the recovered unpreconditioned guess equals the
    deflation guess for a zero prior iterate."""
    basis = prec.basis
    b_new = as_vector(b_new, basis.n, name="right-hand side")
    if basis.k == 0:
        return np.zeros(basis.n)
    S = basis.vectors
    return prec.apply_U_inverse(S @ ((S.T @ b_new) / basis.values))


class ComposedPreconditioner:
    """Ordered composition of factors accumulated over a system sequence.

    With factors ``U_1, ..., U_{j-1}`` in build order, ``apply_U``
    computes ``U_{j-1} ... U_1 v`` (first-built applied first) and
    ``apply_U_transpose`` the reversed product, so the split operator is
    ``apply_U o A o apply_U_transpose`` and ``apply_F`` is
    ``apply_U_transpose o apply_U``.  Cost is O(n * sum k_j) per apply.
    """

    def __init__(self, factors):
        factors = list(factors)
        if not factors:
            raise ValueError("composition requires at least one factor")
        dims = {f.dim for f in factors}
        if len(dims) != 1:
            raise DimensionMismatchError(f"mixed factor dimensions: {sorted(dims)}")
        self.factors = factors

    @property
    def dim(self):
        return self.factors[0].dim

    @property
    def thetas(self):
        return [f.theta for f in self.factors]

    def apply_U(self, v):
        for f in self.factors:
            v = f.apply_U(v)
        return v

    def apply_U_transpose(self, v):
        for f in reversed(self.factors):
            v = f.apply_U(v)
        return v

    def apply_F(self, v):
        return self.apply_U_transpose(self.apply_U(v))

    __call__ = apply_F


def compose(precs):
    """Compose preconditioners accumulated over a sequence of systems."""
    return ComposedPreconditioner(precs)


def midrange_ratio(theta, lambda_k1, lambda_n):
    """Gap diagnostic ``max(|lambda_{k+1} - theta|, |theta - lambda_n|) / theta``.

    The one-step contraction factor of the deflation comparison; it is
    minimized by ``theta = (lambda_{k+1} + lambda_n) / 2``.
    """
    if theta <= 0.0:
        raise ValueError(f"theta must be positive, got {theta}")
    if not lambda_k1 >= lambda_n > 0.0:
        raise ValueError(
            f"need lambda_k1 >= lambda_n > 0, got ({lambda_k1}, {lambda_n})"
        )
    return max(abs(lambda_k1 - theta), abs(theta - lambda_n)) / theta
