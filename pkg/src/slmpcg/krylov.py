"""Conjugate-gradient family with per-iteration tracing.

Provides plain CG, preconditioned CG, and deflated CG, all built on the
classic coupled two-term recurrences, plus Ritz-pair extraction from the
stored CG recurrence, an exact energy-norm error oracle based on the
weighted polynomial minimization that CG performs over the spectrum, and
the Chebyshev worst-case bound.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .linops import DimensionMismatchError, NotSpdError, as_vector

# p^T A p at or below this is treated as a breakdown rather than continued.
_BREAKDOWN_FLOOR = 1e-300

# Emergency relative-residual floor, active even with rtol=0: iterating past
# machine-level stagnation is meaningless and, for the projected recurrences
# of deflated CG, numerically explosive.
_RESIDUAL_FLOOR = 1e3 * np.finfo(float).eps

# Degree above which the error oracle switches from (scaled) monomials to a
# Chebyshev basis; scaled-Vandermonde least squares loses the true minimum
# from degree ~18 on realistic spectra, so the crossover sits well below.
_ORACLE_MONOMIAL_MAX_DEGREE = 12


class BreakdownError(RuntimeError):
    """The CG recurrence encountered non-positive curvature."""


class PreconditionerNotSpdError(NotSpdError):
    """A preconditioner application produced a non-positive inner product."""


class DeflationSubspaceError(RuntimeError):
    """The projected matrix W^T A W is singular."""


@dataclass
class KrylovConfig:
    """Solver controls.

    ``max_iters`` is the operational stopping rule (a fixed iteration
    budget); ``rtol`` optionally enables early exit once
    ``||r|| <= rtol * ||b||`` (0 disables the operational criterion, but
    a machine-precision residual floor always remains active so runs do
    not iterate past stagnation).  The recording flags keep the
    per-iteration iterates and the normalized residual history needed for
    Ritz extraction.
    """

    max_iters: int
    rtol: float = 0.0
    record_iterates: bool = False
    record_lanczos: bool = False

    def __post_init__(self):
        if self.max_iters < 1:
            raise ValueError(f"max_iters must be >= 1, got {self.max_iters}")
        if self.rtol < 0.0:
            raise ValueError(f"rtol must be nonnegative, got {self.rtol}")


@dataclass
class LanczosData:
    """CG recurrence scalars and the stored normalized residuals.

    The residual basis is kept without reorthogonalization; on hard
    problems run long enough, the basis loses orthogonality and Ritz
    extraction may produce duplicate ("ghost") copies of converged pairs,
    which :func:`extract_ritz_pairs` deduplicates.
    """

    alphas: list = field(default_factory=list)
    betas: list = field(default_factory=list)
    residual_basis: list = field(default_factory=list)


@dataclass
class SolveTrace:
    """Per-iteration record of a CG-family solve.

    ``residual_norms`` always includes iteration 0, so its length is
    ``terminated_at + 1``.  ``alphas[l-1]`` and ``betas[l-1]`` are the
    scalars that produced iterate ``l``.  ``quadratic_values`` holds
    ``x^T A x / 2 - b^T x`` at each iterate (the functional the solver
    decreases).  ``matvec_counts`` samples the cumulative matvec counter
    of each ledger operator after each iteration.
    """

    residual_norms: list = field(default_factory=list)
    alphas: list = field(default_factory=list)
    betas: list = field(default_factory=list)
    quadratic_values: list = field(default_factory=list)
    matvec_counts: list = field(default_factory=list)
    terminated_at: int = 0
    termination_reason: str = "max_iters"
    solution: np.ndarray | None = None
    iterates: list | None = None
    energy_errors: list | None = None
    lanczos: LanczosData | None = None

    def to_json_dict(self):
        doc = {
            "residual_norms": [float(x) for x in self.residual_norms],
            "alphas": [float(x) for x in self.alphas],
            "betas": [float(x) for x in self.betas],
            "quadratic_values": [float(x) for x in self.quadratic_values],
            "matvec_counts": self.matvec_counts,
            "terminated_at": self.terminated_at,
            "termination_reason": self.termination_reason,
            "solution": None if self.solution is None else self.solution.tolist(),
            "iterates": None
            if self.iterates is None
            else [x.tolist() for x in self.iterates],
            "energy_errors": None
            if self.energy_errors is None
            else [float(x) for x in self.energy_errors],
        }
        return doc

    def to_json(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_json_dict(), fh, indent=1)
            fh.write("\n")

    def to_csv(self, path):
        """Write the trace with the fixed schema.

        Header: ``iter,residual_norm,energy_error,alpha,beta,matvec_A1,
        matvec_A2``.  Fields without data are left empty.
        """

        def fmt(x):
            return "" if x is None else f"{x:.17g}"

        with open(path, "w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(
                ["iter", "residual_norm", "energy_error", "alpha", "beta",
                 "matvec_A1", "matvec_A2"]
            )
            for ell in range(self.terminated_at + 1):
                energy = (
                    self.energy_errors[ell] if self.energy_errors is not None else None
                )
                alpha = self.alphas[ell - 1] if ell >= 1 else None
                beta = self.betas[ell - 1] if ell >= 1 else None
                counts = self.matvec_counts[ell] if ell < len(self.matvec_counts) else {}
                writer.writerow(
                    [
                        ell,
                        fmt(self.residual_norms[ell]),
                        fmt(energy),
                        fmt(alpha),
                        fmt(beta),
                        str(counts["A1"]) if "A1" in counts else "",
                        str(counts["A2"]) if "A2" in counts else "",
                    ]
                )


def _ledger_snapshot(ledger):
    return {op.label: op.matvec_count for op in ledger}


class _Recorder:
    """Shared per-iteration bookkeeping for the three solvers."""

    def __init__(self, cfg, ledger, error_oracle):
        self.cfg = cfg
        self.ledger = ledger
        self.error_oracle = error_oracle
        self.trace = SolveTrace()
        if cfg.record_iterates:
            self.trace.iterates = []
        if error_oracle is not None:
            self.trace.energy_errors = []

    def record(self, x, resid_norm, quad):
        t = self.trace
        t.residual_norms.append(float(resid_norm))
        t.quadratic_values.append(float(quad))
        t.matvec_counts.append(_ledger_snapshot(self.ledger))
        if t.iterates is not None:
            t.iterates.append(x.copy())
        if t.energy_errors is not None:
            t.energy_errors.append(float(self.error_oracle(x)))


def _quad_value(x, b, r):
    # x^T A x / 2 - b^T x, using A x = b - r to avoid an extra matvec
    return 0.5 * float(x @ (b - r)) - float(b @ x)


def cg(A, b, x0=None, cfg=None, *, error_oracle=None, ledger=None):
    """Conjugate gradients on ``A x = b``.

    Implements the coupled two-term recurrences: with ``rho = r^T r``,
    each iteration computes ``q = A p``, ``alpha = rho / (q^T p)``,
    updates ``x`` and ``r``, then ``beta = rho_new / rho`` and
    ``p = r + beta p``.  Exactly one matvec with ``A`` is consumed per
    iteration (plus one for the initial residual).

    Parameters
    ----------
    A : LinearOperator
        SPD operator.
    b, x0 : arrays
        Right-hand side and initial guess (``x0`` defaults to zero).
    cfg : KrylovConfig
        Iteration budget and recording flags (defaults to ``max_iters=dim``).
    error_oracle : callable, optional
        Map ``x -> ||x* - x||_A`` used to fill ``energy_errors``; it must
        not consume counted matvecs if the ledger is to stay clean.
    ledger : sequence of LinearOperator, optional
        Operators whose cumulative matvec counts are sampled each
        iteration (defaults to ``[A]``).

    Returns
    -------
    SolveTrace
    """
    n = A.dim
    b = as_vector(b, n, name="right-hand side")
    x = np.zeros(n) if x0 is None else as_vector(x0, n, name="initial guess").copy()
    if cfg is None:
        cfg = KrylovConfig(max_iters=n)
    ledger = list(ledger) if ledger is not None else [A]

    rec = _Recorder(cfg, ledger, error_oracle)
    trace = rec.trace
    if cfg.record_lanczos:
        trace.lanczos = LanczosData()

    r = b - A(x)
    rho = float(r @ r)
    resid = np.sqrt(rho)
    bnorm = float(np.linalg.norm(b))
    threshold = max(cfg.rtol, _RESIDUAL_FLOOR) * bnorm
    rec.record(x, resid, _quad_value(x, b, r))
    if trace.lanczos is not None and resid > 0.0:
        trace.lanczos.residual_basis.append(r / resid)

    if resid == 0.0 or resid <= threshold:
        trace.terminated_at = 0
        trace.termination_reason = "rtol"
        trace.solution = x
        return trace

    p = r.copy()
    completed = 0
    reason = "max_iters"
    for _ in range(cfg.max_iters):
        q = A(p)
        curvature = float(p @ q)
        if curvature <= _BREAKDOWN_FLOOR:
            reason = "breakdown"
            break
        alpha = rho / curvature
        decrement = alpha * float(p @ r) - 0.5 * alpha * alpha * curvature
        x = x + alpha * p
        r = r - alpha * q
        rho_new = float(r @ r)
        beta = rho_new / rho
        resid = np.sqrt(rho_new)
        completed += 1
        trace.alphas.append(alpha)
        trace.betas.append(beta)
        if trace.lanczos is not None:
            trace.lanczos.alphas.append(alpha)
            trace.lanczos.betas.append(beta)
            if resid > 0.0:
                trace.lanczos.residual_basis.append(r / resid)
        rec.record(x, resid, trace.quadratic_values[-1] - decrement)
        if resid == 0.0 or resid <= threshold:
            reason = "rtol"
            break
        p = r + beta * p
        rho = rho_new

    trace.terminated_at = completed
    trace.termination_reason = reason
    trace.solution = x
    return trace


def _prec_apply(F):
    if F is None:
        return lambda v: v
    if callable(F):
        return F
    if hasattr(F, "apply_F"):
        return F.apply_F
    raise TypeError("preconditioner must be callable or expose apply_F")


def pcg(A, F, b, x0=None, cfg=None, *, error_oracle=None, ledger=None):
    """Preconditioned conjugate gradients on ``A x = b`` with SPD ``F``.

    Each iteration applies ``A`` once and ``F`` once, with
    ``z = F r`` and ``rho = r^T z``.  With ``F = U^2`` the iterates agree
    with plain CG applied to the split-preconditioned system
    ``U A U y = U b`` mapped back by ``x = U y``.

    ``F`` may be a callable ``v -> F v`` or any object exposing
    ``apply_F`` (such as a scaled spectral preconditioner).  A
    non-positive ``r^T F r`` with a nonzero residual raises
    :class:`PreconditionerNotSpdError`.
    """
    n = A.dim
    b = as_vector(b, n, name="right-hand side")
    x = np.zeros(n) if x0 is None else as_vector(x0, n, name="initial guess").copy()
    if cfg is None:
        cfg = KrylovConfig(max_iters=n)
    ledger = list(ledger) if ledger is not None else [A]
    apply_F = _prec_apply(F)

    rec = _Recorder(cfg, ledger, error_oracle)
    trace = rec.trace
    if cfg.record_lanczos:
        trace.lanczos = LanczosData()

    r = b - A(x)
    resid = float(np.linalg.norm(r))
    bnorm = float(np.linalg.norm(b))
    threshold = max(cfg.rtol, _RESIDUAL_FLOOR) * bnorm
    rec.record(x, resid, _quad_value(x, b, r))
    if trace.lanczos is not None and resid > 0.0:
        trace.lanczos.residual_basis.append(r / resid)
    if resid == 0.0 or resid <= threshold:
        trace.terminated_at = 0
        trace.termination_reason = "rtol"
        trace.solution = x
        return trace

    z = apply_F(r)
    rho = float(r @ z)
    if rho <= 0.0:
        raise PreconditionerNotSpdError(
            f"r^T F r = {rho:.3e} is not positive for a nonzero residual"
        )

    p = z + 0.0  # force a copy; F may have returned its argument
    completed = 0
    reason = "max_iters"
    for _ in range(cfg.max_iters):
        q = A(p)
        curvature = float(p @ q)
        if curvature <= _BREAKDOWN_FLOOR:
            reason = "breakdown"
            break
        alpha = rho / curvature
        decrement = alpha * float(p @ r) - 0.5 * alpha * alpha * curvature
        x = x + alpha * p
        r = r - alpha * q
        resid_sq = float(r @ r)
        resid = np.sqrt(resid_sq)
        completed += 1
        trace.alphas.append(alpha)
        if resid == 0.0:
            trace.betas.append(0.0)
            rec.record(x, resid, trace.quadratic_values[-1] - decrement)
            reason = "rtol"
            break
        z = apply_F(r)
        rho_new = float(r @ z)
        if rho_new <= 0.0:
            raise PreconditionerNotSpdError(
                f"r^T F r = {rho_new:.3e} is not positive for a nonzero residual"
            )
        beta = rho_new / rho
        trace.betas.append(beta)
        if trace.lanczos is not None:
            trace.lanczos.alphas.append(alpha)
            trace.lanczos.betas.append(beta)
            trace.lanczos.residual_basis.append(r / resid)
        rec.record(x, resid, trace.quadratic_values[-1] - decrement)
        if resid <= threshold:
            reason = "rtol"
            break
        p = z + beta * p
        rho = rho_new

    trace.terminated_at = completed
    trace.termination_reason = reason
    trace.solution = x
    return trace


def deflated_cg(A, W, b, x_minus1=None, cfg=None, *, error_oracle=None, ledger=None):
    """Deflated CG with deflation space spanned by the columns of ``W``.

    The start-up phase forms ``A W`` (``k`` counted matvecs), factorizes
    ``E = W^T A W``, computes the projected initial guess
    ``x_0 = x_{-1} + W E^{-1} W^T r_{-1}``, and the projected first
    direction.  Every direction update subtracts ``W E^{-1} (A W)^T r``,
    so ``W^T r_j = 0`` and ``W^T A p_j = 0`` are maintained throughout;
    the projection reuses the stored ``A W`` and costs no extra matvecs.

    Raises :class:`DeflationSubspaceError` if ``E`` is singular.
    """
    n = A.dim
    b = as_vector(b, n, name="right-hand side")
    W = np.asarray(W, dtype=float)
    if W.ndim != 2 or W.shape[0] != n:
        raise DimensionMismatchError(
            f"deflation basis must have shape ({n}, k), got {W.shape}"
        )
    x = (
        np.zeros(n)
        if x_minus1 is None
        else as_vector(x_minus1, n, name="initial guess").copy()
    )
    if cfg is None:
        cfg = KrylovConfig(max_iters=n)
    ledger = list(ledger) if ledger is not None else [A]

    r = b - A(x)
    AW = np.column_stack([A(W[:, j]) for j in range(W.shape[1])])
    E = W.T @ AW
    E = 0.5 * (E + E.T)
    try:
        E_factor = scipy.linalg.cho_factor(E)
    except (np.linalg.LinAlgError, scipy.linalg.LinAlgError) as exc:
        raise DeflationSubspaceError(f"W^T A W is not SPD: {exc}") from exc

    def project_out(v):
        return W @ scipy.linalg.cho_solve(E_factor, AW.T @ v)

    coeff = scipy.linalg.cho_solve(E_factor, W.T @ r)
    x = x + W @ coeff
    r = r - AW @ coeff

    rec = _Recorder(cfg, ledger, error_oracle)
    trace = rec.trace
    rho = float(r @ r)
    resid = np.sqrt(rho)
    bnorm = float(np.linalg.norm(b))
    threshold = max(cfg.rtol, _RESIDUAL_FLOOR) * bnorm
    rec.record(x, resid, _quad_value(x, b, r))
    if resid == 0.0 or resid <= threshold:
        trace.terminated_at = 0
        trace.termination_reason = "rtol"
        trace.solution = x
        return trace

    p = r - project_out(r)
    completed = 0
    reason = "max_iters"
    for _ in range(cfg.max_iters):
        q = A(p)
        curvature = float(p @ q)
        if curvature <= _BREAKDOWN_FLOOR:
            reason = "breakdown"
            break
        alpha = rho / curvature
        decrement = alpha * float(p @ r) - 0.5 * alpha * alpha * curvature
        x = x + alpha * p
        r = r - alpha * q
        rho_new = float(r @ r)
        beta = rho_new / rho
        resid = np.sqrt(rho_new)
        completed += 1
        trace.alphas.append(alpha)
        trace.betas.append(beta)
        rec.record(x, resid, trace.quadratic_values[-1] - decrement)
        if resid == 0.0 or resid <= threshold:
            reason = "rtol"
            break
        p = beta * p + r - project_out(r)
        rho = rho_new

    trace.terminated_at = completed
    trace.termination_reason = reason
    trace.solution = x
    return trace


@dataclass(frozen=True)
class RitzPairs:
    """Converged Ritz values/vectors with their residual estimates.

    ``values`` are decreasing and positive; ``vectors`` (n x k) are
    orthonormal; ``residual_bounds[i]`` is the a-posteriori estimate of
    ``||A y_i - mu_i y_i||_2`` from the recurrence tail.
    """

    values: np.ndarray
    vectors: np.ndarray
    residual_bounds: np.ndarray


def extract_ritz_pairs(ld, A=None, eps=1e-3, k_max=None):
    """Approximate eigenpairs from a completed CG run.

    Builds the tridiagonal matrix of the underlying Lanczos process from
    the CG scalars (diagonal ``1/alpha_j + beta_j/alpha_{j-1}``,
    off-diagonal ``sqrt(beta_j)/alpha_{j-1}``), eigendecomposes it, and
    assembles Ritz vectors in the stored residual basis with the
    alternating-sign convention.  A pair is accepted when its residual
    estimate (recurrence tail times last eigenvector component) is at
    most ``eps`` times its Ritz value.

    Without reorthogonalization the basis may carry duplicate converged
    directions; candidates that are numerically parallel to an already
    accepted vector are dropped and the accepted set is orthonormalized
    on the fly.  Pairs are returned largest-first, at most ``k_max``.

    ``A`` is accepted for interface symmetry but not applied; all
    estimates come from the recurrence itself.
    """
    if ld is None or len(ld.alphas) == 0:
        raise ValueError("Ritz extraction requires a non-empty recurrence")
    m = len(ld.alphas)
    alphas = np.asarray(ld.alphas, dtype=float)
    betas = np.asarray(ld.betas, dtype=float)
    if len(ld.residual_basis) < m:
        raise ValueError(
            "Ritz extraction requires the stored residual basis "
            "(run the solver with record_lanczos=True)"
        )

    diag = np.empty(m)
    diag[0] = 1.0 / alphas[0]
    if m > 1:
        diag[1:] = 1.0 / alphas[1:] + betas[: m - 1] / alphas[: m - 1]
    off = np.sqrt(betas[: m - 1]) / alphas[: m - 1]
    if m == 1:
        mu = np.array([diag[0]])
        U = np.ones((1, 1))
    else:
        mu, U = scipy.linalg.eigh_tridiagonal(diag, off)
    tail = np.sqrt(betas[m - 1]) / alphas[m - 1] if len(betas) >= m else 0.0
    estimates = tail * np.abs(U[m - 1, :])

    signs = np.array([(-1.0) ** j for j in range(m)])
    V = np.column_stack(ld.residual_basis[:m]) * signs

    order = np.argsort(mu)[::-1]
    accepted_vals, accepted_vecs, accepted_est = [], [], []
    for idx in order:
        if k_max is not None and len(accepted_vals) >= k_max:
            break
        if mu[idx] <= 0.0 or estimates[idx] > eps * mu[idx]:
            continue
        y = V @ U[:, idx]
        norm_y = np.linalg.norm(y)
        if norm_y == 0.0:
            continue
        y = y / norm_y
        for q in accepted_vecs:
            y = y - (q @ y) * q
        residual = np.linalg.norm(y)
        if residual < 0.1:
            # numerically parallel to an accepted pair: ghost copy
            continue
        accepted_vals.append(float(mu[idx]))
        accepted_vecs.append(y / residual)
        accepted_est.append(float(estimates[idx]))

    k = len(accepted_vals)
    vectors = (
        np.column_stack(accepted_vecs) if k else np.zeros((V.shape[0], 0))
    )
    return RitzPairs(
        values=np.asarray(accepted_vals),
        vectors=vectors,
        residual_bounds=np.asarray(accepted_est),
    )


def _merge_nodes(nodes, weights, rtol=1e-12):
    order = np.argsort(nodes)
    nodes = nodes[order]
    weights = weights[order]
    merged_n, merged_w = [nodes[0]], [weights[0]]
    for t, w in zip(nodes[1:], weights[1:]):
        if abs(t - merged_n[-1]) <= rtol * max(abs(t), abs(merged_n[-1])):
            merged_w[-1] += w
        else:
            merged_n.append(t)
            merged_w.append(w)
    return np.asarray(merged_n), np.asarray(merged_w)


def _min_via_orthonormal_polys(nodes, weights, ell):
    """Minimum of sum_i w_i q(t_i)^2 over q(0)=1, deg q <= ell, using
    orthonormal polynomials of the discrete measure.

    Polynomials are represented by their weighted values on the nodes and
    built by a fully reorthogonalized three-term process; their values at
    zero are propagated through the same linear operations.  With the
    expansion q = sum c_j phi_j the objective is ||c||^2 and the
    constraint sum c_j phi_j(0) = 1, so the minimum is
    1 / sum_{j<=ell} phi_j(0)^2.
    """
    sqrt_w = np.sqrt(weights)
    total = np.linalg.norm(sqrt_w)
    basis_vecs = [sqrt_w / total]
    z_values = [1.0 / total]
    for _ in range(ell):
        new_vec = nodes * basis_vecs[-1]
        new_z = 0.0
        for _ in range(2):  # reorthogonalize twice
            for v, zv in zip(basis_vecs, z_values):
                c = float(v @ new_vec)
                new_vec = new_vec - c * v
                new_z -= c * zv
        nrm = np.linalg.norm(new_vec)
        if nrm <= 1e-13 * float(np.abs(nodes).max()):
            break  # node support exhausted
        basis_vecs.append(new_vec / nrm)
        z_values.append(new_z / nrm)
    return 1.0 / float(np.sum(np.square(z_values)))


def energy_error_oracle(eig, r0, k, theta, ell):
    """Exact energy-norm error of (P)CG at iteration ``ell``.

    Evaluates the minimum over polynomials ``q`` of degree at most
    ``ell`` with ``q(0) = 1`` of::

        sum_{i<=k} (eta_i^2/lambda_i) q(theta)^2
          + sum_{i>k} (eta_i^2/lambda_i) q(lambda_i)^2

    where ``eta_i`` is the component of the initial residual along the
    ``i``-th eigenvector.  With ``k = 0`` (``theta`` ignored) this is the
    exact CG error; with ``k > 0`` it is the exact error of PCG under the
    scaled spectral preconditioner that clusters the top ``k``
    eigenvalues at ``theta``.  Returns the square root.

    The minimization is a linear least-squares problem in the polynomial
    coefficients; a scaled-monomial basis is used while its design matrix
    is well conditioned, with a fallback to orthonormal polynomials of
    the discrete node measure (exact to round-off at any degree).  If
    ``ell`` reaches the number of distinct weighted nodes, the minimum is
    exactly zero.
    """
    if ell < 0:
        raise ValueError(f"polynomial degree must be nonnegative, got {ell}")
    lam = np.asarray(eig.values, dtype=float)
    n = lam.shape[0]
    if not 0 <= k < n:
        raise ValueError(f"k must satisfy 0 <= k < n, got k={k}, n={n}")
    if k > 0 and theta <= 0.0:
        raise ValueError(f"theta must be positive, got {theta}")
    r0 = as_vector(r0, n, name="initial residual")
    eta = eig.vectors.T @ r0
    weights = eta**2 / lam

    if k > 0:
        nodes = np.concatenate(([theta], lam[k:]))
        node_weights = np.concatenate(([weights[:k].sum()], weights[k:]))
    else:
        nodes = lam.copy()
        node_weights = weights.copy()

    total = float(node_weights.sum())
    if total == 0.0:
        return 0.0
    keep = node_weights > 1e-30 * total
    nodes, node_weights = _merge_nodes(nodes[keep], node_weights[keep])

    if ell == 0:
        return float(np.sqrt(node_weights.sum()))
    if ell >= nodes.size:
        return 0.0

    if ell <= _ORACLE_MONOMIAL_MAX_DEGREE:
        # q(t) = 1 + sum_j c_j (t/t_max)^j, j = 1..ell
        sqrt_w = np.sqrt(node_weights)
        basis = np.column_stack([(nodes / nodes.max()) ** j for j in range(1, ell + 1)])
        design = sqrt_w[:, None] * basis
        if np.linalg.cond(design) < 1e8:
            rhs = -sqrt_w
            coeffs, *_ = np.linalg.lstsq(design, rhs, rcond=None)
            return float(np.linalg.norm(design @ coeffs - rhs))
    return float(np.sqrt(_min_via_orthonormal_polys(nodes, node_weights, ell)))


def chebyshev_bound(kappa, ell):
    """Worst-case CG energy-error reduction ``2 ((sqrt(k)-1)/(sqrt(k)+1))^l``."""
    if kappa < 1.0:
        raise ValueError(f"condition number must be >= 1, got {kappa}")
    if ell < 0:
        raise ValueError(f"iteration index must be >= 0, got {ell}")
    root = np.sqrt(kappa)
    return float(2.0 * ((root - 1.0) / (root + 1.0)) ** ell)
