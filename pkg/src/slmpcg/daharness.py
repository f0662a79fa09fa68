"""Desk-scale variational assimilation harness on the Lorenz-96 model.

Twin-experiment pipeline: cyclic Lorenz-96 dynamics integrated with RK4,
hand-differentiated tangent-linear and adjoint sweeps, a circulant
diffusion-style background covariance with its symmetric root, synthetic
observations, first-level-preconditioned quadratic subproblems, and a
truncated Gauss-Newton driver that dispatches the second-loop solver per
method (plain CG, scaled-spectral-preconditioned CG with several scaling
strategies, or deflated CG).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .krylov import KrylovConfig, cg, deflated_cg, extract_ritz_pairs
from .linops import LinearOperator, as_vector, symmetric_sqrt
from .slmp import (
    ScaledSpectralPreconditioner,
    SpectralBasis,
    compose,
    init_slmp_guess,
    resolve_theta,
)


class CovarianceError(RuntimeError):
    """Background covariance assembly produced a non-SPD matrix."""


class StaleTrajectoryError(RuntimeError):
    """A linearization trajectory does not match the current iterate."""


# ---------------------------------------------------------------------------
# Lorenz-96 dynamics and its derivatives


@dataclass(frozen=True)
class Lorenz96Model:
    """Cyclic Lorenz-96 configuration: dimension, forcing, RK4 step and
    number of steps between observation times."""

    n: int
    forcing: float = 8.0
    dt: float = 0.025
    steps_per_window: int = 2

    def __post_init__(self):
        if self.n < 4:
            raise ValueError(f"Lorenz-96 needs n >= 4, got {self.n}")
        if self.dt <= 0.0 or self.steps_per_window < 1:
            raise ValueError("dt must be positive and steps_per_window >= 1")

    @property
    def window_length(self):
        return self.dt * self.steps_per_window


def lorenz96_rhs(state, forcing):
    """Cyclic advection-damping-forcing tendency
    ``(x_{i+1} - x_{i-2}) x_{i-1} - x_i + F``."""
    state = np.asarray(state, dtype=float)
    if state.shape[0] < 4:
        raise ValueError(f"Lorenz-96 needs n >= 4, got {state.shape[0]}")
    return (np.roll(state, -1) - np.roll(state, 2)) * np.roll(state, 1) - state + forcing


def _rhs_jvp(state, v):
    # directional derivative of lorenz96_rhs at `state` along `v`
    return (
        (np.roll(v, -1) - np.roll(v, 2)) * np.roll(state, 1)
        + (np.roll(state, -1) - np.roll(state, 2)) * np.roll(v, 1)
        - v
    )


def _rhs_vjp(state, w):
    # exact transpose of _rhs_jvp, term by term
    return (
        np.roll(np.roll(state, 1) * w, 1)
        - np.roll(np.roll(state, 1) * w, -2)
        + np.roll((np.roll(state, -1) - np.roll(state, 2)) * w, -1)
        - w
    )


def rk4_step(state, dt, forcing):
    k1 = lorenz96_rhs(state, forcing)
    k2 = lorenz96_rhs(state + 0.5 * dt * k1, forcing)
    k3 = lorenz96_rhs(state + 0.5 * dt * k2, forcing)
    k4 = lorenz96_rhs(state + dt * k3, forcing)
    return state + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def _rk4_stage_states(state, dt, forcing):
    k1 = lorenz96_rhs(state, forcing)
    s2 = state + 0.5 * dt * k1
    k2 = lorenz96_rhs(s2, forcing)
    s3 = state + 0.5 * dt * k2
    k3 = lorenz96_rhs(s3, forcing)
    s4 = state + dt * k3
    return state, s2, s3, s4


def rk4_step_tlm(state, delta, dt, forcing):
    """Differentiated RK4 step: propagate the perturbation ``delta``."""
    s1, s2, s3, s4 = _rk4_stage_states(state, dt, forcing)
    a1 = _rhs_jvp(s1, delta)
    a2 = _rhs_jvp(s2, delta + 0.5 * dt * a1)
    a3 = _rhs_jvp(s3, delta + 0.5 * dt * a2)
    a4 = _rhs_jvp(s4, delta + dt * a3)
    return delta + (dt / 6.0) * (a1 + 2.0 * a2 + 2.0 * a3 + a4)


def rk4_step_adjoint(state, wbar, dt, forcing):
    """Exact transpose of :func:`rk4_step_tlm` (discrete adjoint)."""
    s1, s2, s3, s4 = _rk4_stage_states(state, dt, forcing)
    vbar = wbar.copy()
    a1bar = (dt / 6.0) * wbar
    a2bar = (dt / 3.0) * wbar
    a3bar = (dt / 3.0) * wbar
    a4bar = (dt / 6.0) * wbar
    t = _rhs_vjp(s4, a4bar)
    vbar += t
    a3bar = a3bar + dt * t
    t = _rhs_vjp(s3, a3bar)
    vbar += t
    a2bar = a2bar + 0.5 * dt * t
    t = _rhs_vjp(s2, a2bar)
    vbar += t
    a1bar = a1bar + 0.5 * dt * t
    vbar += _rhs_vjp(s1, a1bar)
    return vbar


def integrate(model, w0, t_target):
    """Propagate ``w0`` to ``t_target`` with fixed-step RK4.

    ``t_target`` must lie on the step grid ``k * dt``.
    """
    w0 = as_vector(w0, model.n, name="state")
    steps_float = t_target / model.dt
    steps = int(round(steps_float))
    if abs(steps_float - steps) > 1e-9 * max(1.0, abs(steps_float)) or steps < 0:
        raise ValueError(f"t_target={t_target} is not on the dt={model.dt} grid")
    state = w0.copy()
    for _ in range(steps):
        state = rk4_step(state, model.dt, model.forcing)
    return state


def integrate_steps(model, w0, n_steps):
    """Integrate ``n_steps`` RK4 steps, returning all intermediate states
    as an ``(n_steps + 1, n)`` array."""
    w0 = as_vector(w0, model.n, name="state")
    states = np.empty((n_steps + 1, model.n))
    states[0] = w0
    for t in range(n_steps):
        states[t + 1] = rk4_step(states[t], model.dt, model.forcing)
    return states


# ---------------------------------------------------------------------------
# Observations and background covariance


@dataclass(frozen=True)
class ObservationSet:
    """Observation times, uniform selection indices, values and noise std."""

    times: tuple
    indices: tuple
    values: tuple
    sigma_r: float

    def __post_init__(self):
        if len(self.times) != len(self.indices) or len(self.times) != len(self.values):
            raise ValueError("times, indices and values must align")
        if self.sigma_r <= 0.0:
            raise ValueError(f"sigma_r must be positive, got {self.sigma_r}")
        for idx, vals in zip(self.indices, self.values):
            idx = np.asarray(idx)
            if idx.ndim != 1 or np.any(np.diff(idx) <= 0) and idx.size > 1:
                raise ValueError("selection indices must be strictly increasing")
            if idx.size and idx[0] < 0:
                raise ValueError("selection indices must be nonnegative")
            if len(vals) != idx.size:
                raise ValueError("observation vector length must match selection")

    @property
    def n_windows(self):
        return len(self.times)

    @property
    def m_total(self):
        return sum(len(i) for i in self.indices)


def uniform_selection(n, m):
    """Evenly spread selection of m of n components (strictly increasing)."""
    if not 1 <= m <= n:
        raise ValueError(f"need 1 <= m <= n, got m={m}, n={n}")
    return np.floor(np.arange(m) * (n / m)).astype(int)


class BackgroundCovariance:
    """Circulant diffusion-style background covariance.

    The correlation is the squared inverse discrete Helmholtz operator
    ``(I - L^2 D)^{-2}`` on the cyclic domain (``D`` the second
    difference), rescaled so every diagonal entry equals ``sigma_b**2``.
    This keeps the matrix provably SPD with a modest condition number at
    any length scale, while retaining a smooth bell-shaped correlation.
    ``root`` is the symmetric square root.
    """

    def __init__(self, n, sigma_b, length_scale):
        if n < 1:
            raise ValueError(f"n must be positive, got {n}")
        if sigma_b <= 0.0:
            raise ValueError(f"sigma_b must be positive, got {sigma_b}")
        if length_scale < 0.0:
            raise ValueError(f"length_scale must be nonnegative, got {length_scale}")
        self.n = int(n)
        self.sigma_b = float(sigma_b)
        self.length_scale = float(length_scale)

        k = np.arange(n // 2 + 1)
        spectrum = (1.0 + 4.0 * length_scale**2 * np.sin(np.pi * k / n) ** 2) ** -2.0
        first_col = np.fft.irfft(spectrum, n)
        corr = scipy.linalg.circulant(first_col)
        corr = 0.5 * (corr + corr.T)
        scale = self.sigma_b**2 / corr[0, 0]
        B = corr * scale
        eig = np.linalg.eigvalsh(B)
        if eig[0] <= 0.0:
            raise CovarianceError(
                f"assembled covariance has eigenvalue {eig[0]:.3e} <= 0"
            )
        self.matrix = B
        self.root = symmetric_sqrt(B)
        self._cho = scipy.linalg.cho_factor(B)

    def solve(self, v):
        """Apply the inverse covariance."""
        return scipy.linalg.cho_solve(self._cho, np.asarray(v, dtype=float))


def build_background(n, sigma_b, length_scale):
    """Assemble the background covariance and its symmetric root."""
    return BackgroundCovariance(n, sigma_b, length_scale)


# ---------------------------------------------------------------------------
# Linearization and the quadratic subproblem


@dataclass
class Trajectory:
    """States along the window span at a fixed linearization point."""

    model: Lorenz96Model
    w0: np.ndarray
    states: np.ndarray
    window_steps: tuple
    obs_indices: tuple


def linearize(model, obs, w0):
    """Integrate the nonlinear model from ``w0`` and keep every step state
    for tangent-linear and adjoint sweeps."""
    w0 = as_vector(w0, model.n, name="state")
    window_steps = []
    for t in obs.times:
        steps_float = t / model.dt
        step = int(round(steps_float))
        if abs(steps_float - step) > 1e-9 * max(1.0, abs(steps_float)) or step < 1:
            raise ValueError(f"observation time {t} is not on the dt={model.dt} grid")
        window_steps.append(step)
    total = max(window_steps) if window_steps else 0
    states = integrate_steps(model, w0, total)
    return Trajectory(
        model=model,
        w0=w0.copy(),
        states=states,
        window_steps=tuple(window_steps),
        obs_indices=tuple(np.asarray(i, dtype=int) for i in obs.indices),
    )


def trajectory_observations(traj):
    """Nonlinear observation-space images ``H_i(M(w0))`` along the stored
    trajectory."""
    return [
        traj.states[step][idx]
        for step, idx in zip(traj.window_steps, traj.obs_indices)
    ]


def tlm_apply(traj, s):
    """Propagate a perturbation through the differentiated scheme and
    select at each window, yielding the per-window Jacobian images."""
    model = traj.model
    s = as_vector(s, model.n, name="perturbation")
    out = []
    if not traj.window_steps:
        return []
    windows = set(traj.window_steps)
    delta = s.copy()
    collected = {}
    total = max(traj.window_steps)
    for t in range(total):
        delta = rk4_step_tlm(traj.states[t], delta, model.dt, model.forcing)
        if t + 1 in windows:
            collected[t + 1] = delta.copy()
    for step, idx in zip(traj.window_steps, traj.obs_indices):
        out.append(collected[step][idx])
    return out


def adjoint_apply(traj, w_list):
    """Exact transpose of :func:`tlm_apply`: scatter the per-window
    vectors and sweep the adjoint backwards to the initial time."""
    model = traj.model
    if len(w_list) != len(traj.window_steps):
        raise ValueError(
            f"expected {len(traj.window_steps)} window vectors, got {len(w_list)}"
        )
    if not traj.window_steps:
        return np.zeros(model.n)
    injections = {}
    for step, idx, w in zip(traj.window_steps, traj.obs_indices, w_list):
        w = np.asarray(w, dtype=float)
        if w.shape[0] != idx.size:
            raise ValueError("window vector length does not match selection")
        inj = injections.setdefault(step, np.zeros(model.n))
        inj[idx] += w
    total = max(traj.window_steps)
    lam = np.zeros(model.n)
    for t in range(total - 1, -1, -1):
        if t + 1 in injections:
            lam = lam + injections[t + 1]
        lam = rk4_step_adjoint(traj.states[t], lam, model.dt, model.forcing)
    return lam


@dataclass
class DAProblem:
    """Twin-experiment description: model, observations, background
    statistics, prior state and the truth that generated it."""

    model: Lorenz96Model
    obs: ObservationSet
    bcov: BackgroundCovariance
    w_b: np.ndarray
    truth: np.ndarray
    truth_seed: int


@dataclass
class GNState:
    """One outer-loop linearization: iterate, trajectory, innovations and,
    once assembled, the first-level-preconditioned operator and rhs."""

    prob: DAProblem
    outer_index: int
    w0: np.ndarray
    trajectory: Trajectory
    innovations: list
    A_op: LinearOperator | None = None
    b: np.ndarray | None = None
    preconditioners: list = field(default_factory=list)


def make_gn_state(prob, w0, outer_index):
    traj = linearize(prob.model, prob.obs, w0)
    predicted = trajectory_observations(traj)
    innovations = [y - g for y, g in zip(prob.obs.values, predicted)]
    return GNState(
        prob=prob,
        outer_index=outer_index,
        w0=np.asarray(w0, dtype=float).copy(),
        trajectory=traj,
        innovations=innovations,
    )


def assemble_system(state):
    """First-level-preconditioned quadratic subproblem.

    Returns the matrix-free operator
    ``v -> v + L^T G^T R^{-1} G L v`` (one tangent-linear and one adjoint
    sweep per application) and the right-hand side
    ``L^T (B^{-1}(w_b - w0) + G^T R^{-1} d)``.  The operator has
    ``n - m`` unit eigenvalues and ``m`` above one.
    """
    prob = state.prob
    if not np.array_equal(state.trajectory.w0, state.w0):
        raise StaleTrajectoryError(
            "trajectory was linearized at a different iterate"
        )
    traj = state.trajectory
    L = prob.bcov.root
    inv_var = 1.0 / prob.obs.sigma_r**2

    def apply_fn(v):
        u = L @ v
        images = tlm_apply(traj, u)
        back = adjoint_apply(traj, [inv_var * g for g in images])
        return v + L @ back

    A_op = LinearOperator(prob.model.n, apply_fn, label=f"A{state.outer_index}")
    obs_term = adjoint_apply(traj, [inv_var * d for d in state.innovations])
    b = L @ (prob.bcov.solve(prob.w_b - state.w0) + obs_term)
    state.A_op = A_op
    state.b = b
    return A_op, b


def quadratic_offset(state):
    """Value of the quadratic subproblem cost at a zero increment."""
    prob = state.prob
    diff = prob.w_b - state.w0
    bg = 0.5 * float(diff @ prob.bcov.solve(diff))
    inv_var = 1.0 / prob.obs.sigma_r**2
    obs = 0.5 * inv_var * sum(float(d @ d) for d in state.innovations)
    return bg + obs


def nonlinear_cost(prob, w0):
    """Weighted least-squares objective: background misfit in the inverse
    covariance norm plus observation misfits scaled by the noise variance."""
    w0 = as_vector(w0, prob.model.n, name="state")
    traj = linearize(prob.model, prob.obs, w0)
    predicted = trajectory_observations(traj)
    diff = w0 - prob.w_b
    cost = 0.5 * float(diff @ prob.bcov.solve(diff))
    inv_var = 1.0 / prob.obs.sigma_r**2
    for y, g in zip(prob.obs.values, predicted):
        misfit = y - g
        cost += 0.5 * inv_var * float(misfit @ misfit)
    return cost


def nonlinear_gradient(prob, w0):
    """Adjoint-based gradient of :func:`nonlinear_cost`."""
    w0 = as_vector(w0, prob.model.n, name="state")
    traj = linearize(prob.model, prob.obs, w0)
    predicted = trajectory_observations(traj)
    inv_var = 1.0 / prob.obs.sigma_r**2
    misfits = [inv_var * (y - g) for y, g in zip(prob.obs.values, predicted)]
    return prob.bcov.solve(w0 - prob.w_b) - adjoint_apply(traj, misfits)


# ---------------------------------------------------------------------------
# Twin-experiment synthesis


def synthesize_truth_and_obs(
    n,
    m_per_window,
    n_windows=2,
    sigma_b=0.8,
    sigma_r=0.2,
    seed=1,
    *,
    forcing=8.0,
    dt=0.025,
    steps_per_window=2,
    length_scale=5.0,
    burn_in_steps=500,
    perturbation=0.05,
):
    """Deterministically generate a twin-experiment problem.

    The master seed splits into independent streams for the truth
    spin-up perturbation, the background noise and the observation
    noise, so the realization is stable under any downstream choices.
    The truth is the end state of a burn-in from a perturbed equilibrium;
    the prior is the truth plus correlated noise drawn through the
    covariance root; observations are noisy uniform selections of the
    truth trajectory.
    """
    ss = np.random.SeedSequence(seed)
    truth_rng, bg_rng, obs_rng = (np.random.default_rng(c) for c in ss.spawn(3))

    model = Lorenz96Model(
        n=n, forcing=forcing, dt=dt, steps_per_window=steps_per_window
    )
    start = forcing * np.ones(n) + perturbation * truth_rng.standard_normal(n)
    truth = integrate_steps(model, start, burn_in_steps)[-1]

    bcov = build_background(n, sigma_b, length_scale)
    w_b = truth + bcov.root @ bg_rng.standard_normal(n)

    idx = uniform_selection(n, m_per_window)
    times, indices, values = [], [], []
    state = truth.copy()
    for i in range(1, n_windows + 1):
        for _ in range(steps_per_window):
            state = rk4_step(state, dt, forcing)
        times.append(i * model.window_length)
        indices.append(idx.copy())
        values.append(state[idx] + sigma_r * obs_rng.standard_normal(idx.size))
    obs = ObservationSet(
        times=tuple(times),
        indices=tuple(indices),
        values=tuple(values),
        sigma_r=sigma_r,
    )
    return DAProblem(
        model=model, obs=obs, bcov=bcov, w_b=w_b, truth=truth, truth_seed=seed
    )


def save_problem(path, prob):
    """Structured text bundle: configuration, truth, prior and observations."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("[model]\n")
        fh.write(f"n = {prob.model.n}\n")
        fh.write(f"forcing = {prob.model.forcing:.17g}\n")
        fh.write(f"dt = {prob.model.dt:.17g}\n")
        fh.write(f"steps_per_window = {prob.model.steps_per_window}\n")
        fh.write(f"truth_seed = {prob.truth_seed}\n")
        fh.write("[background]\n")
        fh.write(f"sigma_b = {prob.bcov.sigma_b:.17g}\n")
        fh.write(f"length_scale = {prob.bcov.length_scale:.17g}\n")
        fh.write("[truth]\n")
        fh.write(" ".join(f"{x:.17g}" for x in prob.truth) + "\n")
        fh.write("[prior]\n")
        fh.write(" ".join(f"{x:.17g}" for x in prob.w_b) + "\n")
        fh.write("[observations]\n")
        fh.write(f"sigma_r = {prob.obs.sigma_r:.17g}\n")
        fh.write(f"n_windows = {prob.obs.n_windows}\n")
        for t, idx, vals in zip(prob.obs.times, prob.obs.indices, prob.obs.values):
            fh.write(f"time = {t:.17g}\n")
            fh.write("indices = " + " ".join(str(i) for i in idx) + "\n")
            fh.write("values = " + " ".join(f"{v:.17g}" for v in vals) + "\n")


def load_problem(path):
    """Rebuild a :class:`DAProblem` from :func:`save_problem` output."""
    sections = {}
    current = None
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            if line.startswith("[") and line.endswith("]"):
                current = line[1:-1]
                sections[current] = []
            else:
                sections[current].append(line)

    def kv(lines):
        out = {}
        for ln in lines:
            key, _, val = ln.partition("=")
            out.setdefault(key.strip(), []).append(val.strip())
        return out

    model_kv = kv(sections["model"])
    bg_kv = kv(sections["background"])
    model = Lorenz96Model(
        n=int(model_kv["n"][0]),
        forcing=float(model_kv["forcing"][0]),
        dt=float(model_kv["dt"][0]),
        steps_per_window=int(model_kv["steps_per_window"][0]),
    )
    bcov = build_background(
        model.n, float(bg_kv["sigma_b"][0]), float(bg_kv["length_scale"][0])
    )
    truth = np.array([float(t) for t in sections["truth"][0].split()])
    w_b = np.array([float(t) for t in sections["prior"][0].split()])
    obs_kv = kv(sections["observations"])
    times = [float(t) for t in obs_kv["time"]]
    indices = [np.array([int(x) for x in ln.split()]) for ln in obs_kv["indices"]]
    values = [np.array([float(x) for x in ln.split()]) for ln in obs_kv["values"]]
    obs = ObservationSet(
        times=tuple(times),
        indices=tuple(indices),
        values=tuple(values),
        sigma_r=float(obs_kv["sigma_r"][0]),
    )
    return DAProblem(
        model=model,
        obs=obs,
        bcov=bcov,
        w_b=w_b,
        truth=truth,
        truth_seed=int(model_kv["truth_seed"][0]),
    )


# ---------------------------------------------------------------------------
# Truncated Gauss-Newton driver


METHODS = (
    "BPrec",
    "sLMP-Base",
    "Init-sLMP-Base",
    "sLMP-lambda_k",
    "sLMP-theta_r",
    "sLMP-theta_m",
    "DefCG",
)

_METHOD_ALIASES = {
    "sLMP-λk": "sLMP-lambda_k",
    "sLMP-θr": "sLMP-theta_r",
    "sLMP-θm": "sLMP-theta_m",
}


def normalize_method(name):
    name = name.strip()
    name = _METHOD_ALIASES.get(name, name)
    if name not in METHODS:
        raise ValueError(f"unknown method {name!r}; expected one of {METHODS}")
    return name


@dataclass
class MethodRun:
    """Everything recorded for one method across the outer loops."""

    method: str
    traces: list
    quadratic_costs: list
    thetas: list
    selected_pairs: list
    nonlinear_costs: list
    final_w0: np.ndarray

    def final_matvecs(self, label):
        last = self.traces[-1].matvec_counts[-1]
        return last.get(label, 0)


def _method_theta(method, basis, prev_op, b_new):
    if method in ("sLMP-Base", "Init-sLMP-Base"):
        return 1.0
    if method == "sLMP-lambda_k":
        return resolve_theta("lambda_k", basis)
    if method == "sLMP-theta_m":
        # the first-level-preconditioned operator has unit trailing spectrum
        return resolve_theta("mid_range", basis, lambda_n_hint=1.0)
    if method == "sLMP-theta_r":
        return resolve_theta("theta_r", basis, A_prev=prev_op, r0=b_new)
    raise ValueError(f"method {method!r} does not use a scaling parameter")


def run_gauss_newton(
    prob,
    method,
    outer_loops=2,
    inner_iters=100,
    eps_ritz=1e-3,
    ritz_max=None,
    ritz_value_floor=1.1,
):
    """Truncated Gauss-Newton with the second-loop solver chosen by
    ``method``.

    The first loop always runs plain CG on the first-level-preconditioned
    system and stores its recurrence.  Converged Ritz pairs (residual
    estimate within ``eps_ritz`` of the value, largest first, values
    above ``ritz_value_floor`` so the unit cluster is not captured) feed
    the second-loop preconditioner or deflation space.  Subsequent loops
    dispatch per method; every solve records the quadratic cost and the
    cumulative matvec count of each operator in the sequence.
    """
    method = normalize_method(method)
    n = prob.model.n
    w0 = np.asarray(prob.w_b, dtype=float).copy()

    ops = []
    factors = []
    basis = None
    traces, quad_costs, thetas, pair_counts, nl_costs = [], [], [], [], []

    for j in range(1, outer_loops + 1):
        state = make_gn_state(prob, w0, j)
        A_op, b = assemble_system(state)
        ops.append(A_op)
        nl_costs.append(nonlinear_cost(prob, w0))
        offset = quadratic_offset(state)
        cfg = KrylovConfig(
            max_iters=inner_iters, rtol=0.0, record_lanczos=True
        )

        if j == 1 or method == "BPrec":
            trace = cg(A_op, b, np.zeros(n), cfg, ledger=ops)
            s = prob.bcov.root @ trace.solution
            theta_used = None
        elif method == "DefCG":
            trace = deflated_cg(A_op, basis.vectors, b, np.zeros(n), cfg, ledger=ops)
            s = prob.bcov.root @ trace.solution
            theta_used = None
        else:
            theta_used = _method_theta(method, basis, ops[-2], b)
            factors.append(ScaledSpectralPreconditioner(basis, theta_used))
            comp = compose(factors)
            split_op = LinearOperator(
                n,
                lambda v, A=A_op, c=comp: c.apply_U(A(c.apply_U_transpose(v))),
                label=f"M{j}",
            )
            b_hat = comp.apply_U(b)
            x0 = (
                init_slmp_guess(factors[-1], b)
                if method == "Init-sLMP-Base"
                else np.zeros(n)
            )
            trace = cg(split_op, b_hat, x0, cfg, ledger=ops)
            s = prob.bcov.root @ comp.apply_U_transpose(trace.solution)

        traces.append(trace)
        thetas.append(theta_used)
        quad_costs.append([q + offset for q in trace.quadratic_values])
        w0 = w0 + s

        if j < outer_loops:
            pairs = extract_ritz_pairs(trace.lanczos, eps=eps_ritz, k_max=ritz_max)
            keep = pairs.values > ritz_value_floor
            basis = SpectralBasis(pairs.vectors[:, keep], pairs.values[keep])
            pair_counts.append(basis.k)

    nl_costs.append(nonlinear_cost(prob, w0))
    return MethodRun(
        method=method,
        traces=traces,
        quadratic_costs=quad_costs,
        thetas=thetas,
        selected_pairs=pair_counts,
        nonlinear_costs=nl_costs,
        final_w0=w0,
    )
