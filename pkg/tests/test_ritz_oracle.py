import numpy as np
import pytest

from conftest import counted, dense_energy_error, random_spd
from slmpcg.krylov import (
    KrylovConfig,
    cg,
    chebyshev_bound,
    energy_error_oracle,
    extract_ritz_pairs,
    pcg,
)
from slmpcg.linops import EigDecomposition, dense_eig, direct_solve
from slmpcg.slmp import ScaledSpectralPreconditioner, SpectralBasis


def run_cg_with_lanczos(A, b, iters):
    cfg = KrylovConfig(max_iters=iters, record_lanczos=True)
    return cg(counted(A), b, None, cfg)


class TestRitzExtraction:
    def test_single_iteration_rayleigh_quotient(self):
        rng = np.random.default_rng(0)
        A, _ = random_spd(rng, 12)
        b = rng.standard_normal(12)
        trace = run_cg_with_lanczos(A, b, 1)
        pairs = extract_ritz_pairs(trace.lanczos, eps=10.0)
        rayleigh = (b @ (A @ b)) / (b @ b)
        assert pairs.values[0] == pytest.approx(rayleigh, rel=1e-12)

    def test_full_grade_recovers_extremes(self):
        A = np.diag([100.0, 10.0, 1.0, 0.5, 0.25, 0.1])
        rng = np.random.default_rng(1)
        b = rng.uniform(0.5, 1.0, 6)  # full-grade start
        trace = run_cg_with_lanczos(A, b, 6)
        pairs = extract_ritz_pairs(trace.lanczos, eps=1e-8)
        assert abs(pairs.values[0] - 100.0) <= 1e-6
        # Ritz vectors are genuine: small eigen-residuals
        for mu, y in zip(pairs.values, pairs.vectors.T):
            assert np.linalg.norm(A @ y - mu * y) <= 1e-6 * mu

    def test_values_within_spectrum(self):
        rng = np.random.default_rng(2)
        A, eig = random_spd(rng, 30)
        b = rng.standard_normal(30)
        trace = run_cg_with_lanczos(A, b, 18)
        pairs = extract_ritz_pairs(trace.lanczos, eps=10.0)
        assert np.all(pairs.values <= eig.values[0] * (1 + 1e-10))
        assert np.all(pairs.values >= eig.values[-1] * (1 - 1e-10))

    def test_vectors_orthonormal(self):
        rng = np.random.default_rng(3)
        A, _ = random_spd(rng, 40)
        b = rng.standard_normal(40)
        trace = run_cg_with_lanczos(A, b, 25)
        pairs = extract_ritz_pairs(trace.lanczos, eps=1e-2)
        k = pairs.vectors.shape[1]
        gram = pairs.vectors.T @ pairs.vectors
        assert np.abs(gram - np.eye(k)).max() <= 1e-8

    def test_k_max_caps_pairs(self):
        rng = np.random.default_rng(4)
        A, _ = random_spd(rng, 20)
        trace = run_cg_with_lanczos(A, rng.standard_normal(20), 15)
        pairs = extract_ritz_pairs(trace.lanczos, eps=10.0, k_max=3)
        assert len(pairs.values) == 3
        assert np.all(np.diff(pairs.values) <= 0)

    def test_tighter_eps_selects_fewer(self):
        rng = np.random.default_rng(5)
        A, _ = random_spd(rng, 30)
        trace = run_cg_with_lanczos(A, rng.standard_normal(30), 12)
        loose = extract_ritz_pairs(trace.lanczos, eps=1.0)
        tight = extract_ritz_pairs(trace.lanczos, eps=1e-10)
        assert len(tight.values) <= len(loose.values)

    def test_empty_recurrence_rejected(self):
        from slmpcg.krylov import LanczosData

        with pytest.raises(ValueError):
            extract_ritz_pairs(LanczosData(), eps=1e-3)


class TestEnergyErrorOracle:
    def test_zero_at_grade(self):
        # residual carried by two distinct eigenvalues: zero at degree 2
        eig = dense_eig(np.diag([5.0, 5.0, 2.0]))
        r0 = np.array([1.0, 1.0, 1.0])
        assert energy_error_oracle(eig, r0, 0, 1.0, 2) == 0.0
        assert energy_error_oracle(eig, r0, 0, 1.0, 1) > 0.0

    def test_matches_cg_on_three_point_spectrum(self):
        A = np.diag([1.0, 2.0, 3.0])
        b = np.ones(3)
        eig = dense_eig(A)
        x_star = direct_solve(A, b)
        cfg = KrylovConfig(max_iters=3)
        trace = cg(counted(A), b, None, cfg, error_oracle=dense_energy_error(A, x_star))
        for ell in range(trace.terminated_at + 1):
            expected = energy_error_oracle(eig, b, 0, 1.0, ell)
            assert abs(trace.energy_errors[ell] - expected) <= 1e-8 * (1 + expected)

    def test_matches_pcg_with_scaling(self):
        A = np.diag([10.0, 4.0, 1.0])
        b = np.ones(3)
        eig = dense_eig(A)
        basis = SpectralBasis(eig.vectors[:, :1], eig.values[:1])
        prec = ScaledSpectralPreconditioner(basis, float(eig.values[1]))
        x_star = direct_solve(A, b)
        cfg = KrylovConfig(max_iters=3)
        trace = pcg(counted(A), prec, b, None, cfg,
                    error_oracle=dense_energy_error(A, x_star))
        for ell in range(trace.terminated_at + 1):
            expected = energy_error_oracle(eig, b, 1, float(eig.values[1]), ell)
            assert abs(trace.energy_errors[ell] - expected) <= 1e-8 * (1 + expected)

    def test_non_increasing_in_degree(self):
        rng = np.random.default_rng(6)
        A, eig = random_spd(rng, 25)
        r0 = rng.standard_normal(25)
        values = [energy_error_oracle(eig, r0, 0, 1.0, ell) for ell in range(12)]
        assert all(b <= a + 1e-12 for a, b in zip(values, values[1:]))

    def test_high_degree_chebyshev_path(self):
        rng = np.random.default_rng(7)
        A, eig = random_spd(rng, 40, lam_max=200.0)
        b = rng.standard_normal(40)
        x_star = direct_solve(A, b)
        cfg = KrylovConfig(max_iters=24)
        trace = cg(counted(A), b, None, cfg, error_oracle=dense_energy_error(A, x_star))
        e0 = trace.energy_errors[0]
        for ell in range(trace.terminated_at + 1):
            expected = energy_error_oracle(eig, b, 0, 1.0, ell)
            assert abs(trace.energy_errors[ell] - expected) <= 1e-7 * expected + 1e-10 * e0

    def test_input_validation(self):
        eig = dense_eig(np.diag([2.0, 1.0]))
        with pytest.raises(ValueError):
            energy_error_oracle(eig, np.ones(2), 2, 1.0, 1)
        with pytest.raises(ValueError):
            energy_error_oracle(eig, np.ones(2), 1, -1.0, 1)
        with pytest.raises(ValueError):
            energy_error_oracle(eig, np.ones(2), 0, 1.0, -1)

    def test_theta_ignored_when_k_zero(self):
        eig = dense_eig(np.diag([3.0, 1.0]))
        r0 = np.array([1.0, 2.0])
        a = energy_error_oracle(eig, r0, 0, 123.0, 1)
        b = energy_error_oracle(eig, r0, 0, 0.5, 1)
        assert a == b


class TestChebyshevBound:
    def test_perfectly_conditioned(self):
        assert chebyshev_bound(1.0, 1) == 0.0

    def test_hand_value(self):
        assert chebyshev_bound(9.0, 1) == pytest.approx(1.0)

    def test_rejects_kappa_below_one(self):
        with pytest.raises(ValueError):
            chebyshev_bound(0.5, 1)

    def test_never_violated_by_cg(self):
        rng = np.random.default_rng(8)
        for _ in range(10):
            n = int(rng.integers(10, 40))
            A, eig = random_spd(rng, n, lam_max=float(rng.uniform(10, 500)))
            b = rng.standard_normal(n)
            x_star = direct_solve(A, b)
            cfg = KrylovConfig(max_iters=min(n, 20))
            trace = cg(counted(A), b, None, cfg,
                       error_oracle=dense_energy_error(A, x_star))
            kappa = eig.values[0] / eig.values[-1]
            e0 = trace.energy_errors[0]
            for ell, err in enumerate(trace.energy_errors):
                bound = chebyshev_bound(kappa, ell)
                assert err <= bound * e0 * (1 + 1e-10) + 1e-14 * e0
