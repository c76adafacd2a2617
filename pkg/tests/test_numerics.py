"""Kernel-level checks: RLS vs batch weighted LS, Penrose conditions,
Riccati residuals, and Parseval consistency of the Welch estimator."""

import numpy as np
import pytest

from ipcsim.numerics import (
    DareNonConvergence,
    RlsState,
    pinv,
    rls_update,
    rls_update_batch,
    solve_dare,
    spectral_radius,
    welch_psd,
)


# ---------------------------------------------------------------------------
# RLS
# ---------------------------------------------------------------------------

def batch_weighted_ls(xs, ys, lam, init_info):
    """Direct normal-equations oracle, including the decayed init ridge."""
    k = len(xs)
    n_reg = xs[0].shape[0]
    info = (lam**k) * init_info * np.eye(n_reg)
    rhs = np.zeros((n_reg, ys[0].shape[0]))
    for t, (x, y) in enumerate(zip(xs, ys)):
        w = lam ** (k - 1 - t)
        info += w * np.outer(x, x)
        rhs += w * np.outer(x, y)
    return np.linalg.solve(info, rhs).T


def test_rls_recovers_true_row_noise_free():
    rng = np.random.default_rng(7)
    n_reg, n_out = 8, 1
    xi_true = rng.normal(size=(n_out, n_reg))
    state = RlsState.fresh(n_out, n_reg, lam=0.99999, init_info=1e-10)
    for _ in range(10 * n_reg):
        x = rng.normal(size=n_reg)
        state, est = rls_update(state, x, xi_true @ x)
    # Oracle: plain normal equations on the same (noise-free) data.
    err = np.linalg.norm(est - xi_true) / np.linalg.norm(xi_true)
    assert err < 1e-6


def test_rls_zero_targets_stay_zero():
    rng = np.random.default_rng(3)
    state = RlsState.fresh(2, 5, lam=0.999)
    for _ in range(40):
        state, est = rls_update(state, rng.normal(size=5), np.zeros(2))
    assert np.all(est == 0.0)


def test_rls_lambda_construction_bounds():
    RlsState.fresh(1, 4, lam=0.99999)  # the shipped near-unity value
    with pytest.raises(ValueError):
        RlsState.fresh(1, 4, lam=0.5)
    with pytest.raises(ValueError):
        RlsState.fresh(1, 4, lam=0.9)


def test_rls_rejects_bad_inputs():
    state = RlsState.fresh(1, 4, lam=0.999)
    with pytest.raises(ValueError):
        rls_update(state, np.array([1.0, 2.0, 3.0]), np.array([1.0]))
    with pytest.raises(ValueError):
        rls_update(state, np.array([1.0, np.nan, 0.0, 0.0]), np.array([1.0]))
    with pytest.raises(ValueError):
        rls_update(state, np.ones(4), np.array([np.inf]))


@pytest.mark.parametrize("n_reg,n_out,lam", [(3, 1, 0.999), (12, 2, 0.99), (40, 1, 0.99999)])
def test_rls_matches_batch_on_every_prefix(n_reg, n_out, lam):
    rng = np.random.default_rng(n_reg)
    init_info = 1e-3
    state = RlsState.fresh(n_out, n_reg, lam=lam, init_info=init_info)
    xs, ys = [], []
    for _ in range(3 * n_reg):
        x = rng.normal(size=n_reg)
        y = rng.normal(size=n_out)
        xs.append(x)
        ys.append(y)
        state, est = rls_update(state, x, y)
        oracle = batch_weighted_ls(xs, ys, lam, init_info)
        assert np.linalg.norm(est - oracle) <= 1e-8 * max(1.0, np.linalg.norm(oracle))


def test_rls_sqrt_factor_stays_upper_triangular():
    rng = np.random.default_rng(11)
    state = RlsState.fresh(1, 6, lam=0.999)
    for _ in range(50):
        state, _ = rls_update(state, rng.normal(size=6), rng.normal(size=1))
        r = state.sqrt_inv_cov
        assert np.all(np.isfinite(r))
        assert np.allclose(r, np.triu(r))


def test_rls_batch_equals_sequential():
    rng = np.random.default_rng(21)
    n_reg, n_out = 10, 1
    xs = rng.normal(size=(57, n_reg))
    ys = rng.normal(size=(57, n_out))
    seq = RlsState.fresh(n_out, n_reg, lam=0.999)
    for x, y in zip(xs, ys):
        seq, _ = rls_update(seq, x, y)
    batched = RlsState.fresh(n_out, n_reg, lam=0.999)
    batched = rls_update_batch(batched, xs[:20], ys[:20])
    batched = rls_update_batch(batched, xs[20:], ys[20:])
    assert np.allclose(batched.estimate, seq.estimate, atol=1e-10, rtol=1e-8)


# ---------------------------------------------------------------------------
# pinv
# ---------------------------------------------------------------------------

def test_pinv_identity():
    assert np.allclose(pinv(np.eye(4)), np.eye(4), atol=1e-12)


def test_pinv_left_inverse_of_tall_full_rank():
    rng = np.random.default_rng(5)
    m = rng.normal(size=(9, 4))
    assert np.allclose(pinv(m) @ m, np.eye(4), atol=1e-10)


def test_pinv_rank_deficient_penrose_1():
    rng = np.random.default_rng(6)
    m = rng.normal(size=(8, 2)) @ rng.normal(size=(2, 4))  # rank 2
    mp = pinv(m)
    assert np.allclose(m @ mp @ m, m, atol=1e-10)


def test_pinv_zero_matrix():
    assert np.all(pinv(np.zeros((3, 5))) == 0.0)
    assert pinv(np.zeros((3, 5))).shape == (5, 3)


def test_pinv_penrose_conditions_all_rank_profiles():
    rng = np.random.default_rng(42)
    for rows in (1, 4, 11, 20):
        for cols in (1, 5, 13, 20):
            for rank in {1, min(rows, cols) // 2, min(rows, cols)}:
                if rank < 1:
                    continue
                m = rng.normal(size=(rows, rank)) @ rng.normal(size=(rank, cols))
                mp = pinv(m)
                assert np.allclose(m @ mp @ m, m, atol=1e-10)
                assert np.allclose(mp @ m @ mp, mp, atol=1e-10)
                assert np.allclose((m @ mp).T, m @ mp, atol=1e-10)
                assert np.allclose((mp @ m).T, mp @ m, atol=1e-10)


# ---------------------------------------------------------------------------
# DARE
# ---------------------------------------------------------------------------

def test_dare_scalar_matches_quadratic_root():
    # For a=0.5, b=1, q=r=1 the fixed point solves P^2 - 0.25 P - 1 = 0.
    sol = solve_dare(np.array([[0.5]]), np.array([[1.0]]), np.eye(1), np.eye(1), tol=1e-13)
    p_closed_form = (0.25 + np.sqrt(0.25**2 + 4.0)) / 2.0
    # Independent scalar fixed-point iteration to 1e-12.
    p = 1.0
    for _ in range(10000):
        p_next = 1.0 + 0.25 * p - 0.25 * p * p / (1.0 + p)
        if abs(p_next - p) < 1e-12 * abs(p_next):
            break
        p = p_next
    assert abs(sol.cost_matrix[0, 0] - p_closed_form) < 1e-10
    assert abs(sol.cost_matrix[0, 0] - p) < 1e-9


def test_dare_deadbeat_plant():
    q = np.diag([2.0, 3.0])
    sol = solve_dare(np.zeros((2, 2)), np.eye(2), q, np.eye(2))
    assert np.allclose(sol.cost_matrix, q, atol=1e-9)
    assert np.allclose(sol.gain, 0.0, atol=1e-12)


def test_dare_random_stable_systems_stabilize():
    # Acceptance-grade property: 100 seeded instances, residual and rho checks.
    for seed in range(100):
        rng = np.random.default_rng(seed)
        a = rng.normal(size=(6, 6))
        a *= 0.9 / max(spectral_radius(a), 1e-9)
        b = rng.normal(size=(6, 2))
        q = np.eye(6)
        r = np.eye(2)
        sol = solve_dare(a, b, q, r)
        assert sol.residual < 1e-9
        assert spectral_radius(a - b @ sol.gain) < 1.0
        # Riccati equation residual directly, against the invariant bound.
        p = sol.cost_matrix
        rhs = a.T @ p @ a - a.T @ p @ b @ np.linalg.solve(r + b.T @ p @ b, b.T @ p @ a) + q
        assert np.linalg.norm(p - rhs) / np.linalg.norm(p) <= 1e-9
        assert np.allclose(p, p.T, atol=1e-10 * np.linalg.norm(p))
        assert np.min(np.linalg.eigvalsh(p)) > -1e-9


def test_dare_nonconvergence_reports_residual():
    # Uncontrollable unstable mode: no stabilizing solution exists.
    a = np.diag([1.5, 0.2])
    b = np.array([[0.0], [1.0]])
    with pytest.raises(DareNonConvergence) as exc:
        solve_dare(a, b, np.eye(2), np.eye(1), max_iter=50)
    assert exc.value.residual > 0.0
    assert exc.value.iterations == 50


def test_dare_warm_start_agrees_with_cold_start():
    rng = np.random.default_rng(123)
    a = rng.normal(size=(4, 4))
    a *= 0.8 / spectral_radius(a)
    b = rng.normal(size=(4, 2))
    cold = solve_dare(a, b, np.eye(4), np.eye(2))
    warm = solve_dare(a, b, np.eye(4), np.eye(2), p0=cold.cost_matrix + 1e-3)
    assert np.allclose(cold.cost_matrix, warm.cost_matrix, atol=1e-6)
    assert warm.iterations <= cold.iterations


# ---------------------------------------------------------------------------
# Welch PSD
# ---------------------------------------------------------------------------

def integrated_power(psd):
    return float(np.trapezoid(psd.power, psd.frequencies))


def test_welch_sinusoid_parseval():
    fs = 100.0
    t = np.arange(0, 400.0, 1.0 / fs)
    a = 2.0
    x = a * np.sin(2.0 * np.pi * 0.16 * t)
    psd = welch_psd(x, fs)
    assert abs(integrated_power(psd) - a**2 / 2.0) <= 0.10 * (a**2 / 2.0)


def test_welch_white_noise_variance():
    fs = 100.0
    sigma = 1.7
    for seed in range(50):
        rng = np.random.default_rng(seed)
        x = rng.normal(0.0, sigma, size=40000)
        psd = welch_psd(x, fs)
        assert abs(integrated_power(psd) - sigma**2) <= 0.15 * sigma**2


def test_welch_zero_signal():
    psd = welch_psd(np.zeros(4096), fs=100.0)
    assert np.all(psd.power == 0.0)


def test_welch_grid_and_positivity():
    rng = np.random.default_rng(2)
    psd = welch_psd(rng.normal(size=8192), fs=100.0)
    assert np.all(psd.power >= 0.0)
    assert np.all(np.diff(psd.frequencies) > 0.0)
    assert psd.frequencies[0] == 0.0
    assert psd.frequencies[-1] == 50.0


def test_welch_short_signal_error_names_length():
    with pytest.raises(ValueError, match="2048"):
        welch_psd(np.zeros(100), fs=100.0)


def test_welch_parseval_on_random_signals():
    fs = 50.0
    for seed in (1, 2, 3):
        rng = np.random.default_rng(seed)
        # Band-limited-ish random signal: white noise through a moving average.
        x = np.convolve(rng.normal(size=30000), np.ones(5) / 5.0, mode="same")
        psd = welch_psd(x, fs, segment_length=1024)
        var = float(np.var(x))
        assert abs(integrated_power(psd) - var) <= 0.10 * var
