"""Shared numerical kernels.

Square-root (QR) recursive least squares with exponential forgetting,
Moore-Penrose pseudo-inverse, a discrete algebraic Riccati solver based on
the Riccati difference recursion, and Welch spectral estimation.

All functions are pure or return fresh state; nothing here holds shared
mutable state.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "RlsState",
    "rls_update",
    "rls_update_batch",
    "pinv",
    "DareSolution",
    "DareNonConvergence",
    "solve_dare",
    "spectral_radius",
    "PsdEstimate",
    "welch_psd",
]


# ---------------------------------------------------------------------------
# Recursive least squares (square-root / QR form)
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class RlsState:
    """State of an exponentially weighted least-squares recursion.

    The inverse covariance (information) matrix is carried as its
    upper-triangular square root ``sqrt_inv_cov`` = R with
    R'R = lam^k * init_info * I + sum_t lam^(k-t) x_t x_t', which keeps the
    information matrix positive definite over arbitrarily long runs. The
    right-hand side accumulator is not stored: it is always recoverable as
    Z = R @ estimate.T.

    Attributes:
        estimate: (n_out, n_reg) current weighted least-squares solution.
        sqrt_inv_cov: (n_reg, n_reg) upper-triangular information square root.
        lam: forgetting factor. Values at or below 0.9 are rejected; the
            recursion is meant for near-unity forgetting.
    """

    estimate: np.ndarray
    sqrt_inv_cov: np.ndarray
    lam: float

    def __post_init__(self):
        if not (0.9 < self.lam <= 1.0):
            raise ValueError(
                f"forgetting factor must satisfy 0.9 < lambda <= 1, got {self.lam}"
            )
        if not np.all(np.isfinite(self.estimate)):
            raise ValueError("estimate contains non-finite entries")
        if not np.all(np.isfinite(self.sqrt_inv_cov)):
            raise ValueError("sqrt_inv_cov contains non-finite entries")

    @property
    def n_reg(self) -> int:
        return self.sqrt_inv_cov.shape[0]

    @property
    def n_out(self) -> int:
        return self.estimate.shape[0]

    @staticmethod
    def fresh(n_out: int, n_reg: int, lam: float, init_info: float = 1e-3) -> "RlsState":
        """Zero estimate with information matrix init_info * I."""
        if init_info <= 0.0:
            raise ValueError("init_info must be positive")
        return RlsState(
            estimate=np.zeros((n_out, n_reg)),
            sqrt_inv_cov=np.sqrt(init_info) * np.eye(n_reg),
            lam=float(lam),
        )


def _rls_qr_step(state: RlsState, rows: np.ndarray, targets: np.ndarray,
                 weights: np.ndarray, prior_scale: float):
    """Fold weighted rows into the triangular factor via one QR."""
    n_reg, n_out = state.n_reg, state.n_out
    z = state.sqrt_inv_cov @ state.estimate.T
    stacked = np.empty((n_reg + rows.shape[0], n_reg + n_out))
    stacked[:n_reg, :n_reg] = prior_scale * state.sqrt_inv_cov
    stacked[:n_reg, n_reg:] = prior_scale * z
    stacked[n_reg:, :n_reg] = weights[:, None] * rows
    stacked[n_reg:, n_reg:] = weights[:, None] * targets
    r_aug = np.linalg.qr(stacked, mode="r")
    r_new = np.ascontiguousarray(r_aug[:n_reg, :n_reg])
    z_new = r_aug[:n_reg, n_reg:]
    estimate = np.linalg.solve(r_new, z_new).T
    return RlsState(estimate=estimate, sqrt_inv_cov=r_new, lam=state.lam)


def rls_update(state: RlsState, regressor: np.ndarray, target: np.ndarray):
    """One recursive least-squares step.

    Returns the updated state together with its estimate. The estimate is
    the exact exponentially weighted least-squares solution over all data
    seen so far (including the init_info ridge decayed by lam^k); the
    covariance matrix is never formed.
    """
    regressor = np.asarray(regressor, dtype=float).reshape(-1)
    target = np.asarray(target, dtype=float).reshape(-1)
    if regressor.shape[0] != state.n_reg:
        raise ValueError(
            f"regressor length {regressor.shape[0]} does not match n_reg {state.n_reg}"
        )
    if target.shape[0] != state.n_out:
        raise ValueError(
            f"target length {target.shape[0]} does not match n_out {state.n_out}"
        )
    if not np.all(np.isfinite(regressor)):
        raise ValueError("regressor contains non-finite entries")
    if not np.all(np.isfinite(target)):
        raise ValueError("target contains non-finite entries")
    new_state = _rls_qr_step(
        state,
        regressor[None, :],
        target[None, :],
        weights=np.ones(1),
        prior_scale=np.sqrt(state.lam),
    )
    return new_state, new_state.estimate


def rls_update_batch(state: RlsState, regressors: np.ndarray, targets: np.ndarray) -> RlsState:
    """Fold a block of consecutive samples in one QR.

    Algebraically identical to calling rls_update row by row (QR stacking is
    associative); used where per-sample calls would dominate the runtime.
    Rows are ordered oldest first.
    """
    regressors = np.atleast_2d(np.asarray(regressors, dtype=float))
    targets = np.atleast_2d(np.asarray(targets, dtype=float))
    m = regressors.shape[0]
    if targets.shape[0] != m:
        raise ValueError("regressors and targets disagree on the number of rows")
    if regressors.shape[1] != state.n_reg or targets.shape[1] != state.n_out:
        raise ValueError("batch dimensions do not match the RLS state")
    if m == 0:
        return state
    if not (np.all(np.isfinite(regressors)) and np.all(np.isfinite(targets))):
        raise ValueError("batch contains non-finite entries")
    ages = np.arange(m - 1, -1, -1, dtype=float)
    return _rls_qr_step(
        state,
        regressors,
        targets,
        weights=np.power(state.lam, ages / 2.0),
        prior_scale=state.lam ** (m / 2.0),
    )


# ---------------------------------------------------------------------------
# Moore-Penrose pseudo-inverse
# ---------------------------------------------------------------------------

def pinv(m: np.ndarray, tol: float | None = None) -> np.ndarray:
    """Moore-Penrose pseudo-inverse via SVD.

    Singular values below tol * sigma_max are treated as zero. The default
    tol is 1e-12 * max(m.shape). An all-zero matrix maps to an all-zero
    pseudo-inverse.
    """
    m = np.asarray(m, dtype=float)
    if not np.all(np.isfinite(m)):
        raise ValueError("pinv requires a finite matrix")
    if m.size == 0 or not m.any():
        return np.zeros(m.T.shape)
    u, s, vt = np.linalg.svd(m, full_matrices=False)
    if tol is None:
        tol = 1e-12 * max(m.shape)
    cutoff = tol * s[0]
    inv_s = np.where(s > cutoff, 1.0 / np.where(s > cutoff, s, 1.0), 0.0)
    return (vt.T * inv_s) @ u.T


# ---------------------------------------------------------------------------
# Discrete algebraic Riccati equation
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class DareSolution:
    """Converged Riccati solution: cost matrix, gain, and diagnostics."""

    cost_matrix: np.ndarray
    gain: np.ndarray
    residual: float
    iterations: int


class DareNonConvergence(RuntimeError):
    """Riccati recursion did not meet the residual tolerance.

    Carries the last iterate so callers can decide to reuse a previous gain.
    """

    def __init__(self, residual: float, iterations: int):
        super().__init__(
            f"DARE recursion not converged after {iterations} iterations "
            f"(relative residual {residual:.3e})"
        )
        self.residual = residual
        self.iterations = iterations


def _dare_rhs(a, b, q, r, p):
    bpb = r + b.T @ p @ b
    bpa = b.T @ p @ a
    gain = np.linalg.solve(bpb, bpa)
    return q + a.T @ p @ a - a.T @ p @ b @ gain, gain


def solve_dare(a, b, q, r, tol: float = 1e-9, max_iter: int = 500,
               p0: np.ndarray | None = None) -> DareSolution:
    """Solve P = A'PA - A'PB(R + B'PB)^-1 B'PA + Q by fixed-point iteration.

    Starts from P0 = Q (or a supplied warm start) and iterates the Riccati
    difference recursion until the relative residual
    ||P - f(P)||_F / ||P||_F drops below tol. Returns the stabilizing gain
    K = (R + B'PB)^-1 B'PA. Raises DareNonConvergence if the tolerance is
    not met within max_iter, which happens in particular when (A, B) is not
    stabilizable.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    q = np.asarray(q, dtype=float)
    r = np.asarray(r, dtype=float)
    p = q.copy() if p0 is None else np.asarray(p0, dtype=float).copy()
    residual = np.inf
    for it in range(1, max_iter + 1):
        p_next, gain = _dare_rhs(a, b, q, r, p)
        p_next = 0.5 * (p_next + p_next.T)
        denom = max(np.linalg.norm(p_next, "fro"), 1e-300)
        residual = np.linalg.norm(p_next - p, "fro") / denom
        p = p_next
        if residual <= tol:
            # Recompute the gain at the fixed point itself.
            _, gain = _dare_rhs(a, b, q, r, p)
            return DareSolution(cost_matrix=p, gain=gain, residual=residual, iterations=it)
        if not np.all(np.isfinite(p)):
            raise DareNonConvergence(float("inf"), it)
    raise DareNonConvergence(residual, max_iter)


def spectral_radius(m: np.ndarray) -> float:
    return float(np.max(np.abs(np.linalg.eigvals(np.asarray(m, dtype=float)))))


# ---------------------------------------------------------------------------
# Welch power spectral density
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PsdEstimate:
    """One-sided averaged-periodogram PSD.

    power integrates (trapezoidally) to approximately the signal variance;
    frequencies run from 0 to fs/2 inclusive.
    """

    frequencies: np.ndarray
    power: np.ndarray
    segment_length: int
    overlap_fraction: float
    window_kind: str


_WINDOWS = {
    "hann": lambda n: 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(n) / n),
    "boxcar": np.ones,
}


def welch_psd(signal: np.ndarray, fs: float, segment_length: int = 2048,
              overlap_fraction: float = 0.5, window_kind: str = "hann") -> PsdEstimate:
    """Averaged modified periodogram (one-sided), deterministic for fixed input.

    Each segment is mean-detrended and windowed; overlapping segments are
    averaged. segment_length must be even so the frequency grid spans
    [0, fs/2] exactly.
    """
    signal = np.asarray(signal, dtype=float).reshape(-1)
    n = signal.shape[0]
    if segment_length % 2 != 0 or segment_length < 4:
        raise ValueError("segment_length must be an even integer >= 4")
    if n < segment_length:
        raise ValueError(
            f"signal of length {n} is too short: at least {segment_length} samples required"
        )
    if not (0.0 <= overlap_fraction < 1.0):
        raise ValueError("overlap_fraction must lie in [0, 1)")
    if window_kind not in _WINDOWS:
        raise ValueError(f"unknown window_kind {window_kind!r}; choose from {sorted(_WINDOWS)}")

    window = _WINDOWS[window_kind](segment_length)
    step = max(1, int(round(segment_length * (1.0 - overlap_fraction))))
    n_segments = 1 + (n - segment_length) // step
    scale = 1.0 / (fs * np.sum(window**2))

    accum = np.zeros(segment_length // 2 + 1)
    for s in range(n_segments):
        seg = signal[s * step: s * step + segment_length]
        seg = seg - seg.mean()
        spec = np.fft.rfft(window * seg)
        accum += (spec.real**2 + spec.imag**2) * scale
    accum /= n_segments
    # One-sided: double everything except DC and Nyquist.
    accum[1:-1] *= 2.0
    freqs = np.fft.rfftfreq(segment_length, d=1.0 / fs)
    return PsdEstimate(
        frequencies=freqs,
        power=accum,
        segment_length=segment_length,
        overlap_fraction=overlap_fraction,
        window_kind=window_kind,
    )
