"""Repetitive control synthesis on the identified per-blade model.

Per rotation: the identified Markov rows are expanded into the lifted
one-rotation predictor (block-Toeplitz response matrices corrected by the
unit-triangular output recursion), projected onto the 1P/2P sine/cosine
basis, and closed with a state-feedback gain from the Riccati recursion.
The per-rotation coefficient update is

    theta[j+1] = alpha * theta[j] - beta * K_f [Ybar[j]; dtheta[j]; dYbar[j]]

with restricted excitation added in coefficient space, so the commanded
pitch only ever carries 1P and 2P content.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .numerics import DareNonConvergence, pinv, solve_dare
from .sysid import IdentificationEngine, MarkovEstimate

__all__ = [
    "BasisProjection",
    "build_basis",
    "LiftedModel",
    "assemble_lifted",
    "markov_blocks_from_xi",
    "predict_lifted",
    "project_state_space",
    "synthesize_gain",
    "ControllerState",
    "update_theta",
    "ExcitationGenerator",
    "generate_excitation",
    "pitch_command",
    "project_output",
    "UnrestrictedExcitation",
    "ControllerTuning",
    "RepetitiveController",
]

N_BLADES = 3


# ---------------------------------------------------------------------------
# Basis projection
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class BasisProjection:
    """1P/2P sine/cosine basis over one rotation and its pseudo-inverses.

    u_f rows are [sin psi, cos psi, sin 2 psi, cos 2 psi] at
    psi_k = 2 pi k / P for k = 1..P (the final row sits exactly at 2 pi).
    phi = u_f (x) I_r acts on input-side coefficient vectors; phi_out is the
    output-side analogue with I_l. Coefficient layout is harmonic-major:
    [1P-sin (r), 1P-cos (r), 2P-sin (r), 2P-cos (r)].
    """

    u_f: np.ndarray
    phi: np.ndarray
    phi_pinv: np.ndarray
    phi_out: np.ndarray
    phi_out_pinv: np.ndarray
    period: int
    n_in: int
    n_out: int

    @property
    def n_coeff(self) -> int:
        return 4 * self.n_in


def build_basis(period: int, n_in: int, n_out: int | None = None) -> BasisProjection:
    if period < 8:
        raise ValueError("period must be >= 8 to resolve the 2P harmonic")
    if n_out is None:
        n_out = n_in
    psi = 2.0 * np.pi * np.arange(1, period + 1) / period
    u_f = np.column_stack([np.sin(psi), np.cos(psi), np.sin(2 * psi), np.cos(2 * psi)])
    phi = np.kron(u_f, np.eye(n_in))
    phi_pinv = pinv(phi)
    if n_out == n_in:
        phi_out, phi_out_pinv = phi, phi_pinv
    else:
        phi_out = np.kron(u_f, np.eye(n_out))
        phi_out_pinv = pinv(phi_out)
    return BasisProjection(
        u_f=u_f, phi=phi, phi_pinv=phi_pinv,
        phi_out=phi_out, phi_out_pinv=phi_out_pinv,
        period=period, n_in=n_in, n_out=n_out,
    )


def pitch_command(basis: BasisProjection, theta: np.ndarray, eta: np.ndarray, k: int) -> np.ndarray:
    """Per-sample command row_k(phi) (theta + eta); k indexes within the rotation."""
    coeffs = (np.asarray(theta, dtype=float) + np.asarray(eta, dtype=float))
    return basis.u_f[k % basis.period] @ coeffs.reshape(4, basis.n_in)


def rotation_commands(basis: BasisProjection, coeffs: np.ndarray) -> np.ndarray:
    """(P, r) command block for one rotation from basis-space coefficients."""
    return basis.u_f @ np.asarray(coeffs, dtype=float).reshape(4, basis.n_in)


def project_output(y_period: np.ndarray, basis: BasisProjection) -> np.ndarray:
    """1P/2P sine/cosine coefficients of one rotation of outputs.

    Accepts the stacked (P*l,) vector or a (P, l) block, sample-major.
    """
    y = np.asarray(y_period, dtype=float)
    flat = y.reshape(-1)
    if flat.shape[0] != basis.period * basis.n_out:
        raise ValueError(
            f"expected one full rotation of outputs ({basis.period * basis.n_out} values), "
            f"got {flat.shape[0]}"
        )
    return basis.phi_out_pinv @ flat


# ---------------------------------------------------------------------------
# Lifted model assembly
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class LiftedModel:
    """One-rotation-ahead predictor in lifted form.

    dY[next rot] = gamma_ku dU[this rot] + gamma_ky dY[this rot]
                 + h_hat dU[next rot]

    h_hat is strictly block-lower-triangular (causality); the leading
    (P - p) * r columns of gamma_ku are zero (finite predictor memory).
    """

    gamma_ku: np.ndarray
    gamma_ky: np.ndarray
    h_hat: np.ndarray
    period: int
    p: int


def markov_blocks_from_xi(xi: np.ndarray, p: int, n_in: int = N_BLADES,
                          n_out: int = N_BLADES):
    """Split an oracle-format Markov matrix into (p, l, r) / (p, l, l) blocks.

    xi columns run oldest lag first: block m is C A~^(p-1-m) B, so block
    index j (= lag - 1) reads from position p - 1 - j.
    """
    xi = np.asarray(xi, dtype=float)
    mu = np.empty((p, n_out, n_in))
    my = np.empty((p, n_out, n_out))
    for j in range(p):
        m = p - 1 - j
        mu[j] = xi[:, m * n_in:(m + 1) * n_in]
        my[j] = xi[:, p * n_in + m * n_out: p * n_in + (m + 1) * n_out]
    return mu, my


def _resolve_blocks(est, p: int):
    if isinstance(est, MarkovEstimate):
        if est.p != p:
            raise ValueError(f"estimate window p={est.p} does not match requested p={p}")
        mu, my = est.markov_blocks()
    else:
        mu, my = est
        mu = np.asarray(mu, dtype=float)
        my = np.asarray(my, dtype=float)
    if not (np.all(np.isfinite(mu)) and np.all(np.isfinite(my))):
        raise ValueError("Markov blocks contain non-finite entries")
    return mu, my


def _band_matrix(blocks: np.ndarray, period: int, offsets) -> np.ndarray:
    """Block matrix with blocks[j] on block-diagonal offset offsets[j]."""
    p, l, r = blocks.shape
    out = np.zeros((period * l, period * r))
    view = out.reshape(period, l, period, r)
    rows_all = np.arange(period)
    for j, off in enumerate(offsets):
        if off >= 0:
            rows = rows_all[: period - off]
            cols = rows + off
        else:
            rows = rows_all[-off:]
            cols = rows + off
        if rows.size:
            view[rows, :, cols, :] = blocks[j]
    return out


def _toeplitz_parts(mu, my, period, p):
    """(Gamma~ K_u, Gamma~ K_y, H~) from truncated Markov blocks."""
    # Gamma~ K_u block (s, m) = C A~^(s + P - 1 - m) B: offset P - 1 - j for lag j.
    gku = _band_matrix(mu, period, [period - 1 - j for j in range(p)])
    gky = _band_matrix(my, period, [period - 1 - j for j in range(p)])
    # H~ block (s, m) = C A~^(s - m - 1) B: strictly lower, offset -(j + 1).
    h_t = _band_matrix(mu, period, [-(j + 1) for j in range(p)])
    return gku, gky, h_t


def _forward_substitute(my: np.ndarray, rhs: np.ndarray, period: int) -> np.ndarray:
    """Solve (I - G~) X = rhs by block forward substitution.

    G~ is strictly block-lower-triangular with band blocks my[d-1] at lag d,
    so I - G~ is unit triangular and the substitution is exact: zero
    patterns of rhs above the band propagate untouched into X.
    """
    p, l, _ = my.shape
    # Wide row [my[p-1] ... my[0]] aligned with ascending history blocks.
    wide = np.hstack(list(my[::-1]))
    x = rhs.copy()
    for s in range(1, period):
        d = min(s, p)
        x[s * l:(s + 1) * l] += wide[:, (p - d) * l:] @ x[(s - d) * l: s * l]
    return x


def assemble_lifted(est, period: int, p: int) -> LiftedModel:
    """Expand Markov parameters into the corrected lifted predictor.

    The output recursion correction (I - G~)^-1 is applied by solving the
    unit-lower-triangular system rather than forming the inverse. est may be
    a MarkovEstimate or a (mu, my) pair of (p, l, r)/(p, l, l) block arrays
    (e.g. from markov_blocks_from_xi for oracle parameters).
    """
    mu, my = _resolve_blocks(est, p)
    gku, gky, h_t = _toeplitz_parts(mu, my, period, p)
    rhs = np.hstack([gku, gky, h_t])
    sol = _forward_substitute(my, rhs, period)
    if not np.all(np.isfinite(sol)):
        raise ValueError("lifted-model triangular solve produced non-finite values")
    n_u = gku.shape[1]
    n_y = gky.shape[1]
    return LiftedModel(
        gamma_ku=sol[:, :n_u],
        gamma_ky=sol[:, n_u:n_u + n_y],
        h_hat=sol[:, n_u + n_y:],
        period=period,
        p=p,
    )


def predict_lifted(lifted: LiftedModel, du_prev: np.ndarray, dy_prev: np.ndarray,
                   du_curr: np.ndarray) -> np.ndarray:
    """One-rotation-ahead output prediction from rotation-aligned windows.

    Windows are sample-major (P, channels) or already stacked; returns the
    stacked (P * l,) prediction for the next rotation.
    """
    return (
        lifted.gamma_ku @ np.asarray(du_prev, dtype=float).reshape(-1)
        + lifted.gamma_ky @ np.asarray(dy_prev, dtype=float).reshape(-1)
        + lifted.h_hat @ np.asarray(du_curr, dtype=float).reshape(-1)
    )


# ---------------------------------------------------------------------------
# Projected state space and gain
# ---------------------------------------------------------------------------

def _projected_blocks_from_parts(gku, gky, h_t, my, basis: BasisProjection):
    """phi_out^+ (I - G~)^-1 [...] phi blocks via a reduced right-hand side."""
    rhs = np.hstack([gku @ basis.phi, gky @ basis.phi_out, h_t @ basis.phi])
    sol = _forward_substitute(my, rhs, basis.period)
    proj = basis.phi_out_pinv @ sol
    nc = basis.n_coeff
    ncy = 4 * basis.n_out
    return proj[:, :nc], proj[:, nc:nc + ncy], proj[:, nc + ncy:]


def _bar_matrices(t_u, t_y, h_bar, basis: BasisProjection):
    nc, ncy = basis.n_coeff, 4 * basis.n_out
    dim = 2 * ncy + nc
    a_bar = np.zeros((dim, dim))
    a_bar[:ncy, :ncy] = np.eye(ncy)
    a_bar[:ncy, ncy:ncy + nc] = t_u
    a_bar[:ncy, ncy + nc:] = t_y
    a_bar[ncy + nc:, ncy:ncy + nc] = t_u
    a_bar[ncy + nc:, ncy + nc:] = t_y
    b_bar = np.vstack([h_bar, np.eye(nc), h_bar])
    return a_bar, b_bar


def project_state_space(lifted: LiftedModel, basis: BasisProjection):
    """Rotation-level state-space pair (A_bar, B_bar) on [Ybar; dtheta; dYbar].

    A_bar is (8l + 4r) square (36 x 36 for the three-blade case); the middle
    block row is zero and B_bar's middle block is the identity.
    """
    t_u = basis.phi_out_pinv @ lifted.gamma_ku @ basis.phi
    t_y = basis.phi_out_pinv @ lifted.gamma_ky @ basis.phi_out
    h_bar = basis.phi_out_pinv @ lifted.h_hat @ basis.phi
    return _bar_matrices(t_u, t_y, h_bar, basis)


def synthesize_gain(a_bar: np.ndarray, b_bar: np.ndarray, q: np.ndarray, r: np.ndarray,
                    previous_gain: np.ndarray | None = None,
                    p_warm: np.ndarray | None = None,
                    tol: float = 1e-9, max_iter: int = 500):
    """State-feedback gain via the Riccati recursion.

    Returns (gain, solution, failed). On non-convergence the previous gain
    is retained (zero if none yet) and failed is True; the caller counts
    failures and keeps running.
    """
    try:
        sol = solve_dare(a_bar, b_bar, q, r, tol=tol, max_iter=max_iter, p0=p_warm)
        return sol.gain, sol, False
    except DareNonConvergence:
        if previous_gain is None:
            previous_gain = np.zeros((b_bar.shape[1], a_bar.shape[0]))
        return previous_gain, None, True


# ---------------------------------------------------------------------------
# Controller state / theta update
# ---------------------------------------------------------------------------

@dataclass
class ControllerState:
    """Per-rotation repetitive-control state."""

    theta: np.ndarray
    delta_theta: np.ndarray
    gain: np.ndarray | None
    alpha: float
    beta: float
    theta_cap: float
    rotation_index: int = 0
    clamp_events: int = 0

    def __post_init__(self):
        if not (0.0 <= self.alpha <= 1.0 and 0.0 <= self.beta <= 1.0):
            raise ValueError("alpha and beta must lie in [0, 1]")
        if self.theta_cap <= 0.0:
            raise ValueError("theta_cap must be positive")

    @staticmethod
    def fresh(n_coeff: int, alpha: float = 1.0, beta: float = 0.3,
              theta_cap: float = 4.0) -> "ControllerState":
        return ControllerState(
            theta=np.zeros(n_coeff), delta_theta=np.zeros(n_coeff), gain=None,
            alpha=alpha, beta=beta, theta_cap=theta_cap,
        )


def update_theta(cs: ControllerState, y_bar: np.ndarray, delta_theta: np.ndarray,
                 delta_y_bar: np.ndarray) -> ControllerState:
    """theta[j+1] = alpha theta[j] - beta K_f [Ybar; dtheta; dYbar], clamped.

    Called once per rotation. The infinity-norm clamp stands in for real
    actuator limits; clamping is silent apart from the counted event.
    """
    state_vec = np.concatenate([
        np.asarray(y_bar, dtype=float).reshape(-1),
        np.asarray(delta_theta, dtype=float).reshape(-1),
        np.asarray(delta_y_bar, dtype=float).reshape(-1),
    ])
    feedback = 0.0 if cs.gain is None else cs.gain @ state_vec
    theta_next = cs.alpha * cs.theta - cs.beta * feedback
    clamped = np.clip(theta_next, -cs.theta_cap, cs.theta_cap)
    events = cs.clamp_events + int(np.any(clamped != theta_next))
    return ControllerState(
        theta=clamped, delta_theta=clamped - cs.theta,
        gain=cs.gain, alpha=cs.alpha, beta=cs.beta, theta_cap=cs.theta_cap,
        rotation_index=cs.rotation_index + 1, clamp_events=events,
    )


# ---------------------------------------------------------------------------
# Excitation
# ---------------------------------------------------------------------------

class ExcitationGenerator:
    """Filtered pseudo-random binary excitation in coefficient space.

    One independent +-1 stream per coefficient (distinct child seeds),
    smoothed across rotations by a one-pole filter so the per-rotation
    modulation stays slow and the commanded spectrum stays near 1P/2P. The
    filter output of a +-1 input is bounded by 1, so |eta| <= amplitude
    holds elementwise by construction.
    """

    def __init__(self, n_coeff: int, amplitude: float, seed: int,
                 filter_pole: float = 0.8):
        if not (0.0 <= filter_pole < 1.0):
            raise ValueError("filter_pole must lie in [0, 1)")
        if amplitude < 0.0:
            raise ValueError("amplitude must be non-negative")
        self.n_coeff = n_coeff
        self.amplitude = amplitude
        self.filter_pole = filter_pole
        if not isinstance(seed, np.random.SeedSequence):
            seed = np.random.SeedSequence(seed)
        seqs = seed.spawn(n_coeff)
        self._rngs = [np.random.default_rng(s) for s in seqs]
        self._values = np.zeros((0, n_coeff))
        self._filter_state = np.zeros(n_coeff)

    def _extend(self, upto: int) -> None:
        have = self._values.shape[0]
        if upto < have:
            return
        n_new = upto - have + 1
        bits = np.column_stack([
            2.0 * rng.integers(0, 2, size=n_new) - 1.0 for rng in self._rngs
        ])
        out = np.empty((n_new, self.n_coeff))
        z = self._filter_state
        a = self.filter_pole
        for t in range(n_new):
            z = a * z + (1.0 - a) * bits[t]
            out[t] = z
        self._filter_state = z
        self._values = np.vstack([self._values, out])

    def sample(self, j: int) -> np.ndarray:
        """Excitation vector for rotation j (random access, deterministic per seed)."""
        if j < 0:
            raise ValueError("rotation index must be non-negative")
        self._extend(j)
        return self.amplitude * self._values[j]


def generate_excitation(gen: ExcitationGenerator, j: int) -> np.ndarray:
    return gen.sample(j)


class UnrestrictedExcitation:
    """Broadband per-sample pitch noise for the uFTIPC comparison mode.

    A +-1 PRBS held for bit_samples, low-pass filtered at cutoff_hz and
    scaled to the amplitude cap; added directly to the commanded pitch,
    bypassing the basis projection.
    """

    def __init__(self, amplitude_deg: float, cutoff_hz: float, seed: int,
                 dt: float, bit_time_s: float = 1.0):
        self.amplitude = amplitude_deg
        self.cutoff_hz = cutoff_hz
        self.dt = dt
        self.bit_samples = max(1, int(round(bit_time_s / dt)))
        self._alpha = float(np.exp(-2.0 * np.pi * cutoff_hz * dt))
        if not isinstance(seed, np.random.SeedSequence):
            seed = np.random.SeedSequence(seed)
        seqs = seed.spawn(N_BLADES)
        self._rngs = [np.random.default_rng(s) for s in seqs]
        self._z = np.zeros(N_BLADES)
        self._bits = np.zeros(N_BLADES)
        self._next_k = 0

    def block(self, k: int, n: int) -> np.ndarray:
        if k != self._next_k:
            raise ValueError(f"noise stream is sequential: expected k={self._next_k}")
        self._next_k += n
        if self.amplitude == 0.0:
            return np.zeros((n, N_BLADES))
        out = np.empty((n, N_BLADES))
        a = self._alpha
        for t in range(n):
            kk = k + t
            if kk % self.bit_samples == 0:
                self._bits = np.array([2.0 * r.integers(0, 2) - 1.0 for r in self._rngs])
            self._z = a * self._z + (1.0 - a) * self._bits
            out[t] = self._z
        return self.amplitude * np.clip(out, -1.0, 1.0)


# ---------------------------------------------------------------------------
# Orchestrating controller
# ---------------------------------------------------------------------------

@dataclass
class ControllerTuning:
    """Shipped defaults; overridable per load case."""

    alpha: float = 1.0
    beta: float = 0.3
    q_y: float = 1.0
    q_dtheta: float = 0.0
    q_dy: float = 1.0
    r_scale: float = 5e-7
    excitation_amplitude: float = 0.1
    excitation_filter_pole: float = 0.8
    warmup_rotations: int = 20
    theta_cap_deg: float = 4.0
    forgetting: float = 0.99999
    dare_tol: float = 1e-9
    dare_max_iter: int = 500


@dataclass
class RotationLog:
    rotation: int
    theta_norm: float
    delta_theta_norm: float
    dare_residual: float
    dare_failures: int
    clamp_events: int
    y_bar: np.ndarray = field(repr=False, default=None)


class RepetitiveController:
    """Per-rotation adaptive repetitive controller.

    Drives the identification engine on the recorded histories, rebuilds
    the projected model and gain once per rotation (warm-starting the
    Riccati recursion from the previous cost matrix), and updates the
    coefficient vector. Excitation stays on for the entire run.
    """

    def __init__(self, p: int, period: int, tuning: ControllerTuning, seed: int,
                 unrestricted: UnrestrictedExcitation | None = None):
        self.p = p
        self.period = period
        self.tuning = tuning
        self.basis = build_basis(period, N_BLADES)
        self.engine = IdentificationEngine(p, period, lam=tuning.forgetting)
        self.excitation = ExcitationGenerator(
            self.basis.n_coeff, tuning.excitation_amplitude, seed,
            filter_pole=tuning.excitation_filter_pole,
        )
        self.unrestricted = unrestricted
        self.state = ControllerState.fresh(
            self.basis.n_coeff, alpha=tuning.alpha, beta=tuning.beta,
            theta_cap=tuning.theta_cap_deg,
        )
        nc, ncy = self.basis.n_coeff, 4 * N_BLADES
        self.q = np.diag(
            [tuning.q_y] * ncy + [tuning.q_dtheta] * nc + [tuning.q_dy] * ncy
        )
        self.r = tuning.r_scale * np.eye(nc)
        self._y_bar_prev = np.zeros(ncy)
        self._have_prev = False
        self._p_warm = None
        self._last_residual = np.nan
        self.dare_failures = 0
        self.logs: list[RotationLog] = []

    def rotation_commands(self, j: int) -> np.ndarray:
        """(P, 3) commanded pitch for rotation j from the current theta."""
        if self.unrestricted is None:
            coeffs = self.state.theta + self.excitation.sample(j)
            return rotation_commands(self.basis, coeffs)
        u = rotation_commands(self.basis, self.state.theta)
        u += self.unrestricted.block(j * self.period, self.period)
        return u

    def finish_rotation(self, j: int, u_hist: np.ndarray, y_hist: np.ndarray) -> None:
        """Identification + model + gain + theta update at a rotation boundary.

        u_hist / y_hist are run-length history arrays holding samples
        [0, (j+1) P).
        """
        upto = (j + 1) * self.period
        self.engine.ingest(u_hist, y_hist, upto)
        y_rot = y_hist[j * self.period: upto]
        y_bar = project_output(y_rot, self.basis)
        delta_y_bar = y_bar - self._y_bar_prev if self._have_prev else np.zeros_like(y_bar)

        if j + 1 > self.tuning.warmup_rotations:
            mu, my = self.engine.estimate.markov_blocks()
            parts = _toeplitz_parts(mu, my, self.period, self.p)
            t_u, t_y, h_bar = _projected_blocks_from_parts(*parts, my, self.basis)
            a_bar, b_bar = _bar_matrices(t_u, t_y, h_bar, self.basis)
            gain, sol, failed = synthesize_gain(
                a_bar, b_bar, self.q, self.r,
                previous_gain=self.state.gain, p_warm=self._p_warm,
                tol=self.tuning.dare_tol, max_iter=self.tuning.dare_max_iter,
            )
            if failed:
                self.dare_failures += 1
            else:
                self._p_warm = sol.cost_matrix
                self._last_residual = sol.residual
            self.state.gain = gain
            self.state = update_theta(self.state, y_bar, self.state.delta_theta, delta_y_bar)
        else:
            self.state.rotation_index += 1

        self._y_bar_prev = y_bar
        self._have_prev = True
        self.logs.append(RotationLog(
            rotation=j,
            theta_norm=float(np.linalg.norm(self.state.theta)),
            delta_theta_norm=float(np.linalg.norm(self.state.delta_theta)),
            dare_residual=float(self._last_residual),
            dare_failures=self.dare_failures,
            clamp_events=self.state.clamp_events,
            y_bar=y_bar,
        ))
