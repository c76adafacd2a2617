"""Surrogate three-blade turbine plant.

A discrete-time linear innovation-form model with three near-decoupled
second-order blade channels, rotor-periodic 1P/2P blade-load disturbances,
white innovation noise, and injectable actuator / blade faults:

    x[k+1] = A x[k] + B u_eff[k] + L e[k]
    y[k]   = C x[k] + g .* d[k] + e[k]

u_eff is the commanded pitch after the actuator fault map, d is the
deterministic rotor-periodic disturbance (injected at the output, per-blade
gain g), and e is the zero-mean white innovation. Pitch in degrees, loads in
abstract blade-load units; pitching up unloads the blade (negative DC gain).
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

__all__ = [
    "SurrogatePlant",
    "DisturbanceModel",
    "FaultScenario",
    "default_plant",
    "apply_actuator_fault",
    "apply_blade_fault",
    "step",
    "markov_oracle",
    "markov_oracle_siso",
]

N_BLADES = 3


# ---------------------------------------------------------------------------
# Fault scenarios
# ---------------------------------------------------------------------------

FAULT_KINDS = ("healthy", "pas", "pad", "blade_stiffness")


@dataclass(frozen=True)
class FaultScenario:
    """One fault affecting a single blade/actuator from onset_sample onwards.

    kind: "healthy" (no fault), "pas" (actuator stuck at `parameter` deg),
    "pad" (actuator effectiveness scaled by 1 - parameter), or
    "blade_stiffness" (stiffness scale a = parameter).
    """

    kind: str = "healthy"
    blade_index: int = 3
    onset_sample: int = 0
    parameter: float = 0.0

    def __post_init__(self):
        if self.kind not in FAULT_KINDS:
            raise ValueError(f"unknown fault kind {self.kind!r}; choose from {FAULT_KINDS}")
        if self.blade_index not in (1, 2, 3):
            raise ValueError("blade_index must be 1, 2 or 3 (exactly one faulty blade)")
        if self.kind == "pad" and not (0.0 < self.parameter <= 1.0):
            raise ValueError("PAD scale must satisfy 0 < parameter <= 1")
        if self.kind == "blade_stiffness" and not (0.0 < self.parameter <= 1.0):
            raise ValueError("blade stiffness scale must satisfy 0 < parameter <= 1")

    @property
    def blade0(self) -> int:
        """Zero-based faulty blade index."""
        return self.blade_index - 1


def apply_actuator_fault(u_cmd: np.ndarray, fault: FaultScenario, k) -> np.ndarray:
    """Map commanded pitch to effective pitch under the actuator fault.

    Accepts a single command (shape (3,), scalar k) or a block of commands
    (shape (n, 3) with k the sample index of the first row). Identity before
    the onset sample; PAS pins the faulty entry at the stuck angle, PAD
    scales it by (1 - parameter). Blade-stiffness and healthy scenarios
    leave the command untouched.
    """
    u_cmd = np.asarray(u_cmd, dtype=float)
    if not np.all(np.isfinite(u_cmd)):
        raise ValueError("u_cmd contains non-finite entries")
    if fault.kind in ("healthy", "blade_stiffness"):
        return u_cmd.copy()
    single = u_cmd.ndim == 1
    u = u_cmd.reshape(-1, N_BLADES).copy()
    ks = int(k) + np.arange(u.shape[0])
    active = ks >= fault.onset_sample
    f = fault.blade0
    if fault.kind == "pas":
        u[active, f] = fault.parameter
    else:  # pad
        u[active, f] *= 1.0 - fault.parameter
    return u[0] if single else u


# ---------------------------------------------------------------------------
# Disturbance model
# ---------------------------------------------------------------------------

@dataclass
class DisturbanceModel:
    """Rotor-periodic blade loads plus white innovation noise.

    Blade i sees amp_1p[i]*sin(psi + phase_1p[i] + i*2pi/3) plus the 2P
    analogue with doubled blade offset (a rotating load pattern sampled at
    the three blades). The periodic table is computed once and indexed
    modulo P, so d[k] == d[k-P] holds bit-exactly. Innovations are drawn
    sequentially from a generator seeded at construction.
    """

    amp_1p: np.ndarray = field(default_factory=lambda: np.full(N_BLADES, 500.0))
    phase_1p: np.ndarray = field(default_factory=lambda: np.zeros(N_BLADES))
    amp_2p: np.ndarray = field(default_factory=lambda: np.full(N_BLADES, 150.0))
    phase_2p: np.ndarray = field(default_factory=lambda: np.zeros(N_BLADES))
    sigma_e: float = 0.0
    seed: int = 0
    period_jitter: float = 0.0  # robustness mode: +-fraction rotor-speed wobble

    def __post_init__(self):
        for name in ("amp_1p", "phase_1p", "amp_2p", "phase_2p"):
            setattr(self, name, np.asarray(getattr(self, name), dtype=float).reshape(N_BLADES))
        if self.sigma_e < 0.0:
            raise ValueError("sigma_e must be non-negative")
        if not (0.0 <= self.period_jitter < 0.5):
            raise ValueError("period_jitter must lie in [0, 0.5)")
        self._table = None
        self._table_period = None
        base = (self.seed if isinstance(self.seed, np.random.SeedSequence)
                else np.random.SeedSequence(self.seed))
        innov_seq, jitter_seq = base.spawn(2)
        self._rng = np.random.default_rng(innov_seq)
        self._jitter_rng = np.random.default_rng(jitter_seq)
        self._next_k = 0
        self._phase = 0.0
        self._phase_next_k = 0
        self._rate_scale = 1.0

    def periodic_table(self, period: int) -> np.ndarray:
        """(P, 3) table of the deterministic component over one rotation."""
        if self._table is None or self._table_period != period:
            k = np.arange(period)[:, None]
            psi = 2.0 * np.pi * k / period
            offs = 2.0 * np.pi * np.arange(N_BLADES)[None, :] / N_BLADES
            self._table = (
                self.amp_1p[None, :] * np.sin(psi + self.phase_1p[None, :] + offs)
                + self.amp_2p[None, :] * np.sin(2.0 * psi + self.phase_2p[None, :] + 2.0 * offs)
            )
            self._table_period = period
        return self._table

    def periodic_block(self, k: int, n: int, period: int) -> np.ndarray:
        if self.period_jitter == 0.0:
            table = self.periodic_table(period)
            idx = (k + np.arange(n)) % period
            return table[idx]
        # Jittered rotor speed: the disturbance phase advances at a rate
        # redrawn once per nominal rotation, while the controller's azimuth
        # schedule stays on the nominal grid. Sequential access only.
        if k != self._phase_next_k:
            raise ValueError(
                f"jittered disturbance is sequential: expected k={self._phase_next_k}"
            )
        phases = np.empty(n)
        for t in range(n):
            if (k + t) % period == 0:
                wobble = self._jitter_rng.uniform(-1.0, 1.0)
                self._rate_scale = 1.0 + self.period_jitter * wobble
            phases[t] = self._phase
            self._phase += 2.0 * np.pi * self._rate_scale / period
        self._phase_next_k = k + n
        offs = 2.0 * np.pi * np.arange(N_BLADES)[None, :] / N_BLADES
        ph = phases[:, None]
        return (self.amp_1p[None, :] * np.sin(ph + self.phase_1p[None, :] + offs)
                + self.amp_2p[None, :] * np.sin(2.0 * ph + self.phase_2p[None, :] + 2.0 * offs))

    def innovation_block(self, k: int, n: int) -> np.ndarray:
        """Next n innovation rows; k must continue the stream."""
        if k != self._next_k:
            raise ValueError(
                f"innovation stream is sequential: expected k={self._next_k}, got {k}"
            )
        self._next_k += n
        if self.sigma_e == 0.0:
            return np.zeros((n, N_BLADES))
        return self._rng.normal(0.0, self.sigma_e, size=(n, N_BLADES))


# ---------------------------------------------------------------------------
# Plant
# ---------------------------------------------------------------------------

@dataclass
class SurrogatePlant:
    """Innovation-form surrogate with per-blade second-order channels."""

    a: np.ndarray
    b: np.ndarray
    c: np.ndarray
    l_obs: np.ndarray
    dt: float
    period_samples: int
    x: np.ndarray = field(default_factory=lambda: np.zeros(6))
    dist_gain: np.ndarray = field(default_factory=lambda: np.ones(N_BLADES))
    # Construction parameters, kept so blade faults can rebuild a channel.
    nat_freq_hz: np.ndarray = field(default_factory=lambda: np.full(N_BLADES, 7.0))
    damping: float = 0.7
    dc_gain: float = -1500.0
    coupling: float = 0.05
    predictor_poles: tuple = (0.40, 0.35)
    seed: int = 0

    @property
    def n(self) -> int:
        return self.a.shape[0]

    @property
    def n_inputs(self) -> int:
        return self.b.shape[1]

    @property
    def n_outputs(self) -> int:
        return self.c.shape[0]

    @property
    def a_tilde(self) -> np.ndarray:
        """Predictor-form transition matrix A - L C."""
        return self.a - self.l_obs @ self.c

    def copy(self) -> "SurrogatePlant":
        return replace(
            self,
            a=self.a.copy(), b=self.b.copy(), c=self.c.copy(), l_obs=self.l_obs.copy(),
            x=self.x.copy(), dist_gain=self.dist_gain.copy(),
            nat_freq_hz=self.nat_freq_hz.copy(),
        )

    def dc_gain_matrix(self) -> np.ndarray:
        return self.c @ np.linalg.solve(np.eye(self.n) - self.a, self.b)

    def advance_block(self, u_eff: np.ndarray, d: np.ndarray, e: np.ndarray) -> np.ndarray:
        """Advance n samples; returns the n output rows.

        y[t] uses the pre-update state, then x steps forward (innovation
        form: the same e[t] drives both equations).
        """
        u_eff = np.atleast_2d(u_eff)
        n = u_eff.shape[0]
        drive = u_eff @ self.b.T + e @ self.l_obs.T
        y = np.empty((n, N_BLADES))
        x = self.x
        a = self.a
        ct = self.c.T
        for t in range(n):
            y[t] = x @ ct
            x = a @ x + drive[t]
        self.x = x
        y += self.dist_gain[None, :] * d + e
        if not np.all(np.isfinite(x)):
            raise FloatingPointError("plant state diverged (non-finite)")
        return y


def _second_order_channel(nat_freq_hz: float, damping: float, dt: float, dc_gain: float):
    """Discrete 2x2 block with poles rho*exp(+-j theta) and prescribed DC gain.

    Controllable canonical form: A = [[a1, a2], [1, 0]], b enters the first
    state. C = [c, c] keeps the first Markov parameter CB nonzero.
    """
    wn = 2.0 * np.pi * nat_freq_hz
    rho = np.exp(-damping * wn * dt)
    theta = wn * np.sqrt(max(1.0 - damping**2, 0.0)) * dt
    a1 = 2.0 * rho * np.cos(theta)
    a2 = -rho * rho
    a_blk = np.array([[a1, a2], [1.0, 0.0]])
    c_val = dc_gain * (1.0 - a1 - a2) / 2.0
    c_blk = np.array([c_val, c_val])
    return a_blk, c_blk


def _place_observer(a_blk: np.ndarray, c_blk: np.ndarray, poles) -> np.ndarray:
    """Observer gain putting eig(A - l c) at the requested pole pair.

    For the 2x2 canonical block both characteristic coefficients are affine
    in l, so placement is an exact 2x2 linear solve.
    """
    a1, a2 = a_blk[0, 0], a_blk[0, 1]
    c1, c2 = c_blk
    mu1, mu2 = poles
    tr_des, det_des = mu1 + mu2, mu1 * mu2
    # tr(A - l c) = a1 - l1 c1 - l2 c2, det(A - l c) = c2 l1 + (a2 c1 - a1 c2) l2 - a2
    mat = np.array([[-c1, -c2], [c2, a2 * c1 - a1 * c2]])
    rhs = np.array([tr_des - a1, det_des + a2])
    return np.linalg.solve(mat, rhs)


def _build_matrices(nat_freq_hz, damping, dt, dc_gain, coupling, predictor_poles):
    n = 2 * N_BLADES
    a = np.zeros((n, n))
    b = np.zeros((n, N_BLADES))
    c = np.zeros((N_BLADES, n))
    l_obs = np.zeros((n, N_BLADES))
    for i in range(N_BLADES):
        a_blk, c_blk = _second_order_channel(nat_freq_hz[i], damping, dt, dc_gain)
        sl = slice(2 * i, 2 * i + 2)
        a[sl, sl] = a_blk
        c[i, sl] = c_blk
        l_obs[sl, i] = _place_observer(a_blk, c_blk, predictor_poles)
        for j in range(N_BLADES):
            b[2 * i, j] = 1.0 if i == j else coupling
    return a, b, c, l_obs


def build_plant(nat_freq_hz: float = 7.0, damping: float = 0.7, dc_gain: float = -1500.0,
                coupling: float = 0.05, predictor_poles=(0.40, 0.35), dt: float = 0.01,
                period_samples: int = 100, seed: int = 0) -> SurrogatePlant:
    """Surrogate with explicit channel parameters (all blades identical)."""
    nat = np.full(N_BLADES, float(nat_freq_hz))
    poles = tuple(predictor_poles)
    a, b, c, l_obs = _build_matrices(nat, damping, dt, dc_gain, coupling, poles)
    return SurrogatePlant(
        a=a, b=b, c=c, l_obs=l_obs, dt=dt, period_samples=period_samples,
        nat_freq_hz=nat, damping=damping, dc_gain=dc_gain, coupling=coupling,
        predictor_poles=poles, seed=seed,
    )


def default_plant(seed: int = 0) -> SurrogatePlant:
    """Reference surrogate: 7 Hz well-damped blade modes (innovation-to-load
    noise gain stays near one), -1500 units/deg DC gain,
    5% input cross-coupling, dt = 0.01 s, P = 100 (1 s rotor period)."""
    return build_plant(seed=seed)


def apply_blade_fault(plant: SurrogatePlant, fault: FaultScenario) -> SurrogatePlant:
    """Plant with the faulty blade's channel restiffened.

    The faulty channel's natural frequency scales by sqrt(a) and its
    output-disturbance gain by 1/a; healthy channels are untouched
    (bit-identical blocks). DC gain of the channel is preserved.
    """
    if fault.kind != "blade_stiffness":
        raise ValueError("apply_blade_fault requires a blade_stiffness scenario")
    out = plant.copy()
    scale = fault.parameter
    if scale == 1.0:
        return out
    i = fault.blade0
    out.nat_freq_hz[i] = plant.nat_freq_hz[i] * np.sqrt(scale)
    a_blk, c_blk = _second_order_channel(out.nat_freq_hz[i], plant.damping, plant.dt, plant.dc_gain)
    sl = slice(2 * i, 2 * i + 2)
    out.a[sl, sl] = a_blk
    out.c[i, sl] = c_blk
    out.l_obs[sl, :] = 0.0
    out.l_obs[sl, i] = _place_observer(a_blk, c_blk, plant.predictor_poles)
    out.dist_gain[i] = plant.dist_gain[i] / scale
    return out


def _maybe_switch_blade_fault(plant: SurrogatePlant, fault: FaultScenario, k: int) -> None:
    if fault.kind == "blade_stiffness" and k == fault.onset_sample:
        faulted = apply_blade_fault(plant, fault)
        plant.a, plant.c, plant.l_obs = faulted.a, faulted.c, faulted.l_obs
        plant.dist_gain = faulted.dist_gain
        plant.nat_freq_hz = faulted.nat_freq_hz


def step(plant: SurrogatePlant, u_cmd: np.ndarray, disturbance: DisturbanceModel,
         fault: FaultScenario, k: int) -> np.ndarray:
    """One sample of the closed plant: fault map, state update, output.

    k must increment by one per call (the innovation stream is sequential).
    """
    _maybe_switch_blade_fault(plant, fault, k)
    u_eff = apply_actuator_fault(np.asarray(u_cmd, dtype=float).reshape(N_BLADES), fault, k)
    d = disturbance.periodic_block(k, 1, plant.period_samples)
    e = disturbance.innovation_block(k, 1)
    return plant.advance_block(u_eff[None, :], d, e)[0]


# ---------------------------------------------------------------------------
# Identification ground truth
# ---------------------------------------------------------------------------

def markov_oracle(plant: SurrogatePlant, p: int) -> np.ndarray:
    """Exact predictor Markov matrix [C Ã^{p-1} B ... C B | C Ã^{p-1} L ... C L].

    Test-only ground truth for the identification stage; shape
    (n_outputs, p * (n_inputs + n_outputs)).
    """
    if p < 1:
        raise ValueError("p must be >= 1")
    at = plant.a_tilde
    l, r = plant.n_outputs, plant.n_inputs
    blocks_u = np.empty((p, l, r))
    blocks_y = np.empty((p, l, l))
    cat = plant.c.copy()
    for j in range(p):
        blocks_u[j] = cat @ plant.b
        blocks_y[j] = cat @ plant.l_obs
        cat = cat @ at
    out = np.empty((l, p * (r + l)))
    for m in range(p):
        out[:, m * r:(m + 1) * r] = blocks_u[p - 1 - m]
        out[:, p * r + m * l: p * r + (m + 1) * l] = blocks_y[p - 1 - m]
    return out


def markov_oracle_siso(plant: SurrogatePlant, p: int, blade: int) -> np.ndarray:
    """Blade-restricted oracle row (1 x 2p): the (i, i) entries of each block."""
    full = markov_oracle(plant, p)
    i = blade - 1
    r, l = plant.n_inputs, plant.n_outputs
    u_part = [full[i, m * r + i] for m in range(p)]
    y_part = [full[i, p * r + m * l + i] for m in range(p)]
    return np.array(u_part + y_part)
