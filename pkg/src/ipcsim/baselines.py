"""Comparison controllers.

The collective baseline commands zero differential pitch (the surrogate has
no rotor-speed loop to regulate, so the operating-point collective is the
zero vector); its load SD defines the denominator of every rSD figure.

MBC-IPC transforms the three blade loads into fixed-frame tilt/yaw
components with the Coleman transformation, applies a leaky PI per channel,
and maps the commands back to per-blade pitch. It reads loads only: faults
are invisible to it, which is exactly the mechanism that degrades it in the
faulty scenarios (the stuck/derated blade contaminates the transform).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "cpc_baseline",
    "coleman_forward",
    "coleman_inverse",
    "MbcIpcState",
    "mbc_ipc_step",
]

_BLADE_OFFSETS = 2.0 * np.pi * np.arange(3) / 3.0


def cpc_baseline(k: int) -> np.ndarray:
    """Constant-collective baseline: zero differential pitch at any sample."""
    return np.zeros(3)


def coleman_forward(y: np.ndarray, psi: float) -> tuple[float, float]:
    """Rotating blade quantities -> fixed-frame (tilt, yaw) components."""
    if not np.isfinite(psi):
        raise ValueError("azimuth must be finite")
    angles = psi + _BLADE_OFFSETS
    y = np.asarray(y, dtype=float).reshape(3)
    tilt = (2.0 / 3.0) * float(y @ np.cos(angles))
    yaw = (2.0 / 3.0) * float(y @ np.sin(angles))
    return tilt, yaw


def coleman_inverse(tilt: float, yaw: float, psi: float) -> np.ndarray:
    """Fixed-frame commands -> per-blade pitch (transpose convention)."""
    angles = psi + _BLADE_OFFSETS
    return tilt * np.cos(angles) + yaw * np.sin(angles)


@dataclass
class MbcIpcState:
    """Tilt/yaw leaky-PI state with anti-windup at the pitch authority bound.

    Gains are frozen across scenarios, tuned once on the healthy case for
    deep 1P cancellation (the 2P content is untouched: this loop is
    1P-only, so roughly half to two thirds of the total load SD is what it
    removes). The proportional path carries the broadband response to
    measurement noise.
    """

    kp: float = 3.5e-4
    ki: float = 6.0e-4
    leak: float = 0.05
    authority_deg: float = 4.0
    psi_offset: float = 0.0
    tilt_int: float = 0.0
    yaw_int: float = 0.0

    def __post_init__(self):
        if self.authority_deg <= 0.0:
            raise ValueError("authority_deg must be positive")


def mbc_ipc_step(state: MbcIpcState, y: np.ndarray, psi: float, dt: float):
    """One sample of MBC-IPC: Coleman forward, PI, Coleman inverse.

    Returns (state, commanded pitch). The controller sees loads only; a
    faulty actuator silently corrupts what its commands achieve.
    """
    tilt, yaw = coleman_forward(y, psi + state.psi_offset)
    bound = state.authority_deg
    state.tilt_int = float(np.clip(
        state.tilt_int + dt * (state.ki * tilt - state.leak * state.tilt_int),
        -bound, bound))
    state.yaw_int = float(np.clip(
        state.yaw_int + dt * (state.ki * yaw - state.leak * state.yaw_int),
        -bound, bound))
    u_tilt = state.kp * tilt + state.tilt_int
    u_yaw = state.kp * yaw + state.yaw_int
    u = coleman_inverse(u_tilt, u_yaw, psi + state.psi_offset)
    return state, np.clip(u, -bound, bound)
