"""Unitary Strang splitting for i d/dt u = (p^{2 theta}/(2m) + V(t)) u.

One step is  K(dt/2) . exp(-i dt V(t + dt/2)) . K(dt/2)  with K the exact
kinetic phase.  Every factor is a unimodular multiplier, so the discrete
propagator is unitary up to roundoff and composes exactly on aligned step
boundaries.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.fft

from .potentials import PotentialModel, eval_on_grid
from .spectral import FREQUENCY, POSITION, KineticOperator, WaveFunction, transform

log = logging.getLogger(__name__)


class EvolutionError(RuntimeError):
    """Raised when the state stops being finite."""


@dataclass
class EvolutionState:
    time: float
    state: WaveFunction
    dt: float
    step_count: int = 0

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError(f"step size must be positive, got {self.dt}")


def free_propagate_exact(phi: WaveFunction, K: KineticOperator, delta_t: float) -> WaveFunction:
    """exp(-i delta_t p^{2 theta}/(2m)) phi, applied as an exact frequency multiplier."""
    hat = transform(phi, FREQUENCY)
    out = WaveFunction(phi.grid, hat.amplitudes * np.exp(-1j * delta_t * K.hamiltonian_multiplier), FREQUENCY)
    return transform(out, phi.representation)


def strang_step(st: EvolutionState, K: KineticOperator, V: PotentialModel) -> EvolutionState:
    grid = st.state.grid
    half = np.exp(-0.5j * st.dt * K.hamiltonian_multiplier)
    psi = transform(st.state, POSITION).amplitudes
    psi = scipy.fft.ifftn(scipy.fft.fftn(psi) * half)
    psi = psi * np.exp(-1j * st.dt * eval_on_grid(V, st.time + 0.5 * st.dt, grid))
    psi = scipy.fft.ifftn(scipy.fft.fftn(psi) * half)
    new = transform(WaveFunction(grid, psi, POSITION), st.state.representation)
    return EvolutionState(st.time + st.dt, new, st.dt, st.step_count + 1)


def step_count(s: float, T: float, dt: float) -> int:
    span = T - s
    if span < 0:
        raise ValueError(f"final time {T} precedes start time {s}")
    n = int(round(span / dt))
    if abs(n * dt - span) > 1e-9 * max(1.0, abs(span)):
        raise ValueError(f"dt={dt} does not divide the interval length {span}")
    return n


@dataclass
class Trajectory:
    times: list[float] = field(default_factory=list)
    rows: list = field(default_factory=list)
    final: WaveFunction | None = None
    steps: int = 0


def evolve(
    phi_s: WaveFunction,
    K: KineticOperator,
    V: PotentialModel,
    s: float,
    T: float,
    dt: float,
    sample_stride: int = 1,
    observer: Callable[[float, WaveFunction], object] | None = None,
    workers: int | None = None,
) -> Trajectory:
    """Propagate ``phi_s`` from ``s`` to ``T`` with fixed step ``dt``.

    ``observer(t, u)`` is called with the position-space state at ``s``, at
    every ``sample_stride``-th step and at ``T``; its return values are
    collected in ``Trajectory.rows``.  Adjacent kinetic half steps between
    samples are fused into one full step.
    """
    if sample_stride < 1:
        raise ValueError("sample_stride must be >= 1")
    if not dt > 0:
        raise ValueError(f"step size must be positive, got {dt}")
    n = step_count(s, T, dt)
    grid = phi_s.grid
    traj = Trajectory()

    def sample(t, amps):
        if not np.all(np.isfinite(amps)):
            raise EvolutionError(
                f"state became non-finite at t={t:.6g}; dt={dt} is too large or the potential overflowed"
            )
        if observer is not None:
            traj.times.append(t)
            traj.rows.append(observer(t, WaveFunction(grid, amps, POSITION)))

    psi = transform(phi_s, POSITION).amplitudes.copy()
    sample(s, psi)
    if n == 0:
        traj.final = WaveFunction(grid, psi, POSITION)
        return traj

    w = K.hamiltonian_multiplier
    half = np.exp(-0.5j * dt * w)
    full = np.exp(-1j * dt * w)
    fft, ifft = scipy.fft.fftn, scipy.fft.ifftn

    hat = fft(psi, workers=workers) * half
    for j in range(n):
        t_mid = s + (j + 0.5) * dt
        psi = ifft(hat, workers=workers)
        psi *= np.exp(-1j * dt * eval_on_grid(V, t_mid, grid))
        hat = fft(psi, workers=workers)
        done = j + 1
        if done == n or done % sample_stride == 0:
            hat *= half
            psi = ifft(hat, workers=workers)
            sample(s + done * dt, psi)
            if done < n:
                hat *= half
        else:
            hat *= full
    traj.final = WaveFunction(grid, psi, POSITION)
    traj.steps = n
    return traj


def propagate(phi_s: WaveFunction, K: KineticOperator, V: PotentialModel, s: float, T: float, dt: float,
              workers: int | None = None) -> WaveFunction:
    """Final state U(T, s) phi_s without sampling."""
    return evolve(phi_s, K, V, s, T, dt, sample_stride=max(1, step_count(s, T, dt)), workers=workers).final
