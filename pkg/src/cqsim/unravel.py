"""Stochastic trajectory unraveling of the saturated dynamics.

A continuous measurement of a Hermitian operator Z(z) at strength k(z)
drives the coupled Ito equations

    d|psi> = [ -(i/hbar) H dt - k(z)(Z - <Z>)^2 dt
               + sqrt(2 k(z)) (Z - <Z>) dxi ] |psi>,
    dz     = <Z> dt + dxi / sqrt(8 k(z)),

with <Z> = <psi|Z(z)|psi> and dxi a Wiener increment.  Each realization
keeps the quantum state pure conditioned on the classical signal; the
ensemble average over signals reconstructs the hybrid state solving the
linear measurement master equation (couplings D0 = 2k, D2 = 1/(8k)), which
is how trajectories are cross-validated against the grid evolution.

Integration is Euler-Maruyama with per-step renormalization of the state.
Randomness comes from counter-based Philox streams keyed on
(master_seed, trajectory_index), so ensembles are order-independent,
parallel-safe and bitwise reproducible; ensemble reductions always run in
trajectory-index order.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .grids import PhaseGrid
from .models import MeasurementModel
from .state import HybridState

__all__ = [
    "Trajectory",
    "EnsembleResult",
    "trajectory_rng",
    "unravel_step",
    "run_trajectory",
    "run_ensemble",
    "bin_ensemble",
    "ensemble_to_hybrid",
    "estimate_km_moments",
]

_MASK64 = (1 << 64) - 1


def trajectory_rng(master_seed: int, index: int) -> np.random.Generator:
    """Independent counter-based stream for one trajectory."""
    key = np.array([master_seed & _MASK64, index & _MASK64], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


@dataclass(frozen=True)
class Trajectory:
    """One realization of the coupled signal/state equations."""

    seed: int
    times: np.ndarray
    z: np.ndarray
    psi: np.ndarray  # (n_steps + 1, d), unit rows
    norm_defect: Optional[np.ndarray] = None  # per-step |  ||psi_raw|| - 1 |

    def at_time(self, t: float):
        idx = int(np.argmin(np.abs(self.times - t)))
        if abs(self.times[idx] - t) > 1e-9 * (1.0 + abs(t)):
            raise ValueError(f"trajectory has no sample at t={t}")
        return self.z[idx], self.psi[idx]


@dataclass(frozen=True)
class EnsembleResult:
    """Final-time snapshot of an ensemble, plus optional signal history."""

    master_seed: int
    t_final: float
    z: np.ndarray  # (n,)
    psi: np.ndarray  # (n, d)
    z_series: Optional[np.ndarray] = None  # (n, n_recorded) signal history
    series_times: Optional[np.ndarray] = None


def _step_arrays(m: MeasurementModel, psi, z, dt, xi):
    """Vectorized Euler-Maruyama update; psi (n, d), z (n,), xi (n,)."""
    k = np.asarray(m.k(z), dtype=float)
    if np.any(k <= 0.0):
        bad = z[np.argmin(k)]
        raise ValueError(f"measurement strength k(z) <= 0 at visited z={bad:g}")
    z_op = np.asarray(m.z_op(z), dtype=complex)
    d_xi = xi * np.sqrt(dt)

    z_psi = np.einsum("nij,nj->ni", z_op, psi)
    exp_z = np.einsum("ni,ni->n", psi.conj(), z_psi).real
    a_psi = z_psi - exp_z[:, None] * psi
    a2_psi = np.einsum("nij,nj->ni", z_op, a_psi) - exp_z[:, None] * a_psi

    delta = (-k * dt)[:, None] * a2_psi + (np.sqrt(2.0 * k) * d_xi)[:, None] * a_psi
    if m.h is not None and np.abs(m.h).max() > 0.0:
        delta = delta + (-1j / m.hbar) * dt * np.einsum("ij,nj->ni", m.h, psi)
    psi_raw = psi + delta
    norms = np.sqrt(np.einsum("ni,ni->n", psi_raw.conj(), psi_raw).real)
    psi_new = psi_raw / norms[:, None]
    z_new = z + exp_z * dt + d_xi / np.sqrt(8.0 * k)
    return psi_new, z_new, norms


def unravel_step(m: MeasurementModel, psi, z, dt, xi):
    """Single-trajectory step; returns (psi', z').

    ``xi`` is a standard normal draw; the Wiener increment is xi*sqrt(dt).
    """
    psi = np.asarray(psi, dtype=complex)
    psi_new, z_new, _ = _step_arrays(m, psi[None, :], np.atleast_1d(float(z)), float(dt), np.atleast_1d(float(xi)))
    return psi_new[0], float(z_new[0])


def run_trajectory(
    m: MeasurementModel, psi0, z0, dt, n_steps, seed, record_norm_defect=False, z0_sigma=0.0
) -> Trajectory:
    """Integrate one trajectory; deterministic for a fixed seed.

    ``z0_sigma`` > 0 draws the initial signal from N(z0, z0_sigma^2) using
    the trajectory's own stream (initial classical uncertainty).
    """
    rng = trajectory_rng(seed, 0)
    if z0_sigma > 0.0:
        z0 = z0 + z0_sigma * rng.standard_normal()
    xis = rng.standard_normal(n_steps)
    psi = np.asarray(psi0, dtype=complex)
    psi = psi / np.linalg.norm(psi)
    d = psi.shape[0]
    zs = np.empty(n_steps + 1)
    psis = np.empty((n_steps + 1, d), dtype=complex)
    defects = np.empty(n_steps) if record_norm_defect else None
    zs[0] = z0
    psis[0] = psi
    z_arr = np.atleast_1d(float(z0))
    psi_arr = psi[None, :]
    for step in range(n_steps):
        psi_arr, z_arr, norms = _step_arrays(m, psi_arr, z_arr, dt, xis[step : step + 1])
        if record_norm_defect:
            defects[step] = abs(norms[0] - 1.0)
        zs[step + 1] = z_arr[0]
        psis[step + 1] = psi_arr[0]
    times = np.arange(n_steps + 1) * dt
    return Trajectory(seed=seed, times=times, z=zs, psi=psis, norm_defect=defects)


def run_ensemble(
    m: MeasurementModel,
    psi0,
    z0,
    dt,
    n_steps,
    master_seed,
    n_trajectories,
    signal_stride=0,
    chunk=4096,
    z0_sigma=0.0,
    n_workers=1,
) -> EnsembleResult:
    """Integrate an ensemble with per-trajectory Philox streams.

    ``signal_stride`` > 0 records the signal every that many steps (plus the
    endpoints) for moment estimation.  ``z0_sigma`` > 0 draws each initial
    signal from N(z0, z0_sigma^2).  Trajectories are processed in chunks;
    each chunk writes a disjoint slice of the preallocated result arrays,
    so the output is identical for any worker count.
    """
    psi0 = np.asarray(psi0, dtype=complex)
    psi0 = psi0 / np.linalg.norm(psi0)
    d = psi0.shape[0]
    n = int(n_trajectories)
    z_final = np.empty(n)
    psi_final = np.empty((n, d), dtype=complex)
    record_idx = None
    z_series = None
    if signal_stride > 0:
        record_idx = np.unique(np.r_[0, np.arange(signal_stride, n_steps, signal_stride), n_steps])
        z_series = np.empty((n, record_idx.size))

    def run_chunk(lo, hi):
        m_chunk = hi - lo
        xis = np.empty((m_chunk, n_steps))
        z = np.full(m_chunk, float(z0))
        for i in range(m_chunk):
            rng = trajectory_rng(master_seed, lo + i)
            if z0_sigma > 0.0:
                z[i] += z0_sigma * rng.standard_normal()
            xis[i] = rng.standard_normal(n_steps)
        psi = np.broadcast_to(psi0, (m_chunk, d)).copy()
        col = 0
        if record_idx is not None and record_idx[0] == 0:
            z_series[lo:hi, 0] = z
            col = 1
        for step in range(n_steps):
            psi, z, _ = _step_arrays(m, psi, z, dt, xis[:, step])
            if record_idx is not None and col < record_idx.size and record_idx[col] == step + 1:
                z_series[lo:hi, col] = z
                col += 1
        z_final[lo:hi] = z
        psi_final[lo:hi] = psi

    bounds = [(lo, min(lo + chunk, n)) for lo in range(0, n, chunk)]
    if n_workers > 1 and len(bounds) > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=n_workers) as pool:
            list(pool.map(lambda b: run_chunk(*b), bounds))
    else:
        for lo, hi in bounds:
            run_chunk(lo, hi)

    times = record_idx * dt if record_idx is not None else None
    return EnsembleResult(
        master_seed=master_seed,
        t_final=n_steps * dt,
        z=z_final,
        psi=psi_final,
        z_series=z_series,
        series_times=times,
    )


def bin_ensemble(z, psi, grid: PhaseGrid, outside_limit=1e-3) -> HybridState:
    """Reconstruct the hybrid state by binning signals on a 1-axis grid.

    cell(z) = (1/N) sum_{trajectories in cell} |psi><psi| / cell_volume, so
    the total trace is exactly 1 before float error.  Aborts when more than
    ``outside_limit`` of the trajectories fall outside the grid.
    """
    if grid.ndim != 1:
        raise ValueError("bin_ensemble needs a single-axis grid (the signal axis)")
    z = np.asarray(z, dtype=float)
    psi = np.asarray(psi, dtype=complex)
    n, d = psi.shape
    edges = grid.edges(grid.axes[0].name)
    idx = np.searchsorted(edges, z, side="right") - 1
    inside = (idx >= 0) & (idx < grid.axes[0].n)
    frac_out = 1.0 - inside.sum() / n
    if frac_out > outside_limit:
        raise ValueError(
            f"{frac_out:.2%} of trajectories fall outside the grid (limit {outside_limit:.2%})"
        )
    cells = np.zeros((grid.axes[0].n, d, d), dtype=complex)
    outer = psi[inside][:, :, None] * psi[inside].conj()[:, None, :]
    np.add.at(cells, idx[inside], outer)
    cells /= inside.sum() * grid.cell_volume
    return HybridState(grid, cells)


def ensemble_to_hybrid(trajectories, grid: PhaseGrid, t: float) -> HybridState:
    """Bin a collection of `Trajectory` objects at the common time ``t``."""
    zs = []
    psis = []
    for traj in trajectories:
        z, psi = traj.at_time(t)
        zs.append(z)
        psis.append(psi)
    return bin_ensemble(np.array(zs), np.array(psis), grid)


def estimate_km_moments(trajectories, dt, n_bins=20, bin_range=None):
    """Empirical Kramers-Moyal drift and diffusion, binned over z.

    Per bin, D1 = mean(dz)/dt and D2 = Var(dz)/dt, conditioned on the bin
    of the pre-step value (second moment convention: variance D2*dt).
    Accepts a signal array (one row per trajectory), a single Trajectory,
    or a sequence of them sharing the lag ``dt``.
    Returns (bin_centers, d1, d2, counts); empty bins hold NaN.
    """
    if isinstance(trajectories, Trajectory):
        z_series = trajectories.z
    elif isinstance(trajectories, (list, tuple)) and trajectories and isinstance(
        trajectories[0], Trajectory
    ):
        z_series = np.stack([t.z for t in trajectories])
    else:
        z_series = trajectories
    z_series = np.atleast_2d(np.asarray(z_series, dtype=float))
    starts = z_series[:, :-1].ravel()
    increments = (z_series[:, 1:] - z_series[:, :-1]).ravel()
    if bin_range is None:
        bin_range = (starts.min(), starts.max() + 1e-12)
    edges = np.linspace(bin_range[0], bin_range[1], n_bins + 1)
    centers = 0.5 * (edges[1:] + edges[:-1])
    which = np.digitize(starts, edges) - 1
    d1 = np.full(n_bins, np.nan)
    d2 = np.full(n_bins, np.nan)
    counts = np.zeros(n_bins, dtype=int)
    for b in range(n_bins):
        sel = increments[which == b]
        counts[b] = sel.size
        if sel.size >= 2:
            d1[b] = sel.mean() / dt
            d2[b] = sel.var(ddof=1) / dt
    return centers, d1, d2, counts
