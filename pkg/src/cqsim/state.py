"""The discretized hybrid classical-quantum state.

A `HybridState` attaches one un-normalized d x d density matrix to every
cell of a `PhaseGrid`: the array ``cells[..., :, :]`` is the density
varrho(z) per unit phase-space volume, so that

    total trace = sum_cells Tr varrho(z) * cell_volume = 1

for a normalized state.  The per-cell trace is simultaneously the classical
probability density, and the volume-weighted sum of cells is the quantum
marginal density operator; the two marginals tie together through the
total trace, which diagnostics monitor during evolution.

States are immutable snapshots: evolution produces new instances and cells
may be read concurrently.
"""

from __future__ import annotations

import io
import json
from dataclasses import dataclass

import numpy as np

from .grids import PhaseGrid, GridAxis

__all__ = [
    "HybridState",
    "hermiticity_defect",
    "total_trace",
    "classical_marginal",
    "quantum_marginal",
    "purity_of_marginal",
    "coherence",
    "normalize",
    "expectation",
    "min_cell_eigenvalue",
    "gaussian_product_state",
    "save_state",
    "load_state",
]

HERMITICITY_TOL = 1e-12
# Evolution at finite step size is only approximately positive.
POSITIVITY_TOL = 1e-8
# Truncate-boundary leakage beyond this aborts a run.
LEAK_LIMIT = 1e-4


@dataclass(frozen=True)
class HybridState:
    """Hybrid state: grid plus one complex Hermitian matrix per cell."""

    grid: PhaseGrid
    cells: np.ndarray  # shape grid.shape + (d, d)

    def __post_init__(self):
        cells = np.asarray(self.cells, dtype=complex)
        expected = self.grid.shape
        if cells.ndim != len(expected) + 2 or cells.shape[: len(expected)] != expected:
            raise ValueError(
                f"cells shape {cells.shape} does not match grid shape {expected} + (d, d)"
            )
        if cells.shape[-1] != cells.shape[-2]:
            raise ValueError("cells must be square matrices")
        object.__setattr__(self, "cells", cells)

    @property
    def hilbert_dim(self) -> int:
        return self.cells.shape[-1]

    @property
    def cell_volume(self) -> float:
        return self.grid.cell_volume

    def validate(self, herm_tol=HERMITICITY_TOL, positivity_tol=POSITIVITY_TOL):
        defect = hermiticity_defect(self)
        scale = 1.0 + np.abs(self.cells).max()
        if defect > herm_tol * scale:
            raise ValueError(f"cells not Hermitian: defect {defect:.3e}")
        low = min_cell_eigenvalue(self)
        if low < -positivity_tol:
            raise ValueError(f"cell negativity {low:.3e} beyond {positivity_tol:.1e}")
        return self


def hermiticity_defect(state: HybridState) -> float:
    """Max entrywise deviation of the cells from Hermiticity."""
    swapped = np.conj(np.swapaxes(state.cells, -1, -2))
    return float(np.abs(state.cells - swapped).max())


def total_trace(state: HybridState) -> float:
    """Volume-weighted total trace; 1 for a normalized state."""
    tr = np.einsum("...ii->...", state.cells)
    return float(tr.real.sum() * state.cell_volume)


def classical_marginal(state: HybridState) -> np.ndarray:
    """Probability density p(z) = Tr varrho(z) over the grid."""
    return np.einsum("...ii->...", state.cells).real


def quantum_marginal(state: HybridState) -> np.ndarray:
    """The d x d density matrix obtained by integrating out the grid."""
    axes = tuple(range(state.grid.ndim))
    rho = state.cells.sum(axis=axes) * state.cell_volume
    return 0.5 * (rho + rho.conj().T)


def purity_of_marginal(state: HybridState) -> float:
    """Tr(rho^2) of the trace-normalized quantum marginal, in [0, 1]."""
    rho = quantum_marginal(state)
    tr = np.trace(rho).real
    if tr == 0.0:
        return 0.0
    rho = rho / tr
    return float(np.trace(rho @ rho).real)


def coherence(state: HybridState, i: int, j: int) -> np.ndarray:
    """The field |varrho_ij(z)| over the grid."""
    return np.abs(state.cells[..., i, j])


def normalize(state: HybridState) -> HybridState:
    tr = total_trace(state)
    if tr <= 0.0:
        raise ValueError(f"cannot normalize state with total trace {tr}")
    return HybridState(state.grid, state.cells / tr)


def expectation(state: HybridState, f, operator) -> complex:
    """Expectation sum_z f(z) Tr(varrho(z) A) * cell_volume.

    ``f`` may be a scalar, an array over the grid, or a callable taking the
    coordinate meshes.  ``operator`` is a d x d matrix.
    """
    if callable(f):
        fz = f(*state.grid.meshes())
    else:
        fz = np.asarray(f)
    a = np.asarray(operator, dtype=complex)
    tr_rho_a = np.einsum("...ij,ji->...", state.cells, a)
    return complex((fz * tr_rho_a).sum() * state.cell_volume)


def min_cell_eigenvalue(state: HybridState) -> float:
    """Smallest eigenvalue over all cell matrices (positivity monitor)."""
    flat = state.cells.reshape(-1, state.hilbert_dim, state.hilbert_dim)
    flat = 0.5 * (flat + np.conj(np.swapaxes(flat, -1, -2)))
    return float(np.linalg.eigvalsh(flat).min())


def gaussian_product_state(
    grid: PhaseGrid, centers, sigmas, rho_q=None, normalize_output=True
) -> HybridState:
    """Gaussian classical density times a fixed quantum density matrix.

    ``centers`` and ``sigmas`` give one (mean, width) pair per grid axis;
    ``rho_q`` defaults to the trivial 1 x 1 matrix [[1.0]].
    """
    meshes = grid.meshes()
    weight = np.ones(grid.shape)
    for mesh, c, s in zip(meshes, centers, sigmas):
        weight = weight * np.exp(-0.5 * ((mesh - c) / s) ** 2) / (s * np.sqrt(2.0 * np.pi))
    if rho_q is None:
        rho_q = np.array([[1.0 + 0.0j]])
    rho_q = np.asarray(rho_q, dtype=complex)
    tr = np.trace(rho_q).real
    if tr != 0.0:
        rho_q = rho_q / tr
    cells = weight[..., None, None] * rho_q
    state = HybridState(grid, cells)
    return normalize(state) if normalize_output else state


# -- columnar text serialization -------------------------------------------
#
# One row per cell: the cell coordinates, then the d*d matrix entries in
# row-major order as (re, im) pairs.  Header lines carry the grid metadata
# and, for provenance, an optional resolved-scenario JSON blob.

FLOAT_FMT = "{:.17g}"


def save_state(state: HybridState, path, scenario=None):
    with open(path, "w") as fh:
        fh.write(state_to_text(state, scenario=scenario))


def state_to_text(state: HybridState, scenario=None) -> str:
    buf = io.StringIO()
    meta = {
        "axes": [
            {"name": ax.name, "lo": ax.lo, "hi": ax.hi, "n": ax.n} for ax in state.grid.axes
        ],
        "boundary": state.grid.boundary,
        "hilbert_dim": state.hilbert_dim,
    }
    buf.write("# cqsim-state " + json.dumps(meta, sort_keys=True) + "\n")
    if scenario is not None:
        buf.write("# scenario " + json.dumps(scenario, sort_keys=True) + "\n")
    d = state.hilbert_dim
    names = [ax.name for ax in state.grid.axes]
    cols = names + [f"{part}_{i}{j}" for i in range(d) for j in range(d) for part in ("re", "im")]
    buf.write("# columns: " + ",".join(cols) + "\n")
    meshes = state.grid.meshes()
    flat_coords = [m.reshape(-1) for m in meshes]
    flat_cells = state.cells.reshape(-1, d, d)
    for idx in range(flat_cells.shape[0]):
        row = [FLOAT_FMT.format(c[idx]) for c in flat_coords]
        for i in range(d):
            for j in range(d):
                row.append(FLOAT_FMT.format(flat_cells[idx, i, j].real))
                row.append(FLOAT_FMT.format(flat_cells[idx, i, j].imag))
        buf.write(",".join(row) + "\n")
    return buf.getvalue()


def load_state(path) -> HybridState:
    with open(path) as fh:
        text = fh.read()
    return state_from_text(text)


def state_from_text(text: str) -> HybridState:
    lines = text.splitlines()
    if not lines or not lines[0].startswith("# cqsim-state "):
        raise ValueError("not a cqsim state file (missing header)")
    meta = json.loads(lines[0][len("# cqsim-state ") :])
    axes = tuple(GridAxis(a["name"], a["lo"], a["hi"], a["n"]) for a in meta["axes"])
    grid = PhaseGrid(axes, boundary=meta["boundary"])
    d = meta["hilbert_dim"]
    ncoord = len(axes)
    data = []
    for line in lines:
        if line.startswith("#") or not line.strip():
            continue
        parts = [float(x) for x in line.split(",")]
        data.append(parts)
    arr = np.array(data)
    if arr.shape[0] != int(np.prod(grid.shape)):
        raise ValueError("row count does not match grid shape")
    entries = arr[:, ncoord:]
    cells = (entries[:, 0::2] + 1j * entries[:, 1::2]).reshape(grid.shape + (d, d))
    return HybridState(grid, cells)
