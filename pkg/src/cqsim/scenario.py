"""Declarative run configurations: parsing, validation, model building.

A scenario is a YAML document with nested sections: a ``run`` type, one
model block matching it, and optional ``grid``, ``initial``, ``numerics``
and ``output`` blocks.  Parsing is strict: duplicate keys, unknown keys,
missing keys and type mismatches are all reported with the offending key
and line number.  Matrices are nested lists of reals; a parallel ``*_im``
key supplies an imaginary part when needed.  Scalar q- or z-dependent
coefficients are polynomial coefficient lists, low order first.

The resolved scenario (defaults filled in) is embedded verbatim in every
output artifact for provenance.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import yaml

from .grids import GridAxis, PhaseGrid, PERIODIC, TRUNCATE
from .models import ToyParams, constant_measurement_model, polynomial_cq_model
from .psd import CouplingTriple

__all__ = ["Scenario", "ScenarioError", "parse_scenario", "parse_scenario_file", "RUN_TYPES"]

RUN_TYPES = ("evolve", "unravel", "sample_paths", "zerodim", "cp_check")


class ScenarioError(ValueError):
    """Parse or validation failure, with key/line context in the message."""

    def __init__(self, problems):
        if isinstance(problems, str):
            problems = [problems]
        self.problems = list(problems)
        super().__init__("; ".join(self.problems))


class _LocatedDict(dict):
    """Mapping that remembers the source line of each key."""

    def __init__(self):
        super().__init__()
        self.key_lines = {}


class _Loader(yaml.SafeLoader):
    pass


def _construct_mapping(loader, node, deep=False):
    mapping = _LocatedDict()
    for key_node, value_node in node.value:
        key = loader.construct_object(key_node, deep=deep)
        line = key_node.start_mark.line + 1
        if key in mapping:
            raise ScenarioError(f"duplicate key {key!r} at line {line}")
        mapping[key] = loader.construct_object(value_node, deep=deep)
        mapping.key_lines[key] = line
    return mapping


_Loader.add_constructor(yaml.resolver.BaseResolver.DEFAULT_MAPPING_TAG, _construct_mapping)


def _load_yaml(text):
    try:
        doc = yaml.load(text, Loader=_Loader)
    except ScenarioError:
        raise
    except yaml.YAMLError as exc:
        raise ScenarioError(f"not valid YAML: {exc}") from exc
    if not isinstance(doc, dict):
        raise ScenarioError("scenario must be a mapping of sections")
    return doc


def _line_of(block, key):
    if isinstance(block, _LocatedDict) and key in block.key_lines:
        return f" (line {block.key_lines[key]})"
    return ""


class _Section:
    """Typed reader over one mapping block, accumulating precise errors."""

    def __init__(self, name, data, problems):
        self.name = name
        self.data = data if data is not None else _LocatedDict()
        self.problems = problems
        self.seen = set()
        if not isinstance(self.data, dict):
            problems.append(f"section {name!r} must be a mapping")
            self.data = _LocatedDict()

    def _fetch(self, key, required, default):
        self.seen.add(key)
        if key not in self.data:
            if required:
                self.problems.append(f"missing required key {key!r} in section {self.name!r}")
            return default
        return self.data[key]

    def number(self, key, required=False, default=None):
        val = self._fetch(key, required, default)
        if val is default and key not in self.data:
            return default
        if isinstance(val, bool) or not isinstance(val, (int, float)):
            self.problems.append(
                f"key {key!r} in section {self.name!r} must be a number, got "
                f"{type(val).__name__}{_line_of(self.data, key)}"
            )
            return default
        return float(val)

    def integer(self, key, required=False, default=None):
        val = self._fetch(key, required, default)
        if val is default and key not in self.data:
            return default
        if isinstance(val, bool) or not isinstance(val, int):
            self.problems.append(
                f"key {key!r} in section {self.name!r} must be an integer"
                f"{_line_of(self.data, key)}"
            )
            return default
        return int(val)

    def string(self, key, required=False, default=None, choices=None):
        val = self._fetch(key, required, default)
        if val is default and key not in self.data:
            return default
        if not isinstance(val, str):
            self.problems.append(
                f"key {key!r} in section {self.name!r} must be a string{_line_of(self.data, key)}"
            )
            return default
        if choices and val not in choices:
            self.problems.append(
                f"key {key!r} in section {self.name!r} must be one of {sorted(choices)}, "
                f"got {val!r}{_line_of(self.data, key)}"
            )
            return default
        return val

    def vector(self, key, required=False, default=None):
        val = self._fetch(key, required, default)
        if val is default and key not in self.data:
            return default
        if not isinstance(val, list) or not all(
            isinstance(x, (int, float)) and not isinstance(x, bool) for x in val
        ):
            self.problems.append(
                f"key {key!r} in section {self.name!r} must be a list of numbers"
                f"{_line_of(self.data, key)}"
            )
            return default
        return [float(x) for x in val]

    def matrix(self, key, required=False, default=None):
        val = self._fetch(key, required, default)
        if val is default and key not in self.data:
            return default
        ok = isinstance(val, list) and val and all(
            isinstance(row, list)
            and len(row) == len(val[0])
            and all(isinstance(x, (int, float)) and not isinstance(x, bool) for x in row)
            for row in val
        )
        if not ok:
            self.problems.append(
                f"key {key!r} in section {self.name!r} must be a rectangular matrix "
                f"(list of equal-length number lists){_line_of(self.data, key)}"
            )
            return default
        return np.array(val, dtype=float)

    def complex_matrix(self, key, required=False, default=None):
        re = self.matrix(key, required=required, default=None)
        im = self.matrix(key + "_im", required=False, default=None)
        if re is None:
            return default
        out = re.astype(complex)
        if im is not None:
            if im.shape != re.shape:
                self.problems.append(
                    f"key {key + '_im'!r} in section {self.name!r} must match the shape of {key!r}"
                )
            else:
                out = out + 1j * im
        return out

    def finish(self):
        for key in self.data:
            base = key[:-3] if key.endswith("_im") else key
            if key not in self.seen and base not in self.seen:
                self.problems.append(
                    f"unknown key {key!r} in section {self.name!r}{_line_of(self.data, key)}"
                )


@dataclass(frozen=True)
class Scenario:
    """A validated run configuration plus its resolved (defaults-filled) form."""

    run_type: str
    model: object
    grid: object
    initial: dict
    numerics: dict
    output: dict
    resolved: dict


_DEFAULT_NUMERICS = {
    "dt": None,
    "t_final": None,
    "n_steps": None,
    "n_trajectories": 1000,
    "n_paths": 1000,
    "seed": 0,
    "stride": 10,
    "safety": 0.4,
    "order": 2,
    "z0_sigma": 0.0,
    "trace_abort": 1e-6,
}


def parse_scenario_file(path) -> Scenario:
    with open(path) as fh:
        return parse_scenario(fh.read())


def parse_scenario(text) -> Scenario:
    """Parse and validate a scenario document; raises ScenarioError."""
    doc = _load_yaml(text)
    problems = []

    top = _Section("<top>", doc, problems)
    run_type = top.string("run", required=True, choices=set(RUN_TYPES))
    top.seen.update({"model", "grid", "initial", "numerics", "output"})
    top.finish()
    if problems:
        raise ScenarioError(problems)

    model_block = doc.get("model")
    grid_block = doc.get("grid")
    initial_block = doc.get("initial")
    numerics = _Section("numerics", doc.get("numerics"), problems)
    resolved_numerics = {}
    for key, default in _DEFAULT_NUMERICS.items():
        if key in ("n_steps", "n_trajectories", "n_paths", "stride", "seed", "order"):
            val = numerics.integer(key, default=default)
        else:
            val = numerics.number(key, default=default)
        resolved_numerics[key] = val if val is not None else default
    numerics.finish()

    output = _Section("output", doc.get("output"), problems)
    resolved_output = {"stride": output.integer("stride", default=resolved_numerics["stride"])}
    output.finish()

    model = None
    grid = None
    initial = {}
    model_resolved = grid_resolved = initial_resolved = None

    if run_type == "cp_check":
        model, model_resolved = _build_triple(model_block, problems)
    elif run_type == "zerodim":
        model, model_resolved = _build_toy(model_block, problems)
    elif run_type == "unravel":
        model, model_resolved = _build_measurement(model_block, problems)
        grid, grid_resolved = _build_grid(grid_block, problems, want_axes=1)
        initial, initial_resolved = _build_unravel_initial(initial_block, problems)
    elif run_type == "evolve":
        model, model_resolved = _build_cq(model_block, problems)
        grid, grid_resolved = _build_grid(grid_block, problems, want_axes=2)
        initial, initial_resolved = _build_evolve_initial(initial_block, problems)
    elif run_type == "sample_paths":
        model, model_resolved = _build_cq(model_block, problems)
        grid, grid_resolved = _build_grid(grid_block, problems, want_axes=2, required=False)
        initial, initial_resolved = _build_paths_initial(initial_block, problems)

    if problems:
        raise ScenarioError(problems)

    resolved = {
        "run": run_type,
        "model": model_resolved,
        "grid": grid_resolved,
        "initial": initial_resolved,
        "numerics": resolved_numerics,
        "output": resolved_output,
    }
    return Scenario(
        run_type=run_type,
        model=model,
        grid=grid,
        initial=initial,
        numerics=resolved_numerics,
        output=resolved_output,
        resolved=resolved,
    )


def _mat_entries(resolved, key, matrix):
    """Record a complex matrix in the resolved dict using the input schema."""
    if matrix is None:
        resolved[key] = None
        return
    resolved[key] = matrix.real.tolist()
    if np.abs(matrix.imag).max() > 0.0:
        resolved[key + "_im"] = matrix.imag.tolist()


def _build_triple(block, problems):
    sec = _Section("model", block, problems)
    d2 = sec.complex_matrix("d2", required=True)
    d1 = sec.complex_matrix("d1", required=True)
    d0 = sec.complex_matrix("d0", required=True)
    sec.finish()
    if problems or d2 is None or d1 is None or d0 is None:
        return None, None
    try:
        triple = CouplingTriple(d2=d2, d1=d1, d0=d0)
    except ValueError as exc:
        problems.append(f"invalid coupling triple: {exc}")
        return None, None
    resolved = {}
    _mat_entries(resolved, "d2", triple.d2)
    _mat_entries(resolved, "d1", triple.d1)
    _mat_entries(resolved, "d0", triple.d0)
    return triple, resolved


def _build_toy(block, problems):
    sec = _Section("model", block, problems)
    m_phi = sec.number("m_phi", required=True)
    m_q = sec.number("m_q", required=True)
    lam = sec.number("lambda", required=True)
    hbar = sec.number("hbar", default=1.0)
    d2 = sec.number("d2", required=True)
    observable = sec.vector("observable", required=True)
    engine = sec.string("engine", default="both", choices={"perturbative", "quadrature", "both"})
    sec.finish()
    if problems:
        return None, None
    obs = tuple(int(x) for x in observable)
    if len(obs) != 3 or any(x < 0 for x in obs):
        problems.append("key 'observable' in section 'model' must be three nonnegative powers")
        return None, None
    try:
        params = ToyParams(m_phi=m_phi, m_q=m_q, lam=lam, hbar=hbar, d2=d2)
    except ValueError as exc:
        problems.append(str(exc))
        return None, None
    resolved = {
        "m_phi": m_phi,
        "m_q": m_q,
        "lambda": lam,
        "hbar": hbar,
        "d2": d2,
        "observable": list(obs),
        "engine": engine,
    }
    return {"params": params, "observable": obs, "engine": engine}, resolved


def _build_cq(block, problems):
    sec = _Section("model", block, problems)
    mass = sec.number("mass", required=True)
    hbar = sec.number("hbar", default=1.0)
    potential = sec.vector("potential", default=[0.0])
    h_q = sec.complex_matrix("h_q", required=True)
    v_i_matrix = sec.complex_matrix("v_i_matrix", default=None)
    v_i_profile = sec.vector("v_i_profile", default=[0.0])
    d2 = sec.vector("d2", default=[0.0])
    d0 = sec.vector("d0", default=[0.0])
    sec.finish()
    if problems:
        return None, None
    try:
        model = polynomial_cq_model(
            mass=mass,
            potential_coeffs=potential,
            h_q=h_q,
            v_i_matrix=v_i_matrix,
            v_i_profile=v_i_profile,
            d2_coeffs=d2,
            d0_coeffs=d0,
            hbar=hbar,
        )
    except ValueError as exc:
        problems.append(f"invalid model: {exc}")
        return None, None
    resolved = {
        "mass": mass,
        "hbar": hbar,
        "potential": potential,
        "v_i_profile": v_i_profile,
        "d2": d2,
        "d0": d0,
    }
    _mat_entries(resolved, "h_q", h_q)
    _mat_entries(resolved, "v_i_matrix", v_i_matrix)
    return model, resolved


def _build_measurement(block, problems):
    sec = _Section("model", block, problems)
    z = sec.complex_matrix("z_op", required=True)
    z_fb = sec.complex_matrix("z_feedback", default=None)
    k = sec.number("k", required=True)
    k_slope = sec.number("k_slope", default=0.0)
    h = sec.complex_matrix("h", default=None)
    hbar = sec.number("hbar", default=1.0)
    sec.finish()
    if problems:
        return None, None
    try:
        model = constant_measurement_model(
            z, k, h=h, hbar=hbar, z_feedback=z_fb, k_slope=k_slope
        )
    except ValueError as exc:
        problems.append(f"invalid measurement model: {exc}")
        return None, None
    resolved = {"k": k, "k_slope": k_slope, "hbar": hbar}
    _mat_entries(resolved, "z_op", z)
    _mat_entries(resolved, "z_feedback", z_fb)
    _mat_entries(resolved, "h", h)
    return model, resolved


def _build_grid(block, problems, want_axes, required=True):
    if block is None and not required:
        return None, None
    sec = _Section("grid", block, problems)
    boundary = sec.string("boundary", default=TRUNCATE, choices={TRUNCATE, PERIODIC})
    axes = []
    names = ("q", "p")[:want_axes] if want_axes == 2 else ("z",)
    resolved = {"boundary": boundary}
    for name in names:
        lo = sec.number(f"{name}_min", required=True)
        hi = sec.number(f"{name}_max", required=True)
        n = sec.integer(f"{name}_points", required=True)
        resolved[f"{name}_min"] = lo
        resolved[f"{name}_max"] = hi
        resolved[f"{name}_points"] = n
        if lo is not None and hi is not None and n is not None:
            try:
                axes.append(GridAxis(name, lo, hi, n))
            except ValueError as exc:
                problems.append(f"invalid grid axis {name!r}: {exc}")
    sec.finish()
    if problems or len(axes) != len(names):
        return None, None
    return PhaseGrid(tuple(axes), boundary=boundary), resolved


def _build_evolve_initial(block, problems):
    sec = _Section("initial", block, problems)
    q0 = sec.number("q0", default=0.0)
    p0 = sec.number("p0", default=0.0)
    sigma_q = sec.number("sigma_q", required=True)
    sigma_p = sec.number("sigma_p", required=True)
    rho_q = sec.complex_matrix("rho_q", default=None)
    sec.finish()
    initial = {"q0": q0, "p0": p0, "sigma_q": sigma_q, "sigma_p": sigma_p, "rho_q": rho_q}
    resolved = {"q0": q0, "p0": p0, "sigma_q": sigma_q, "sigma_p": sigma_p}
    if rho_q is not None:
        _mat_entries(resolved, "rho_q", rho_q)
    return initial, resolved


def _build_unravel_initial(block, problems):
    sec = _Section("initial", block, problems)
    z0 = sec.number("z0", default=0.0)
    psi = sec.complex_matrix("psi", required=True)
    sec.finish()
    if psi is not None and 1 not in psi.shape and psi.ndim != 1:
        problems.append("key 'psi' in section 'initial' must be a row or column vector")
        return {}, None
    psi_flat = None if psi is None else psi.reshape(-1)
    resolved = {"z0": z0}
    if psi is not None:
        _mat_entries(resolved, "psi", psi_flat.reshape(-1, 1))
    return {"z0": z0, "psi": psi_flat}, resolved


def _build_paths_initial(block, problems):
    sec = _Section("initial", block, problems)
    q0 = sec.number("q0", default=0.0)
    p0 = sec.number("p0", default=0.0)
    a = sec.integer("branch_a", default=None)
    b = sec.integer("branch_b", default=None)
    sec.finish()
    pair = None
    if (a is None) != (b is None):
        problems.append("branch_a and branch_b must be given together in section 'initial'")
    elif a is not None:
        pair = (a, b)
    resolved = {"q0": q0, "p0": p0, "branch_a": a, "branch_b": b}
    return {"q0": q0, "p0": p0, "pair": pair}, resolved
