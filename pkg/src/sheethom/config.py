"""Run configuration: a YAML tree validated into typed settings.

Top level keys::

    omega: 1.0                    # or a list of frequencies
    mu: 1.0
    seed: 0                       # random trials in the weak residual
    x_macro: [0, 0, 0]
    material: {epsilon: ..., sigma: ...}
    geometry: {resolution: 16, sheet: {type: flat, normal_axis: 3, offset: 0.0}}
    solver: {tol: 1.0e-10, max_iter: 2000, method: auto, eta: 0.0}
    admissibility: {samples: 1024, floor: 1.0e-8}
    finescale: {L: 1.0, d: [0.125, 0.0625], window: 0.25, sublayers: 16,
                eps_ext: 1.0, incidence: 1.0, polarization: 1}
    enz: {sigma_sheet: 0.3i, eps_host: 2.0, f: 1.0, factors: [0.5, 1, 2],
          L: 1.0, eps_ext: 1.0}
    output: {nodal: false, dump_system: false}

Unknown keys are errors.  Sections are only required by the subcommands that
use them.
"""

from __future__ import annotations

import dataclasses
import hashlib
from pathlib import Path
from typing import Any, Mapping, Optional

import numpy as np
import yaml

from .core import CellGeometry, FlatSheet, GraphSheet, MaterialModel
from .profiles import ProfileError, build_field, build_height, build_scalar, parse_axis, parse_complex, parse_real


class ConfigError(ValueError):
    """Invalid configuration; the message starts with the offending field path."""


def _section(tree: Mapping, key: str, allowed: set, path: str = "") -> Optional[Mapping]:
    if key not in tree:
        return None
    where = f"{path}{key}"
    value = tree[key]
    if not isinstance(value, Mapping):
        raise ConfigError(f"{where}: expected a mapping")
    unknown = set(value) - allowed
    if unknown:
        raise ConfigError(f"{where}.{sorted(unknown)[0]}: unknown key")
    return value


def _require(section: Optional[Mapping], name: str) -> Mapping:
    if section is None:
        raise ConfigError(f"{name}: missing required section")
    return section


def _real(tree: Mapping, key: str, path: str, default=None, *, positive: bool = False) -> float:
    where = f"{path}{key}"
    if key not in tree:
        if default is None:
            raise ConfigError(f"{where}: missing required field")
        return default
    try:
        value = parse_real(tree[key], where)
    except ProfileError as exc:
        raise ConfigError(str(exc)) from None
    if positive and not value > 0:
        raise ConfigError(f"{where}: must be positive, got {value}")
    return value


def _int(tree: Mapping, key: str, path: str, default: int) -> int:
    value = tree.get(key, default)
    if isinstance(value, bool) or not isinstance(value, int):
        raise ConfigError(f"{path}{key}: expected an integer, got {value!r}")
    return value


def _real_list(tree: Mapping, key: str, path: str, default=None) -> list[float]:
    where = f"{path}{key}"
    if key not in tree:
        if default is None:
            raise ConfigError(f"{where}: missing required field")
        return list(default)
    value = tree[key]
    items = value if isinstance(value, list) else [value]
    if not items:
        raise ConfigError(f"{where}: must not be empty")
    try:
        return [parse_real(v, f"{where}[{i}]") for i, v in enumerate(items)]
    except ProfileError as exc:
        raise ConfigError(str(exc)) from None


def _complex(tree: Mapping, key: str, path: str, default=None) -> complex:
    where = f"{path}{key}"
    if key not in tree:
        if default is None:
            raise ConfigError(f"{where}: missing required field")
        return default
    try:
        return parse_complex(tree[key], where)
    except ProfileError as exc:
        raise ConfigError(str(exc)) from None


@dataclasses.dataclass(frozen=True)
class SolverSettings:
    tol: float = 1e-10
    max_iter: int = 2000
    method: str = "auto"
    eta: float = 0.0


@dataclasses.dataclass(frozen=True)
class FinescaleSettings:
    L: float
    d: tuple[float, ...]
    window: Optional[float]
    sublayers: int
    eps_ext: float
    incidence: complex
    polarization: int


@dataclasses.dataclass(frozen=True)
class ENZSettings:
    sigma_sheet: complex
    eps_host: complex
    f: Any
    factors: tuple[float, ...]
    L: float
    eps_ext: float
    sublayers: int


@dataclasses.dataclass(frozen=True)
class RunConfig:
    omegas: tuple[float, ...]
    mu: float
    x_macro: tuple[float, float, float]
    solver: SolverSettings
    raw: Mapping
    digest: str
    epsilon: Any = None
    sigma: Any = None
    geometry: Optional[CellGeometry] = None
    finescale: Optional[FinescaleSettings] = None
    enz: Optional[ENZSettings] = None
    seed: int = 0
    admissibility_samples: int = 1024
    admissibility_floor: float = 1e-8
    nodal: bool = False
    dump_system: bool = False

    def materials(self, omega: float) -> MaterialModel:
        if self.epsilon is None:
            raise ConfigError("material: missing required section")
        return MaterialModel(self.epsilon, self.sigma, omega, mu=self.mu)

    def require_geometry(self) -> CellGeometry:
        if self.geometry is None:
            raise ConfigError("geometry: missing required section")
        return self.geometry

    def require_finescale(self) -> FinescaleSettings:
        if self.finescale is None:
            raise ConfigError("finescale: missing required section")
        return self.finescale

    def require_enz(self) -> ENZSettings:
        if self.enz is None:
            raise ConfigError("enz: missing required section")
        return self.enz


TOP_KEYS = {
    "omega", "seed", "mu", "x_macro", "material", "geometry", "solver", "admissibility", "finescale", "enz", "output",
}


def _geometry(tree: Mapping) -> Optional[CellGeometry]:
    geo = _section(tree, "geometry", {"resolution", "sheet"})
    if geo is None:
        return None
    resolution = _int(geo, "resolution", "geometry.", 16)
    sheet_spec = _section(geo, "sheet", {"type", "normal_axis", "offset", "h"}, "geometry.")
    sheet_spec = sheet_spec if sheet_spec is not None else {"type": "flat"}
    kind = sheet_spec.get("type", "flat")
    try:
        if kind == "flat":
            if "h" in sheet_spec:
                raise ConfigError("geometry.sheet.h: only valid for type graph")
            axis = parse_axis(sheet_spec.get("normal_axis", 3), "geometry.sheet.normal_axis")
            offset = _real(sheet_spec, "offset", "geometry.sheet.", 0.0)
            sheet = FlatSheet(axis, offset)
        elif kind == "graph":
            if "normal_axis" in sheet_spec or "offset" in sheet_spec:
                raise ConfigError("geometry.sheet: graph sheets take only 'h' (normal axis 3)")
            if "h" not in sheet_spec:
                raise ConfigError("geometry.sheet.h: missing required field")
            h, grad = build_height(sheet_spec["h"], "geometry.sheet.h")
            sheet = GraphSheet(h, grad)
        else:
            raise ConfigError(f"geometry.sheet.type: expected 'flat' or 'graph', got {kind!r}")
        return CellGeometry(resolution, sheet)
    except ProfileError as exc:
        raise ConfigError(str(exc)) from None
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError(f"geometry: {exc}") from None


def parse_config(tree: Any, digest: str = "") -> RunConfig:
    """Validates a parsed YAML tree.

    Raises:
        ConfigError: with the path of the first offending field.
    """
    if not isinstance(tree, Mapping):
        raise ConfigError("<root>: expected a mapping")
    unknown = set(tree) - TOP_KEYS
    if unknown:
        raise ConfigError(f"{sorted(unknown)[0]}: unknown key")

    omegas = _real_list(tree, "omega", "")
    if any(w <= 0 for w in omegas):
        raise ConfigError("omega: frequencies must be positive")
    mu = _real(tree, "mu", "", 1.0, positive=True)
    x_macro = tree.get("x_macro", [0.0, 0.0, 0.0])
    if not (isinstance(x_macro, list) and len(x_macro) == 3):
        raise ConfigError("x_macro: expected a list of three numbers")
    try:
        x_macro = tuple(parse_real(v, f"x_macro[{i}]") for i, v in enumerate(x_macro))
    except ProfileError as exc:
        raise ConfigError(str(exc)) from None

    solver_tree = _section(tree, "solver", {"tol", "max_iter", "method", "eta"}) or {}
    method = solver_tree.get("method", "auto")
    if method not in ("auto", "direct", "iterative"):
        raise ConfigError(f"solver.method: expected auto, direct or iterative, got {method!r}")
    solver = SolverSettings(
        tol=_real(solver_tree, "tol", "solver.", 1e-10, positive=True),
        max_iter=_int(solver_tree, "max_iter", "solver.", 2000),
        method=method,
        eta=_real(solver_tree, "eta", "solver.", 0.0),
    )

    epsilon = sigma = None
    material = _section(tree, "material", {"epsilon", "sigma"})
    if material is not None:
        if "epsilon" not in material:
            raise ConfigError("material.epsilon: missing required field")
        try:
            epsilon = build_field(material["epsilon"], "material.epsilon")
            sigma = build_field(material.get("sigma", 0.0), "material.sigma")
        except ProfileError as exc:
            raise ConfigError(str(exc)) from None

    adm = _section(tree, "admissibility", {"samples", "floor"}) or {}
    output = _section(tree, "output", {"nodal", "dump_system"}) or {}
    for key in ("nodal", "dump_system"):
        if key in output and not isinstance(output[key], bool):
            raise ConfigError(f"output.{key}: expected true or false")

    finescale = None
    fs = _section(tree, "finescale", {"L", "d", "window", "sublayers", "eps_ext", "incidence", "polarization"})
    if fs is not None:
        ds = _real_list(fs, "d", "finescale.")
        polarization = _int(fs, "polarization", "finescale.", 1)
        if polarization not in (1, 2):
            raise ConfigError("finescale.polarization: expected 1 or 2")
        finescale = FinescaleSettings(
            L=_real(fs, "L", "finescale.", 1.0, positive=True),
            d=tuple(ds),
            window=_real(fs, "window", "finescale.", positive=True) if "window" in fs else None,
            sublayers=_int(fs, "sublayers", "finescale.", 16),
            eps_ext=_real(fs, "eps_ext", "finescale.", 1.0, positive=True),
            incidence=_complex(fs, "incidence", "finescale.", 1.0 + 0j),
            polarization=polarization,
        )

    enz = None
    es = _section(tree, "enz", {"sigma_sheet", "eps_host", "f", "factors", "L", "eps_ext", "sublayers"})
    if es is not None:
        try:
            f = build_scalar(es.get("f", 1.0), "enz.f")
        except ProfileError as exc:
            raise ConfigError(str(exc)) from None
        factors = _real_list(es, "factors", "enz.", (0.5, 0.75, 1.0, 1.25, 1.5, 2.0))
        if any(v <= 0 for v in factors):
            raise ConfigError("enz.factors: must be positive")
        enz = ENZSettings(
            sigma_sheet=_complex(es, "sigma_sheet", "enz."),
            eps_host=_complex(es, "eps_host", "enz."),
            f=f,
            factors=tuple(factors),
            L=_real(es, "L", "enz.", 1.0, positive=True),
            eps_ext=_real(es, "eps_ext", "enz.", 1.0, positive=True),
            sublayers=_int(es, "sublayers", "enz.", 16),
        )

    return RunConfig(
        omegas=tuple(omegas),
        mu=mu,
        x_macro=x_macro,
        solver=solver,
        raw=tree,
        digest=digest,
        epsilon=epsilon,
        sigma=sigma,
        geometry=_geometry(tree),
        finescale=finescale,
        enz=enz,
        seed=_int(tree, "seed", "", 0),
        admissibility_samples=_int(adm, "samples", "admissibility.", 1024),
        admissibility_floor=_real(adm, "floor", "admissibility.", 1e-8, positive=True),
        nodal=bool(output.get("nodal", False)),
        dump_system=bool(output.get("dump_system", False)),
    )


def load_config(path) -> RunConfig:
    """Reads and validates a YAML configuration file."""
    path = Path(path)
    try:
        data = path.read_bytes()
    except OSError as exc:
        raise ConfigError(f"<file>: cannot read {path}: {exc.strerror}") from None
    try:
        tree = yaml.safe_load(data)
    except yaml.YAMLError as exc:
        raise ConfigError(f"<file>: not valid YAML: {exc}") from None
    return parse_config(tree, hashlib.sha256(data).hexdigest())

