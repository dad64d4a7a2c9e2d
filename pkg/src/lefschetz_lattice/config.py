"""
Scenario configuration
======================

Scenarios are TOML files with the blocks ``geometry``, ``isometry``,
``operator``, ``exhaustion``, ``grids`` and ``tolerances`` (plus optional
``commutator`` and ``expect``). :func:`load_scenario` fills defaults and
validates; :func:`build_scenario` turns the result into lattice objects.

Example::

    id = "reflection-r1"

    [geometry]
    kind = "box"
    dim = 1
    half_width = 4.0
    h = 0.015625

    [isometry]
    O = [[-1.0]]
    lift = "builtin:scalar-sign"

    [operator]
    bundle = "staggered"
    scheme = "staggered"

    [exhaustion]
    family = "cubes"
    scale = 0.25
    j_max = 12
    U = { kind = "intervals", bounds = [[-1.0, 1.0]] }
"""
from __future__ import annotations

import copy
import sys
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover
    import tomli as tomllib

from .clifford_dirac import CliffordBundle, DiracOperator, assemble_dirac, build_clifford
from .exhaustion_functional import ExhaustionPlan, make_plan
from .geometry import LatticeModel, build_box_lattice, build_torus_lattice
from .isometry import IsometryPair, make_isometry

__all__ = ["ConfigError", "Scenario", "DEFAULTS", "load_scenario", "bundled_scenarios",
           "build_scenario"]

DEFAULTS = {
    "geometry": {"kind": "box", "dim": 1, "h": 1 / 32},
    "isometry": {"O": None, "b": None, "lift": "builtin:scalar"},
    "operator": {"bundle": "staggered", "scheme": "staggered", "mass": 0.0},
    "exhaustion": {"family": "cubes", "scale": 1.0, "j_min": None, "j_max": 8,
                   "radii": None, "U": {"kind": "all"}, "rule": "first", "target": None},
    "grids": {"t2": [0.4, 0.2, 0.1, 0.05, 0.025], "r": [1.0], "min_t_over_h": 4.0},
    "tolerances": {"cluster_tol": 1e-3, "agreement_tol": 0.01, "decay_tol": 1e-6,
                   "burn_in": 0.25, "truncation_tol": 1e-9},
}
BLOCKS = tuple(DEFAULTS)
OPTIONAL_BLOCKS = ("commutator", "expect")


class ConfigError(ValueError):
    pass


def _merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        out[k] = v
    return out


def _read(source) -> tuple[dict, str]:
    if isinstance(source, dict):
        return copy.deepcopy(source), "<dict>"
    path = Path(source)
    if path.exists():
        with open(path, "rb") as fh:
            return tomllib.load(fh), str(path)
    name = str(source)
    if not name.endswith(".toml"):
        name += ".toml"
    ref = resources.files("lefschetz_lattice") / "scenarios" / name
    if ref.is_file():
        return tomllib.loads(ref.read_text()), f"bundled:{name}"
    raise ConfigError(f"no scenario file or bundled scenario named {source!r}")


def bundled_scenarios() -> list[str]:
    """Ids of the scenarios shipped with the package."""
    root = resources.files("lefschetz_lattice") / "scenarios"
    return sorted(p.name[:-5] for p in root.iterdir() if p.name.endswith(".toml"))


def load_scenario(source) -> dict:
    """Read a scenario (path, bundled id or dict), apply defaults and validate."""
    raw, origin = _read(source)
    unknown = set(raw) - set(BLOCKS) - set(OPTIONAL_BLOCKS) - {"id", "description"}
    if unknown:
        raise ConfigError(f"unknown top-level keys: {sorted(unknown)}")
    cfg = {"id": raw.get("id", Path(origin).stem), "description": raw.get("description", ""),
           "origin": origin}
    for block in BLOCKS:
        cfg[block] = _merge(DEFAULTS[block], raw.get(block, {}))
    for block in OPTIONAL_BLOCKS:
        if block in raw:
            cfg[block] = copy.deepcopy(raw[block])
    _validate(cfg)
    return cfg


def _validate(cfg: dict) -> None:
    g = cfg["geometry"]
    if g["kind"] not in ("box", "torus"):
        raise ConfigError("geometry.kind must be 'box' or 'torus'")
    if g["kind"] == "box" and "half_width" not in g:
        raise ConfigError("box geometry needs half_width")
    if g["kind"] == "torus" and "circumference" not in g:
        raise ConfigError("torus geometry needs circumference")
    if not (isinstance(g["dim"], int) and g["dim"] >= 1):
        raise ConfigError("geometry.dim must be a positive integer")
    if not g["h"] > 0:
        raise ConfigError("geometry.h must be positive")
    t2 = np.asarray(cfg["grids"]["t2"], dtype=float)
    if t2.size == 0 or np.any(t2 <= 0):
        raise ConfigError("grids.t2 must be a nonempty list of positive numbers")
    tol = cfg["tolerances"]
    for k in ("cluster_tol", "agreement_tol", "decay_tol"):
        if not tol[k] > 0:
            raise ConfigError(f"tolerances.{k} must be positive")
    if cfg["exhaustion"]["rule"] not in ("first", "min", "max", "nearest"):
        raise ConfigError("exhaustion.rule must be first, min, max or nearest")


@dataclass(eq=False)
class Scenario:
    config: dict
    model: LatticeModel
    bundle: CliffordBundle
    D: DiracOperator
    pair: IsometryPair
    plan: ExhaustionPlan

    @property
    def id(self) -> str:
        return self.config["id"]

    @property
    def t_grid(self) -> np.ndarray:
        return np.sqrt(np.asarray(self.config["grids"]["t2"], dtype=float))


def build_scenario(cfg) -> Scenario:
    """Lattice, bundle, operator, isometry and plan for a scenario."""
    if not isinstance(cfg, dict) or "origin" not in cfg:
        cfg = load_scenario(cfg)
    g, iso, op, ex = cfg["geometry"], cfg["isometry"], cfg["operator"], cfg["exhaustion"]
    n = g["dim"]
    if g["kind"] == "box":
        model = build_box_lattice(n, g["half_width"], g["h"])
    else:
        model = build_torus_lattice(n, g["circumference"], g["h"])
    bundle = build_clifford(n, op["bundle"])
    D = assemble_dirac(model, bundle, op["scheme"], float(op.get("mass", 0.0)))
    O = np.eye(n) if iso["O"] is None else np.asarray(iso["O"], dtype=float)
    lift = iso["lift"]
    if isinstance(lift, list):
        lift = np.asarray(lift, dtype=complex if bundle.dtype is complex else float)
    pair = make_isometry(model, O, iso["b"], lift, bundle)
    if not pair.preserves_grading:
        raise ConfigError("the isometry lift does not preserve the grading")
    plan = make_plan(model, ex["U"], ex["family"], ex["j_max"], ex["j_min"], ex["scale"],
                     ex["radii"], pair)
    return Scenario(cfg, model, bundle, D, pair, plan)
