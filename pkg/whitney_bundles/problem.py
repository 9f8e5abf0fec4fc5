"""Problem instance files and run reports.

Instances are JSON documents validated against ``INSTANCE_SCHEMA``. A parsed
instance is normalized (grids expanded, polynomial data evaluated) so that
``dump_problem(parse_problem(text))`` is a fixpoint of dump/parse.
"""

import hashlib
import json
import logging
import math
import os
import tempfile
from dataclasses import asdict, dataclass, field, fields
from json.decoder import scanstring
from pathlib import Path
from typing import Any, Dict, List, Optional

import numpy as np
from jsonschema import Draft202012Validator

from .bundles import BhkInstance, bundle_from_bhk, bundle_from_fibers, bundle_from_interpolation, multiscale_points
from .exceptions import InvalidInputError, SpecFileError
from .finiteness import modulus_from_dict
from .glaeser import RefinementConfig
from .jets import BASEPOINT_ATOL, Jet, dim_poly, jet_eval
from .linspaces import AffineFiber, LinSubspace

logger = logging.getLogger(__name__)

MODES = ("bhk", "interpolation", "explicit-bundle")
CONFIG_KEYS = (
    "k_sharp", "scales", "null_threshold", "tol_min", "snap_to_submodule",
    "tuple_budget", "seed", "subset_budget", "omega",
)
BOX_MARGIN = 0.1

_NUMBER_LIST = {"type": "array", "items": {"type": "number"}}
_POLYNOMIAL = {
    "type": "array",
    "items": {
        "type": "object",
        "required": ["exponents", "coeff"],
        "properties": {
            "exponents": {"type": "array", "items": {"type": "integer", "minimum": 0}},
            "coeff": {"type": "number"},
        },
        "additionalProperties": False,
    },
}

INSTANCE_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "title": "whitney-bundles problem instance",
    "type": "object",
    "required": ["mode", "m", "n"],
    "properties": {
        "mode": {"enum": list(MODES)},
        "m": {"type": "integer", "minimum": 0},
        "n": {"type": "integer", "minimum": 1},
        "d": {"type": "integer", "minimum": 1},
        "points": {"type": "array", "minItems": 1, "items": _NUMBER_LIST},
        "grid": {
            "type": "object",
            "required": ["kind", "center", "directions", "levels"],
            "properties": {
                "kind": {"const": "multiscale"},
                "center": _NUMBER_LIST,
                "directions": {"type": "array", "minItems": 1, "items": _NUMBER_LIST},
                "levels": {"type": "array", "minItems": 1, "items": {"type": "integer"}},
                "include_center": {"type": "boolean"},
            },
            "additionalProperties": False,
        },
        "f_values": {"type": "array", "items": _NUMBER_LIST},
        "phi_values": _NUMBER_LIST,
        "f_polynomials": {"type": "array", "items": _POLYNOMIAL},
        "phi_polynomial": _POLYNOMIAL,
        "values": _NUMBER_LIST,
        "polynomial": _POLYNOMIAL,
        "fibers": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["empty"],
                "properties": {
                    "empty": {"type": "boolean"},
                    "base": _NUMBER_LIST,
                    "directions": {"type": "array", "items": _NUMBER_LIST},
                },
                "additionalProperties": False,
            },
        },
        "box": {
            "type": "object",
            "required": ["lower", "upper"],
            "properties": {"lower": _NUMBER_LIST, "upper": _NUMBER_LIST},
            "additionalProperties": False,
        },
        "config": {
            "type": "object",
            "properties": {
                "k_sharp": {"type": "integer", "minimum": 1},
                "scales": {"type": "array", "minItems": 1, "items": {"type": "number", "exclusiveMinimum": 0}},
                "null_threshold": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
                "tol_min": {"type": "number", "exclusiveMinimum": 0},
                "snap_to_submodule": {"type": "boolean"},
                "tuple_budget": {"type": "integer", "minimum": 1},
                "subset_budget": {"type": "integer", "minimum": 1},
                "seed": {"type": "integer", "minimum": 0},
                "omega": {
                    "type": "object",
                    "required": ["kind"],
                    "properties": {
                        "kind": {"enum": ["power", "tabulated"]},
                        "gamma": {"type": "number"},
                        "table": {
                            "type": "array",
                            "items": {"type": "array", "items": {"type": "number"}, "minItems": 2, "maxItems": 2},
                        },
                    },
                    "additionalProperties": False,
                },
            },
            "additionalProperties": False,
        },
    },
    "additionalProperties": False,
}

_VALIDATOR = Draft202012Validator(INSTANCE_SCHEMA)


# --- Locating JSON paths in the source text ---

def _skip_ws(text, pos):
    while pos < len(text) and text[pos] in " \t\r\n":
        pos += 1
    return pos


def _value_offset(text, path):
    """Character offset of the value at ``path``, or None."""
    decoder = json.JSONDecoder()
    pos = _skip_ws(text, 0)
    try:
        for key in path:
            if text[pos] == "{":
                pos = _skip_ws(text, pos + 1)
                while text[pos] != "}":
                    name, pos = scanstring(text, pos + 1)
                    pos = _skip_ws(text, _skip_ws(text, pos) + 1)
                    if name == key:
                        break
                    _, pos = decoder.raw_decode(text, pos)
                    pos = _skip_ws(text, pos)
                    if text[pos] == ",":
                        pos = _skip_ws(text, pos + 1)
                else:
                    return None
            elif text[pos] == "[":
                pos = _skip_ws(text, pos + 1)
                index = 0
                while text[pos] != "]":
                    if index == key:
                        break
                    _, pos = decoder.raw_decode(text, pos)
                    pos = _skip_ws(text, pos)
                    if text[pos] == ",":
                        pos = _skip_ws(text, pos + 1)
                    index += 1
                else:
                    return None
            else:
                return None
    except (IndexError, ValueError):
        return None
    return pos


def locate_line(text, path):
    """1-based line of the value at ``path`` (keys and indices); None if absent."""
    if text is None:
        return None
    pos = _value_offset(text, list(path))
    if pos is None:
        return None
    return text.count("\n", 0, pos) + 1


def _format_path(path):
    out = "$"
    for key in path:
        out += f"[{key}]" if isinstance(key, int) else f".{key}"
    return out


# --- Parsed instances ---

def _terms(raw):
    return [(tuple(term["exponents"]), float(term["coeff"])) for term in raw]


def _polynomial(raw, n, where, text):
    try:
        return Jet.from_terms(_terms(raw), n)
    except InvalidInputError as exc:
        raise SpecFileError(str(exc), locate_line(text, where), _format_path(where))


@dataclass
class ProblemSpec:
    mode: str
    m: int
    n: int
    d: int
    points: np.ndarray
    data: Dict[str, Any] = field(default_factory=dict)
    config: Dict[str, Any] = field(default_factory=dict)
    box: Optional[Dict[str, List[float]]] = None

    def to_dict(self):
        out = {"mode": self.mode, "m": self.m, "n": self.n, "d": self.d, "points": self.points.tolist()}
        out.update(self.data)
        if self.config:
            out["config"] = self.config
        if self.box is not None:
            out["box"] = self.box
        return out

    def bhk_instance(self):
        if self.mode != "bhk":
            raise InvalidInputError(f"a {self.mode} instance has no BHK data")
        f_polys = phi_poly = None
        if "f_polynomials" in self.data:
            f_polys = tuple(Jet.from_terms(_terms(p), self.n) for p in self.data["f_polynomials"])
        if "phi_polynomial" in self.data:
            phi_poly = Jet.from_terms(_terms(self.data["phi_polynomial"]), self.n)
        return BhkInstance(self.points, self.data["f_values"], self.data["phi_values"], f_polys, phi_poly)

    def build_bundle(self):
        if self.mode == "bhk":
            return bundle_from_bhk(self.bhk_instance(), self.m)
        if self.mode == "interpolation":
            return bundle_from_interpolation(self.points, self.data["values"], self.m)
        ambient = self.d * dim_poly(self.n, self.m)
        fibers = []
        for x, raw in zip(self.points, self.data["fibers"]):
            if raw["empty"]:
                fibers.append(AffineFiber.empty(x, self.m, self.d))
                continue
            directions = LinSubspace.span(raw.get("directions", []), ambient)
            fibers.append(AffineFiber.from_base_and_directions(raw["base"], directions, x, self.m, self.d))
        return bundle_from_fibers(self.points, fibers, self.m, self.d)

    def problem(self):
        """The object subset feasibility runs on: the BHK data, or the bundle."""
        if self.mode == "bhk":
            return self.bhk_instance()
        return self.build_bundle()

    def refinement_config(self, threads=1, **overrides):
        options = {k: self.config[k] for k in RefinementConfig.__dataclass_fields__ if k in self.config}
        options.update({k: v for k, v in overrides.items() if v is not None})
        options["threads"] = threads
        return RefinementConfig(**options)

    def omega(self):
        raw = self.config.get("omega")
        return None if raw is None else modulus_from_dict(raw)

    def extension_box(self):
        if self.box is not None:
            return np.asarray(self.box["lower"], dtype=float), np.asarray(self.box["upper"], dtype=float)
        lower, upper = self.points.min(axis=0), self.points.max(axis=0)
        margin = BOX_MARGIN * max(float(np.max(upper - lower)), 1.0)
        return lower - margin, upper + margin


def _expand_grid(raw, n, text):
    center = np.asarray(raw["center"], dtype=float)
    directions = np.asarray(raw["directions"], dtype=float)
    if center.size != n or directions.ndim != 2 or directions.shape[1] != n:
        raise SpecFileError(f"grid center and directions must live in R^{n}", locate_line(text, ["grid"]), "$.grid")
    return multiscale_points(center, directions, raw["levels"], raw.get("include_center", True))


def _check_points(points, n, text, from_grid):
    for k, x in enumerate(points):
        if len(x) != n:
            where = ["grid"] if from_grid else ["points", k]
            raise SpecFileError(
                f"point #{k} has {len(x)} coordinates, expected {n}", locate_line(text, where), _format_path(where)
            )
    points = np.asarray(points, dtype=float).reshape(-1, n)
    for k in range(1, len(points)):
        gaps = np.max(np.abs(points[:k] - points[k]), axis=1)
        if gaps.min() <= BASEPOINT_ATOL:
            first = int(np.argmin(gaps))
            where = ["grid"] if from_grid else ["points", k]
            raise SpecFileError(
                f"duplicate point {points[k].tolist()} (also point #{first})",
                locate_line(text, where), _format_path(where),
            )
    return points


def _require(raw, keys, mode, text):
    if not any(key in raw for key in keys):
        raise SpecFileError(f"{mode} instance needs {' or '.join(keys)}", 1, "$")


def _check_length(values, size, where, text, what):
    if len(values) != size:
        raise SpecFileError(
            f"{what} has {len(values)} entries, expected {size}", locate_line(text, where), _format_path(where)
        )


def _bhk_data(raw, points, n, d, text):
    _require(raw, ("f_values", "f_polynomials"), "bhk", text)
    _require(raw, ("phi_values", "phi_polynomial"), "bhk", text)
    data = {}
    if "f_polynomials" in raw:
        _check_length(raw["f_polynomials"], d, ["f_polynomials"], text, "f_polynomials")
        polys = [_polynomial(p, n, ["f_polynomials", i], text) for i, p in enumerate(raw["f_polynomials"])]
        data["f_polynomials"] = raw["f_polynomials"]
    if "phi_polynomial" in raw:
        phi = _polynomial(raw["phi_polynomial"], n, ["phi_polynomial"], text)
        data["phi_polynomial"] = raw["phi_polynomial"]
    if "f_values" in raw:
        _check_length(raw["f_values"], d, ["f_values"], text, "f_values")
        for i, row in enumerate(raw["f_values"]):
            _check_length(row, len(points), ["f_values", i], text, f"f_values[{i}]")
        data["f_values"] = [[float(v) for v in row] for row in raw["f_values"]]
    else:
        data["f_values"] = [[jet_eval(p, x) for x in points] for p in polys]
    if "phi_values" in raw:
        _check_length(raw["phi_values"], len(points), ["phi_values"], text, "phi_values")
        data["phi_values"] = [float(v) for v in raw["phi_values"]]
    else:
        data["phi_values"] = [jet_eval(phi, x) for x in points]
    return data


def _interpolation_data(raw, points, n, text):
    _require(raw, ("values", "polynomial"), "interpolation", text)
    data = {}
    if "polynomial" in raw:
        poly = _polynomial(raw["polynomial"], n, ["polynomial"], text)
        data["polynomial"] = raw["polynomial"]
    if "values" in raw:
        _check_length(raw["values"], len(points), ["values"], text, "values")
        data["values"] = [float(v) for v in raw["values"]]
    else:
        data["values"] = [jet_eval(poly, x) for x in points]
    return data


def _fiber_data(raw, points, n, m, d, text):
    _require(raw, ("fibers",), "explicit-bundle", text)
    _check_length(raw["fibers"], len(points), ["fibers"], text, "fibers")
    ambient = d * dim_poly(n, m)
    fibers = []
    for k, item in enumerate(raw["fibers"]):
        where = ["fibers", k]
        if item["empty"]:
            fibers.append({"empty": True})
            continue
        if "base" not in item:
            raise SpecFileError(f"non-empty fiber #{k} needs a base", locate_line(text, where), _format_path(where))
        _check_length(item["base"], ambient, where + ["base"], text, f"fibers[{k}].base")
        for i, row in enumerate(item.get("directions", [])):
            _check_length(row, ambient, where + ["directions", i], text, f"fibers[{k}].directions[{i}]")
        fibers.append({
            "empty": False,
            "base": [float(v) for v in item["base"]],
            "directions": [[float(v) for v in row] for row in item.get("directions", [])],
        })
    return {"fibers": fibers}


def parse_problem(text):
    """Parse and validate an instance; raises SpecFileError with a line number."""
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise SpecFileError(f"invalid JSON: {exc.msg}", exc.lineno)
    errors = sorted(_VALIDATOR.iter_errors(raw), key=lambda e: list(map(str, e.absolute_path)))
    if errors:
        error = errors[0]
        path = list(error.absolute_path)
        raise SpecFileError(f"{_format_path(path)}: {error.message}", locate_line(text, path) or 1, _format_path(path))
    if ("points" in raw) == ("grid" in raw):
        raise SpecFileError("give exactly one of points or grid", 1, "$")
    mode, m, n = raw["mode"], raw["m"], raw["n"]
    d = raw.get("d", 1)
    if mode == "interpolation" and d != 1:
        raise SpecFileError("interpolation instances have d = 1", locate_line(text, ["d"]), "$.d")
    if mode == "bhk" and "d" not in raw:
        d = len(raw.get("f_values") or raw.get("f_polynomials") or [[]])
    from_grid = "grid" in raw
    points = _expand_grid(raw["grid"], n, text) if from_grid else raw["points"]
    points = _check_points(points, n, text, from_grid)
    if mode == "bhk":
        data = _bhk_data(raw, points, n, d, text)
    elif mode == "interpolation":
        data = _interpolation_data(raw, points, n, text)
    else:
        data = _fiber_data(raw, points, n, m, d, text)
    config = {key: raw["config"][key] for key in CONFIG_KEYS if key in raw.get("config", {})}
    box = raw.get("box")
    if box is not None and (len(box["lower"]) != n or len(box["upper"]) != n):
        raise SpecFileError(f"box corners must live in R^{n}", locate_line(text, ["box"]), "$.box")
    logger.debug("parsed %s instance: n=%d m=%d d=%d, %d points", mode, n, m, d, len(points))
    return ProblemSpec(mode, m, n, d, points, data, config, box)


def load_problem(path):
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise SpecFileError(f"cannot read {path}: {exc.strerror}")
    return parse_problem(text), text


def dump_problem(spec):
    return json.dumps(spec.to_dict(), indent=2, sort_keys=True) + "\n"


def digest(text):
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


# --- Reports ---

def _encode(value):
    if isinstance(value, float) and not math.isfinite(value):
        return "nan" if math.isnan(value) else ("inf" if value > 0 else "-inf")
    if isinstance(value, (np.floating, np.integer)):
        return _encode(value.item())
    if isinstance(value, dict):
        return {k: _encode(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_encode(v) for v in value]
    if isinstance(value, np.ndarray):
        return _encode(value.tolist())
    return value


def _decode(value):
    if value in ("inf", "-inf", "nan"):
        return float(value)
    if isinstance(value, dict):
        return {k: _decode(v) for k, v in value.items()}
    if isinstance(value, list):
        return [_decode(v) for v in value]
    return value


@dataclass
class Report:
    command: str
    exit_code: int = 0
    verdict: Optional[str] = None
    iterations: Optional[int] = None
    converged: Optional[bool] = None
    rounds: List[List[int]] = field(default_factory=list)
    scale_residuals: List[Dict[str, Any]] = field(default_factory=list)
    finest_scale: Optional[float] = None
    first_empty_point: Optional[List[float]] = None
    unresolved_points: Optional[List[List[float]]] = None
    sup_m_s: Optional[float] = None
    argmax_subset: Optional[List[int]] = None
    argmax_points: Optional[List[List[float]]] = None
    witness: Optional[List[List[List[float]]]] = None
    subsets_examined: Optional[int] = None
    exhaustive: Optional[bool] = None
    grid_rows: Optional[int] = None
    checks: Optional[Dict[str, Any]] = None
    config: Dict[str, Any] = field(default_factory=dict)
    timing_seconds: Optional[float] = None

    def to_dict(self):
        return _encode(asdict(self))

    @classmethod
    def from_dict(cls, data):
        names = {f.name for f in fields(cls)}
        unknown = set(data) - names
        if unknown:
            raise InvalidInputError(f"unknown report fields: {sorted(unknown)}")
        return cls(**_decode(data))

    def dumps(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    @classmethod
    def loads(cls, text):
        return cls.from_dict(json.loads(text))


def write_atomic(path, text):
    """Write text to path through a temporary file in the same directory."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as handle:
            handle.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
