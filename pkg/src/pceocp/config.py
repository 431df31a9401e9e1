"""Problem configuration files: a strict JSON schema plus dimensional checks.

A configuration describes the system, the random data (per-component measures
or explicit PCE coefficients), weights, chance constraints and the settings of
the solve / mpc / sample / pdf workflows. Infinite bounds are written as the
strings ``"inf"`` and ``"-inf"``. Validation reports every problem at once,
each with a JSON-pointer path.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any

import jsonschema
import numpy as np

from .measures import Family, MeasureError, MeasureSpec
from .pce import PCEError, PCEVector, affine_pce, stack, univariate_pce
from .solver import SolverOptions
from .transcription import StochasticProblem

__all__ = [
    "ConfigError",
    "SimulationConfig",
    "PdfConfig",
    "SampleConfig",
    "ProblemConfig",
    "SCHEMA",
    "parse_config",
    "load_config",
    "bundled_config",
    "bundled_names",
]


class ConfigError(ValueError):
    """Invalid configuration; ``errors`` lists every problem found."""

    def __init__(self, errors: list[str]):
        self.errors = list(errors)
        super().__init__("invalid configuration:\n  " + "\n  ".join(self.errors))


_NUM = {"type": "number"}
_EXT = {"oneOf": [{"type": "number"}, {"enum": ["inf", "-inf"]}]}
_MATRIX = {"type": "array", "minItems": 1, "items": {"type": "array", "minItems": 1, "items": _NUM}}
_COMPONENT = {
    "type": "object",
    "additionalProperties": False,
    "required": ["family"],
    "properties": {
        "family": {"enum": [f.value for f in Family]},
        "params": {"type": "array", "items": _NUM},
        "coefficients": {"type": "array", "minItems": 1, "items": _NUM},
    },
}
_VECTOR_PCE = {"type": "array", "minItems": 1, "items": _COMPONENT}
_BOUND = {
    "type": "object",
    "additionalProperties": False,
    "required": ["bound", "risk"],
    "properties": {
        "bound": {"type": "array", "minItems": 1, "items": _EXT},
        "risk": {"type": "array", "minItems": 1, "items": _NUM},
    },
}

SCHEMA: dict = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "title": "pceocp problem configuration",
    "type": "object",
    "additionalProperties": False,
    "required": ["system", "horizon", "measures"],
    "properties": {
        "name": {"type": "string"},
        "system": {
            "type": "object",
            "additionalProperties": False,
            "required": ["A", "B", "E"],
            "properties": {"A": _MATRIX, "B": _MATRIX, "E": _MATRIX},
        },
        "horizon": {"type": "integer", "minimum": 1},
        "measures": {
            "type": "object",
            "additionalProperties": False,
            "required": ["x_ini"],
            "properties": {
                "x_ini": _VECTOR_PCE,
                "w": _VECTOR_PCE,
                "w_steps": {"type": "array", "minItems": 1, "items": _VECTOR_PCE},
            },
        },
        "weights": {
            "type": "object",
            "additionalProperties": False,
            "properties": {"Q": _MATRIX, "R": _MATRIX, "QN": _MATRIX},
        },
        "constraints": {
            "type": "object",
            "additionalProperties": False,
            "properties": {"lbx": _BOUND, "ubx": _BOUND, "lbu": _BOUND, "ubu": _BOUND},
        },
        "gauss": {"type": "boolean"},
        "mode": {"enum": ["sparse", "condensed"]},
        "solver": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "max_iterations": {"type": "integer", "minimum": 1},
                "eps_feas": {"type": "number", "exclusiveMinimum": 0},
                "eps_gap": {"type": "number", "exclusiveMinimum": 0},
                "eps_infeas": {"type": "number", "exclusiveMinimum": 0},
                "regularization": {"type": "number", "exclusiveMinimum": 0},
                "kkt": {"enum": ["auto", "sparse", "dense"]},
                "backend": {"type": "string"},
                "verbose": {"type": "boolean"},
            },
        },
        "simulation": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "n_paths": {"type": "integer", "minimum": 1},
                "T": {"type": "integer", "minimum": 0},
                "seed": {"type": "integer", "minimum": 0},
                "workers": {"type": "integer", "minimum": 1},
                "mode": {"enum": ["sparse", "condensed"]},
            },
        },
        "pdf": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "component": {"type": "integer", "minimum": 0},
                "times": {"type": "array", "items": {"type": "integer", "minimum": 0}},
                "n_points": {"type": "integer", "minimum": 8},
                "width": {"type": "number", "exclusiveMinimum": 0},
            },
        },
        "sample": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "n_samples": {"type": "integer", "minimum": 1},
                "seed": {"type": "integer", "minimum": 0},
            },
        },
    },
}


@dataclass(frozen=True)
class SimulationConfig:
    n_paths: int = 100
    T: int = 20
    seed: int = 0
    workers: int | None = None
    mode: str = "condensed"


@dataclass(frozen=True)
class PdfConfig:
    component: int = 0
    times: tuple[int, ...] = (0,)
    n_points: int = 4096
    width: float = 10.0


@dataclass(frozen=True)
class SampleConfig:
    n_samples: int = 1000
    seed: int = 0


def _ext(v) -> float:
    return float(v) if not isinstance(v, str) else (math.inf if v == "inf" else -math.inf)


def _emit_ext(v: float):
    return "inf" if v == math.inf else ("-inf" if v == -math.inf else v)


@dataclass(frozen=True)
class ProblemConfig:
    """Validated configuration.

    Attributes:
        name: label used in output file headers.
        A, B, E: system matrices.
        N: horizon.
        x_ini: component descriptions of the initial state.
        w: component descriptions of one i.i.d. disturbance step, or None.
        w_steps: per-step component descriptions (non-i.i.d.), or None.
        Q, R, QN: weights (None in custom-objective mode).
        constraints: ``{"lbx": (bounds, risks), ...}`` with floats.
        gauss: Gaussian quantiles for the chance constraints.
        mode: transcription layout for solve / sample / pdf.
        solver: solver options.
        simulation, pdf, sample: workflow settings.
    """

    name: str
    A: np.ndarray
    B: np.ndarray
    E: np.ndarray
    N: int
    x_ini: tuple[dict, ...]
    w: tuple[dict, ...] | None
    w_steps: tuple[tuple[dict, ...], ...] | None
    Q: np.ndarray | None = None
    R: np.ndarray | None = None
    QN: np.ndarray | None = None
    constraints: dict = field(default_factory=dict)
    gauss: bool = False
    mode: str = "sparse"
    solver: SolverOptions = field(default_factory=SolverOptions)
    simulation: SimulationConfig = field(default_factory=SimulationConfig)
    pdf: PdfConfig = field(default_factory=PdfConfig)
    sample: SampleConfig = field(default_factory=SampleConfig)

    # -- serialization ------------------------------------------------------
    def to_dict(self) -> dict:
        """Plain-JSON form; parsing it again gives an identical config."""
        d: dict[str, Any] = {
            "name": self.name,
            "system": {"A": self.A.tolist(), "B": self.B.tolist(), "E": self.E.tolist()},
            "horizon": self.N,
            "measures": {"x_ini": [dict(c) for c in self.x_ini]},
        }
        if self.w is not None:
            d["measures"]["w"] = [dict(c) for c in self.w]
        if self.w_steps is not None:
            d["measures"]["w_steps"] = [[dict(c) for c in step] for step in self.w_steps]
        weights = {k: getattr(self, k).tolist() for k in ("Q", "R", "QN") if getattr(self, k) is not None}
        if weights:
            d["weights"] = weights
        if self.constraints:
            d["constraints"] = {
                k: {"bound": [_emit_ext(b) for b in bnd], "risk": list(risk)}
                for k, (bnd, risk) in self.constraints.items()
            }
        d["gauss"] = self.gauss
        d["mode"] = self.mode
        d["solver"] = asdict(self.solver)
        sim = asdict(self.simulation)
        if sim["workers"] is None:
            del sim["workers"]
        d["simulation"] = sim
        pdf = asdict(self.pdf)
        pdf["times"] = list(pdf["times"])
        d["pdf"] = pdf
        d["sample"] = asdict(self.sample)
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)

    def sha256(self) -> str:
        """Hash of the canonical JSON form."""
        canon = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canon.encode()).hexdigest()

    def __eq__(self, other) -> bool:
        return isinstance(other, ProblemConfig) and self.to_dict() == other.to_dict()

    __hash__ = None  # type: ignore[assignment]

    # -- model construction -------------------------------------------------
    @property
    def n_x(self) -> int:
        return self.A.shape[0]

    @property
    def n_u(self) -> int:
        return self.B.shape[1]

    def x_ini_pce(self) -> PCEVector:
        return _vector_pce(self.x_ini)

    def w_pce(self) -> PCEVector | tuple[PCEVector, ...]:
        if self.w is not None:
            return _vector_pce(self.w)
        return tuple(_vector_pce(step) for step in self.w_steps)

    def problem(self) -> StochasticProblem:
        c = self.constraints
        return StochasticProblem(
            self.N, self.A, self.B, self.E, self.x_ini_pce(), self.w_pce(),
            Q=self.Q, R=self.R, QN=self.QN,
            lbx=c.get("lbx"), ubx=c.get("ubx"), lbu=c.get("lbu"), ubu=c.get("ubu"),
            gauss=self.gauss,
        )


def _measure(comp: dict) -> MeasureSpec:
    fam = Family(comp["family"])
    params = comp.get("params")
    if params is None:
        defaults = {Family.GAUSSIAN: (0.0, 1.0), Family.UNIFORM: (0.0, 1.0)}
        if fam not in defaults:
            raise MeasureError(f"family {fam.value} needs params")
        params = defaults[fam]
    return MeasureSpec(fam, tuple(float(p) for p in params))


def _component_pce(comp: dict, germ_id: int) -> PCEVector:
    m = _measure(comp)
    if "coefficients" in comp:
        return univariate_pce(m, comp["coefficients"], germ_id)
    return affine_pce(m, germ_id)


def _vector_pce(components) -> PCEVector:
    return stack([_component_pce(c, i) for i, c in enumerate(components)])


def _shape_errors(cfg: dict) -> list[str]:
    """Dimensional consistency across blocks (schema already checked)."""
    errs: list[str] = []

    def shape(M, path):
        rows = {len(r) for r in M}
        if len(rows) != 1:
            errs.append(f"{path}: rows have different lengths {sorted(rows)}")
            return None
        return len(M), rows.pop()

    sysb = cfg["system"]
    sA, sB, sE = shape(sysb["A"], "/system/A"), shape(sysb["B"], "/system/B"), shape(sysb["E"], "/system/E")
    n_x = n_u = n_w = None
    if sA:
        if sA[0] != sA[1]:
            errs.append(f"/system/A: must be square, got {sA[0]}x{sA[1]}")
        n_x = sA[0]
    if sB:
        n_u = sB[1]
        if n_x is not None and sB[0] != n_x:
            errs.append(f"/system/B: has {sB[0]} rows, A has {n_x}")
    if sE:
        n_w = sE[1]
        if n_x is not None and sE[0] != n_x:
            errs.append(f"/system/E: has {sE[0]} rows, A has {n_x}")
    meas = cfg["measures"]
    N = cfg["horizon"] if isinstance(cfg.get("horizon"), int) else None
    if n_x is not None and len(meas["x_ini"]) != n_x:
        errs.append(f"/measures/x_ini: has {len(meas['x_ini'])} components, system has n_x = {n_x}")
    has_w, has_steps = "w" in meas, "w_steps" in meas
    if has_w == has_steps:
        errs.append("/measures: give exactly one of 'w' (i.i.d.) or 'w_steps' (non-i.i.d.)")
    if has_w and n_w is not None and len(meas["w"]) != n_w:
        errs.append(f"/measures/w: has {len(meas['w'])} components, E has n_w = {n_w} columns")
    if has_steps:
        if N is not None and len(meas["w_steps"]) != N:
            errs.append(f"/measures/w_steps: has {len(meas['w_steps'])} steps, horizon is {N}")
        for k, step in enumerate(meas["w_steps"]):
            if n_w is not None and len(step) != n_w:
                errs.append(f"/measures/w_steps/{k}: has {len(step)} components, E has n_w = {n_w} columns")
    comps = [("/measures/x_ini", meas["x_ini"])]
    if has_w:
        comps.append(("/measures/w", meas["w"]))
    if has_steps:
        comps += [(f"/measures/w_steps/{k}", s) for k, s in enumerate(meas["w_steps"])]
    for path, lst in comps:
        for i, c in enumerate(lst):
            try:
                _component_pce(c, i)
            except (MeasureError, PCEError, ValueError) as exc:
                errs.append(f"{path}/{i}: {exc}")
    weights = cfg.get("weights", {})
    for key, n in (("Q", n_x), ("QN", n_x), ("R", n_u)):
        if key in weights and n is not None:
            s = shape(weights[key], f"/weights/{key}")
            if s and s != (n, n):
                errs.append(f"/weights/{key}: expected {n}x{n}, got {s[0]}x{s[1]}")
    if weights and ("Q" in weights) != ("R" in weights):
        missing = "R" if "Q" in weights else "Q"
        errs.append(f"/weights: missing {missing} (give Q and R, or omit weights for a custom objective)")
    for key, val in cfg.get("constraints", {}).items():
        n = n_x if key.endswith("x") else n_u
        b, r = val["bound"], val["risk"]
        if len(b) != len(r):
            errs.append(f"/constraints/{key}: bound has {len(b)} entries, risk has {len(r)}")
        if n is not None and len(b) != n:
            errs.append(f"/constraints/{key}: expected {n} entries, got {len(b)}")
        for i, (bi, ri) in enumerate(zip(b, r)):
            if math.isfinite(_ext(bi)) and not 0 < ri < 1:
                errs.append(f"/constraints/{key}/risk/{i}: must lie in (0, 1), got {ri}")
    pdf = cfg.get("pdf", {})
    if "component" in pdf and n_x is not None and pdf["component"] >= n_x:
        errs.append(f"/pdf/component: {pdf['component']} out of range for n_x = {n_x}")
    for i, t in enumerate(pdf.get("times", [])):
        if N is not None and t > N:
            errs.append(f"/pdf/times/{i}: step {t} beyond horizon {N}")
    n_pts = pdf.get("n_points")
    if n_pts is not None and n_pts & (n_pts - 1):
        errs.append(f"/pdf/n_points: must be a power of two, got {n_pts}")
    return errs


def _pointer(path) -> str:
    return "/" + "/".join(str(p) for p in path) if path else "/"


def parse_config(data: dict) -> ProblemConfig:
    """Validate a configuration document and build a :class:`ProblemConfig`.

    Raises:
        ConfigError: listing all schema and dimension errors.
    """
    validator = jsonschema.Draft202012Validator(SCHEMA)
    errors = sorted(validator.iter_errors(data), key=lambda e: list(map(str, e.absolute_path)))
    msgs = [f"{_pointer(e.absolute_path)}: {e.message}" for e in errors]
    try:
        msgs += [m for m in _shape_errors(data) if m not in msgs]
    except (KeyError, TypeError, AttributeError, IndexError):
        pass  # structure too broken for dimension checks; schema errors say why
    if msgs:
        raise ConfigError(msgs)
    weights = data.get("weights", {})

    def mat(key):
        return np.array(weights[key], dtype=float) if key in weights else None

    constraints = {
        k: (tuple(_ext(b) for b in v["bound"]), tuple(float(r) for r in v["risk"]))
        for k, v in data.get("constraints", {}).items()
    }
    meas = data["measures"]
    pdf = data.get("pdf", {})
    sim = data.get("simulation", {})
    try:
        cfg = ProblemConfig(
            name=data.get("name", "problem"),
            A=np.array(data["system"]["A"], dtype=float),
            B=np.array(data["system"]["B"], dtype=float),
            E=np.array(data["system"]["E"], dtype=float),
            N=int(data["horizon"]),
            x_ini=tuple(dict(c) for c in meas["x_ini"]),
            w=tuple(dict(c) for c in meas["w"]) if "w" in meas else None,
            w_steps=tuple(tuple(dict(c) for c in s) for s in meas["w_steps"]) if "w_steps" in meas else None,
            Q=mat("Q"),
            R=mat("R"),
            QN=mat("QN"),
            constraints=constraints,
            gauss=bool(data.get("gauss", False)),
            mode=data.get("mode", "sparse"),
            solver=SolverOptions(**data.get("solver", {})),
            simulation=SimulationConfig(**sim),
            pdf=PdfConfig(**{**pdf, "times": tuple(pdf.get("times", (0,)))}),
            sample=SampleConfig(**data.get("sample", {})),
        )
    except ValueError as exc:
        raise ConfigError([f"/: {exc}"]) from exc
    try:
        cfg.problem()
    except ValueError as exc:
        raise ConfigError([f"/: {exc}"]) from exc
    return cfg


def bundled_names() -> tuple[str, ...]:
    files = resources.files("pceocp") / "configs"
    return tuple(sorted(p.name[:-5] for p in files.iterdir() if p.name.endswith(".json")))


def bundled_config(name: str) -> Path:
    """Path of a bundled example configuration (``reactor``, ``tank``, ``non_iid``)."""
    p = resources.files("pceocp") / "configs" / f"{name}.json"
    if not p.is_file():
        raise FileNotFoundError(f"no bundled config {name!r}; available: {list(bundled_names())}")
    return Path(str(p))


def load_config(path) -> ProblemConfig:
    """Read and validate a configuration file (or a bundled config name).

    Raises:
        OSError: the file cannot be read.
        ConfigError: malformed JSON or validation errors.
    """
    p = Path(path)
    if not p.exists() and p.suffix == "" and p.parent == Path("."):
        p = bundled_config(str(path))
    text = p.read_text()
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError([f"/: malformed JSON at line {exc.lineno} column {exc.colno}: {exc.msg}"]) from exc
    return parse_config(data)
