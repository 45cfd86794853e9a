"""Run configuration files.

A configuration is a TOML document with an optional top-level ``command`` key
and the sections ``[system]``, ``[hamiltonian]``, ``[ensemble]``,
``[integrator]`` and ``[output]``. Which keys a section accepts depends on the
command; see :data:`SCHEMA`. Unknown sections or keys are errors, missing keys
take the documented defaults.
"""

from __future__ import annotations

import math
import sys
from dataclasses import dataclass, field, fields
from typing import Any

import numpy as np

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from hybridphase.dynamics import HybridHamiltonian, IntegratorConfig, PiecewiseConstant, Scheme
from hybridphase.ensemble import DEFAULT_SEED, ClassicalDistribution, DensityOperator
from hybridphase.expressions import ExpressionError, infer_dimensions, parse_observable
from hybridphase.observables import HermitianOperator, operator_from_quadratic_form
from hybridphase.phase import HybridPhasePoint, StateVector, expand_state
from hybridphase.polynomial import PolynomialObservable, variable_index
from hybridphase.scenarios import PeresTernoConfig, ToyModelConfig

COMMANDS = (
    "simulate",
    "ensemble",
    "bracket",
    "classify",
    "scenario-toy",
    "scenario-peres-terno",
    "closure-probe",
)
SECTIONS = ("system", "hamiltonian", "ensemble", "integrator", "output")
DEFAULT_OUTPUT_DIR = "hybridphase-out"
REQUIRED = object()


class ConfigError(ValueError):
    """Invalid configuration; carries the offending key path or source position."""

    def __init__(self, message: str, key: str | None = None, line: int | None = None, column: int | None = None):
        self.key = key
        self.line = line
        self.column = column
        prefix = f"{key}: " if key else ""
        where = f" (line {line}, column {column})" if line is not None else ""
        super().__init__(prefix + message + where)

    def details(self) -> dict:
        return {"key": self.key, "line": self.line, "column": self.column}


@dataclass(frozen=True)
class Key:
    kind: str  # int, float, str, bool, expr, floats, strs, matrix, scheme, or "choice:a|b"
    default: Any = REQUIRED


_SCHEMES = "scheme"
_OUTPUT = {
    "dir": Key("str", DEFAULT_OUTPUT_DIR),
    "format": Key("choice:both|csv|json", "both"),
}
_INTEGRATOR = {
    "t0": Key("float", 0.0),
    "t1": Key("float"),
    "dt": Key("float", 1e-3),
    "scheme": Key(_SCHEMES, "IMPLICIT_MIDPOINT"),
    "fixed_point_tol": Key("float", 1e-13),
    "max_fixed_point_iters": Key("int", 50),
    "backend": Key("choice:cython|python", None),
}
_HAMILTONIAN = {
    "h_cl": Key("expr", ""),
    "h_qm": Key("expr", ""),
    "h_qm_matrix": Key("matrix", None),
    "h_qm_matrix_imag": Key("matrix", None),
    "interaction": Key("expr", ""),
    "schedule_breaks": Key("floats", None),
    "schedule_values": Key("floats", None),
}
_DIMS = {"n": Key("int", 0), "N": Key("int", 0)}

_toy = ToyModelConfig()
_pt = PeresTernoConfig()

SCHEMA: dict[str, dict[str, dict[str, Key]]] = {
    "simulate": {
        "system": {
            **_DIMS,
            "x0": Key("floats", None),
            "p0": Key("floats", None),
            "psi_re": Key("floats", None),
            "psi_im": Key("floats", None),
        },
        "hamiltonian": _HAMILTONIAN,
        "integrator": {**_INTEGRATOR, "record_every": Key("int", 1)},
        "output": _OUTPUT,
    },
    "ensemble": {
        "system": _DIMS,
        "hamiltonian": _HAMILTONIAN,
        "ensemble": {
            "distribution": Key("choice:gaussian|delta|uniform", "gaussian"),
            "mean": Key("floats", None),
            "sigma": Key("floats", None),
            "cov": Key("matrix", None),
            "low": Key("floats", None),
            "high": Key("floats", None),
            "qm_weights": Key("floats", None),
            "psi_re": Key("floats", None),
            "psi_im": Key("floats", None),
            "count": Key("int", 1000),
            "seed": Key("int", DEFAULT_SEED),
            "phase_seed": Key("int", None),
            "marginal_axes": Key("strs", []),
            "bins": Key("int", 100),
            "chunk_size": Key("int", None),
        },
        "integrator": _INTEGRATOR,
        "output": _OUTPUT,
    },
    "bracket": {
        "system": {"n": Key("int", None), "N": Key("int", None)},
        "hamiltonian": {
            "A": Key("expr"),
            "B": Key("expr"),
            "kind": Key("choice:hybrid|cl|qm", "hybrid"),
        },
        "output": _OUTPUT,
    },
    "classify": {
        "system": {"n": Key("int", None), "N": Key("int", None)},
        "hamiltonian": {"A": Key("expr"), "tol": Key("float", 1e-12)},
        "output": _OUTPUT,
    },
    "closure-probe": {
        "system": {
            "n": Key("int", None),
            "N": Key("int", None),
            "depth": Key("int", 3),
            "max_degree": Key("int", 8),
            "max_terms": Key("int", 50_000),
        },
        "hamiltonian": {"A": Key("expr"), "B": Key("expr")},
        "output": _OUTPUT,
    },
    "scenario-toy": {
        "hamiltonian": {
            "f": Key("float", _toy.f),
            "T": Key("float", _toy.T),
            "mode": Key("choice:ideal|perturbed", _toy.mode),
            "mass": Key("float", _toy.mass),
            "omega_cl": Key("float", _toy.omega_cl),
            "delta_qm": Key("float", _toy.delta_qm),
        },
        "ensemble": {
            "w_plus": Key("float", _toy.w_plus),
            "sigma_x": Key("float", _toy.sigma_x),
            "sigma_p": Key("float", _toy.sigma_p),
            "x0": Key("float", _toy.x0),
            "p0": Key("float", _toy.p0),
            "count": Key("int", _toy.count),
            "seed": Key("int", _toy.seed),
            "phase_seed": Key("int", None),
            "crosscheck_count": Key("int", _toy.crosscheck_count),
        },
        "integrator": {
            "steps": Key("int", _toy.steps),
            "scheme": Key(_SCHEMES, _toy.scheme.value),
            "crosscheck_scheme": Key(_SCHEMES, _toy.crosscheck_scheme.value),
            "crosscheck_refine": Key("int", _toy.crosscheck_refine),
            "fixed_point_tol": Key("float", _toy.fixed_point_tol),
            "max_fixed_point_iters": Key("int", _toy.max_fixed_point_iters),
            "backend": Key("choice:cython|python", None),
        },
        "output": {**_OUTPUT, "write_ensemble": Key("bool", False)},
    },
    "scenario-peres-terno": {
        "system": {
            "N": Key("int", _pt.N),
            "occupation_threshold": Key("float", _pt.occupation_threshold),
            "tolerance": Key("float", None),
        },
        "hamiltonian": {
            "m": Key("float", _pt.m),
            "omega_cl": Key("float", _pt.omega_cl),
            "omega_qm": Key("float", _pt.omega_qm),
            "lam": Key("float", _pt.lam),
        },
        "ensemble": {
            "alpha_re": Key("float", _pt.alpha_re),
            "alpha_im": Key("float", _pt.alpha_im),
            "x0": Key("float", _pt.x0),
            "p0": Key("float", _pt.p0),
            "count": Key("int", _pt.ensemble_count),
            "sigma": Key("float", _pt.ensemble_sigma),
            "seed": Key("int", _pt.seed),
            "phase_seed": Key("int", None),
        },
        "integrator": {
            "dt": Key("float", _pt.dt),
            "scheme": Key(_SCHEMES, _pt.scheme.value),
            "t_max": Key("float", None),
            "record_every": Key("int", _pt.record_every),
            "conservation_steps": Key("int", _pt.conservation_steps),
            "conservation_dt": Key("float", _pt.conservation_dt),
            "fixed_point_tol": Key("float", _pt.fixed_point_tol),
            "max_fixed_point_iters": Key("int", _pt.max_fixed_point_iters),
            "backend": Key("choice:cython|python", None),
        },
        "output": _OUTPUT,
    },
}


def _is_number(v) -> bool:
    return isinstance(v, (int, float)) and not isinstance(v, bool)


def _coerce(value, spec: Key, path: str):
    kind = spec.kind
    if value is None:
        return None
    if kind == "int":
        if not isinstance(value, int) or isinstance(value, bool):
            raise ConfigError(f"expected an integer, got {value!r}", path)
        return value
    if kind == "float":
        if not _is_number(value) or not math.isfinite(value):
            raise ConfigError(f"expected a finite number, got {value!r}", path)
        return float(value)
    if kind == "bool":
        if not isinstance(value, bool):
            raise ConfigError(f"expected true or false, got {value!r}", path)
        return value
    if kind in ("str", "expr"):
        if not isinstance(value, str):
            raise ConfigError(f"expected a string, got {value!r}", path)
        return value
    if kind == "scheme":
        try:
            return Scheme(value).value
        except ValueError:
            options = ", ".join(s.value for s in Scheme)
            raise ConfigError(f"unknown scheme {value!r}; expected one of {options}", path) from None
    if kind.startswith("choice:"):
        options = kind[7:].split("|")
        if value not in options:
            raise ConfigError(f"expected one of {options}, got {value!r}", path)
        return value
    if kind == "floats":
        if not isinstance(value, list) or not all(_is_number(v) for v in value):
            raise ConfigError("expected a list of numbers", path)
        return [float(v) for v in value]
    if kind == "strs":
        if not isinstance(value, list) or not all(isinstance(v, str) for v in value):
            raise ConfigError("expected a list of strings", path)
        return list(value)
    if kind == "matrix":
        ok = isinstance(value, list) and value and all(isinstance(r, list) for r in value)
        if not ok or len({len(r) for r in value}) != 1 or not all(_is_number(v) for r in value for v in r):
            raise ConfigError("expected a rectangular list of number lists", path)
        return [[float(v) for v in r] for r in value]
    raise AssertionError(kind)


@dataclass
class RunConfig:
    """Validated configuration: every section filled with defaults."""

    command: str
    sections: dict[str, dict[str, Any]]
    output_dir: str = DEFAULT_OUTPUT_DIR
    output_format: str = "both"
    source: str = ""
    overrides: dict[str, Any] = field(default_factory=dict)

    def __getitem__(self, section: str) -> dict[str, Any]:
        return self.sections[section]

    @property
    def seed(self) -> int | None:
        return self.sections.get("ensemble", {}).get("seed")

    def to_dict(self) -> dict:
        return {"command": self.command, **{k: dict(v) for k, v in self.sections.items()}}


def load_document(text: str) -> dict:
    try:
        return tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        msg = str(exc.args[0]) if exc.args else str(exc)
        msg = msg.split(" (at ")[0]
        raise ConfigError(msg, line=getattr(exc, "lineno", None), column=getattr(exc, "colno", None)) from None


def parse_config(text: str, command: str | None = None, overrides: dict | None = None) -> RunConfig:
    """Validate a configuration document for ``command``.

    ``command`` may come from the caller or from the document's top-level
    ``command`` key; if both are given they must agree. ``overrides`` maps
    ``"section.key"`` to values applied before validation (used for CLI flags).
    """
    doc = load_document(text)
    doc_cmd = doc.pop("command", None)
    if doc_cmd is not None and not isinstance(doc_cmd, str):
        raise ConfigError("expected a string", "command")
    if command is None:
        command = doc_cmd
    elif doc_cmd is not None and doc_cmd != command:
        raise ConfigError(f"document is for {doc_cmd!r}, invoked as {command!r}", "command")
    if command is None:
        raise ConfigError("no command given", "command")
    if command not in SCHEMA:
        raise ConfigError(f"unknown command {command!r}; expected one of {', '.join(COMMANDS)}", "command")
    schema = SCHEMA[command]

    for name, value in doc.items():
        if name not in SECTIONS:
            raise ConfigError("unknown top-level key", name)
        if name not in schema:
            raise ConfigError(f"section not used by {command!r}", name)
        if not isinstance(value, dict):
            raise ConfigError("expected a table", name)
    for path, value in (overrides or {}).items():
        sec, key = path.split(".", 1)
        doc.setdefault(sec, {})[key] = value

    sections: dict[str, dict[str, Any]] = {}
    for sec, keys in schema.items():
        given = doc.get(sec, {})
        for key in given:
            if key not in keys:
                raise ConfigError("unknown key", f"{sec}.{key}")
        resolved = {}
        for key, spec in keys.items():
            path = f"{sec}.{key}"
            if key in given:
                resolved[key] = _coerce(given[key], spec, path)
            elif spec.default is REQUIRED:
                raise ConfigError("required key is missing", path)
            else:
                resolved[key] = spec.default
        sections[sec] = resolved

    out = sections.get("output", {})
    rc = RunConfig(
        command,
        sections,
        out.get("dir", DEFAULT_OUTPUT_DIR),
        out.get("format", "both"),
        text,
        dict(overrides or {}),
    )
    validate(rc)
    return rc


def validate(rc: RunConfig) -> None:
    """Build every domain object once so invariant violations surface as config errors."""
    builders = {
        "simulate": lambda: (build_hamiltonian(rc), build_initial_point(rc), build_integrator(rc)),
        "ensemble": lambda: (build_hamiltonian(rc), build_ensemble_inputs(rc), build_integrator(rc)),
        "bracket": lambda: build_expressions(rc, ("A", "B")),
        "classify": lambda: build_expressions(rc, ("A",)),
        "closure-probe": lambda: _check_probe(rc),
        "scenario-toy": lambda: build_toy(rc),
        "scenario-peres-terno": lambda: build_peres_terno(rc),
    }
    builders[rc.command]()


# -- builders ---------------------------------------------------------------


def _dims(rc: RunConfig) -> tuple[int, int]:
    s = rc["system"]
    n, N = s.get("n"), s.get("N")
    for key, v in (("n", n), ("N", N)):
        if v is not None and v < 0:
            raise ConfigError("must be non-negative", f"system.{key}")
    return n, N


def _expr(text: str, path: str, n: int | None, N: int | None) -> PolynomialObservable:
    try:
        return parse_observable(text, n, N)
    except ExpressionError as exc:
        raise ConfigError(str(exc), path) from None


def build_expressions(rc: RunConfig, names) -> list[PolynomialObservable]:
    """Parse ``[hamiltonian]`` expressions into a shared ``(n, N)``."""
    n, N = _dims(rc)
    texts = [rc["hamiltonian"][k] for k in names]
    inferred = []
    for k, t in zip(names, texts):
        try:
            inferred.append(infer_dimensions(t))
        except ExpressionError as exc:
            raise ConfigError(str(exc), f"hamiltonian.{k}") from None
    n = max((d[0] for d in inferred), default=0) if n is None else n
    N = max((d[1] for d in inferred), default=0) if N is None else N
    return [_expr(t, f"hamiltonian.{k}", n, N) for k, t in zip(names, texts)]


def _check_probe(rc: RunConfig):
    s = rc["system"]
    if s["depth"] < 1:
        raise ConfigError("must be at least 1", "system.depth")
    if s["max_degree"] < 2:
        raise ConfigError("must be at least 2", "system.max_degree")
    return build_expressions(rc, ("A", "B"))


def build_hamiltonian(rc: RunConfig) -> HybridHamiltonian:
    n, N = _dims(rc)
    h = rc["hamiltonian"]
    polys = {}
    for key in ("h_cl", "h_qm", "interaction"):
        text = h[key].strip()
        polys[key] = _expr(text, f"hamiltonian.{key}", n, N) if text else None
    h_qm = None
    if h["h_qm_matrix"] is not None:
        if polys["h_qm"] is not None:
            raise ConfigError("give either h_qm or h_qm_matrix, not both", "hamiltonian.h_qm_matrix")
        re_ = np.array(h["h_qm_matrix"])
        im = np.array(h["h_qm_matrix_imag"]) if h["h_qm_matrix_imag"] is not None else np.zeros_like(re_)
        if re_.shape != (N, N) or im.shape != (N, N):
            raise ConfigError(f"expected a {N}x{N} matrix", "hamiltonian.h_qm_matrix")
        try:
            h_qm = HermitianOperator(re_ + 1j * im)
        except ValueError as exc:
            raise ConfigError(str(exc), "hamiltonian.h_qm_matrix") from None
    elif h["h_qm_matrix_imag"] is not None:
        raise ConfigError("needs h_qm_matrix", "hamiltonian.h_qm_matrix_imag")
    elif polys["h_qm"] is not None:
        try:
            h_qm = operator_from_quadratic_form(polys["h_qm"])
        except ValueError as exc:
            raise ConfigError(str(exc), "hamiltonian.h_qm") from None
    schedule = None
    if (h["schedule_breaks"] is None) != (h["schedule_values"] is None):
        raise ConfigError("schedule_breaks and schedule_values go together", "hamiltonian.schedule_values")
    if h["schedule_breaks"] is not None:
        try:
            schedule = PiecewiseConstant(tuple(h["schedule_breaks"]), tuple(h["schedule_values"]))
        except ValueError as exc:
            raise ConfigError(str(exc), "hamiltonian.schedule_breaks") from None
    try:
        return HybridHamiltonian(n, N, h_cl=polys["h_cl"], h_qm=h_qm, interaction=polys["interaction"], schedule=schedule)
    except ValueError as exc:
        raise ConfigError(str(exc), "hamiltonian") from None


def build_integrator(rc: RunConfig) -> IntegratorConfig:
    it = rc["integrator"]
    if not it["t1"] > it["t0"]:
        raise ConfigError("must exceed integrator.t0", "integrator.t1")
    try:
        return IntegratorConfig(it["dt"], Scheme(it["scheme"]), it["fixed_point_tol"], it["max_fixed_point_iters"], it["backend"])
    except ValueError as exc:
        raise ConfigError(str(exc), "integrator") from None


def _vector(values, size: int, path: str, fill: float = 0.0) -> np.ndarray:
    if values is None:
        return np.full(size, fill)
    if len(values) != size:
        raise ConfigError(f"expected {size} values, got {len(values)}", path)
    return np.array(values)


def _state(sec: dict, N: int, path: str) -> StateVector:
    re_ = _vector(sec["psi_re"], N, f"{path}.psi_re")
    im = _vector(sec["psi_im"], N, f"{path}.psi_im")
    psi = StateVector(re_ + 1j * im)
    if not psi.norm_squared() > 0:
        raise ConfigError("state must be nonzero", f"{path}.psi_re")
    return psi.normalized()


def build_initial_point(rc: RunConfig) -> HybridPhasePoint:
    n, N = _dims(rc)
    s = rc["system"]
    x = _vector(s["x0"], n, "system.x0")
    p = _vector(s["p0"], n, "system.p0")
    cl = np.column_stack([x, p]).reshape(-1)
    if N:
        if s["psi_re"] is None:
            raise ConfigError("required when N > 0", "system.psi_re")
        qm = expand_state(_state(s, N, "system")).coords
    else:
        qm = np.zeros(0)
    return HybridPhasePoint.from_coords(np.concatenate([cl, qm]), n, N)


def build_ensemble_inputs(rc: RunConfig) -> tuple[ClassicalDistribution, DensityOperator]:
    n, N = _dims(rc)
    e = rc["ensemble"]
    d = 2 * n
    if e["count"] < 1:
        raise ConfigError("must be at least 1", "ensemble.count")
    try:
        if e["distribution"] == "gaussian":
            mean = _vector(e["mean"], d, "ensemble.mean")
            if e["cov"] is not None:
                if e["sigma"] is not None:
                    raise ConfigError("give either sigma or cov", "ensemble.cov")
                cov = np.array(e["cov"])
                if cov.shape != (d, d):
                    raise ConfigError(f"expected a {d}x{d} matrix", "ensemble.cov")
            else:
                cov = np.diag(_vector(e["sigma"], d, "ensemble.sigma", fill=1.0) ** 2)
            dist = ClassicalDistribution.gaussian(mean, cov)
        elif e["distribution"] == "delta":
            dist = ClassicalDistribution.delta(_vector(e["mean"], d, "ensemble.mean"))
        else:
            if e["low"] is None or e["high"] is None:
                raise ConfigError("uniform distribution needs low and high", "ensemble.low")
            dist = ClassicalDistribution.uniform(
                _vector(e["low"], d, "ensemble.low"), _vector(e["high"], d, "ensemble.high")
            )
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError(str(exc), "ensemble.distribution") from None

    if e["qm_weights"] is not None and e["psi_re"] is not None:
        raise ConfigError("give either qm_weights or psi_re", "ensemble.qm_weights")
    if e["psi_re"] is not None:
        rho = DensityOperator.pure(_state(e, N, "ensemble"))
    else:
        w = _vector(e["qm_weights"], N, "ensemble.qm_weights", fill=1.0 / max(N, 1))
        try:
            rho = DensityOperator.diagonal(w)
        except ValueError as exc:
            raise ConfigError(str(exc), "ensemble.qm_weights") from None
    for axis in e["marginal_axes"]:
        try:
            variable_index(axis, n, N)
        except KeyError as exc:
            raise ConfigError(str(exc.args[0]), "ensemble.marginal_axes") from None
    if e["bins"] < 1:
        raise ConfigError("must be at least 1", "ensemble.bins")
    return dist, rho


def _dataclass_from(cls, values: dict, origin: dict[str, str]):
    names = {f.name for f in fields(cls)}
    assert set(values) <= names, set(values) - names
    try:
        return cls(**values)
    except ValueError as exc:
        msg = str(exc)
        # validation messages start with the offending field name
        first = msg.split()[0] if msg else ""
        raise ConfigError(msg, origin.get(first)) from None


def build_toy(rc: RunConfig) -> ToyModelConfig:
    h, e, it = rc["hamiltonian"], rc["ensemble"], rc["integrator"]
    values, origin = {}, {}
    for sec_name, sec in (("hamiltonian", h), ("ensemble", e), ("integrator", it)):
        for k, v in sec.items():
            values[k] = v
            origin[k] = f"{sec_name}.{k}"
    return _dataclass_from(ToyModelConfig, values, origin)


def build_peres_terno(rc: RunConfig) -> PeresTernoConfig:
    rename = {"count": "ensemble_count", "sigma": "ensemble_sigma"}
    values, origin = {}, {}
    for sec_name in ("system", "hamiltonian", "ensemble", "integrator"):
        for k, v in rc[sec_name].items():
            name = rename.get(k, k)
            values[name] = v
            origin[name] = f"{sec_name}.{k}"
    return _dataclass_from(PeresTernoConfig, values, origin)
