"""Hybrid quantum-classical phase-space dynamics from the command line.

Every run writes into one output directory: the command's CSV/JSON results
and a ``manifest.json`` listing the resolved configuration, seeds, versions,
kernel backend and the SHA-256 of each output. Failures also write
``error.json``. Exit codes: 0 success, 2 configuration error, 3 numeric
failure, 4 I/O error.
"""

from __future__ import annotations

import argparse
import hashlib
import platform
import sys
from pathlib import Path

import numpy as np

import hybridphase
from hybridphase import config as cfgmod
from hybridphase import kernels
from hybridphase.config import ConfigError, RunConfig, parse_config
from hybridphase.dynamics import ConvergenceError, propagate
from hybridphase.ensemble import liouville_propagate, marginal, sample_factorized, summary
from hybridphase.io import sha256_file, write_json
from hybridphase.observables import classify, cl_bracket, hybrid_bracket, qm_bracket
from hybridphase.polynomial import variable_index
from hybridphase.scenarios import run_closure_probe, run_peres_terno, run_toy_measurement

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERIC = 3
EXIT_IO = 4


class NumericError(RuntimeError):
    """Non-finite results or failed scenario criteria."""

    def __init__(self, message: str, **details):
        super().__init__(message)
        self.details = details


def _check_finite(arr, what: str) -> None:
    if not np.all(np.isfinite(arr)):
        raise NumericError(f"non-finite values in {what}")


class _Outputs:
    """Collects written files; honours the csv/json format switch."""

    def __init__(self, outdir: Path, fmt: str):
        self.outdir = outdir
        self.fmt = fmt
        self.paths: list[Path] = []

    def wants(self, kind: str) -> bool:
        return self.fmt in ("both", kind)

    def json(self, name: str, obj) -> None:
        if self.wants("json"):
            self.paths.append(write_json(self.outdir / name, obj))

    def csv(self, writer, name: str) -> None:
        if self.wants("csv"):
            self.paths.append(writer(self.outdir / name))


# -- commands -----------------------------------------------------------------


def _cmd_simulate(rc: RunConfig, out: _Outputs, echo) -> None:
    H = cfgmod.build_hamiltonian(rc)
    point = cfgmod.build_initial_point(rc)
    icfg = cfgmod.build_integrator(rc)
    it = rc["integrator"]
    traj = propagate(point, H, it["t0"], it["t1"], icfg, record_every=it["record_every"])
    _check_finite(traj.coords, "trajectory")
    out.csv(traj.to_csv, "trajectory.csv")
    info = {
        "steps": traj.meta["steps"],
        "h": traj.meta["h"],
        "scheme": traj.meta["scheme"],
        "energy_drift": traj.energy_drift,
        "constraint_drift": traj.constraint_drift,
        "final": dict(zip(traj.column_names()[1:-2], traj.grouped_coords()[-1].tolist())),
    }
    out.json("summary.json", info)
    echo(f"steps={info['steps']} energy_drift={info['energy_drift']!r} constraint_drift={info['constraint_drift']!r}")


def _cmd_ensemble(rc: RunConfig, out: _Outputs, echo) -> None:
    H = cfgmod.build_hamiltonian(rc)
    dist, rho = cfgmod.build_ensemble_inputs(rc)
    icfg = cfgmod.build_integrator(rc)
    e, it = rc["ensemble"], rc["integrator"]
    ens0 = sample_factorized(dist, rho, e["count"], e["seed"], e["phase_seed"])
    ens1 = liouville_propagate(ens0, H, it["t0"], it["t1"], icfg, chunk_size=e["chunk_size"])
    _check_finite(ens1.coords, "ensemble")
    out.csv(ens1.to_csv, "ensemble_final.csv")
    for axis in e["marginal_axes"]:
        v = ens1.coords[:, variable_index(axis, ens1.n, ens1.N)]
        lo, hi = float(v.min()), float(v.max())
        if hi <= lo:
            lo, hi = lo - 0.5, hi + 0.5
        m = marginal(ens1, axis, np.linspace(lo, hi, e["bins"] + 1))
        out.csv(m.to_csv, f"marginal_{axis}.csv")
    info = {"initial": summary(ens0), "final": summary(ens1)}
    out.json("summary.json", info)
    echo(f"particles={len(ens1)} max|C-1|={info['final']['constraint_max_dev']!r}")


def _cmd_bracket(rc: RunConfig, out: _Outputs, echo) -> None:
    A, B = cfgmod.build_expressions(rc, ("A", "B"))
    kind = rc["hamiltonian"]["kind"]
    fn = {"hybrid": hybrid_bracket, "cl": cl_bracket, "qm": qm_bracket}[kind]
    R = fn(A, B)
    cls = classify(R)
    out.json("result.json", {"A": str(A), "B": str(B), "kind": kind, "result": str(R), "class": cls.to_dict()})
    echo(str(R) if not R.is_zero() else "0")
    echo(cls.kind.value)


def _cmd_classify(rc: RunConfig, out: _Outputs, echo) -> None:
    (A,) = cfgmod.build_expressions(rc, ("A",))
    cls = classify(A, rc["hamiltonian"]["tol"])
    out.json("result.json", {"expression": str(A), "class": cls.to_dict()})
    echo(cls.kind.value)


def _report_outputs(report, out: _Outputs, echo) -> None:
    if out.wants("json"):
        out.paths.append(out.outdir / "report.json")
        out.outdir.joinpath("report.json").write_text(report.to_json(), encoding="utf-8")
    for c in report.criteria:
        echo(f"{'PASS' if c.passed else 'FAIL'} {c.name}: measured={c.measured!r} tolerance={c.tolerance!r}")
    if not report.passed:
        failed = [c.name for c in report.criteria if not c.passed]
        raise NumericError(f"{len(failed)} criteria failed", failed=failed)


def _cmd_toy(rc: RunConfig, out: _Outputs, echo) -> None:
    report = run_toy_measurement(cfgmod.build_toy(rc))
    out.csv(report.artifacts["marginal_initial"].to_csv, "marginal_initial.csv")
    out.csv(report.artifacts["marginal_final"].to_csv, "marginal_final.csv")
    if rc["output"]["write_ensemble"]:
        out.csv(report.artifacts["ensemble_final"].to_csv, "ensemble_final.csv")
    _report_outputs(report, out, echo)


def _cmd_peres_terno(rc: RunConfig, out: _Outputs, echo) -> None:
    report = run_peres_terno(cfgmod.build_peres_terno(rc))
    out.csv(report.artifacts["trajectory"].to_csv, "trajectory.csv")
    if report.flags.get("truncation_limited"):
        echo("warning: top-level occupation exceeded the threshold; results are truncation-limited")
    _report_outputs(report, out, echo)


def _cmd_closure(rc: RunConfig, out: _Outputs, echo) -> None:
    A, B = cfgmod.build_expressions(rc, ("A", "B"))
    s = rc["system"]
    report = run_closure_probe(A, B, s["depth"], s["max_degree"], s["max_terms"])
    echo(f"max (X,P)-degree {report.measurements['max_qm_degree']}, escapes {report.measurements['escapes']}")
    if report.flags["budget_exceeded"]:
        echo("budget exceeded: iteration truncated")
    _report_outputs(report, out, echo)


COMMANDS = {
    "simulate": _cmd_simulate,
    "ensemble": _cmd_ensemble,
    "bracket": _cmd_bracket,
    "classify": _cmd_classify,
    "scenario-toy": _cmd_toy,
    "scenario-peres-terno": _cmd_peres_terno,
    "closure-probe": _cmd_closure,
}


# -- manifest / dispatch ---------------------------------------------------


def _manifest(rc: RunConfig | None, outputs: list[Path], status: int, error: dict | None) -> dict:
    ens = rc.sections.get("ensemble", {}) if rc else {}
    return {
        "command": rc.command if rc else None,
        "config": rc.to_dict() if rc else None,
        "config_sha256": hashlib.sha256(rc.source.encode()).hexdigest() if rc else None,
        "overrides": rc.overrides if rc else {},
        "seed": ens.get("seed"),
        "phase_seed": ens.get("phase_seed"),
        "versions": {
            "hybridphase": hybridphase.__version__,
            "python": platform.python_version(),
            "numpy": np.__version__,
        },
        "backend": kernels.BACKEND,
        "status": status,
        "error": error,
        "outputs": [{"path": p.name, "sha256": sha256_file(p)} for p in outputs],
    }


def _error_record(exc: BaseException, code: int) -> dict:
    rec = {"exit_code": code, "type": type(exc).__name__, "message": str(exc)}
    if isinstance(exc, ConfigError):
        rec.update(exc.details())
    elif isinstance(exc, ConvergenceError):
        rec.update({"time": exc.time, "indices": list(exc.indices)[:100], "residual": exc.residual})
    elif isinstance(exc, NumericError):
        rec.update(exc.details)
    return rec


def _classify_exception(exc: BaseException) -> int:
    if isinstance(exc, (ConvergenceError, NumericError, FloatingPointError, OverflowError)):
        return EXIT_NUMERIC
    if isinstance(exc, OSError):
        return EXIT_IO
    if isinstance(exc, (ConfigError, ValueError, KeyError)):
        return EXIT_CONFIG
    raise exc


def _finish(outdir: Path | None, rc, outputs, code, error, echo_err) -> int:
    if error is not None:
        echo_err(f"error: {error['message']}")
    if outdir is None:
        return code
    try:
        outdir.mkdir(parents=True, exist_ok=True)
        if error is not None:
            write_json(outdir / "error.json", error)
        write_json(outdir / "manifest.json", _manifest(rc, outputs, code, error))
    except OSError as exc:
        echo_err(f"error: cannot write manifest: {exc}")
        return EXIT_IO
    return code


def dispatch(rc: RunConfig, outdir: str | Path | None = None, quiet: bool = False) -> int:
    """Run ``rc`` and write its outputs plus the manifest; return the exit code."""
    echo = (lambda s: None) if quiet else (lambda s: print(s, flush=True))
    outdir = Path(outdir if outdir is not None else rc.output_dir)
    try:
        outdir.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        return _finish(None, rc, [], EXIT_IO, _error_record(exc, EXIT_IO), _stderr)
    out = _Outputs(outdir, rc.output_format)
    try:
        with np.errstate(over="raise", invalid="raise", divide="raise"):
            COMMANDS[rc.command](rc, out, echo)
    except Exception as exc:
        code = _classify_exception(exc)
        return _finish(outdir, rc, out.paths, code, _error_record(exc, code), _stderr)
    return _finish(outdir, rc, out.paths, EXIT_OK, None, _stderr)


def _stderr(s: str) -> None:
    print(s, file=sys.stderr, flush=True)


# -- argument parsing ----------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="hybridphase", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"%(prog)s {hybridphase.__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, config_required=False):
        if config_required:
            sp.add_argument("config", help="TOML configuration file")
        else:
            sp.add_argument("-c", "--config", help="TOML configuration file")
        sp.add_argument("-o", "--output-dir", help="output directory (overrides [output].dir)")
        sp.add_argument("-q", "--quiet", action="store_true")
        return sp

    common(sub.add_parser("run", help="run the command named in the configuration"), config_required=True)
    for name in ("simulate", "ensemble"):
        common(sub.add_parser(name, help=f"{name} from a configuration"), config_required=True)
    for name in ("scenario-toy", "scenario-peres-terno"):
        sp = common(sub.add_parser(name, help=f"canned {name[9:]} scenario"))
        sp.add_argument("--seed", type=int)
        sp.add_argument("--phase-seed", type=int)
    sp = common(sub.add_parser("bracket", help="bracket of two expressions"))
    sp.add_argument("A", nargs="?")
    sp.add_argument("B", nargs="?")
    sp.add_argument("--kind", choices=("hybrid", "cl", "qm"))
    sp = common(sub.add_parser("classify", help="classify an expression"))
    sp.add_argument("A", nargs="?")
    sp = common(sub.add_parser("closure-probe", help="iterate brackets of two expressions"))
    sp.add_argument("A", nargs="?")
    sp.add_argument("B", nargs="?")
    sp.add_argument("--depth", type=int)
    for sp in (sub.choices["bracket"], sub.choices["classify"], sub.choices["closure-probe"]):
        sp.add_argument("--n", type=int, dest="n_cl", help="classical degrees of freedom")
        sp.add_argument("--N", type=int, dest="N_qm", help="quantum dimension")
    return p


def _overrides(args) -> dict:
    ov = {}
    for attr, path in (
        ("seed", "ensemble.seed"),
        ("phase_seed", "ensemble.phase_seed"),
        ("A", "hamiltonian.A"),
        ("B", "hamiltonian.B"),
        ("kind", "hamiltonian.kind"),
        ("depth", "system.depth"),
        ("n_cl", "system.n"),
        ("N_qm", "system.N"),
    ):
        v = getattr(args, attr, None)
        if v is not None:
            ov[path] = v
    return ov


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    command = None if args.command == "run" else args.command
    # errors before the config is read still get a manifest, in the default place
    outdir = Path(args.output_dir or cfgmod.DEFAULT_OUTPUT_DIR)
    text = ""
    if args.config:
        try:
            text = Path(args.config).read_text(encoding="utf-8")
        except (OSError, UnicodeDecodeError) as exc:
            code = EXIT_IO
            return _finish(outdir, None, [], code, _error_record(exc, code), _stderr)
    try:
        rc = parse_config(text, command, _overrides(args))
    except ConfigError as exc:
        return _finish(outdir, None, [], EXIT_CONFIG, _error_record(exc, EXIT_CONFIG), _stderr)
    return dispatch(rc, args.output_dir, quiet=args.quiet)


if __name__ == "__main__":
    sys.exit(main())
