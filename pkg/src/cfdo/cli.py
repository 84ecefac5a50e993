"""Command line front end.

    cfdo run --config run.json [--out DIR] [--threads K]
    cfdo check

A run reads one JSON configuration, computes what its ``mode`` asks for and
writes CSV/JSON artifacts plus a log.  Exit status is 0 on success, 2 when
the configuration is invalid and 3 when a numerical stage fails.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .conformable import DomainError
from .expr import EvaluationError, ParseError
from .problem import SHIFT_MODES, ProblemSpec, asymptotic_delta, compute_constants, UndefinedConstantError
from .propagator import delta_batch
from .quadrature import AccuracyError
from .solver import ConsistencyError, IntegrationError
from .spectrum import CompletenessError, SearchError, Spectrum, contour_radius, find_eigenvalues
from .trace import (
    BranchError,
    CertificationError,
    TraceReport,
    contour_identity,
    cot_contour_check,
    trace1_sides,
    trace2_sides,
)

MODES = ("spectrum", "trace1", "trace2", "audit-all", "asymptotics")
EXIT_OK, EXIT_INVALID, EXIT_NUMERIC = 0, 2, 3
NUMERICAL_ERRORS = (CompletenessError, SearchError, AccuracyError, CertificationError, BranchError,
                    IntegrationError, ConsistencyError, UndefinedConstantError, FloatingPointError)
CONVERGENCE_ROWS = 16

log = logging.getLogger("cfdo")


class ConfigError(ValueError):
    """The run configuration violates its schema or invariants."""


@dataclass(frozen=True)
class Tolerances:
    ode: float = 1e-10
    quadrature: float = 1e-10
    root: float = 1e-11


@dataclass(frozen=True)
class RunConfig:
    alpha: float
    p: str
    q: str
    h: float = 0.0
    H: float = 0.0
    mode: str = "spectrum"
    N: int = 10
    shift_mode: str = "mean-shift"
    tolerances: Tolerances = field(default_factory=Tolerances)
    output: str = "cfdo-out"
    seed: int = 0

    def __post_init__(self):
        if not isinstance(self.alpha, (int, float)) or not (0.0 < self.alpha <= 1.0):
            raise ConfigError(f"alpha must satisfy 0 < alpha <= 1, got {self.alpha!r}")
        if not isinstance(self.N, int) or isinstance(self.N, bool) or self.N < 1:
            raise ConfigError(f"N must be an integer >= 1, got {self.N!r}")
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {', '.join(MODES)}, got {self.mode!r}")
        if self.shift_mode not in SHIFT_MODES:
            raise ConfigError(f"shift_mode must be one of {', '.join(SHIFT_MODES)}, got {self.shift_mode!r}")
        for name, value in asdict(self.tolerances).items():
            if not (isinstance(value, (int, float)) and 1e-14 < value < 1e-2):
                raise ConfigError(f"tolerance {name} must lie in (1e-14, 1e-2), got {value!r}")
        for name in ("h", "H"):
            value = getattr(self, name)
            if not (isinstance(value, (int, float)) and math.isfinite(value)):
                raise ConfigError(f"{name} must be a finite number, got {value!r}")
        if self.mode in ("trace1", "trace2", "audit-all") and self.N < 8:
            raise ConfigError(f"mode {self.mode} needs N >= 8 for tail extrapolation, got {self.N}")

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        if not isinstance(data, dict):
            raise ConfigError("configuration must be a JSON object")
        known = {f for f in cls.__dataclass_fields__}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigError(f"unknown configuration keys: {', '.join(unknown)}")
        for key in ("alpha", "p", "q"):
            if key not in data:
                raise ConfigError(f"missing required key {key!r}")
        data = dict(data)
        tol = data.pop("tolerances", None) or {}
        if not isinstance(tol, dict) or set(tol) - {"ode", "quadrature", "root"}:
            raise ConfigError("tolerances must be an object with keys among ode, quadrature, root")
        for key in ("p", "q"):
            if isinstance(data[key], (int, float)) and not isinstance(data[key], bool):
                data[key] = repr(float(data[key]))
            if not isinstance(data[key], str) or not data[key].strip():
                raise ConfigError(f"{key} must be a nonempty expression string")
        return cls(tolerances=Tolerances(**tol), **data)

    @classmethod
    def load(cls, path: Path) -> "RunConfig":
        try:
            data = json.loads(Path(path).read_text(encoding="utf-8"))
        except OSError as exc:
            raise ConfigError(f"cannot read configuration {path}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"configuration {path} is not valid JSON: {exc}") from exc
        return cls.from_dict(data)

    def problem(self) -> ProblemSpec:
        return ProblemSpec.create(float(self.alpha), self.p, self.q, float(self.h), float(self.H))


@dataclass(frozen=True)
class OutputBundle:
    spectrum_csv: Path | None
    trace_json: Path | None
    convergence_csv: Path | None
    log_path: Path
    extra: tuple[Path, ...] = ()

    def paths(self) -> list[Path]:
        return [p for p in (self.spectrum_csv, self.trace_json, self.convergence_csv, self.log_path, *self.extra)
                if p is not None]


# ---------------------------------------------------------------------------
# serialization
# ---------------------------------------------------------------------------

def fmt(x) -> str:
    """17 significant digits; complex values as a+bj."""
    if isinstance(x, complex):
        if x.imag == 0.0:
            x = x.real
        else:
            return f"{x.real:.17g}{x.imag:+.17g}j"
    if isinstance(x, (int, np.integer)) and not isinstance(x, bool):
        return str(int(x))
    return f"{float(x):.17g}"


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (bool, str)) or obj is None:
        return obj
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, complex):
        return fmt(obj) if obj.imag else _jsonable(obj.real)
    if isinstance(obj, (float, np.floating)):
        # round-tripping through 17 digits keeps the value exactly reproducible
        return float(fmt(obj)) if math.isfinite(obj) else None
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def write_json(path: Path, payload) -> None:
    text = json.dumps(_jsonable(payload), indent=2, sort_keys=False, allow_nan=False)
    path.write_text(text + "\n", encoding="utf-8", newline="\n")


def write_csv(path: Path, header, rows) -> None:
    with path.open("w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([v if isinstance(v, str) else fmt(v) for v in row])


# ---------------------------------------------------------------------------
# stages
# ---------------------------------------------------------------------------

def spectrum_rows(spectrum: Spectrum):
    for n, lam, guess, resid in spectrum.rows():
        yield n, lam, guess, resid, abs(lam - guess)


def convergence_rows(report: TraceReport):
    N = report.N
    levels = np.unique(np.geomspace(8, N, CONVERGENCE_ROWS).astype(int))
    series = report.series
    for n in levels:
        yield report.formula, int(n), float(series.partials[n - 1]), series.limit_at(int(n))


def delta_expansion_rows(spec: ProblemSpec):
    """|Delta_asym - Delta| at the real points of Gamma_N, 20 <= N <= 200, for both pairings."""
    k = compute_constants(spec, strict=False)
    Ns = np.unique(np.geomspace(20, 200, 12).astype(int))
    lams = np.array([contour_radius(spec, int(N)) for N in Ns])
    numeric = delta_batch(spec, lams)
    for lam, num in zip(lams, numeric):
        row = [lam, abs(num)]
        for form in ("printed", "consistent"):
            try:
                row.append(abs(asymptotic_delta(spec, lam, form, k) - num))
            except UndefinedConstantError:
                row.append(math.nan)
        yield row


def eigen_gap_rows(spectrum: Spectrum):
    for n, lam, guess, _ in spectrum.rows():
        if n != 0:
            yield n, abs(lam - guess), n * n * abs(lam - guess)


def run(config: RunConfig, out_dir: Path | None = None, threads: int = 1) -> OutputBundle:
    """Execute one configuration; raises on numerical failure."""
    out = Path(out_dir if out_dir is not None else config.output)
    out.mkdir(parents=True, exist_ok=True)
    log_path = out / "run.log"
    handler = logging.FileHandler(log_path, mode="w", encoding="utf-8")
    handler.setFormatter(logging.Formatter("%(asctime)s %(levelname)s %(message)s"))
    log.addHandler(handler)
    log.setLevel(logging.INFO)
    try:
        return _run(config, out, log_path, max(1, threads))
    except Exception as exc:
        log.error("run failed: %s: %s", type(exc).__name__, exc)
        raise
    finally:
        log.removeHandler(handler)
        handler.close()


def _run(config: RunConfig, out: Path, log_path: Path, threads: int) -> OutputBundle:
    started = time.perf_counter()
    spec = config.problem()
    log.info("problem: %s", spec.describe())
    log.info("mode=%s N=%d shift_mode=%s threads=%d seed=%d tolerances=%s", config.mode, config.N,
             config.shift_mode, threads, config.seed, asdict(config.tolerances))
    spectrum = find_eigenvalues(spec, config.N, rtol=config.tolerances.root)
    log.info("spectrum: certified %d roots (winding %.9f); flags: %s", spectrum.certified_count,
             spectrum.winding_value, "; ".join(spectrum.flags) or "none")
    spectrum_csv = out / "spectrum.csv"
    write_csv(spectrum_csv, ["n", "lambda", "guess", "abs_residual_delta", "gap_to_guess"], spectrum_rows(spectrum))

    trace_json = convergence_csv = None
    extra: list[Path] = []
    if config.mode in ("trace1", "trace2", "audit-all"):
        formulas = {"trace1": trace1_sides, "trace2": trace2_sides}
        wanted = ["trace1", "trace2"] if config.mode == "audit-all" else [config.mode]
        with ThreadPoolExecutor(max_workers=threads) as pool:
            futures = [pool.submit(formulas[f], spec, config.N, config.shift_mode, spectrum) for f in wanted]
            if config.mode == "audit-all":
                checks = [pool.submit(contour_identity, spec, min(config.N, 10), m) for m in (1, 2)]
            reports = [f.result() for f in futures]
        for r in reports:
            log.info("%s: lhs=%.17g rhs=%.17g residual=%.3e convergence_delta=%.3e", r.formula, r.lhs, r.rhs,
                     r.residual, r.convergence_delta)
        trace_json = out / "trace.json"
        if config.mode == "audit-all":
            identities = [c.result() for c in checks]
            numeric, analytic = cot_contour_check(spec, min(config.N, 10))
            payload = {
                "reports": [r.as_dict() for r in reports],
                "contour_identities": [
                    {"moment": c.moment, "N": c.N, "integral": c.integral, "eigen_sum": c.eigen_sum,
                     "difference": c.difference, "nodes": c.nodes} for c in identities],
                "cot_check": {"N": min(config.N, 10), "numeric": numeric, "residue_sum": analytic,
                              "difference": abs(numeric - analytic)},
            }
            for c in identities:
                log.info("contour identity m=%d N=%d: difference %.3e", c.moment, c.N, c.difference)
        else:
            payload = reports[0].as_dict()
        write_json(trace_json, payload)
        convergence_csv = out / "convergence.csv"
        write_csv(convergence_csv, ["formula", "N", "partial_sum", "extrapolated"],
                  [row for r in reports for row in convergence_rows(r)])
    if config.mode in ("asymptotics", "audit-all"):
        path = out / "asymptotics_delta.csv"
        write_csv(path, ["lambda", "abs_delta", "error_printed", "error_consistent"], delta_expansion_rows(spec))
        extra.append(path)
        path = out / "asymptotics_eigen.csv"
        write_csv(path, ["n", "gap_to_guess", "n2_gap"], eigen_gap_rows(spectrum))
        extra.append(path)
    log.info("finished in %.2f s", time.perf_counter() - started)
    return OutputBundle(spectrum_csv, trace_json, convergence_csv, log_path, tuple(extra))


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------

def _threads(arg: int | None) -> int:
    if arg is not None:
        return arg
    env = os.environ.get("CFDO_THREADS", "").strip()
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise ConfigError(f"CFDO_THREADS must be an integer, got {env!r}") from None
    return 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cfdo", description="Spectra and trace-formula audits for "
                                     "conformable fractional diffusion pencils.")
    sub = parser.add_subparsers(dest="command", required=True)
    run_p = sub.add_parser("run", help="execute a JSON run configuration")
    run_p.add_argument("--config", required=True, type=Path, help="path to the JSON configuration")
    run_p.add_argument("--out", type=Path, default=None, help="output directory (overrides the config)")
    run_p.add_argument("--threads", type=int, default=None, help="worker threads (default: $CFDO_THREADS or 1)")
    sub.add_parser("check", help="run the built-in invariant checks")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "check":
        from .checks import run_checks

        return 0 if run_checks(sys.stdout) else 1
    try:
        config = RunConfig.load(args.config)
        threads = _threads(args.threads)
        if threads < 1:
            raise ConfigError(f"--threads must be >= 1, got {threads}")
        config.problem()
    except (ConfigError, ParseError, DomainError, EvaluationError, TypeError) as exc:
        print(f"cfdo: invalid configuration: {exc}", file=sys.stderr)
        return EXIT_INVALID
    try:
        bundle = run(config, args.out, threads)
    except NUMERICAL_ERRORS as exc:
        print(f"cfdo: numerical failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    for path in bundle.paths():
        print(path)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
