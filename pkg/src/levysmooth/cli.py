"""Command-line experiment driver.

``levysmooth <command> --config path.json [--out dir] [--threads N] [--seed S]``

The JSON config is validated against a per-command schema (unknown keys
are rejected) before anything runs.  Each command writes CSV reports and
a ``manifest.json`` into the output directory.

Exit codes: 0 on success, 2 when a Divergent/Inconclusive/Unreliable
result is present (files are still written; ``"allow_divergent": true``
turns this into 0), 1 on configuration or I/O errors.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import math
import platform
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

import jsonschema
import numpy as np
import scipy

from . import __version__, kernels, sde, semigroup, spectral, streams
from .errors import DomainError, NotApplicableError, UnsupportedError
from .subordinators import (
    Method,
    MomentQuery,
    Status,
    negative_moment_mc,
    negative_moment_quadrature,
    subordinator_from_dict,
)

COMMANDS = (
    "moments",
    "density",
    "smooth-check",
    "holder",
    "spectral",
    "sde-check",
    "duhamel",
    "density-criterion",
    "kernel-eval",
)

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_FLAGGED = 2


class ConfigError(ValueError):
    """Raised with every schema violation found in a config."""

    def __init__(self, errors: list[str]):
        self.errors = list(errors)
        super().__init__("; ".join(self.errors))


class UnknownCommand(ConfigError):
    pass


# ----------------------------------------------------------------------------
# Schemas
# ----------------------------------------------------------------------------

_POS = {"type": "number", "exclusiveMinimum": 0}
_POS_INT = {"type": "integer", "minimum": 1}
_TIMES = {"type": "array", "items": _POS, "minItems": 1}
_EXPONENT = {"oneOf": [{"type": "number", "minimum": 1}, {"const": "inf"}]}
_VECTOR = {"type": "array", "items": {"type": "number"}, "minItems": 1}
_POINT = {"oneOf": [{"type": "number"}, _VECTOR]}
_POINTS = {"type": "array", "items": _POINT, "minItems": 1}
_GRID = {
    "oneOf": [
        _POINTS,
        {
            "type": "object",
            "properties": {"lo": {"type": "number"}, "hi": {"type": "number"}, "num": {"type": "integer", "minimum": 2}},
            "required": ["lo", "hi", "num"],
            "additionalProperties": False,
        },
    ]
}

_SUBORDINATOR = {
    "oneOf": [
        {
            "type": "object",
            "properties": {"kind": {"const": "stable"}, "rho": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1}},
            "required": ["kind", "rho"],
            "additionalProperties": False,
        },
        {
            "type": "object",
            "properties": {"kind": {"const": "gamma"}, "a": _POS, "b": _POS},
            "required": ["kind", "a", "b"],
            "additionalProperties": False,
        },
        {
            "type": "object",
            "properties": {"kind": {"const": "drift"}, "c": _POS},
            "required": ["kind", "c"],
            "additionalProperties": False,
        },
    ]
}

_PERTURBATION = {
    "oneOf": [
        {"type": "object", "properties": {"kind": {"const": "zero"}}, "required": ["kind"], "additionalProperties": False},
        {
            "type": "object",
            "properties": {"kind": {"const": "fbm"}, "hurst": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1}, "scale": _POS},
            "required": ["kind", "hurst"],
            "additionalProperties": False,
        },
    ]
}

_NOISE = {
    "type": "object",
    "properties": {
        "dimension": _POS_INT,
        "subordinator": _SUBORDINATOR,
        "covariance": {"type": "array", "items": {"type": "array", "items": {"type": "number"}}},
        "perturbation": _PERTURBATION,
    },
    "required": ["dimension", "subordinator"],
    "additionalProperties": False,
}

_TEST_FUNCTION = {
    "type": "object",
    "properties": {
        "kind": {"enum": ["box", "halfspace", "constant", "bump", "cosine", "linear"]},
        "lo": {"type": "array", "items": {"type": ["number", "null"]}},
        "hi": {"type": "array", "items": {"type": ["number", "null"]}},
        "dimension": _POS_INT,
        "axis": {"type": "integer", "minimum": 0},
        "value": {"type": "number"},
        "center": _VECTOR,
        "width": _POS,
        "omega": _VECTOR,
        "coef": _VECTOR,
    },
    "required": ["kind"],
    "additionalProperties": False,
}

_DRIFT = {
    "oneOf": [
        {"type": "object", "properties": {"kind": {"const": "linear"}, "coef": {"type": "number"}}, "required": ["kind", "coef"], "additionalProperties": False},
        {"type": "object", "properties": {"kind": {"const": "tanh"}, "scale": {"type": "number"}}, "required": ["kind", "scale"], "additionalProperties": False},
        {"type": "object", "properties": {"kind": {"const": "zero"}}, "required": ["kind"], "additionalProperties": False},
    ]
}

_DIFFUSION = {
    "oneOf": [
        {"type": "object", "properties": {"kind": {"const": "sin"}, "base": _POS, "amp": {"type": "number"}}, "required": ["kind"], "additionalProperties": False},
        {"type": "object", "properties": {"kind": {"const": "constant"}, "scale": _POS}, "required": ["kind"], "additionalProperties": False},
    ]
}

_SDE = {
    "type": "object",
    "properties": {"noise": _NOISE, "drift": _DRIFT, "diffusion": _DIFFUSION},
    "required": ["noise"],
    "additionalProperties": False,
}

_COMMON = {
    "command": {"enum": list(COMMANDS)},
    "seed": {"type": "integer", "minimum": 0},
    "threads": _POS_INT,
    "allow_divergent": {"type": "boolean"},
    "output": {"type": "string"},
}


def _schema(props: dict, required: list[str]) -> dict:
    return {
        "type": "object",
        "properties": {**_COMMON, **props},
        "required": ["command", *required],
        "additionalProperties": False,
    }


SCHEMAS = {
    "moments": _schema(
        {
            "subordinator": _SUBORDINATOR,
            "t": _TIMES,
            "p": {"type": "array", "items": _POS, "minItems": 1},
            "method": {"enum": ["quadrature", "montecarlo", "closedform"]},
            "n": _POS_INT,
        },
        ["subordinator", "t", "p"],
    ),
    "density": _schema(
        {
            "noise": _NOISE,
            "t": _TIMES,
            "y": _GRID,
            "method": {"enum": ["mixture", "fourier", "both"]},
            "convention": {"enum": list(spectral.CONVENTIONS)},
        },
        ["noise", "t", "y"],
    ),
    "smooth-check": _schema(
        {
            "noise": _NOISE,
            "f": _TEST_FUNCTION,
            "t": _TIMES,
            "k": {"type": "integer", "minimum": 0},
            "l": {"type": "number", "minimum": 0},
            "p": _EXPONENT,
            "q": _EXPONENT,
            "x": _POINTS,
        },
        ["noise", "f", "t", "k"],
    ),
    "holder": _schema(
        {
            "noise": _NOISE,
            "f": _TEST_FUNCTION,
            "t": _TIMES,
            "beta": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
            "p": _EXPONENT,
        },
        ["noise", "f", "t", "beta"],
    ),
    "spectral": _schema(
        {
            "noise": _NOISE,
            "convention": {"enum": list(spectral.CONVENTIONS)},
            "radii": {"type": "array", "items": _POS, "minItems": 4},
            "t": _TIMES,
        },
        ["noise"],
    ),
    "sde-check": _schema(
        {
            "sde": _SDE,
            "t": _POS,
            "h": _POS,
            "n": _POS_INT,
            "f": _TEST_FUNCTION,
            "x": _POINTS,
            "x0": _POINT,
            "offsets": {"type": "array", "items": {"type": "number", "minimum": 0}, "minItems": 2},
            "write_paths": {"type": "boolean"},
        },
        ["sde", "t", "h", "n", "f"],
    ),
    "duhamel": _schema(
        {
            "sde": _SDE,
            "t": _POS,
            "f": _TEST_FUNCTION,
            "x": {"type": "array", "items": {"type": "number"}, "minItems": 1},
            "levels": {
                "type": "array",
                "minItems": 1,
                "items": {
                    "type": "object",
                    "properties": {"n": _POS_INT, "nodes": _POS_INT, "h": _POS, "bandwidth": _POS},
                    "required": ["n", "nodes", "h"],
                    "additionalProperties": False,
                },
            },
            "strict": {"type": "boolean"},
        },
        ["sde", "t", "f", "x"],
    ),
    "density-criterion": _schema(
        {
            "sde": _SDE,
            "t": _POS,
            "x0": {"type": "number"},
            "gamma": _POS,
            "M": _POS,
            "p": {"type": "number", "exclusiveMinimum": 1},
            "n": {"type": "integer", "minimum": 10_000},
            "bandwidth": _POS,
            "h": _POS,
            "y": _GRID,
        },
        ["sde", "t", "x0", "gamma", "M", "p", "n", "bandwidth", "h"],
    ),
    "kernel-eval": _schema(
        {
            "dimension": _POS_INT,
            "covariance": {"type": "array", "items": {"type": "array", "items": {"type": "number"}}},
            "t": _TIMES,
            "x": _POINTS,
            "alpha": {"type": "array", "items": {"type": "integer", "minimum": 0}, "minItems": 1},
        },
        ["dimension", "t", "x"],
    ),
}


@dataclass(frozen=True)
class ExperimentConfig:
    command: str
    data: dict = field(default_factory=dict)

    @property
    def seed(self) -> int:
        return int(self.data.get("seed", 0))

    def to_json(self) -> str:
        return json.dumps(self.data, sort_keys=True, separators=(",", ":"))

    def config_hash(self) -> str:
        return hashlib.sha256(self.to_json().encode()).hexdigest()


def _path_of(err) -> str:
    loc = "/".join(str(p) for p in err.absolute_path)
    return loc or "<root>"


def validate(data) -> list[str]:
    """All schema violations of a decoded config (empty when valid)."""
    if not isinstance(data, dict):
        return ["config must be a JSON object"]
    command = data.get("command")
    if command is None:
        return ["missing required key 'command'"]
    if command not in SCHEMAS:
        raise UnknownCommand([f"unknown command {command!r}; expected one of {list(COMMANDS)}"])
    validator = jsonschema.Draft202012Validator(SCHEMAS[command])
    errors = []
    for err in sorted(validator.iter_errors(data), key=lambda e: (list(e.absolute_path), e.message)):
        if err.validator == "required":
            missing = err.message.split("'")[1] if "'" in err.message else err.message
            errors.append(f"{_path_of(err)}: missing required block '{missing}'")
        else:
            errors.append(f"{_path_of(err)}: {err.message}")
    return errors


def parse_config(text: str) -> ExperimentConfig:
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError([f"invalid JSON: {exc}"]) from exc
    errors = validate(data)
    if errors:
        raise ConfigError(errors)
    return ExperimentConfig(data["command"], data)


def serialize(config: ExperimentConfig) -> str:
    return json.dumps(config.data, sort_keys=True, indent=2)


# ----------------------------------------------------------------------------
# Helpers
# ----------------------------------------------------------------------------


def _exponent(v) -> float:
    return math.inf if v in (None, "inf") else float(v)


def _grid(spec, d: int = 1) -> np.ndarray:
    if isinstance(spec, dict):
        return np.linspace(spec["lo"], spec["hi"], int(spec["num"]))
    arr = np.asarray(spec, dtype=float)
    return arr if d == 1 and arr.ndim == 1 else arr.reshape(-1, d)


def _fmt(v) -> str:
    if isinstance(v, (list, tuple, np.ndarray)):
        return " ".join(_fmt(x) for x in np.asarray(v, dtype=float).reshape(-1))
    return repr(float(v))


def _table(header: list[str], rows: list[list]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([c if isinstance(c, str) else _fmt(c) for c in r])
    return buf.getvalue()


@dataclass
class RunResult:
    files: dict[str, str | bytes]
    flagged: bool = False
    summary: dict = field(default_factory=dict)


# ----------------------------------------------------------------------------
# Commands
# ----------------------------------------------------------------------------


def _moments(cfg: dict, threads: int) -> RunResult:
    spec = subordinator_from_dict(cfg["subordinator"])
    method = Method(cfg.get("method", "quadrature"))
    seed = int(cfg.get("seed", 0))
    n = int(cfg.get("n", 10**6))
    rows, flagged = [], False
    for t in cfg["t"]:
        for p in cfg["p"]:
            q = MomentQuery(float(t), float(p), method)
            if method is Method.MONTE_CARLO:
                if spec.negative_moment_status(q.t, q.p) is not Status.FINITE:
                    res = negative_moment_quadrature(spec, q)
                else:
                    res = negative_moment_mc(spec, q, n, seed, threads)
            elif method is Method.CLOSED_FORM:
                res = spec.closed_form_negative_moment(q.t, q.p)
            else:
                res = negative_moment_quadrature(spec, q)
            flagged |= res.status is not Status.FINITE
            rows.append([t, p, method.value, res.value, res.stderr, res.status.value])
    return RunResult({"moments.csv": _table(["t", "p", "method", "value", "stderr", "status"], rows)}, flagged)


def _density(cfg: dict, threads: int) -> RunResult:
    noise = semigroup.noise_from_dict(cfg["noise"])
    d = noise.dimension
    y = _grid(cfg["y"], d)
    method = cfg.get("method", "mixture")
    psi = None
    if method in ("fourier", "both"):
        psi = spectral.char_exponent_from_noise(noise, cfg.get("convention", "paper"))
    header = ["t", "y"]
    if method in ("mixture", "both"):
        header.append("mixture")
    if method in ("fourier", "both"):
        header.append("fourier")
    header.append("status")
    rows, flagged = [], False
    for t in cfg["t"]:
        cols, statuses = [], []
        if method in ("mixture", "both"):
            ev = semigroup.subordinated_density(noise, float(t), y)
            cols.append(np.atleast_1d(ev.value))
            statuses.append(ev.status)
        if psi is not None:
            fd = spectral.fourier_density(psi, float(t), y, d)
            cols.append(np.atleast_1d(fd.value))
            statuses.append(fd.status)
        status = next((s for s in statuses if s is not Status.FINITE), Status.FINITE)
        flagged |= status is not Status.FINITE
        for i in range(len(cols[0])):
            rows.append([t, y[i]] + [c[i] for c in cols] + [status.value])
    return RunResult({"density.csv": _table(header, rows)}, flagged)


def _smooth_check(cfg: dict, threads: int) -> RunResult:
    noise = semigroup.noise_from_dict(cfg["noise"])
    f = semigroup.test_function_from_dict(cfg["f"])
    x = _grid(cfg["x"], noise.dimension) if "x" in cfg else None
    rep = semigroup.verify_smoothing_bound(
        noise, f, cfg["t"], int(cfg["k"]), float(cfg.get("l", 0.0)), _exponent(cfg.get("p")), _exponent(cfg.get("q")),
        x_grid=x, seed=int(cfg.get("seed", 0)),
    )
    flagged = rep.verdict is not semigroup.Verdict.BOUND_HOLDS
    return RunResult({"smooth_check.csv": rep.to_csv(), "smooth_check.json": rep.to_json() + "\n"}, flagged)


def _holder(cfg: dict, threads: int) -> RunResult:
    noise = semigroup.noise_from_dict(cfg["noise"])
    f = semigroup.test_function_from_dict(cfg["f"])
    beta = float(cfg["beta"])
    p = _exponent(cfg.get("p"))
    rows, flagged = [], False
    for t in cfg["t"]:
        est = semigroup.holder_seminorm_estimate(noise, float(t), f, beta, p=p)
        flagged |= est.status is not Status.FINITE
        rows.append([t, beta, est.seminorm, est.bound, est.ratio, est.status.value])
    return RunResult({"holder.csv": _table(["t", "beta", "seminorm", "bound", "ratio", "status"], rows)}, flagged)


def _spectral(cfg: dict, threads: int) -> RunResult:
    noise = semigroup.noise_from_dict(cfg["noise"])
    psi = spectral.char_exponent_from_noise(noise, cfg.get("convention", "paper"))
    radii = cfg.get("radii")
    res = spectral.hw_ratio(psi, radii)
    psi_vals = np.asarray(psi(res.radii), dtype=float)
    files = {"spectral.csv": res.to_csv(psi_vals)}
    try:
        threshold = spectral.hw_threshold_time(psi, noise.dimension, radii)
    except NotApplicableError:
        threshold = None
    summary = {
        "classification": res.classification.value,
        "limit": res.limit,
        "threshold": threshold,
        "tail_slope": res.tail_slope,
    }
    flagged = res.classification is spectral.HWClass.INCONCLUSIVE
    if "t" in cfg:
        rows = []
        for t in cfg["t"]:
            st = spectral.integrability(psi, float(t), noise.dimension)
            flagged |= st is not Status.FINITE
            rows.append([t, st.value])
        files["integrability.csv"] = _table(["t", "status"], rows)
    files["spectral.json"] = json.dumps(summary, sort_keys=True, indent=2) + "\n"
    return RunResult(files, flagged, summary)


def _sde_check(cfg: dict, threads: int) -> RunResult:
    spec = sde.sde_from_dict(cfg["sde"])
    d = spec.dimension
    f = semigroup.test_function_from_dict(cfg["f"])
    t, h, n, seed = float(cfg["t"]), float(cfg["h"]), int(cfg["n"]), int(cfg.get("seed", 0))
    files, flagged = {}, False
    problems = sde.validate_coefficients(spec)
    if problems:
        raise DomainError("; ".join(problems))
    if "x" in cfg:
        xs = _grid(cfg["x"], d).reshape(-1, d)
        est = sde.mc_semigroup(spec, t, f, xs, n, h, seed, threads)
        vals, ses = np.atleast_1d(est.value), np.atleast_1d(est.stderr)
        flagged |= not est.reliable
        rows = [[xs[i], vals[i], ses[i]] for i in range(len(xs))]
        files["semigroup.csv"] = _table(["x", "value", "stderr"], rows)
        files["semigroup.json"] = json.dumps({"diverged": est.diverged, "reliable": est.reliable}, sort_keys=True) + "\n"
    x0 = cfg.get("x0", [0.0] * d)
    if "offsets" in cfg:
        prof = sde.strong_feller_profile(spec, t, f, x0, cfg["offsets"], n, h, seed, threads=threads)
        files["profile.csv"] = prof.to_csv()
        summary = {
            "verdict": prof.verdict,
            "spearman": prof.spearman,
            "spearman_pvalue": prof.spearman_pvalue,
            "monotone": prof.monotone,
            "shrink_factor": prof.shrink_factor,
        }
        files["profile.json"] = json.dumps(summary, sort_keys=True, indent=2) + "\n"
        flagged |= prof.verdict != "consistent with strong Feller"
    if cfg.get("write_paths"):
        batch = sde.path_batch(spec, x0, t, h, n, seed, threads)
        files["paths.lsmb"] = batch.to_bytes()
        files["paths.csv"] = batch.to_csv()
        flagged |= batch.diverged > sde.UNRELIABLE_FRACTION * batch.n
    return RunResult(files, flagged)


def _duhamel(cfg: dict, threads: int) -> RunResult:
    spec = sde.sde_from_dict(cfg["sde"])
    f = semigroup.test_function_from_dict(cfg["f"])
    levels = [sde.DuhamelLevel(**lv) for lv in cfg["levels"]] if "levels" in cfg else list(sde.DEFAULT_LADDER)
    seed = int(cfg.get("seed", 0))
    rows, last = [], None
    for lv in levels:
        last = sde.duhamel_residual(spec, float(cfg["t"]), f, cfg["x"], lv, seed, bool(cfg.get("strict", False)), threads)
        rows.append([lv.n, lv.nodes, lv.h, last.residual])
    decreasing = all(b[3] < a[3] for a, b in zip(rows, rows[1:]))
    summary = {"eq11_holds": last.eq11_holds, "final_residual": last.residual, "monotone_decrease": decreasing}
    return RunResult(
        {
            "duhamel_levels.csv": _table(["n", "nodes", "h", "residual"], rows),
            "duhamel.csv": last.to_csv(),
            "duhamel.json": json.dumps(summary, sort_keys=True, indent=2) + "\n",
        },
        False,
        summary,
    )


def _density_criterion(cfg: dict, threads: int) -> RunResult:
    spec = sde.sde_from_dict(cfg["sde"])
    seed = int(cfg.get("seed", 0))
    args = (float(cfg["t"]), float(cfg["x0"]), float(cfg["gamma"]), float(cfg["M"]), float(cfg["p"]), int(cfg["n"]),
            float(cfg["bandwidth"]), float(cfg["h"]))
    res = sde.local_lp_criterion(spec, *args, seed=seed, threads=threads)
    rows = [[cfg["n"], res.sup], [2 * cfg["n"], res.sup_doubled]]
    files = {
        "density_criterion.csv": _table(["n", "sup_integral"], rows),
        "density_criterion.json": json.dumps({"ratio": res.ratio, "status": res.status.value}, sort_keys=True, indent=2) + "\n",
    }
    if "y" in cfg:
        y = _grid(cfg["y"])
        q = sde.empirical_density(spec, args[0], args[1], args[5], args[6], y, args[7], seed, threads)
        files["empirical_density.csv"] = _table(["y", "value"], [[a, b] for a, b in zip(y, q)])
    return RunResult(files, res.status is not Status.FINITE)


def _kernel_eval(cfg: dict, threads: int) -> RunResult:
    d = int(cfg["dimension"])
    spec = kernels.HeatKernelSpec(d, cfg.get("covariance"))
    x = _grid(cfg["x"], d).reshape(-1, d)
    alpha = cfg.get("alpha")
    if alpha is not None and len(alpha) != d:
        raise DomainError("alpha must have one entry per dimension")
    header = ["t", "x", "density"] + (["partial"] if alpha is not None else [])
    rows = []
    for t in cfg["t"]:
        dens = np.atleast_1d(kernels.heat_kernel(spec, float(t), x))
        part = np.atleast_1d(kernels.heat_kernel_partial(spec, float(t), x, tuple(alpha))) if alpha is not None else None
        for i in range(len(x)):
            rows.append([t, x[i], dens[i]] + ([part[i]] if part is not None else []))
    return RunResult({"kernel.csv": _table(header, rows)})


HANDLERS = {
    "moments": _moments,
    "density": _density,
    "smooth-check": _smooth_check,
    "holder": _holder,
    "spectral": _spectral,
    "sde-check": _sde_check,
    "duhamel": _duhamel,
    "density-criterion": _density_criterion,
    "kernel-eval": _kernel_eval,
}


def run(config: ExperimentConfig, threads: int | None = None) -> RunResult:
    threads = threads or config.data.get("threads") or streams.default_threads()
    return HANDLERS[config.command](config.data, int(threads))


def write_report(result: RunResult, out: Path, config: ExperimentConfig, wall_time: float, threads: int) -> None:
    out.mkdir(parents=True, exist_ok=True)
    for name, body in sorted(result.files.items()):
        mode = "wb" if isinstance(body, bytes) else "w"
        with open(out / name, mode, **({} if mode == "wb" else {"newline": "", "encoding": "utf-8"})) as fh:
            fh.write(body)
    manifest = {
        "command": config.command,
        "config_hash": config.config_hash(),
        "config": config.data,
        "seed": config.seed,
        "threads": threads,
        "files": sorted(result.files),
        "flagged": result.flagged,
        "versions": {
            "levysmooth": __version__,
            "numpy": np.__version__,
            "scipy": scipy.__version__,
            "python": platform.python_version(),
        },
        "wall_time": wall_time,
    }
    with open(out / "manifest.json", "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, sort_keys=True, indent=2)
        fh.write("\n")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="levysmooth", description="Smoothing experiments for subordinated noise.")
    parser.add_argument("command", choices=COMMANDS)
    parser.add_argument("--config", required=True, help="JSON experiment config")
    parser.add_argument("--out", default=None, help="output directory (default: config 'output' or '.')")
    parser.add_argument("--threads", type=int, default=None, help="worker threads (default: LEVYSMOOTH_THREADS or cores)")
    parser.add_argument("--seed", type=int, default=None, help="override the config seed")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        text = Path(args.config).read_text(encoding="utf-8")
        data = json.loads(text)
        if isinstance(data, dict):
            data.setdefault("command", args.command)
            if data["command"] != args.command:
                raise ConfigError([f"config command {data['command']!r} does not match {args.command!r}"])
            if args.seed is not None:
                data["seed"] = args.seed
        config = parse_config(json.dumps(data))
        if args.threads is not None and args.threads < 1:
            raise ConfigError(["--threads must be >= 1"])
        threads = args.threads or config.data.get("threads") or streams.default_threads()
        start = time.perf_counter()
        result = run(config, threads)
        out = Path(args.out or config.data.get("output", "."))
        write_report(result, out, config, time.perf_counter() - start, int(threads))
    except ConfigError as exc:
        for e in exc.errors:
            print(f"config error: {e}", file=sys.stderr)
        return EXIT_ERROR
    except (OSError, json.JSONDecodeError, DomainError, NotApplicableError, UnsupportedError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    if result.flagged and not config.data.get("allow_divergent", False):
        return EXIT_FLAGGED
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
